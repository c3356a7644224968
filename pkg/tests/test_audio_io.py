import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from seld_kit.audio_io import (AlignmentError, LabelSet, MultichannelRecording, WavFormatError, WavLengthError,
                               WavUnsupportedError, downmix_and_normalize, read_annotations, read_wav,
                               segment_blocks, write_annotations, write_wav)


def _pcm_wav(path, data: bytes, channels=1, rate=48000, bits=16, fmt_tag=1, extensible=False):
    block_align = channels * bits // 8
    if extensible:
        fmt = struct.pack("<HHIIHHHHI", 0xFFFE, channels, rate, rate * block_align, block_align, bits, 22, bits, 0)
        fmt += struct.pack("<H", fmt_tag) + b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"
    else:
        fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block_align, block_align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def test_pcm16_extremes_scale_by_two_to_the_fifteen(tmp_path):
    _pcm_wav(tmp_path / "a.wav", np.array([-32768, 0, 16384, 32767], "<i2").tobytes())
    rec = read_wav(tmp_path / "a.wav")
    np.testing.assert_array_equal(rec.samples[0], [-1.0, 0.0, 0.5, 32767 / 32768])


def test_pcm24_and_pcm8(tmp_path):
    raw24 = b"".join(int(v).to_bytes(3, "little", signed=True) for v in (-(2 ** 23), 2 ** 22))
    _pcm_wav(tmp_path / "b.wav", raw24, bits=24)
    np.testing.assert_array_equal(read_wav(tmp_path / "b.wav").samples[0], [-1.0, 0.5])
    _pcm_wav(tmp_path / "c.wav", bytes([0, 128, 192]), bits=8)
    np.testing.assert_array_equal(read_wav(tmp_path / "c.wav").samples[0], [-1.0, 0.0, 0.5])


def test_extensible_float(tmp_path):
    data = np.array([0.25, -0.5, 0.125, 1.0], "<f4")
    _pcm_wav(tmp_path / "e.wav", data.tobytes(), channels=2, bits=32, fmt_tag=3, extensible=True)
    rec = read_wav(tmp_path / "e.wav")
    assert rec.channels == 2
    np.testing.assert_array_equal(rec.samples, [[0.25, 0.125], [-0.5, 1.0]])


def test_eight_channel_ten_seconds_shape(tmp_path):
    rec = MultichannelRecording(48000, np.zeros((8, 480000), np.float32))
    write_wav(tmp_path / "z.wav", rec)
    back = read_wav(tmp_path / "z.wav")
    assert back.samples.shape == (8, 480000)
    assert back.duration_s == 10.0


@given(st.integers(1, 8), st.integers(0, 300), st.sampled_from(["float32", "pcm16", "pcm32"]), st.integers(0, 99))
def test_wav_round_trip(tmp_path_factory, channels, n, fmt, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (channels, n))
    path = tmp_path_factory.mktemp("wav") / "r.wav"
    write_wav(path, MultichannelRecording(16000, x), fmt)
    back = read_wav(path)
    assert back.sample_rate == 16000 and back.samples.shape == x.shape
    tol = {"float32": 1e-7, "pcm16": 1 / 32768, "pcm32": 1e-9}[fmt]
    np.testing.assert_allclose(back.samples, x, atol=tol)


def test_malformed_files(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"not a wav at all")
    with pytest.raises(WavFormatError):
        read_wav(tmp_path / "x.wav")
    _pcm_wav(tmp_path / "u.wav", b"\x00" * 4, fmt_tag=2)  # ADPCM
    with pytest.raises(WavUnsupportedError):
        read_wav(tmp_path / "u.wav")
    _pcm_wav(tmp_path / "t.wav", b"\x00" * 8)
    raw = (tmp_path / "t.wav").read_bytes()
    (tmp_path / "t.wav").write_bytes(raw[:-3])
    with pytest.raises(WavLengthError):
        read_wav(tmp_path / "t.wav")


def test_annotation_round_trip(tmp_path):
    ann = {"a": [LabelSet(True, False, False), LabelSet(False, True, True)], "b": [LabelSet()]}
    write_annotations(tmp_path / "ann.csv", ann)
    assert read_annotations(tmp_path / "ann.csv") == ann


def test_segment_blocks_floor_and_alignment():
    rec = MultichannelRecording(100, np.arange(2 * 350).reshape(2, 350))
    blocks = segment_blocks(rec, [LabelSet()] * 3, "r")
    assert [b.block_index for b in blocks] == [0, 1, 2]
    np.testing.assert_array_equal(blocks[2].samples, rec.samples[:, 200:300])
    with pytest.raises(AlignmentError):
        segment_blocks(rec, [LabelSet()] * 4, "r")


def test_downmix_normalize():
    mono, silent = downmix_and_normalize(MultichannelRecording(10, [[1.0, -3.0], [3.0, -1.0]]))
    np.testing.assert_array_equal(mono, [1.0, -1.0])
    assert not silent
    mono, silent = downmix_and_normalize(MultichannelRecording(10, np.zeros((8, 5))))
    assert silent and not mono.any()


def test_labelset_speech_and_union():
    assert LabelSet(speech_back=True).speech
    assert not LabelSet(something_else=True).speech
    assert LabelSet(True).union(LabelSet(something_else=True)).as_tuple() == (1, 0, 1)
