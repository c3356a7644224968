import numpy as np
import pytest
from hypothesis import given, strategies as st

from seld_kit.audio_io import LabelSet
from seld_kit.scene_synth import (ArrayGeometry, SceneSpec, SourceSpec, arrival_direction, fractional_delay,
                                  mic_delays, random_scene_spec, render_scene, second_labels)


@given(st.integers(-20, 20), st.integers(0, 50))
def test_integer_delay_is_circular_shift(d, seed):
    x = np.random.default_rng(seed).standard_normal(64)
    np.testing.assert_allclose(fractional_delay(x, d), np.roll(x, d), atol=1e-12)


def test_fractional_delay_matches_sinc_for_bandlimited_signal():
    n = 256
    t = np.arange(n)
    # periodic band-limited test signal: a few harmonics well below Nyquist
    ks = [3, 11, 40]
    x = sum(np.cos(2 * np.pi * k * t / n + k) for k in ks)
    d = 0.37
    expected = sum(np.cos(2 * np.pi * k * (t - d) / n + k) for k in ks)
    np.testing.assert_allclose(fractional_delay(x, d), expected, atol=1e-10)


def test_front_source_reaches_front_mics_first():
    geom = ArrayGeometry()
    d = mic_delays(geom, arrival_direction("front"), 48000)
    sep = 0.007 / 343 * 48000
    assert d[2] - d[0] == pytest.approx(sep)
    assert d[3] - d[1] == pytest.approx(sep)
    d_back = mic_delays(geom, arrival_direction("back"), 48000)
    assert d_back[2] - d_back[0] == pytest.approx(-sep)


def test_default_geometry_front_back_separation_is_7mm():
    pos = ArrayGeometry().positions
    assert pos.shape == (8, 3)
    np.testing.assert_allclose(pos[0] - pos[2], [0, 0, 0.007])
    np.testing.assert_allclose(pos[1] - pos[3], [0, 0, 0.007])
    assert ArrayGeometry.from_json(ArrayGeometry().to_json()) == ArrayGeometry()


def test_second_labels_overlap_rule():
    spec = SceneSpec([SourceSpec("speech", "front", -20, 0.5, 1.5), SourceSpec("tone", "back", -20, 2.0, 3.0)],
                     duration_s=4)
    assert second_labels(spec) == [LabelSet(True), LabelSet(True), LabelSet(something_else=True), LabelSet()]


def test_render_is_deterministic_and_labelled():
    spec = SceneSpec([SourceSpec("speech", "back", -25, 0, 1)], duration_s=2, seed=5)
    a, la = render_scene(spec)
    b, lb = render_scene(spec)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert la == lb == [LabelSet(speech_back=True), LabelSet()]
    assert a.samples.shape == (8, 96000)
    # back source: back mics louder than the shadowed front mics
    first = a.samples[:, :48000]
    assert np.std(first[2]) > 1.5 * np.std(first[0])


def test_render_rejects_invalid_spec():
    spec = SceneSpec([SourceSpec("whistle", "up", -20, 2, 1)], duration_s=1)
    assert len(spec.validate()) == 3
    with pytest.raises(ValueError):
        render_scene(spec)


def test_spec_json_round_trip():
    spec = random_scene_spec(np.random.default_rng(1), 10, "outdoor", seed=9)
    assert SceneSpec.from_json(spec.to_json()) == spec
    assert not spec.validate()
    assert len(second_labels(spec)) == 10
