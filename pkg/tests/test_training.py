from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from seld_kit.audio_io import LabelSet
from seld_kit.neural.model import ModelGraph, crnn_architecture
from seld_kit.training import (BlockDataset, EarlyStopping, FoldManifest, TrainConfig, assign_folds,
                               compute_fold_stats, f1_score, flat_features, label_stats, oversample_balance,
                               oversample_indices, stage_pool, train_stage, upsample_indices)


def _blocks(**counts):
    """LabelSets by combination name: f, b, fb, e, fe, be, fbe, none."""
    table = {"f": (1, 0, 0), "b": (0, 1, 0), "fb": (1, 1, 0), "e": (0, 0, 1), "fe": (1, 0, 1),
             "be": (0, 1, 1), "fbe": (1, 1, 1), "none": (0, 0, 0)}
    return [LabelSet.from_iterable(table[k]) for k, n in counts.items() for _ in range(n)]


def test_fold_stats_row_one():
    # 376 speech blocks (187 front-only, 177 back-only, 12 both), 94 of them also carry something else
    labels = _blocks(f=140, fe=47, b=130, be=47, fb=12, e=282, none=213)
    s = label_stats(labels)
    assert (s.total, s.something_else, s.speech_front_or_back, s.no_labels) == (871, 376, 376, 213)
    assert (s.front_only, s.back_only, s.front_and_back) == (187, 177, 12)


def test_fold_stats_per_fold_and_empty():
    manifest = FoldManifest([["a"], ["b"], [], [], [], []])
    stats = compute_fold_stats({"a": _blocks(f=2), "b": _blocks(e=1, none=1)}, manifest)
    assert [s.total for s in stats] == [2, 2, 0, 0, 0, 0]
    assert stats[1].something_else == 1 and stats[1].no_labels == 1
    assert vars(label_stats([])) == dict.fromkeys(vars(label_stats([])), 0)


def test_assign_folds_even_and_kind_balanced():
    kinds = {f"r{i:02d}": "indoor" if i % 3 else "outdoor" for i in range(12)}
    m = assign_folds(kinds)
    assert [len(f) for f in m.folds] == [2] * 6
    assert FoldManifest.from_json(m.to_json()).folds == m.folds
    per_fold_outdoor = [sum(kinds[r] == "outdoor" for r in f) for f in m.folds]
    assert max(per_fold_outdoor) - min(per_fold_outdoor) <= 1


def test_rotations_cover_each_fold_once_as_test():
    tests = []
    for r in range(6):
        train, val, test = FoldManifest.rotation(r)
        assert len(train) == 3 and len(val) == 2
        assert len(set(train) | set(val) | {test}) == 6
        tests.append(test)
    assert sorted(tests) == list(range(6))


def test_manifest_rejects_duplicates():
    with pytest.raises(ValueError):
        FoldManifest([["a"], ["a"], [], [], [], []])


def test_oversample_example_counts():
    blocks = _blocks(f=10, b=4, fb=2)
    out = oversample_balance(blocks, seed=0, key=LabelSet.as_tuple)
    assert Counter(out) == {LabelSet(True): 10, LabelSet(False, True): 10, LabelSet(True, True): 10}


def test_oversample_raises_minority_share_to_one_third():
    classes = [(1, 0)] * 470 + [(0, 1)] * 470 + [(1, 1)] * 60  # 6% both-active
    idx = oversample_indices(classes, seed=3)
    both = sum(classes[i] == (1, 1) for i in idx)
    assert both / len(idx) == pytest.approx(1 / 3)


@given(st.lists(st.integers(0, 4), min_size=1, max_size=60), st.integers(0, 100))
def test_oversample_property(classes, seed):
    idx = oversample_indices(classes, seed)
    counts = Counter(classes[i] for i in idx)
    assert set(counts.values()) == {max(Counter(classes).values())}
    assert set(idx.tolist()) == set(range(len(classes)))
    np.testing.assert_array_equal(idx, oversample_indices(classes, seed))


def test_f1_examples():
    rep = f1_score(np.array([[1], [1]]), np.array([[1], [0]]), ["x"])
    assert (rep.precision[0], rep.recall[0], rep.f1[0]) == (0.5, 1.0, pytest.approx(2 / 3))
    perfect = f1_score(np.eye(3), np.eye(3))
    assert perfect.macro_f1 == 1.0
    wrong = f1_score(1 - np.eye(3), np.eye(3))
    assert wrong.macro_f1 == 0.0
    empty = f1_score(np.zeros((4, 1)), np.zeros((4, 1)))
    assert empty.f1 == [0.0]


def test_early_stopping_no_improvement():
    stop = EarlyStopping(3)
    epochs = [stop.update(s) for s in (0.9, 0.8, 0.7, 0.6, 0.5)]
    first_stop = [e[1] for e in epochs].index(True) + 1
    assert first_stop == 3 + 1


def test_early_stopping_decrease_ignores_ties():
    stop = EarlyStopping(1, "decrease")
    assert stop.update(0.5) == (True, False)
    assert stop.update(0.5) == (False, False)
    assert stop.update(0.4) == (False, True)


def test_train_config_defaults_and_validation():
    assert TrainConfig("1").resolved_patience == 25 and TrainConfig("1").stop_rule == "no_improvement"
    assert TrainConfig("2").resolved_patience == 1 and TrainConfig("2").stop_rule == "decrease"
    assert TrainConfig("2").resolved_oversample and not TrainConfig("1").resolved_oversample
    assert TrainConfig("1", patience=0, optimizer="sgd").validate()


def test_upsample_indices_nearest_centre():
    idx = upsample_indices(99, 22)
    assert idx[0] == 0 and idx[-1] == 21
    centres = np.arange(99) * 480 + 480
    src = np.arange(22) * 2040 + 2040
    best = np.array([np.abs(src - c).min() for c in centres])
    np.testing.assert_array_equal(np.abs(src[idx] - centres), best)
    assert flat_features(np.zeros((2, 99, 40)), np.zeros((2, 22, 41))).shape == (2, 99, 81)


def _toy_dataset(seed=0, per_rec=6):
    """Two recordings per fold; features carry the labels so a tiny model can learn them."""
    rng = np.random.default_rng(seed)
    combos = np.array([(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (0, 0, 0), (0, 1, 1)])
    recs, labels = [], []
    for r in range(12):
        for k in range(per_rec):
            recs.append(f"r{r:02d}")
            labels.append(combos[(r + k) % len(combos)])
    labels = np.array(labels, dtype=np.int8)
    n = len(labels)
    s1 = rng.standard_normal((n, 8, 6)).astype(np.float32) * 0.1
    s1[:, :, 0] += labels[:, 0:1] | labels[:, 1:2]
    s1[:, :, 1] += labels[:, 2:3]
    s2 = rng.standard_normal((n, 4, 5)).astype(np.float32) * 0.1
    s2[:, :, 0] += labels[:, 0:1] - labels[:, 1:2]
    ds = BlockDataset(s1, s2, labels, np.array(recs), np.tile(np.arange(per_rec), 12))
    manifest = FoldManifest([[f"r{2 * k:02d}", f"r{2 * k + 1:02d}"] for k in range(6)])
    return ds, manifest


def test_stage_two_pool_is_speech_only():
    ds, manifest = _toy_dataset()
    pool = stage_pool(ds, manifest.recordings, "2")
    assert pool.speech_mask.all() and len(pool) < len(ds)


def test_train_stage_keeps_best_epoch_and_train_only_statistics():
    ds, manifest = _toy_dataset()
    model = ModelGraph.from_architecture(crnn_architecture((2,), (4,), 2), (8, 6), seed=0)
    cfg = TrainConfig("1", max_epochs=2, batch_size=8, seed=0)
    res = train_stage(model, ds, manifest, cfg)
    val_scores = [r["monitor"] for r in res.log if r["split"] == "validation"]
    assert res.best_epoch == int(np.argmax(val_scores)) + 1
    assert set(res.standardizer.provenance) == set(res.splits["train"])
    assert not set(res.splits["train"]) & set(res.splits["test"])
    again = train_stage(ModelGraph.from_architecture(crnn_architecture((2,), (4,), 2), (8, 6), seed=0), ds,
                        manifest, cfg)
    assert again.log == res.log


def test_train_stage_two_learns_direction():
    ds, manifest = _toy_dataset(per_rec=12)
    model = ModelGraph.from_architecture(crnn_architecture((), (4,), 2), (4, 5), seed=1)
    res = train_stage(model, ds, manifest, TrainConfig("2", max_epochs=60, patience=60, batch_size=8, lr=1e-2))
    assert max(r["monitor"] for r in res.log if r["split"] == "validation") > 0.9


def test_train_stage_rejects_empty_split():
    ds, manifest = _toy_dataset()
    sparse = FoldManifest([["r00"], [], [], [], [], []])
    model = ModelGraph.from_architecture(crnn_architecture((2,), (4,), 2), (8, 6))
    with pytest.raises(ValueError, match="empty split"):
        train_stage(model, ds, sparse, TrainConfig("1", max_epochs=1))
