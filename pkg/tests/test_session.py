import numpy as np
import pytest

from gazekey.errors import CheckpointVersionError, DegenerateFeatures, LengthMismatch, UnlabeledData
from gazekey.session import (SessionModel, TrainConfig, classify_sessions, load_model, merge_short_runs,
                             save_model, segments_from_labels, session_metrics, span_iou, split_traces,
                             train_session_model)
from gazekey.synth import demo_attack_twin, generate_distractor_trace, session_dataset
from gazekey.trace import GazeTrace

TINY = TrainConfig(hidden=8, epochs=2, window=64, batch_size=16, seed=5)


@pytest.fixture(scope="module")
def small_set():
    return session_dataset(3, seed=21)


def test_single_class_rejected():
    tr = generate_distractor_trace(5000, seed=1)
    with pytest.raises(DegenerateFeatures):
        train_session_model([tr, tr], TINY)


def test_unlabeled_rejected(small_set):
    bare = GazeTrace(small_set[0].t, small_set[0].yaw, small_set[0].pitch, small_set[0].ear)
    with pytest.raises(UnlabeledData):
        train_session_model([small_set[1], bare], TINY)


def test_training_is_deterministic(small_set):
    a = train_session_model(small_set, TINY)
    b = train_session_model(small_set, TINY)
    assert a.loss_history == b.loss_history
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_checkpoint_round_trip(small_set, tmp_path):
    m = train_session_model(small_set, TINY)
    path = tmp_path / "m.json"
    save_model(m, path)
    back = load_model(path)
    tr = small_set[0]
    np.testing.assert_array_equal(back.logits(tr), m.logits(tr))
    d = m.to_dict()
    d["version"] = 99
    with pytest.raises(CheckpointVersionError):
        SessionModel.from_dict(d)


def test_short_trace_in_one_shot(model):
    tr = generate_distractor_trace(2000, seed=3)
    assert len(tr) < model.config.window
    assert model.predict_frames(tr).shape == (len(tr),)


def test_browsing_only_has_no_typing(model):
    tr = generate_distractor_trace(60_000, seed=8)
    assert classify_sessions(model, tr).typing_spans == []


def test_demo_twin_session(model):
    tr = demo_attack_twin(seed=0)
    spans = classify_sessions(model, tr).typing_spans
    assert len(spans) == 1
    assert span_iou(spans[0], tr.meta["typing_spans"][0]) >= 0.9


def test_session_metrics():
    y = np.array([0, 0, 1, 1, 1, 0])
    r = session_metrics(y, y)
    assert (r.precision, r.recall, r.accuracy) == (1.0, 1.0, 1.0)
    r = session_metrics(np.zeros(6, int), y)
    assert r.precision == 0.0 and "precision" in r.undefined
    with pytest.raises(LengthMismatch):
        session_metrics(y[:3], y)


def test_merge_short_runs_and_segments():
    t = np.arange(100) * 100.0
    lab = np.zeros(100, int)
    lab[30:70] = 1
    lab[50] = 0
    out = merge_short_runs(lab, t, 1000.0)
    assert out[50] == 1
    segs = segments_from_labels(out, t)
    assert [s[2] for s in segs] == ["other", "typing", "other"]
    assert segs[1][:2] == (3000.0, 7000.0)


def test_split_traces_is_seeded():
    items = list(range(10))
    a = split_traces(items, 0.3, seed=4)
    assert a == split_traces(items, 0.3, seed=4)
    assert len(a[1]) == 3 and sorted(a[0] + a[1]) == items
