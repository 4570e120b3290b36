import numpy as np
import pytest

from gazekey.clicks import FixationEvent
from gazekey.decode import KeyPosterior
from gazekey.evaluation import EvalReport, evaluate, space_confusion
from gazekey.keyboard import resolve_layout
from gazekey.pipeline import PipelineConfig, PipelineResult, SessionResult
from gazekey.session import SessionSegmentation, segments_from_labels
from gazekey.synth import DistractorSpec, TypingSpec, TypistProfile, compose_scenario
from gazekey.text import RecoveredText
from gazekey.trace import GazeTrace


@pytest.fixture(scope="module")
def report(model, dictionary):
    trs = [compose_scenario([DistractorSpec(4000), TypingSpec(t), DistractorSpec(4000)], i,
                            profile=TypistProfile.noiseless())
           for i, t in enumerate(["we can order lunch", "she plays piano every friday"])]
    return evaluate(trs, PipelineConfig(sessions="labels"), model=model, dictionary=dictionary)


def test_hand_fed_space_counts():
    pred = np.array([1] * 1457 + [1] * 242 + [0] * 153 + [0] * 9608, bool)
    true = np.array([1] * 1457 + [0] * 242 + [1] * 153 + [0] * 9608, bool)
    r = space_confusion(pred, true)
    assert (r.tp, r.fp, r.fn, r.tn) == (1457, 242, 153, 9608)


def test_perfect_dataset(report):
    for r in (report.sessions, report.clicks, report.space):
        assert r.precision == 1.0 and r.recall == 1.0
    assert report.topk["message"][0] == 1.0
    assert all(c == t for c, t in report.word_length.values())


def test_topk_monotone(report):
    for acc in report.topk.values():
        assert all(a <= b for a, b in zip(acc, acc[1:]))


def test_report_round_trip(report, tmp_path):
    assert EvalReport.loads(report.dumps()) == report
    paths = report.write(tmp_path)
    names = {p.rsplit("/", 1)[-1] for p in paths}
    assert {"report.json", "rates.csv", "topk.csv", "accuracy_vs_k.png", "space_confusion.png"} <= names
    assert (tmp_path / "accuracy_vs_k.png").read_bytes()[:4] == b"\x89PNG"


def test_hand_built_results():
    t = np.arange(100) * 100.0
    lab = np.zeros(100, np.int8)
    lab[20:60] = 1
    tr = GazeTrace(t, np.zeros(100), np.zeros(100), np.ones(100), labels=lab,
                   keystrokes=[(2500.0, "a"), (4500.0, "b")])
    ev = [FixationEvent(2300.0, 2700.0, np.array([23]), np.zeros(1), np.zeros(1))]
    lay = resolve_layout("qwerty")
    probs = np.zeros(len(lay))
    probs[lay.index("s")], probs[lay.index("a")] = 0.6, 0.3
    post = KeyPosterior(0, lay.names, probs, 5, "qwerty")
    res = PipelineResult(SessionSegmentation(segments_from_labels(lab, t), lab), 0.9996,
                         [SessionResult((2000.0, 6000.0), ev, None, [post], RecoveredText("password"))])
    rep = evaluate([tr], results=[res])
    assert (rep.clicks.tp, rep.clicks.fp, rep.clicks.fn) == (1, 0, 1)
    assert rep.sessions.accuracy == 1.0
    assert rep.topk["password"][:2] == [0.0, 1.0]
