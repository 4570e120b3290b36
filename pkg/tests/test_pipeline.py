import numpy as np
import pytest

from gazekey.errors import InputError
from gazekey.pipeline import PipelineConfig, StageError, load_config, run_pipeline
from gazekey.synth import (DistractorSpec, TypingSpec, TypistProfile, compose_scenario,
                           generate_distractor_trace)
from gazekey.trace import GazeTrace


def _typed(text, seed=0, layout="qwerty"):
    segs = [DistractorSpec(5000), TypingSpec(text, layout), DistractorSpec(5000)]
    return compose_scenario(segs, seed, profile=TypistProfile.noiseless())


@pytest.mark.parametrize("text,seed", [("we can order lunch for the team", 0), ("my cat likes warm milk", 3)])
def test_zero_noise_recovers_text(model, dictionary, text, seed):
    res = run_pipeline(_typed(text, seed), model=model, dictionary=dictionary)
    assert res.text == text


def test_zero_noise_pin(model, dictionary):
    res = run_pipeline(_typed("159730", 1, "pin"), model=model, dictionary=dictionary)
    assert res.sessions[0].recovered.scenario == "passcode"
    assert "159730" in [g.digits for g in res.sessions[0].recovered.passcodes[:4]]


def test_distractor_only_is_empty(model, dictionary):
    res = run_pipeline(generate_distractor_trace(30_000, seed=2), model=model, dictionary=dictionary)
    assert res.text == "" and res.sessions == []


def test_deterministic(model, dictionary):
    tr = _typed("send me the map", 2)
    a = run_pipeline(tr, model=model, dictionary=dictionary).to_dict()
    b = run_pipeline(tr, model=model, dictionary=dictionary).to_dict()
    assert a == b


def test_label_sessions(dictionary):
    res = run_pipeline(_typed("the train was late", 4), PipelineConfig(sessions="labels"), dictionary=dictionary)
    assert res.text == "the train was late"


def test_estimated_threshold_runs(model, dictionary):
    tr = compose_scenario([DistractorSpec(5000), TypingSpec("we pay six guys"), DistractorSpec(5000)], 5)
    res = run_pipeline(tr, PipelineConfig(threshold="estimate"), model=model, dictionary=dictionary)
    assert 0 < res.threshold < 1


def test_labels_required_for_label_sessions():
    tr = GazeTrace(np.arange(20) * 33.3, np.zeros(20), np.zeros(20), np.ones(20))
    with pytest.raises(StageError) as exc:
        run_pipeline(tr, PipelineConfig(sessions="labels"))
    assert exc.value.stage == "sessions"


def test_config_round_trip(tmp_path):
    cfg = PipelineConfig(k=3, threshold="estimate", sigma="0.3", seed=7)
    assert PipelineConfig.loads(cfg.dumps()) == cfg
    path = tmp_path / "c.cfg"
    path.write_text("# tuned\nk = 4\nwindow=7\n")
    assert load_config(path) == PipelineConfig(k=4, window=7)


@pytest.mark.parametrize("bad", [{"k": "0"}, {"threshold": "1.5"}, {"nope": "1"}, {"window": "x"},
                                 {"sessions": "maybe"}, {"sigma": "-1"}])
def test_config_validation(bad):
    with pytest.raises(InputError):
        PipelineConfig().with_overrides(bad)
