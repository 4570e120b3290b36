import numpy as np
import pytest

from gazekey.errors import InputError, UnmappableCharacter
from gazekey.geometry import angles_to_unit_vector
from gazekey.synth import (BLINK_PEAK, CORPUS, DEMO_TEXT, DistractorSpec, SceneConfig, TypingSpec,
                           TypistProfile, compose_scenario, demo_attack_twin, generate_distractor_trace,
                           generate_typing_trace, keystroke_sequence, session_dataset)


def test_noiseless_fixations_hit_key_centers(qwerty):
    scene = SceneConfig()
    tr = generate_typing_trace("qp", profile=TypistProfile.noiseless(), scene=scene, seed=3)
    u = tr.unit_vectors()
    for key in "qp":
        target = scene.key_vectors(qwerty, [[qwerty.key(key).y, qwerty.key(key).z]])[0]
        assert np.min(np.linalg.norm(u - target, axis=1)) < 1e-12
    assert [k.key for k in tr.keystrokes] == ["q", "p"]


def test_same_seed_same_trace():
    a = generate_typing_trace("hello there", seed=9)
    b = generate_typing_trace("hello there", seed=9)
    c = generate_typing_trace("hello there", seed=10)
    assert a.equals(b) and a.keystrokes == b.keystrokes
    assert not a.equals(c)


def test_keystroke_sequence_toggles():
    seq = keystroke_sequence("Hi 5!")
    assert [k for _, k in seq] == ["SHIFT", "h", "i", "SPACE", "NUM", "5", "!"]
    assert keystroke_sequence("42", "pin") == [("pin", "4"), ("pin", "2")]


def test_unmappable_characters():
    with pytest.raises(UnmappableCharacter):
        keystroke_sequence("naïve")
    with pytest.raises(UnmappableCharacter):
        keystroke_sequence("12a", "pin")


def test_distractor_is_unlabeled_and_wide():
    tr = generate_distractor_trace(600_000, seed=4)
    assert tr.labels.sum() == 0 and not tr.keystrokes
    # blinks: rising edges of the eye-aspect-ratio bump
    up = np.flatnonzero((tr.ear[1:] > (1 + BLINK_PEAK) / 2) & (tr.ear[:-1] <= (1 + BLINK_PEAK) / 2))
    rate = len(up) / 600.0
    assert abs(rate - 1 / 7) <= 0.3 / 7
    wide = []
    for a in np.arange(0, 600_000 - 60_000 + 1, 10_000):
        m = (tr.t >= a) & (tr.t < a + 60_000)
        wide.append(np.ptp(tr.yaw[m]) > 40)
    assert np.mean(wide) >= 0.99


def test_demo_twin_layout():
    tr = demo_attack_twin(seed=1)
    assert tr.t[-1] == pytest.approx(120_100, abs=1000 / 30)
    (a, b), = tr.meta["typing_spans"]
    assert a == pytest.approx(66_800) and b == pytest.approx(114_100)
    assert int(tr.labels.sum()) == int(np.sum((tr.t >= a) & (tr.t < b)))
    assert len(tr.keystrokes) == len(DEMO_TEXT)


def test_compose_validation():
    with pytest.raises(InputError):
        compose_scenario([])
    with pytest.raises(InputError):
        compose_scenario([DistractorSpec(0)])
    with pytest.raises(InputError):
        SceneConfig(camera_yaw=80)


def test_camera_offset_moves_gaze():
    segs = [TypingSpec("abc")]
    p = TypistProfile.noiseless()
    a = compose_scenario(segs, 1, profile=p)
    b = compose_scenario(segs, 1, profile=p, scene=SceneConfig(camera_yaw=20))
    assert np.mean(a.yaw) - np.mean(b.yaw) == pytest.approx(20, abs=1.0)


def test_session_dataset_mixes_layouts():
    ds = session_dataset(5, seed=2)
    assert len(ds) == 5
    assert all(tr.labels.any() and not tr.labels.all() for tr in ds)
    assert ds[0].meta["texts"][0] in CORPUS


def test_noise_profile():
    p = TypistProfile(noise_deg=1.0, sentence_index=50)
    assert p.effective_noise_deg == pytest.approx(0.6)
    with pytest.raises(InputError):
        TypistProfile(micro_prob=2)
    u = angles_to_unit_vector(0, 0)
    assert u.shape == (3,)
