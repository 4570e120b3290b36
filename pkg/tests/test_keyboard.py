import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazekey.errors import DegenerateGaze, InputError, InsufficientSpread, RankDeficient
from gazekey.geometry import angles_to_unit_vector, unit_vector_to_angles
from gazekey.keyboard import (Key, KeyboardLayout, builtin_layouts, eig2_symmetric, estimate_boundary,
                              estimate_plane, first_overlap, load_layout, locate_keyboard,
                              pca_orientation, project_gaze, save_layout)
from gazekey.synth import SceneConfig, keystroke_sequence

PANGRAM = "the quick brown fox jumps over the lazy dog"


def _events(scene, layout, keys, rng, frames=12, jitter=0.03):
    lay_pts = np.array([layout.key(k).y for k in keys]), np.array([layout.key(k).z for k in keys])
    pts = np.column_stack(lay_pts)
    out = []
    for p in pts:
        out.append(scene.key_vectors(layout, p + rng.normal(0, jitter, (frames, 2))))
    return pts, out


def test_builtin_layout_anchors(qwerty, pin):
    assert (qwerty.key("q").y, qwerty.key("q").z) == (0, 0)
    assert (qwerty.key("p").y, qwerty.key("p").z) == (9, 0)
    assert (pin.key("5").y, pin.key("5").z) == (1, -1)
    for lay in builtin_layouts():
        assert first_overlap(lay.keys) is None


def test_overlapping_keys_rejected():
    with pytest.raises(InputError):
        KeyboardLayout("bad", (Key("a", 0, 0), Key("b", 0.5, 0)))


def test_layout_csv_round_trip(qwerty):
    buf = io.StringIO()
    save_layout(qwerty, buf)
    back = load_layout(io.StringIO(buf.getvalue()), "qwerty")
    assert back.names == qwerty.names
    np.testing.assert_array_equal(back.centers, qwerty.centers)


def test_plane_straight_ahead():
    normal, rot = estimate_plane(np.tile([1.0, 0, 0], (10, 1)))
    np.testing.assert_allclose(normal, [1, 0, 0])
    np.testing.assert_allclose(rot, np.eye(3), atol=1e-15)


def test_plane_of_symmetric_cloud(rng):
    yaw = 30 + rng.uniform(-5, 5, 2000)
    pitch = 10 + rng.uniform(-5, 5, 2000)
    u = angles_to_unit_vector(np.concatenate([yaw, 60 - yaw]), np.concatenate([pitch, 20 - pitch]))
    normal, rot = estimate_plane(u)
    y, p = unit_vector_to_angles(normal)
    assert abs(y - 30) < 0.5 and abs(p - 10) < 0.5
    np.testing.assert_allclose(rot @ normal, [1, 0, 0], atol=1e-12)


def test_antipodal_gaze_is_degenerate():
    with pytest.raises(DegenerateGaze):
        estimate_plane([[1, 0, 0], [-1, 0, 0]])


def test_pca_of_horizontal_line(rng):
    y = np.linspace(-1, 1, 200)
    pts = np.column_stack([y, rng.normal(0, 1e-3, 200)])
    v = pca_orientation(pts)
    assert abs(abs(v[0, 0]) - 1) < 1e-6 and abs(v[1, 0]) < 1e-2


def test_pca_recovers_roll(qwerty, rng):
    rho = np.radians(17)
    r = np.array([[np.cos(rho), -np.sin(rho)], [np.sin(rho), np.cos(rho)]])
    pts = (qwerty.centers + rng.normal(0, 0.05, qwerty.centers.shape)) @ r.T
    v = pca_orientation(pts)
    ang = np.degrees(np.arctan2(v[1, 0], v[0, 0]))
    assert abs(ang - 17) < 3


@settings(max_examples=200)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50))
def test_eig2_matches_numpy(a, b, d):
    c = np.array([[a, b], [b, d]])
    lam, v = eig2_symmetric(c)
    ref = np.linalg.eigvalsh(c)[::-1]
    np.testing.assert_allclose(lam, ref, atol=1e-10)
    np.testing.assert_allclose(c @ v, v * lam, atol=1e-10 * max(1, np.abs(c).max()))
    np.testing.assert_allclose(v.T @ v, np.eye(2), atol=1e-12)


def test_collinear_points_rank_deficient():
    with pytest.raises(RankDeficient):
        pca_orientation(np.column_stack([np.arange(10.0), 2 * np.arange(10.0)]))


def test_single_key_has_no_spread(qwerty):
    with pytest.raises(InsufficientSpread):
        estimate_boundary(np.zeros((30, 2)) + 0.1, qwerty)


def test_boundary_is_scale_invariant(qwerty, rng):
    pts = qwerty.centers * 0.07 + rng.normal(0, 0.002, qwerty.centers.shape)
    a = estimate_boundary(pts, qwerty)
    b = estimate_boundary(2 * pts, qwerty)
    assert [qwerty.key_at(p) for p in a.to_layout(pts)] == [qwerty.key_at(p) for p in b.to_layout(2 * pts)]


@pytest.mark.parametrize("roll", [0.0, 8.0])
def test_pangram_localization(qwerty, rng, roll):
    scene = SceneConfig(keyboard_yaw=5, keyboard_pitch=-12, roll_deg=roll)
    keys = [k for _, k in keystroke_sequence(PANGRAM)]
    truth, events = _events(scene, qwerty, keys, rng)
    frame = locate_keyboard(events, qwerty)
    cents = np.array([frame.gaze_to_layout(e).mean(axis=0) for e in events])
    assert np.abs(cents - truth).max() < 0.5


def test_project_gaze_identity_rotation():
    np.testing.assert_allclose(project_gaze([[1, 0, 0]], np.eye(3)), [[0, 0]])
