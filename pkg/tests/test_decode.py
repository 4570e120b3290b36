import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazekey.decode import (fit_passcode, kbest_products, key_probabilities, passcode_objective,
                            rank_passcodes, rect_mass, sigma_from_policy)
from gazekey.errors import InputError
from gazekey.keyboard import KeyboardLayout, resolve_layout


def _groups(pin, digits, shift=(0.0, 0.0), rng=None, noise=0.0, n=10):
    out = []
    for d in digits:
        c = np.array([pin.key(d).y, pin.key(d).z]) + shift
        g = np.tile(c, (n, 1))
        if rng is not None:
            g = g + rng.normal(0, noise, g.shape)
        out.append(g)
    return out


def test_sigma_policies():
    assert sigma_from_policy(None) == 0.25
    assert sigma_from_policy("half-pitch") == 0.5
    with pytest.raises(InputError):
        sigma_from_policy(0)


def test_key_center_with_vanishing_sigma(qwerty):
    h = qwerty.key("h")
    p = key_probabilities([[h.y, h.z]], qwerty, 1e-4)
    assert qwerty.names[int(np.argmax(p))] == "h"
    assert p.max() == pytest.approx(1.0)


def test_midpoint_between_g_and_h(qwerty):
    g, h = qwerty.key("g"), qwerty.key("h")
    p = key_probabilities([[(g.y + h.y) / 2, g.z]], qwerty, 0.3)
    assert abs(p[qwerty.index("g")] - p[qwerty.index("h")]) < 1e-9


@given(st.floats(-3, 12), st.floats(-5, 2), st.floats(0.05, 2))
def test_key_mass_is_subprobability(y, z, sigma):
    lay = resolve_layout("qwerty")
    p = key_probabilities([[y, z]], lay, sigma)
    assert np.all(p >= 0) and p.sum() <= 1 + 1e-12


def test_off_keyboard_mass_matches_complement(qwerty):
    pt = np.array([[4.0, -0.5]])
    p = key_probabilities(pt, qwerty, 0.3)
    big = rect_mass(pt, np.array([[-50.0, -50.0]]), np.array([[50.0, 50.0]]), 0.3)[0, 0]
    gaps = big - p.sum()
    assert p.sum() + gaps == pytest.approx(1.0, abs=1e-6)


def test_sharper_sigma_raises_top1(qwerty, rng):
    for _ in range(20):
        k = qwerty.keys[rng.integers(len(qwerty))]
        pt = [[k.y + rng.uniform(-0.2, 0.2), k.z + rng.uniform(-0.2, 0.2)]]
        assert key_probabilities(pt, qwerty, 0.15).max() > key_probabilities(pt, qwerty, 0.4).max()


def test_permutation_equivariance(qwerty, rng):
    perm = rng.permutation(len(qwerty))
    shuffled = KeyboardLayout("shuffled", tuple(qwerty.keys[i] for i in perm))
    pts = rng.uniform([0, -3], [10, 0], (5, 2))
    np.testing.assert_allclose(key_probabilities(pts, shuffled), key_probabilities(pts, qwerty)[perm], atol=1e-15)


def test_topk_larger_than_layout(pin):
    from gazekey.decode import KeyPosterior
    post = KeyPosterior(0, pin.names, key_probabilities([[1, -1]], pin), k=50)
    assert sorted(post.top_keys()) == sorted(pin.names)
    assert post.best == "5"


def test_rect_mass_against_quadrature(rng):
    for _ in range(20):
        p = rng.uniform(-1, 1, 2)
        lo = rng.uniform(-1, 0.5, 2)
        hi = lo + rng.uniform(0.2, 1.0, 2)
        sigma = rng.uniform(0.1, 0.6)
        ys = np.linspace(lo[0], hi[0], 401)
        zs = np.linspace(lo[1], hi[1], 401)
        yy, zz = np.meshgrid(ys, zs, indexing="ij")
        f = np.exp(-((yy - p[0]) ** 2 + (zz - p[1]) ** 2) / (2 * sigma ** 2)) / (2 * np.pi * sigma ** 2)
        quad = np.trapezoid(np.trapezoid(f, zs, axis=1), ys)
        assert rect_mass(p, lo[None], hi[None], sigma)[0, 0] == pytest.approx(quad, abs=1e-5)


def test_fit_passcode_on_centers(pin):
    pts = np.array([[pin.key(d).y, pin.key(d).z] for d in "123456"])
    np.testing.assert_allclose(fit_passcode(pts), [0, 0], atol=1e-12)


def test_fit_passcode_undoes_shift(pin):
    pts = np.array([[pin.key(d).y, pin.key(d).z] for d in "159730"]) + [0.3, -0.2]
    np.testing.assert_allclose(fit_passcode(pts), [-0.3, 0.2], atol=1e-6)


def test_refinement_never_worse(rng):
    for _ in range(100):
        pts = rng.uniform([-0.5, -3.5], [2.5, 0.5], (6, 2))
        grid = fit_passcode(pts, refine=False)
        ref = fit_passcode(pts)
        f = passcode_objective(pts, ref)
        assert f <= passcode_objective(pts, grid) + 1e-12
        assert f <= passcode_objective(pts, np.zeros(2)) + 1e-12


def test_objective_batch_matches_single(rng):
    pts = rng.uniform(0, 2, (4, 2))
    ts = rng.uniform(-1, 1, (7, 2))
    np.testing.assert_allclose(passcode_objective(pts, ts), [passcode_objective(pts, t) for t in ts])


@settings(max_examples=50)
@given(st.lists(st.lists(st.floats(0.01, 1), min_size=1, max_size=4), min_size=1, max_size=4),
       st.integers(1, 20))
def test_kbest_products_brute_force(rows, n):
    got = kbest_products(rows, n)
    allp = sorted((np.prod([r[i] for r, i in zip(rows, idx)])
                   for idx in itertools.product(*[range(len(r)) for r in rows])), reverse=True)
    np.testing.assert_allclose([p for p, _ in got], allp[:n], rtol=1e-12)


def test_unambiguous_pin_ranks_first(pin):
    guesses = rank_passcodes(_groups(pin, "1937"), pin)
    assert guesses[0].digits == "1937" and guesses[0].rank == 1


def test_pattern_ambiguous_pins_in_top4(pin):
    top = [g.digits for g in rank_passcodes(_groups(pin, "1245"), pin)[:4]]
    assert "1245" in top and "5689" in top
    assert set(top) == {"1245", "2356", "4578", "5689"}


def test_probabilities_non_increasing(pin, rng):
    guesses = rank_passcodes(_groups(pin, "580214", (0.2, 0.1), rng, 0.2), pin)
    probs = [g.probability for g in guesses]
    assert probs == sorted(probs, reverse=True)
    assert [g.rank for g in guesses] == list(range(1, len(guesses) + 1))
