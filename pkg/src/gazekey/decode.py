"""Keystroke posteriors over keys and the PIN-pad translation attack.

Each fixation frame is modeled as an isotropic 2-D Gaussian centered on the
frame's layout-space gaze point.  The probability of a key is the Gaussian
mass over the key rectangle, averaged over the fixation's frames.  The mass
factorizes into two 1-D CDF differences, so no numerical integration is
needed.  Mass landing between or outside keys is kept as is.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import EmptyFixation, InputError
from .keyboard import KeyboardFrame, KeyboardLayout, resolve_layout

# Key radius is half a pitch and the Gaussian's 2-sigma spans that radius.
DEFAULT_SIGMA = 0.25
DEFAULT_K = 5

# Layout switching keys and the layout they bring up.
TOGGLES = {"NUM": "numberspace", "ABC": "qwerty"}


def sigma_from_policy(policy) -> float:
    """Resolve a sigma policy to a standard deviation in key pitches.

    Accepts a number, ``"quarter-pitch"`` (the default, radius/2 with radius
    = pitch/2) or ``"half-pitch"``.
    """
    if policy is None:
        return DEFAULT_SIGMA
    if isinstance(policy, str):
        named = {"quarter-pitch": 0.25, "half-pitch": 0.5}
        if policy in named:
            return named[policy]
        policy = float(policy)
    sigma = float(policy)
    if not sigma > 0:
        raise InputError("sigma must be positive")
    return sigma


def rect_mass(points, lo, hi, sigma):
    """Gaussian mass of N(point, sigma^2 I) inside each rectangle.

    ``points`` (n, 2), ``lo``/``hi`` (m, 2) rectangle corners; returns (n, m).
    """
    p = np.asarray(points, dtype=float).reshape(-1, 2)[:, None, :]
    upper = ndtr((np.asarray(hi)[None] - p) / sigma)
    lower = ndtr((np.asarray(lo)[None] - p) / sigma)
    return np.prod(upper - lower, axis=-1)


def key_probabilities(points, layout: KeyboardLayout, sigma=DEFAULT_SIGMA) -> np.ndarray:
    """Per-key probability averaged over frames (layout-space ``points``)."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(p) == 0:
        raise EmptyFixation("fixation has no frames")
    half = layout.sizes / 2
    return rect_mass(p, layout.centers - half, layout.centers + half, sigma).mean(axis=0)


@dataclass(frozen=True, eq=False)
class KeyPosterior:
    """Probability of each key for one keystroke."""

    index: int
    keys: tuple[str, ...]
    probs: np.ndarray
    k: int = DEFAULT_K
    layout: str = ""

    @property
    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.keys, map(float, self.probs)))

    @property
    def off_keyboard(self) -> float:
        return float(max(0.0, 1.0 - self.probs.sum()))

    def topk(self, k=None) -> list[tuple[str, float]]:
        k = self.k if k is None else k
        order = np.argsort(-self.probs, kind="stable")[:k]
        return [(self.keys[i], float(self.probs[i])) for i in order]

    def top_keys(self, k=None) -> list[str]:
        return [name for name, _ in self.topk(k)]

    @property
    def best(self) -> str:
        return self.keys[int(np.argmax(self.probs))]

    def prob(self, key) -> float:
        try:
            return float(self.probs[self.keys.index(key)])
        except ValueError:
            return 0.0

    def without(self, key) -> KeyPosterior:
        """Copy with ``key`` zeroed, e.g. to discard a BACKSPACE reading."""
        probs = self.probs.copy()
        if key in self.keys:
            probs[self.keys.index(key)] = 0.0
        return KeyPosterior(self.index, self.keys, probs, self.k, self.layout)

    def renumbered(self, index) -> KeyPosterior:
        return KeyPosterior(index, self.keys, self.probs, self.k, self.layout)


def event_vectors(event) -> np.ndarray:
    if hasattr(event, "vectors"):
        return event.vectors()
    return np.asarray(event, dtype=float).reshape(-1, 3)


def key_posterior(event, frame: KeyboardFrame, sigma=None, *, index=0, k=DEFAULT_K,
                  layout=None) -> KeyPosterior:
    """Posterior over ``layout`` (default: the frame's) for one fixation."""
    u = event_vectors(event)
    if len(u) == 0:
        raise EmptyFixation("fixation has no frames")
    lay = frame.layout if layout is None else resolve_layout(layout)
    pts = frame.gaze_to_layout(u)
    probs = key_probabilities(pts, lay, sigma_from_policy(sigma))
    return KeyPosterior(index, lay.names, probs, k, lay.name)


def frame_posteriors(frame: KeyboardFrame, vectors_list, sigma=DEFAULT_SIGMA) -> np.ndarray:
    """(n_events, n_keys) posterior matrix, used to score candidate frames."""
    sizes = [len(u) for u in vectors_list]
    if min(sizes, default=1) == 0:
        raise EmptyFixation("fixation has no frames")
    pts = frame.gaze_to_layout(np.concatenate(vectors_list))
    lay = frame.layout
    half = lay.sizes / 2
    mass = rect_mass(pts, lay.centers - half, lay.centers + half, sigma)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    return np.add.reduceat(mass, starts, axis=0) / np.asarray(sizes, dtype=float)[:, None]


def decode_topk(events, frame: KeyboardFrame, k=DEFAULT_K, sigma=None, *,
                follow_toggles=False, start=None) -> list[KeyPosterior]:
    """One posterior per fixation.

    With ``follow_toggles`` a fixation decoded as a layout toggle (NUM/ABC)
    switches the layout used for the following fixations; both layouts share
    the frame's coordinates.  ``start`` overrides the layout in effect for
    the first fixation.
    """
    if k < 1:
        raise InputError("K must be at least 1")
    current = frame.layout if start is None else resolve_layout(start)
    out = []
    for i, ev in enumerate(events):
        post = key_posterior(ev, frame, sigma, index=i, k=k, layout=current)
        out.append(post)
        if follow_toggles and post.best in TOGGLES:
            target = TOGGLES[post.best]
            if target != current.name:
                current = resolve_layout(target)
    return out


# ---------------------------------------------------------------------------
# PIN pad


def _digit_layout(layout) -> KeyboardLayout:
    lay = resolve_layout(layout)
    keys = tuple(kk for kk in lay.keys if kk.name.isdigit())
    return KeyboardLayout(lay.name, keys) if len(keys) != len(lay.keys) else lay


def passcode_objective(points, t, layout="pin") -> np.ndarray:
    """Sum over points of the squared distance to the nearest key after shift t.

    ``t`` may be a single (2,) vector or an (m, 2) batch.
    """
    lay = _digit_layout(layout)
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    t = np.asarray(t, dtype=float)
    flat = t.reshape(-1, 2)
    out = np.empty(len(flat))
    chunk = max(1, 200_000 // max(1, len(p) * len(lay)))
    for s in range(0, len(flat), chunk):
        q = p[None, :, :] + flat[s:s + chunk, None, :]
        d2 = ((q[:, :, None, :] - lay.centers[None, None]) ** 2).sum(-1).min(axis=2)
        out[s:s + chunk] = d2.sum(axis=1)
    return out if t.ndim == 2 else out[0]


def _translation_grid(span, step):
    g = np.arange(-span, span + step / 2, step)
    ty, tz = np.meshgrid(g, g, indexing="ij")
    return np.stack([ty.ravel(), tz.ravel()], axis=1), len(g)


def _refine_translation(points, t, layout, iters=100):
    lay = _digit_layout(layout)
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    prev = None
    t = np.asarray(t, dtype=float)
    for _ in range(iters):
        d2 = (((p + t)[:, None, :] - lay.centers[None]) ** 2).sum(-1)
        idx = d2.argmin(axis=1)
        if prev is not None and np.array_equal(idx, prev):
            break
        prev = idx
        t = (lay.centers[idx] - p).mean(axis=0)
    return t


def fit_passcode(points, layout="pin", *, span=2.0, step=0.05, refine=True) -> np.ndarray:
    """Translation minimizing summed squared nearest-key distance.

    Grid search over +/- ``span`` pitches, then alternating nearest-key
    assignment and closed-form mean shift until the assignment is stable.
    Ties on the grid go to the smallest shift.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(p) == 0:
        raise InputError("need at least one point")
    grid, _ = _translation_grid(span, step)
    cost = passcode_objective(p, grid, layout)
    best = cost.min()
    near = np.flatnonzero(cost <= best + 1e-9 * max(1.0, best))
    t0 = grid[near[np.argmin(np.linalg.norm(grid[near], axis=1))]]
    if not refine:
        return t0
    t1 = _refine_translation(p, t0, layout)
    if passcode_objective(p, t1, layout) <= passcode_objective(p, t0, layout):
        return t1
    return t0


@dataclass(frozen=True)
class PasscodeGuess:
    digits: str
    probability: float
    residual: float
    rank: int
    translation: tuple[float, float] = field(default=(0.0, 0.0))


def kbest_products(prob_rows, n):
    """The ``n`` highest products choosing one entry per row, descending.

    Lazy best-first enumeration; returns (product, index tuple) pairs.
    """
    rows = [np.asarray(r, dtype=float) for r in prob_rows]
    orders = [np.argsort(-r, kind="stable") for r in rows]
    sorted_rows = [r[o] for r, o in zip(rows, orders)]

    def value(pos):
        return float(np.prod([sr[i] for sr, i in zip(sorted_rows, pos)]))

    start = (0,) * len(rows)
    heap = [(-value(start), start)]
    seen = {start}
    out = []
    while heap and len(out) < n:
        neg, pos = heapq.heappop(heap)
        out.append((-neg, tuple(int(o[i]) for o, i in zip(orders, pos))))
        for j in range(len(pos)):
            if pos[j] + 1 < len(sorted_rows[j]):
                nxt = pos[:j] + (pos[j] + 1,) + pos[j + 1:]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(heap, (-value(nxt), nxt))
    return out


def translation_hypotheses(groups, layout="pin", *, span=2.0, step=0.05, sigma=DEFAULT_SIGMA):
    """Locally optimal shifts whose keystroke-centroid fit is near the best.

    A PIN pattern that fits the pad in several places yields one hypothesis
    per placement.  Returns [(t, centroid residual)] sorted by residual.
    """
    cents = np.array([np.asarray(g, dtype=float).reshape(-1, 2).mean(axis=0) for g in groups])
    grid, n = _translation_grid(span, step)
    cost = passcode_objective(cents, grid, layout).reshape(n, n)
    pad = np.pad(cost, 1, constant_values=np.inf)
    neigh = np.stack([pad[1 + di:1 + di + n, 1 + dj:1 + dj + n]
                      for di in (-1, 0, 1) for dj in (-1, 0, 1) if di or dj])
    is_min = (cost <= neigh.min(axis=0))
    tol = len(cents) * sigma ** 2
    cand = np.argwhere(is_min & (cost <= cost.min() + tol))
    hyps = []
    for i, j in cand:
        t = _refine_translation(cents, grid[i * n + j], layout)
        r = float(passcode_objective(cents, t, layout))
        if all(np.abs(t - h).max() > 0.25 for h, _ in hyps):
            hyps.append((t, r))
    best = min(r for _, r in hyps)
    hyps = [(t, r) for t, r in hyps if r <= best + tol]
    hyps.sort(key=lambda h: (h[1], float(np.linalg.norm(h[0]))))
    return hyps


def rank_passcodes(groups, layout="pin", max_guesses=10, sigma=None, *, span=2.0,
                   step=0.05) -> list[PasscodeGuess]:
    """Ranked PIN guesses from per-keystroke gaze point groups (pitch units).

    Each placement hypothesis yields digit posteriors per keystroke; a
    guess's probability is its best joint probability over hypotheses.
    """
    sigma = sigma_from_policy(sigma)
    lay = _digit_layout(layout)
    groups = [np.asarray(g, dtype=float).reshape(-1, 2) for g in groups]
    if not groups:
        return []
    best: dict[str, tuple[float, float, tuple]] = {}
    for t, _ in translation_hypotheses(groups, lay, span=span, step=step, sigma=sigma):
        rows = [key_probabilities(g + t, lay, sigma) for g in groups]
        for prob, idx in kbest_products(rows, max_guesses):
            digits = "".join(lay.names[i] for i in idx)
            resid = float(sum(((g + t - lay.centers[i]) ** 2).sum() for g, i in zip(groups, idx)))
            if digits not in best or prob > best[digits][0]:
                best[digits] = (prob, resid, (float(t[0]), float(t[1])))
    # round away float noise so equal-probability placements tie on digits
    ordered = sorted(best.items(), key=lambda kv: (-float(f"{kv[1][0]:.10g}"), kv[0]))[:max_guesses]
    return [PasscodeGuess(d, p, r, i + 1, tt) for i, (d, (p, r, tt)) in enumerate(ordered)]
