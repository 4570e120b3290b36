"""Keystroke detection from gaze stability.

Stability S(n) is the mean pairwise cosine between the N gaze directions in
the window starting at frame n.  Because cos(angle) between unit vectors is
their dot product, S(n) equals the squared norm of the window's mean
direction, which is what :func:`stability` computes.  Saccades show up as
deep dips in S; post-saccade corrections as shallower dips that closely
follow a deeper one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InsufficientDips, SegmentTooShort
from .geometry import angles_to_unit_vector
from .metrics import Rates, rates

DEFAULT_WINDOW = 5
DEFAULT_THRESHOLD = 0.9996
INTERMEDIATE_MS = 500.0
HIST_BIN = 1e-5
DEFAULT_TOL_MS = 300.0
MIN_FIXATION_MS = 150.0


@dataclass(frozen=True, eq=False)
class StabilityTrace:
    """S(n) per window plus the timing needed to place dips in time.

    ``t`` holds the timestamp of each window's center frame and ``offset``
    the trace index of the first window's first frame.
    """

    values: np.ndarray
    window: int
    t: np.ndarray
    offset: int = 0

    def __len__(self):
        return len(self.values)

    @property
    def depth(self) -> np.ndarray:
        return 1.0 - self.values

    def center_index(self, n) -> int:
        """Trace frame index at the center of window ``n``."""
        return self.offset + int(n) + (self.window - 1) // 2

    def restrict(self, start_t, end_t) -> StabilityTrace:
        i0 = int(np.searchsorted(self.t, start_t, side="left"))
        i1 = int(np.searchsorted(self.t, end_t, side="right"))
        return StabilityTrace(self.values[i0:i1], self.window, self.t[i0:i1], self.offset + i0)


@dataclass(frozen=True)
class Dip:
    index: int
    t: float
    depth: float
    kind: str = "noise"


@dataclass(frozen=True, eq=False)
class FixationEvent:
    """One keystroke candidate: a dwell between two preserved saccades."""

    start_t: float
    end_t: float
    frames: np.ndarray
    yaw: np.ndarray
    pitch: np.ndarray

    def __post_init__(self):
        if not self.end_t > self.start_t:
            raise ValueError("fixation must end after it starts")

    @property
    def t_mid(self) -> float:
        return (self.start_t + self.end_t) / 2

    @property
    def duration_ms(self) -> float:
        return self.end_t - self.start_t

    def vectors(self) -> np.ndarray:
        return angles_to_unit_vector(self.yaw, self.pitch)

    def __len__(self):
        return len(self.frames)


def stability_from_vectors(u, window=DEFAULT_WINDOW) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1, 3)
    if window < 2:
        raise SegmentTooShort("stability window must be at least 2 frames")
    if len(u) < window:
        raise SegmentTooShort(f"segment of {len(u)} frames is shorter than the window ({window})")
    m = sliding_window_view(u, window, axis=0).mean(axis=-1)
    return np.minimum((m * m).sum(axis=-1), 1.0)


def stability(trace, window=DEFAULT_WINDOW) -> StabilityTrace:
    """Windowed gaze stability of a :class:`~gazekey.trace.GazeTrace`."""
    vals = stability_from_vectors(trace.unit_vectors(), window)
    centers = np.arange(len(vals)) + (window - 1) // 2
    return StabilityTrace(vals, window, np.asarray(trace.t)[centers], 0)


def stability_bruteforce(yaw, pitch, window=DEFAULT_WINDOW) -> np.ndarray:
    """Direct double sum over window pairs of the angle-form cosine."""
    th = np.radians(np.asarray(yaw, dtype=float))
    ph = np.radians(np.asarray(pitch, dtype=float))
    n = len(th) - window + 1
    if window < 2 or n < 1:
        raise SegmentTooShort("segment shorter than the window")
    out = np.empty(n)
    for s in range(n):
        acc = 0.0
        for i in range(s, s + window):
            for j in range(s, s + window):
                acc += (np.cos(ph[i]) * np.cos(ph[j]) * np.cos(th[i] - th[j])
                        + np.sin(ph[i]) * np.sin(ph[j]))
        out[s] = acc / window ** 2
    return out


def local_maxima(x) -> np.ndarray:
    """Indices of interior local maxima; a flat top reports its first sample."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 3:
        return np.array([], dtype=int)
    rise = np.flatnonzero(np.diff(x) != 0) + 1
    starts = np.concatenate([[0], rise])
    ends = np.concatenate([rise - 1, [n - 1]])
    peaks = []
    for a, b in zip(starts, ends):
        if a > 0 and b < n - 1 and x[a - 1] < x[a] and x[b + 1] < x[b]:
            peaks.append(a)
    return np.asarray(peaks, dtype=int)


def find_dips(s: StabilityTrace, min_height=None) -> list[Dip]:
    """Local maxima of -S taller than median(-S) (or ``min_height``)."""
    neg = -np.asarray(s.values)
    if len(neg) == 0:
        return []
    gate = np.median(neg) if min_height is None else min_height
    idx = local_maxima(neg)
    idx = idx[neg[idx] > gate]
    return [Dip(int(i), float(s.t[i]), float(1.0 - s.values[i])) for i in idx]


def _deeper_within(dips, horizon_ms, after_only):
    """Flag dips that have a deeper dip within ``horizon_ms``.

    Equal depth counts as deeper for the earlier of the two, so the earlier
    dip of a tie survives.
    """
    flags = []
    times = np.array([d.t for d in dips])
    depths = np.array([d.depth for d in dips])
    for i, d in enumerate(dips):
        dt = d.t - times
        near = (dt > 0) & (dt <= horizon_ms) if after_only else (np.abs(dt) <= horizon_ms)
        near[i] = False
        deeper = (depths > d.depth) | ((depths == d.depth) & (times < d.t))
        flags.append(bool(np.any(near & deeper)))
    return flags


def classify_dips(dips, threshold=None, horizon_ms=INTERMEDIATE_MS, after_only=False) -> list[Dip]:
    flags = _deeper_within(dips, horizon_ms, after_only)
    out = []
    for d, inter in zip(dips, flags):
        if inter:
            kind = "intermediate"
        elif threshold is not None and d.depth > 1.0 - threshold:
            kind = "saccade"
        else:
            kind = "noise"
        out.append(Dip(d.index, d.t, d.depth, kind))
    return out


def optimal_intermediate_depths(dips, horizon_ms=INTERMEDIATE_MS) -> list[float]:
    """Depths in the longest depth-ordered run made only of intermediate dips.

    Ties between equally long runs go to the deeper run.
    """
    if len(dips) < 2:
        return []
    flags = _deeper_within(dips, horizon_ms, after_only=False)
    order = sorted(range(len(dips)), key=lambda i: (dips[i].depth, dips[i].t))
    best, cur = [], []
    for i in order:
        if flags[i]:
            cur.append(dips[i].depth)
            if len(cur) >= len(best):
                best = list(cur)
        else:
            cur = []
    return best


def estimate_threshold(traces, bin_width=HIST_BIN, horizon_ms=INTERMEDIATE_MS) -> float:
    """Stability threshold at the mode of pooled intermediate-dip depths.

    Raises InsufficientDips when no trace contributes an intermediate dip;
    callers fall back to :data:`DEFAULT_THRESHOLD`.
    """
    pooled = []
    for s in traces:
        pooled.extend(optimal_intermediate_depths(find_dips(s), horizon_ms))
    if not pooled:
        raise InsufficientDips("no intermediate dips to estimate the threshold from")
    depths = np.asarray(pooled)
    bins = np.floor(depths / bin_width + 1e-9).astype(np.int64)
    vals, counts = np.unique(bins, return_counts=True)
    mode = vals[np.argmax(counts)]
    return float(1.0 - depths[bins == mode].mean())


def saccade_dips(s: StabilityTrace, threshold=DEFAULT_THRESHOLD, horizon_ms=INTERMEDIATE_MS) -> list[Dip]:
    """Dips deeper than the threshold, minus those trailing a deeper one."""
    cands = [d for d in find_dips(s) if 1.0 - d.depth < threshold]
    flags = _deeper_within(cands, horizon_ms, after_only=True)
    return [Dip(d.index, d.t, d.depth, "saccade") for d, f in zip(cands, flags) if not f]


def segment_keystrokes(s: StabilityTrace, threshold=DEFAULT_THRESHOLD, session=None, trace=None,
                       *, min_fixation_ms=MIN_FIXATION_MS, horizon_ms=INTERMEDIATE_MS) -> list[FixationEvent]:
    """Split a typing session into fixations bounded by preserved saccades.

    ``session`` is a (start_t, end_t) span (default: the whole trace) whose
    edges also bound the first and last fixation.  ``trace`` supplies the
    member frames of each event; frames within half a window of a saccade
    are left out.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    if session is None:
        session = (float(s.t[0]), float(s.t[-1])) if trace is None else (float(trace.t[0]), float(trace.t[-1]))
    start_t, end_t = map(float, session)
    # look a little past both edges so a saccade straddling an edge still
    # trims its frames from the neighboring fixation
    sub = s.restrict(start_t - horizon_ms, end_t + horizon_ms)
    sacc = saccade_dips(sub, threshold, horizon_ms) if len(sub) else []
    inner = [(d.t, sub.center_index(d.index)) for d in sacc if start_t < d.t < end_t]
    # edge trimming also honors saccades that the intermediate rule dropped:
    # a jump into the keyboard right after a distant glance is still a jump
    raw = [d for d in find_dips(sub) if 1.0 - d.depth < threshold] if len(sub) else []
    lo = min(start_t + horizon_ms, inner[0][0] if inner else end_t)
    hi = max(end_t - horizon_ms, inner[-1][0] if inner else start_t)
    before = [sub.center_index(d.index) for d in raw if d.t < lo]
    after = [sub.center_index(d.index) for d in raw if d.t > hi]
    bounds = ([(start_t, before[-1] if before else None)] + inner
              + [(end_t, after[0] if after else None)])
    margin = s.window // 2 + 1
    events = []
    for (t0, i0), (t1, i1) in zip(bounds[:-1], bounds[1:]):
        if t1 - t0 < min_fixation_ms:
            continue
        if trace is None:
            frames = np.array([], dtype=int)
            yaw = pitch = np.array([])
        else:
            a, b = trace.index_span(t0, t1)
            if i0 is not None:
                a = max(a, i0 + margin)
            if i1 is not None:
                b = min(b, i1 - margin + 1)
            if b <= a:
                continue
            frames = np.arange(a, b)
            yaw, pitch = trace.yaw[a:b], trace.pitch[a:b]
        events.append(FixationEvent(t0, t1, frames, np.asarray(yaw), np.asarray(pitch)))
    return events


def detect_keystrokes(trace, sessions, window=DEFAULT_WINDOW, threshold=DEFAULT_THRESHOLD,
                      **kwargs) -> list[FixationEvent]:
    """Keystroke candidates for every (start_t, end_t) typing session of ``trace``."""
    if len(trace) < window:
        return []
    s = stability(trace, window)
    out = []
    for span in sessions:
        out.extend(segment_keystrokes(s, threshold, span, trace, **kwargs))
    return out


@dataclass(frozen=True)
class ClickMatch:
    rates: Rates
    pairs: tuple[tuple[int, int], ...]

    @property
    def precision(self):
        return self.rates.precision

    @property
    def recall(self):
        return self.rates.recall


def match_events(pred_times, true_times, tol_ms=DEFAULT_TOL_MS) -> list[tuple[int, int]]:
    """Greedy one-to-one matching, closest pairs first, within ``tol_ms``."""
    if tol_ms <= 0:
        raise ValueError("tol_ms must be positive")
    p = np.asarray(pred_times, dtype=float)
    q = np.asarray(true_times, dtype=float)
    if len(p) == 0 or len(q) == 0:
        return []
    d = np.abs(p[:, None] - q[None, :])
    ii, jj = np.nonzero(d <= tol_ms)
    order = sorted(zip(d[ii, jj], p[ii], q[jj], ii, jj))
    used_p, used_q, pairs = set(), set(), []
    for _, _, _, i, j in order:
        if i in used_p or j in used_q:
            continue
        used_p.add(i)
        used_q.add(j)
        pairs.append((int(i), int(j)))
    return pairs


def click_metrics(pred, truth, tol_ms=DEFAULT_TOL_MS) -> ClickMatch:
    """Precision/recall of detected fixations against labeled keystrokes.

    ``pred`` holds FixationEvents (or times in ms), ``truth`` Keystrokes (or
    times).  Predicted time is the fixation midpoint.
    """
    pt = [getattr(e, "t_mid", e) for e in pred]
    tt = [getattr(k, "t", k) for k in truth]
    pairs = match_events(pt, tt, tol_ms)
    tp = len(pairs)
    return ClickMatch(rates(tp, len(pt) - tp, len(tt) - tp), tuple(pairs))
