"""End-to-end inference: sessions, keystrokes, keyboard, posteriors, text."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import clicks
from .decode import DEFAULT_K, decode_topk, sigma_from_policy
from .errors import (DegenerateGaze, GazeAwayFromPlane, GazeKeyError, InputError, InsufficientDips,
                     InsufficientSpread, PipelineError)
from .keyboard import KeyboardFrame, estimate_plane, locate_keyboard, pca_orientation, project_gaze, resolve_layout
from .session import SessionSegmentation, classify_sessions, load_model, segments_from_labels
from .text import (MODIFIERS, Dictionary, RecoveredText, literal_run, load_dictionary, recover_text,
                   segment_sentence)


@dataclass(frozen=True)
class PipelineConfig:
    """Pipeline-wide parameters; serializes as flat ``key=value`` lines."""

    window: int = clicks.DEFAULT_WINDOW
    threshold: str = str(clicks.DEFAULT_THRESHOLD)
    sigma: str = "quarter-pitch"
    k: int = DEFAULT_K
    tol_ms: float = clicks.DEFAULT_TOL_MS
    dict_path: str = ""
    layout: str = "auto"
    model_path: str = ""
    sessions: str = "model"
    min_session_ms: float = 1000.0
    min_fixation_ms: float = clicks.MIN_FIXATION_MS
    pin_pitch_deg: float = 4.0
    pin_max_span: float = 5.0
    max_attempts: int = 5
    max_guesses: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise InputError("k must be at least 1")
        if self.window < 2:
            raise InputError("window must be at least 2 frames")
        if self.sessions not in ("model", "labels", "all"):
            raise InputError("sessions must be one of model, labels, all")
        if self.threshold != "estimate":
            t = float(self.threshold)
            if not 0 < t < 1:
                raise InputError("threshold must lie in (0, 1) or be 'estimate'")
        if self.layout not in ("auto", "qwerty", "numberspace", "pin"):
            resolve_layout(self.layout)
        sigma_from_policy(self.sigma)

    @classmethod
    def fields(cls) -> dict[str, type]:
        return {f.name: type(f.default) for f in dataclasses.fields(cls)}

    def with_overrides(self, overrides: dict) -> PipelineConfig:
        """Copy with string-valued overrides converted to each field's type."""
        types = self.fields()
        changes = {}
        for key, val in overrides.items():
            key = key.replace("-", "_")
            if key not in types:
                raise InputError(f"unknown config key {key!r}")
            try:
                changes[key] = types[key](val) if not isinstance(val, types[key]) else val
            except ValueError:
                raise InputError(f"config key {key!r}: cannot parse {val!r}") from None
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        return "".join(f"{k}={getattr(self, k)}\n" for k in self.fields())

    @classmethod
    def loads(cls, text) -> PipelineConfig:
        pairs = {}
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InputError(f"config line {n}: expected key=value")
            k, v = line.split("=", 1)
            pairs[k.strip()] = v.strip()
        return cls().with_overrides(pairs)


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return PipelineConfig.loads(fh.read())


class StageError(PipelineError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")


@dataclass(frozen=True, eq=False)
class SessionResult:
    span: tuple[float, float]
    events: list
    frame: KeyboardFrame | None
    posteriors: list
    recovered: RecoveredText

    def to_dict(self) -> dict:
        return {
            "span": list(self.span),
            "fixations": [{"start_ms": e.start_t, "end_ms": e.end_t} for e in self.events],
            "keyboard": None if self.frame is None else self.frame.to_dict(),
            "posteriors": [{"idx": p.index, "layout": p.layout,
                            "topk": [[key, prob] for key, prob in p.topk()]} for p in self.posteriors],
            "recovered": self.recovered.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class PipelineResult:
    segmentation: SessionSegmentation
    threshold: float
    sessions: list[SessionResult] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)

    @property
    def events(self):
        return [e for s in self.sessions for e in s.events]

    @property
    def text(self) -> str:
        return " ".join(s.recovered.text for s in self.sessions if s.recovered.text)

    def to_dict(self) -> dict:
        return {"sessions": self.segmentation.to_rows(), "threshold": self.threshold,
                "typing_sessions": [s.to_dict() for s in self.sessions], "skipped": self.skipped}


NOT_A_KEYBOARD = (GazeAwayFromPlane, DegenerateGaze, InsufficientSpread)


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, typ, exc, tb):
        if exc is not None and isinstance(exc, GazeKeyError) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def find_sessions(trace, config: PipelineConfig, model=None) -> SessionSegmentation:
    if config.sessions == "all":
        lab = np.ones(len(trace), dtype=np.int8)
        return SessionSegmentation(segments_from_labels(lab, trace.t), lab)
    if config.sessions == "labels":
        if trace.labels is None:
            raise InputError("sessions=labels needs a labeled trace")
        return SessionSegmentation(segments_from_labels(trace.labels, trace.t), np.asarray(trace.labels))
    model = model or load_model(config.model_path or None)
    return classify_sessions(model, trace, config.min_session_ms)


def resolve_threshold(stab, spans, config: PipelineConfig) -> float:
    if config.threshold != "estimate":
        return float(config.threshold)
    parts = [stab.restrict(a, b) for a, b in spans]
    try:
        return clicks.estimate_threshold([p for p in parts if len(p)])
    except InsufficientDips:
        return clicks.DEFAULT_THRESHOLD


def drop_stray_edges(events, min_deg=8.0):
    """Drop first/last fixations aimed far from where the rest of the session looks.

    The cutoff is three times the median angular distance of the fixation
    centroids from their median direction, and at least ``min_deg``.
    """
    events = list(events)
    while len(events) > 2:
        c = np.array([e.vectors().mean(axis=0) for e in events])
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        med = np.median(c, axis=0)
        med /= np.linalg.norm(med)
        ang = np.degrees(np.arccos(np.clip(c @ med, -1.0, 1.0)))
        cut = max(3.0 * float(np.median(ang)), min_deg)
        if ang[0] > cut and ang[0] >= ang[-1]:
            events = events[1:]
        elif ang[-1] > cut:
            events = events[:-1]
        else:
            break
    return events


def choose_layout(events, config: PipelineConfig) -> str:
    """Explicit layout, or PIN pad when the typing region is narrow."""
    if config.layout != "auto":
        return resolve_layout(config.layout).name
    u = np.concatenate([e.vectors() for e in events])
    _, rot = estimate_plane(u)
    pts = project_gaze(u, rot)
    try:
        v = pca_orientation(pts)
    except GazeKeyError:
        return "qwerty"
    major = pts @ v[:, 0]
    span = np.percentile(major, 97.5) - np.percentile(major, 2.5)
    pitch = np.tan(np.radians(config.pin_pitch_deg))
    return "pin" if span < config.pin_max_span * pitch else "qwerty"


# costs in nats: a keystroke the dictionary cannot explain, and a digit or
# symbol read literally (rarer in typed text than dictionary words)
UNEXPLAINED_NATS = 5.0
LITERAL_NATS = 2.5


def _text_fit(posts, config, dictionary, per_key=UNEXPLAINED_NATS):
    """Cost of reading ``posts`` as a message; lower fits better.

    Each keystroke left unexplained by the dictionary (mode toggles
    included) costs ``per_key`` nats on top of the segmentation's negative
    log-likelihood.  A misaligned keyboard can still spell a chain of short
    words from second- and third-choice keys, but only at a much lower
    likelihood than the true alignment.  Digit and symbol runs count as
    explained at :data:`LITERAL_NATS` per keystroke.
    """
    worst = per_key * len(posts) + 1e6
    seq = [p for p in posts if p.best not in MODIFIERS]
    toggles = len(posts) - len(seq)
    if not seq:
        return worst
    cands = segment_sentence(seq, dictionary, config.k, n_best=1)
    if not cands:
        return worst
    best = cands[0]
    unexplained = literal = 0
    for (a, b), unk in zip(best.segments, best.unknown):
        if unk:
            unexplained += b - a
        elif literal_run(seq[a:b]) is not None:
            literal += b - a
    return per_key * (toggles + unexplained) + LITERAL_NATS * literal - best.log_likelihood


def trim_edges(events, posts, max_off=0.5):
    """Drop leading/trailing fixations that mostly miss the keyboard.

    A session boundary a frame or two early or late picks up a fixation of
    the surrounding activity; its gaze lands largely off the keys.
    """
    a, b = 0, len(posts)
    while a < b and posts[a].off_keyboard > max_off:
        a += 1
    while b > a and posts[b - 1].off_keyboard > max_off:
        b -= 1
    return events[a:b], [p.renumbered(i) for i, p in enumerate(posts[a:b])]


def pick_frame(frames, events, config: PipelineConfig, sigma, dictionary, rel_margin=0.95, max_frames=8):
    """Choose among near-tied keyboard alignments by dictionary fit.

    A keyboard shifted by one column often scores almost as well as the
    true one; only the decoded words tell them apart.  Each frame is also
    read as starting on the number layer, which shares the letter layer's
    geometry; that reading pays for one toggle.  Returns the frame with its
    edge-trimmed events and posteriors.
    """
    top = frames[0].diagnostics["score"]
    pool = [f for f in frames[:max_frames] if f.diagnostics["score"] >= rel_margin * top]
    readings = []
    for f in pool:
        starts = [(None, 0)]
        if dictionary is not None and f.layout.name == "qwerty":
            starts.append(("numberspace", 1))
        for start, toggles in starts:
            posts = decode_topk(events, f, config.k, sigma, follow_toggles=True, start=start)
            readings.append((f, toggles, *trim_edges(events, posts)))
    if dictionary is None:
        return readings[0][0], readings[0][2], readings[0][3]
    fits = [_text_fit(p, config, dictionary) + UNEXPLAINED_NATS * tg for _, tg, _, p in readings]
    i = min(range(len(readings)), key=lambda j: (fits[j], -readings[j][0].diagnostics["score"]))
    f, _, ev, posts = readings[i]
    return f, ev, posts


def analyze_session(trace, stab, span, threshold, config: PipelineConfig,
                    dictionary: Dictionary | None) -> SessionResult:
    with _Stage("clicks"):
        events = clicks.segment_keystrokes(stab, threshold, span, trace,
                                           min_fixation_ms=config.min_fixation_ms)
    events = drop_stray_edges([e for e in events if len(e)], 2 * config.pin_pitch_deg)
    if not events:
        return SessionResult(span, [], None, [], RecoveredText("message"))
    sigma = sigma_from_policy(config.sigma)
    with _Stage("keyboard"):
        layout = choose_layout(events, config)
        vecs = [e.vectors() for e in events]
        if layout == "pin":
            frame = locate_keyboard(vecs, layout, upright=True, sigma=sigma,
                                    fixed_scale=float(np.tan(np.radians(config.pin_pitch_deg))))
        else:
            frames = locate_keyboard(vecs, layout, sigma=sigma, return_candidates=True)
    with _Stage("decode"):
        if layout == "pin":
            posts = decode_topk(events, frame, config.k, sigma)
        else:
            # edge trimming is skipped for PINs: that frame is only centered,
            # not aligned, so edge keys may look off-pad
            frame, events, posts = pick_frame(frames, events, config, sigma, dictionary)
            vecs = [e.vectors() for e in events]
    with _Stage("text"):
        pin_points = [frame.gaze_to_layout(v) for v in vecs] if layout == "pin" else None
        rec = recover_text(posts, dictionary, layout=layout, k=config.k, max_attempts=config.max_attempts,
                           pin_points=pin_points, max_guesses=config.max_guesses, sigma=sigma)
    return SessionResult(span, events, frame, posts, rec)


def run_pipeline(trace, config: PipelineConfig | None = None, *, model=None,
                 dictionary: Dictionary | None = None) -> PipelineResult:
    """Run every stage in order; stage failures raise :class:`StageError`."""
    config = config or PipelineConfig()
    with _Stage("sessions"):
        seg = find_sessions(trace, config, model)
    spans = seg.typing_spans
    if not spans:
        return PipelineResult(seg, float("nan"), [])
    if dictionary is None:
        dictionary = load_dictionary(config.dict_path or None)
    with _Stage("stability"):
        stab = clicks.stability(trace, config.window)
        threshold = resolve_threshold(stab, spans, config)
    results, skipped = [], []
    for span in spans:
        try:
            results.append(analyze_session(trace, stab, span, threshold, config, dictionary))
        except StageError as exc:
            # a span whose gaze cannot come from a keyboard is reported, not fatal
            if not isinstance(exc.cause, NOT_A_KEYBOARD):
                raise
            skipped.append({"span": list(span), "stage": exc.stage, "reason": str(exc.cause)})
    return PipelineResult(seg, threshold, [r for r in results if r.events], skipped)
