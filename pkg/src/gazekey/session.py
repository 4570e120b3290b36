"""Typing-session detection with a small bidirectional recurrent network.

The network reads normalized (yaw, pitch, EAR) frames through two Elman
cells, one running forward in time and one backward, and emits typing /
other logits per frame from both hidden states.  Training is plain
backpropagation through time with Adam, written in numpy so a fixed seed
gives bit-identical weights.  Long traces are cut into overlapping windows;
overlapping logits are averaged before the per-frame argmax.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import CheckpointVersionError, DegenerateFeatures, InputError, LengthMismatch, UnlabeledData
from .metrics import Rates, rates

CHECKPOINT_FORMAT = "gazekey-session"
CHECKPOINT_VERSION = 1
N_FEATURES = 3
N_CLASSES = 2
TYPING, OTHER = 1, 0

PARAM_NAMES = ("Wf", "Uf", "bf", "Wb", "Ub", "bb", "Vf", "Vb", "c")


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 128
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    window: int = 256
    clip: float = 5.0
    seed: int = 0


def features(trace) -> np.ndarray:
    return np.column_stack([trace.yaw, trace.pitch, trace.ear]).astype(float)


def _init_params(hidden, rng):
    def mat(rows, cols, scale):
        return rng.normal(0.0, scale, (rows, cols))

    def recurrent():
        q, _ = np.linalg.qr(rng.normal(size=(hidden, hidden)))
        return 0.5 * q

    p = {
        "Wf": mat(hidden, N_FEATURES, 1 / np.sqrt(N_FEATURES)), "Uf": recurrent(), "bf": np.zeros(hidden),
        "Wb": mat(hidden, N_FEATURES, 1 / np.sqrt(N_FEATURES)), "Ub": recurrent(), "bb": np.zeros(hidden),
        "Vf": mat(N_CLASSES, hidden, 1 / np.sqrt(2 * hidden)), "Vb": mat(N_CLASSES, hidden, 1 / np.sqrt(2 * hidden)),
        "c": np.zeros(N_CLASSES),
    }
    return p


def _scan(x, W, U, b):
    """Elman recurrence over axis 1 of x (B, T, F); returns hidden states (B, T, H)."""
    pre = x @ W.T + b
    B, T, H = pre.shape
    hs = np.empty((B, T, H))
    h = np.zeros((B, H))
    for t in range(T):
        h = np.tanh(pre[:, t] + h @ U.T)
        hs[:, t] = h
    return hs


def _scan_grad(x, hs, dhs, U):
    """BPTT through :func:`_scan`; returns (dW, dU, db)."""
    B, T, H = hs.shape
    da_all = np.empty_like(hs)
    carry = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        da = (dhs[:, t] + carry) * (1.0 - hs[:, t] ** 2)
        da_all[:, t] = da
        carry = da @ U
    prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1)
    dU = np.einsum("bti,btj->ij", da_all, prev)
    dW = np.einsum("bti,btj->ij", da_all, x)
    db = da_all.sum(axis=(0, 1))
    return dW, dU, db


def _forward(p, x):
    hf = _scan(x, p["Wf"], p["Uf"], p["bf"])
    hb = _scan(x[:, ::-1], p["Wb"], p["Ub"], p["bb"])[:, ::-1]
    logits = hf @ p["Vf"].T + hb @ p["Vb"].T + p["c"]
    return logits, hf, hb


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grads(p, x, y, mask):
    """Masked mean cross-entropy over frames and its parameter gradients."""
    logits, hf, hb = _forward(p, x)
    prob = _softmax(logits)
    n = max(mask.sum(), 1.0)
    picked = np.take_along_axis(prob, y[..., None], axis=-1)[..., 0]
    loss = -(np.log(np.maximum(picked, 1e-300)) * mask).sum() / n
    dz = prob.copy()
    np.put_along_axis(dz, y[..., None], np.take_along_axis(dz, y[..., None], axis=-1) - 1.0, axis=-1)
    dz *= (mask / n)[..., None]
    g = {
        "Vf": np.einsum("btk,bth->kh", dz, hf),
        "Vb": np.einsum("btk,bth->kh", dz, hb),
        "c": dz.sum(axis=(0, 1)),
    }
    g["Wf"], g["Uf"], g["bf"] = _scan_grad(x, hf, dz @ p["Vf"], p["Uf"])
    xr = x[:, ::-1]
    g["Wb"], g["Ub"], g["bb"] = _scan_grad(xr, hb[:, ::-1], (dz @ p["Vb"])[:, ::-1], p["Ub"])
    return float(loss), g


@dataclass(frozen=True, eq=False)
class SessionModel:
    params: dict
    mean: np.ndarray
    std: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)
    loss_history: tuple[float, ...] = ()

    def __post_init__(self):
        if any(not np.all(np.isfinite(v)) for v in self.params.values()):
            raise InputError("model weights must be finite")
        if np.any(np.asarray(self.std) <= 0):
            raise InputError("normalization std must be positive")

    @property
    def hidden(self) -> int:
        return self.params["Uf"].shape[0]

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1] if self.loss_history else float("nan")

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def logits(self, trace) -> np.ndarray:
        """Per-frame class logits, averaged over overlapping windows."""
        x = self.normalize(features(trace))
        n, w = len(x), self.config.window
        if n <= w:
            pad = np.zeros((1, w, N_FEATURES))
            pad[0, :n] = x
            return _forward(self.params, pad)[0][0, :n]
        starts = list(range(0, n - w + 1, w // 2))
        if starts[-1] != n - w:
            starts.append(n - w)
        batch = np.stack([x[s:s + w] for s in starts])
        out = _forward(self.params, batch)[0]
        acc = np.zeros((n, N_CLASSES))
        cnt = np.zeros(n)
        for s, z in zip(starts, out):
            acc[s:s + w] += z
            cnt[s:s + w] += 1
        return acc / cnt[:, None]

    def predict_frames(self, trace) -> np.ndarray:
        return np.argmax(self.logits(trace), axis=1).astype(np.int8)

    # -- checkpoint ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "shapes": {"input": N_FEATURES, "hidden": self.hidden, "output": N_CLASSES},
            "weights": {k: {"shape": list(self.params[k].shape),
                            "data": [float(v) for v in self.params[k].ravel(order="C")]}
                        for k in PARAM_NAMES},
            "normalization": {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]},
            "hyperparameters": self.config.__dict__,
            "loss_history": list(self.loss_history),
        }

    @classmethod
    def from_dict(cls, d) -> SessionModel:
        if d.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointVersionError("not a session model checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint version {d.get('version')!r} != supported {CHECKPOINT_VERSION}")
        params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["weights"].items()}
        missing = set(PARAM_NAMES) - set(params)
        if missing:
            raise CheckpointVersionError(f"checkpoint lacks weights {sorted(missing)}")
        return cls(params, np.array(d["normalization"]["mean"]), np.array(d["normalization"]["std"]),
                   TrainConfig(**d.get("hyperparameters", {})), tuple(d.get("loss_history", ())))


def save_model(model: SessionModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path=None) -> SessionModel:
    """Load a checkpoint; ``None`` loads the pretrained default."""
    if path is None:
        text = resources.files("gazekey").joinpath("data/session_model.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"checkpoint is not valid JSON: {exc}") from None
    return SessionModel.from_dict(d)


# ---------------------------------------------------------------------------
# Training


def _windows(x, y, w):
    """Cut one trace into half-overlapping windows with masks."""
    n = len(x)
    if n <= w:
        xs = np.zeros((1, w, N_FEATURES))
        ys = np.zeros((1, w), dtype=np.int64)
        ms = np.zeros((1, w))
        xs[0, :n], ys[0, :n], ms[0, :n] = x, y, 1.0
        return xs, ys, ms
    starts = list(range(0, n - w + 1, w // 2))
    if starts[-1] != n - w:
        starts.append(n - w)
    return (np.stack([x[s:s + w] for s in starts]), np.stack([y[s:s + w] for s in starts]),
            np.ones((len(starts), w)))


def train_session_model(traces, config: TrainConfig | None = None, *, log=None) -> SessionModel:
    """Fit a session model on per-frame labeled traces.

    Deterministic for a given ``config.seed``.  ``log`` receives
    (epoch, loss) after every epoch.
    """
    cfg = config or TrainConfig()
    traces = list(traces)
    if len(traces) < 2:
        raise InputError("need at least two training traces")
    if any(tr.labels is None for tr in traces):
        raise UnlabeledData("every training trace needs per-frame labels")
    raw = np.concatenate([features(tr) for tr in traces])
    lab = np.concatenate([tr.labels for tr in traces])
    mean, std = raw.mean(axis=0), raw.std(axis=0)
    if np.any(std < 1e-12):
        raise DegenerateFeatures("a feature has zero variance in the training data")
    if len(np.unique(lab)) < 2:
        raise DegenerateFeatures("training labels contain a single class")
    parts = [_windows((features(tr) - mean) / std, tr.labels.astype(np.int64), cfg.window) for tr in traces]
    X = np.concatenate([p[0] for p in parts])
    Y = np.concatenate([p[1] for p in parts])
    M = np.concatenate([p[2] for p in parts])

    rng = np.random.default_rng(cfg.seed)
    p = _init_params(cfg.hidden, rng)
    m1 = {k: np.zeros_like(v) for k, v in p.items()}
    m2 = {k: np.zeros_like(v) for k, v in p.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X))
        total, weight = 0.0, 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, g = loss_and_grads(p, X[idx], Y[idx], M[idx])
            norm = np.sqrt(sum((v * v).sum() for v in g.values()))
            if norm > cfg.clip:
                g = {k: v * (cfg.clip / norm) for k, v in g.items()}
            step += 1
            for k in p:
                m1[k] = b1 * m1[k] + (1 - b1) * g[k]
                m2[k] = b2 * m2[k] + (1 - b2) * g[k] ** 2
                mh = m1[k] / (1 - b1 ** step)
                vh = m2[k] / (1 - b2 ** step)
                p[k] = p[k] - cfg.lr * mh / (np.sqrt(vh) + eps)
            w = M[idx].sum()
            total += loss * w
            weight += w
        history.append(total / weight)
        if log is not None:
            log(epoch, history[-1])
    return SessionModel(p, mean, std, cfg, tuple(history))


# ---------------------------------------------------------------------------
# Segmentation


@dataclass(frozen=True, eq=False)
class SessionSegmentation:
    """Contiguous labeled spans covering the whole trace.

    ``frame_labels`` are the cleaned per-frame labels the spans come from.
    """

    segments: tuple[tuple[float, float, str], ...]
    frame_labels: np.ndarray

    @property
    def typing_spans(self) -> list[tuple[float, float]]:
        return [(a, b) for a, b, lab in self.segments if lab == "typing"]

    def to_rows(self) -> list[dict]:
        return [{"start_ms": a, "end_ms": b, "label": lab} for a, b, lab in self.segments]


def merge_short_runs(labels, t, min_ms=1000.0) -> np.ndarray:
    """Flip runs shorter than ``min_ms`` into their neighbors, shortest first."""
    lab = np.asarray(labels, dtype=np.int8).copy()
    t = np.asarray(t, dtype=float)
    n = len(lab)
    period = float(np.median(np.diff(t))) if n > 1 else 0.0
    while True:
        edges = np.flatnonzero(np.diff(lab)) + 1
        starts = np.concatenate([[0], edges])
        ends = np.concatenate([edges, [n]])
        if len(starts) < 2:
            return lab
        dur = np.array([t[e - 1] - t[s] + period for s, e in zip(starts, ends)])
        i = int(np.argmin(dur))
        if dur[i] >= min_ms:
            return lab
        lab[starts[i]:ends[i]] = 1 - lab[starts[i]]


def segments_from_labels(labels, t) -> tuple[tuple[float, float, str], ...]:
    lab = np.asarray(labels)
    t = np.asarray(t, dtype=float)
    n = len(lab)
    edges = np.flatnonzero(np.diff(lab)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [n]])
    out = []
    for s, e in zip(starts, ends):
        end_t = float(t[e]) if e < n else float(t[-1])
        out.append((float(t[s]), end_t, "typing" if lab[s] == TYPING else "other"))
    return tuple(out)


def classify_sessions(model: SessionModel, trace, min_ms=1000.0) -> SessionSegmentation:
    """Per-frame argmax, short-run merge, then contiguous spans."""
    lab = merge_short_runs(model.predict_frames(trace), trace.t, min_ms)
    return SessionSegmentation(segments_from_labels(lab, trace.t), lab)


def session_metrics(pred, truth) -> Rates:
    """Frame-level rates of predicted vs. true typing labels."""
    p = np.asarray(pred.frame_labels if isinstance(pred, SessionSegmentation) else pred)
    y = np.asarray(truth)
    if p.shape != y.shape:
        raise LengthMismatch(f"{len(p)} predicted labels vs {len(y)} true labels")
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    tn = int(np.sum((p == 0) & (y == 0)))
    return rates(tp, fp, fn, tn)


def span_iou(a, b) -> float:
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


def split_traces(traces, fraction=0.2, seed=0):
    """Seeded (train, held-out) split of a trace list."""
    traces = list(traces)
    if not 0 < fraction < 1:
        raise InputError("fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(traces))
    k = max(1, int(round(fraction * len(traces))))
    held = set(order[:k].tolist())
    return ([tr for i, tr in enumerate(traces) if i not in held],
            [tr for i, tr in enumerate(traces) if i in held])

