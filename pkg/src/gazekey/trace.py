"""Gaze trace container and CSV I/O.

A trace file is a UTF-8 CSV with header ``t_ms,yaw_deg,pitch_deg,ear`` and an
optional trailing ``label`` column (0 = other activity, 1 = typing).  An
optional first line ``# sample_rate_hz=<float>`` records the nominal rate.
Ground-truth keystrokes live in a sidecar CSV with header ``t_ms,key``.
"""

from __future__ import annotations

import csv
import io
import os
import sys
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .errors import InputError, NonMonotonicTimestamps, ParseError
from .geometry import PITCH_LIMIT_DEG, YAW_LIMIT_DEG, angles_to_unit_vector

DEFAULT_SAMPLE_RATE_HZ = 30.0

TRACE_HEADER = ["t_ms", "yaw_deg", "pitch_deg", "ear"]
KEYS_HEADER = ["t_ms", "key"]


class GazeSample(NamedTuple):
    t: float
    yaw: float
    pitch: float
    ear: float


class Keystroke(NamedTuple):
    t: float
    key: str


def _check_ranges(yaw, pitch, ear):
    bad = np.flatnonzero(
        ~np.isfinite(yaw) | ~np.isfinite(pitch) | ~np.isfinite(ear)
        | (np.abs(yaw) > YAW_LIMIT_DEG) | (np.abs(pitch) > PITCH_LIMIT_DEG) | (ear <= 0)
    )
    return bad


@dataclass(frozen=True, eq=False)
class GazeTrace:
    """Ordered gaze samples with optional ground truth.

    Columns are stored as read-only float arrays; ``labels`` is an int8 array
    aligned with the samples, ``keystrokes`` a tuple of :class:`Keystroke`.
    """

    t: np.ndarray
    yaw: np.ndarray
    pitch: np.ndarray
    ear: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    labels: np.ndarray | None = None
    keystrokes: tuple[Keystroke, ...] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = {}
        for name in ("t", "yaw", "pitch", "ear"):
            a = np.array(getattr(self, name), dtype=float).reshape(-1)
            a.setflags(write=False)
            cols[name] = a
            object.__setattr__(self, name, a)
        n = len(cols["t"])
        if n == 0:
            raise InputError("trace must contain at least one sample")
        if any(len(a) != n for a in cols.values()):
            raise InputError("trace columns differ in length")
        if not self.sample_rate_hz > 0:
            raise InputError("sample_rate_hz must be positive")
        if cols["t"][0] < 0:
            raise InputError("timestamps must be non-negative")
        if n > 1 and np.any(np.diff(cols["t"]) <= 0):
            i = int(np.flatnonzero(np.diff(cols["t"]) <= 0)[0]) + 1
            raise NonMonotonicTimestamps(f"timestamp at sample {i} does not increase")
        bad = _check_ranges(cols["yaw"], cols["pitch"], cols["ear"])
        if len(bad):
            raise InputError(f"sample {int(bad[0])} outside the valid gaze/EAR range")
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int8).reshape(-1)
            if len(lab) != n:
                raise InputError("labels must have one entry per sample")
            if np.any((lab != 0) & (lab != 1)):
                raise InputError("labels must be 0 or 1")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)
        if self.keystrokes is not None:
            ks = tuple(Keystroke(float(t), str(k)) for t, k in self.keystrokes)
            object.__setattr__(self, "keystrokes", ks)

    @classmethod
    def from_samples(cls, samples, **kwargs) -> GazeTrace:
        arr = np.array([tuple(s) for s in samples], dtype=float).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], **kwargs)

    def __len__(self):
        return len(self.t)

    def __iter__(self) -> Iterator[GazeSample]:
        for row in zip(self.t, self.yaw, self.pitch, self.ear):
            yield GazeSample(*map(float, row))

    @property
    def samples(self) -> list[GazeSample]:
        return list(self)

    @property
    def duration_ms(self) -> float:
        return float(self.t[-1] - self.t[0])

    def unit_vectors(self) -> np.ndarray:
        return angles_to_unit_vector(self.yaw, self.pitch)

    def index_span(self, start_t, end_t) -> tuple[int, int]:
        """Half-open sample index range covering [start_t, end_t]."""
        i0 = int(np.searchsorted(self.t, start_t, side="left"))
        i1 = int(np.searchsorted(self.t, end_t, side="right"))
        return i0, i1

    def slice(self, start_t, end_t) -> GazeTrace:
        i0, i1 = self.index_span(start_t, end_t)
        if i1 <= i0:
            raise InputError(f"no samples between {start_t} and {end_t} ms")
        ks = None
        if self.keystrokes is not None:
            ks = tuple(k for k in self.keystrokes if start_t <= k.t <= end_t)
        return GazeTrace(
            self.t[i0:i1], self.yaw[i0:i1], self.pitch[i0:i1], self.ear[i0:i1],
            sample_rate_hz=self.sample_rate_hz,
            labels=None if self.labels is None else self.labels[i0:i1],
            keystrokes=ks, meta=dict(self.meta),
        )

    def with_angles(self, yaw, pitch) -> GazeTrace:
        return GazeTrace(self.t, yaw, pitch, self.ear, sample_rate_hz=self.sample_rate_hz,
                         labels=self.labels, keystrokes=self.keystrokes, meta=dict(self.meta))

    def equals(self, other: GazeTrace) -> bool:
        """Bit-exact comparison of every field except ``meta``."""
        same = (
            self.sample_rate_hz == other.sample_rate_hz
            and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in ("t", "yaw", "pitch", "ear"))
        )
        if not same:
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        if self.labels is not None and not np.array_equal(self.labels, other.labels):
            return False
        return self.keystrokes == other.keystrokes


# ---------------------------------------------------------------------------
# I/O


def _open_text(target, mode):
    if target == "-":
        return (sys.stdin if "r" in mode else sys.stdout), False
    if isinstance(target, (str, os.PathLike)):
        return open(target, mode, encoding="utf-8", newline=""), True
    return target, False


def _float(text, line, what):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"cannot parse {what} {text!r}", line) from None


def load_trace(source, keys=None) -> GazeTrace:
    """Read a trace CSV (path, file object or ``"-"`` for stdin).

    ``keys`` optionally names the keystroke sidecar.
    """
    fh, close = _open_text(source, "r")
    try:
        text = fh.read()
    finally:
        if close:
            fh.close()
    lines = text.splitlines()
    rate = DEFAULT_SAMPLE_RATE_HZ
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        key, _, val = lines[start][1:].strip().partition("=")
        if key.strip() == "sample_rate_hz":
            rate = _float(val.strip(), start + 1, "sample rate")
        start += 1
    if start >= len(lines):
        raise ParseError("missing header", start + 1)
    header = [h.strip() for h in lines[start].split(",")]
    has_label = header == TRACE_HEADER + ["label"]
    if header != TRACE_HEADER and not has_label:
        raise ParseError(f"unexpected header {lines[start]!r}", start + 1)
    rows, labels = [], []
    for ln, row in enumerate(csv.reader(lines[start + 1:]), start=start + 2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", ln)
        vals = [_float(v, ln, h) for v, h in zip(row[:4], TRACE_HEADER)]
        if not (abs(vals[1]) <= YAW_LIMIT_DEG and abs(vals[2]) <= PITCH_LIMIT_DEG and vals[3] > 0):
            raise ParseError("sample outside the valid gaze/EAR range", ln)
        if rows and vals[0] <= rows[-1][0]:
            raise NonMonotonicTimestamps(f"line {ln}: timestamp does not increase")
        rows.append(vals)
        if has_label:
            if row[4].strip() not in ("0", "1"):
                raise ParseError(f"label must be 0 or 1, got {row[4]!r}", ln)
            labels.append(int(row[4]))
    if not rows:
        raise ParseError("trace contains no samples", len(lines))
    arr = np.array(rows)
    ks = load_keystrokes(keys) if keys is not None else None
    return GazeTrace(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], sample_rate_hz=rate,
                     labels=np.array(labels) if has_label else None, keystrokes=ks)


def load_keystrokes(source) -> tuple[Keystroke, ...]:
    fh, close = _open_text(source, "r")
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != KEYS_HEADER:
            raise ParseError("keystroke sidecar needs header t_ms,key", 1)
        out = []
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", ln)
            out.append(Keystroke(_float(row[0], ln, "t_ms"), row[1]))
    finally:
        if close:
            fh.close()
    return tuple(out)


def save_trace(trace: GazeTrace, sink, keys=None) -> None:
    """Write ``trace`` as CSV; floats use ``repr`` so reloading is bit-exact."""
    fh, close = _open_text(sink, "w")
    try:
        fh.write(f"# sample_rate_hz={trace.sample_rate_hz!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        header = TRACE_HEADER + (["label"] if trace.labels is not None else [])
        w.writerow(header)
        cols = [trace.t, trace.yaw, trace.pitch, trace.ear]
        for i in range(len(trace)):
            row = [repr(float(c[i])) for c in cols]
            if trace.labels is not None:
                row.append(str(int(trace.labels[i])))
            w.writerow(row)
    finally:
        if close:
            fh.close()
    if keys is not None:
        save_keystrokes(trace.keystrokes or (), keys)


def save_keystrokes(keystrokes, sink) -> None:
    fh, close = _open_text(sink, "w")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KEYS_HEADER)
        for k in keystrokes:
            w.writerow([repr(float(k.t)), k.key])
    finally:
        if close:
            fh.close()


def dumps_trace(trace: GazeTrace) -> str:
    buf = io.StringIO()
    save_trace(trace, buf)
    return buf.getvalue()
