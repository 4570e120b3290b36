"""Synthetic gaze-typing traces with exact ground truth.

The generator places a virtual keyboard on a plane facing the viewer,
walks the gaze from key to key with minimum-jerk saccades, holds a noisy
fixation on each key and stamps the keystroke at the fixation midpoint.
Distractor activity jumps across a much wider field of view and blinks
more often.  Every random draw comes from one seeded generator, so a seed
reproduces a trace bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, UnmappableCharacter
from .geometry import (PITCH_LIMIT_DEG, YAW_LIMIT_DEG, angles_to_unit_vector, rotation_from_angles,
                       unit_vector_to_angles)
from .keyboard import resolve_layout
from .trace import GazeTrace, Keystroke

CAMERA_YAW_LIMIT = 55.0
CAMERA_PITCH_LIMIT = 60.0
BLINK_PEAK = 3.0
BLINK_MS = 150.0

SPECIAL_CHARS = {" ": "SPACE", "\b": "BACKSPACE", "⌫": "BACKSPACE", "\n": "RETURN"}


@dataclass(frozen=True)
class TypistProfile:
    fixation_ms: tuple[float, float] = (600.0, 1200.0)
    saccade_ms: tuple[float, float] = (50.0, 100.0)
    noise_deg: float = 0.5
    blink_rate_typing: float = 1 / 40
    blink_rate_other: float = 1 / 7
    micro_prob: float = 0.3
    micro_pitch: float = 0.3
    micro_delay_ms: tuple[float, float] = (100.0, 300.0)
    drift: float = 0.02
    drift_floor: float = 0.6
    sentence_index: int = 0

    def __post_init__(self):
        for name in ("fixation_ms", "saccade_ms", "micro_delay_ms"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise InputError(f"{name} must be a positive (low, high) range")
        if self.noise_deg < 0 or self.blink_rate_typing < 0 or self.blink_rate_other < 0:
            raise InputError("noise and blink rates must be non-negative")
        if not 0 <= self.micro_prob <= 1:
            raise InputError("micro_prob must lie in [0, 1]")

    @property
    def effective_noise_deg(self) -> float:
        """Noise after the per-sentence proficiency shrink."""
        return self.noise_deg * max(self.drift_floor, 1.0 - self.drift * self.sentence_index)

    @classmethod
    def noiseless(cls) -> TypistProfile:
        return cls(noise_deg=0.0, micro_prob=0.0)


@dataclass(frozen=True)
class SceneConfig:
    """Keyboard placement in head coordinates and the camera's view of it.

    ``key_pitch_deg`` is the angular key pitch at the keyboard center;
    ``roll_deg`` rotates the keyboard in its own plane.
    """

    keyboard_yaw: float = 0.0
    keyboard_pitch: float = -10.0
    key_pitch_deg: float = 4.0
    roll_deg: float = 0.0
    camera_yaw: float = 0.0
    camera_pitch: float = 0.0
    sample_rate_hz: float = 30.0
    distractor_yaw: float = 100.0
    distractor_pitch: float = 50.0
    dwell_ms: tuple[float, float] = (120.0, 450.0)

    def __post_init__(self):
        if abs(self.camera_yaw) > CAMERA_YAW_LIMIT or abs(self.camera_pitch) > CAMERA_PITCH_LIMIT:
            raise InputError("camera offset outside the supported range")
        if not self.key_pitch_deg > 0 or not self.sample_rate_hz > 0:
            raise InputError("key pitch and sample rate must be positive")

    @property
    def camera(self) -> np.ndarray:
        """Maps head-frame directions to camera-frame directions."""
        return rotation_from_angles(self.camera_yaw, self.camera_pitch).T

    def key_vectors(self, layout, points) -> np.ndarray:
        """Head-frame unit vectors toward layout-space ``points``."""
        lay = resolve_layout(layout)
        p = (np.asarray(points, dtype=float).reshape(-1, 2) - lay.center) * np.tan(np.radians(self.key_pitch_deg))
        local = np.column_stack([np.ones(len(p)), p])
        local /= np.linalg.norm(local, axis=1, keepdims=True)
        return local @ rotation_from_angles(self.keyboard_yaw, self.keyboard_pitch, self.roll_deg).T


@dataclass(frozen=True)
class TypingSpec:
    text: str
    layout: str = "qwerty"
    duration_ms: float | None = None
    press_return: bool = False
    profile: TypistProfile | None = None


@dataclass(frozen=True)
class DistractorSpec:
    duration_ms: float


@dataclass
class _Timeline:
    """Piecewise gaze path in head coordinates, sampled once at the end."""

    t: list = field(default_factory=lambda: [0.0])
    dirs: list = field(default_factory=list)
    moving: list = field(default_factory=list)
    typing: list = field(default_factory=list)
    keys: list = field(default_factory=list)
    blinks: list = field(default_factory=list)
    noise: list = field(default_factory=list)

    @property
    def now(self):
        return self.t[-1]

    @property
    def gaze(self):
        return self.dirs[-1][1]

    def hold(self, dur, d, noise):
        self.dirs.append((d, d))
        self.moving.append(False)
        self.noise.append(noise)
        self.t.append(self.now + dur)

    def jump(self, dur, d, noise):
        self.dirs.append((self.gaze, d))
        self.moving.append(True)
        self.noise.append(noise)
        self.t.append(self.now + dur)


def keystroke_sequence(text, layout="qwerty", press_return=False) -> list[tuple[str, str]]:
    """Expand text into (layout name, key) presses, inserting toggles.

    Uppercase letters get a SHIFT press; characters on the number layer are
    reached through NUM and left through ABC.
    """
    start = resolve_layout(layout)
    if start.name == "pin":
        bad = [c for c in text if c not in start]
        if bad:
            raise UnmappableCharacter(f"character {bad[0]!r} is not on the PIN pad")
        return [("pin", c) for c in text]
    qwerty, numbers = resolve_layout("qwerty"), resolve_layout("numberspace")
    current = start
    out = []
    for c in text + ("\n" if press_return else ""):
        name = SPECIAL_CHARS.get(c, c)
        if name in current:
            out.append((current.name, name))
            continue
        if c.isalpha() and c.isascii() and c.lower() in qwerty:
            if current.name != "qwerty":
                out.append((current.name, "ABC"))
                current = qwerty
            if c.isupper():
                out.append(("qwerty", "SHIFT"))
            out.append(("qwerty", c.lower()))
            continue
        other = numbers if current.name == "qwerty" else qwerty
        if name in other:
            out.append((current.name, "NUM" if other is numbers else "ABC"))
            current = other
            out.append((current.name, name))
            continue
        raise UnmappableCharacter(f"character {c!r} is not on any keyboard layer")
    return out


def _min_jerk(s):
    return s ** 3 * (10 - 15 * s + 6 * s * s)


def _tangent_noise(u, sigma_rad, rng):
    """Isotropic angular jitter of each direction in its own tangent plane."""
    ref = np.where(np.abs(u[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    e1 = np.cross(u, ref)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(u, e1)
    n = rng.normal(0.0, 1.0, (len(u), 2)) * sigma_rad[:, None]
    v = u + n[:, :1] * e1 + n[:, 1:] * e2
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _typing(tl: _Timeline, spec: TypingSpec, profile: TypistProfile, scene: SceneConfig, rng):
    presses = keystroke_sequence(spec.text, spec.layout, spec.press_return)
    if not presses:
        return
    noise = np.radians(profile.effective_noise_deg)
    # Repeated presses of one key share a single fixation.
    groups = []
    for lay, key in presses:
        if groups and groups[-1][1] == key and groups[-1][0] == lay:
            groups[-1][2] += 1
        else:
            groups.append([lay, key, 1])
    sacc = rng.uniform(*profile.saccade_ms, len(groups))
    fix = np.array([rng.uniform(*profile.fixation_ms) * n for _, _, n in groups])
    if spec.duration_ms is not None:
        room = spec.duration_ms - sacc.sum()
        if room <= 0:
            raise InputError("typing duration too short for the keystrokes")
        fix *= room / fix.sum()
    start = tl.now
    for (lay_name, key, n), s_ms, f_ms in zip(groups, sacc, fix):
        lay = resolve_layout(lay_name)
        k = lay.key(key)
        aim = np.array([k.y, k.z])
        if k.w > k.h:
            aim[0] += rng.uniform(-1, 1) * (k.w - k.h) / 2
        target = scene.key_vectors(lay, aim)[0]
        landing = target
        micro = rng.random() < profile.micro_prob
        if micro:
            ang = rng.uniform(0, 2 * np.pi)
            off = aim + profile.micro_pitch * np.array([np.cos(ang), np.sin(ang)])
            landing = scene.key_vectors(lay, off)[0]
        tl.jump(s_ms, landing, noise)
        t_land = tl.now
        if micro:
            delay = min(rng.uniform(*profile.micro_delay_ms), f_ms / 3)
            corr = min(40.0, f_ms / 6)
            tl.hold(delay, landing, noise)
            tl.jump(corr, target, noise)
            tl.hold(f_ms - delay - corr, target, noise)
        else:
            tl.hold(f_ms, target, noise)
        for j in range(n):
            tl.keys.append(Keystroke(t_land + f_ms * (j + 1) / (n + 1), key))
    tl.typing.append((start, tl.now))
    tl.blinks.append((start, tl.now, profile.blink_rate_typing))


def _distractor(tl: _Timeline, spec: DistractorSpec, profile: TypistProfile, scene: SceneConfig, rng):
    if not spec.duration_ms > 0:
        raise InputError("distractor duration must be positive")
    start = tl.now
    end = start + spec.duration_ms
    noise = np.radians(profile.noise_deg)
    cam = scene.camera
    while tl.now < end - 1e-9:
        s_ms = rng.uniform(*profile.saccade_ms)
        if end - tl.now < s_ms + profile.saccade_ms[0]:
            # no room for a full saccade: keep looking where we are
            tl.hold(end - tl.now, tl.gaze, noise)
            break
        # pick targets that stay inside the ingest range once seen by the camera
        for _ in range(100):
            yaw = rng.uniform(-scene.distractor_yaw, scene.distractor_yaw)
            pitch = rng.uniform(-scene.distractor_pitch, scene.distractor_pitch)
            d = rotation_from_angles(yaw, pitch) @ np.array([1.0, 0.0, 0.0])
            cy, cp = unit_vector_to_angles(cam @ d)
            if abs(cy) < YAW_LIMIT_DEG - 5 and abs(cp) < PITCH_LIMIT_DEG - 5:
                break
        tl.jump(s_ms, d, noise)
        tl.hold(min(rng.uniform(*scene.dwell_ms), end - tl.now), d, noise)
    tl.blinks.append((start, tl.now, profile.blink_rate_other))


def _render(tl: _Timeline, scene: SceneConfig, rng, meta) -> GazeTrace:
    period = 1000.0 / scene.sample_rate_hz
    n = int(np.floor(tl.now / period + 1e-9)) + 1
    t = np.arange(n) * period
    bounds = np.asarray(tl.t)
    piece = np.clip(np.searchsorted(bounds, t, side="right") - 1, 0, len(tl.dirs) - 1)
    # interpolate in camera-frame angles so wide jumps sweep, not cut through
    cam = scene.camera
    ya, pa = unit_vector_to_angles(np.array([d[0] for d in tl.dirs]) @ cam.T)
    yb, pb = unit_vector_to_angles(np.array([d[1] for d in tl.dirs]) @ cam.T)
    span = np.maximum(bounds[piece + 1] - bounds[piece], 1e-12)
    s = np.clip((t - bounds[piece]) / span, 0.0, 1.0)
    w = np.where(np.asarray(tl.moving)[piece], _min_jerk(s), 1.0)
    yaw = ya[piece] + w * (yb[piece] - ya[piece])
    pitch = pa[piece] + w * (pb[piece] - pa[piece])
    u = _tangent_noise(angles_to_unit_vector(yaw, pitch), np.asarray(tl.noise)[piece], rng)
    yaw, pitch = unit_vector_to_angles(u)
    if np.any(np.abs(yaw) > YAW_LIMIT_DEG) or np.any(np.abs(pitch) > PITCH_LIMIT_DEG):
        raise InputError("scene puts gaze outside the valid yaw/pitch range")

    ear = 1.0 + rng.normal(0.0, 0.02, n)
    width = BLINK_MS / 4
    for t0, t1, rate in tl.blinks:
        if rate <= 0:
            continue
        k = rng.poisson(rate * (t1 - t0) / 1000.0)
        for tb in np.sort(rng.uniform(t0, t1, k)):
            ear += (BLINK_PEAK - 1.0) * np.exp(-0.5 * ((t - tb) / width) ** 2)
    ear = np.maximum(ear, 0.05)

    labels = np.zeros(n, dtype=np.int8)
    for t0, t1 in tl.typing:
        labels[(t >= t0) & (t < t1)] = 1
    meta = dict(meta)
    meta["typing_spans"] = [(float(a0), float(a1)) for a0, a1 in tl.typing]
    return GazeTrace(t, yaw, pitch, ear, sample_rate_hz=scene.sample_rate_hz, labels=labels,
                     keystrokes=tuple(tl.keys), meta=meta)


def compose_scenario(segments, seed=0, *, profile: TypistProfile | None = None,
                     scene: SceneConfig | None = None, start_gaze=None) -> GazeTrace:
    """Concatenate typing and distractor segments into one labeled trace.

    Each segment starts from wherever the previous one left the gaze.
    """
    segments = list(segments)
    if not segments:
        raise InputError("need at least one segment")
    profile = profile or TypistProfile()
    scene = scene or SceneConfig()
    rng = np.random.default_rng(seed)
    tl = _Timeline()
    if start_gaze is None:
        start_gaze = rotation_from_angles(scene.keyboard_yaw, scene.keyboard_pitch) @ np.array([1.0, 0.0, 0.0])
    tl.dirs.append((np.asarray(start_gaze, float), np.asarray(start_gaze, float)))
    tl.moving.append(False)
    tl.noise.append(np.radians(profile.noise_deg))
    # a zero-length seed piece so the first jump has a source
    tl.t.append(0.0)
    texts = []
    for spec in segments:
        if isinstance(spec, TypingSpec):
            _typing(tl, spec, spec.profile or profile, scene, rng)
            texts.append(spec.text)
        elif isinstance(spec, DistractorSpec):
            _distractor(tl, spec, profile, scene, rng)
        else:
            raise InputError(f"unknown segment spec {spec!r}")
    # drop the seed piece
    tl.t = tl.t[1:]
    tl.dirs, tl.moving, tl.noise = tl.dirs[1:], tl.moving[1:], tl.noise[1:]
    if not tl.dirs:
        raise InputError("scenario produced no gaze")
    meta = {"seed": seed, "texts": texts}
    return _render(tl, scene, rng, meta)


def generate_typing_trace(text, layout="qwerty", profile=None, scene=None, seed=0, *,
                          press_return=False, duration_ms=None) -> GazeTrace:
    """Labeled gaze trace of typing ``text`` on ``layout``."""
    spec = TypingSpec(text, resolve_layout(layout).name, duration_ms, press_return)
    return compose_scenario([spec], seed, profile=profile, scene=scene)


def generate_distractor_trace(duration_ms, profile=None, seed=0, scene=None) -> GazeTrace:
    """Non-typing activity: wide random gaze jumps, frequent blinks, labels all 0."""
    return compose_scenario([DistractorSpec(duration_ms)], seed, profile=profile, scene=scene)


DEMO_TEXT = "the quick brown fox jumps over dogs"


def demo_attack_twin(seed=0, profile=None, scene=None, text=DEMO_TEXT) -> GazeTrace:
    """Browsing, then 35 keystrokes from 66.8 s to 114.1 s, then closing apps."""
    segs = [DistractorSpec(66_800.0), TypingSpec(text, duration_ms=47_300.0), DistractorSpec(6_000.0)]
    return compose_scenario(segs, seed, profile=profile, scene=scene)


def mixed_trace(texts, seed=0, *, layout="qwerty", profile=None, scene=None,
                gap_ms=(4000.0, 12000.0)) -> GazeTrace:
    """Distractor / typing alternation used to train the session classifier."""
    rng = np.random.default_rng(seed)
    segs = [DistractorSpec(float(rng.uniform(*gap_ms)))]
    for text in texts:
        segs.append(TypingSpec(text, layout))
        segs.append(DistractorSpec(float(rng.uniform(*gap_ms))))
    return compose_scenario(segs, int(rng.integers(2**31)), profile=profile, scene=scene)


# Sentences without doubled letters; a doubled letter is one physical
# fixation and cannot be segmented into two keystrokes.
CORPUS = (
    "the quick brown fox jumps over the lazy dog",
    "pack my box with five dozen red cups",
    "we pay six guys to walk home",
    "she wore a blue jacket in the park",
    "my cat likes warm milk at night",
    "please text me after your lecture",
    "the train was late again today",
    "we can order lunch for the team",
    "his old van broke down near the bridge",
    "she plays piano every friday",
    "an extra quiz is due on monday",
    "do not forget to lock the garage",
    "i think we might win this game",
    "the kids are making paper planes",
    "my brother lives in a quiet town",
    "this box of fruit is very heavy",
    "we watched a movie on the sofa",
    "send me the map before lunch",
    "quick cows jump over old gates",
    "the hotel has a big gym and spa",
)


def random_pin(rng, n=6) -> str:
    return "".join(str(d) for d in rng.integers(0, 10, n))


def session_dataset(n_traces, seed=0, *, profile=None, vary_scene=True) -> list[GazeTrace]:
    """Mixed distractor/typing traces for training and scoring the session model.

    Each trace holds one typing span drawn from the corpus, a short
    number-layer string or a PIN, between two distractor stretches.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_traces):
        kind = i % 5
        if kind == 3:
            spec = TypingSpec("".join(rng.choice(list("0123456789-/:;()$&@"), 8)), "numberspace")
        elif kind == 4:
            spec = TypingSpec(random_pin(rng), "pin")
        else:
            spec = TypingSpec(CORPUS[int(rng.integers(len(CORPUS)))])
        scene = SceneConfig()
        if vary_scene:
            scene = SceneConfig(keyboard_yaw=float(rng.uniform(-10, 10)),
                                keyboard_pitch=float(rng.uniform(-20, 0)),
                                roll_deg=float(rng.uniform(-10, 10)))
        segs = [DistractorSpec(float(rng.uniform(4000, 12000))), spec,
                DistractorSpec(float(rng.uniform(4000, 12000)))]
        out.append(compose_scenario(segs, int(rng.integers(2**31)), profile=profile, scene=scene))
    return out
