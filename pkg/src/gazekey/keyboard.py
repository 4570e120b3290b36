"""Virtual keyboard layouts and keyboard localization from typing gaze.

Layout coordinates are in key pitches: QWERTY "q" sits at (0, 0), "p" at
(9, 0) and rows step down by one pitch in z.  Localization runs in four
steps: mean-gaze plane normal, projection onto that plane, PCA orientation,
and a boundary fit that pins the extreme fixation clusters to the layout's
extreme key centers.  An optional alignment refinement snaps fixation
centroids onto key centers afterwards.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import DegenerateGaze, InputError, InsufficientSpread, ParseError, RankDeficient
from .geometry import plane_to_unit_vector, project_to_plane, rotation_from_angles, unit_vector_to_angles

LAYOUT_HEADER = ["key", "center_y", "center_z", "w", "h"]
BUILTIN_LAYOUTS = ("qwerty", "numberspace", "pin")

# Flips of the PCA axes tried during localization (sign of first, second axis).
FLIPS = ((1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0))


@dataclass(frozen=True)
class Key:
    name: str
    y: float
    z: float
    w: float = 0.9
    h: float = 0.9


@dataclass(frozen=True, eq=False)
class KeyboardLayout:
    name: str
    keys: tuple[Key, ...]

    def __post_init__(self):
        if not self.keys:
            raise InputError(f"layout {self.name!r} has no keys")
        names = [k.name for k in self.keys]
        if len(set(names)) != len(names):
            raise InputError(f"layout {self.name!r} repeats a key name")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})
        hit = first_overlap(self.keys)
        if hit is not None:
            raise InputError(f"layout {self.name!r}: keys {hit[0]!r} and {hit[1]!r} overlap")

    def __len__(self):
        return len(self.keys)

    def __contains__(self, name):
        return name in self._index

    def index(self, name) -> int:
        return self._index[name]

    def key(self, name) -> Key:
        return self.keys[self._index[name]]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(k.name for k in self.keys)

    @functools.cached_property
    def centers(self) -> np.ndarray:
        return np.array([(k.y, k.z) for k in self.keys])

    @functools.cached_property
    def sizes(self) -> np.ndarray:
        return np.array([(k.w, k.h) for k in self.keys])

    @functools.cached_property
    def extent(self) -> tuple[float, float, float, float]:
        """(min_y, max_y, min_z, max_z) over key centers; the boundary anchors."""
        c = self.centers
        return float(c[:, 0].min()), float(c[:, 0].max()), float(c[:, 1].min()), float(c[:, 1].max())

    @property
    def center(self) -> np.ndarray:
        y0, y1, z0, z1 = self.extent
        return np.array([(y0 + y1) / 2, (z0 + z1) / 2])

    def key_at(self, point):
        """Name of the key whose rectangle contains ``point``, else None."""
        d = np.abs(self.centers - np.asarray(point, dtype=float)) <= self.sizes / 2
        hit = np.flatnonzero(d.all(axis=1))
        return self.keys[hit[0]].name if len(hit) else None

    @functools.cached_property
    def _segments(self):
        # Wide keys are aimed at anywhere along their long axis; collapse each
        # key to the segment of centers a square key would allow.
        half = np.maximum(self.sizes - self.sizes.min(axis=1, keepdims=True), 0.0) / 2
        return self.centers - half, self.centers + half

    def snap(self, points):
        """Nearest aim point on any key, its key index, and squared distance."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        lo, hi = self._segments
        proj = np.clip(p[:, None, :], lo[None], hi[None])
        d2 = ((p[:, None, :] - proj) ** 2).sum(-1)
        j = d2.argmin(axis=1)
        return proj[np.arange(len(p)), j], j, d2[np.arange(len(p)), j]

    @functools.cached_property
    def _distance_map(self):
        y0, y1, z0, z1 = self.extent
        step = 0.05
        gy = np.arange(y0 - 4.0, y1 + 4.0 + step, step)
        gz = np.arange(z0 - 4.0, z1 + 4.0 + step, step)
        yy, zz = np.meshgrid(gy, gz, indexing="ij")
        _, _, d2 = self.snap(np.stack([yy.ravel(), zz.ravel()], axis=1))
        return gy[0], gz[0], step, d2.reshape(yy.shape)

    def aim_distance2(self, points, cap=1.0):
        """Squared distance to the nearest aim point, looked up on a grid, capped."""
        oy, oz, step, dmap = self._distance_map
        p = np.asarray(points, dtype=float)
        iy = np.clip(np.rint((p[..., 0] - oy) / step).astype(int), 0, dmap.shape[0] - 1)
        iz = np.clip(np.rint((p[..., 1] - oz) / step).astype(int), 0, dmap.shape[1] - 1)
        return np.minimum(dmap[iy, iz], cap)


def first_overlap(keys):
    """First pair of keys whose rectangles share interior area, or None."""
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            if abs(a.y - b.y) < (a.w + b.w) / 2 and abs(a.z - b.z) < (a.h + b.h) / 2:
                return a.name, b.name
    return None


def load_layout(source, name=None) -> KeyboardLayout:
    """Read a layout table (CSV ``key,center_y,center_z,w,h``)."""
    close = False
    if isinstance(source, str) or hasattr(source, "__fspath__"):
        fh = open(source, encoding="utf-8", newline="")
        close = True
        name = name or str(source).rsplit("/", 1)[-1].removesuffix(".csv").removeprefix("layout_")
    else:
        fh = source
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != LAYOUT_HEADER:
            raise ParseError("layout needs header key,center_y,center_z,w,h", 1)
        keys = []
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 fields, got {len(row)}", ln)
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError:
                raise ParseError("non-numeric key geometry", ln) from None
            if vals[2] <= 0 or vals[3] <= 0:
                raise ParseError("key width and height must be positive", ln)
            keys.append(Key(row[0], *vals))
    finally:
        if close:
            fh.close()
    return KeyboardLayout(name or "custom", tuple(keys))


def save_layout(layout: KeyboardLayout, sink) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(LAYOUT_HEADER)
    for k in layout.keys:
        w.writerow([k.name, repr(k.y), repr(k.z), repr(k.w), repr(k.h)])


@functools.lru_cache(maxsize=None)
def get_layout(name) -> KeyboardLayout:
    if name not in BUILTIN_LAYOUTS:
        raise InputError(f"unknown layout {name!r}; choose from {', '.join(BUILTIN_LAYOUTS)}")
    path = resources.files("gazekey") / "data" / f"layout_{name}.csv"
    with path.open(encoding="utf-8", newline="") as fh:
        return load_layout(fh, name)


def builtin_layouts() -> list[KeyboardLayout]:
    return [get_layout(n) for n in BUILTIN_LAYOUTS]


def resolve_layout(layout) -> KeyboardLayout:
    if isinstance(layout, KeyboardLayout):
        return layout
    if layout in BUILTIN_LAYOUTS:
        return get_layout(layout)
    return load_layout(layout)


# ---------------------------------------------------------------------------
# Plane and orientation


def rotation_to_x(normal) -> np.ndarray:
    """Yaw-then-pitch rotation taking ``normal`` onto +x without adding roll."""
    yaw, pitch = unit_vector_to_angles(np.asarray(normal, dtype=float))
    return rotation_from_angles(float(yaw), float(pitch)).T


def estimate_plane(vectors):
    """Keyboard plane normal (mean gaze direction) and the rotation to +x."""
    u = np.asarray(vectors, dtype=float).reshape(-1, 3)
    if len(u) == 0:
        raise DegenerateGaze("no gaze samples")
    m = u.mean(axis=0)
    norm = np.linalg.norm(m)
    if norm < 1e-6:
        raise DegenerateGaze("mean gaze direction vanishes")
    normal = m / norm
    return normal, rotation_to_x(normal)


def project_gaze(vectors, rotation, p_x=1.0) -> np.ndarray:
    """Rotate gaze so the plane normal is +x, then intersect with x = p_x."""
    u = np.asarray(vectors, dtype=float) @ np.asarray(rotation).T
    return project_to_plane(u, p_x)


def covariance(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    d = p - p.mean(axis=0)
    return d.T @ d / (len(p) - 1)


def eig2_symmetric(c):
    """Closed-form eigen-decomposition of a symmetric 2x2 matrix.

    Returns (eigenvalues descending, V) with eigenvectors as columns, the
    first column having a non-negative y component and det(V) = +1.
    """
    a, b, d = float(c[0][0]), float(c[0][1]), float(c[1][1])
    mid = (a + d) / 2
    rad = np.hypot((a - d) / 2, b)
    theta = 0.5 * np.arctan2(2 * b, a - d)
    ct, st = np.cos(theta), np.sin(theta)
    return np.array([mid + rad, mid - rad]), np.array([[ct, -st], [st, ct]])


def pca_orientation(points) -> np.ndarray:
    """Principal axes of plane points; column 0 is the keyboard's horizontal."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(p) < 3:
        raise RankDeficient("need at least three points")
    lam, v = eig2_symmetric(covariance(p))
    if lam[0] <= 0 or lam[1] <= 1e-12 * lam[0]:
        raise RankDeficient("points are collinear")
    return v


# ---------------------------------------------------------------------------
# Frame


@dataclass(frozen=True, eq=False)
class KeyboardFrame:
    """Estimated keyboard coordinate system.

    ``transform`` is the 2x3 affine map from projected plane points to layout
    coordinates; everything else is kept for inspection and export.
    """

    layout: KeyboardLayout
    normal: np.ndarray
    rotation: np.ndarray
    axes: np.ndarray
    boundary: np.ndarray
    scale: float
    transform: np.ndarray
    p_x: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.axes)
        if not np.allclose(v.T @ v, np.eye(2), atol=1e-9):
            raise ValueError("PCA axes must be orthonormal")
        b = np.asarray(self.boundary)
        if not (b[1] > b[0] and b[3] > b[2]):
            raise ValueError("boundary must have positive area")
        if abs(np.linalg.det(np.asarray(self.transform)[:, :2])) < 1e-15:
            raise ValueError("frame transform is singular")

    def to_layout(self, plane_points) -> np.ndarray:
        t = np.asarray(self.transform)
        return np.asarray(plane_points, dtype=float) @ t[:, :2].T + t[:, 2]

    def to_plane(self, layout_points) -> np.ndarray:
        t = np.asarray(self.transform)
        return (np.asarray(layout_points, dtype=float) - t[:, 2]) @ np.linalg.inv(t[:, :2]).T

    def gaze_to_layout(self, vectors) -> np.ndarray:
        return self.to_layout(project_gaze(vectors, self.rotation, self.p_x))

    def key_direction(self, name) -> np.ndarray:
        """Unit gaze vector (camera coordinates) aimed at a key's center."""
        k = self.layout.key(name)
        p = self.to_plane([k.y, k.z])
        return plane_to_unit_vector(p, self.p_x) @ np.asarray(self.rotation)

    def horizontal_axis_deg(self) -> float:
        """In-plane angle of the layout's +y axis, in degrees."""
        inv = np.linalg.inv(np.asarray(self.transform)[:, :2])
        d = inv[:, 0]
        return float(np.degrees(np.arctan2(d[1], d[0])))

    def to_dict(self) -> dict:
        return {
            "layout": self.layout.name,
            "normal": [float(x) for x in self.normal],
            "rotation": np.asarray(self.rotation).tolist(),
            "axes": np.asarray(self.axes).tolist(),
            "boundary": [float(x) for x in self.boundary],
            "scale": float(self.scale),
            "transform": np.asarray(self.transform).tolist(),
            "p_x": float(self.p_x),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d, layout=None) -> KeyboardFrame:
        return cls(layout=resolve_layout(layout or d["layout"]), normal=np.array(d["normal"]),
                   rotation=np.array(d["rotation"]), axes=np.array(d["axes"]),
                   boundary=np.array(d["boundary"]), scale=d["scale"],
                   transform=np.array(d["transform"]), p_x=d.get("p_x", 1.0),
                   diagnostics=d.get("diagnostics", {}))


def estimate_boundary(points, layout, *, lo=2.5, hi=97.5, min_pitch=np.tan(np.radians(1.0)),
                      normal=None, rotation=None, axes=None, p_x=1.0) -> KeyboardFrame:
    """Fit the keyboard rectangle to PCA-space gaze points.

    Robust percentiles of the horizontal spread are pinned to the layout's
    extreme key centers, which fixes one isotropic scale; the vertical
    percentiles center the rows.  ``points`` are in the
    coordinates produced by ``axes`` (identity if omitted).
    """
    layout = resolve_layout(layout)
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(p) < 4:
        raise InsufficientSpread("need at least four points")
    y0, y1 = np.percentile(p[:, 0], [lo, hi])
    z0, z1 = np.percentile(p[:, 1], [lo, hi])
    if y1 - y0 < 2 * min_pitch * p_x or z1 - z0 < 2 * min_pitch * p_x:
        raise InsufficientSpread("gaze points span less than two key pitches")
    ly0, ly1, lz0, lz1 = layout.extent
    sy = (y1 - y0) / (ly1 - ly0)
    v = np.eye(2) if axes is None else np.asarray(axes, dtype=float)
    # keys are square, so the horizontal span fixes one isotropic scale;
    # the vertical extent only centers the rows
    lin = v.T / sy
    off = np.array([ly0 - y0 / sy, (lz0 + lz1) / 2 - (z0 + z1) / 2 / sy])
    return KeyboardFrame(
        layout=layout,
        normal=np.array([1.0, 0.0, 0.0]) if normal is None else np.asarray(normal, dtype=float),
        rotation=np.eye(3) if rotation is None else np.asarray(rotation, dtype=float),
        axes=v, boundary=np.array([y0, y1, z0, z1]), scale=float(sy),
        transform=np.column_stack([lin, off]), p_x=p_x,
    )


# ---------------------------------------------------------------------------
# Alignment refinement


def similarity_fit(src, dst):
    """Least-squares rotation + uniform scale + translation taking src to dst."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    ms, md = src.mean(0), dst.mean(0)
    a, b = src - ms, dst - md
    var = (a ** 2).sum()
    if var <= 0:
        return np.eye(2), md - ms
    u, s, vt = np.linalg.svd(b.T @ a)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    dm = np.diag([1.0, d])
    r = u @ dm @ vt
    c = (s * np.diag(dm)).sum() / var
    m = c * r
    return m, md - m @ ms


def _grid_candidates(layout, pts, n_best=6, angles=(-12.0, -6.0, 0.0, 6.0, 12.0)):
    """Coarse rotation/scale/translation search over aim-point distance.

    Returns the best few ``(cost, matrix, offset)`` starting points, each
    mapping ``pts`` as ``pts @ matrix.T + offset``.
    """
    center = layout.center
    scales = np.linspace(0.75, 1.35, 16)
    shifts = np.arange(-1.5, 1.5001, 0.2)
    dy, dz = np.meshgrid(shifts, shifts, indexing="ij")
    d = np.stack([dy.ravel(), dz.ravel()], axis=1)
    out = []
    for ang in angles:
        c, s = np.cos(np.radians(ang)), np.sin(np.radians(ang))
        rel = (pts - center) @ np.array([[c, -s], [s, c]]).T
        q = center + scales[:, None, None, None] * rel[None, None] + d[None, :, None, :]
        cost = layout.aim_distance2(q).mean(axis=2)
        for si, a in enumerate(scales):
            for i in np.argsort(cost[si], kind="stable")[: n_best * 2]:
                out.append((float(cost[si, i]), ang, float(a), d[i]))
    out.sort(key=lambda r: (r[0], abs(r[1]), abs(r[2] - 1.0), float(np.abs(r[3]).sum())))
    picked = []
    for cost, ang, a, dd in out:
        if all(abs(ang - g) > 1 or abs(a - b) > 0.06 or np.abs(dd - e).max() > 0.45
               for _, g, b, e in picked):
            picked.append((cost, ang, a, dd))
        if len(picked) == n_best:
            break
    res = []
    for cost, ang, a, dd in picked:
        c, s = np.cos(np.radians(ang)), np.sin(np.radians(ang))
        m = a * np.array([[c, -s], [s, c]])
        res.append((cost, m, center - m @ center + dd))
    return res


def refine_alignment(layout, pts, lin=None, off=None, iters=50, trim=0.6):
    """Iterative nearest-key similarity fit (ICP) of layout-space centroids.

    Returns (matrix, offset, mean squared residual) of the correction that
    maps ``pts`` closer onto the layout's aim points.
    """
    m = np.eye(2) if lin is None else np.asarray(lin, dtype=float)
    t = np.zeros(2) if off is None else np.asarray(off, dtype=float)
    prev = None
    for it in range(iters):
        cur = pts @ m.T + t
        target, idx, d2 = layout.snap(cur)
        keep = d2 <= trim ** 2 if it else np.ones(len(cur), bool)
        if keep.sum() < 3:
            keep = np.ones(len(cur), bool)
        if prev is not None and np.array_equal(idx, prev):
            break
        prev = idx
        m, t = similarity_fit(pts[keep], target[keep])
    cur = pts @ m.T + t
    _, _, d2 = layout.snap(cur)
    return m, t, float(np.minimum(d2, 1.0).mean())


def event_centroids(event_vectors, rotation, p_x=1.0):
    return np.array([project_gaze(v, rotation, p_x).mean(axis=0) for v in event_vectors])


def locate_keyboard(event_vectors, layout, *, refine=True, scorer=None, p_x=1.0,
                    fixed_scale=None, upright=False, renormalize=2, sigma=0.25,
                    min_pitch=np.tan(np.radians(1.0)), return_candidates=False):
    """Estimate the keyboard frame from per-keystroke gaze vectors.

    ``event_vectors`` is a list of (n_i, 3) unit-vector arrays, one per
    fixation.  Every PCA sign flip is tried; the surviving frame maximizes
    ``scorer(frame)`` (default: summed top-1 posterior over fixations).
    ``upright=True`` with ``fixed_scale`` (plane units per pitch) skips PCA
    and boundary fitting, as for a PIN pad of known size.  With
    ``return_candidates=True`` every distinct final alignment is returned, best
    first, so a caller can break near-ties with outside knowledge.
    """
    from .decode import frame_posteriors

    layout = resolve_layout(layout)
    event_vectors = [np.asarray(v, dtype=float).reshape(-1, 3) for v in event_vectors if len(v)]
    if not event_vectors:
        raise DegenerateGaze("no fixation frames")
    if scorer is None:
        # a few evenly spaced frames per fixation are enough to rank frames
        thin = [u[np.linspace(0, len(u) - 1, min(len(u), 8)).round().astype(int)] for u in event_vectors]

        def scorer(fr):
            return float(frame_posteriors(fr, thin, sigma).max(axis=1).sum())

    all_u = np.concatenate(event_vectors)
    normal, rot = estimate_plane(all_u)
    best = None
    ranked = []
    for rnd in range(renormalize + 1):
        pts = project_gaze(all_u, rot, p_x)
        cents = event_centroids(event_vectors, rot, p_x)
        inits = []
        if upright:
            scale = fixed_scale
            if scale is None:
                raise InputError("upright localization needs a fixed scale")
            v = np.eye(2)
            mid = cents.mean(axis=0)
            lin = np.eye(2) / scale
            off = layout.center - lin @ mid
            # plane +y maps to layout +y; plane +z to layout +z
            span = np.array([mid[0] - scale, mid[0] + scale, mid[1] - scale, mid[1] + scale])
            inits.append(KeyboardFrame(layout, normal, rot, v, span, float(scale),
                                            np.column_stack([lin, off]), p_x))
        else:
            v = pca_orientation(pts)
            for fy, fz in FLIPS:
                vf = v * np.array([fy, fz])
                base = estimate_boundary(pts @ vf, layout, normal=normal, rotation=rot, axes=vf,
                                         p_x=p_x, min_pitch=min_pitch)
                inits.append(base)
        frames = []
        for cand in inits:
            if not refine:
                frames.append((cand, None))
                continue
            lay_pts = cand.to_layout(cents)
            grid = _grid_candidates(layout, lay_pts) if not upright else [(0.0, np.eye(2), np.zeros(2))]
            for _, lin0, off0 in grid:
                m, t, res = refine_alignment(layout, lay_pts, lin0, off0)
                tr = np.asarray(cand.transform)
                new = np.column_stack([m @ tr[:, :2], m @ tr[:, 2] + t])
                fr = KeyboardFrame(layout, normal, rot, cand.axes, cand.boundary,
                                   float(1.0 / np.sqrt(abs(np.linalg.det(new[:, :2])))), new, p_x)
                frames.append((fr, res))
        scored = []
        for fr, res in frames:
            scored.append((scorer(fr), -(res or 0.0), fr))
        scored.sort(key=lambda s: (s[0], s[1]), reverse=True)
        for score, res, fr in scored:
            mapped = fr.to_layout(cents)
            if any(np.abs(mapped - m).max() < 0.2 for _, m in ranked):
                continue
            ranked.append((KeyboardFrame(fr.layout, fr.normal, fr.rotation, fr.axes, fr.boundary, fr.scale,
                                         fr.transform, p_x, {"score": score, "residual": -res,
                                                             "hypotheses": len(scored), "round": rnd}),
                           mapped))
        ranked.sort(key=lambda r: (r[0].diagnostics["score"], -r[0].diagnostics["residual"]), reverse=True)
        best = ranked[0][0]
        if rnd == renormalize:
            break
        # Re-aim the plane normal at the fitted keyboard center and refit.
        c_plane = best.to_plane(layout.center)
        new_normal = plane_to_unit_vector(c_plane, p_x) @ rot
        if np.degrees(np.arccos(np.clip(new_normal @ normal, -1, 1))) < 1e-3:
            break
        normal, rot = new_normal, rotation_to_x(new_normal)
    if return_candidates:
        return [fr for fr, _ in ranked]
    return best
