"""Unit-cell geometry of the meta-atom.

A shape is up to four first-quadrant vertices plus three presence logits.
The unit cell is the square [-0.5, 0.5]^2 (area 1), so first-quadrant
coordinates live in [0, 0.5].  The full polygon is the quadrant arc followed
by its 90, 180 and 270 degree rotations, which makes it exactly C4 symmetric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

N_VERTS = 4
HALF_CELL = 0.5
RADIUS_RANGE = (0.05, 0.48)
SATURATION = 20.0

# (x, y) row vector times ROT90 = (-y, x)
ROT90 = np.array([[0.0, 1.0], [-1.0, 0.0]])


class GeometryError(ValueError):
    pass


class DegenerateShapeError(GeometryError):
    pass


def presence_chain(logits):
    """Presence probabilities (1, s1, s1*s2, s1*s2*s3) with s = sigmoid(logit).

    Accepts a numpy array (returns numpy) or a Tensor (returns a Tensor in the
    graph).  Leading batch axes are allowed.
    """
    if isinstance(logits, ad.Tensor):
        s = ad.sigmoid(logits)
        probs = [ad.Tensor(np.ones(logits.shape[:-1] + (1,)))]
        for i in range(3):
            probs.append(ad.mul(probs[-1], s[..., i:i + 1]))
        return ad.concat(probs, axis=-1)
    s = ad._sigmoid(np.atleast_1d(np.asarray(logits, dtype=float)))
    ones = np.ones(s.shape[:-1] + (1,))
    return np.concatenate([ones, np.cumprod(s, axis=-1)], axis=-1)


@dataclass
class ShapeParams:
    """Trainable geometry: ``logits`` (3,) and ``vertices`` (4, 2)."""

    logits: np.ndarray
    vertices: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float).reshape(3)
        self.vertices = np.clip(np.asarray(self.vertices, dtype=float).reshape(N_VERTS, 2),
                                0.0, HALF_CELL)

    @property
    def presence(self) -> np.ndarray:
        return presence_chain(self.logits)

    @property
    def active(self) -> np.ndarray:
        return self.presence >= 0.5

    def q1_vertices(self) -> np.ndarray:
        """Active vertices in canonical order (polar angle, then radius)."""
        v = self.vertices[self.active]
        return canonical_order(v)

    def tokens(self) -> np.ndarray:
        """Hard (4, 3) surrogate input: presence indicator, x, y; absent
        vertices zero-filled."""
        act = self.active
        tok = np.zeros((N_VERTS, 3))
        tok[:, 0] = act
        tok[act, 1:] = self.vertices[act]
        return tok

    def polygon(self) -> "PolygonMask":
        return mirror_c4(self.q1_vertices())

    def to_dict(self) -> dict:
        return {
            "logits": [float(x) for x in self.logits],
            "vertices": [[float(x), float(y)] for x, y in self.vertices],
            "active": [bool(a) for a in self.active],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeParams":
        return cls(np.array(d["logits"]), np.array(d["vertices"]))

    @classmethod
    def from_json(cls, s: str) -> "ShapeParams":
        return cls.from_dict(json.loads(s))

    def copy(self) -> "ShapeParams":
        return ShapeParams(self.logits.copy(), self.vertices.copy())


def canonical_order(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    ang = np.arctan2(v[:, 1], v[:, 0])
    rad = np.hypot(v[:, 0], v[:, 1])
    return v[np.lexsort((rad, ang))]


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


@dataclass
class PolygonMask:
    """Closed counter-clockwise polygon in cell coordinates."""

    vertices: np.ndarray
    raster: np.ndarray | None = field(default=None, repr=False)

    def rasterize(self, resolution: int = 64) -> np.ndarray:
        self.raster = rasterize(self.vertices, resolution)
        return self.raster


def shoelace(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def mirror_c4(q1_vertices) -> PolygonMask:
    """Build the C4-symmetric cell polygon from the first-quadrant arc.

    ``q1_vertices`` must hold 1-4 points in [0, 0.5]^2, ordered by polar
    angle.  The arc is followed by its three successive 90 degree rotations.
    """
    v = np.asarray(q1_vertices, dtype=float).reshape(-1, 2)
    if not 1 <= len(v) <= N_VERTS:
        raise GeometryError(f"need 1-{N_VERTS} first-quadrant vertices, got {len(v)}")
    if np.any(v < 0) or np.any(v > HALF_CELL):
        raise GeometryError("vertices must lie in the first quadrant of the cell")
    ang = np.arctan2(v[:, 1], v[:, 0])
    if np.any(np.diff(ang) < 0):
        raise GeometryError("vertices must be sorted by polar angle")
    arcs = [v]
    for _ in range(3):
        arcs.append(arcs[-1] @ ROT90)
    full = np.concatenate(arcs)
    # drop repeated points (an arc ending on the axis meets the next arc's start)
    keep = np.ones(len(full), dtype=bool)
    nxt = np.roll(full, -1, axis=0)
    keep &= np.any(np.abs(full - nxt) > 1e-12, axis=1)
    full = full[keep]
    if len(full) < 3 or abs(shoelace(full)) < 1e-12:
        raise DegenerateShapeError("polygon has zero area after mirroring")
    n = len(full)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(full[i], full[(i + 1) % n], full[j], full[(j + 1) % n]):
                raise GeometryError("mirrored polygon self-intersects")
    if shoelace(full) < 0:
        full = full[::-1]
    return PolygonMask(full)


def fill_factor(mask: PolygonMask) -> float:
    """Polygon area over unit-cell area."""
    return float(np.clip(abs(shoelace(mask.vertices)), 0.0, 1.0))


def points_in_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd crossing test, vectorised over points."""
    px, py = points[:, 0:1], points[:, 1:2]
    x0, y0 = vertices[:, 0], vertices[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    straddle = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    hits = straddle & (px < xcross)
    return (hits.sum(axis=1) % 2).astype(bool)


def rasterize(vertices, resolution: int = 64) -> np.ndarray:
    """Binary R x R occupancy of pixel centres; row index grows with y."""
    # centres at odd multiples of 1/(2R) so a 90 degree turn maps grid onto grid
    u = (2 * np.arange(resolution) + 1 - resolution) / (2.0 * resolution)
    X, Y = np.meshgrid(u, u)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return points_in_polygon(pts, np.asarray(vertices, dtype=float)).reshape(resolution, resolution)


def dataset_angles(nv: int) -> np.ndarray:
    return (np.arange(nv) + 0.5) * (np.pi / 2) / nv


def sample_dataset_shape(seed, nv: int, radius_range=RADIUS_RANGE) -> ShapeParams:
    """Random shape with ``nv`` equally spaced first-quadrant vertices."""
    if nv not in (1, 2, 3, 4):
        raise GeometryError(f"nv must be 1..4, got {nv}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    theta = dataset_angles(nv)
    r = rng.uniform(radius_range[0], radius_range[1], size=nv)
    verts = np.zeros((N_VERTS, 2))
    verts[:nv, 0] = r * np.cos(theta)
    verts[:nv, 1] = r * np.sin(theta)
    logits = np.where(np.arange(1, N_VERTS) < nv, SATURATION, -SATURATION)
    return ShapeParams(logits, verts)


# ---------------------------------------------------------------------------
# differentiable path


def soft_vertices(logits: ad.Tensor, vertices: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    """Presence probabilities and presence-blended vertices (both Tensors).

    ``logits`` is (..., 3) and ``vertices`` (..., 4, 2).  Presence is a
    prefix property of the chain, so an absent vertex's polygon neighbours are
    the previous vertex and the rotated first vertex.  It is pulled toward the
    midpoint of that chord, where it leaves the area unchanged:
    v' = p v + (1 - p) (v'_prev + R v0) / 2.
    """
    p = presence_chain(logits)
    v0 = vertices[..., 0:1, :]
    rv0 = ad.matmul(v0, ad.Tensor(ROT90))
    out = [v0]
    for i in range(1, N_VERTS):
        mid = ad.mul(ad.add(out[-1], rv0), 0.5)
        pi = ad.reshape(p[..., i:i + 1], p.shape[:-1] + (1, 1))
        out.append(ad.add(ad.mul(pi, vertices[..., i:i + 1, :]), ad.mul(ad.sub(1.0, pi), mid)))
    return p, ad.concat(out, axis=-2)


def soft_tokens(logits: ad.Tensor, vertices: ad.Tensor) -> ad.Tensor:
    """(..., 4, 3) surrogate input built from soft presence and blended vertices."""
    p, v = soft_vertices(logits, vertices)
    return ad.concat([ad.reshape(p, p.shape + (1,)), v], axis=-1)


def fill_factor_tensor(q1_vertices: ad.Tensor) -> ad.Tensor:
    """Differentiable C4 polygon area from an ordered (K, 2) quadrant arc."""
    arcs = [q1_vertices]
    rot = ad.Tensor(ROT90)
    for _ in range(3):
        arcs.append(ad.matmul(arcs[-1], rot))
    full = ad.concat(arcs, axis=0)
    n = full.shape[0]
    nxt = ad.slice_(full, (np.roll(np.arange(n), -1),))
    cross = ad.sub(ad.mul(full[:, 0], nxt[:, 1]), ad.mul(nxt[:, 0], full[:, 1]))
    return ad.mul(ad.sum_(cross), 0.5)
