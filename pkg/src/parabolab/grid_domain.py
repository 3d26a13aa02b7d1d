"""Space-time grids, time-varying domains and their discrete anatomy.

Points are arrays whose last coordinate is time: ``(x_1, ..., x_n, t)``.
Grid-sampled fields are stored with time as the leading axis, shape
``(Nt, N_1, ..., N_n)``, and nodes sit at cell centers.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)

EXTERIOR, INTERIOR, PARABOLIC, FLAT_TOP = 0, 1, 2, 3
LABEL_NAMES = {EXTERIOR: "exterior", INTERIOR: "interior", PARABOLIC: "parabolic", FLAT_TOP: "flat_top"}


class CoarseGridError(ValueError):
    """Grid spacing does not resolve the generator's smallest feature."""


class DegenerateDomainError(ValueError):
    """Mask has no parabolic boundary (or is empty)."""


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered space-time grid.

    ``tau`` defaults to ``h**2`` so that parabolic cylinders are isotropic
    in grid units.
    """

    n: int
    h: float
    space_extent: tuple
    time_extent: tuple
    tau: float | None = None

    def __post_init__(self):
        if not 1 <= self.n <= 3:
            raise ValueError(f"spatial dimension must be 1..3, got {self.n}")
        if self.h <= 0:
            raise ValueError("h must be positive")
        tau = self.h * self.h if self.tau is None else float(self.tau)
        if tau <= 0:
            raise ValueError("tau must be positive")
        object.__setattr__(self, "tau", tau)
        ext = tuple((float(lo), float(hi)) for lo, hi in self.space_extent)
        if len(ext) != self.n:
            raise ValueError("space_extent needs one interval per spatial axis")
        object.__setattr__(self, "space_extent", ext)
        t0, t1 = self.time_extent
        object.__setattr__(self, "time_extent", (float(t0), float(t1)))
        if min(self.shape) < 4:
            raise ValueError(f"grid needs at least 4 nodes per axis, got shape {self.shape}")

    @property
    def counts(self) -> tuple:
        return tuple(int(round((hi - lo) / self.h)) for lo, hi in self.space_extent)

    @property
    def nt(self) -> int:
        t0, t1 = self.time_extent
        return int(round((t1 - t0) / self.tau))

    @property
    def shape(self) -> tuple:
        return (self.nt,) + self.counts

    @property
    def x_axes(self) -> list:
        return [lo + (np.arange(N) + 0.5) * self.h
                for (lo, _), N in zip(self.space_extent, self.counts)]

    @property
    def t_axis(self) -> np.ndarray:
        return self.time_extent[0] + (np.arange(self.nt) + 0.5) * self.tau

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n * self.tau

    def space_coords(self) -> np.ndarray:
        """Spatial node coordinates, shape ``(N_1, ..., N_n, n)``."""
        mesh = np.meshgrid(*self.x_axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def node_point(self, index) -> np.ndarray:
        """Space-time point of node ``(m, i_1, ..., i_n)``."""
        m, *idx = index
        x = [ax[i] for ax, i in zip(self.x_axes, idx)]
        return np.array(x + [self.t_axis[m]])

    def nearest_index(self, point) -> tuple:
        point = np.asarray(point, dtype=float)
        idx = [int(np.clip(np.floor((point[-1] - self.time_extent[0]) / self.tau), 0, self.nt - 1))]
        for k, (lo, _) in enumerate(self.space_extent):
            idx.append(int(np.clip(np.floor((point[k] - lo) / self.h), 0, self.counts[k] - 1)))
        return tuple(idx)

    def contains_box(self, bbox) -> bool:
        space, (t0, t1) = bbox
        tol = 1e-12
        ok = self.time_extent[0] <= t0 + tol and self.time_extent[1] >= t1 - tol
        for (lo, hi), (glo, ghi) in zip(space, self.space_extent):
            ok &= glo <= lo + tol and ghi >= hi - tol
        return bool(ok)


def make_grid(spec: "DomainSpec", h: float, tau: float | None = None, pad: int = 2) -> Grid:
    """Grid covering ``spec.bbox`` plus ``pad`` exterior cells on every side."""
    space, (t0, t1) = spec.bbox
    tau = h * h if tau is None else tau
    ext = []
    for lo, hi in space:
        ncell = int(np.ceil((hi - lo) / h - 1e-9)) + 2 * pad
        mid = 0.5 * (lo + hi)
        ext.append((mid - 0.5 * ncell * h, mid + 0.5 * ncell * h))
    nt = int(np.ceil((t1 - t0) / tau - 1e-9))
    return Grid(spec.n, h, tuple(ext), (t0 - pad * tau, t0 + (nt + pad) * tau), tau)


# ---------------------------------------------------------------------------
# parabolic metric
# ---------------------------------------------------------------------------

def parabolic_distance(X, Y) -> np.ndarray:
    """``max(|x - y|, |t - s|**0.5)`` for points with time as last coordinate.

    Broadcasts over leading axes.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    dx = np.linalg.norm(X[..., :-1] - Y[..., :-1], axis=-1)
    dt = np.sqrt(np.abs(X[..., -1] - Y[..., -1]))
    return np.maximum(dx, dt)


# ---------------------------------------------------------------------------
# domain specs and generators
# ---------------------------------------------------------------------------

Indicator = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DomainSpec:
    """Analytic description of an open bounded set Q in space-time.

    ``indicator(x, t)`` takes ``x`` of shape ``(..., n)`` and ``t`` of
    shape ``(...)``.  ``boundary_sampler(m)`` returns roughly ``m`` points
    on the parabolic boundary (closed form per generator).
    """

    name: str
    params: dict
    n: int
    indicator: Indicator
    bbox: tuple
    min_feature: float = np.inf
    boundary_sampler: Callable[[int], np.ndarray] | None = field(default=None, repr=False)
    distance: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)
    special_points: dict = field(default_factory=dict)

    def contains(self, P) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        return np.asarray(self.indicator(P[..., :-1], P[..., -1]), dtype=bool)

    def parabolic_boundary(self, m: int = 256) -> np.ndarray:
        if self.boundary_sampler is None:
            raise ValueError(f"domain {self.name!r} has no parabolic boundary sampler")
        return np.asarray(self.boundary_sampler(m), dtype=float)

    def dist(self, P) -> np.ndarray:
        """Parabolic distance to the parabolic boundary.

        Uses the generator's closed form when available, otherwise a brute
        force minimum over a dense boundary sample.
        """
        P = np.asarray(P, dtype=float)
        if self.distance is not None:
            return np.asarray(self.distance(P), dtype=float)
        cloud = _dense_boundary(self)
        flat = P.reshape(-1, P.shape[-1])
        out = np.empty(len(flat))
        for s in range(0, len(flat), 512):
            chunk = flat[s:s + 512]
            out[s:s + 512] = parabolic_distance(chunk[:, None, :], cloud[None, :, :]).min(axis=1)
        return out.reshape(P.shape[:-1])

    @property
    def diameter(self) -> float:
        space, (t0, t1) = self.bbox
        dx = np.sqrt(sum((hi - lo) ** 2 for lo, hi in space))
        return float(max(dx, np.sqrt(t1 - t0)))


@functools.lru_cache(maxsize=32)
def _dense_cloud_cached(spec_id, m):
    spec = _SPEC_REGISTRY[spec_id]
    return spec.parabolic_boundary(m)


_SPEC_REGISTRY: dict = {}


def _dense_boundary(spec: DomainSpec, m: int = 20000) -> np.ndarray:
    _SPEC_REGISTRY[id(spec)] = spec
    return _dense_cloud_cached(id(spec), m)


def _ball_points(n, m):
    """Deterministic, roughly uniform directions on the unit sphere in R^n."""
    if n == 1:
        return np.array([[-1.0], [1.0]])
    if n == 2:
        a = 2 * np.pi * (np.arange(m) + 0.5) / m
        return np.stack([np.cos(a), np.sin(a)], axis=-1)
    # golden spiral
    k = np.arange(m) + 0.5
    z = 1 - 2 * k / m
    phi = np.pi * (1 + 5 ** 0.5) * k
    r = np.sqrt(1 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _lattice(n, m, lo, hi):
    """About ``m`` points filling the box ``[lo, hi]^n`` on a regular lattice."""
    per = max(2, int(round(m ** (1.0 / n))))
    axes = [np.linspace(lo, hi, per)] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def straight_cylinder(n: int = 1, r: float = 1.0, T: float = 1.0) -> DomainSpec:
    """``B_r(0) x (0, T)``."""
    if r <= 0 or T <= 0:
        raise ValueError("straight_cylinder needs r > 0 and T > 0")

    def indicator(x, t):
        return (np.linalg.norm(x, axis=-1) < r) & (t > 0) & (t < T)

    def sampler(m):
        m_lat = max(4, m // 2)
        dirs = _ball_points(n, max(2, int(np.sqrt(m_lat))) if n > 1 else 2)
        times = np.linspace(0, T, max(2, m_lat // len(dirs)), endpoint=False)
        lat = np.concatenate([np.column_stack([np.repeat(r * dirs[None], len(times), 0).reshape(-1, n),
                                               np.repeat(times, len(dirs))])])
        base = _lattice(n, max(4, m - len(lat)), -r, r)
        base = base[np.linalg.norm(base, axis=-1) <= r]
        bottom = np.column_stack([base, np.zeros(len(base))])
        return np.concatenate([lat, bottom])

    def distance(P):
        x, t = P[..., :-1], P[..., -1]
        return np.maximum(np.minimum(r - np.linalg.norm(x, axis=-1), np.sqrt(np.clip(t, 0, None))), 0.0)

    return DomainSpec("straight_cylinder", dict(n=n, r=r, T=T), n, indicator,
                      (((-r, r),) * n, (0.0, T)), min_feature=r,
                      boundary_sampler=sampler, distance=distance)


def half_space_slab(n: int = 1, L: float = 1.0, T: float = 1.0) -> DomainSpec:
    """``{0 < x_1 < L} x (0, T)``, with ``|x_j| < L/2`` for ``j >= 2``.

    Bounded stand-in for the half-space ``{x_1 > 0}``: near the wall
    ``x_1 = 0`` every small cylinder is cut exactly in half.
    """
    if L <= 0 or T <= 0:
        raise ValueError("half_space_slab needs L > 0 and T > 0")

    def indicator(x, t):
        inside = (x[..., 0] > 0) & (x[..., 0] < L) & (t > 0) & (t < T)
        for j in range(1, n):
            inside &= np.abs(x[..., j]) < L / 2
        return inside

    def sampler(m):
        per_face = max(4, m // (2 * n + 2))
        pts = []
        for wall in (0.0, L):
            q = _lattice(n, per_face, 0.0, 1.0)
            x = np.empty((len(q), n))
            x[:, 0] = wall
            x[:, 1:] = (q[:, 1:n] - 0.5) * L
            pts.append(np.column_stack([x, q[:, 0] * T * (1 - 1e-9)]))
        for j in range(1, n):
            for wall in (-L / 2, L / 2):
                q = _lattice(n, per_face, 0.0, 1.0)
                x = np.empty((len(q), n))
                x[:, 0] = q[:, 0] * L
                others = [k for k in range(1, n) if k != j]
                for c, k in enumerate(others):
                    x[:, k] = (q[:, 1 + c] - 0.5) * L if n > 2 else 0.0
                x[:, j] = wall
                tq = q[:, -1] if n > 1 else q[:, 0]
                pts.append(np.column_stack([x, tq * T * (1 - 1e-9)]))
        q = _lattice(n, per_face, 0.0, 1.0)
        x = q * L
        x[:, 1:] -= L / 2
        pts.append(np.column_stack([x, np.zeros(len(q))]))
        return np.concatenate(pts)

    def distance(P):
        x, t = P[..., :-1], P[..., -1]
        d = np.minimum(x[..., 0], L - x[..., 0])
        for j in range(1, n):
            d = np.minimum(d, L / 2 - np.abs(x[..., j]))
        return np.maximum(np.minimum(d, np.sqrt(np.clip(t, 0, None))), 0.0)

    space = ((0.0, L),) + ((-L / 2, L / 2),) * (n - 1)
    return DomainSpec("half_space_slab", dict(n=n, L=L, T=T), n, indicator,
                      (space, (0.0, T)), min_feature=L,
                      boundary_sampler=sampler, distance=distance)


def _cube_layout(levels):
    sides = [2.0 ** -k for k in range(levels)]
    starts = [0.0]
    for k in range(levels - 1):
        starts.append(starts[-1] + sides[k] + sides[k + 1] / 2)
    return np.array(sides), np.array(starts)


def shrinking_cubes(levels: int = 3, n: int = 2) -> DomainSpec:
    """Row of shrinking space-time cubes joined by triangular prisms (n = 2).

    Cube ``k`` is ``[X_k, X_k + s_k] x (-s_k/2, s_k/2) x (0, s_k)`` with
    ``s_k = 2**-k``.  Neighbouring cubes are separated by a gap ``s_{k+1}/2``
    bridged by a prism whose ``(y, t)`` cross-section is the triangle
    ``|y| < b (1 - t/H)``, ``b = s_{k+1}/4``, ``H = s_{k+1}/2``.  Every cube top
    is a flat (non-parabolic) piece of the boundary.
    """
    if n != 2:
        raise ValueError("shrinking_cubes is defined for n = 2 only")
    if not 1 <= levels <= 8:
        raise ValueError("shrinking_cubes needs 1 <= levels <= 8")
    sides, starts = _cube_layout(levels)
    prisms = []
    for k in range(levels - 1):
        x0 = starts[k] + sides[k]
        x1 = starts[k + 1]
        prisms.append((x0, x1, sides[k + 1] / 4, sides[k + 1] / 2))

    def indicator(x, t):
        X, Y = x[..., 0], x[..., 1]
        inside = np.zeros(np.broadcast(X, t).shape, dtype=bool)
        for s, x0 in zip(sides, starts):
            inside |= (X > x0) & (X < x0 + s) & (np.abs(Y) < s / 2) & (t > 0) & (t < s)
        for x0, x1, b, H in prisms:
            inside |= (X > x0 - b) & (X < x1 + b) & (t > 0) & (np.abs(Y) < b * (1 - t / H))
        return inside

    def sampler(m):
        per = max(8, m // (6 * levels + 4 * len(prisms)))
        pts = []
        g = int(np.sqrt(per))
        u = (np.arange(g) + 0.5) / g
        uu, vv = np.meshgrid(u, u, indexing="ij")
        uu, vv = uu.ravel(), vv.ravel()
        for s, x0 in zip(sides, starts):
            tt = vv * s
            for xf in (x0, x0 + s):
                pts.append(np.column_stack([np.full_like(uu, xf), (uu - 0.5) * s, tt]))
            for yf in (-s / 2, s / 2):
                pts.append(np.column_stack([x0 + uu * s, np.full_like(uu, yf), tt]))
            pts.append(np.column_stack([x0 + uu * s, (vv - 0.5) * s, np.zeros_like(uu)]))
        for x0, x1, b, H in prisms:
            xs = x0 + uu * (x1 - x0)
            for sign in (-1, 1):
                pts.append(np.column_stack([xs, sign * b * (1 - vv), vv * H]))
                # junction lines with the two cube faces
                for xf in (x0, x1):
                    pts.append(np.column_stack([np.full(g, xf), sign * b * (1 - u), u * H]))
            pts.append(np.column_stack([xs, (vv - 0.5) * 2 * b, np.zeros_like(uu)]))
        P = np.concatenate(pts)
        return P[~indicator(P[:, :-1], P[:, -1])]

    min_feature = sides[-1] / 2 if levels > 1 else sides[0]
    xmax = starts[-1] + sides[-1]
    spec = DomainSpec("shrinking_cubes", dict(levels=levels, n=2), 2, indicator,
                      (((0.0, xmax), (-0.5, 0.5)), (0.0, 1.0)), min_feature=min_feature,
                      boundary_sampler=sampler,
                      special_points=dict(flat_tops=[(x0, x0 + s, s) for s, x0 in zip(sides, starts)],
                                          prisms=prisms))
    return spec


def inner_spike(n: int = 1, width: float = 0.25, sharpness: float = 0.05,
                tip_time: float = 0.5, R: float = 1.0, T: float = 1.0) -> DomainSpec:
    """Cylinder ``B_R x (0, T)`` minus an exterior spike with an exponential cusp.

    The removed set is ``{|x| <= width * exp(-sharpness / s), s = tip_time - t >= 0}``.
    Backward cylinders at the tip see exterior of relative measure that
    vanishes faster than any power, so the exterior measure condition fails
    there.
    """
    if not (0 < tip_time < T and 0 < width < R and sharpness > 0):
        raise ValueError("inner_spike parameters out of range")

    def phi(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(s > 0, width * np.exp(-sharpness / np.where(s > 0, s, 1.0)), 0.0)

    def indicator(x, t):
        rad = np.linalg.norm(x, axis=-1)
        s = tip_time - t
        spike = (s >= 0) & (rad <= phi(s))
        return (rad < R) & (t > 0) & (t < T) & ~spike

    def sampler(m):
        base = straight_cylinder(n, R, T).boundary_sampler(m // 2)
        s = tip_time * np.geomspace(1e-4, 1.0, max(8, m // 4))
        dirs = _ball_points(n, 8)
        walls = [np.column_stack([phi(s)[:, None] * np.ones((1, n)) * d, tip_time - s]) for d in dirs]
        tip = np.concatenate([np.zeros(n), [tip_time]])[None, :]
        P = np.concatenate([tip] + walls + [base])
        return P[~indicator(P[:, :-1], P[:, -1])]  # drop wall points lost to rounding

    return DomainSpec("inner_spike", dict(n=n, width=width, sharpness=sharpness,
                                          tip_time=tip_time, R=R, T=T), n, indicator,
                      (((-R, R),) * n, (0.0, T)), min_feature=2 * float(phi(tip_time)),
                      boundary_sampler=sampler,
                      special_points=dict(tip=np.concatenate([np.zeros(n), [tip_time]])))


def slit(n: int = 1, R: float = 1.0, T: float = 1.0, slit_time: float = 0.5,
         thickness: float = 0.0) -> DomainSpec:
    """Cylinder minus a closed slit ``{x_1 = 0 (|x_1| <= thickness/2), x_2.. >= 0, t <= slit_time}``."""
    if not 0 < slit_time <= T:
        raise ValueError("slit needs 0 < slit_time <= T")

    def indicator(x, t):
        rad = np.linalg.norm(x, axis=-1)
        cut = (np.abs(x[..., 0]) <= thickness / 2) & (t <= slit_time)
        for j in range(1, n):
            cut &= x[..., j] >= 0
        return (rad < R) & (t > 0) & (t < T) & ~cut

    def sampler(m):
        base = straight_cylinder(n, R, T).boundary_sampler(m // 2)
        q = _lattice(n, m // 2, 0.0, 1.0)
        x = np.zeros((len(q), n))
        x[:, 0] = 0.0
        x[:, 1:] = q[:, 1:] * R
        pts = np.column_stack([x, q[:, 0] * slit_time])
        pts = pts[np.linalg.norm(pts[:, :-1], axis=-1) < R]
        return np.concatenate([pts, base])

    return DomainSpec("slit", dict(n=n, R=R, T=T, slit_time=slit_time, thickness=thickness), n,
                      indicator, (((-R, R),) * n, (0.0, T)), min_feature=R,
                      boundary_sampler=sampler)


def wedge(angle: float = np.pi, R: float = 1.0, T: float = 1.0, n: int = 2) -> DomainSpec:
    """Spatial sector ``{|arg x| < angle/2, |x| < R} x (0, T)`` (n = 2)."""
    if n != 2:
        raise ValueError("wedge is defined for n = 2 only")
    if not 0 < angle < 2 * np.pi:
        raise ValueError("wedge angle must lie in (0, 2 pi)")

    def indicator(x, t):
        ang = np.abs(np.arctan2(x[..., 1], x[..., 0]))
        rad = np.linalg.norm(x, axis=-1)
        return (ang < angle / 2) & (rad > 0) & (rad < R) & (t > 0) & (t < T)

    def sampler(m):
        g = max(4, int(np.sqrt(m / 4)))
        rr = (np.arange(g) + 0.5) / g * R
        tt = np.linspace(0, T, g, endpoint=False)
        pts = []
        for sgn in (-1, 1):
            a = sgn * angle / 2
            r2, t2 = np.meshgrid(rr, tt, indexing="ij")
            pts.append(np.column_stack([r2.ravel() * np.cos(a), r2.ravel() * np.sin(a), t2.ravel()]))
        aa = np.linspace(-angle / 2, angle / 2, g)
        a2, t2 = np.meshgrid(aa, tt, indexing="ij")
        pts.append(np.column_stack([R * np.cos(a2.ravel()), R * np.sin(a2.ravel()), t2.ravel()]))
        r2, a2 = np.meshgrid(rr, aa, indexing="ij")
        pts.append(np.column_stack([r2.ravel() * np.cos(a2.ravel()), r2.ravel() * np.sin(a2.ravel()),
                                    np.zeros(r2.size)]))
        pts.append(np.column_stack([np.zeros(g), np.zeros(g), tt]))
        P = np.concatenate(pts)
        return P[~indicator(P[:, :-1], P[:, -1])]

    return DomainSpec("wedge", dict(angle=angle, R=R, T=T, n=2), 2, indicator,
                      (((-R, R), (-R, R)), (0.0, T)), min_feature=R * min(1.0, angle),
                      boundary_sampler=sampler)


GENERATORS = {
    "straight_cylinder": straight_cylinder,
    "half_space_slab": half_space_slab,
    "shrinking_cubes": shrinking_cubes,
    "inner_spike": inner_spike,
    "slit": slit,
    "wedge": wedge,
}


def make_domain(name: str, params: dict | None = None, **kwargs) -> DomainSpec:
    """Build a domain from a generator name and numeric parameters."""
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown domain generator {name!r}; "
                         f"choose from {sorted(GENERATORS)}") from None
    params = dict(params or {}, **kwargs)
    try:
        return gen(**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {name!r}: {exc}") from None


# ---------------------------------------------------------------------------
# masks and boundary classes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainMask:
    grid: Grid
    occupancy: np.ndarray
    spec: DomainSpec | None = None
    subsample_count: int = 4096

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())


def rasterize(spec: DomainSpec, grid: Grid, subsample_count: int = 4096,
              check_resolution: bool = True) -> DomainMask:
    """Occupancy of ``spec`` at the grid's cell centers."""
    if spec.n != grid.n:
        raise ValueError("spec and grid dimensions differ")
    if not grid.contains_box(spec.bbox):
        raise ValueError("grid does not cover the domain bounding box")
    if check_resolution and spec.min_feature < 4 * grid.h - 1e-12:
        raise CoarseGridError(
            f"grid too coarse: h={grid.h:g} gives {spec.min_feature / grid.h:.2f} cells across "
            f"the smallest feature of {spec.name!r} (need >= 4)")
    x = grid.space_coords()
    occ = np.empty(grid.shape, dtype=bool)
    for m, t in enumerate(grid.t_axis):
        occ[m] = spec.indicator(x, np.full(x.shape[:-1], t))
    occ.setflags(write=False)
    return DomainMask(grid, occ, spec, subsample_count)


@dataclass(frozen=True)
class BoundaryClass:
    labels: np.ndarray

    @property
    def parabolic(self) -> np.ndarray:
        return self.labels == PARABOLIC

    @property
    def flat_top(self) -> np.ndarray:
        return self.labels == FLAT_TOP

    @property
    def interior(self) -> np.ndarray:
        return self.labels == INTERIOR

    @property
    def boundary(self) -> np.ndarray:
        return (self.labels == PARABOLIC) | (self.labels == FLAT_TOP)

    @property
    def unknowns(self) -> np.ndarray:
        """Nodes carrying solver unknowns: interior and flat-top nodes."""
        return (self.labels == INTERIOR) | (self.labels == FLAT_TOP)

    def counts(self) -> dict:
        return {LABEL_NAMES[k]: int((self.labels == k).sum()) for k in LABEL_NAMES}


def _shifted(occ, axis, step):
    """Occupancy of the neighbour ``step`` cells along ``axis`` (outside grid = False)."""
    out = np.zeros_like(occ)
    src = [slice(None)] * occ.ndim
    dst = [slice(None)] * occ.ndim
    if step > 0:
        src[axis], dst[axis] = slice(step, None), slice(None, -step)
    else:
        src[axis], dst[axis] = slice(None, step), slice(-step, None)
    out[tuple(dst)] = occ[tuple(src)]
    return out


def classify_boundary(mask: DomainMask) -> BoundaryClass:
    """Split the discrete boundary into parabolic and flat-top nodes.

    A boundary node is an occupied node with an unoccupied face neighbour
    (time included).  It is flat-top when the node one step earlier is
    occupied and the node one step later is not.
    """
    occ = mask.occupancy
    if not occ.any():
        raise DegenerateDomainError("empty mask")
    all_nb = np.ones_like(occ)
    for axis in range(occ.ndim):
        all_nb &= _shifted(occ, axis, 1) & _shifted(occ, axis, -1)
    boundary = occ & ~all_nb
    below = _shifted(occ, 0, -1)
    above = _shifted(occ, 0, 1)
    flat = boundary & below & ~above
    labels = np.zeros(occ.shape, dtype=np.int8)
    labels[occ] = INTERIOR
    labels[boundary] = PARABOLIC
    labels[flat] = FLAT_TOP
    labels.setflags(write=False)
    return BoundaryClass(labels)


# ---------------------------------------------------------------------------
# distance fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistanceField:
    grid: Grid
    d: np.ndarray

    def gradient(self, m: int) -> np.ndarray:
        """Spatial gradient of ``d`` on slice ``m``, shape ``(..., n)``."""
        g = np.gradient(self.d[m], self.grid.h) if self.grid.n > 1 else [np.gradient(self.d[m], self.grid.h)]
        return np.stack(g, axis=-1)


def distance_field(mask: DomainMask, cls: BoundaryClass) -> DistanceField:
    """Exact parabolic distance from every node to the parabolic-boundary nodes.

    Per-slice Euclidean transforms give the spatial part; time offsets are
    then swept outward until they can no longer improve any value.
    """
    grid = mask.grid
    P = cls.parabolic
    if not P.any():
        raise DegenerateDomainError("no parabolic boundary nodes")
    spatial = np.full(grid.shape, np.inf)
    for m in range(grid.nt):
        if P[m].any():
            spatial[m] = ndimage.distance_transform_edt(~P[m], sampling=grid.h)
    d = spatial.copy()
    occ = mask.occupancy
    k = 1
    while k < grid.nt:
        gap = np.sqrt(k * grid.tau)
        current = d[occ].max() if occ.any() else d.max()
        if gap >= current:
            break
        np.minimum(d[k:], np.maximum(spatial[:-k], gap), out=d[k:])
        np.minimum(d[:-k], np.maximum(spatial[k:], gap), out=d[:-k])
        k += 1
    d[P] = 0.0
    d.setflags(write=False)
    return DistanceField(grid, d)


# ---------------------------------------------------------------------------
# parabolic rescaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridField:
    """Scalar field sampled on a grid."""

    grid: Grid
    values: np.ndarray


@functools.singledispatch
def rescale(obj, rho: float):
    """Parabolic rescaling ``u^rho(x, t) = u(rho x, rho^2 t)``.

    Points map ``(x, t) -> (x / rho, t / rho^2)``; grids and sampled fields
    keep their values and get ``h / rho``, ``tau / rho^2``; distances are
    divided by ``rho``.
    """
    P = np.asarray(obj, dtype=float)
    _check_rho(rho)
    out = P.copy()
    out[..., :-1] /= rho
    out[..., -1] /= rho * rho
    return out


def _check_rho(rho):
    if not rho > 0:
        raise ValueError("rho must be positive")


@rescale.register
def _(grid: Grid, rho: float):
    _check_rho(rho)
    return Grid(grid.n, grid.h / rho, tuple((lo / rho, hi / rho) for lo, hi in grid.space_extent),
                (grid.time_extent[0] / rho ** 2, grid.time_extent[1] / rho ** 2), grid.tau / rho ** 2)


@rescale.register
def _(f: GridField, rho: float):
    return GridField(rescale(f.grid, rho), f.values)


@rescale.register
def _(df: DistanceField, rho: float):
    return DistanceField(rescale(df.grid, rho), df.d / rho)


@rescale.register
def _(spec: DomainSpec, rho: float):
    _check_rho(rho)

    def indicator(x, t):
        return spec.indicator(np.asarray(x) * rho, np.asarray(t) * rho * rho)

    def sampler(m):
        return rescale(spec.parabolic_boundary(m), rho)

    def distance(P):
        return spec.dist(rescale(P, 1.0 / rho)) / rho

    space, (t0, t1) = spec.bbox
    bbox = (tuple((lo / rho, hi / rho) for lo, hi in space), (t0 / rho ** 2, t1 / rho ** 2))
    return replace(spec, name=f"{spec.name}@rho={rho:g}", indicator=indicator, bbox=bbox,
                   min_feature=spec.min_feature / rho,
                   boundary_sampler=sampler if spec.boundary_sampler else None,
                   distance=distance, special_points={})
