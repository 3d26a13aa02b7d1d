"""Thermal capacity of discrete compact sets and Wiener-type series.

A compact set is a union of space-time cells on a lattice.  Its capacity
is approximated by the linear program

    maximize sum(mu)  subject to  Fbar * mu <= 1 on a dilation of K,  mu >= 0,

where ``Fbar`` is the heat kernel averaged over one source cell.  The kernel
depends on integer index differences only, so translating a set changes
nothing and parabolic rescaling of the cells rescales every entry exactly.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize, special, stats

from .geometry import ScaleFloorError, heat_ball_box
from .grid_domain import DomainSpec

logger = logging.getLogger(__name__)

LP_CAP = 2000
FEAS_TOL = 1e-8
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


class LPCapExceeded(ValueError):
    """Set has more cells than the LP is allowed to handle."""


@dataclass(frozen=True)
class DiscreteCompactSet:
    """Cells of a lattice with spacing ``cell = (h, ..., h, tau)``.

    ``indices`` has one row per cell, time index last.  Cell ``i`` is
    centered at ``origin + indices[i] * cell``.
    """

    indices: np.ndarray
    cell: tuple
    origin: tuple = None
    provenance: str = ""

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, len(self.cell))
        idx = np.unique(idx, axis=0)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "cell", tuple(float(c) for c in self.cell))
        if self.origin is None:
            object.__setattr__(self, "origin", (0.0,) * len(self.cell))
        if any(c <= 0 for c in self.cell):
            raise ValueError("cell sizes must be positive")

    @property
    def n(self) -> int:
        return len(self.cell) - 1

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.origin) + self.indices * np.asarray(self.cell)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell))

    @property
    def volume(self) -> float:
        return len(self) * self.cell_volume

    def translated(self, shift_cells) -> "DiscreteCompactSet":
        return DiscreteCompactSet(self.indices + np.asarray(shift_cells, dtype=np.int64), self.cell,
                                  self.origin, self.provenance)

    def scaled(self, s: float) -> "DiscreteCompactSet":
        """Image under ``(x, t) -> (s x, s^2 t)``."""
        c = np.asarray(self.cell)
        factor = np.r_[np.full(self.n, s), s * s]
        return DiscreteCompactSet(self.indices, tuple(c * factor), tuple(np.asarray(self.origin) * factor),
                                  self.provenance)

    def union(self, other: "DiscreteCompactSet") -> "DiscreteCompactSet":
        if other.cell != self.cell or other.origin != self.origin:
            raise ValueError("sets live on different lattices")
        return DiscreteCompactSet(np.vstack([self.indices, other.indices]), self.cell, self.origin,
                                  self.provenance)

    def dilated(self, m: int) -> np.ndarray:
        """Indices of the box dilation of the set by ``m`` cells."""
        if len(self) == 0:
            return self.indices
        lo = self.indices.min(axis=0) - m
        shape = tuple(self.indices.max(axis=0) - lo + m + 1)
        occ = np.zeros(shape, dtype=bool)
        occ[tuple((self.indices - lo).T)] = True
        if m > 0:
            occ = ndimage.binary_dilation(occ, np.ones((3,) * occ.ndim, dtype=bool), iterations=m)
        return np.argwhere(occ) + lo


def box_set(n: int, counts, cell, start=None, provenance: str = "box") -> DiscreteCompactSet:
    """All cells of a rectangular block with ``counts`` cells per axis (time last)."""
    grids = np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=-1)
    if start is not None:
        idx = idx + np.asarray(start)
    if len(cell) != n + 1:
        raise ValueError("cell needs n + 1 entries")
    return DiscreteCompactSet(idx, tuple(cell), provenance=provenance)


# ---------------------------------------------------------------------------
# cell-averaged kernel
# ---------------------------------------------------------------------------

def cell_averaged_kernel(offsets: np.ndarray, cell) -> np.ndarray:
    """Average of the heat kernel over a source cell, evaluated at integer offsets.

    For offset ``k`` the value is ``(1/|cell|) int_{cell + k*cell} F``: a time
    integral of products of error-function differences, computed with
    Gauss-Legendre in ``u = sqrt(t)`` (the integrand is bounded).
    """
    offsets = np.atleast_2d(np.asarray(offsets))
    cell = np.asarray(cell, dtype=float)
    n = cell.size - 1
    h, tau = cell[:n], cell[n]
    kt = offsets[:, n].astype(float)
    a = np.maximum((kt - 0.5) * tau, 0.0)
    b = (kt + 0.5) * tau
    live = b > 0
    out = np.zeros(len(offsets))
    if not live.any():
        return out
    ua, ub = np.sqrt(a[live]), np.sqrt(b[live])
    half = 0.5 * (ub - ua)
    u = 0.5 * (ua + ub)[:, None] + half[:, None] * _GL_NODES[None, :]
    dt_du = 2 * u
    prod = np.ones_like(u)
    sq = 2 * u  # 2 sqrt(t)
    for i in range(n):
        c = offsets[live, i].astype(float)[:, None] * h[i]
        prod *= 0.5 * (special.erf((c + h[i] / 2) / sq) - special.erf((c - h[i] / 2) / sq)) / h[i]
    out[live] = (prod * dt_du * _GL_WEIGHTS[None, :]).sum(axis=1) * half / tau
    return out


def kernel_matrix(targets: np.ndarray, sources: np.ndarray, cell) -> np.ndarray:
    """``Fbar(target_i - source_j)`` for integer index arrays."""
    diff = targets[:, None, :] - sources[None, :, :]
    flat = diff.reshape(-1, diff.shape[-1])
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    vals = cell_averaged_kernel(uniq, cell)
    return vals[inv.ravel()].reshape(diff.shape[:2])


@dataclass
class CapacityProblem:
    K: DiscreteCompactSet
    constraint_indices: np.ndarray
    kernel: np.ndarray
    value: float
    weights: np.ndarray
    max_constraint: float
    method: str = "lp"
    flags: dict = field(default_factory=dict)


def solve_capacity(K: DiscreteCompactSet, dilation: int = 2, constraint_indices: np.ndarray | None = None,
                   lp_cap: int = LP_CAP) -> CapacityProblem:
    """Solve the capacity LP and return the full problem record."""
    if len(K) == 0:
        return CapacityProblem(K, np.empty((0, K.n + 1), int), np.empty((0, 0)), 0.0, np.empty(0), 0.0)
    if len(K) > lp_cap:
        raise LPCapExceeded(f"set has {len(K)} cells; LP cap is {lp_cap}")
    cons = K.dilated(dilation) if constraint_indices is None else np.asarray(constraint_indices)
    A = kernel_matrix(cons, K.indices, K.cell)
    res = optimize.linprog(-np.ones(len(K)), A_ub=A, b_ub=np.ones(len(cons)), bounds=(0, None),
                           method="highs")
    if res.status != 0:
        raise RuntimeError(f"capacity LP failed: {res.message}")
    mu = np.clip(res.x, 0, None)
    worst = float((A @ mu).max())
    if worst > 1 + FEAS_TOL:
        mu = mu / worst
        worst = float((A @ mu).max())
    return CapacityProblem(K, cons, A, float(mu.sum()), mu, worst)


def thermal_capacity_lp(K: DiscreteCompactSet, dilation: int = 2, constraint_indices: np.ndarray | None = None,
                        lp_cap: int = LP_CAP) -> float:
    """Optimal total mass of the capacity LP."""
    return solve_capacity(K, dilation, constraint_indices, lp_cap).value


def volume_proxy(K: DiscreteCompactSet) -> float:
    return K.volume ** (K.n / (K.n + 2))


def capacity_vs_volume(K: DiscreteCompactSet, dilation: int = 2) -> tuple[float, float, float]:
    """``(cap, |K|^(n/(n+2)), cap / |K|^(n/(n+2)))``."""
    cap = thermal_capacity_lp(K, dilation)
    vol = volume_proxy(K)
    return cap, vol, cap / vol


# ---------------------------------------------------------------------------
# energy upper bound with plateau functions
# ---------------------------------------------------------------------------

def plateau_energy(widths, t_span: float, w: float, w_t: float) -> tuple[float, float]:
    """Energy terms of ``prod_i phi_i(x_i) psi(t)`` with linear ramps.

    Each ``phi_i`` is 1 on an interval of length ``widths[i]`` and ramps
    linearly to 0 over ``w``; ``psi`` does the same in time with ``w_t``.
    Returns ``(sup_t int u^2 dx, int int |grad u|^2)``.
    """
    widths = np.asarray(widths, dtype=float)
    l2 = widths + 2 * w / 3
    sup_term = float(np.prod(l2))
    grad = 0.0
    for i in range(len(widths)):
        grad += 2 / w * np.prod(np.delete(l2, i))
    return sup_term, float(grad * (t_span + 2 * w_t / 3))


def parabolic_capacity_upper(K: DiscreteCompactSet, ramps: int = 5, margin: float = 0.0) -> float:
    """Smallest plateau energy over a grid of spatial and temporal ramp widths."""
    if len(K) == 0:
        raise ValueError("set is empty")
    cell = np.asarray(K.cell)
    pts = K.points
    extent = pts.max(axis=0) - pts.min(axis=0) + cell
    widths, t_span = extent[:-1] * (1 + margin), extent[-1] * (1 + margin)
    scale = np.sqrt(max(t_span, 1e-300))
    best = np.inf
    for w in scale * np.geomspace(0.5, 4.0, ramps):
        for w_t in t_span * np.geomspace(1e-3, 1.0, ramps):
            s, g = plateau_energy(widths, t_span, w, w_t)
            best = min(best, s + g)
    return float(best)


# ---------------------------------------------------------------------------
# Wiener series
# ---------------------------------------------------------------------------

@dataclass
class WienerReport:
    lam: float
    center: tuple
    shells: list
    partial_sums: np.ndarray
    slope: float
    slope_ci: tuple
    r2: float
    truncated: bool = False

    def to_dict(self) -> dict:
        return dict(lam=self.lam, center=list(map(float, self.center)), shells=self.shells,
                    partial_sums=[float(s) for s in self.partial_sums], slope=self.slope,
                    slope_ci=list(self.slope_ci), r2=self.r2, truncated=self.truncated)


def shell_complement_set(spec: DomainSpec, X0, lam: float, k: int, cells_per_radius: int = 8) -> DiscreteCompactSet:
    """Cells of ``Q^c`` inside ``{lam^(k+1) >= F(X0 - X) >= lam^k}`` on a lattice at the shell's scale."""
    X0 = np.asarray(X0, dtype=float)
    n = X0.size - 1
    depth, rad = heat_ball_box(n, lam ** k)
    if depth < 1e-12 * max(1.0, abs(X0[-1])):
        raise ScaleFloorError(f"shell {k} below the float resolution")
    h = rad / cells_per_radius
    tau = h * h
    nx = cells_per_radius
    nt = int(np.ceil(depth / tau))
    axes = [np.arange(-nx, nx)] * n + [np.arange(-nt, 0)]
    mesh = np.meshgrid(*axes, indexing="ij")
    idx = np.stack([m.ravel() for m in mesh], axis=-1)
    cell = np.r_[np.full(n, h), tau]
    rel = (idx + 0.5) * cell  # cell centers relative to X0; X0 sits on a cell corner
    tt = -rel[:, n]
    z2 = np.sum(rel[:, :n] ** 2, axis=1)
    logF = -0.5 * n * np.log(4 * np.pi * tt) - z2 / (4 * tt)
    in_shell = (logF >= k * np.log(lam)) & (logF <= (k + 1) * np.log(lam))
    outside = ~spec.contains(X0 + rel)
    sel = idx[in_shell & outside]
    return DiscreteCompactSet(sel, tuple(cell), tuple(X0 + 0.5 * cell), provenance=f"Q^c ∩ shell_{k}")


def wiener_partial_sums(spec: DomainSpec, X0, lam: float = 2.0, Kmax: int = 8, cells_per_radius: int = 8,
                        dilation: int = 2, lp_cap: int = LP_CAP) -> WienerReport:
    """Partial sums ``S_K = sum_{k<=K} lam^k cap(Q^c ∩ shell_k)`` and their linear growth rate."""
    if not lam > 1:
        raise ValueError("lambda must exceed 1")
    shells = []
    terms = []
    truncated = False
    for k in range(1, Kmax + 1):
        try:
            K = shell_complement_set(spec, X0, lam, k, cells_per_radius)
        except ScaleFloorError:
            truncated = True
            break
        method = "lp"
        if len(K) == 0:
            cap = 0.0
        elif len(K) > lp_cap:
            cap, method = volume_proxy(K), "proxy"
        else:
            cap = thermal_capacity_lp(K, dilation)
        shells.append(dict(k=k, scale=float(lam ** (-k / spec.n)), set_size=len(K), cap_method=method,
                           cap_value=float(cap)))
        terms.append(lam ** k * cap)
    S = np.cumsum(terms)
    slope, ci, r2 = _fit_slope(S)
    logger.info("wiener sums at %s: slope=%.4g ci=(%.3g, %.3g) r2=%.3f", np.round(X0, 4), slope, *ci, r2)
    return WienerReport(lam, tuple(np.asarray(X0, float)), shells, S, slope, ci, r2, truncated)


def _fit_slope(S: np.ndarray) -> tuple[float, tuple, float]:
    K = np.arange(1, len(S) + 1)
    if len(S) < 3:
        return float("nan"), (float("nan"), float("nan")), float("nan")
    if np.ptp(S) == 0:
        return 0.0, (0.0, 0.0), 0.0
    fit = stats.linregress(K, S)
    half = stats.t.ppf(0.975, len(S) - 2) * fit.stderr
    return float(fit.slope), (float(fit.slope - half), float(fit.slope + half)), float(fit.rvalue ** 2)


@functools.lru_cache(maxsize=8)
def single_cell_capacity(cell: tuple) -> float:
    K = DiscreteCompactSet(np.zeros((1, len(cell)), dtype=int), cell)
    return thermal_capacity_lp(K)
