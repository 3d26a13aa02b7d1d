"""Measure-theoretic geometry of space-time domains.

Exterior measure in backward cylinders, heat balls and their shells, the
constants relating the two, the VMO modulus of a coefficient field and
the weighted data norms.  Every measure is a ratio estimated with
scrambled Sobol points fed through the analytic indicator of the domain,
so scales far below any raster stay resolvable.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special
from scipy.stats import qmc

from .grid_domain import DomainSpec

logger = logging.getLogger(__name__)

KERNEL_CAP = 1e300
DEFAULT_SAMPLES = 2 ** 14
DEFAULT_THETA_FLOOR = 0.02


class PreconditionError(ValueError):
    """An operation was called outside its range of validity."""


class ScaleFloorError(ValueError):
    """Requested set is too small to be represented in floating point."""


@dataclass
class MeasureReport:
    """Ratio of exterior measure to total measure of a probe set."""

    center: np.ndarray
    scale: float
    ratio: float
    ci_halfwidth: float
    samples: int
    witness: tuple | None = None
    flags: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {f"c{i}": float(v) for i, v in enumerate(np.atleast_1d(self.center))}
        row.update(scale=float(self.scale), ratio=float(self.ratio), ci=float(self.ci_halfwidth),
                   samples=int(self.samples))
        return row


# ---------------------------------------------------------------------------
# sampling helpers
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=64)
def unit_qmc(dim: int, samples: int, seed: int = 0) -> np.ndarray:
    """Scrambled Sobol points in ``[0, 1)^dim``; ``samples`` rounded up to a power of two."""
    m = max(1, int(np.ceil(np.log2(max(2, samples)))))
    pts = qmc.Sobol(d=dim, scramble=True, seed=seed).random_base2(m)
    pts.setflags(write=False)
    return pts


def _binomial_ci(p: float, count: int) -> float:
    if count <= 0:
        return 1.0
    return float(1.96 * np.sqrt(max(p * (1 - p), 0.0) / count) + 0.5 / count)


@functools.lru_cache(maxsize=16)
def _cylinder_offsets(n: int, samples: int, seed: int) -> np.ndarray:
    """Offsets filling ``B_1 x (-1, 0)``; the ball is carved out of a cube."""
    u = unit_qmc(n + 1, samples, seed)
    x = 2 * u[:, :n] - 1
    keep = np.einsum("ij,ij->i", x, x) < 1 if n > 1 else np.ones(len(u), dtype=bool)
    out = np.column_stack([x[keep], -u[keep, n]])
    out.setflags(write=False)
    return out


def cylinder_points(Y, r: float, samples: int = DEFAULT_SAMPLES, seed: int = 0,
                    forward: bool = False) -> np.ndarray:
    """Low-discrepancy points in ``C_r(Y)``; with ``forward`` the hat cylinder
    ``B_r(y) x (s - r^2, s + r^2)``."""
    Y = np.asarray(Y, dtype=float)
    n = Y.size - 1
    off = _cylinder_offsets(n, samples, seed)
    P = np.empty_like(off)
    P[:, :n] = Y[:n] + r * off[:, :n]
    if forward:
        P[:, n] = Y[n] + r * r * (2 * off[:, n] + 1)
    else:
        P[:, n] = Y[n] + r * r * off[:, n]
    return P


# ---------------------------------------------------------------------------
# cylinders and condition (A)
# ---------------------------------------------------------------------------

def cylinder_deficit(spec: DomainSpec, Y, r: float, samples: int = DEFAULT_SAMPLES,
                     seed: int = 0) -> MeasureReport:
    """Fraction of ``C_r(Y)`` lying outside the domain."""
    if not r > 0:
        raise ValueError("radius must be positive")
    P = cylinder_points(Y, r, samples, seed)
    outside = ~spec.contains(P)
    p = float(outside.mean())
    return MeasureReport(np.asarray(Y, dtype=float), float(r), p, _binomial_ci(p, len(P)), len(P))


def default_radii(spec: DomainSpec, levels: int = 10) -> list:
    return [spec.diameter * 2.0 ** -j for j in range(levels + 1)]


@dataclass
class ConditionAResult:
    theta0_hat: float
    worst: MeasureReport
    passed: bool
    theta_floor: float
    reports: list

    def __iter__(self):
        yield self.theta0_hat
        yield self.worst


def check_condition_A(spec: DomainSpec, boundary_samples: int = 64, radii: Sequence | None = None,
                      samples: int = DEFAULT_SAMPLES, theta_floor: float = DEFAULT_THETA_FLOOR,
                      seed: int = 0, points: np.ndarray | None = None) -> ConditionAResult:
    """Smallest exterior cylinder fraction over parabolic-boundary samples and radii."""
    radii = default_radii(spec) if radii is None else list(radii)
    if not radii:
        raise ValueError("radii must be nonempty")
    pts = spec.parabolic_boundary(boundary_samples) if points is None else np.asarray(points, float)
    if len(pts) == 0:
        raise ValueError("no parabolic boundary samples available")
    reports = []
    worst = None
    for Y in pts:
        for r in radii:
            rep = cylinder_deficit(spec, Y, r, samples, seed)
            reports.append(rep)
            if worst is None or rep.ratio < worst.ratio:
                worst = rep
    worst.witness = (tuple(worst.center), worst.scale)
    theta0 = worst.ratio
    passed = theta0 > theta_floor
    logger.info("condition A on %s: theta0_hat=%.4f at %s r=%.3g (%s)", spec.name, theta0,
                np.round(worst.center, 4), worst.scale, "PASS" if passed else "FAIL")
    return ConditionAResult(theta0, worst, passed, theta_floor, reports)


def interior_measure_check(spec: DomainSpec, X, theta0: float, r: float,
                           samples: int = DEFAULT_SAMPLES, seed: int = 0,
                           rtol: float = 1e-9) -> tuple[MeasureReport, bool]:
    """Exterior fraction of ``C_r(X)`` against the bound ``theta0 2^(-n-2)``.

    Valid only for ``r >= 4 d(X) / theta0``.
    """
    X = np.asarray(X, dtype=float)
    rho = float(spec.dist(X))
    threshold = 4 * rho / theta0
    if r < threshold * (1 - rtol):
        raise PreconditionError(f"radius {r:g} below the threshold 4*rho/theta0 = {threshold:g}")
    rep = cylinder_deficit(spec, X, r, samples, seed)
    bound = theta0 * 2.0 ** (-(X.size - 1) - 2)
    rep.flags.update(bound=bound, rho=rho, threshold=threshold)
    return rep, rep.ratio > bound


# ---------------------------------------------------------------------------
# heat kernel and heat balls
# ---------------------------------------------------------------------------

def heat_kernel(n: int, x, t, return_flag: bool = False):
    """Fundamental solution of the heat equation, zero for ``t <= 0``.

    Values above ``KERNEL_CAP`` are clipped; ``return_flag`` also returns a
    boolean array marking the clipped entries.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    r2 = np.sum(x * x, axis=-1) if x.ndim and x.shape[-1] == n else x * x
    pos = t > 0
    ts = np.where(pos, t, 1.0)
    with np.errstate(over="ignore", divide="ignore"):
        logF = -0.5 * n * np.log(4 * np.pi * ts) - r2 / (4 * ts)
    singular = pos & (logF > np.log(KERNEL_CAP))
    val = np.where(pos, np.exp(np.minimum(logF, np.log(KERNEL_CAP))), 0.0)
    if return_flag:
        return val, singular
    return val


def heat_ball_contains(center, r: float, Y) -> np.ndarray:
    """``F(center - Y) >= r`` via the log form (no overflow)."""
    if not r > 0:
        raise ValueError("level must be positive")
    center = np.asarray(center, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = center.size - 1
    tau = center[-1] - Y[..., -1]
    z = center[:-1] - Y[..., :-1]
    pos = tau > 0
    ts = np.where(pos, tau, 1.0)
    with np.errstate(over="ignore"):
        lhs = -0.5 * n * np.log(4 * np.pi * ts) - np.sum(z * z, axis=-1) / (4 * ts)
    return pos & (lhs >= np.log(r))


def heat_ball_box(n: int, r: float) -> tuple[float, float]:
    """Time depth and spatial radius of ``E(r)`` (centered at the origin)."""
    s = r ** (-1.0 / n)
    return s * s / (4 * np.pi), s * np.sqrt(n / (2 * np.pi * np.e))


def heat_ball_radius_profile(n: int, t) -> np.ndarray:
    """Spatial radius of the ``E(1)`` slice at time ``t`` in ``(-1/(4 pi), 0)``."""
    t = np.asarray(t, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = 2 * n * t * np.log(-4 * np.pi * t)
    return np.sqrt(np.clip(np.nan_to_num(val, nan=0.0), 0, None))


def unit_ball_volume(n: int) -> float:
    return float(np.pi ** (n / 2) / special.gamma(n / 2 + 1))


def unit_cylinder_volume(n: int) -> float:
    """``|C_1|``: unit ball volume times unit time span."""
    return unit_ball_volume(n)


@functools.lru_cache(maxsize=8)
def heat_ball_volume_exact(n: int) -> float:
    """``|E(1)|`` by one-dimensional quadrature of the slice volumes."""
    wn = unit_ball_volume(n)
    val, _ = integrate.quad(lambda t: wn * heat_ball_radius_profile(n, t) ** n,
                            -1 / (4 * np.pi), 0, limit=200, epsabs=1e-14, epsrel=1e-12)
    return float(val)


def _heat_ball_points(n: int, r: float, samples: int, seed: int) -> tuple[np.ndarray, float]:
    depth, rad = heat_ball_box(n, r)
    u = unit_qmc(n + 1, samples, seed)
    P = np.empty_like(u)
    P[:, :n] = rad * (2 * u[:, :n] - 1)
    P[:, n] = -depth * u[:, n]
    return P, (2 * rad) ** n * depth


def heat_ball_volume(n: int, r: float = 1.0, samples: int = 2 ** 20, seed: int = 0) -> tuple[float, float]:
    """Sampled ``|E(r)|`` with a 95% half-width, over the closed-form bounding box."""
    if not r > 0:
        raise ValueError("level must be positive")
    P, box = _heat_ball_points(n, r, samples, seed)
    inside = heat_ball_contains(np.zeros(n + 1), r, P)
    p = float(inside.mean())
    return p * box, _binomial_ci(p, len(P)) * box


@functools.lru_cache(maxsize=8)
def cached_constants(n: int) -> dict:
    """``|E(1)|`` (sampled and quadrature) and ``|C_1|`` for dimension ``n``."""
    vol, ci = heat_ball_volume(n, 1.0, 2 ** 20, seed=12345)
    return dict(E1=heat_ball_volume_exact(n), E1_sampled=vol, E1_ci=ci, C1=unit_cylinder_volume(n))


# ---------------------------------------------------------------------------
# constants linking cylinders and heat balls
# ---------------------------------------------------------------------------

def cylinder_heatball_deficit(n: int, theta: float) -> float:
    """``|C_theta \\ E(1)| / |C_theta|`` with both sets sharing their top center."""
    if theta <= 0:
        return 0.0

    def integrand(t):
        frac = np.minimum(1.0, heat_ball_radius_profile(n, t) / theta)
        return 1.0 - frac ** n

    lo = -theta * theta
    pts = [p for p in (-1 / (4 * np.pi), -1 / (4 * np.pi * np.e)) if lo < p < 0]
    val, _ = integrate.quad(integrand, lo, 0, points=pts or None, limit=200, epsabs=1e-13)
    return float(val / theta ** 2)


@functools.lru_cache(maxsize=64)
def theta_for_heat_ball_fit(n: int, theta0: float, tol: float = 1e-3) -> float:
    """Largest ``theta`` in ``(0, 1)`` whose cylinder misses at most ``theta0/4`` of itself in ``E(1)``."""
    if not 0 < theta0 < 1:
        raise ValueError("theta0 must lie in (0, 1)")
    target = theta0 / 4
    grid = np.linspace(0.01, 1.0, 100)
    vals = np.array([cylinder_heatball_deficit(n, g) for g in grid])
    ok = np.nonzero(vals <= target)[0]
    if len(ok) == 0:
        lo, hi = 0.0, grid[0]
    else:
        i = ok[-1]
        if i == len(grid) - 1:
            return 1.0
        lo, hi = grid[i], grid[i + 1]
    while hi - lo > tol * 1e-2:
        mid = 0.5 * (lo + hi)
        if cylinder_heatball_deficit(n, mid) <= target:
            lo = mid
        else:
            hi = mid
    return float(lo)


def _shell_tail_bound(n, lam, k0, theta):
    c = cached_constants(n)
    return (lam ** k0) ** (-1 - 2 / n) * c["E1"] / (theta ** (n + 2) * c["C1"])


def shell_offset_k0(n: int, lam: float, theta: float, theta0: float) -> int:
    """Smallest ``k0 >= 1`` making the outer-shell cylinder share at most ``theta0/4``."""
    if not lam > 1:
        raise ValueError("lambda must exceed 1")
    c = cached_constants(n)
    need = np.log(c["E1"] / (theta ** (n + 2) * c["C1"]) / (theta0 / 4)) / ((1 + 2 / n) * np.log(lam))
    k0 = max(1, int(np.ceil(need - 1e-12)))
    while _shell_tail_bound(n, lam, k0, theta) > theta0 / 4:
        k0 += 1
    while k0 > 1 and _shell_tail_bound(n, lam, k0 - 1, theta) <= theta0 / 4:
        k0 -= 1
    return k0


def theta1_predicted(n: int, theta0: float, theta: float) -> float:
    c = cached_constants(n)
    return theta0 * theta ** (n + 2) / 2 * c["C1"] / c["E1"]


# ---------------------------------------------------------------------------
# condition (B) shells
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShellQuery:
    center: tuple
    lam: float
    k0: int
    k: int

    def __post_init__(self):
        if not self.lam > 1:
            raise ValueError("lambda must exceed 1")
        if self.k0 < 1 or self.k < 0:
            raise ValueError("k0 >= 1 and k >= 0 required")

    @property
    def levels(self) -> tuple[float, float]:
        step = self.k0 * np.log(self.lam)
        with np.errstate(over="ignore"):
            return float(np.exp(self.k * step)), float(np.exp((self.k + 1) * step))


def shell_points(q: ShellQuery, samples: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray, float]:
    """Sample points of the bounding box of shell ``q`` and the shell mask."""
    Y0 = np.asarray(q.center, dtype=float)
    n = Y0.size - 1
    lo, hi = q.levels
    log_lo = q.k * q.k0 * np.log(q.lam)
    depth = np.exp(-2 * log_lo / n) / (4 * np.pi)
    if depth < 1e-12 * max(1.0, abs(Y0[-1])) or not np.isfinite(depth):
        raise ScaleFloorError(f"shell k={q.k} has time depth {depth:.3g}, below the float resolution at t={Y0[-1]:g}")
    rad = np.sqrt(depth * 4 * np.pi) * np.sqrt(n / (2 * np.pi * np.e))
    u = unit_qmc(n + 1, samples, seed)
    P = np.empty_like(u)
    P[:, :n] = Y0[:n] + rad * (2 * u[:, :n] - 1)
    P[:, n] = Y0[n] - depth * u[:, n]
    # relative coordinates keep the membership test accurate at tiny scales
    rel = np.empty_like(u)
    rel[:, :n] = rad * (2 * u[:, :n] - 1)
    rel[:, n] = -depth * u[:, n]
    origin = np.zeros(n + 1)
    in_lo = _contains_log(origin, log_lo, rel)
    in_hi = _contains_log(origin, (q.k + 1) * q.k0 * np.log(q.lam), rel)
    return P, in_lo & ~in_hi, (2 * rad) ** n * depth


def _contains_log(center, log_level, Y):
    n = center.size - 1
    tau = center[-1] - Y[..., -1]
    z = center[:-1] - Y[..., :-1]
    pos = tau > 0
    ts = np.where(pos, tau, 1.0)
    lhs = -0.5 * n * np.log(4 * np.pi * ts) - np.sum(z * z, axis=-1) / (4 * ts)
    return pos & (lhs >= log_level)


def shell_measure_deficit(spec: DomainSpec, q: ShellQuery, samples: int = DEFAULT_SAMPLES,
                          seed: int = 0) -> MeasureReport:
    """Exterior fraction of the heat-ball shell ``q``."""
    P, shell, box = shell_points(q, samples, seed)
    count = int(shell.sum())
    if count == 0:
        raise ScaleFloorError("shell sample is empty")
    outside = ~spec.contains(P[shell])
    p = float(outside.mean())
    return MeasureReport(np.asarray(q.center, float), q.k, p, _binomial_ci(p, count), count,
                         flags=dict(shell_volume=box * count / len(P)))


@dataclass
class ConditionBResult:
    k0: int
    theta: float
    theta1_predicted: float
    theta1_hat: float
    reports: list
    passed: bool
    partial: bool
    k_resolved: int


def check_condition_B(spec: DomainSpec, Y0, lam: float, theta0: float, k_max: int = 8,
                      samples: int = DEFAULT_SAMPLES, seed: int = 0) -> ConditionBResult:
    """Shell deficits at ``Y0`` against the constant implied by ``theta0``."""
    n = spec.n
    theta = theta_for_heat_ball_fit(n, theta0)
    k0 = shell_offset_k0(n, lam, theta, theta0)
    th1 = theta1_predicted(n, theta0, theta)
    reports = []
    partial = False
    for k in range(1, k_max + 1):
        try:
            reports.append(shell_measure_deficit(spec, ShellQuery(tuple(np.asarray(Y0, float)), lam, k0, k),
                                                 samples, seed))
        except ScaleFloorError as exc:
            logger.info("condition B truncated at k=%d: %s", k, exc)
            partial = True
            break
    measured = min((r.ratio for r in reports), default=float("nan"))
    passed = bool(reports) and measured >= th1
    return ConditionBResult(k0, theta, th1, measured, reports, passed, partial, len(reports))


# ---------------------------------------------------------------------------
# coefficient oscillation and weighted norms
# ---------------------------------------------------------------------------

def vmo_modulus(a: Callable, R: float, samples: int, bbox: tuple, levels: int = 4,
                time_slices: int = 8, seed: int = 0) -> float:
    """Sampled ``omega_a(R)``: largest mean oscillation over balls of radius at most ``R``.

    ``a(x, t)`` may return scalars or matrices per point.  Averages are
    taken over the spatial ball on each time slice, then over time.
    """
    space, (t0, t1) = bbox
    n = len(space)
    lo = np.array([s[0] for s in space])
    hi = np.array([s[1] for s in space])
    centers = unit_qmc(n + 1, samples, seed + 1)
    inner = _cylinder_offsets(n, 256, seed)[:, :n]
    tfrac = (np.arange(time_slices) + 0.5) / time_slices
    best = 0.0
    for j in range(levels):
        r = R * 2.0 ** -j
        for c in centers:
            x0 = lo + c[:n] * (hi - lo)
            s0 = t0 + c[n] * (t1 - t0)
            osc = 0.0
            for tf in tfrac:
                t = s0 - r * r * tf
                x = x0 + r * inner
                vals = np.asarray(a(x, np.full(len(x), t)), dtype=float).reshape(len(x), -1)
                dev = vals - vals.mean(axis=0)
                osc += np.linalg.norm(dev, axis=1).mean()
            best = max(best, osc / time_slices)
    return float(best)


@dataclass(frozen=True)
class WeightedNormParams:
    beta: float
    p: float
    p0: float | None = None

    def __post_init__(self):
        if not 0 < self.beta < 2:
            raise ValueError("beta must lie in (0, 2)")
        if not self.p > 0:
            raise ValueError("p must be positive")


def weighted_norm_F(f, spec: DomainSpec, params: WeightedNormParams, divergence: bool = False,
                    centers: np.ndarray | None = None, radii: Sequence | None = None,
                    boundary_samples: int = 32, samples: int = 2 ** 12, seed: int = 0) -> float:
    """Sampled weighted norm of data ``f`` (callable ``(x, t) -> values``).

    With ``divergence`` the argument is a sequence ``(f0, f1, ..., fn)`` and
    the result is ``|f0|_{beta, p0} + sum |fi|_{1+beta, 2 p0}``.
    """
    if divergence:
        p0 = params.p0 if params.p0 is not None else params.p
        f0, *fi = f
        total = weighted_norm_F(f0, spec, WeightedNormParams(params.beta, p0), False,
                                centers, radii, boundary_samples, samples, seed)
        for g in fi:
            total += weighted_norm_F(g, spec, WeightedNormParams(min(1 + params.beta, 2 - 1e-12), 2 * p0),
                                     False, centers, radii, boundary_samples, samples, seed)
        return float(total)
    if not callable(f):
        raise ValueError("data must be a callable defined on the domain")
    pts = spec.parabolic_boundary(boundary_samples) if centers is None else np.asarray(centers, float)
    radii = default_radii(spec, 6) if radii is None else list(radii)
    beta, p = params.beta, params.p
    best = 0.0
    for Y in pts:
        for r in radii:
            P = cylinder_points(Y, r, samples, seed, forward=True)
            P = P[spec.contains(P)]
            if len(P) == 0:
                continue
            vals = np.asarray(f(P[:, :-1], P[:, -1]), dtype=float)
            if not np.all(np.isfinite(vals)):
                raise ValueError("data is undefined at sampled points of the domain")
            w = spec.dist(P) ** (2 - beta) * np.abs(vals)
            best = max(best, float(np.mean(w ** p) ** (1 / p)))
    return best
