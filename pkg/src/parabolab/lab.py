"""Quantitative experiments on boundary behaviour of solutions.

Caloric-measure ratios in cylinders, iterated contraction over shrinking
hat cylinders, decay profiles ``M(h) = sup{|u| : d <= h}`` with their
log-log exponent, the weighted supremum ``sup d^-beta |u|``, the 1-D
example with logarithmic boundary behaviour and a randomized
maximum-principle suite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse, stats
from scipy.sparse import linalg as spla

from . import geometry
from .grid_domain import DomainSpec, Grid, make_domain, make_grid, parabolic_distance
from .solver import (CoefficientSet, Discretization, GridCoefficients, Solution, discretize,
                     heat_operator, solve_dirichlet)

logger = logging.getLogger(__name__)


class DegenerateProfileError(ValueError):
    """The profile is identically zero: the solution vanishes exactly."""


# ---------------------------------------------------------------------------
# caloric ratio and contraction
# ---------------------------------------------------------------------------

@dataclass
class GrowthExperiment:
    center: np.ndarray
    r: float
    ratio: float
    exterior_density: float
    density_ci: float
    h: float
    m_matrix: bool


def cylinder_section(spec: DomainSpec, X0, r: float) -> DomainSpec:
    """``Q ∩ C_r(X0)`` as a domain spec."""
    X0 = np.asarray(X0, dtype=float)
    x0, t0 = X0[:-1], X0[-1]
    n = spec.n

    def indicator(x, t):
        cyl = (np.linalg.norm(x - x0, axis=-1) < r) & (t > t0 - r * r) & (t < t0)
        return cyl & spec.indicator(x, t)

    bbox = (tuple((c - r, c + r) for c in x0), (t0 - r * r, t0))
    return DomainSpec(f"{spec.name}∩C_r", dict(r=r), n, indicator, bbox, min_feature=r)


def caloric_ratio(spec: DomainSpec, coeffs=None, X0=None, r: float = 0.25, cells: int = 16,
                  samples: int = 2 ** 14) -> GrowthExperiment:
    """Value at ``X0`` of the solution in ``Q ∩ C_r(X0)`` with data 1 on the
    cylinder wall and 0 on the boundary of ``Q``.

    ``X0`` is the top center of the cylinder and must belong to the closure
    of ``Q`` away from its parabolic boundary.
    """
    coeffs = heat_operator() if coeffs is None else coeffs
    X0 = np.asarray(X0, dtype=float)
    probe = X0.copy()
    probe[-1] -= 1e-9 * r * r
    if not bool(spec.contains(probe)):
        raise ValueError("X0 must lie in Q or on its top, not on the parabolic boundary")
    h = r / cells
    sec = cylinder_section(spec, X0, r)
    grid = make_grid(sec, h)
    disc = discretize(sec, grid, check_resolution=False)
    # data: 0 on parabolic nodes touching the exterior of Q, 1 on the rest (cylinder wall)
    g = np.zeros(grid.shape)
    par = np.argwhere(disc.parabolic)
    x = grid.x_axes
    ts = grid.t_axis
    for idx in par:
        P = np.array([x[i][j] for i, j in enumerate(idx[1:])] + [ts[idx[0]]])
        nbrs = [P.copy()]
        for ax in range(grid.n + 1):
            step = grid.tau if ax == grid.n else h
            for s in (1, -1):
                Q = P.copy()
                Q[ax] += s * step
                nbrs.append(Q)
        touches = not np.all(spec.contains(np.array(nbrs[1:])))
        g[tuple(idx)] = 0.0 if touches else 1.0
    sol = solve_dirichlet(coeffs, disc, None, boundary_values=g)
    top = X0.copy()
    top[-1] -= 0.5 * grid.tau
    ratio = sol.at(top)
    dens = geometry.cylinder_deficit(spec, X0, r, samples)
    return GrowthExperiment(X0, r, float(ratio), dens.ratio, dens.ci_halfwidth, h, sol.m_matrix)


@dataclass
class GrowthIteration:
    radii: list
    suprema: list
    rate: float
    beta1: float
    delta0: float


def hat_cylinder_sup(sol: Solution, disc: Discretization, X0, r: float) -> float:
    """``sup |u|`` over occupied nodes of ``B_r(x0) x (t0 - r^2, t0 + r^2)``."""
    g = sol.grid
    X0 = np.asarray(X0, dtype=float)
    xs = g.space_coords()
    near = np.linalg.norm(xs - X0[:-1], axis=-1) < r
    tsel = np.abs(g.t_axis - X0[-1]) < r * r
    if not tsel.any() or not near.any():
        return float("nan")
    block = np.abs(sol.u[tsel][:, near]) * disc.occupancy[tsel][:, near]
    return float(block.max())


def growth_iteration(sol: Solution, disc: Discretization, X0, r: float, levels: int = 5,
                     delta0: float = 0.5) -> GrowthIteration:
    """Suprema over ``Ĉ_{delta0^m r}(X0)`` and their geometric rate."""
    radii, sups = [], []
    for m in range(levels):
        rho = r * delta0 ** m
        if rho < 2 * sol.grid.h:
            break
        radii.append(rho)
        sups.append(hat_cylinder_sup(sol, disc, X0, rho))
    if len(radii) < 3:
        raise ValueError(f"only {len(radii)} resolvable levels (need 3)")
    s = np.array(sups)
    if np.all(s == 0):
        return GrowthIteration(radii, sups, 0.0, float("inf"), delta0)
    pos = s > 0
    fit = stats.linregress(np.arange(len(s))[pos], np.log(s[pos]))
    rate = float(np.exp(fit.slope))
    return GrowthIteration(radii, sups, rate, float(np.log(rate) / np.log(delta0)), delta0)


# ---------------------------------------------------------------------------
# decay profiles
# ---------------------------------------------------------------------------

@dataclass
class DecayProfile:
    ladder: np.ndarray
    M: np.ndarray
    counts: np.ndarray
    h_grid: float
    flagged: np.ndarray = None

    def __post_init__(self):
        if self.flagged is None:
            self.flagged = self.counts < 10

    def rows(self) -> list:
        return [dict(h=float(a), M=float(b), count=int(c), flagged=bool(f))
                for a, b, c, f in zip(self.ladder, self.M, self.counts, self.flagged)]


@dataclass
class ExponentFit:
    beta_est: float
    stderr: float
    h_range: tuple
    r2: float
    points: int

    def predict(self, h: float, scale: float = 1.0) -> float:
        lo, hi = self.h_range
        if not lo <= h <= hi:
            raise ValueError(f"h={h:g} lies outside the fitted ladder [{lo:g}, {hi:g}]")
        return scale * h ** self.beta_est

    @property
    def lower_2sigma(self) -> float:
        return self.beta_est - 2 * self.stderr


def default_ladder(h_grid: float, d_max: float, ratio: float = np.sqrt(2)) -> np.ndarray:
    """Geometric ladder from ``4 h`` up to ``d_max``."""
    start = 4 * h_grid
    if d_max <= start:
        return np.array([start])
    count = int(np.floor(np.log(d_max / start) / np.log(ratio))) + 1
    return start * ratio ** np.arange(count)


def decay_profile(u, dist, ladder=None, occupancy=None, h_grid: float | None = None) -> DecayProfile:
    """``M(h) = sup{|u| : d <= h}`` on a ladder of distances."""
    u = u.u if isinstance(u, Solution) else np.asarray(u)
    d = dist.d if hasattr(dist, "d") else np.asarray(dist)
    if h_grid is None:
        h_grid = dist.grid.h if hasattr(dist, "grid") else float(np.min(d[d > 0]))
    occ = np.ones(u.shape, dtype=bool) if occupancy is None else occupancy
    dd = d[occ]
    uu = np.abs(u[occ])
    if ladder is None:
        ladder = default_ladder(h_grid, float(dd.max()))
    ladder = np.asarray(ladder, dtype=float)
    order = np.argsort(dd)
    ds, us = dd[order], uu[order]
    running = np.maximum.accumulate(us)
    pos = np.searchsorted(ds, ladder, side="right")
    M = np.where(pos > 0, running[np.maximum(pos - 1, 0)], 0.0)
    edges = np.r_[0.0, ladder]
    counts = np.array([int(((ds > lo) & (ds <= hi)).sum()) for lo, hi in zip(edges[:-1], edges[1:])])
    return DecayProfile(ladder, M, counts, float(h_grid))


def estimate_beta(profile: DecayProfile, min_h: float | None = None, max_h: float | None = None) -> ExponentFit:
    """Least-squares slope of ``log M`` against ``log h`` over usable bands.

    Bands below ``2 h`` (grid spacing), empty or flagged bands are dropped.
    """
    if np.all(profile.M == 0):
        raise DegenerateProfileError("profile is identically zero (exact zero solution)")
    lo = 2 * profile.h_grid if min_h is None else min_h
    hi = np.inf if max_h is None else max_h
    use = (profile.ladder >= lo) & (profile.ladder <= hi) & (profile.M > 0) & ~profile.flagged
    if use.sum() < 4:
        raise ValueError(f"only {int(use.sum())} usable bands (need 4)")
    x = np.log(profile.ladder[use])
    y = np.log(profile.M[use])
    fit = stats.linregress(x, y)
    return ExponentFit(float(fit.slope), float(fit.stderr), (float(profile.ladder[use].min()),
                       float(profile.ladder[use].max())), float(fit.rvalue ** 2), int(use.sum()))


def weighted_sup(u, dist, beta: float, h_grid: float | None = None, occupancy=None) -> tuple[float, float]:
    """``max d^-beta |u|`` over nodes with ``d >= 2h``; the excluded maximum is returned second."""
    if not 0 < beta < 2:
        raise ValueError("beta must lie in (0, 2)")
    u = u.u if isinstance(u, Solution) else np.asarray(u)
    d = dist.d if hasattr(dist, "d") else np.asarray(dist)
    if h_grid is None:
        h_grid = dist.grid.h
    occ = np.ones(u.shape, dtype=bool) if occupancy is None else occupancy
    keep = occ & (d >= 2 * h_grid)
    near = occ & (d > 0) & (d < 2 * h_grid)
    main = float(np.max(np.abs(u[keep]) / d[keep] ** beta)) if keep.any() else 0.0
    excl = float(np.max(np.abs(u[near]) / d[near] ** beta)) if near.any() else 0.0
    return main, excl


# ---------------------------------------------------------------------------
# 1-D example with logarithmic boundary behaviour
# ---------------------------------------------------------------------------

def _g(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)


def _g1(s):
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return np.where(s > 0, _g(s) / np.where(s > 0, s, 1.0) ** 2, 0.0)


def _g2(s):
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        ss = np.where(s > 0, s, 1.0)
        return np.where(s > 0, _g(s) * (1 - 2 * ss) / ss ** 4, 0.0)


def step(x):
    """Smooth cutoff: 1 for ``x <= 1/3``, 0 for ``x >= 1/2``, with first and second derivatives."""
    x = np.asarray(x, dtype=float)
    s = 6 * (0.5 - x)
    p, q = _g(s), _g(1 - s)
    p1, q1 = _g1(s), -_g1(1 - s)
    p2, q2 = _g2(s), _g2(1 - s)
    S = p + q
    val = p / S
    dval_ds = (p1 * S - p * (p1 + q1)) / S ** 2
    # second derivative of p/S in s
    num = p1 * S - p * (p1 + q1)
    dnum = p2 * S + p1 * (p1 + q1) - p1 * (p1 + q1) - p * (p2 + q2)
    d2val_ds2 = (dnum * S - 2 * num * (p1 + q1)) / S ** 3
    return val, -6 * dval_ds, 36 * d2val_ds2


def example_closed_form(x):
    """``u = -eta/ln x``, ``b = (1 + 2/ln x)/x`` and ``f = u'' + b u'`` on ``(0, 1/2)``."""
    x = np.asarray(x, dtype=float)
    eta, e1, e2 = step(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        L = np.log(x)
        v = -1 / L
        v1 = 1 / (x * L ** 2)
        v2 = -1 / (x ** 2 * L ** 2) - 2 / (x ** 2 * L ** 3)
        b = (1 + 2 / L) / x
    u = eta * v
    u1 = e1 * v + eta * v1
    u2 = e2 * v + 2 * e1 * v1 + eta * v2
    f = u2 + b * u1
    # on x <= 1/3 the two singular terms cancel exactly
    f = np.where(x <= 1 / 3, 0.0, f)
    return dict(u=np.where(x > 0, u, 0.0), du=u1, d2u=u2, b=b, f=f)


def graded_grid(x_min: float = 1e-6, ratio: float = 1.1, h_max: float = 1e-3, x_max: float = 0.5) -> np.ndarray:
    """Node 0, then geometric spacing from ``x_min`` until it reaches ``h_max``, then uniform."""
    nodes = [0.0, x_min]
    while nodes[-1] < x_max:
        step_ = min(nodes[-1] * (ratio - 1), h_max)
        nodes.append(min(nodes[-1] + step_, x_max))
    return np.array(nodes)


def solve_bvp_1d(x: np.ndarray, b: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Second-order nonuniform central differences for ``u'' + b u' = f``, ``u = 0`` at both ends."""
    hm = np.diff(x)[:-1]
    hp = np.diff(x)[1:]
    bi = b[1:-1]
    lower = 2 / (hm * (hm + hp)) - bi * hp / (hm * (hm + hp))
    upper = 2 / (hp * (hm + hp)) + bi * hm / (hp * (hm + hp))
    diag = -2 / (hm * hp) + bi * (hp - hm) / (hm * hp)
    A = sparse.diags([lower[1:], diag, upper[:-1]], [-1, 0, 1], format="csc")
    u = np.zeros_like(x)
    u[1:-1] = spla.spsolve(A, f[1:-1])
    return u


def solve_bvp_log(x: np.ndarray, b: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Same problem in the coordinate ``z = -1/ln x`` (nodes are the images of ``x``).

    With ``x = exp(-1/z)`` the equation becomes
    ``u_zz + u_z ((2z - 1) + b x) / z^2 = f x^2 / z^4``; for the drift of the
    log example the first-order term cancels and ``-1/ln x`` is linear in ``z``,
    so the logarithmic boundary layer costs nothing to resolve.
    """
    x = np.asarray(x, dtype=float)
    if not (x[0] == 0 and np.all(x[1:] < 1)):
        raise ValueError("log coordinate needs nodes in [0, 1) starting at 0")
    with np.errstate(divide="ignore"):
        z = np.where(x > 0, -1 / np.log(np.where(x > 0, x, 0.5)), 0.0)
    bz = np.zeros_like(z)
    fz = np.zeros_like(z)
    inner = z > 0
    bz[inner] = ((2 * z[inner] - 1) + b[inner] * x[inner]) / z[inner] ** 2
    fz[inner] = f[inner] * x[inner] ** 2 / z[inner] ** 4
    return solve_bvp_1d(z, bz, fz)


def example_1d(x: np.ndarray | None = None, betas=(0.1, 0.05), window=(1e-4, 1 / 3)) -> dict:
    """Closed forms, numerical solution and weighted behaviour of the log example."""
    x = graded_grid() if x is None else np.asarray(x, dtype=float)
    hs = np.diff(x[1:])
    graded = bool(np.ptp(hs) > 1e-12 * hs.max())
    if not graded:
        logger.warning("grid is not graded towards 0; the log singularity is poorly resolved")
    cf = example_closed_form(x)
    b = np.nan_to_num(cf["b"])
    u_num = solve_bvp_log(x, b, cf["f"])
    u_xfd = solve_bvp_1d(x, b, cf["f"])
    sel = (x >= window[0]) & (x <= window[1])
    err = float(np.abs(u_num[sel] - cf["u"][sel]).max())
    err_x = float(np.abs(u_xfd[sel] - cf["u"][sel]).max())
    fine = example_closed_form(graded_grid(ratio=1.05, h_max=5e-4))
    trend = {}
    for beta in betas:
        w = lambda z: z ** (-beta) / (-np.log(z))
        xstar = float(np.exp(-1 / beta))
        trend[str(beta)] = dict(at_1e_3=float(w(1e-3)), at_1e_6=float(w(1e-6)),
                                increases_1e_3_to_1e_6=bool(w(1e-6) > w(1e-3)),
                                minimizer=xstar,
                                increases_below_minimizer=bool(w(xstar * 1e-3) > w(xstar)))
    return dict(u_at_0_1=float(example_closed_form(np.array([0.1]))["u"][0]),
                u_at_0=float(cf["u"][0]), u_at_half=float(example_closed_form(np.array([0.5]))["u"][0]),
                sup_err=err, sup_err_x_coordinate=err_x, sup_f=float(np.abs(cf["f"]).max()), sup_f_fine=float(np.abs(fine["f"]).max()),
                nodes=int(len(x)), graded=graded, weighted=trend, x=x, u_num=u_num, u_exact=cf["u"])


# ---------------------------------------------------------------------------
# maximum-principle suite
# ---------------------------------------------------------------------------

@dataclass
class SuiteResult:
    trials: int
    clean: int
    max_violations: int
    min_violations: int
    comparison_violations: int
    sandwich_violations: int
    flagged_violations: int
    records: list = field(default_factory=list)

    @property
    def clean_fraction(self) -> float:
        return self.clean / self.trials if self.trials else 0.0


def _random_operator(rng, n: int, form: str):
    amp = rng.uniform(0, 0.4)
    k = rng.uniform(0.5, 3, size=n)
    off = rng.uniform(-0.3, 0.3) if n > 1 else 0.0
    bvec = rng.uniform(-3, 3, size=n)
    c0v = rng.uniform(0, 2)
    cvec = rng.uniform(-1, 1, size=n)

    def a(x, t, d):
        diag = 1 + amp * np.sin(np.sum(k * x, axis=-1) + 3 * t)
        A = diag[..., None, None] * np.eye(n)
        if n > 1:
            A[..., 0, 1] = A[..., 1, 0] = off * diag
        return A

    b = lambda x, t, d: bvec * np.cos(x[..., :1] + t)
    c0 = lambda x, t, d: c0v * (1 + np.sin(x[..., 0] * 2) ** 2)
    c = (lambda x, t, d: np.broadcast_to(cvec, x.shape)) if form == "divergence" else None
    return CoefficientSet(form=form, a=a, b=b, c=c, c0=c0, nu=0.5, name=f"random-{form}")


def _random_domain(rng):
    choice = rng.integers(4)
    if choice == 0:
        return make_domain("straight_cylinder", n=1, r=1.0, T=0.25), 1 / 16
    if choice == 1:
        return make_domain("half_space_slab", n=1, T=0.25), 1 / 16
    if choice == 2:
        return make_domain("straight_cylinder", n=2, r=1.0, T=0.25), 1 / 8
    return make_domain("wedge", angle=float(rng.uniform(0.6, 1.6) * np.pi), T=0.25), 1 / 8


def max_principle_suite(trials: int = 100, seed: int = 0, tol: float = 1e-10) -> SuiteResult:
    """Random admissible operator/domain pairs checked against the discrete maximum principle."""
    rng = np.random.default_rng(seed)
    res = SuiteResult(trials, 0, 0, 0, 0, 0, 0)
    for trial in range(trials):
        spec, h = _random_domain(rng)
        form = "divergence" if rng.random() < 0.3 else "nondivergence"
        op = _random_operator(rng, spec.n, form)
        disc = discretize(spec, make_grid(spec, h), check_resolution=False)
        shape = disc.grid.shape
        f_neg = -rng.random(shape)
        f_pos = rng.random(shape)
        f_mix = rng.standard_normal(shape)
        u_neg = solve_dirichlet(op, disc, f_neg)
        u_pos = solve_dirichlet(op, disc, f_pos)
        # comparison: L u1 = f_neg + f_pos >= f_neg = L u_neg
        u_sum = solve_dirichlet(op, disc, f_neg + f_pos)
        u_mp = solve_dirichlet(op, disc, np.maximum(f_mix, 0))
        u_mn = solve_dirichlet(op, disc, np.minimum(f_mix, 0))
        u_mix = solve_dirichlet(op, disc, f_mix)
        clean = all(s.m_matrix for s in (u_neg, u_pos, u_sum, u_mp, u_mn, u_mix))
        scale = max(1.0, float(np.abs(u_pos.u).max()), float(np.abs(u_neg.u).max()))
        v_max = bool(u_neg.u.max() > tol * scale)
        v_min = bool(u_pos.u.min() < -tol * scale)
        v_cmp = bool((u_sum.u - u_neg.u).min() < -tol * scale)
        v_sand = bool((u_mix.u - u_mp.u).max() > tol * scale or (u_mix.u - u_mn.u).min() < -tol * scale)
        bad = v_max or v_min or v_cmp or v_sand
        res.clean += clean
        if clean:
            res.max_violations += v_max
            res.min_violations += v_min
            res.comparison_violations += v_cmp
            res.sandwich_violations += v_sand
        else:
            res.flagged_violations += bad
        res.records.append(dict(trial=trial, domain=spec.name, form=form, clean=clean,
                                max_u_for_nonpositive_f=float(u_neg.u.max()), scale=scale, violation=bad))
    return res
