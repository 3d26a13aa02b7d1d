"""Monotone finite differences for parabolic operators on masked domains.

Operators are

    nondivergence:  u_t - a_ij D_ij u + b_i D_i u + c0 u
    divergence:     u_t - D_j(a_ij D_i u) + b_i D_i u - D_i(c_i u) + c0 u

discretized with implicit Euler in time.  Second-order terms use centered
differences (two-point fluxes in divergence form) with the sign-split
seven-point stencil for mixed derivatives; first-order terms are upwinded so
that off-diagonal entries stay nonpositive.  Every slice is assembled from a
stencil (offset -> weight field, plus a diagonal) which is shared by the
linear solve and by :func:`apply_operator`.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import linalg as spla

from .grid_domain import (FLAT_TOP, INTERIOR, PARABOLIC, BoundaryClass, DistanceField, DomainMask,
                          DomainSpec, Grid, classify_boundary, distance_field, rasterize)

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
MMATRIX_TOL = 1e-12


class ResolutionError(ValueError):
    """A cutoff or mollifier is thinner than the grid can represent."""


# ---------------------------------------------------------------------------
# discretized domain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Discretization:
    """Mask, boundary classes and distance field of one domain on one grid."""

    grid: Grid
    mask: DomainMask
    cls: BoundaryClass
    dist: DistanceField
    spec: DomainSpec | None = None

    @property
    def unknowns(self) -> np.ndarray:
        return self.cls.unknowns

    @property
    def parabolic(self) -> np.ndarray:
        return self.cls.parabolic

    @property
    def occupancy(self) -> np.ndarray:
        return self.mask.occupancy


def discretize(spec: DomainSpec, grid: Grid, check_resolution: bool = True) -> Discretization:
    mask = rasterize(spec, grid, check_resolution=check_resolution)
    cls = classify_boundary(mask)
    return Discretization(grid, mask, cls, distance_field(mask, cls), spec)


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------

@dataclass
class SliceCoeffs:
    """Coefficient values on one time slice; arrays over the spatial grid."""

    a: np.ndarray                   # (..., n, n)
    b: np.ndarray                   # (..., n)
    c: np.ndarray | None            # (..., n), divergence form only
    c0: np.ndarray                  # (...)


def _as_matrix(val, shape, n):
    if val is None:
        return np.broadcast_to(np.eye(n), shape + (n, n)).copy()
    val = np.asarray(val, dtype=float)
    if val.shape == shape or val.ndim == 0:
        return np.broadcast_to(val, shape)[..., None, None] * np.eye(n)
    return np.broadcast_to(val, shape + (n, n)).copy()


def _as_vector(val, shape, n):
    if val is None:
        return np.zeros(shape + (n,))
    val = np.asarray(val, dtype=float)
    if n == 1 and val.shape == shape:
        val = val[..., None]
    return np.broadcast_to(val, shape + (n,)).copy()


def _as_scalar(val, shape):
    if val is None:
        return np.zeros(shape)
    return np.broadcast_to(np.asarray(val, dtype=float), shape).copy()


@dataclass(frozen=True)
class CoefficientSet:
    """Coefficient fields given as callables ``(x, t, d) -> values``.

    ``x`` has shape ``(..., n)``, ``t`` is a scalar and ``d`` the distance
    field on the same points.  ``a`` may return scalars (times identity) or
    matrices; missing fields default to identity / zero.  ``gamma`` is the
    blow-up profile used by :func:`check_blowup`.
    """

    form: str = "nondivergence"
    a: Callable | None = None
    b: Callable | None = None
    c: Callable | None = None
    c0: Callable | None = None
    nu: float = 1.0
    gamma: Callable | None = None
    admissible: bool = True
    name: str = "heat"

    def __post_init__(self):
        if self.form not in ("divergence", "nondivergence"):
            raise ValueError("form must be 'divergence' or 'nondivergence'")
        if self.form == "nondivergence" and self.c is not None:
            raise ValueError("nondivergence operators carry no c_i")

    def evaluate(self, x, t, d) -> SliceCoeffs:
        shape, n = x.shape[:-1], x.shape[-1]
        call = lambda g: None if g is None else g(x, t, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            return SliceCoeffs(_as_matrix(call(self.a), shape, n), _as_vector(call(self.b), shape, n),
                               _as_vector(call(self.c), shape, n) if self.form == "divergence" else None,
                               _as_scalar(call(self.c0), shape))

    def slice_coefficients(self, disc: Discretization, m: int) -> SliceCoeffs:
        g = disc.grid
        return self.evaluate(g.space_coords(), float(g.t_axis[m]), disc.dist.d[m])


def heat_operator(form: str = "nondivergence") -> CoefficientSet:
    return CoefficientSet(form=form, name="heat")


@dataclass(frozen=True)
class GridCoefficients:
    """Coefficients stored as full grid arrays, time axis first."""

    form: str
    a: np.ndarray
    b: np.ndarray
    c0: np.ndarray
    c: np.ndarray | None = None
    name: str = "grid"

    def slice_coefficients(self, disc: Discretization, m: int) -> SliceCoeffs:
        return SliceCoeffs(self.a[m], self.b[m], None if self.c is None else self.c[m], self.c0[m])


def sample_coefficients(op, disc: Discretization) -> GridCoefficients:
    """Evaluate any operator on every slice and store the arrays."""
    slices = [op.slice_coefficients(disc, m) for m in range(disc.grid.nt)]
    c = np.stack([s.c for s in slices]) if op.form == "divergence" else None
    return GridCoefficients(op.form, np.stack([s.a for s in slices]), np.stack([s.b for s in slices]),
                            np.stack([s.c0 for s in slices]), c, getattr(op, "name", "grid"))


def cutoff(d, eps: float, rho: float = 1.0) -> np.ndarray:
    """Lipschitz cutoff: 0 for ``d < rho eps / 2``, 1 for ``d > rho eps``, linear between."""
    lo = 0.5 * rho * eps
    return np.clip((np.asarray(d, dtype=float) - lo) / lo, 0.0, 1.0)


@dataclass(frozen=True)
class RegularizedOperator:
    """Operator equal to ``base`` away from the boundary and to the heat operator near it.

    With ``eta`` the cutoff at fraction ``eps``: ``a -> eta a + (1 - eta) I``,
    ``b -> eta b``, ``c -> eta c`` and ``c0 -> eta c0 + grad(eta) . c``.
    For ``rho != 1`` the base coefficients are evaluated at ``(rho x, rho^2 t)``
    and the lower-order terms carry the factors ``rho`` and ``rho^2`` of the
    rescaled equation; the grid then lives in rescaled coordinates.
    """

    base: object
    rho: float = 1.0
    eps: float = 1.0

    def __post_init__(self):
        if not (0 < self.rho <= 1 and 0 < self.eps <= 1):
            raise ValueError("rho and eps must lie in (0, 1]")

    @property
    def form(self) -> str:
        return self.base.form

    @property
    def name(self) -> str:
        return f"{getattr(self.base, 'name', 'op')}^(rho={self.rho:g},eps={self.eps:g})"

    def eta(self, d) -> np.ndarray:
        # in rescaled coordinates the cutoff sits at eps
        return cutoff(d, self.eps)

    def slice_coefficients(self, disc: Discretization, m: int) -> SliceCoeffs:
        g = disc.grid
        rho = self.rho
        d = disc.dist.d[m]
        if isinstance(self.base, CoefficientSet):
            raw = self.base.evaluate(rho * g.space_coords(), rho * rho * float(g.t_axis[m]), rho * d)
        else:
            raw = self.base.slice_coefficients(disc, m)
        eta = self.eta(d)
        n = g.n
        a = eta[..., None, None] * raw.a + (1 - eta)[..., None, None] * np.eye(n)
        b = rho * eta[..., None] * np.nan_to_num(raw.b)
        c0 = rho * rho * eta * np.nan_to_num(raw.c0)
        c = None
        if raw.c is not None:
            craw = np.nan_to_num(raw.c)
            c = rho * eta[..., None] * craw
            grad = np.gradient(eta, g.h) if n > 1 else [np.gradient(eta, g.h)]
            c0 = c0 + rho * sum(grad[i] * craw[..., i] for i in range(n))
        return SliceCoeffs(a, b, c, c0)


def regularize_coeffs(coeffs, spec_or_disc, rho: float, eps: float) -> RegularizedOperator:
    """Cutoff regularization; refuses ramps thinner than two cells."""
    grid = spec_or_disc.grid if isinstance(spec_or_disc, Discretization) else spec_or_disc
    if isinstance(grid, Grid) and 0.5 * eps < 2 * grid.h:
        raise ResolutionError(f"cutoff ramp of width {0.5 * eps:g} is thinner than 2 cells (h={grid.h:g})")
    return RegularizedOperator(coeffs, rho, eps)


def mollify(field_: np.ndarray, grid: Grid, eps_m: float, time_axis: bool = True) -> np.ndarray:
    """Gaussian smoothing with spatial width ``eps_m`` and temporal width ``eps_m^2``.

    Trailing component axes (beyond the grid axes) are left alone.
    """
    if eps_m < 2 * grid.h - 1e-15:
        raise ResolutionError(f"mollifier width {eps_m:g} below 2h = {2 * grid.h:g}")
    arr = np.asarray(field_, dtype=float)
    sigma = [eps_m ** 2 / grid.tau if time_axis else 0.0] + [eps_m / grid.h] * grid.n
    sigma += [0.0] * (arr.ndim - grid.n - 1)
    return ndimage.gaussian_filter(arr, sigma, mode="nearest", truncate=3.0)


def check_blowup(coeffs: CoefficientSet, disc: Discretization) -> tuple[bool, float]:
    """``|b|, |c| <= gamma(d)/d`` on unknown nodes; returns (ok, worst excess ratio)."""
    if coeffs.gamma is None:
        return True, 0.0
    worst = 0.0
    for m in range(disc.grid.nt):
        sel = disc.unknowns[m]
        if not sel.any():
            continue
        s = coeffs.slice_coefficients(disc, m)
        d = disc.dist.d[m][sel]
        env = coeffs.gamma(d) / d
        for vec in (s.b, s.c):
            if vec is not None:
                mag = np.abs(vec[sel]).max(axis=-1)
                worst = max(worst, float(np.max(mag / env)))
    return worst <= 1 + 1e-12, worst


def check_ellipticity(op, disc: Discretization, samples: int = 16, seed: int = 0) -> tuple[bool, float]:
    """Uniform ellipticity with constant ``nu`` on random directions."""
    rng = np.random.default_rng(seed)
    nu = getattr(op, "nu", 1.0)
    worst = np.inf
    ok = True
    for m in range(disc.grid.nt):
        sel = disc.unknowns[m]
        if not sel.any():
            continue
        a = op.slice_coefficients(disc, m).a[sel]
        xi = rng.standard_normal((samples, disc.grid.n))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        q = np.einsum("ki,pij,kj->pk", xi, a, xi)
        worst = min(worst, float(q.min()))
        ok &= bool(q.min() >= nu - 1e-12 and np.abs(a).max() <= 1 / nu + 1e-12)
    return ok, worst


# ---------------------------------------------------------------------------
# stencils
# ---------------------------------------------------------------------------

def _shift(arr: np.ndarray, offset, fill=0.0) -> np.ndarray:
    """``out[p] = arr[p + offset]`` with ``fill`` outside the array."""
    out = np.full_like(arr, fill)
    src, dst = [], []
    for o, N in zip(offset, arr.shape):
        if o >= 0:
            src.append(slice(o, N))
            dst.append(slice(0, N - o))
        else:
            src.append(slice(0, N + o))
            dst.append(slice(-o, N))
    out[tuple(dst)] = arr[tuple(src)]
    return out


@dataclass
class Stencil:
    """Spatial operator on one slice: ``diag * u[p] + sum_o w[o] * u[p + o]``."""

    diag: np.ndarray
    weights: dict

    def apply(self, u: np.ndarray) -> np.ndarray:
        out = self.diag * u
        for off, w in self.weights.items():
            out = out + w * _shift(u, off)
        return out


def _unit(n, i, s=1):
    e = [0] * n
    e[i] = s
    return tuple(e)


def build_stencil(sc: SliceCoeffs, h: float, form: str, occupied: np.ndarray | None = None) -> Stencil:
    """Assemble the monotone stencil of one slice from its coefficients."""
    a = np.nan_to_num(sc.a)
    shape = a.shape[:-2]
    n = a.shape[-1]
    h2 = h * h
    diag = np.zeros(shape)
    W: dict = {}

    def add(off, val):
        if off in W:
            W[off] = W[off] + val
        else:
            W[off] = np.array(val, dtype=float, copy=True)

    drift = np.nan_to_num(np.array(sc.b, dtype=float, copy=True))
    valid = np.ones(shape, dtype=bool) if occupied is None else occupied

    for i in range(n):
        aii = a[..., i, i]
        for s in (1, -1):
            off = _unit(n, i, s)
            if form == "divergence":
                nb = _shift(aii, off, np.nan)
                nb = np.where(np.isfinite(nb) & _shift(valid, off, False), nb, aii)
                af = 0.5 * (aii + nb)
            else:
                af = aii
            add(off, -af / h2)
            diag += af / h2

    for i, j in itertools.combinations(range(n), 2):
        A = 0.5 * (a[..., i, j] + a[..., j, i])
        pos, neg = np.maximum(A, 0), np.maximum(-A, 0)
        for s in (1, -1):
            add(_unit(n, i, s), (pos + neg) / h2)
            add(_unit(n, j, s), (pos + neg) / h2)
            pp = tuple(s * (x + y) for x, y in zip(_unit(n, i), _unit(n, j)))
            pm = tuple(s * (x - y) for x, y in zip(_unit(n, i), _unit(n, j)))
            add(pp, -pos / h2)
            add(pm, -neg / h2)
        diag -= 2 * (pos + neg) / h2

    if form == "divergence" and n > 1:
        # off-diagonal fluxes -D_j(a_ij D_i u) contribute the drift -(D_j a_ij) D_i u
        for i in range(n):
            for j in range(n):
                if i != j:
                    drift[..., i] -= np.gradient(a[..., i, j], h, axis=j)

    for i in range(n):
        bp = np.maximum(drift[..., i], 0)
        bm = np.minimum(drift[..., i], 0)
        add(_unit(n, i, -1), -bp / h)
        add(_unit(n, i, 1), bm / h)
        diag += (bp - bm) / h

    if form == "divergence" and sc.c is not None:
        for i in range(n):
            ci = np.nan_to_num(sc.c[..., i])
            up = _unit(n, i, 1)
            dn = _unit(n, i, -1)
            nb_up = np.where(_shift(valid, up, False), _shift(ci, up), ci)
            nb_dn = np.where(_shift(valid, dn, False), _shift(ci, dn), ci)
            v_up = -0.5 * (ci + nb_up)   # transport velocity -c at the faces
            v_dn = -0.5 * (ci + nb_dn)
            add(up, np.minimum(v_up, 0) / h)
            add(dn, -np.maximum(v_dn, 0) / h)
            diag += (np.maximum(v_up, 0) - np.minimum(v_dn, 0)) / h

    diag += np.nan_to_num(sc.c0)
    return Stencil(diag, W)


# ---------------------------------------------------------------------------
# solutions
# ---------------------------------------------------------------------------

@dataclass
class Solution:
    grid: Grid
    u: np.ndarray
    residuals: list
    m_matrix: bool
    metadata: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.residuals)

    def at(self, point) -> float:
        return float(self.u[self.grid.nearest_index(point)])


def _load(f, disc: Discretization, m: int, op_form: str) -> np.ndarray:
    g = disc.grid
    shape = g.counts
    if f is None:
        return np.zeros(shape)
    if isinstance(f, np.ndarray):
        return np.asarray(f[m], dtype=float)
    if callable(f):
        x = g.space_coords()
        return _as_scalar(f(x, float(g.t_axis[m]), disc.dist.d[m]), shape)
    if isinstance(f, (tuple, list)):
        f0, *fi = f
        out = _load(f0, disc, m, op_form)
        for i, fc in enumerate(fi):
            comp = _load(fc, disc, m, op_form)
            out = out - np.gradient(comp, g.h, axis=i)
        return out
    return np.full(shape, float(f))


def slice_stencil(op, disc: Discretization, m: int) -> Stencil:
    sc = op.slice_coefficients(disc, m)
    return build_stencil(sc, disc.grid.h, op.form, disc.occupancy[m])


def _same_system(cache, sel: np.ndarray, st: Stencil) -> bool:
    """True when slice ``st`` on ``sel`` reproduces the cached matrix exactly."""
    csel, cst = cache[0], cache[1]
    if not np.array_equal(csel, sel) or cst.weights.keys() != st.weights.keys():
        return False
    if not np.array_equal(cst.diag[sel], st.diag[sel]):
        return False
    return all(np.array_equal(cst.weights[k][sel], st.weights[k][sel]) for k in st.weights)


def solve_dirichlet(op, domain, f=None, grid: Grid | None = None, boundary_values: np.ndarray | None = None,
                    residual_tol: float = RESIDUAL_TOL) -> Solution:
    """March the implicit scheme through all slices.

    ``domain`` is a :class:`Discretization` or a :class:`DomainSpec` (then
    ``grid`` is required).  ``f`` may be a callable ``(x, t, d)``, a full
    grid array, a constant or, for divergence data, a tuple ``(f0, f1, ...)``
    whose components enter as ``f0 - D_i f_i``.  Parabolic-boundary nodes
    take ``boundary_values`` (zero by default).
    """
    disc = domain if isinstance(domain, Discretization) else discretize(domain, grid)
    g = disc.grid
    unk = disc.unknowns
    u = np.zeros(g.shape)
    if boundary_values is not None:
        u[disc.parabolic] = np.asarray(boundary_values)[disc.parabolic]
    residuals = []
    m_ok = True
    worst_offdiag = 0.0
    min_rowsum = np.inf
    prev = np.zeros(g.counts)
    have_bv = boundary_values is not None
    cache = None  # (sel, stencil, A, lu, ids_sel, outside-neighbour data)
    for m in range(g.nt):
        sel = unk[m]
        if not sel.any():
            prev = u[m]
            continue
        st = slice_stencil(op, disc, m)
        if cache is not None and _same_system(cache, sel, st):
            A, lu, outside = cache[2], cache[3], cache[4]
        else:
            ids = -np.ones(g.counts, dtype=np.int64)
            N = int(sel.sum())
            ids[sel] = np.arange(N)
            rows, cols, vals, outside = [], [], [], []
            diag = st.diag[sel] + 1.0 / g.tau
            rowsum = diag.copy()
            own = ids[sel]
            for off, w in st.weights.items():
                wv = w[sel]
                nb = _shift(ids, off, -1)[sel]
                inside = nb >= 0
                rows.append(own[inside])
                cols.append(nb[inside])
                vals.append(wv[inside])
                rowsum += np.where(inside, wv, 0.0)
                if (~inside).any():
                    outside.append((off, ~inside, wv))
                if inside.any():
                    worst_offdiag = max(worst_offdiag, float(wv[inside].max()))
            A = sparse.coo_matrix((np.concatenate(vals + [diag]),
                                   (np.concatenate(rows + [np.arange(N)]), np.concatenate(cols + [np.arange(N)]))),
                                  shape=(N, N)).tocsc()
            scale_ref = float(np.abs(diag).max())
            min_rowsum = min(min_rowsum, float(rowsum.min()))
            m_ok &= worst_offdiag <= MMATRIX_TOL * scale_ref and rowsum.min() > 0
            lu = spla.splu(A)
            cache = (sel.copy(), st, A, lu, outside)
        rhs = _load(f, disc, m, op.form)[sel] + prev[sel] / g.tau
        if have_bv:
            known = u[m]
            for off, mask, wv in outside:
                rhs -= np.where(mask, wv * _shift(known, off)[sel], 0.0)
        x = lu.solve(rhs)
        r = A @ x - rhs
        res = float(np.linalg.norm(r))
        ref = float(np.linalg.norm(rhs))
        if res > residual_tol * ref + 1e-300:
            x = x - lu.solve(r)
            res = float(np.linalg.norm(A @ x - rhs))
            if res > residual_tol * ref + 1e-300:
                raise RuntimeError(f"linear solve did not converge on slice {m}: residual {res:.3e}")
        residuals.append(res / ref if ref > 0 else 0.0)
        u[m][sel] = x
        prev = u[m]
    if not m_ok:
        logger.warning("monotonicity lost: max off-diagonal %.3g, min row sum %.3g", worst_offdiag, min_rowsum)
    meta = dict(operator=getattr(op, "name", op.form), form=op.form, h=g.h, tau=g.tau, upwind=True,
                max_offdiag=worst_offdiag, min_rowsum=min_rowsum)
    return Solution(g, u, residuals, bool(m_ok), meta)


def apply_operator(op, disc: Discretization, u: np.ndarray) -> np.ndarray:
    """Discrete ``L u`` at unknown nodes (NaN elsewhere), reading occupied neighbours from ``u``."""
    g = disc.grid
    out = np.full(g.shape, np.nan)
    u = np.where(disc.occupancy, u, 0.0)  # exterior ghosts are zero, as in the solve
    for m in range(g.nt):
        sel = disc.unknowns[m]
        if not sel.any():
            continue
        st = slice_stencil(op, disc, m)
        prev = u[m - 1] if m > 0 else np.zeros(g.counts)
        val = st.apply(u[m]) + (u[m] - prev) / g.tau
        out[m][sel] = val[sel]
    return out


def check_sign_condition(op, disc: Discretization, tol: float = 1e-10) -> tuple[bool, tuple | None]:
    """``c0 >= 0`` (nondivergence) or the tent-tested weak inequality (divergence).

    For a tent supported on one cell the weak integral reduces to
    ``(c0 - sum_i (c_{i+1/2} - c_{i-1/2}) / h) |cell|``.
    """
    g = disc.grid
    worst_val, witness = np.inf, None
    for m in range(g.nt):
        sel = disc.unknowns[m]
        if not sel.any():
            continue
        sc = op.slice_coefficients(disc, m)
        val = np.nan_to_num(sc.c0).copy()
        if op.form == "divergence" and sc.c is not None:
            for i in range(g.n):
                ci = np.nan_to_num(sc.c[..., i])
                up = 0.5 * (ci + _shift(ci, _unit(g.n, i, 1)))
                dn = 0.5 * (ci + _shift(ci, _unit(g.n, i, -1)))
                up = np.where(_shift(disc.occupancy[m], _unit(g.n, i, 1), False), up, ci)
                dn = np.where(_shift(disc.occupancy[m], _unit(g.n, i, -1), False), dn, ci)
                val -= (up - dn) / g.h
        v = np.where(sel, val, np.inf)
        k = np.unravel_index(np.argmin(v), v.shape)
        if v[k] < worst_val:
            worst_val, witness = float(v[k]), (m,) + tuple(int(q) for q in k)
    ok = worst_val >= -tol
    return ok, None if ok else (g.node_point(witness), worst_val)


# ---------------------------------------------------------------------------
# approximation sequence
# ---------------------------------------------------------------------------

def divergence_to_nondivergence(gc: GridCoefficients, grid: Grid) -> GridCoefficients:
    """Rewrite a smooth divergence operator in nondivergence form.

    ``b~_i = -D_j a_ij + b_i - c_i`` and ``c~0 = c0 - D_i c_i``.
    """
    n = grid.n
    a = gc.a
    b = gc.b.copy()
    c0 = gc.c0.copy()
    for i in range(n):
        for j in range(n):
            b[..., i] -= np.gradient(a[..., i, j], grid.h, axis=1 + j)
        if gc.c is not None:
            b[..., i] -= gc.c[..., i]
            c0 -= np.gradient(gc.c[..., i], grid.h, axis=1 + i)
    return GridCoefficients("nondivergence", a, b, c0, None, gc.name + "~")


@dataclass
class SequenceResult:
    solutions: list
    ks: list
    cauchy: list
    truncated_at: int | None
    f_norm: float | None = None


def solve_sequence(coeffs, domain, f=None, grid: Grid | None = None, kmax: int = 4,
                   mollify_scale: Callable[[int], float] | None = None) -> SequenceResult:
    """Solve ``L^k u_k = f^k`` for ``k = 1..kmax`` with ``L^k`` cut off at ``1/k``.

    ``f^k`` is ``f`` times the same cutoff.  Divergence operators are first
    mollified at ``mollify_scale(k)`` (default ``max(2h, 1/(8k))``), cut
    off, and rewritten in nondivergence form.
    """
    disc = domain if isinstance(domain, Discretization) else discretize(domain, grid)
    g = disc.grid
    sols, ks, cauchy = [], [], []
    truncated = None
    for k in range(1, kmax + 1):
        eps = 1.0 / k
        try:
            op = regularize_coeffs(coeffs, disc, 1.0, eps)
        except ResolutionError as exc:
            logger.info("sequence truncated at k=%d: %s", k, exc)
            truncated = k
            break
        eta = cutoff(disc.dist.d, eps)
        if coeffs.form == "divergence":
            scale = mollify_scale(k) if mollify_scale else max(2 * g.h, 1.0 / (8 * k))
            raw = sample_coefficients(coeffs, disc)
            smooth = GridCoefficients("divergence",
                                      mollify(np.nan_to_num(raw.a), g, scale),
                                      mollify(np.nan_to_num(raw.b), g, scale),
                                      mollify(np.nan_to_num(raw.c0), g, scale),
                                      None if raw.c is None else mollify(np.nan_to_num(raw.c), g, scale),
                                      coeffs.name)
            cut = sample_coefficients(RegularizedOperator(smooth, 1.0, eps), disc)
            op = divergence_to_nondivergence(cut, g)
        fk = _cut_load(f, disc, eta)
        sols.append(solve_dirichlet(op, disc, fk))
        ks.append(k)
        if len(sols) > 1:
            cauchy.append(float(np.abs(sols[-1].u - sols[-2].u).max()))
    return SequenceResult(sols, ks, cauchy, truncated)


def _cut_load(f, disc, eta):
    if f is None:
        return None
    if isinstance(f, (tuple, list)):
        parts = [_full_load(fc, disc) * eta for fc in f]
        return np.stack(parts[:1])[0] - sum(np.gradient(p, disc.grid.h, axis=1 + i)
                                            for i, p in enumerate(parts[1:]))
    return _full_load(f, disc) * eta


def _full_load(f, disc):
    g = disc.grid
    if isinstance(f, np.ndarray):
        return f
    return np.stack([_load(f, disc, m, "nondivergence") for m in range(g.nt)])


# ---------------------------------------------------------------------------
# barriers
# ---------------------------------------------------------------------------

def drift_coefficients(disc: Discretization, magnitude: Callable, sign: float = -1.0,
                       name: str = "drift") -> GridCoefficients:
    """Heat operator plus the drift ``sign * magnitude(d) * grad d``.

    ``sign = -1`` points the drift coefficient towards the boundary, which is
    the direction that slows boundary decay.  Uses the computed distance field.
    """
    g = disc.grid
    n = g.n
    a = np.broadcast_to(np.eye(n), g.shape + (n, n))
    b = np.zeros(g.shape + (n,))
    with np.errstate(divide="ignore", invalid="ignore"):
        for m in range(g.nt):
            d = disc.dist.d[m]
            mag = np.where(d > 0, magnitude(np.where(d > 0, d, 1.0)), 0.0)
            b[m] = sign * mag[..., None] * disc.dist.gradient(m)
    return GridCoefficients("nondivergence", a, b, np.zeros(g.shape), None, name)


def smooth_min(a, b, eps: float) -> np.ndarray:
    """Concave smoothing of ``min(a, b)``; exceeds it by at most ``eps / 2`` and vanishes at 0."""
    return 0.5 * (a + b + eps - np.sqrt((a - b) ** 2 + eps * eps))


def barrier_heat(domain, grid: Grid | None = None) -> Solution:
    """Solve ``w_t - Laplace w = 1`` with zero parabolic-boundary data."""
    disc = domain if isinstance(domain, Discretization) else discretize(domain, grid)
    sol = solve_dirichlet(heat_operator(), disc, 1.0)
    w = sol.u
    if w.min() < -1e-12:
        raise RuntimeError("heat barrier has negative values")
    inner = ndimage.binary_erosion(disc.occupancy, np.ones((3,) * w.ndim, dtype=bool), iterations=2)
    sol.metadata["positive_inside"] = bool(np.all(w[inner] > 0))
    return sol


@dataclass
class BarrierPair:
    w: np.ndarray
    v: np.ndarray
    psi: np.ndarray
    mu: float
    lam: float
    eps_smooth: float
    report: dict


def barrier_psi(w: np.ndarray, disc: Discretization, op, k: int, center=None, R: float | None = None,
                mus: Sequence = (1, 2, 3, 4, 6, 8, 12, 16), eps_list: Sequence = (1e-3, 1e-4, 1e-5, 1e-2),
                target: float = 1.0) -> BarrierPair:
    """Build ``psi = F_eps((1 + lam) w, v)`` and verify ``L psi`` on the unknown nodes.

    ``mu`` is the smallest value in ``mus`` with discrete ``L v >= 1``;
    ``lam`` makes ``lam w >= v`` wherever ``d > 1/(2k)``; ``eps`` is the
    first value in ``eps_list`` giving ``min L psi >= target``.
    """
    g = disc.grid
    x = g.space_coords()
    occ_pts = x[disc.occupancy.any(axis=0)]
    if center is None:
        center = 0.5 * (occ_pts.min(axis=0) + occ_pts.max(axis=0))
    center = np.asarray(center, dtype=float)
    r = np.linalg.norm(x - center, axis=-1)
    if R is None:
        R = float(np.linalg.norm(occ_pts - center, axis=-1).max() + g.h)
    unk = disc.unknowns
    report: dict = dict(center=center.tolist(), R=R, k=k)
    mu = None
    for cand in mus:
        v = np.broadcast_to(np.cosh(cand * R) - np.cosh(cand * r), g.shape).copy()
        Lv = apply_operator(op, disc, v)[unk]
        if Lv.min() >= 1:
            mu = float(cand)
            report["min_Lv"] = float(Lv.min())
            break
    if mu is None:
        raise ValueError(f"no mu in {list(mus)} gives L v >= 1")
    region = unk & (disc.dist.d > 1.0 / (2 * k))
    wr = w[region]
    if np.any(wr <= 0):
        raise ValueError("heat barrier vanishes inside the cutoff region")
    lam = float(max(1.0, (v[region] / wr).max())) if region.any() else 1.0
    best = None
    for eps in eps_list:
        psi = smooth_min((1 + lam) * w, v, eps)
        Lpsi = apply_operator(op, disc, psi)[unk]
        rec = dict(eps=eps, min_Lpsi=float(Lpsi.min()), violations=int((Lpsi < target).sum()))
        report.setdefault("scan", []).append(rec)
        if best is None or rec["min_Lpsi"] > best[1]["min_Lpsi"]:
            best = (psi, rec)
        if rec["min_Lpsi"] >= target:
            best = (psi, rec)
            break
    psi, rec = best
    report.update(rec)
    report["psi_min"] = float(psi[disc.occupancy].min())
    report["psi_on_boundary_max"] = float(psi[disc.parabolic].max())
    return BarrierPair(w, v, psi, mu, lam, rec["eps"], report)


# ---------------------------------------------------------------------------
# pointwise bounds
# ---------------------------------------------------------------------------

def lp_norm(values: np.ndarray, disc: Discretization, p: float, region: np.ndarray | None = None) -> float:
    region = disc.occupancy if region is None else region
    vals = np.abs(np.asarray(values)[region])
    return float((np.sum(vals ** p) * disc.grid.cell_volume) ** (1 / p))


def pointwise_bound_check(solution: Solution, disc: Discretization, f, p0: float,
                          divergence: bool = False) -> tuple[float, dict]:
    """``max|u|`` over the data norm of the pointwise estimates.

    Nondivergence: ``|f|_{L^p0}``.  Divergence (``f = (f0, f1, ...)``):
    ``|f0|_{L^p0} + sum |fi|_{L^(2 p0)}``.
    """
    if divergence:
        f0, *fi = f
        norm = lp_norm(_full_load(f0, disc), disc, p0)
        norm += sum(lp_norm(_full_load(c, disc), disc, 2 * p0) for c in fi)
    else:
        norm = lp_norm(_full_load(f, disc), disc, p0)
    umax = float(np.abs(solution.u).max())
    if norm == 0:
        if umax > 0:
            raise ValueError("nonzero solution with zero data norm")
        return 0.0, dict(zero_data=True, norm=0.0, umax=0.0)
    return umax / norm, dict(zero_data=False, norm=norm, umax=umax)
