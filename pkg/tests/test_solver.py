from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from parabolab.grid_domain import make_domain, make_grid
from parabolab.solver import (
    CoefficientSet, GridCoefficients, ResolutionError, SliceCoeffs, apply_operator, barrier_heat, barrier_psi,
    build_stencil, check_blowup, check_ellipticity, check_sign_condition, cutoff, discretize,
    divergence_to_nondivergence, drift_coefficients, heat_operator, mollify, pointwise_bound_check,
    regularize_coeffs, sample_coefficients, smooth_min, solve_dirichlet, solve_sequence,
)


def _slice(n, shape, a=None, b=None, c0=None):
    eye = np.broadcast_to(np.eye(n), shape + (n, n)).copy()
    return SliceCoeffs(eye if a is None else a, np.zeros(shape + (n,)) if b is None else b, None,
                       np.zeros(shape) if c0 is None else c0)


# --- stencils ------------------------------------------------------------------

def test_heat_stencil_n1():
    h = 0.1
    st_ = build_stencil(_slice(1, (8,)), h, "nondivergence")
    assert st_.diag[4] == pytest.approx(2 / h ** 2)
    assert st_.weights[(1,)][4] == pytest.approx(-1 / h ** 2)
    assert st_.weights[(-1,)][4] == pytest.approx(-1 / h ** 2)


def test_positive_drift_uses_backward_difference():
    h = 0.1
    b = np.full((8, 1), 3.0)
    st_ = build_stencil(_slice(1, (8,), b=b), h, "nondivergence")
    assert st_.weights[(-1,)][4] == pytest.approx(-1 / h ** 2 - 3 / h)
    assert st_.weights[(1,)][4] == pytest.approx(-1 / h ** 2)
    assert st_.diag[4] == pytest.approx(2 / h ** 2 + 3 / h)


@given(st.integers(0, 2 ** 31 - 1))
def test_row_sums_nonnegative_without_cross_terms(seed):
    rng = np.random.default_rng(seed)
    shape = (6, 6)
    a = np.zeros(shape + (2, 2))
    a[..., 0, 0] = rng.uniform(0.5, 2, shape)
    a[..., 1, 1] = rng.uniform(0.5, 2, shape)
    b = rng.normal(0, 5, shape + (2,))
    c0 = rng.uniform(0, 1, shape)
    st_ = build_stencil(_slice(2, shape, a, b, c0), 0.1, "nondivergence")
    rowsum = st_.diag + sum(st_.weights.values())
    assert np.all(rowsum >= c0 - 1e-9)
    assert all(np.all(w <= 1e-12) for w in st_.weights.values())


def test_cross_terms_keep_offdiagonals_nonpositive_when_dominant():
    shape = (5, 5)
    a = np.broadcast_to(np.array([[1.0, 0.3], [0.3, 1.0]]), shape + (2, 2)).copy()
    st_ = build_stencil(_slice(2, shape, a), 0.1, "nondivergence")
    assert all(np.all(w <= 1e-12) for w in st_.weights.values())


# --- solves -----------------------------------------------------------------------

def test_zero_data_gives_zero(cylinder_disc):
    assert np.all(solve_dirichlet(heat_operator(), cylinder_disc, 0.0).u == 0)


def test_steady_state_center_value():
    s = make_domain("straight_cylinder", {"n": 1, "r": 1.0, "T": 4.0})
    g = make_grid(s, 1 / 16)
    sol = solve_dirichlet(heat_operator(), s, 1.0, g)
    assert sol.at([0.0, 4.0 - g.tau]) == pytest.approx(0.5, abs=2 * g.h)
    assert sol.m_matrix


def test_solution_properties(cylinder_disc):
    sol = solve_dirichlet(heat_operator(), cylinder_disc, 1.0)
    assert np.all(sol.u[cylinder_disc.parabolic] == 0)
    assert np.all(sol.u >= 0)
    assert max(sol.residuals) <= 1e-10
    again = solve_dirichlet(heat_operator(), cylinder_disc, 1.0)
    assert np.array_equal(sol.u, again.u)


def test_linearity(cylinder_disc):
    f1 = lambda x, t, d: np.sin(3 * x[..., 0]) + t
    f2 = lambda x, t, d: d
    op = CoefficientSet(b=lambda x, t, d: 0.5 * x, c0=lambda x, t, d: 1 + 0 * t, name="lin")
    u1 = solve_dirichlet(op, cylinder_disc, f1).u
    u2 = solve_dirichlet(op, cylinder_disc, f2).u
    u12 = solve_dirichlet(op, cylinder_disc, lambda x, t, d: f1(x, t, d) + f2(x, t, d)).u
    assert np.allclose(u12, u1 + u2, atol=1e-12)


def test_comparison(cylinder_disc):
    op = CoefficientSet(b=lambda x, t, d: -2 * x, c0=lambda x, t, d: 0.5 + 0 * t, name="cmp")
    lo = solve_dirichlet(op, cylinder_disc, lambda x, t, d: np.cos(x[..., 0])).u
    hi = solve_dirichlet(op, cylinder_disc, lambda x, t, d: np.cos(x[..., 0]) + 0.1).u
    assert np.all(hi >= lo - 1e-10)


def test_nonpositive_data_gives_nonpositive_solution(cylinder_disc):
    sol = solve_dirichlet(heat_operator("divergence"), cylinder_disc, lambda x, t, d: -1 - x[..., 0] ** 2)
    assert sol.u.max() <= 1e-10


def test_apply_operator_reproduces_load(cylinder_disc):
    f = lambda x, t, d: 1 + x[..., 0]
    op = CoefficientSet(b=lambda x, t, d: x, name="drift")
    sol = solve_dirichlet(op, cylinder_disc, f)
    Lu = apply_operator(op, cylinder_disc, sol.u)
    g = cylinder_disc.grid
    want = 1 + g.x_axes[0][None, :] + 0 * g.t_axis[:, None]
    unk = cylinder_disc.unknowns
    assert np.allclose(Lu[unk], want[unk], atol=1e-8)


def test_manufactured_convergence_first_order():
    s = make_domain("straight_cylinder", {"n": 1, "r": 1.0, "T": 0.5})
    k = np.pi / 2
    exact = lambda x, t: t * np.cos(k * x)
    op = CoefficientSet(a=lambda x, t, d: 1 + 0.5 * x[..., 0] ** 2, b=lambda x, t, d: x,
                        c0=lambda x, t, d: 1 + 0 * t, name="mms")

    def f(x, t, d):
        X = x[..., 0]
        ut = np.cos(k * X)
        uxx = -t * k * k * np.cos(k * X)
        ux = -t * k * np.sin(k * X)
        return ut - (1 + 0.5 * X ** 2) * uxx + X * ux + exact(X, t)

    errs, hs = [], [1 / 8, 1 / 16, 1 / 32]
    for h in hs:
        g = make_grid(s, h)
        disc = discretize(s, g)
        u = solve_dirichlet(op, disc, f).u
        pts = np.stack(np.meshgrid(g.t_axis, g.x_axes[0], indexing="ij"), -1)
        ue = exact(pts[..., 1], pts[..., 0])
        errs.append(np.abs(u - ue)[disc.occupancy].max())
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order >= 0.9


def test_resolution_error_propagates(cubes3):
    from parabolab.grid_domain import CoarseGridError
    with pytest.raises(CoarseGridError):
        discretize(cubes3, make_grid(cubes3, 1 / 8))


# --- coefficient checks -----------------------------------------------------------

def test_sign_condition_examples(cylinder_disc):
    assert check_sign_condition(heat_operator(), cylinder_disc)[0]
    bad = CoefficientSet(c0=lambda x, t, d: np.where(np.abs(x[..., 0] - 0.3) < 0.05, -0.1, 0.0), name="bad")
    ok, (where, val) = check_sign_condition(bad, cylinder_disc)
    assert not ok and val == pytest.approx(-0.1) and abs(where[0] - 0.3) < 0.06
    const_c = CoefficientSet(form="divergence", c=lambda x, t, d: np.full(x.shape, 0.7), name="c")
    assert check_sign_condition(const_c, cylinder_disc)[0]


def test_ellipticity_and_blowup(cylinder_disc):
    assert check_ellipticity(heat_operator(), cylinder_disc)[0]
    weak = CoefficientSet(a=lambda x, t, d: 0.1 + 0 * t, nu=0.5, name="weak")
    assert not check_ellipticity(weak, cylinder_disc)[0]
    gam = lambda d: np.sqrt(d)
    good = CoefficientSet(b=lambda x, t, d: (gam(d) / d)[..., None] * 0.9, gamma=gam, name="ok")
    assert check_blowup(good, cylinder_disc)[0]
    bad = CoefficientSet(b=lambda x, t, d: (1 / d)[..., None], gamma=gam, name="bad")
    assert not check_blowup(bad, cylinder_disc)[0]


# --- regularization ------------------------------------------------------------------

@given(st.floats(0, 2), st.floats(0.05, 1), st.floats(0.25, 1))
def test_cutoff_profile(d, eps, rho):
    eta = float(cutoff(np.array(d), eps, rho))
    assert 0 <= eta <= 1
    if d < rho * eps / 2:
        assert eta == 0
    if d > rho * eps:
        assert eta == 1


def test_cutoff_is_lipschitz():
    d = np.linspace(0, 1, 2001)
    eta = cutoff(d, 0.4)
    assert np.max(np.abs(np.diff(eta)) / np.diff(d)) <= 1 / 0.2 + 1e-9


def test_regularized_fields(cylinder1):
    disc = discretize(cylinder1, make_grid(cylinder1, 1 / 32))
    base = CoefficientSet(form="divergence", a=lambda x, t, d: 2 + x[..., 0], b=lambda x, t, d: 3 * x,
                          c=lambda x, t, d: np.full(x.shape, 0.5), c0=lambda x, t, d: 1 + 0 * t, name="full")
    op = regularize_coeffs(base, disc, 1.0, 0.5)
    m = disc.grid.nt // 2
    sc = op.slice_coefficients(disc, m)
    raw = base.slice_coefficients(disc, m)
    eta = cutoff(disc.dist.d[m], 0.5)
    assert np.allclose(sc.a[..., 0, 0], eta * raw.a[..., 0, 0] + 1 - eta)
    assert np.allclose(sc.b, eta[..., None] * raw.b)
    assert np.allclose(sc.c, eta[..., None] * raw.c)
    grad = np.gradient(eta, disc.grid.h)
    assert np.allclose(sc.c0, eta * raw.c0 + grad * 0.5)


def test_large_eps_is_heat():
    small = make_domain("straight_cylinder", {"n": 1, "r": 0.4, "T": 0.16})
    disc = discretize(small, make_grid(small, 1 / 32))
    base = CoefficientSet(a=lambda x, t, d: 3 + 0 * t, b=lambda x, t, d: np.ones(x.shape), name="x")
    op = regularize_coeffs(base, disc, 1.0, 1.0)
    # d <= 0.4 everywhere here, so eps = 1 keeps eta at zero
    sc = op.slice_coefficients(disc, disc.grid.nt // 2)
    occ = disc.occupancy[disc.grid.nt // 2]
    assert np.allclose(sc.a[occ], np.eye(1)) and np.allclose(sc.b[occ], 0)


def test_blowup_drift_bounded_after_cutoff(cylinder1):
    disc = discretize(cylinder1, make_grid(cylinder1, 1 / 64))
    eps = 0.25
    base = CoefficientSet(b=lambda x, t, d: (np.sqrt(d) / d)[..., None], name="sqrt")
    op = regularize_coeffs(base, disc, 1.0, eps)
    worst = max(np.abs(op.slice_coefficients(disc, m).b[disc.unknowns[m]]).max(initial=0)
                for m in range(disc.grid.nt))
    assert worst <= np.sqrt(2 / eps) + 1e-9


def test_thin_ramp_rejected(cylinder_disc):
    with pytest.raises(ResolutionError):
        regularize_coeffs(heat_operator(), cylinder_disc, 1.0, 0.05)


# --- mollifier ------------------------------------------------------------------------

def test_mollify_constant_and_sign():
    from parabolab.grid_domain import Grid
    g = Grid(1, 1 / 64, ((0, 1),), (0, 0.0625))
    const = np.full(g.shape, 2.5)
    assert np.allclose(mollify(const, g, 4 / 64), 2.5)
    rng = np.random.default_rng(1)
    pos = rng.random(g.shape)
    assert mollify(pos, g, 2 / 64).min() >= 0
    with pytest.raises(ResolutionError):
        mollify(pos, g, 1 / 64)


def test_mollify_step_ramp():
    from parabolab.grid_domain import Grid
    g = Grid(1, 1 / 128, ((0, 1),), (0, 0.01))
    x = g.x_axes[0]
    step = np.broadcast_to((x > 0.5).astype(float), g.shape)
    eps = 4 / 128
    out = mollify(step, g, eps)[g.nt // 2]
    assert np.all(np.diff(out) >= -1e-12)
    ramp = x[(out > 1e-12) & (out < 1 - 1e-12)]
    assert ramp.max() - ramp.min() == pytest.approx(6 * eps, abs=2 * g.h)


# --- sequence ----------------------------------------------------------------------------

def test_sequence_stabilises_for_interior_data(cylinder1):
    disc = discretize(cylinder1, make_grid(cylinder1, 1 / 64))
    f = np.where(disc.dist.d > 0.3, 1.0, 0.0)
    res = solve_sequence(heat_operator(), disc, f, kmax=5)
    assert res.truncated_at is None and res.ks == [1, 2, 3, 4, 5]
    assert res.cauchy[-1] <= 1e-3 * np.abs(res.solutions[0].u).max()


def test_sequence_truncates_when_ramp_unresolved(cylinder_disc):
    res = solve_sequence(heat_operator(), cylinder_disc, 1.0, kmax=8)
    assert res.truncated_at is not None and len(res.solutions) == res.truncated_at - 1


def test_rewrite_with_constant_c_keeps_sign(cylinder_disc):
    op = CoefficientSet(form="divergence", c=lambda x, t, d: np.full(x.shape, 0.4), name="c")
    gc = sample_coefficients(op, cylinder_disc)
    nd = divergence_to_nondivergence(gc, cylinder_disc.grid)
    assert nd.c0.min() >= -1e-12
    assert np.allclose(nd.b[..., 0], -0.4)


def test_rewrite_agrees_with_divergence_solve(cylinder1):
    diffs = []
    for h in (1 / 16, 1 / 32):
        disc = discretize(cylinder1, make_grid(cylinder1, h))
        op = CoefficientSet(form="divergence", a=lambda x, t, d: 1 + 0.5 * np.sin(x[..., 0]), name="smooth")
        u_div = solve_dirichlet(op, disc, 1.0).u
        nd = divergence_to_nondivergence(sample_coefficients(op, disc), disc.grid)
        u_nd = solve_dirichlet(nd, disc, 1.0).u
        diffs.append(np.abs(u_div - u_nd).max())
    assert diffs[1] < diffs[0] and diffs[1] < 0.01


# --- barrier ---------------------------------------------------------------------------------

@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(1e-4, 1))
def test_smooth_min_properties(a, b, eps):
    F = smooth_min(a, b, eps)
    assert min(a, b) - 1e-12 <= F <= min(a, b) + eps / 2 + 1e-12
    da = (smooth_min(a + 1e-6, b, eps) - smooth_min(a - 1e-6, b, eps)) / 2e-6
    db = (smooth_min(a, b + 1e-6, eps) - smooth_min(a, b - 1e-6, eps)) / 2e-6
    assert da >= -1e-6 and db >= -1e-6 and da + db == pytest.approx(1, abs=1e-5)
    assert smooth_min(0.0, 0.0, eps) == 0.0


def test_smooth_min_concave():
    rng = np.random.default_rng(2)
    P, Q = rng.normal(size=(2, 200, 2))
    lam = rng.random((200, 1))
    M = lam * P + (1 - lam) * Q
    lhs = smooth_min(M[:, 0], M[:, 1], 0.1)
    rhs = lam[:, 0] * smooth_min(P[:, 0], P[:, 1], 0.1) + (1 - lam[:, 0]) * smooth_min(Q[:, 0], Q[:, 1], 0.1)
    assert np.all(lhs >= rhs - 1e-12)


def test_barrier_heat_on_cylinder(cylinder_disc):
    sol = barrier_heat(cylinder_disc)
    w = sol.u
    g = cylinder_disc.grid
    assert np.all(w[cylinder_disc.parabolic] == 0) and sol.metadata["positive_inside"]
    j = g.nearest_index([0.0, 0.5])[1]
    col = w[:, j][cylinder_disc.occupancy[:, j]]
    assert np.all(np.diff(col) >= -1e-12)
    t = g.t_axis[cylinder_disc.occupancy[:, j]]
    assert np.all(col <= t + g.tau)
    x = g.x_axes[0]
    assert np.all(w <= (1 - x ** 2)[None, :] / 2 + 2 * g.h)


def test_heat_Lv_lower_bound(cylinder_disc):
    g = cylinder_disc.grid
    w = barrier_heat(cylinder_disc).u
    pair = barrier_psi(w, cylinder_disc, heat_operator(), 2, center=[0.0], R=1.0 + g.h, mus=(1,))
    assert pair.mu == 1
    assert pair.report["min_Lv"] >= 1 - 10 * g.h ** 2
    assert np.all(pair.v[cylinder_disc.occupancy] >= 0)


def test_barrier_psi_cylinder(cylinder_disc):
    w = barrier_heat(cylinder_disc).u
    pair = barrier_psi(w, cylinder_disc, heat_operator(), 2)
    assert pair.report["min_Lpsi"] >= 0.9
    assert pair.report["psi_min"] >= 0
    assert pair.report["psi_on_boundary_max"] <= pair.eps_smooth / 2 + 1e-12


def test_barrier_with_admissible_drift(cubes3):
    disc = discretize(cubes3, make_grid(cubes3, 1 / 32))
    w = barrier_heat(disc).u
    gc = drift_coefficients(disc, lambda d: d ** -0.5)
    op = regularize_coeffs(gc, disc, 1.0, 0.5)
    pair = barrier_psi(w, disc, op, 2)
    assert pair.report["min_Lpsi"] >= 0.9


# --- pointwise bounds ----------------------------------------------------------------------

def test_pointwise_ratio_zero_and_linear(cylinder_disc):
    zero = solve_dirichlet(heat_operator(), cylinder_disc, 0.0)
    r, info = pointwise_bound_check(zero, cylinder_disc, 0.0, 3)
    assert r == 0 and info["zero_data"]
    one = solve_dirichlet(heat_operator(), cylinder_disc, 1.0)
    two = solve_dirichlet(heat_operator(), cylinder_disc, 2.0)
    r1, _ = pointwise_bound_check(one, cylinder_disc, 1.0, 3)
    r2, _ = pointwise_bound_check(two, cylinder_disc, 2.0, 3)
    assert r1 == pytest.approx(r2, rel=1e-10)
    with pytest.raises(ValueError):
        pointwise_bound_check(one, cylinder_disc, 0.0, 3)
