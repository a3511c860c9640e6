import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kalsmooth import linear
from kalsmooth.blocktri import BlockTriMatrix
from kalsmooth.errors import InvalidParameter, ShapeMismatch
from kalsmooth.linear import NormalSystem
from kalsmooth.sparse import (
    SparsePenaltySpec,
    penalized_objective,
    polish,
    project_weighted_l1,
    soft_threshold,
    sparse_smooth_lasso,
    sparse_smooth_penalized,
)

from oracles import project_l1_bisection, random_linear_model


def identity_system(c):
    c = np.asarray(c, dtype=float)
    N, n = c.shape
    return NormalSystem(C=BlockTriMatrix(np.tile(np.eye(n), (N, 1, 1)), np.zeros((N - 1, n, n))), c=c)


def random_system(rng, N=10, n=2):
    return linear.assemble(random_linear_model(rng, n=n, N=N, m=1, offsets=True))


def test_identity_system_is_soft_threshold():
    rng = np.random.default_rng(0)
    for _ in range(10):
        c = 2 * rng.standard_normal((6, 3))
        W = rng.uniform(0.0, 2.0, (6, 3))
        W[0, 0] = 0.0
        lam = rng.uniform(0.1, 1.5)
        sol = sparse_smooth_penalized(identity_system(c), SparsePenaltySpec(W, lam=lam))
        np.testing.assert_allclose(sol.x, soft_threshold(c, lam * W), atol=1e-8)
        assert sol.status == "converged"


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_identity_system_soft_threshold_property(seed):
    rng = np.random.default_rng(seed)
    N, n = int(rng.integers(1, 10)), int(rng.integers(1, 4))
    c = 2 * rng.standard_normal((N, n))
    W = rng.uniform(0.0, 2.0, (N, n))
    lam = rng.uniform(0.05, 2.0)
    sol = sparse_smooth_penalized(identity_system(c), SparsePenaltySpec(W, lam=lam))
    np.testing.assert_allclose(sol.x, soft_threshold(c, lam * W), atol=1e-8)


def test_polish_skipped_when_it_cannot_help():
    sys = identity_system(np.array([[2.0, -3.0]]))
    x = soft_threshold(sys.c, 1.0)
    # already exact: no improvement possible
    assert polish(sys, x, 1.0, np.ones((1, 2))) is None


def test_full_shrinkage():
    c = np.array([[0.5, -1.0], [0.9, 0.2]])
    sol = sparse_smooth_penalized(identity_system(c), SparsePenaltySpec(np.ones(2), lam=1.1))
    np.testing.assert_allclose(sol.x, 0.0, atol=1e-8)
    # at lam = |c|_inf strict complementarity fails for the largest entry
    sol = sparse_smooth_penalized(identity_system(c), SparsePenaltySpec(np.ones(2), lam=1.0))
    np.testing.assert_allclose(sol.x, 0.0, atol=1e-5)


def test_vanishing_penalty_gives_unconstrained_solution():
    sys = random_system(np.random.default_rng(1))
    sol = sparse_smooth_penalized(sys, SparsePenaltySpec(np.ones(2), lam=1e-10))
    np.testing.assert_allclose(sol.x, linear.smooth_system(sys).x, atol=1e-6)


def test_reduced_matrix_diagonal_identity():
    # regression: Phi^2 - Psi^2 = 4 q p / (s r), checked at every iteration
    sol = sparse_smooth_penalized(random_system(np.random.default_rng(2)), SparsePenaltySpec(np.ones(2), lam=0.5))
    checked = [t["phi_psi_identity"] for t in sol.trace if "phi_psi_identity" in t]
    assert checked and max(checked) <= 1e-10


def test_phi_psi_algebra():
    rng = np.random.default_rng(3)
    q, p, s, r = rng.uniform(0.1, 3.0, (4, 50))
    Phi, Psi = q / s + p / r, q / s - p / r
    np.testing.assert_allclose(Phi**2 - Psi**2, 4 * q * p / (s * r), rtol=1e-10)
    # the product 4 q r would not match
    assert not np.allclose(Phi**2 - Psi**2, 4 * q * r)


def test_penalized_solution_satisfies_subgradient_condition():
    rng = np.random.default_rng(4)
    sys = random_system(rng, N=12, n=3)
    W = rng.uniform(0.0, 1.0, (12, 3))
    sol = sparse_smooth_penalized(sys, SparsePenaltySpec(W, lam=0.8))
    assert sol.residual_norm <= 1e-6
    assert np.any(np.abs(sol.x) <= 1e-8)
    f = sol.objective
    for _ in range(20):
        pert = sol.x + 1e-4 * rng.standard_normal(sol.x.shape)
        assert penalized_objective(sys, pert, 0.8, W) >= f - 1e-10


def test_lasso_inactive_radius_returns_unconstrained_solution():
    sys = random_system(np.random.default_rng(5))
    x_unc = linear.smooth_system(sys).x
    tau = float(np.sum(np.abs(x_unc))) + 1.0
    sol = sparse_smooth_lasso(sys, SparsePenaltySpec(np.ones(2), tau=tau))
    np.testing.assert_allclose(sol.x, x_unc, atol=1e-10)
    assert sol.info["lam"] == 0.0


def test_lasso_zero_radius_frees_exempt_components():
    rng = np.random.default_rng(6)
    sys = random_system(rng, N=8)
    W = np.array([1.0, 0.0])
    sol = sparse_smooth_lasso(sys, SparsePenaltySpec(W, tau=0.0))
    np.testing.assert_array_equal(sol.x[:, 0], 0.0)
    # the free component solves the reduced system with x[:, 0] pinned at zero
    pen = sparse_smooth_penalized(sys, SparsePenaltySpec(W, lam=1e6))
    np.testing.assert_allclose(sol.x[:, 1], pen.x[:, 1], atol=1e-5)
    assert np.any(np.abs(sol.x[:, 1]) > 1e-3)


def test_lasso_objective_nonincreasing_against_reference():
    sol = sparse_smooth_lasso(random_system(np.random.default_rng(7), N=15),
                              SparsePenaltySpec(np.ones(2), tau=1.0))
    objs = [t["objective"] for t in sol.trace]
    refs = [t["reference"] for t in sol.trace]
    assert all(f <= ref + 1e-12 for f, ref in zip(objs[1:], refs[:-1]))
    assert objs[-1] <= objs[0]


def test_penalized_and_lasso_agree_on_matched_pairs():
    rng = np.random.default_rng(8)
    for _ in range(20):
        sys = random_system(rng, N=int(rng.integers(4, 12)), n=2)
        W = rng.uniform(0.2, 1.5, 2)
        lam = rng.uniform(0.05, 1.0)
        pen = sparse_smooth_penalized(sys, SparsePenaltySpec(W, lam=lam))
        tau = float(np.sum(W * np.abs(pen.x)))
        las = sparse_smooth_lasso(sys, SparsePenaltySpec(W, tau=tau))
        assert sys.objective(las.x) == pytest.approx(sys.objective(pen.x), abs=1e-5)
        if tau > 0:
            assert las.info["lam"] == pytest.approx(lam, rel=1e-3, abs=1e-4)


def test_projection_examples():
    np.testing.assert_allclose(project_weighted_l1(np.array([3.0, 1.0]), np.ones(2), 2.0), [2.0, 0.0])
    v = np.array([0.5, -0.2])
    np.testing.assert_array_equal(project_weighted_l1(v, np.ones(2), 1.0), v)
    np.testing.assert_array_equal(project_weighted_l1(np.array([4.0, -2.0]), np.array([1.0, 0.0]), 0.0), [0.0, -2.0])
    with pytest.raises(InvalidParameter):
        project_weighted_l1(v, np.ones(2), -1.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), size=st.integers(1, 40))
def test_projection_matches_bisection_oracle(seed, size):
    rng = np.random.default_rng(seed)
    v = 3 * rng.standard_normal(size)
    W = rng.uniform(0.0, 2.0, size)
    W[rng.random(size) < 0.2] = 0.0
    tau = rng.uniform(0.0, 1.2) * float(np.sum(W * np.abs(v)))
    got = project_weighted_l1(v, W, tau)
    np.testing.assert_allclose(got, project_l1_bisection(v, W, tau), atol=1e-8)
    assert float(np.sum(W * np.abs(got))) <= tau + 1e-9
    np.testing.assert_allclose(project_weighted_l1(got, W, tau), got, atol=1e-12)
    np.testing.assert_array_equal(got[W == 0], v[W == 0])


def test_projection_matches_generic_solver():
    import cvxpy as cp

    rng = np.random.default_rng(9)
    v = rng.standard_normal(12)
    W = rng.uniform(0.1, 2.0, 12)
    tau = 0.4 * float(np.sum(W * np.abs(v)))
    x = cp.Variable(12)
    cp.Problem(cp.Minimize(cp.sum_squares(x - v)), [cp.norm1(cp.multiply(W, x)) <= tau]).solve(
        solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    np.testing.assert_allclose(project_weighted_l1(v, W, tau), x.value, atol=1e-6)


def test_spec_validation():
    with pytest.raises(InvalidParameter):
        SparsePenaltySpec(np.array([-1.0]), lam=1.0)
    with pytest.raises(InvalidParameter):
        SparsePenaltySpec(np.ones(2), lam=0.0)
    with pytest.raises(InvalidParameter):
        SparsePenaltySpec(np.ones(2), tau=-1.0)
    sys = random_system(np.random.default_rng(10), N=3)
    with pytest.raises(InvalidParameter):
        sparse_smooth_penalized(sys, SparsePenaltySpec(np.ones(2), tau=1.0))
    with pytest.raises(InvalidParameter):
        sparse_smooth_lasso(sys, SparsePenaltySpec(np.ones(2), lam=1.0))
    with pytest.raises(ShapeMismatch):
        sparse_smooth_penalized(sys, SparsePenaltySpec(np.ones(5), lam=1.0))
