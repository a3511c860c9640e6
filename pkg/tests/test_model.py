import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kalsmooth import model as M
from kalsmooth.errors import InvalidParameter, NotPositiveDefinite, ShapeMismatch
from kalsmooth.model import (
    LinearStateSpace,
    NonlinearStateSpace,
    Whitener,
    eval_stacked,
    linearize,
    ship_model,
    smooth_signal_model,
    vanderpol_g,
    vanderpol_model,
)

from oracles import random_linear_model, random_spd


def test_linear_wrapped_at_zero():
    mdl = random_linear_model(np.random.default_rng(0), n=2, N=4, m=1).as_nonlinear()
    gx, hx = eval_stacked(mdl, np.zeros((4, 2)))
    np.testing.assert_array_equal(gx, 0.0)
    assert all(np.all(h == 0) for h in hx)


def test_identity_transition_differences():
    mdl = NonlinearStateSpace(n=1, N=2, g=lambda k, x: x, h=lambda k, x: x, Q=np.ones((2, 1, 1)),
                              R=[np.eye(1)] * 2, z=[np.zeros(1)] * 2, w0=np.zeros(1))
    gx, _ = eval_stacked(mdl, np.array([[2.0], [5.0]]))
    np.testing.assert_array_equal(gx.ravel(), [2.0, 3.0])
    assert mdl.fd_jacobian


def explicit_euler(mu, dt, x1, x2):
    return x1 + dt * x2, x2 + dt * (mu * (1 - x1 * x1) * x2 - x1)


def test_vanderpol_explicit_matches_scalar_recursion():
    dt = 0.1
    mdl = vanderpol_model(N=20, dt=dt, scheme="explicit")
    x = np.empty((20, 2))
    x[0] = mdl.x0
    for k in range(1, 20):
        x[k] = explicit_euler(2.0, dt, *x[k - 1])
    gx, hx = eval_stacked(mdl, x)
    np.testing.assert_allclose(gx[1:], 0.0, atol=1e-12)
    np.testing.assert_allclose([h[0] for h in hx], x[:, 0])


def test_vanderpol_implicit_solves_second_row():
    mu, dt = 2.0, 0.2
    g, _ = vanderpol_g(mu, dt)
    x1, x2 = 0.7, -1.3
    y1, y2 = g(1, np.array([x1, x2]))
    assert y1 == pytest.approx(x1 + dt * x2)
    # the second row holds with the new state on the right-hand side
    assert y2 == pytest.approx(x2 + dt * (mu * (1 - y1**2) * y2 - y1), abs=1e-14)


def test_vanderpol_explicit_jacobian_at_zero():
    mu, dt = 2.0, 0.1
    _, jac = vanderpol_g(mu, dt, scheme="explicit")
    np.testing.assert_allclose(jac(1, np.zeros(2)), [[1.0, dt], [-dt, 1 + mu * dt]])


def test_vanderpol_implicit_jacobian_at_zero():
    mu, dt = 2.0, 0.1
    _, jac = vanderpol_g(mu, dt)
    D = 1 - mu * dt
    np.testing.assert_allclose(jac(1, np.zeros(2)), [[1.0, dt], [-dt / D, (1 - dt * dt) / D]])


@pytest.mark.parametrize("scheme", ["implicit", "explicit"])
def test_vanderpol_jacobian_finite_differences(scheme):
    g, jac = vanderpol_g(2.0, 0.15, scheme)
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.standard_normal(2) * 1.5
        h = 1e-6
        fd = np.column_stack([(g(1, x + h * e) - g(1, x - h * e)) / (2 * h) for e in np.eye(2)])
        np.testing.assert_allclose(jac(1, x), fd, atol=1e-5)


def test_vanderpol_zero_step_is_identity():
    mdl = vanderpol_model(N=5, dt=0.0)
    x = np.array([0.3, -0.8])
    np.testing.assert_allclose(mdl.g(1, x), x)


def test_vanderpol_implicit_step_limit():
    with pytest.raises(InvalidParameter):
        vanderpol_g(2.0, 0.5)
    with pytest.raises(InvalidParameter):
        vanderpol_g(2.0, 0.1, scheme="rk4")


def test_vanderpol_defaults():
    mdl = vanderpol_model()
    assert mdl.N == 80
    np.testing.assert_allclose(mdl.Q[0], 0.1 * np.eye(2))
    np.testing.assert_allclose(mdl.Q[1:], np.broadcast_to(0.01 * np.eye(2), (79, 2, 2)))
    np.testing.assert_allclose(mdl.w0, [0.1, -0.4])
    np.testing.assert_allclose(mdl.x0, [0.0, -0.5])
    np.testing.assert_allclose(mdl.times[-1], 30.0)


def test_sde_covariance_unit_step():
    np.testing.assert_allclose(M.sde_covariance(1.0, 1.0), [[1.0, 0.5], [0.5, 1.0 / 3.0]])


def test_smooth_signal_model_blocks():
    mdl = smooth_signal_model(5, 0.5, 2.0, 0.1)
    np.testing.assert_allclose(mdl.G[3], [[1.0, 0.0], [0.5, 1.0]])
    np.testing.assert_allclose(mdl.Q[2], M.sde_covariance(0.5, 2.0))
    np.testing.assert_allclose(mdl.H[0], [[0.0, 1.0]])
    with pytest.raises(InvalidParameter):
        smooth_signal_model(5, 0.5, -1.0, 0.1)


def test_ship_transition_keeps_both_positions():
    # regression: the fourth diagonal entry of the transition is 1, not 0
    mdl, _ = ship_model(N=10)
    dt = 2 * np.pi / 10
    G = mdl.g_jac(1, np.zeros(4))
    np.testing.assert_allclose(G, [[1, 0, 0, 0], [dt, 1, 0, 0], [0, 0, 1, 0], [0, 0, dt, 1]])
    assert G[3, 3] == 1.0
    assert np.linalg.matrix_rank(G) == 4


def test_ship_constraint_and_range():
    mdl, cons = ship_model(N=10)
    x = np.zeros(4)
    x[1], x[3] = 0.0, 1.25
    assert cons.value(0, x)[0] == pytest.approx(0.0)
    x[1], x[3] = 3.0, 4.0
    assert mdl.h(0, x)[0] == pytest.approx(5.0)
    np.testing.assert_allclose(mdl.h_jac(0, x)[0], [0.0, 0.6, 0.0, 0.8])


def test_ship_infeasible_start():
    _, cons = ship_model(N=3)
    x = np.tile([0.0, 0.0, 0.0, 1.0], (3, 1))
    assert cons.max_violation(x) == pytest.approx(0.25)


def test_linearize_affine_model():
    rng = np.random.default_rng(2)
    lin_model = random_linear_model(rng, n=2, N=5, m=1)
    mdl = lin_model.as_nonlinear()
    x1, x2 = rng.standard_normal((2, 5, 2))
    L1, L2 = linearize(mdl, x1), linearize(mdl, x2)
    np.testing.assert_allclose(L1.G[1:], L2.G[1:])
    np.testing.assert_allclose(L1.H[2], L2.H[2])
    Lmid = linearize(mdl, 0.5 * (x1 + x2))
    np.testing.assert_allclose(Lmid.w, 0.5 * (L1.w + L2.w), atol=1e-12)


def test_linearize_jacobians_finite_differences():
    mdl = vanderpol_model(N=6, dt=0.2)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((6, 2))
    d = rng.standard_normal((6, 2))
    lin = linearize(mdl, x)
    h = 1e-6
    gp, _ = eval_stacked(mdl, x + h * d)
    gm, _ = eval_stacked(mdl, x - h * d)
    fd = (gp - gm) / (2 * h)
    pred = d.copy()
    pred[1:] -= np.einsum("kij,kj->ki", lin.G[1:], d[:-1])
    np.testing.assert_allclose(fd, pred, atol=1e-5)


def test_fd_jacobian_fallback():
    g, jac = vanderpol_g(2.0, 0.1)
    mdl = NonlinearStateSpace(n=2, N=3, g=g, h=lambda k, x: x[:1], Q=np.tile(np.eye(2), (3, 1, 1)),
                              R=[np.eye(1)] * 3, z=[np.zeros(1)] * 3, w0=np.zeros(2))
    x = np.array([0.4, -0.2])
    np.testing.assert_allclose(mdl.g_jac(1, x), jac(1, x), atol=1e-6)


def test_model_shape_validation():
    with pytest.raises(ShapeMismatch):
        LinearStateSpace(G=np.ones((3, 2, 2)), Q=np.ones((2, 2, 2)), H=[np.ones((1, 2))] * 3,
                         R=[np.eye(1)] * 3, z=[np.zeros(1)] * 3, w=np.zeros((3, 2)))
    with pytest.raises(ShapeMismatch):
        LinearStateSpace(G=np.ones((3, 2, 2)), Q=np.ones((3, 2, 2)), H=[np.ones((1, 2))] * 2,
                         R=[np.eye(1)] * 2, z=[np.zeros(1)] * 2, w=np.zeros((3, 2)))


def test_mask_drops_components():
    rng = np.random.default_rng(4)
    mdl = random_linear_model(rng, n=2, N=3, m=2)
    sub = mdl.mask([np.array([True, False]), np.array([False, False]), np.array([True, True])])
    assert sub.m == [1, 0, 2]
    np.testing.assert_array_equal(sub.R[0], mdl.R[0][:1, :1])


def test_whitener_variants_agree_on_norm():
    rng = np.random.default_rng(5)
    mats = [random_spd(rng, 2), np.zeros((0, 0)), random_spd(rng, 3)]
    r = rng.standard_normal(5)
    full = np.zeros((5, 5))
    full[:2, :2], full[2:, 2:] = mats[0], mats[2]
    expect = 0.5 * r @ np.linalg.solve(full, r)
    assert Whitener(mats).half_norm2(r) == pytest.approx(expect)
    assert Whitener(mats, symmetric=True).half_norm2(r) == pytest.approx(expect)


def test_inverse_sqrt_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite) as info:
        M.inv_sqrt_blocks([np.eye(2), -np.eye(2)])
    assert info.value.block == 1
    with pytest.raises(NotPositiveDefinite):
        M.cholesky_blocks([np.eye(1), np.zeros((1, 1))])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4))
def test_inverse_sqrt_property(seed, n):
    rng = np.random.default_rng(seed)
    S = random_spd(rng, n)
    (T,) = M.inv_sqrt_blocks([S])
    np.testing.assert_allclose(T, T.T, atol=1e-12)
    np.testing.assert_allclose(T @ S @ T, np.eye(n), atol=1e-9)


def test_build_model_catalog():
    assert build_ok("vanderpol", N=80).N == 80
    with pytest.raises(InvalidParameter):
        M.build_model("pendulum")


def build_ok(name, **kw):
    return M.build_model(name, **kw)
