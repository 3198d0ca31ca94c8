import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coulomb_ot.cost import (
    CostDomainError,
    CostModel,
    SingularHessianError,
    c_exponential,
    profile,
    semiconcavity_constant,
    spline_h,
)


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jac(F, x, h=1e-6):
    cols = []
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((F(x + e) - F(x - e)) / (2 * h))
    return np.stack(cols, axis=1)


def test_profile_matches_at_delta():
    delta = 0.3
    h_in, dh_in, d2h_in = (np.asarray(v) for v in profile(np.array([delta]), delta))
    r = delta + 1e-15
    assert h_in[0] == pytest.approx(1 / delta, rel=1e-12)
    assert dh_in[0] == pytest.approx(-1 / delta**2, rel=1e-12)
    assert d2h_in[0] == pytest.approx(2 / delta**3, rel=1e-12)
    assert spline_h(r, delta) == pytest.approx(1 / delta, rel=1e-12)


def test_modified_diagonal_value():
    c = CostModel.modified(0.2, 2)
    assert c.eval([0.0, 0.0], [0.0, 0.0]) == pytest.approx(2 / 0.2)
    np.testing.assert_allclose(c.hessian_xx([0.1, 0.1], [0.1, 0.1]), -4 / 0.2**3 * np.eye(2))
    np.testing.assert_array_equal(c.grad_x([0.1, 0.1], [0.1, 0.1]), [0.0, 0.0])


def test_coulomb_diagonal_raises():
    c = CostModel.coulomb(1)
    assert np.isinf(c.eval([0.5], [0.5]))
    with pytest.raises(CostDomainError):
        c.grad_x([0.5], [0.5])


def test_gradient_sign():
    c = CostModel.coulomb(1)
    # c(x, 1) = 1/(1 - x) increases towards y
    assert c.grad_x([0.0], [1.0])[0] == pytest.approx(1.0)
    assert c.grad_y([0.0], [1.0])[0] == pytest.approx(-1.0)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("kind", ["coulomb", "modified"])
def test_derivatives_against_finite_differences(d, kind, rng):
    c = CostModel.coulomb(d) if kind == "coulomb" else CostModel.modified(0.5, d)
    for _ in range(40):
        x = rng.uniform(-1, 1, d)
        y = rng.uniform(-1, 1, d)
        if np.linalg.norm(x - y) < 0.05 or abs(np.linalg.norm(x - y) - 0.5) < 1e-3:
            continue
        g = c.grad_x(x, y)
        np.testing.assert_allclose(g, fd_grad(lambda z: c.eval(z, y), x), rtol=1e-5, atol=1e-7)
        Dxx, Dxy, Dyx, Dyy = c.hessian_blocks(x, y)
        np.testing.assert_allclose(Dxx, fd_jac(lambda z: c.grad_x(z, y), x), rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(Dyx, fd_jac(lambda z: c.grad_x(x, z), y).T, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(Dxy, Dyx.T)
        np.testing.assert_allclose(Dyy, fd_jac(lambda z: c.grad_y(x, z), y), rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_det_mixed_hessian_closed_form(d, rng):
    c = CostModel.coulomb(d)
    for _ in range(20):
        x, y = rng.normal(size=d), rng.normal(size=d)
        r = np.linalg.norm(x - y)
        assert c.det_mixed_hessian(x, y) == pytest.approx(-2 / r ** (3 * d), rel=1e-9)
        assert np.linalg.det(c.mixed_hessian(x, y)) == pytest.approx(-2 / r ** (3 * d), rel=1e-9)


def test_inverse_mixed_hessian(rng):
    c = CostModel.modified(0.4, 3)
    for _ in range(20):
        x, y = rng.normal(size=3), rng.normal(size=3)
        if abs(np.linalg.norm(x - y) - 0.4 * 2 / 3) < 1e-3:
            continue
        np.testing.assert_allclose(c.inverse_mixed_hessian(x, y) @ c.mixed_hessian(x, y),
                                   np.eye(3), atol=1e-9)


def test_inverse_mixed_hessian_singular_radius():
    delta = 0.3
    c = CostModel.modified(delta, 2)
    with pytest.raises(SingularHessianError):
        c.inverse_mixed_hessian([0.0, 0.0], [2 * delta / 3, 0.0])


def test_one_sided_second_derivative_mpmath():
    mpmath.mp.dps = 50
    delta = mpmath.mpf("0.137")
    f = lambda r: spline_h(r, delta)  # noqa: E731
    left = mpmath.diff(f, delta, 2, direction=-1)
    right = mpmath.diff(f, delta, 2, direction=1)
    assert abs(left - right) <= 1e-6 * delta**-3
    assert abs(right - 2 / delta**3) <= 1e-6 * delta**-3


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_c_exponential_round_trip(x, y):
    x, y = np.array(x), np.array(y)
    if np.linalg.norm(x - y) < 1e-3:
        return
    c = CostModel.coulomb(3)
    back = c_exponential(x, c.grad_x(x, y))
    assert np.linalg.norm(back - y) <= 1e-9 * max(1.0, np.linalg.norm(y))


def test_c_exponential_rejects():
    with pytest.raises(CostDomainError):
        c_exponential([0.0], [0.0])
    with pytest.raises(CostDomainError):
        c_exponential([0.0], [100.0], delta=0.2)  # lands at distance 0.1


def test_semiconcavity_constant():
    assert np.isinf(semiconcavity_constant(CostModel.coulomb(1)))
    delta = 0.1
    K = semiconcavity_constant(CostModel.modified(delta, 1))
    assert 4 / delta**3 <= K <= 4.01 / delta**3


def test_parse_and_str():
    c = CostModel.parse("modified:delta=0.25", 2)
    assert c == CostModel.modified(0.25, 2)
    assert CostModel.parse(str(c), 2) == c
    assert CostModel.parse("coulomb") == CostModel.coulomb()
    for bad in ["nope", "modified", "modified:eta=1", "coulomb:delta=1"]:
        with pytest.raises(ValueError):
            CostModel.parse(bad)
    with pytest.raises(ValueError):
        CostModel.modified(-1.0)


def test_matrix_matches_eval(rng):
    c = CostModel.modified(0.3, 2)
    X, Y = rng.normal(size=(5, 2)), rng.normal(size=(4, 2))
    C = c.matrix(X, Y)
    for i in range(5):
        for j in range(4):
            assert C[i, j] == pytest.approx(float(c.eval(X[i], Y[j])), rel=1e-14)
