import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from oukl.errors import InvalidInputError
from oukl.group_core import (
    DriftModel,
    GroupPoint,
    compose,
    expm,
    gamma,
    gamma_arrays,
    gauss_weierstrass,
    in_paraboloid,
    inverse,
    paraboloid_threshold,
    phi_p,
    propagator,
    propagator_matrix,
)

from conftest import B3, random_antisymmetric


@pytest.mark.parametrize("n", [1, 2, 3, 5])
@pytest.mark.parametrize("scale", [0.1, 1.0, 20.0])
def test_expm_matches_scipy(n, scale):
    rng = np.random.default_rng(n)
    A = rng.normal(scale=scale, size=(n, n))
    ref = scipy.linalg.expm(A)
    assert np.allclose(expm(A), ref, rtol=1e-11, atol=1e-11 * np.max(np.abs(ref)))


def test_expm_stack():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 3, 3))
    out = expm(A)
    for a, e in zip(A, out):
        assert np.allclose(e, scipy.linalg.expm(a), rtol=1e-12, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.floats(-50, 50), st.integers(0, 2**32 - 1))
def test_propagator_is_orthogonal(n, tau, seed):
    B = random_antisymmetric(np.random.default_rng(seed), n)
    E = propagator(DriftModel(B), tau).E
    assert np.max(np.abs(E @ E.T - np.eye(n))) <= 1e-12


def _taylor_exp(A, terms=200):
    out = np.eye(len(A))
    term = np.eye(len(A))
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


@pytest.mark.parametrize(
    "tau, expected",
    [
        (math.pi / 2, [[0.0, 1.0], [-1.0, 0.0]]),
        (1.0, [[math.cos(1.0), math.sin(1.0)], [-math.sin(1.0), math.cos(1.0)]]),
    ],
)
def test_propagator_matches_taylor_oracle(rot2, tau, expected):
    E = propagator(rot2, tau).E
    oracle = _taylor_exp(-tau * rot2.B)
    assert np.allclose(oracle, expected, atol=1e-14)
    assert np.max(np.abs(E - oracle)) <= 1e-13
    assert np.max(np.abs(E @ E.T - np.eye(2))) <= 1e-12


@pytest.mark.parametrize("n", [1, 2, 4])
def test_zero_drift_propagator_is_identity(n):
    assert np.array_equal(propagator(DriftModel.zero(n), 7.3).E, np.eye(n))


def test_propagator_semigroup(anti3):
    rng = np.random.default_rng(5)
    for tau, sigma in rng.uniform(-10, 10, size=(20, 2)):
        lhs = propagator_matrix(anti3, tau + sigma)
        rhs = propagator_matrix(anti3, tau) @ propagator_matrix(anti3, sigma)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_cached_propagator_is_not_aliased(anti3):
    E = propagator_matrix(anti3, 0.37)
    E[:] = 0.0
    again = propagator_matrix(anti3, 0.37)
    assert np.allclose(again, expm(-0.37 * anti3.B), atol=1e-15)
    stacked = propagator_matrix(anti3, np.array([0.37, 0.37]))
    assert np.allclose(stacked[0], again, atol=1e-14)


def test_propagator_rejects_non_finite_time(anti3):
    with pytest.raises(InvalidInputError):
        propagator_matrix(anti3, math.inf)
    with pytest.raises(InvalidInputError):
        propagator_matrix(anti3, np.array([0.0, math.nan]))


def test_propagator_rotation_closed_form(rot2):
    tau = 0.7
    c, s = math.cos(tau), math.sin(tau)
    # exp(-tau B) for B = [[0,-1],[1,0]] is the rotation by -tau
    assert np.allclose(propagator(rot2, tau).E, [[c, s], [-s, c]], atol=1e-15)


def _pt(rng, n):
    return GroupPoint(rng.normal(size=n), rng.normal())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_group_axioms(seed):
    rng = np.random.default_rng(seed)
    model = DriftModel(B3)
    a, b, c = _pt(rng, 3), _pt(rng, 3), _pt(rng, 3)
    e = GroupPoint.origin(3)
    left = compose(compose(a, b, model), c, model)
    right = compose(a, compose(b, c, model), model)
    assert np.max(np.abs(left.x - right.x)) <= 1e-10 and abs(left.t - right.t) <= 1e-10
    for z in (compose(a, e, model), compose(e, a, model)):
        assert np.allclose(z.x, a.x, atol=1e-12) and z.t == a.t
    for z in (compose(a, inverse(a, model), model), compose(inverse(a, model), a, model)):
        assert np.max(np.abs(z.x)) <= 1e-10 and abs(z.t) <= 1e-12


def test_gamma_reduces_to_heat_kernel_for_zero_drift():
    model = DriftModel.zero(2)
    z, zeta = GroupPoint([0.3, -0.2], 1.5), GroupPoint([1.0, 0.4], 0.25)
    d = z.t - zeta.t
    expected = (4 * math.pi * d) ** -1 * math.exp(-np.sum((z.x - zeta.x) ** 2) / (4 * d))
    assert gamma(z, zeta, model) == pytest.approx(expected, rel=1e-14)


def test_gamma_vanishes_before_pole(anti3):
    assert gamma(GroupPoint([0, 0, 0], 0.0), GroupPoint([0, 0, 0], 1.0), anti3) == 0.0


def test_gamma_is_left_invariant(anti3):
    rng = np.random.default_rng(3)
    z, zeta, w = GroupPoint(rng.normal(size=3), 2.0), GroupPoint(rng.normal(size=3), 0.5), _pt(rng, 3)
    g0 = gamma(z, zeta, anti3)
    g1 = gamma(compose(w, z, anti3), compose(w, zeta, anti3), anti3)
    assert g1 == pytest.approx(g0, rel=1e-12)


def test_gamma_has_unit_mass(rot2):
    # integrate Gamma(., zeta) over x at fixed t > tau
    xs = np.linspace(-20, 20, 801)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([X, Y], axis=-1)
    vals = gamma_arrays(pts, 2.0, np.array([0.5, -1.0]), 0.0, rot2)
    h = xs[1] - xs[0]
    assert np.sum(vals) * h * h == pytest.approx(1.0, abs=1e-10)


def test_gamma_solves_kolmogorov_equation(anti3):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(20, 3))
    t = rng.uniform(0.5, 2.0, 20)
    xi, tau, h = np.array([0.2, -0.1, 0.3]), 0.0, 1e-3

    def g(x, t):
        return gamma_arrays(x, t, xi, tau, anti3)

    lap = sum((g(x + h * e, t) - 2 * g(x, t) + g(x - h * e, t)) / h**2 for e in np.eye(3))
    bx = x @ B3.T
    drift = sum(bx[:, i] * (g(x + h * e, t) - g(x - h * e, t)) / (2 * h) for i, e in enumerate(np.eye(3)))
    dt = (g(x, t + h) - g(x, t - h)) / (2 * h)
    assert np.max(np.abs(lap + drift - dt)) <= 1e-4 * np.max(g(x, t))


def test_phi_p_definition(rot2):
    z0, z = GroupPoint([0.0, 0.0], 0.0), GroupPoint([0.2, 0.1], -0.5)
    assert phi_p(z0, z, 5, rot2) == pytest.approx(gamma(z0, z, rot2) / (4 * math.pi * 0.5) ** 2.5)
    with pytest.raises(InvalidInputError):
        phi_p(z0, z, 0, rot2)


def test_gauss_weierstrass_zero_for_nonpositive_time():
    assert gauss_weierstrass(np.zeros(2), 0.0) == 0.0
    assert gauss_weierstrass(np.zeros(2), -1.0) == 0.0


def test_paraboloid_membership(rot2):
    z0 = GroupPoint([0.5, -0.5], 1.0)
    assert in_paraboloid(GroupPoint(propagator_matrix(rot2, -1.0) @ z0.x, 0.0), z0, rot2)
    assert not in_paraboloid(GroupPoint([0.5, -0.5], 1.0), z0, rot2)  # t = t0 excluded
    assert not in_paraboloid(GroupPoint([10.0, 0.0], 0.0), z0, rot2)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 20))
def test_paraboloid_threshold(x1, x2, below):
    model = DriftModel.rotation(2.0)
    z0 = GroupPoint([1.0, -2.0], 0.5)
    x = np.array([x1, x2])
    t = paraboloid_threshold(x, z0) - below
    assert in_paraboloid(GroupPoint(x, t), z0, model)


def test_antisymmetry_required():
    model = DriftModel(np.eye(2))
    assert not model.antisymmetric
    with pytest.raises(InvalidInputError):
        gamma(GroupPoint([0, 0], 1.0), GroupPoint([0, 0], 0.0), model)


@pytest.mark.parametrize(
    "B, Q",
    [
        (np.zeros((2, 3)), None),
        ([[np.nan]], None),
        (np.zeros((2, 2)), np.ones((3, 3))),
        (np.zeros((2, 2)), [[1.0, 2.0], [0.0, 1.0]]),
        (np.zeros((2, 2)), [[-1.0, 0.0], [0.0, 1.0]]),
    ],
)
def test_drift_model_validation(B, Q):
    with pytest.raises(InvalidInputError):
        DriftModel(B, Q)


def test_group_point_validation():
    with pytest.raises(InvalidInputError):
        GroupPoint([np.inf], 0.0)
    with pytest.raises(InvalidInputError):
        compose(GroupPoint([0.0], 0.0), GroupPoint([0.0, 1.0], 0.0), DriftModel.zero(2))
