import math

import numpy as np
import pytest

from oukl.errors import DomainError, InvalidInputError, SingularInputError
from oukl.group_core import DriftModel, GroupPoint, phi_p, relative_arrays
from oukl.harnack import test_family as make_family
from oukl.mvf import (
    OnionSpec,
    QuadratureConfig,
    SolutionField,
    constant_field,
    exactness_check,
    kernel_R,
    kernel_W,
    mean_value,
    omega,
    onion_contains,
    onion_slice,
    onion_volume_weight_check,
    random_specs,
    weight,
    weight_arrays,
)

from conftest import B3


@pytest.mark.parametrize("p, expected", [(1, 2.0), (2, math.pi), (3, 4 * math.pi / 3), (5, 8 * math.pi**2 / 15)])
def test_omega(p, expected):
    assert omega(p) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("p", [1, 5, 6])
@pytest.mark.parametrize("r", [0.1, 1.0, 10.0])
def test_normalization(n, p, r):
    model = DriftModel(B3) if n == 3 else DriftModel.zero(n) if n == 1 else DriftModel.rotation(0.7)
    spec = OnionSpec(GroupPoint(np.full(n, 0.3), -0.4), r, p, model)
    rep = onion_volume_weight_check(spec)
    assert rep.deviation <= 1e-10


def test_slice_matches_membership(rot2):
    spec = OnionSpec(GroupPoint([0.4, -0.2], 1.0), 2.0, 5, rot2)
    sl = onion_slice(spec, 0.05)
    assert sl is not None
    for frac, inside in [(0.999, True), (1.001, False)]:
        z = GroupPoint(sl.center + np.array([frac * sl.radius, 0.0]), 1.0 - 0.05)
        assert onion_contains(spec, z) is inside
        assert (phi_p(spec.center, z, 5, rot2) > 1 / spec.r) is inside
    assert onion_slice(spec, 2 * spec.delta_max) is None
    with pytest.raises(InvalidInputError):
        onion_slice(spec, 0.0)


def test_onion_excludes_future_and_present(rot2):
    spec = OnionSpec(GroupPoint([0.0, 0.0], 0.0), 1.0, 5, rot2)
    assert not onion_contains(spec, GroupPoint([0.0, 0.0], 0.0))
    assert not onion_contains(spec, GroupPoint([0.0, 0.0], 0.1))


def test_kernels_pointwise(rot2):
    z = GroupPoint([0.1, 0.05], -0.02)
    assert kernel_W(z) == pytest.approx((0.0125) / (4 * 0.0004))
    R = kernel_R(z, 1.0, 5, rot2)
    assert R**2 == pytest.approx(4 * 0.02 * math.log(phi_p(GroupPoint([0, 0], 0.0), z, 5, rot2)))
    expected = omega(5) * R**5 * (kernel_W(z) + 5 / 28 * R**2 / 0.02**2)
    assert weight(z, 1.0, 5, rot2) == pytest.approx(expected, rel=1e-13)


def test_kernel_errors(rot2):
    with pytest.raises(SingularInputError):
        kernel_W(GroupPoint([1.0, 0.0], 0.0))
    with pytest.raises(DomainError):
        kernel_R(GroupPoint([5.0, 0.0], -0.01), 1.0, 5, rot2)
    with pytest.raises(DomainError):
        weight(GroupPoint([0.0, 0.0], 0.5), 1.0, 5, rot2)


def test_weight_is_zero_outside():
    assert weight_arrays(np.array([5.0, 0.0]), -0.01, 1.0, 5) == 0.0


def test_spec_validation(rot2):
    with pytest.raises(InvalidInputError):
        OnionSpec(GroupPoint([0.0, 0.0], 0.0), -1.0, 5, rot2)
    with pytest.raises(InvalidInputError):
        OnionSpec(GroupPoint([0.0, 0.0], 0.0), 1.0, 0, rot2)
    with pytest.raises(InvalidInputError):
        OnionSpec(GroupPoint([0.0, 0.0, 0.0], 0.0), 1.0, 5, rot2)
    with pytest.raises(InvalidInputError):
        OnionSpec(GroupPoint([0.0, 0.0], 0.0), 1.0, 5, DriftModel(np.eye(2)))
    with pytest.raises(InvalidInputError):
        QuadratureConfig(scheme="simpson")


@pytest.mark.parametrize("kind", ["constant", "quadratic", "exponential", "fundamental"])
def test_exactness_on_corpus(anti3, kind):
    for u in make_family(anti3, kind).members:
        for spec in random_specs(anti3, 5, 3, seed=11, floor=u.domain_floor):
            rep = exactness_check(u, spec)
            assert rep.passed
            assert rep.abs_error <= 1e-10 * max(rep.scale, 1.0)


def test_independent_monte_carlo_oracle(rot2):
    # plain rejection sampling in a bounding box of the onion, no shared quadrature code
    u = make_family(rot2, "quadratic").members[0]
    spec = OnionSpec(GroupPoint([0.3, -0.1], 0.5), 1.0, 5, rot2)
    rng = np.random.default_rng(0)
    n = 400_000
    dmax = spec.delta_max
    rmax = math.sqrt(4 * dmax / math.e * (1 + 3.5))  # generous bound on slice radii
    delta = rng.uniform(0, dmax, n)
    y = rng.uniform(-rmax, rmax, (n, 2))
    from oukl.group_core import apply_propagator

    x = apply_propagator(rot2, -delta, spec.center.x) + y
    t = spec.center.t - delta
    ys, s = relative_arrays(spec.center.x, spec.center.t, x, t, rot2)
    w = weight_arrays(ys, s, spec.r, spec.p)
    vol = dmax * (2 * rmax) ** 2
    vals = w * u(x, t) * vol / spec.r
    est, se = vals.mean(), vals.std() / math.sqrt(n)
    assert abs(est - u.at_point(spec.center)) <= 4 * se
    assert abs(mean_value(u, spec).value - u.at_point(spec.center)) <= 1e-12


def test_monte_carlo_scheme(anti3):
    spec = OnionSpec(GroupPoint([0.1, 0.2, 0.3], 0.0), 1.0, 5, anti3)
    u = make_family(anti3, "exponential").members[0]
    res = mean_value(u, spec, QuadratureConfig("monte-carlo", 24, 400, seed=3))
    assert abs(res.value - u.at_point(spec.center)) <= res.error
    again = mean_value(u, spec, QuadratureConfig("monte-carlo", 24, 400, seed=3))
    assert again.value == res.value


def test_error_estimate_is_reported(rot2):
    spec = OnionSpec(GroupPoint([0.0, 0.0], 0.0), 1.0, 5, rot2)
    res = mean_value(constant_field(2.0), spec, QuadratureConfig(n_slices=8, n_per_slice=6))
    assert res.error >= 0 and res.n_evals > 0
    assert abs(res.value - 2.0) <= 1e-6


def test_domain_floor_enforced(rot2):
    u = SolutionField(lambda x, t: np.ones(np.shape(t)), domain_floor=-0.01)
    spec = OnionSpec(GroupPoint([0.0, 0.0], 0.0), 10.0, 5, rot2)
    with pytest.raises(DomainError):
        mean_value(u, spec)


def test_grid_rejects_high_dimension():
    model = DriftModel.zero(4)
    spec = OnionSpec(GroupPoint.origin(4), 1.0, 5, model)
    with pytest.raises(InvalidInputError):
        mean_value(constant_field(), spec)
    res = mean_value(constant_field(), spec, QuadratureConfig("monte-carlo", 16, 200))
    assert abs(res.value - 1.0) <= max(res.error, 1e-2)
