import math

import numpy as np
import pytest

from oukl.errors import DomainError, InvalidInputError
from oukl.group_core import DriftModel, GroupPoint
from oukl.harnack import (
    admissible_depth,
    bounded_corpus_audit,
    exponential_gap_threshold,
    family_residuals,
    harnack_constant,
    harnack_verify,
    kernel_lower_bound,
    kernel_upper_bound,
    liouville_limit_demo,
    loglog_slope,
    ratio_bound,
    scaling_exponent,
    translate_field,
)
from oukl.harnack import test_family as make_family

# frozen from a run of harnack_constant with the default sweep (r in {0.1, 1, 10}, seed 0)
C_ROT2 = 8756.491911820129
C_ANTI3 = 43352.75600792776


@pytest.mark.parametrize("kind", ["constant", "quadratic", "exponential", "fundamental"])
def test_families_solve_the_equation(anti3, kind):
    fam = make_family(anti3, kind)
    for label, res in family_residuals(fam, anti3).items():
        assert res <= 1e-4, label


def test_exponential_family_needs_kernel(rot2):
    with pytest.raises(InvalidInputError):
        make_family(rot2, "exponential")
    with pytest.raises(InvalidInputError):
        make_family(rot2, "polynomial")


@pytest.mark.parametrize("n, p", [(2, 5), (2, 6), (3, 5)])
def test_kernel_bound_scaling(n, p):
    model = DriftModel.rotation(1.0) if n == 2 else DriftModel(np.array([[0, -1, 2], [1, 0, -0.5], [-2, 0.5, 0.0]]))
    rs = [0.1, 1.0, 10.0]
    a = scaling_exponent(n, p)
    lo = [kernel_lower_bound(r, p, model, 4, 500).extreme for r in rs]
    hi = [kernel_upper_bound(r, p, model, 4, 500).extreme for r in rs]
    assert loglog_slope(rs, lo) == pytest.approx(a, abs=0.05)
    assert loglog_slope(rs, hi) == pytest.approx(a, abs=0.05)


def test_upper_bound_parts(rot2):
    rep = kernel_upper_bound(1.0, 5, rot2, 4, 500)
    assert rep.extras["assembled"] >= rep.normalized > 0


def test_kernel_bounds_need_large_p(rot2):
    with pytest.raises(InvalidInputError):
        kernel_lower_bound(1.0, 4, rot2)


def test_harnack_constant_frozen(rot2, anti3):
    assert harnack_constant(rot2, 5) == pytest.approx(C_ROT2, rel=1e-9)
    assert harnack_constant(anti3, 5) == pytest.approx(C_ANTI3, rel=1e-9)
    assert ratio_bound(1.0, 5, rot2).extras["C"] >= 2.0


def test_sharp_exponential_case(anti3):
    for u in make_family(anti3, "exponential").members:
        rep = harnack_verify(u, GroupPoint.origin(3), anti3, C_ANTI3, n_samples=4000)
        assert rep.sup_ratio == pytest.approx(math.e, abs=1e-3)
        assert rep.passed and not rep.restricted


def test_zero_drift_sharp_case():
    model = DriftModel.zero(1)
    u = make_family(model, "exponential").members[1]
    rep = harnack_verify(u, GroupPoint.origin(1), model, 100.0, n_samples=2000)
    assert rep.sup_ratio == pytest.approx(math.e, abs=1e-6)


def test_fundamental_family_restricted(rot2):
    for u in make_family(rot2, "fundamental").members:
        rep = harnack_verify(u, GroupPoint.origin(2), rot2, C_ROT2, n_samples=2000)
        assert rep.restricted and rep.passed
        assert rep.depth == pytest.approx(admissible_depth(u, GroupPoint.origin(2), 2))


def test_admissible_depth_errors(rot2):
    u = make_family(rot2, "fundamental").members[0]
    with pytest.raises(DomainError):
        admissible_depth(u, GroupPoint([0.0, 0.0], -10.0), 2)
    assert admissible_depth(make_family(rot2, "constant").members[0], GroupPoint.origin(2), 2) == math.inf


def test_translation_covariance(anti3):
    u = make_family(anti3, "exponential").members[0]
    w = GroupPoint([0.3, -0.2, 0.5], -0.7)
    v = translate_field(u, w, anti3)
    a = harnack_verify(u, w, anti3, C_ANTI3, n_samples=500, refine=0)
    b = harnack_verify(v, GroupPoint.origin(3), anti3, C_ANTI3, n_samples=500, refine=0)
    assert a.sup_ratio == pytest.approx(b.sup_ratio, rel=1e-12)


def test_liouville_demo(anti3):
    u = make_family(anti3, "exponential").members[0]
    b = np.array([float(s) for s in u.label.split("b=")[1].strip("[]").split(",")])
    xs = [[0.0, 0.0, 0.0], [1.0, -1.0, 2.0]]
    t_grid = -np.geomspace(0.1, 100.0, 200)
    table = liouville_limit_demo(u, 0.0, xs, t_grid, 1e-6)
    assert table.converged
    for i, x in enumerate(xs):
        thr = exponential_gap_threshold(b / np.linalg.norm(b), x, math.log(1e6))
        assert table.thresholds[i] is not None
        gaps = [row.gap for row in table.rows if row.x == tuple(x) and row.t < thr]
        assert gaps and max(gaps) <= 1e-6


def test_liouville_grid_must_descend(anti3):
    u = make_family(anti3, "constant").members[0]
    with pytest.raises(InvalidInputError):
        liouville_limit_demo(u, 0.5, [[0, 0, 0]], [-1.0, -0.5], 1e-6)


def test_bounded_members_are_constant(anti3):
    fams = [make_family(anti3, k) for k in ("constant", "exponential", "fundamental")]
    for label, bounded, constant in bounded_corpus_audit(fams, anti3):
        assert not bounded or constant, label
