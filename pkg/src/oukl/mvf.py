"""Level sets ("onions") of the weighted fundamental solution, the kernels of
the mean-value formula, and numerical evaluation of that formula.

For ``z0 = (x0, t0)`` the onion ``Omega_r^(p)(z0) = {z : phi_p(z0, z) > 1/r}``
is sliced by depth ``delta = t0 - t``.  Every slice is a Euclidean ball with
center ``E(-delta) x0`` and squared radius
``4 delta log(r / (4 pi delta)^((N+p)/2))``, non-empty only for
``delta < delta_max = r^(2/(N+p)) / (4 pi)``.

The quadrature integrates over slices exactly.  Depth is mapped to
``w = log(delta_max / delta)`` and integrated with a generalized Gauss-Laguerre
rule; each ball is integrated in ``v = |y|^2 / radius^2`` with a Gauss-Jacobi
rule and a product rule on the sphere.  Both rules absorb the algebraic and
logarithmic endpoint behaviour of the kernel, so the weight itself is
evaluated at every node and divided by the rule's weight function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import roots_genlaguerre, roots_jacobi, roots_legendre

from .errors import DomainError, InvalidInputError, SingularInputError
from .group_core import DriftModel, GroupPoint, apply_propagator, relative_arrays

SCHEMES = ("tensor-grid", "monte-carlo")

# points evaluated per vectorized batch in the quadrature loop
_CHUNK = 1 << 18


@dataclass(frozen=True, eq=False)
class OnionSpec:
    center: GroupPoint
    r: float
    p: int
    model: DriftModel

    def __post_init__(self):
        if not (self.r > 0 and math.isfinite(self.r)):
            raise InvalidInputError(f"onion radius r must be positive and finite, got {self.r}")
        if int(self.p) != self.p or self.p < 1:
            raise InvalidInputError(f"kernel order p must be a positive integer, got {self.p}")
        if self.center.dim != self.model.dim:
            raise InvalidInputError("onion center and model dimensions differ")
        self.model.require_antisymmetric()
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "p", int(self.p))

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def k(self) -> float:
        """Half of the homogeneous dimension, ``(N + p) / 2``."""
        return (self.dim + self.p) / 2.0

    @property
    def delta_max(self) -> float:
        return self.r ** (1.0 / self.k) / (4.0 * math.pi)

    def at(self, center: GroupPoint) -> "OnionSpec":
        return OnionSpec(center, self.r, self.p, self.model)

    def scaled(self, factor: float) -> "OnionSpec":
        return OnionSpec(self.center, self.r * factor, self.p, self.model)


@dataclass(frozen=True)
class OnionSlice:
    delta: float
    center: np.ndarray
    radius: float


@dataclass(frozen=True)
class QuadratureConfig:
    scheme: str = "tensor-grid"
    n_slices: int = 48
    n_per_slice: int = 24
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidInputError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.n_slices < 1 or self.n_per_slice < 1:
            raise InvalidInputError("quadrature counts must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must be an unsigned 64-bit integer")

    def coarsened(self) -> "QuadratureConfig":
        return QuadratureConfig(
            self.scheme, max(1, self.n_slices // 2), max(1, self.n_per_slice // 2), self.seed
        )


@dataclass(frozen=True)
class SolutionField:
    """A function ``u(x, t)`` together with what is known about it.

    ``eval`` must accept ``x`` of shape ``(..., N)`` and ``t`` of shape
    ``(...)`` and return an array of shape ``(...)``.  It is valid for
    ``t > domain_floor``.
    """

    eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    domain_floor: float = -math.inf
    label: str = "u"
    harmonic: bool = True
    nonnegative: bool = False
    bounded: bool = False

    def __call__(self, x, t):
        return np.asarray(self.eval(np.asarray(x, dtype=float), np.asarray(t, dtype=float)))

    @property
    def is_global(self) -> bool:
        return self.domain_floor == -math.inf

    def at_point(self, z: GroupPoint) -> float:
        return float(self(z.x, z.t))


@dataclass(frozen=True)
class MeanValueResult:
    value: float
    error: float
    n_evals: int


@dataclass(frozen=True)
class NormalizationReport:
    value: float
    deviation: float
    error: float


def omega(p: int) -> float:
    """Lebesgue measure of the unit ball of R^p."""
    return math.exp(0.5 * p * math.log(math.pi) - math.lgamma(p / 2.0 + 1.0))


def slice_radius_sq(delta, r: float, k: float):
    """Squared slice radius ``4 delta log(r / (4 pi delta)^k)``; negative past ``delta_max``."""
    delta = np.asarray(delta, dtype=float)
    return 4.0 * delta * (math.log(r) - k * np.log(4.0 * np.pi * delta))


def _log_phi_origin(y, s, p):
    """``log phi_p(0, (y, s))`` for ``s < 0``; depends on ``|y|`` only."""
    n = y.shape[-1]
    d = -s
    return -(n + p) / 2.0 * np.log(4.0 * np.pi * d) - np.sum(y * y, axis=-1) / (4.0 * d)


def onion_contains_arrays(spec: OnionSpec, x, t) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    y, s = relative_arrays(spec.center.x, spec.center.t, x, t, spec.model)
    below = s < 0
    ss = np.where(below, s, -1.0)
    inside = math.log(spec.r) + _log_phi_origin(y, ss, spec.p) > 0.0
    return below & inside


def onion_contains(spec: OnionSpec, zeta: GroupPoint) -> bool:
    """``phi_p(z0, zeta) > 1/r``; false whenever ``zeta`` is not strictly earlier than ``z0``."""
    if zeta.dim != spec.dim:
        raise InvalidInputError("dimension mismatch")
    return bool(onion_contains_arrays(spec, zeta.x, zeta.t))


def onion_slice(spec: OnionSpec, delta: float) -> OnionSlice | None:
    """The ball cut out of the onion at depth ``delta``, or None if empty."""
    if not delta > 0:
        raise InvalidInputError(f"slice depth must be positive, got {delta}")
    rad2 = float(slice_radius_sq(delta, spec.r, spec.k))
    if delta >= spec.delta_max or rad2 <= 0.0:
        return None
    center = apply_propagator(spec.model, -delta, spec.center.x)
    return OnionSlice(float(delta), center, math.sqrt(rad2))


def kernel_W_arrays(y, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return 0.25 * np.sum(np.asarray(y) ** 2, axis=-1) / (s * s)


def kernel_W(z: GroupPoint) -> float:
    """``W(x, t) = |x|^2 / (4 t^2)``."""
    if z.t == 0.0:
        raise SingularInputError("W is singular at t = 0")
    return float(kernel_W_arrays(z.x, z.t))


def kernel_R_sq_arrays(y, s, r: float, p: int) -> np.ndarray:
    """``R_r(0, z)^2 = 4 (-t) log(r phi_p(0, z))``; non-positive outside the onion."""
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    below = s < 0
    ss = np.where(below, s, -1.0)
    val = 4.0 * (-ss) * (math.log(r) + _log_phi_origin(y, ss, p))
    return np.where(below, val, -np.inf)


def _require_in_onion(z: GroupPoint, r, p, model, rsq):
    model.require_antisymmetric()
    if z.dim != model.dim:
        raise InvalidInputError("dimension mismatch")
    if not (z.t < 0 and rsq >= 0.0):
        raise DomainError(f"{z!r} is outside the closed onion of radius r={r}, p={p} at the origin")


def kernel_R(z: GroupPoint, r: float, p: int, model: DriftModel) -> float:
    rsq = float(kernel_R_sq_arrays(z.x, z.t, r, p))
    _require_in_onion(z, r, p, model, rsq)
    return math.sqrt(rsq)


def weight_arrays(y, s, r: float, p: int) -> np.ndarray:
    """``W_r^(p)`` at relative coordinates ``(y, s)``; zero outside the onion."""
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    rsq = np.maximum(kernel_R_sq_arrays(y, s, r, p), 0.0)
    s2 = np.where(s < 0, s * s, 1.0)
    bracket = 0.25 * np.sum(y * y, axis=-1) / s2 + p / (4.0 * (p + 2)) * rsq / s2
    return omega(p) * rsq ** (p / 2.0) * bracket


def weight(z: GroupPoint, r: float, p: int, model: DriftModel) -> float:
    """``W_r^(p)(z) = omega_p R^p (W(z) + p/(4(p+2)) (R/t)^2)`` for ``z`` in the onion at the origin."""
    rsq = float(kernel_R_sq_arrays(z.x, z.t, r, p))
    _require_in_onion(z, r, p, model, rsq)
    return float(weight_arrays(z.x, z.t, r, p))


# --- quadrature -------------------------------------------------------------


def _sphere_rule(n_dim: int, n: int):
    """Nodes on the unit sphere S^{N-1} and weights summing to its area."""
    if n_dim == 1:
        return np.array([[-1.0], [1.0]]), np.array([1.0, 1.0])
    if n_dim == 2:
        th = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        return np.stack([np.cos(th), np.sin(th)], axis=-1), np.full(n, 2.0 * np.pi / n)
    if n_dim == 3:
        n_pol = max(2, (n + 1) // 2)
        c, wc = roots_legendre(n_pol)
        ph = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        sn = np.sqrt(1.0 - c * c)
        pts = np.stack(
            [
                np.outer(sn, np.cos(ph)).ravel(),
                np.outer(sn, np.sin(ph)).ravel(),
                np.repeat(c, n),
            ],
            axis=-1,
        )
        return pts, np.outer(wc, np.full(n, 2.0 * np.pi / n)).ravel()
    raise InvalidInputError("tensor-grid quadrature supports N <= 3; use the monte-carlo scheme")


def _depth_rule(spec: OnionSpec, n: int):
    """Depths and weights such that sum(w_i F(delta_i)) ~ integral of F over (0, delta_max)."""
    k = spec.k
    m = k + 1.0
    x, wl = roots_genlaguerre(n, m)
    delta = spec.delta_max * np.exp(-x / k)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        logw = np.log(wl) + x - m * np.log(x)
        w = np.exp(logw) * (spec.delta_max / k) * np.exp(-x / k)
    w = np.where(np.isfinite(w), w, 0.0)
    return delta, w


def _radial_rule(n_dim: int, p: int, n: int):
    """Nodes ``v`` in (0, 1) and weights ``V`` for integrals of ``v^(N/2-1) (1-v)^(p/2) g(v)``."""
    alpha = p / 2.0
    beta = n_dim / 2.0 - 1.0
    xj, wj = roots_jacobi(n, alpha, beta)
    v = (1.0 + xj) / 2.0
    return v, wj / 2.0 ** (alpha + beta + 1.0)


def _check_domain(u: SolutionField, spec: OnionSpec):
    dmax = spec.delta_max
    if not (dmax > 0.0 and math.isfinite(dmax)):
        raise DomainError(f"onion with r={spec.r} is empty or degenerate (delta_max={dmax})")
    if not spec.center.t - dmax > u.domain_floor:
        raise DomainError(
            f"onion reaches t={spec.center.t - dmax}, below the domain floor {u.domain_floor} of {u.label}"
        )


def _integrate_grid(u: SolutionField, spec: OnionSpec, cfg: QuadratureConfig):
    n_dim, p = spec.dim, spec.p
    delta, wd = _depth_rule(spec, cfg.n_slices)
    v, wv = _radial_rule(n_dim, p, cfg.n_per_slice)
    omega_pts, wo = _sphere_rule(n_dim, cfg.n_per_slice)
    rad = np.sqrt(np.maximum(slice_radius_sq(delta, spec.r, spec.k), 0.0))
    centers = apply_propagator(spec.model, -delta, spec.center.x)
    t_slice = spec.center.t - delta

    # per-(slice, radial node) factor: rule weight * ball jacobian / jacobi weight function
    jac = (rad[:, None] ** n_dim / 2.0) * (1.0 - v[None, :]) ** (-p / 2.0)
    fac = wd[:, None] * wv[None, :] * jac  # (S, V)
    scale = rad[:, None] * np.sqrt(v)[None, :]  # (S, V)

    total = 0.0
    n_evals = 0
    n_s, n_v, n_o = len(delta), len(v), len(wo)
    rows_per_chunk = max(1, _CHUNK // (n_v * n_o))
    for a in range(0, n_s, rows_per_chunk):
        b = min(n_s, a + rows_per_chunk)
        yrel = scale[a:b, :, None, None] * omega_pts[None, None, :, :]  # (s, V, O, N)
        x = centers[a:b, None, None, :] + yrel
        t = np.broadcast_to(t_slice[a:b, None, None], x.shape[:-1])
        # kernel evaluated at z0^{-1} o z through the group law
        y, s = relative_arrays(spec.center.x, spec.center.t, x, t, spec.model)
        integrand = u(x, t) * weight_arrays(y, s, spec.r, p)
        total += float(np.sum(fac[a:b, :, None] * wo[None, None, :] * integrand))
        n_evals += integrand.size
    return total / spec.r, n_evals


def _integrate_mc(u: SolutionField, spec: OnionSpec, cfg: QuadratureConfig):
    n_dim, p = spec.dim, spec.p
    delta, wd = _depth_rule(spec, cfg.n_slices)
    rad = np.sqrt(np.maximum(slice_radius_sq(delta, spec.r, spec.k), 0.0))
    centers = apply_propagator(spec.model, -delta, spec.center.x)
    vol_unit = omega(n_dim)
    total = 0.0
    var = 0.0
    m = cfg.n_per_slice
    for i in range(len(delta)):
        if wd[i] == 0.0 or rad[i] == 0.0:
            continue
        rng = np.random.default_rng([cfg.seed, i])
        g = rng.standard_normal((m, n_dim))
        g /= np.linalg.norm(g, axis=-1, keepdims=True)
        g *= rad[i] * rng.random(m)[:, None] ** (1.0 / n_dim)
        x = centers[i] + g
        t = np.full(m, spec.center.t - delta[i])
        y, s = relative_arrays(spec.center.x, spec.center.t, x, t, spec.model)
        vals = u(x, t) * weight_arrays(y, s, spec.r, p)
        vol = vol_unit * rad[i] ** n_dim
        total += wd[i] * vol * float(np.mean(vals))
        if m > 1:
            var += (wd[i] * vol) ** 2 * float(np.var(vals, ddof=1)) / m
    return total / spec.r, math.sqrt(var) / spec.r, m * len(delta)


def mean_value(u: SolutionField, spec: OnionSpec, cfg: QuadratureConfig | None = None) -> MeanValueResult:
    """Evaluate ``(1/r) * integral over the onion of u(z) W_r^(p)(z0^{-1} o z) dz``.

    The grid scheme reports ``|I(cfg) - I(cfg coarsened by 2)|`` as its error;
    the Monte Carlo scheme reports three standard errors.
    """
    cfg = cfg or QuadratureConfig()
    _check_domain(u, spec)
    if cfg.scheme == "tensor-grid":
        fine, n1 = _integrate_grid(u, spec, cfg)
        coarse, n2 = _integrate_grid(u, spec, cfg.coarsened())
        return MeanValueResult(fine, abs(fine - coarse), n1 + n2)
    value, se, n = _integrate_mc(u, spec, cfg)
    return MeanValueResult(value, 3.0 * se, n)


def constant_field(c: float = 1.0) -> SolutionField:
    return SolutionField(
        lambda x, t: np.full(np.shape(t), float(c)),
        label=f"constant {c:g}",
        nonnegative=c >= 0,
        bounded=True,
    )


def onion_volume_weight_check(spec: OnionSpec, cfg: QuadratureConfig | None = None) -> NormalizationReport:
    """Mean-value formula applied to ``u = 1``: the kernel must integrate to ``r``."""
    res = mean_value(constant_field(1.0), spec, cfg)
    return NormalizationReport(res.value, abs(res.value - 1.0), res.error)


@dataclass(frozen=True)
class ExactnessReport:
    value: float
    target: float
    abs_error: float
    scale: float
    tolerance: float
    passed: bool


def exactness_check(
    u: SolutionField, spec: OnionSpec, cfg: QuadratureConfig | None = None, rel_tol: float = 2e-3
) -> ExactnessReport:
    """Compare the mean value of a solution with its value at the center.

    The tolerance is ``max(rel_tol * scale, error estimate)`` where ``scale``
    is the mean value of ``|u|`` over the same onion (equal to ``u(z0)`` for
    nonnegative solutions, and never zero unless ``u`` vanishes there).
    """
    res = mean_value(u, spec, cfg)
    target = u.at_point(spec.center)
    if u.nonnegative:
        scale = abs(res.value)
    else:
        absu = SolutionField(lambda x, t: np.abs(u(x, t)), u.domain_floor, f"|{u.label}|")
        scale = mean_value(absu, spec, cfg).value
    err = abs(res.value - target)
    tol = max(rel_tol * scale, res.error)
    return ExactnessReport(res.value, target, err, scale, tol, bool(err <= tol))


def random_specs(
    model: DriftModel, p: int, n: int, seed: int = 0, floor: float = -math.inf,
    r_range: tuple[float, float] = (0.1, 10.0),
) -> list[OnionSpec]:
    """``n`` onions with log-uniform ``r`` and random centers, kept above ``floor``.

    Centers have standard normal ``x``; ``t`` is uniform in ``[-2, 2]``, or,
    for a finite ``floor``, between 0.5 and 2 above the lowest time the
    onion must reach.
    """
    rng = np.random.default_rng(seed)
    out = []
    lo, hi = math.log(r_range[0]), math.log(r_range[1])
    for _ in range(n):
        r = math.exp(rng.uniform(lo, hi))
        x = rng.standard_normal(model.dim)
        if math.isinf(floor):
            t = rng.uniform(-2.0, 2.0)
        else:
            k = (model.dim + p) / 2.0
            t = floor + r ** (1.0 / k) / (4.0 * math.pi) + rng.uniform(0.5, 2.0)
        out.append(OnionSpec(GroupPoint(x, t), r, p, model))
    return out
