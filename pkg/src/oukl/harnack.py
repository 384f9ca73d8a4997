"""Kernel bounds behind the global Harnack inequality, the inequality itself on
a corpus of explicit solutions, and the Liouville limit at t = -infinity.

Everything is evaluated at the base point ``z0 = (0, 0)`` unless a point is
passed explicitly; the operator is left-invariant, so other base points are
reached by translation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import minimize

from .errors import DomainError, InvalidInputError, LemmaViolationError
from .group_core import (
    DriftModel,
    GroupPoint,
    apply_propagator,
    gamma_arrays,
    paraboloid_quotient_arrays,
    relative_arrays,
)
from .mvf import (
    OnionSpec,
    SolutionField,
    kernel_R_sq_arrays,
    kernel_W_arrays,
    omega,
    slice_radius_sq,
    weight_arrays,
)
from .onion_geometry import analytic_theta, sigma_sample

FAMILY_KINDS = ("constant", "quadratic", "exponential", "fundamental")
RESIDUAL_TOL = 1e-4
FD_STEP = 1e-3
DEFAULT_P = 5
PARABOLOID_DEPTH = 50.0
NM_RESTARTS = 4


@dataclass(frozen=True)
class HarmonicFamily:
    kind: str
    members: list[SolutionField]


@dataclass(frozen=True)
class KernelBoundReport:
    r: float
    p: int
    exponent: float
    extreme: float
    normalized: float
    n_samples: int
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class HarnackReport:
    label: str
    z0: GroupPoint
    sup_ratio: float
    C: float
    passed: bool
    n_samples: int
    depth: float
    restricted: bool = False
    degenerate: bool = False
    argmax: GroupPoint | None = None


@dataclass(frozen=True)
class LiouvilleRow:
    x: tuple
    t: float
    u: float
    gap: float


@dataclass(frozen=True)
class LiouvilleTable:
    label: str
    inf_value: float
    eps: float
    rows: list[LiouvilleRow]
    thresholds: dict
    converged: bool


# --- the solution corpus ------------------------------------------------------


def _exp_field(b: np.ndarray) -> SolutionField:
    bb = float(b @ b)
    return SolutionField(
        lambda x, t: np.exp(x @ b + bb * t),
        label=f"exp(<b,x>+|b|^2 t), b={np.round(b, 6).tolist()}",
        nonnegative=True,
    )


def _gamma_mixture(model, poles, tau0, weights) -> SolutionField:
    poles = np.asarray(poles, dtype=float)
    weights = np.asarray(weights, dtype=float)

    def ev(x, t):
        out = np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]))
        for w, xi in zip(weights, poles):
            out = out + w * gamma_arrays(x, t, xi, tau0, model)
        return out

    label = "Gamma" if len(poles) == 1 else f"Gamma mixture ({len(poles)} poles)"
    return SolutionField(ev, domain_floor=float(tau0), label=f"{label}, tau0={tau0:g}", nonnegative=True)


def test_family(
    model: DriftModel,
    kind: str,
    *,
    shift: float = 1.0,
    tau0: float = -4.0,
    n_poles: int = 3,
    seed: int = 0,
) -> HarmonicFamily:
    """Explicit solutions of ``Lu = 0`` of the requested kind.

    * ``constant``: ``u = c`` for a few ``c > 0``.
    * ``quadratic``: ``|x|^2 + 2 N t + shift``; signed, for mean-value tests only.
    * ``exponential``: ``exp(<b,x> + |b|^2 t)`` for ``b`` running over an
      orthonormal basis of ``ker B`` and its negatives.
    * ``fundamental``: ``Gamma(., (xi0, tau0))`` and a positive mixture of such
      kernels with a common pole time; valid for ``t > tau0``.
    """
    model.require_antisymmetric()
    n = model.dim
    if kind == "constant":
        members = []
        for c in (0.5, 1.0, 3.0):
            members.append(
                SolutionField(lambda x, t, c=c: np.full(np.shape(t), c), label=f"constant {c:g}",
                              nonnegative=True, bounded=True)
            )
    elif kind == "quadratic":
        members = [
            SolutionField(lambda x, t: np.sum(x * x, axis=-1) + 2.0 * n * t + shift,
                          label=f"|x|^2+2Nt+{shift:g}")
        ]
    elif kind == "exponential":
        ker = null_space(model.B, rcond=1e-10)
        if ker.shape[1] == 0:
            raise InvalidInputError("ker B is trivial: no exponential solutions of this form")
        members = [_exp_field(s * ker[:, j]) for j in range(ker.shape[1]) for s in (1.0, -1.0)]
    elif kind == "fundamental":
        rng = np.random.default_rng(seed)
        poles = rng.normal(scale=0.5, size=(n_poles, n))
        weights = rng.uniform(0.5, 2.0, size=n_poles)
        members = [
            _gamma_mixture(model, poles[:1], tau0, [1.0]),
            _gamma_mixture(model, poles, tau0, weights),
        ]
    else:
        raise InvalidInputError(f"unknown family kind {kind!r}; expected one of {FAMILY_KINDS}")
    return HarmonicFamily(kind, members)


test_family.__test__ = False  # keep pytest from collecting it


def operator_residual(u: SolutionField, model: DriftModel, x, t, h: float = FD_STEP) -> np.ndarray:
    """``Delta u + <Bx, grad u> - du/dt`` by second-order central differences."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    n = model.dim
    u0 = u(x, t)
    lap = np.zeros_like(u0)
    drift = np.zeros_like(u0)
    bx = x @ model.B.T
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        up, um = u(x + e, t), u(x - e, t)
        lap = lap + (up - 2.0 * u0 + um) / (h * h)
        drift = drift + bx[..., i] * (up - um) / (2.0 * h)
    dt = (u(x, t + h) - u(x, t - h)) / (2.0 * h)
    return lap + drift - dt


def family_residuals(family: HarmonicFamily, model: DriftModel, n_points: int = 100, seed: int = 0):
    """Largest absolute finite-difference residual of each member on random domain points."""
    rng = np.random.default_rng(seed)
    n = model.dim
    out = {}
    for u in family.members:
        d = rng.standard_normal((n_points, n))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        x = 2.0 * d * rng.random(n_points)[:, None] ** (1.0 / n)
        if u.is_global:
            t = rng.uniform(-2.0, 0.5, n_points)
        else:
            t = u.domain_floor + 0.1 + 2.0 * FD_STEP + rng.uniform(0.0, 2.0, n_points)
        out[u.label] = float(np.max(np.abs(operator_residual(u, model, x, t))))
    return out


# --- sampling helpers ---------------------------------------------------------


def onion_samples(spec: OnionSpec, n: int, rng: np.random.Generator, n_axis: int = 64):
    """Interior points of ``spec``'s onion: ``n`` uniform-in-slice points at
    uniform depths plus ``n_axis`` points on the slice centres."""
    n_dim = spec.dim
    frac = rng.uniform(1e-6, 1.0 - 1e-6, n)
    frac = np.concatenate([frac, (np.arange(n_axis) + 0.5) / n_axis])
    delta = spec.delta_max * frac
    rad = np.sqrt(np.maximum(slice_radius_sq(delta, spec.r, spec.k), 0.0))
    d = rng.standard_normal((n, n_dim))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    scale = rng.random(n) ** (1.0 / n_dim) * (1.0 - 1e-9)
    y = np.concatenate([d * scale[:, None], np.zeros((n_axis, n_dim))]) * rad[:, None]
    centers = apply_propagator(spec.model, -delta, spec.center.x)
    return centers + y, spec.center.t - delta


def _weight_rel(y, s, r, p):
    return kernel_R_sq_arrays(y, s, r, p), weight_arrays(y, s, r, p)


def _sweep_points(r: float, p: int, model: DriftModel, n_z: int, n_zeta: int, seed: int):
    """Yield ``(z, x_zeta, t_zeta)`` for ``z`` in Sigma_r and samples of ``Omega_r(z)``."""
    for j, z in enumerate(sigma_sample(r, model, p, n_z, seed=seed)):
        rng = np.random.default_rng([seed, j])
        xs, ts = onion_samples(OnionSpec(z, r, p, model), n_zeta, rng)
        yield z, xs, ts


# --- kernel bounds ------------------------------------------------------------


def scaling_exponent(n_dim: int, p: int) -> float:
    return (p - 2.0) / (n_dim + p)


def kernel_lower_bound(
    r: float, p: int, model: DriftModel, n_z: int = 16, n_zeta: int = 4000, seed: int = 0
) -> KernelBoundReport:
    """Minimum of ``W_{2 theta r}(z0^{-1} o zeta)`` over ``zeta`` in ``Omega_r(z)``, ``z`` in Sigma_r.

    These are the points where the lower bound enters the Harnack chain; each
    must lie in ``Omega_{2 theta r}(0)``.
    """
    if p <= 4:
        raise InvalidInputError("kernel bounds need p > 4")
    model.require_antisymmetric()
    theta = analytic_theta(model.dim, p)
    big = 2.0 * theta * r
    lo = math.inf
    count = 0
    for z, xs, ts in _sweep_points(r, p, model, n_z, n_zeta, seed):
        rsq, w = _weight_rel(xs, ts, big, p)
        if np.any(rsq <= 0.0):
            raise LemmaViolationError(f"sample of Omega_r(z) outside the enlarged onion (r={r}, z={z!r})")
        lo = min(lo, float(np.min(w)))
        count += len(ts)
    a = scaling_exponent(model.dim, p)
    return KernelBoundReport(r, p, a, lo, lo / r**a, count)


def kernel_upper_bound(
    r: float, p: int, model: DriftModel, n_z: int = 16, n_zeta: int = 4000, seed: int = 0
) -> KernelBoundReport:
    """Maxima of ``K1 = R^p W`` and ``K2 = R^(p+2) / (t - tau)^2`` at ``z^{-1} o zeta``.

    ``z = (x, t)`` ranges over the paraboloid slice at ``t = -r^(2/(N+p))``.
    ``extreme`` holds the combined weight maximum; ``extras`` the parts.
    """
    if p <= 4:
        raise InvalidInputError("kernel bounds need p > 4")
    model.require_antisymmetric()
    k1 = k2 = wmax = 0.0
    count = 0
    for z, xs, ts in _sweep_points(r, p, model, n_z, n_zeta, seed):
        y, s = relative_arrays(z.x, z.t, xs, ts, model)
        rsq = np.maximum(kernel_R_sq_arrays(y, s, r, p), 0.0)
        K1 = rsq ** (p / 2.0) * kernel_W_arrays(y, s)
        K2 = rsq ** ((p + 2) / 2.0) / (s * s)
        _, w = _weight_rel(y, s, r, p)
        k1 = max(k1, float(np.max(K1)))
        k2 = max(k2, float(np.max(K2)))
        wmax = max(wmax, float(np.max(w)))
        count += len(ts)
    a = scaling_exponent(model.dim, p)
    scale = r**a
    assembled = omega(p) * (k1 + p / (4.0 * (p + 2)) * k2) / scale
    extras = {"K1": k1 / scale, "K2": k2 / scale, "assembled": assembled}
    return KernelBoundReport(r, p, a, wmax, wmax / scale, count, extras)


def ratio_bound(
    r: float, p: int, model: DriftModel, n_z: int = 16, n_zeta: int = 4000, seed: int = 0
) -> KernelBoundReport:
    """Minimum of ``W_{2 theta r}(z0^{-1} o zeta) / W_r(z^{-1} o zeta)`` over interior samples.

    ``extras['C']`` is the constant ``2 theta / min ratio``.
    """
    if p <= 4:
        raise InvalidInputError("kernel bounds need p > 4")
    model.require_antisymmetric()
    theta = analytic_theta(model.dim, p)
    lo = math.inf
    count = 0
    for z, xs, ts in _sweep_points(r, p, model, n_z, n_zeta, seed):
        rsq_big, w_big = _weight_rel(xs, ts, 2.0 * theta * r, p)
        if np.any(rsq_big <= 0.0):
            raise LemmaViolationError(f"sample of Omega_r(z) outside the enlarged onion (r={r}, z={z!r})")
        y, s = relative_arrays(z.x, z.t, xs, ts, model)
        _, w_small = _weight_rel(y, s, r, p)
        ok = w_small > 0.0
        lo = min(lo, float(np.min(w_big[ok] / w_small[ok])))
        count += int(np.sum(ok))
    return KernelBoundReport(r, p, 0.0, lo, lo, count, {"theta": theta, "C": 2.0 * theta / lo})


def harnack_constant(
    model: DriftModel, p: int = DEFAULT_P, r_grid=(0.1, 1.0, 10.0), n_z: int = 16, n_zeta: int = 4000,
    seed: int = 0,
) -> float:
    """Empirical Harnack constant ``2 theta / (smallest sampled kernel ratio over the sweep)``."""
    reports = [ratio_bound(r, p, model, n_z, n_zeta, seed) for r in r_grid]
    theta = reports[0].extras["theta"]
    return 2.0 * theta / min(rep.extreme for rep in reports)


def loglog_slope(r_values, extremes) -> float:
    lr = np.log(np.asarray(r_values, dtype=float))
    le = np.log(np.asarray(extremes, dtype=float))
    return float(np.polyfit(lr, le, 1)[0])


# --- Harnack inequality -------------------------------------------------------


def admissible_depth(u: SolutionField, z0: GroupPoint, n_dim: int, p: int = DEFAULT_P) -> float:
    """Largest paraboloid depth whose Harnack onions stay above ``u``'s domain floor."""
    if u.is_global:
        return math.inf
    gap = z0.t - u.domain_floor
    if gap <= 0:
        raise DomainError(f"base point t={z0.t} is not inside the domain of {u.label}")
    k = (n_dim + p) / 2.0
    theta = analytic_theta(n_dim, p)
    # Omega_{2 theta r}(z0) reaches (2 theta)^(1/k) |t| / (4 pi) below z0 when r^(1/k) = |t|
    return 0.999 * gap * 4.0 * math.pi / (2.0 * theta) ** (1.0 / k)


def _paraboloid_points(z0, model, depth, delta, ball):
    x = apply_propagator(model, -delta, z0.x) + 2.0 * np.sqrt(delta)[:, None] * ball
    return x, z0.t - delta


def harnack_verify(
    u: SolutionField,
    z0: GroupPoint,
    model: DriftModel,
    C: float,
    n_samples: int = 10_000,
    seed: int = 0,
    depth: float = PARABOLOID_DEPTH,
    p: int = DEFAULT_P,
    refine: int = 4,
) -> HarnackReport:
    """Estimate ``sup u(z) / u(z0)`` over the paraboloid ``P(z0)`` truncated at ``depth``.

    Points are drawn uniformly from the truncated paraboloid; the best
    ``refine`` of them seed a Nelder-Mead search inside it.  Half-space
    solutions shrink the depth so every onion of the argument fits the domain,
    and the report is flagged ``restricted``.
    """
    model.require_antisymmetric()
    n = model.dim
    restricted = not u.is_global
    depth = min(depth, admissible_depth(u, z0, n, p))
    u0 = u.at_point(z0)
    rng = np.random.default_rng(seed)
    # volume of the slice at depth d grows like d^(N/2)
    delta = depth * rng.random(n_samples) ** (1.0 / (n / 2.0 + 1.0))
    delta = np.maximum(delta, 1e-12)
    g = rng.standard_normal((n_samples, n))
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    ball = g * (rng.random(n_samples) ** (1.0 / n))[:, None] * (1.0 - 1e-12)
    x, t = _paraboloid_points(z0, model, depth, delta, ball)
    vals = u(x, t)

    best_val = float(np.max(vals))
    best = int(np.argmax(vals))
    best_z = GroupPoint(x[best], t[best])

    if refine:
        def unpack(q):
            d = depth / (1.0 + math.exp(-q[0]))
            v = q[1:]
            nv = np.linalg.norm(v)
            b = v * ((1.0 - 1e-12) / nv) if nv > 1.0 - 1e-12 else v
            xx, tt = _paraboloid_points(z0, model, depth, np.array([d]), b[None, :])
            return xx[0], float(tt[0])

        def obj(q):
            xx, tt = unpack(q)
            return -float(u(xx, np.asarray(tt)))

        for i in np.argsort(vals)[::-1][:refine]:
            frac = float(np.clip(delta[i] / depth, 1e-9, 1 - 1e-9))
            q0 = np.concatenate([[math.log(frac / (1.0 - frac))], ball[i]])
            res = minimize(obj, q0, method="Nelder-Mead",
                           options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 1000 * (n + 1)})
            for _ in range(NM_RESTARTS):
                # restarting with a fresh simplex gets Nelder-Mead off flat ridges
                again = minimize(obj, res.x, method="Nelder-Mead",
                                 options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 1000 * (n + 1)})
                if again.fun >= res.fun - 1e-15:
                    break
                res = again
            xx, tt = unpack(res.x)
            val = -float(res.fun)
            inside = paraboloid_quotient_arrays(xx, tt, z0.x, z0.t, model) <= 1.0
            if val > best_val and inside and z0.t - tt <= depth:
                best_val = val
                best_z = GroupPoint(xx, tt)

    if u0 == 0.0:
        return HarnackReport(u.label, z0, math.nan, C, best_val == 0.0, n_samples, depth,
                             restricted, degenerate=True, argmax=best_z)
    sup_ratio = best_val / u0
    return HarnackReport(u.label, z0, sup_ratio, C, bool(sup_ratio <= C), n_samples, depth,
                         restricted, argmax=best_z)


def translate_field(u: SolutionField, w: GroupPoint, model: DriftModel) -> SolutionField:
    """``z -> u(w o z)``; a solution again by left invariance."""
    def ev(x, t):
        t = np.asarray(t, dtype=float)
        return u(x + apply_propagator(model, t, w.x), w.t + t)

    return SolutionField(ev, domain_floor=u.domain_floor - w.t, label=f"{u.label} o l_w",
                         harmonic=u.harmonic, nonnegative=u.nonnegative, bounded=u.bounded)


# --- Liouville at -infinity -----------------------------------------------------


def liouville_limit_demo(
    u: SolutionField, inf_value: float, x_list, t_grid, eps: float = 1e-6
) -> LiouvilleTable:
    """Tabulate ``u(x, t) - inf u`` along a descending ``t_grid``.

    ``thresholds[i]`` is the largest grid time below which every tabulated gap
    at ``x_list[i]`` is at most ``eps`` (None if even the last one is not).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) >= 0):
        raise InvalidInputError("t_grid must be strictly descending")
    rows = []
    thresholds = {}
    for i, x in enumerate(x_list):
        x = np.asarray(x, dtype=float)
        xs = np.broadcast_to(x, (len(t_grid), x.shape[0]))
        vals = u(xs, t_grid)
        gaps = vals - inf_value
        rows.extend(LiouvilleRow(tuple(x.tolist()), float(tk), float(v), float(g))
                    for tk, v, g in zip(t_grid, vals, gaps))
        ok = np.abs(gaps) <= eps
        thr = None
        j = len(t_grid)
        while j > 0 and ok[j - 1]:
            j -= 1
        if j < len(t_grid):
            thr = float(t_grid[j])
        thresholds[i] = thr
    converged = all(v is not None for v in thresholds.values())
    return LiouvilleTable(u.label, float(inf_value), eps, rows, thresholds, converged)


def exponential_gap_threshold(b, x, log_eps_inv: float = 14.0) -> float:
    """Time below which ``exp(<b,x> + |b|^2 t) <= exp(-log_eps_inv)``."""
    b = np.asarray(b, dtype=float)
    return -(float(b @ np.asarray(x, dtype=float)) + log_eps_inv) / float(b @ b)


def bounded_corpus_audit(families, model: DriftModel, n_points: int = 200, seed: int = 0):
    """For every member flagged bounded, check numerically that it is constant.

    Returns ``(label, bounded, constant)`` triples.
    """
    rng = np.random.default_rng(seed)
    out = []
    for fam in families:
        for u in fam.members:
            x = rng.normal(scale=3.0, size=(n_points, model.dim))
            lo = u.domain_floor + 0.5 if not u.is_global else -20.0
            t = rng.uniform(lo, lo + 20.0, n_points)
            v = u(x, t)
            constant = bool(np.max(v) - np.min(v) <= 1e-12 * max(1.0, float(np.max(np.abs(v)))))
            out.append((u.label, u.bounded, constant))
    return out
