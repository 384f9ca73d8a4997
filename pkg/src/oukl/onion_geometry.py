"""The slice Sigma_r and the two-onion inclusion
``Omega_{theta r}^(p)(0) >= Omega_r^(p)(z)`` for ``z`` in Sigma_r.

For ``zeta`` in the closure of ``Omega_r^(p)(z)`` the smallest admissible
factor is ``1 / (r phi_p(0, zeta))``; :func:`empirical_theta` finds it by
bisection on the containment predicate over a boundary sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InvalidInputError, LemmaViolationError
from .group_core import DriftModel, GroupPoint, apply_propagator, phi_p_arrays
from .mvf import OnionSpec, slice_radius_sq

BOUNDARY_DIRECTIONS = 64
BOUNDARY_DEPTHS = 64
ANALYTIC_MARGIN = 1.01


@dataclass(frozen=True)
class ThetaReport:
    r: float
    z: GroupPoint
    theta_empirical: float
    theta_analytic: float
    inclusion_verified: bool
    samples: int


def sigma_time(r: float, n_dim: int, p: int) -> float:
    return -(r ** (2.0 / (n_dim + p)))


def sigma_sample(r: float, model: DriftModel, p: int, k: int, seed: int = 0) -> list[GroupPoint]:
    """``k`` points of ``Sigma_r = {t = -r^(2/(N+p)), |x|^2 < -4t}``.

    The first two are the extremes ``x = 0`` and ``|x| = 2 r^(1/(N+p)) (1 - 1e-9)``
    (along the first axis); the rest are uniform in the ball.
    """
    if not r > 0:
        raise InvalidInputError("r must be positive")
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    n = model.dim
    t = sigma_time(r, n, p)
    rmax = 2.0 * r ** (1.0 / (n + p))
    pts = [GroupPoint(np.zeros(n), t)]
    if k >= 2:
        e = np.zeros(n)
        e[0] = rmax * (1.0 - 1e-9)
        pts.append(GroupPoint(e, t))
    rng = np.random.default_rng(seed)
    for _ in range(k - len(pts)):
        d = rng.standard_normal(n)
        d /= np.linalg.norm(d)
        pts.append(GroupPoint(d * rmax * rng.random() ** (1.0 / n), t))
    return pts


def unit_directions(n_dim: int, count: int, seed: int = 0) -> np.ndarray:
    """Deterministic, roughly uniform directions on S^{N-1}."""
    if n_dim == 1:
        return np.array([[-1.0], [1.0]])
    if n_dim == 2:
        th = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    if n_dim == 3:
        # Fibonacci lattice
        i = np.arange(count) + 0.5
        c = 1.0 - 2.0 * i / count
        ph = np.pi * (1.0 + 5.0**0.5) * i
        s = np.sqrt(1.0 - c * c)
        return np.stack([s * np.cos(ph), s * np.sin(ph), c], axis=-1)
    d = np.random.default_rng(seed).standard_normal((count, n_dim))
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def boundary_points(spec: OnionSpec, n_dir: int = BOUNDARY_DIRECTIONS, n_depth: int = BOUNDARY_DEPTHS):
    """Points on the boundary of ``spec``'s onion: ``n_depth`` slices by ``n_dir`` directions.

    Returns ``(x, t)`` arrays of shapes ``(M, N)`` and ``(M,)``.
    """
    dirs = unit_directions(spec.dim, n_dir)
    frac = (np.arange(n_depth) + 0.5) / n_depth
    delta = spec.delta_max * frac
    rad = np.sqrt(np.maximum(slice_radius_sq(delta, spec.r, spec.k), 0.0))
    centers = apply_propagator(spec.model, -delta, spec.center.x)
    x = centers[:, None, :] + rad[:, None, None] * dirs[None, :, :]
    t = np.broadcast_to((spec.center.t - delta)[:, None], x.shape[:-1])
    return x.reshape(-1, spec.dim), np.ascontiguousarray(t).reshape(-1)


def required_theta(r: float, p: int, model: DriftModel, x, t) -> np.ndarray:
    """Per point, the factor ``1 / (r phi_p(0, zeta))`` needed to put it in ``Omega_{theta r}(0)``."""
    n = model.dim
    ph = phi_p_arrays(np.zeros(n), 0.0, x, t, p, model)
    with np.errstate(divide="ignore"):
        return 1.0 / (r * ph)


def _s_log_inv_s(s):
    return s * math.log(1.0 / s)


def analytic_constants(n_dim: int, p: int) -> tuple[float, float, float]:
    """The constants ``(c0, c1, c2)`` of the inclusion argument.

    ``c0 = 2 sup_{0<s<1} s log(1/s) + 8 pi / (N + p)``,
    ``c1 = inf_{4 pi <= s <= 1 + 4 pi} s log(1/s)`` (negative),
    ``c2 = 8 pi / (N + p)``.
    """
    if p < 1:
        raise InvalidInputError("p must be >= 1")
    sup = 1.0 / math.e
    hp = n_dim + p
    c0 = 2.0 * sup + 8.0 * math.pi / hp
    c1 = _s_log_inv_s(1.0 + 4.0 * math.pi)
    c2 = 8.0 * math.pi / hp
    return c0, c1, c2


def analytic_theta(n_dim: int, p: int) -> float:
    """Smallest ``theta`` with ``c0 < c1 + c2 log theta``, padded by 1%."""
    c0, c1, c2 = analytic_constants(n_dim, p)
    return math.exp((c0 - c1) / c2) * ANALYTIC_MARGIN


def numeric_c1(lo: float = 4.0 * math.pi, hi: float = 1.0 + 4.0 * math.pi) -> float:
    """Bounded 1-D minimization of ``s log(1/s)``; used to cross-check the closed form."""
    res = minimize_scalar(_s_log_inv_s, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    return min(float(res.fun), _s_log_inv_s(lo), _s_log_inv_s(hi))


def empirical_theta(
    r: float,
    z: GroupPoint,
    p: int,
    model: DriftModel,
    tol: float = 1e-3,
    n_dir: int = BOUNDARY_DIRECTIONS,
    n_depth: int = BOUNDARY_DEPTHS,
    theta_hi: float | None = None,
) -> float:
    """Smallest ``theta >= 1`` (to relative ``tol``) whose onion at the origin
    contains every boundary sample of ``Omega_r^(p)(z)``."""
    t_sigma = sigma_time(r, model.dim, p)
    if not (math.isclose(z.t, t_sigma, rel_tol=1e-12) and z.x @ z.x < -4.0 * z.t):
        raise InvalidInputError(f"{z!r} is not in Sigma_r for r={r}")
    if theta_hi is None:
        theta_hi = 10.0 * analytic_theta(model.dim, p)
    x, t = boundary_points(OnionSpec(z, r, p, model), n_dir, n_depth)
    ph = phi_p_arrays(np.zeros(model.dim), 0.0, x, t, p, model)

    def contained(theta):
        return bool(np.all(ph > 1.0 / (theta * r)))

    if contained(1.0):
        return 1.0
    if not contained(theta_hi):
        raise LemmaViolationError(f"inclusion fails at theta={theta_hi:g} for r={r}, z={z!r}")
    lo, hi = 1.0, theta_hi
    while hi / lo - 1.0 > tol:
        mid = math.sqrt(lo * hi)
        if contained(mid):
            hi = mid
        else:
            lo = mid
    return hi


def two_onion_sweep(
    r_grid, model: DriftModel, p: int, k: int, seed: int = 0, tol: float = 1e-3
) -> list[ThetaReport]:
    """Run :func:`empirical_theta` over ``k`` Sigma_r samples for every ``r``."""
    r_grid = list(r_grid)
    if not r_grid or any(not r > 0 for r in r_grid):
        raise InvalidInputError("r_grid must be non-empty and positive")
    theta_a = analytic_theta(model.dim, p)
    reports = []
    for i, r in enumerate(r_grid):
        for z in sigma_sample(r, model, p, k, seed=seed + i):
            th = empirical_theta(r, z, p, model, tol=tol)
            x, t = boundary_points(OnionSpec(z, r, p, model))
            req = required_theta(r, p, model, x, t)
            verified = bool(np.all(req < theta_a))
            reports.append(ThetaReport(r, z, th, theta_a, verified, len(t)))
    return reports
