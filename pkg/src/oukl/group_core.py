"""Drift matrices, the propagator E(tau) = exp(-tau B), the Lie group law on
R^{N+1}, the fundamental solution of L = Delta + <Bx, grad> - d/dt and the
paraboloid P(z0).

Scalar entry points take :class:`GroupPoint` objects.  The ``*_arrays``
helpers accept broadcastable arrays (``x`` of shape ``(..., N)``, ``t`` of
shape ``(...)``) and are what the quadrature and sampling code uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

ANTISYMMETRY_TOL = 1e-12

_SCALE_TARGET = 0.5
PROPAGATOR_CACHE_SIZE = 256


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DriftModel:
    """The drift matrix ``B`` (and diffusion matrix ``Q``) of an operator.

    ``Q`` defaults to the identity.  ``antisymmetric`` is computed once at
    construction with an entrywise tolerance of 1e-12.
    """

    B: np.ndarray
    Q: np.ndarray | None = None

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 0:
            B = B.reshape(1, 1)
        if B.ndim != 2 or B.shape[0] != B.shape[1] or B.shape[0] == 0:
            raise InvalidInputError(f"B must be a non-empty square matrix, got shape {B.shape}")
        if not np.all(np.isfinite(B)):
            raise InvalidInputError("B has non-finite entries")
        n = B.shape[0]
        if self.Q is None:
            Q = np.eye(n)
        else:
            Q = np.asarray(self.Q, dtype=float)
            if Q.ndim == 0:
                Q = Q.reshape(1, 1)
            if Q.shape != (n, n):
                raise InvalidInputError(f"Q must have shape {(n, n)}, got {Q.shape}")
            if not np.all(np.isfinite(Q)):
                raise InvalidInputError("Q has non-finite entries")
            if np.max(np.abs(Q - Q.T)) != 0.0:
                raise InvalidInputError("Q must be symmetric")
            if np.min(np.linalg.eigvalsh(Q)) < -1e-12 * max(1.0, np.max(np.abs(Q))):
                raise InvalidInputError("Q must be positive semidefinite")
        object.__setattr__(self, "B", _readonly(B))
        object.__setattr__(self, "Q", _readonly(Q))
        asym = bool(np.max(np.abs(B + B.T)) <= ANTISYMMETRY_TOL)
        object.__setattr__(self, "_antisymmetric", asym)
        object.__setattr__(self, "_zero", not np.any(B))
        object.__setattr__(self, "_propagators", {})

    @property
    def dim(self) -> int:
        return self.B.shape[0]

    @property
    def antisymmetric(self) -> bool:
        return self._antisymmetric

    def require_antisymmetric(self) -> None:
        if not self._antisymmetric:
            raise InvalidInputError(
                "this computation needs an antisymmetric drift matrix B (B^T = -B)"
            )

    @classmethod
    def rotation(cls, alpha: float = 1.0) -> "DriftModel":
        """The planar rotation generator ``[[0, -alpha], [alpha, 0]]``."""
        return cls(np.array([[0.0, -alpha], [alpha, 0.0]]))

    @classmethod
    def zero(cls, n: int) -> "DriftModel":
        return cls(np.zeros((n, n)))


@dataclass(frozen=True, eq=False)
class GroupPoint:
    """A point ``z = (x, t)`` of R^{N+1}."""

    x: np.ndarray
    t: float

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if x.ndim != 1:
            raise InvalidInputError("x must be a vector")
        t = float(self.t)
        if not (np.all(np.isfinite(x)) and math.isfinite(t)):
            raise InvalidInputError("GroupPoint coordinates must be finite")
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "t", t)

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    @classmethod
    def origin(cls, n: int) -> "GroupPoint":
        return cls(np.zeros(n), 0.0)

    def __repr__(self):
        return f"GroupPoint(x={self.x.tolist()}, t={self.t!r})"


@dataclass(frozen=True, eq=False)
class Propagator:
    tau: float
    E: np.ndarray


def _pade_coefficients(m: int) -> tuple[float, ...]:
    f = math.factorial
    return tuple(f(2 * m - j) * f(m) / (f(2 * m) * f(j) * f(m - j)) for j in range(m + 1))


_PADE7 = _pade_coefficients(7)


def expm(A: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring around a diagonal Pade (7, 7) approximant.

    ``A`` is scaled by ``2^-s`` until its 1-norm is at most 1/2, where the
    (7, 7) approximant is accurate to well below double-precision roundoff,
    and the result is squared back ``s`` times.  Works on a single matrix or
    a stack ``(..., n, n)``; the whole stack shares one scaling exponent.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix exponential of a non-finite matrix")
    n = A.shape[-1]
    norm = float(np.max(np.sum(np.abs(A), axis=-2))) if A.size else 0.0
    s = 0
    if norm > _SCALE_TARGET:
        s = int(math.ceil(math.log2(norm / _SCALE_TARGET)))
    As = A / (2.0**s) if s else A
    eye = np.eye(n)
    c = _PADE7
    A2 = As @ As
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = As @ (c[1] * eye + c[3] * A2 + c[5] * A4 + c[7] * A6)
    V = c[0] * eye + c[2] * A2 + c[4] * A4 + c[6] * A6
    result = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        result = result @ result
    return result


def _scalar_propagator(model: DriftModel, tau: float) -> np.ndarray:
    cache = model._propagators
    E = cache.get(tau)
    if E is None:
        if not math.isfinite(tau):
            raise InvalidInputError("tau must be finite")
        if model._zero or tau == 0.0:
            E = np.eye(model.dim)
        else:
            E = expm(-tau * model.B)
        if len(cache) >= PROPAGATOR_CACHE_SIZE:
            cache.clear()
        cache[tau] = E
    return E.copy()


def propagator_matrix(model: DriftModel, tau) -> np.ndarray:
    """``exp(-tau B)`` for a scalar ``tau`` or an array of them (stacked).

    Scalar propagators are memoized per model, since group operations keep
    asking for the same few times.
    """
    if isinstance(tau, (float, int)):
        return _scalar_propagator(model, float(tau))
    tau = np.asarray(tau, dtype=float)
    if not np.all(np.isfinite(tau)):
        raise InvalidInputError("tau must be finite")
    if model._zero:
        return np.broadcast_to(np.eye(model.dim), tau.shape + (model.dim, model.dim)).copy()
    return expm(-tau[..., None, None] * model.B)


def propagator(model: DriftModel, tau: float) -> Propagator:
    """Return the propagator ``E(tau) = exp(-tau B)``."""
    tau = float(tau)
    return Propagator(tau, _readonly(propagator_matrix(model, tau)))


def _check_dims(model: DriftModel, *points: GroupPoint) -> None:
    for p in points:
        if p.dim != model.dim:
            raise InvalidInputError(f"point of dimension {p.dim} used with an N={model.dim} model")


def apply_propagator(model: DriftModel, tau, v) -> np.ndarray:
    """Compute ``E(tau) v`` with broadcasting over leading axes."""
    E = propagator_matrix(model, tau)
    return np.einsum("...ij,...j->...i", E, np.asarray(v, dtype=float))


def compose(a: GroupPoint, b: GroupPoint, model: DriftModel) -> GroupPoint:
    """Group law ``(x, t) o (y, tau) = (y + E(tau) x, t + tau)``."""
    _check_dims(model, a, b)
    x = b.x + propagator_matrix(model, b.t) @ a.x
    return GroupPoint(x, a.t + b.t)


def inverse(z: GroupPoint, model: DriftModel) -> GroupPoint:
    """``z^{-1} = (-E(-t) x, -t)``."""
    _check_dims(model, z)
    return GroupPoint(-(propagator_matrix(model, -z.t) @ z.x), -z.t)


def relative_arrays(x0, t0, x, t, model: DriftModel):
    """Coordinates of ``z0^{-1} o z`` for arrays: ``(x - E(t - t0) x0, t - t0)``."""
    t0 = np.asarray(t0, dtype=float)
    t = np.asarray(t, dtype=float)
    y = np.asarray(x, dtype=float) - apply_propagator(model, t - t0, x0)
    return y, t - t0


def gauss_weierstrass(x, t) -> np.ndarray:
    """The heat kernel ``(4 pi t)^{-N/2} exp(-|x|^2 / (4t))`` for ``t > 0`` and 0 otherwise."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    n = x.shape[-1]
    pos = t > 0
    ts = np.where(pos, t, 1.0)
    val = (4.0 * np.pi * ts) ** (-n / 2.0) * np.exp(-np.sum(x * x, axis=-1) / (4.0 * ts))
    return np.where(pos, val, 0.0)


def gamma_arrays(x, t, xi, tau, model: DriftModel) -> np.ndarray:
    """``Gamma((x,t), (xi,tau))`` with broadcasting.

    The exponent carries the division by ``t - tau``, as in the heat kernel.
    """
    t = np.asarray(t, dtype=float)
    tau = np.asarray(tau, dtype=float)
    d = t - tau
    y = np.asarray(x, dtype=float) - apply_propagator(model, np.where(d > 0, d, 0.0), xi)
    return gauss_weierstrass(y, d)


def gamma(z: GroupPoint, zeta: GroupPoint, model: DriftModel) -> float:
    """Fundamental solution ``Gamma(z, zeta) = gamma(zeta^{-1} o z)``."""
    _check_dims(model, z, zeta)
    model.require_antisymmetric()
    return float(gamma_arrays(z.x, z.t, zeta.x, zeta.t, model))


def phi_p_arrays(x0, t0, x, t, p: int, model: DriftModel) -> np.ndarray:
    t0 = np.asarray(t0, dtype=float)
    t = np.asarray(t, dtype=float)
    d = t0 - t
    g = gamma_arrays(x0, t0, x, t, model)
    ds = np.where(d > 0, d, 1.0)
    return np.where(d > 0, g / (4.0 * np.pi * ds) ** (p / 2.0), 0.0)


def phi_p(z0: GroupPoint, z: GroupPoint, p: int, model: DriftModel) -> float:
    """``phi_p(z0, z) = Gamma(z0, z) / (4 pi (t0 - t))^{p/2}``; zero when ``t >= t0``."""
    _check_dims(model, z0, z)
    model.require_antisymmetric()
    if p < 1:
        raise InvalidInputError("p must be a positive integer")
    return float(phi_p_arrays(z0.x, z0.t, z.x, z.t, p, model))


def paraboloid_quotient_arrays(x, t, x0, t0, model: DriftModel) -> np.ndarray:
    """``|x - E(t - t0) x0|^2 / (4 (t0 - t))``; +inf where ``t >= t0``."""
    t = np.asarray(t, dtype=float)
    t0 = np.asarray(t0, dtype=float)
    d = t0 - t
    y = np.asarray(x, dtype=float) - apply_propagator(model, t - t0, x0)
    q = np.sum(y * y, axis=-1) / (4.0 * np.where(d > 0, d, 1.0))
    return np.where(d > 0, q, np.inf)


def in_paraboloid(z: GroupPoint, z0: GroupPoint, model: DriftModel) -> bool:
    """Membership of ``z`` in ``P(z0) = z0 o {t < -|x|^2/4}`` (open set)."""
    _check_dims(model, z, z0)
    model.require_antisymmetric()
    return bool(paraboloid_quotient_arrays(z.x, z.t, z0.x, z0.t, model) < 1.0)


def paraboloid_threshold(x, z0: GroupPoint) -> float:
    """A time ``T(x, z0)`` with ``(x, t)`` in ``P(z0)`` for every ``t < T``.

    Uses ``|x - E x0| <= |x| + |x0|``, valid because ``E`` is orthogonal.
    """
    x = np.asarray(x, dtype=float)
    return z0.t - (np.linalg.norm(x) + np.linalg.norm(z0.x)) ** 2 / 4.0
