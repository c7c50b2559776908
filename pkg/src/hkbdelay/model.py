"""Delay-coupled HKB oscillator pair: vector field, Jacobians, symmetry reductions.

Two oscillators with positions ``x1, x2`` and velocities ``y1, y2``.  Each
oscillator combines van der Pol (``alpha * x**2 * y``) and Rayleigh
(``beta * y**3``) damping with linear anti-damping ``gamma * y``, and the
pair is coupled through a nonlinear velocity coupling that reads the other
oscillator's delayed state::

    x1' = y1
    x2' = y2
    y1' = -(y1*(alpha*x1**2 + beta*y1**2 - gamma) + omega**2 * x1)
          + (a1 + b1*(x1 - x2(t-tau1))**2) * (y1 - y2(t-tau1))
    y2' = -(y2*(alpha*x2**2 + beta*y2**2 - gamma) + (omega+delta)**2 * x2)
          + (a2 + b2*(x2 - x1(t-tau2))**2) * (y2 - y1(t-tau2))

State vectors are numpy arrays ordered ``(x1, x2, y1, y2)``; the module-level
index constants ``X1, X2, Y1, Y2`` encode that layout.  All functions are pure
and broadcast over a leading batch axis.

For symmetric parameters (``a1 == a2``, ``b1 == b2``, ``tau1 == tau2``,
``delta == 0``) the diagonal subspaces ``x2 == x1, y2 == y1`` (in-phase) and
``x2 == -x1, y2 == -y1`` (anti-phase) are invariant, and the dynamics on each
reduces to a single delayed oscillator; those reduced systems serve as
independent verification oracles elsewhere in the package.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace as _dc_replace

import numpy as np
from numba import njit

__all__ = [
    "X1", "X2", "Y1", "Y2",
    "ModelParams", "SubspaceMode",
    "state", "rhs", "jacobians", "reduced_rhs", "reduced_jacobians",
    "get_param", "with_param", "PARAM_NAMES",
]

X1, X2, Y1, Y2 = 0, 1, 2, 3

#: continuation-parameter names; "a", "b", "tau" set both oscillators at once
PARAM_NAMES = (
    "alpha", "beta", "gamma", "omega", "delta",
    "a1", "a2", "b1", "b2", "tau1", "tau2",
    "a", "b", "tau",
)


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of the delay-coupled oscillator pair.

    ``omega`` is the angular frequency of the first oscillator (it enters the
    vector field squared); ``delta`` detunes the second oscillator relative to
    ``omega``.  ``a1, a2`` are linear and ``b1, b2`` nonlinear coupling
    strengths; ``tau1, tau2`` the coupling delays in seconds.
    """

    alpha: float = 12.457
    beta: float = 0.007095
    gamma: float = 0.641
    omega: float = 1.3
    delta: float = 0.0
    a1: float = -0.2
    a2: float = -0.2
    b1: float = 0.2
    b2: float = 0.2
    tau1: float = 0.0
    tau2: float = 0.0

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.tau1 < 0 or self.tau2 < 0:
            raise ValueError(f"delays must be non-negative, got {self.tau1}, {self.tau2}")
        for name in ("alpha", "beta", "gamma", "omega", "delta",
                     "a1", "a2", "b1", "b2", "tau1", "tau2"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"parameter {name} is not finite")

    def symmetric(self) -> bool:
        """True iff the two oscillators are identical (equal couplings and
        delays, zero detuning)."""
        return (self.a1 == self.a2 and self.b1 == self.b2
                and self.tau1 == self.tau2 and self.delta == 0.0)

    @property
    def tau_max(self) -> float:
        return max(self.tau1, self.tau2)

    def replace(self, **kwargs) -> "ModelParams":
        return _dc_replace(self, **kwargs)

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
            "omega": self.omega, "delta": self.delta,
            "a1": self.a1, "a2": self.a2, "b1": self.b1, "b2": self.b2,
            "tau1": self.tau1, "tau2": self.tau2,
        }

    @classmethod
    def symmetric_coupling(cls, a: float, b: float, tau: float = 0.0,
                           **kwargs) -> "ModelParams":
        """Construct symmetric parameters with ``a1 = a2 = a`` etc."""
        return cls(a1=a, a2=a, b1=b, b2=b, tau1=tau, tau2=tau, **kwargs)

    def packed(self) -> np.ndarray:
        """Coefficient vector for the jit kernels: delays excluded."""
        return np.array([self.alpha, self.beta, self.gamma, self.omega,
                         self.delta, self.a1, self.a2, self.b1, self.b2])


class SubspaceMode(enum.Enum):
    """Invariant diagonal subspaces of the symmetric pair."""

    IN_PHASE = "inphase"
    ANTI_PHASE = "antiphase"

    @property
    def sign(self) -> float:
        # +1: oscillator 2 mirrors oscillator 1; -1: it mirrors with flipped sign
        return 1.0 if self is SubspaceMode.IN_PHASE else -1.0


def state(x1: float, x2: float, y1: float, y2: float) -> np.ndarray:
    """State vector in the package's (x1, x2, y1, y2) ordering."""
    return np.array([x1, x2, y1, y2], dtype=float)


def _require_symmetric(p: ModelParams) -> None:
    if not p.symmetric():
        raise ValueError("subspace reduction requires symmetric parameters "
                         "(a1=a2, b1=b2, tau1=tau2, delta=0)")


# ---------------------------------------------------------------------------
# full vector field
# ---------------------------------------------------------------------------

def rhs(p: ModelParams, u, u_tau1, u_tau2) -> np.ndarray:
    """Vector field of the coupled pair.

    Parameters
    ----------
    u : array (..., 4)
        Current state ``(x1, x2, y1, y2)``.
    u_tau1 : array (..., 4)
        State at ``t - tau1``; supplies the delayed ``x2, y2`` read by the
        first oscillator's coupling.
    u_tau2 : array (..., 4)
        State at ``t - tau2``; supplies the delayed ``x1, y1`` read by the
        second oscillator's coupling.
    """
    u = np.asarray(u, dtype=float)
    u1 = np.asarray(u_tau1, dtype=float)
    u2 = np.asarray(u_tau2, dtype=float)
    x1, x2, y1, y2 = u[..., X1], u[..., X2], u[..., Y1], u[..., Y2]
    x2d, y2d = u1[..., X2], u1[..., Y2]
    x1d, y1d = u2[..., X1], u2[..., Y1]

    q = x1 - x2d
    r = x2 - x1d
    w1sq = p.omega ** 2
    w2sq = (p.omega + p.delta) ** 2

    out = np.empty_like(u)
    out[..., X1] = y1
    out[..., X2] = y2
    out[..., Y1] = (-(y1 * (p.alpha * x1 ** 2 + p.beta * y1 ** 2 - p.gamma) + w1sq * x1)
                    + (p.a1 + p.b1 * q ** 2) * (y1 - y2d))
    out[..., Y2] = (-(y2 * (p.alpha * x2 ** 2 + p.beta * y2 ** 2 - p.gamma) + w2sq * x2)
                    + (p.a2 + p.b2 * r ** 2) * (y2 - y1d))
    return out


def jacobians(p: ModelParams, u, u_tau1, u_tau2):
    """Analytic partial derivatives of :func:`rhs`.

    Returns ``(J0, J1, J2)`` with ``J0 = d rhs / d u``,
    ``J1 = d rhs / d u_tau1``, ``J2 = d rhs / d u_tau2``, each of shape
    ``(..., 4, 4)``.
    """
    u = np.asarray(u, dtype=float)
    u1 = np.asarray(u_tau1, dtype=float)
    u2 = np.asarray(u_tau2, dtype=float)
    x1, x2, y1, y2 = u[..., X1], u[..., X2], u[..., Y1], u[..., Y2]
    x2d, y2d = u1[..., X2], u1[..., Y2]
    x1d, y1d = u2[..., X1], u2[..., Y1]

    q = x1 - x2d
    r = x2 - x1d
    c1 = p.a1 + p.b1 * q ** 2
    c2 = p.a2 + p.b2 * r ** 2
    v1 = y1 - y2d
    v2 = y2 - y1d

    batch = u.shape[:-1]
    J0 = np.zeros(batch + (4, 4))
    J1 = np.zeros(batch + (4, 4))
    J2 = np.zeros(batch + (4, 4))

    J0[..., X1, Y1] = 1.0
    J0[..., X2, Y2] = 1.0

    J0[..., Y1, X1] = -2.0 * p.alpha * x1 * y1 - p.omega ** 2 + 2.0 * p.b1 * q * v1
    J0[..., Y1, Y1] = -(p.alpha * x1 ** 2 + 3.0 * p.beta * y1 ** 2 - p.gamma) + c1
    J0[..., Y2, X2] = (-2.0 * p.alpha * x2 * y2 - (p.omega + p.delta) ** 2
                       + 2.0 * p.b2 * r * v2)
    J0[..., Y2, Y2] = -(p.alpha * x2 ** 2 + 3.0 * p.beta * y2 ** 2 - p.gamma) + c2

    J1[..., Y1, X2] = -2.0 * p.b1 * q * v1
    J1[..., Y1, Y2] = -c1
    J2[..., Y2, X1] = -2.0 * p.b2 * r * v2
    J2[..., Y2, Y1] = -c2
    return J0, J1, J2


# ---------------------------------------------------------------------------
# symmetry-reduced single-oscillator systems
# ---------------------------------------------------------------------------

def reduced_rhs(mode: SubspaceMode, p: ModelParams, x, y, x_d, y_d):
    """Vector field of the single delayed oscillator on an invariant subspace.

    For in-phase motion the partner's delayed state equals ``(x_d, y_d)``;
    for anti-phase it equals ``(-x_d, -y_d)``.  Returns ``(x', y')``.
    """
    _require_symmetric(p)
    s = mode.sign
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x_d = np.asarray(x_d, dtype=float)
    y_d = np.asarray(y_d, dtype=float)
    ydot = (-(y * (p.alpha * x ** 2 + p.beta * y ** 2 - p.gamma) + p.omega ** 2 * x)
            + (p.a1 + p.b1 * (x - s * x_d) ** 2) * (y - s * y_d))
    return np.asarray(y, dtype=float).copy(), ydot


def reduced_jacobians(mode: SubspaceMode, p: ModelParams, x, y, x_d, y_d):
    """Analytic ``(J0, J1)`` of the reduced system, shapes ``(..., 2, 2)``."""
    _require_symmetric(p)
    s = mode.sign
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x_d = np.asarray(x_d, dtype=float)
    y_d = np.asarray(y_d, dtype=float)
    q = x - s * x_d
    c = p.a1 + p.b1 * q ** 2
    v = y - s * y_d

    batch = np.broadcast(x, y, x_d, y_d).shape
    J0 = np.zeros(batch + (2, 2))
    J1 = np.zeros(batch + (2, 2))
    J0[..., 0, 1] = 1.0
    J0[..., 1, 0] = -2.0 * p.alpha * x * y - p.omega ** 2 + 2.0 * p.b1 * q * v
    J0[..., 1, 1] = -(p.alpha * x ** 2 + 3.0 * p.beta * y ** 2 - p.gamma) + c
    J1[..., 1, 0] = -2.0 * p.b1 * q * v * s
    J1[..., 1, 1] = -c * s
    return J0, J1


# ---------------------------------------------------------------------------
# parameter access by name (continuation front end)
# ---------------------------------------------------------------------------

def get_param(p: ModelParams, name: str) -> float:
    """Read a parameter; the aliases ``a``, ``b``, ``tau`` require the two
    oscillators' values to coincide."""
    if name in ("a", "b", "tau"):
        v1 = getattr(p, name + "1")
        v2 = getattr(p, name + "2")
        if v1 != v2:
            raise ValueError(f"parameter alias {name!r} is ambiguous: "
                             f"{name}1={v1} != {name}2={v2}")
        return v1
    if name not in PARAM_NAMES:
        raise KeyError(f"unknown parameter {name!r}")
    return getattr(p, name)


def with_param(p: ModelParams, name: str, value: float) -> ModelParams:
    """Copy of ``p`` with one (possibly aliased) parameter replaced."""
    if name in ("a", "b", "tau"):
        return p.replace(**{name + "1": value, name + "2": value})
    if name not in PARAM_NAMES:
        raise KeyError(f"unknown parameter {name!r}")
    return p.replace(**{name: value})


# ---------------------------------------------------------------------------
# jit cores shared with the time stepper
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _rhs_full_jit(pv, u, u1, u2, out):  # pragma: no cover - exercised via ddesim
    alpha, beta, gamma, omega, delta = pv[0], pv[1], pv[2], pv[3], pv[4]
    a1, a2, b1, b2 = pv[5], pv[6], pv[7], pv[8]
    x1, x2, y1, y2 = u[0], u[1], u[2], u[3]
    q = x1 - u1[1]
    r = x2 - u2[0]
    out[0] = y1
    out[1] = y2
    out[2] = (-(y1 * (alpha * x1 * x1 + beta * y1 * y1 - gamma) + omega * omega * x1)
              + (a1 + b1 * q * q) * (y1 - u1[3]))
    w2 = omega + delta
    out[3] = (-(y2 * (alpha * x2 * x2 + beta * y2 * y2 - gamma) + w2 * w2 * x2)
              + (a2 + b2 * r * r) * (y2 - u2[2]))


@njit(cache=True, inline="always")
def _rhs_reduced_jit(pv, sign, u, ud, out):  # pragma: no cover - via ddesim
    alpha, beta, gamma, omega = pv[0], pv[1], pv[2], pv[3]
    a, b = pv[5], pv[7]
    x, y = u[0], u[1]
    q = x - sign * ud[0]
    out[0] = y
    out[1] = (-(y * (alpha * x * x + beta * y * y - gamma) + omega * omega * x)
              + (a + b * q * q) * (y - sign * ud[1]))
