"""Periodic orbits of the delay system by piecewise-polynomial collocation.

An orbit is represented on scaled time ``s in [0, 1]`` by its values at
``N*m + 1`` representation nodes (``m+1`` equally spaced Lagrange nodes per
mesh interval, shared at interval ends).  The collocation equations enforce

    u'(c) = T * f(u(c), u((c - tau1/T) mod 1), u((c - tau2/T) mod 1))

at the ``m`` Gauss-Legendre points of every interval, with delayed arguments
wrapped periodically onto the unit circle; periodicity ``u(0) = u(1)`` and an
integral phase condition against a reference orbit close the system.  The
unknowns are all node values plus the period ``T``; corrections use a full
Newton iteration with analytic Jacobians.

Floquet multipliers come from the discretized time-T map on the segment
space: the same collocation blocks, with delayed arguments *unwrapped* into
the previous period(s), define a linear map from one history segment to the
next whose dominant eigenvalues approximate the multipliers (the trivial
multiplier 1 is always present and doubles as a discretization gauge).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace as _dc_replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from . import model
from .model import ModelParams, SubspaceMode
from .spectrum import char_matrix

__all__ = [
    "NewtonDivergedError", "MaxIterationsError", "WrapDepthExceededError",
    "EigFailureError", "HopfResidualTooLargeError", "InsufficientSamplesError",
    "OrbitProfile", "FloquetSpectrum", "OrbitCorrector",
    "newton_correct", "floquet", "branch_from_hopf", "fit_from_samples",
    "amplitude", "orbit_to_json", "orbit_from_json", "save_orbit", "load_orbit",
    "resample_orbit", "orbit_asymmetry",
]

log = logging.getLogger(__name__)

DEFAULT_MESH_N = 40
DEFAULT_DEGREE = 4
WRAP_MAX = 4.0


class NewtonDivergedError(RuntimeError):
    """Residual grew over several consecutive Newton iterations."""


class MaxIterationsError(RuntimeError):
    """Newton failed to meet the tolerance within the iteration budget."""


class WrapDepthExceededError(RuntimeError):
    """Delay exceeds ``WRAP_MAX`` periods of the orbit."""


class EigFailureError(RuntimeError):
    """Eigenvalue extraction for the period map failed."""


class HopfResidualTooLargeError(RuntimeError):
    """Claimed Hopf point does not satisfy the Hopf condition."""


class InsufficientSamplesError(ValueError):
    """Too few samples to determine the piecewise-polynomial profile."""


# ---------------------------------------------------------------------------
# systems: the full pair and its symmetry reductions share one engine
# ---------------------------------------------------------------------------

class _FullSystem:
    name = "full"
    dim = 4

    @staticmethod
    def delays(p):
        return (p.tau1, p.tau2)

    @staticmethod
    def rhs(p, u, uds):
        return model.rhs(p, u, uds[0], uds[1])

    @staticmethod
    def jacs(p, u, uds):
        J0, J1, J2 = model.jacobians(p, u, uds[0], uds[1])
        return J0, [J1, J2]


class _ReducedSystem:
    dim = 2

    def __init__(self, mode: SubspaceMode):
        self.mode = mode
        self.name = mode.value

    @staticmethod
    def delays(p):
        return (p.tau1,)

    def rhs(self, p, u, uds):
        dx, dy = model.reduced_rhs(self.mode, p, u[..., 0], u[..., 1],
                                   uds[0][..., 0], uds[0][..., 1])
        return np.stack([dx, dy], axis=-1)

    def jacs(self, p, u, uds):
        J0, J1 = model.reduced_jacobians(self.mode, p, u[..., 0], u[..., 1],
                                         uds[0][..., 0], uds[0][..., 1])
        return J0, [J1]


_SYSTEMS = {
    "full": _FullSystem(),
    SubspaceMode.IN_PHASE.value: _ReducedSystem(SubspaceMode.IN_PHASE),
    SubspaceMode.ANTI_PHASE.value: _ReducedSystem(SubspaceMode.ANTI_PHASE),
}


def get_system(name):
    if isinstance(name, SubspaceMode):
        name = name.value
    try:
        return _SYSTEMS[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}") from None


# ---------------------------------------------------------------------------
# piecewise Lagrange basis
# ---------------------------------------------------------------------------

def _lagrange_weights(sigma: np.ndarray, m: int, deriv: int = 0) -> np.ndarray:
    """Values (or first derivatives) of the m+1 Lagrange basis polynomials on
    equally spaced local nodes j/m, evaluated at ``sigma``; shape
    ``(len(sigma), m+1)``."""
    nodes = np.arange(m + 1) / m
    sigma = np.asarray(sigma, dtype=float)
    out = np.empty((len(sigma), m + 1))
    for j in range(m + 1):
        denom = np.prod([nodes[j] - nodes[k] for k in range(m + 1) if k != j])
        if deriv == 0:
            val = np.ones_like(sigma)
            for k in range(m + 1):
                if k != j:
                    val = val * (sigma - nodes[k])
            out[:, j] = val / denom
        else:
            total = np.zeros_like(sigma)
            for i in range(m + 1):
                if i == j:
                    continue
                term = np.ones_like(sigma)
                for k in range(m + 1):
                    if k != j and k != i:
                        term = term * (sigma - nodes[k])
                total += term
            out[:, j] = total / denom
    return out


class PiecewiseBasis:
    """Continuous piecewise-Lagrange representation on a mesh of [0, 1]."""

    def __init__(self, mesh: np.ndarray, degree: int):
        mesh = np.asarray(mesh, dtype=float)
        if mesh[0] != 0.0 or abs(mesh[-1] - 1.0) > 1e-14 or np.any(np.diff(mesh) <= 0):
            raise ValueError("mesh must strictly increase from 0 to 1")
        self.mesh = mesh
        self.degree = int(degree)
        self.n_intervals = len(mesh) - 1
        self.n_points = self.n_intervals * self.degree + 1
        h = np.diff(mesh)
        offs = np.arange(self.degree + 1) / self.degree
        pts = (mesh[:-1, None] + h[:, None] * offs[None, :])
        self.nodes = np.concatenate([pts[:, :-1].ravel(), [1.0]])

    def locate(self, s):
        s = np.asarray(s, dtype=float)
        i = np.clip(np.searchsorted(self.mesh, s, side="right") - 1,
                    0, self.n_intervals - 1)
        h = self.mesh[i + 1] - self.mesh[i]
        sigma = (s - self.mesh[i]) / h
        return i, sigma, h

    def eval_matrix(self, s, deriv: int = 0) -> np.ndarray:
        """Dense operator mapping node values to values (derivatives) at
        ``s``; shape ``(len(s), n_points)``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        i, sigma, h = self.locate(s)
        W = _lagrange_weights(sigma, self.degree, deriv=deriv)
        if deriv == 1:
            W = W / h[:, None]
        out = np.zeros((len(s), self.n_points))
        cols = i[:, None] * self.degree + np.arange(self.degree + 1)[None, :]
        out[np.arange(len(s))[:, None], cols] = W
        return out


# ---------------------------------------------------------------------------
# orbit profile
# ---------------------------------------------------------------------------

@dataclass
class OrbitProfile:
    """Collocation representation of a periodic orbit.

    ``values`` holds the state at the representation nodes; evaluation wraps
    periodically, so ``evaluate(s)`` is defined for any real ``s``.
    """

    mesh: np.ndarray
    degree: int
    values: np.ndarray
    period: float
    params: ModelParams
    label: str = "Other"
    system: str = "full"

    _basis: PiecewiseBasis = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.mesh = np.asarray(self.mesh, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self._basis is None:
            self._basis = PiecewiseBasis(self.mesh, self.degree)
        if self.values.shape != (self._basis.n_points, self.dim):
            raise ValueError(
                f"values shape {self.values.shape} does not match mesh/degree "
                f"({self._basis.n_points} points expected)")
        if not self.period > 0:
            raise ValueError("period must be positive")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def basis(self) -> PiecewiseBasis:
        return self._basis

    def evaluate(self, s, deriv: int = 0):
        """Profile (or its scaled-time derivative) at scaled times ``s``,
        wrapped periodically onto [0, 1)."""
        scalar = np.isscalar(s) or (isinstance(s, np.ndarray) and s.ndim == 0)
        s_arr = np.mod(np.atleast_1d(np.asarray(s, dtype=float)), 1.0)
        out = self._basis.eval_matrix(s_arr, deriv=deriv) @ self.values
        return out[0] if scalar else out

    def copy(self) -> "OrbitProfile":
        return OrbitProfile(mesh=self.mesh.copy(), degree=self.degree,
                            values=self.values.copy(), period=self.period,
                            params=self.params, label=self.label,
                            system=self.system)

    def with_updates(self, **kwargs) -> "OrbitProfile":
        out = _dc_replace(self, **kwargs)
        if "mesh" in kwargs or "degree" in kwargs:
            out._basis = PiecewiseBasis(out.mesh, out.degree)
        return out

    def periodicity_defect(self) -> float:
        return float(np.max(np.abs(self.values[-1] - self.values[0])))


def resample_orbit(orbit: OrbitProfile, mesh_n: int,
                   degree: int | None = None) -> OrbitProfile:
    """Re-interpolate a profile onto a uniform mesh with ``mesh_n`` intervals
    (a fresh Newton correction is normally applied afterwards)."""
    degree = degree if degree is not None else orbit.degree
    mesh = np.linspace(0.0, 1.0, mesh_n + 1)
    basis = PiecewiseBasis(mesh, degree)
    values = orbit.evaluate(basis.nodes % 1.0)
    values[-1] = values[0]
    return OrbitProfile(mesh=mesh, degree=degree, values=values,
                        period=orbit.period, params=orbit.params,
                        label=orbit.label, system=orbit.system)


def embed_reduced(orbit: OrbitProfile) -> OrbitProfile:
    """Lift a reduced single-oscillator orbit into the full 4-d system using
    its subspace symmetry (in-phase: duplicate; anti-phase: negate copy)."""
    if orbit.dim != 2:
        raise ValueError("embedding expects a reduced 2-d orbit")
    mode = SubspaceMode(orbit.system)
    s = mode.sign
    x, y = orbit.values[:, 0], orbit.values[:, 1]
    values = np.stack([x, s * x, y, s * y], axis=1)
    label = ("InPhaseFamily" if mode is SubspaceMode.IN_PHASE
             else "AntiPhaseFamily")
    return OrbitProfile(mesh=orbit.mesh.copy(), degree=orbit.degree,
                        values=values, period=orbit.period,
                        params=orbit.params, label=label, system="full")


def restrict_to_subspace(orbit: OrbitProfile, mode: SubspaceMode) -> OrbitProfile:
    """Project a (symmetric-subspace) full orbit onto the reduced system."""
    if orbit.dim != 4:
        raise ValueError("restriction expects a full 4-d orbit")
    values = orbit.values[:, [0, 2]].copy()
    return OrbitProfile(mesh=orbit.mesh.copy(), degree=orbit.degree,
                        values=values, period=orbit.period,
                        params=orbit.params, label=orbit.label,
                        system=mode.value)


def orbit_asymmetry(orbit: OrbitProfile, n_samples: int = 512) -> dict:
    """Max-norm residuals of the in-phase (x2-x1, y2-y1) and anti-phase
    (x2+x1, y2+y1) symmetries of a full-system orbit."""
    if orbit.dim != 4:
        raise ValueError("asymmetry requires a full-system orbit")
    u = orbit.evaluate(np.arange(n_samples) / n_samples)
    x1, x2, y1, y2 = u[:, 0], u[:, 1], u[:, 2], u[:, 3]
    return {
        "inphase": float(max(np.max(np.abs(x2 - x1)), np.max(np.abs(y2 - y1)))),
        "antiphase": float(max(np.max(np.abs(x2 + x1)), np.max(np.abs(y2 + y1)))),
    }


# ---------------------------------------------------------------------------
# collocation engine
# ---------------------------------------------------------------------------

@dataclass
class PhaseAnchor:
    """Precomputed reference data for the integral phase condition."""

    ref_deriv: np.ndarray   # (Q, n) du_ref/ds at collocation points
    rhs: float              # integral <du_ref/ds, u_ref>


class OrbitCorrector:
    """Newton machinery for one system on one mesh.

    Assembles the square Jacobian over the unknowns (node values, period);
    the branch-continuation module borders it with a parameter column and an
    arclength row.
    """

    def __init__(self, system, mesh, degree: int, wrap_max: float = WRAP_MAX):
        self.system = get_system(system)
        self.basis = PiecewiseBasis(mesh, degree)
        self.wrap_max = wrap_max
        m = degree
        g, w = np.polynomial.legendre.leggauss(m)
        g = (g + 1.0) / 2.0
        w = w / 2.0
        meshd = np.diff(self.basis.mesh)
        # collocation points, interval-major
        self.c_s = (self.basis.mesh[:-1, None] + meshd[:, None] * g[None, :]).ravel()
        self.quad_w = (meshd[:, None] * w[None, :]).ravel()
        self.Q = len(self.c_s)
        self.C = self.basis.eval_matrix(self.c_s)
        self.D = self.basis.eval_matrix(self.c_s, deriv=1)
        self.n_unknowns = self.system.dim * self.basis.n_points + 1

    # -- helpers ------------------------------------------------------------

    def _delayed_ops(self, p, T):
        """Wrapped evaluation operators and delayed positions for each delay."""
        ops = []
        for tau in self.system.delays(p):
            d = tau / T
            if d > self.wrap_max:
                raise WrapDepthExceededError(
                    f"delay/period ratio {d:.3f} exceeds wrap depth {self.wrap_max}")
            sd = np.mod(self.c_s - d, 1.0)
            ops.append((self.basis.eval_matrix(sd),
                        self.basis.eval_matrix(sd, deriv=1)))
        return ops

    def anchor(self, reference: OrbitProfile) -> PhaseAnchor:
        ref_c = reference.evaluate(self.c_s)
        ref_d = reference.evaluate(self.c_s, deriv=1)
        rhs = float(np.sum(self.quad_w[:, None] * ref_d * ref_c))
        return PhaseAnchor(ref_deriv=ref_d, rhs=rhs)

    def phase_row(self, anchor: PhaseAnchor) -> np.ndarray:
        """Row vector of the linear phase condition over (node values, T)."""
        n = self.system.dim
        row = np.zeros(self.n_unknowns)
        contrib = np.einsum("q,qa,qp->pa", self.quad_w, anchor.ref_deriv, self.C)
        row[:n * self.basis.n_points] = contrib.reshape(-1)
        return row

    def colloc_residual(self, p, U, T, ops=None):
        """Collocation block of the residual, shape (Q, n)."""
        ops = ops if ops is not None else self._delayed_ops(p, T)
        u_c = self.C @ U
        uds = [W @ U for W, _ in ops]
        f = self.system.rhs(p, u_c, uds)
        return self.D @ U - T * f

    def residual(self, p, U, T, anchor: PhaseAnchor) -> np.ndarray:
        """Full residual: collocation, periodicity, phase."""
        n = self.system.dim
        R_c = self.colloc_residual(p, U, T)
        per = U[-1] - U[0]
        u_c = self.C @ U
        phase = float(np.sum(self.quad_w[:, None] * anchor.ref_deriv * u_c)
                      - anchor.rhs)
        return np.concatenate([R_c.reshape(-1), per, [phase]])

    def residual_and_jacobian(self, p, U, T, anchor: PhaseAnchor):
        """Residual and square Jacobian over (node values flat, T)."""
        n = self.system.dim
        P1 = self.basis.n_points
        ops = self._delayed_ops(p, T)
        u_c = self.C @ U
        uds = [W @ U for W, _ in ops]
        ud_deriv = [Wd @ U for _, Wd in ops]
        f = self.system.rhs(p, u_c, uds)
        J0, Jks = self.system.jacs(p, u_c, uds)

        R_c = self.D @ U - T * f

        # d(colloc)/d(node values): (Q, n, P1, n)
        eye = np.eye(n)
        block = np.einsum("qp,ab->qapb", self.D, eye)
        block -= T * np.einsum("qab,qp->qapb", J0, self.C)
        for (W, _), Jk in zip(ops, Jks):
            block -= T * np.einsum("qab,qp->qapb", Jk, W)

        # d(colloc)/dT
        dT = -f.copy()
        for tau, (W, Wd), Jk, udd in zip(self.system.delays(p), ops, Jks, ud_deriv):
            if tau > 0:
                dT -= (tau / T) * np.einsum("qab,qb->qa", Jk, udd)

        M = self.n_unknowns
        J = np.zeros((M, M))
        nQ = n * self.Q
        J[:nQ, :n * P1] = block.reshape(nQ, n * P1)
        J[:nQ, -1] = dT.reshape(-1)
        # periodicity rows
        for comp in range(n):
            J[nQ + comp, comp] = -1.0
            J[nQ + comp, (P1 - 1) * n + comp] = 1.0
        # phase row
        J[-1, :] = self.phase_row(anchor)

        u_cQ = self.C @ U
        phase = float(np.sum(self.quad_w[:, None] * anchor.ref_deriv * u_cQ)
                      - anchor.rhs)
        R = np.concatenate([R_c.reshape(-1), U[-1] - U[0], [phase]])
        return R, J

    def param_column(self, p, U, T, name: str, rel_step: float = 1e-7):
        """FD derivative of the full residual w.r.t. one model parameter
        (only the collocation block depends on it)."""
        v = model.get_param(p, name)
        h = rel_step * (1.0 + abs(v))
        Rp = self.colloc_residual(model.with_param(p, name, v + h), U, T)
        Rm = self.colloc_residual(model.with_param(p, name, v - h), U, T)
        col = np.zeros(self.n_unknowns)
        col[:self.system.dim * self.Q] = ((Rp - Rm) / (2 * h)).reshape(-1)
        return col


def _corrector_for(orbit: OrbitProfile, wrap_max=WRAP_MAX) -> OrbitCorrector:
    return OrbitCorrector(orbit.system, orbit.mesh, orbit.degree, wrap_max=wrap_max)


def newton_correct(guess: OrbitProfile, p: ModelParams,
                   reference: OrbitProfile | None = None,
                   tol: float = 1e-9, max_iter: int = 20,
                   wrap_max: float = WRAP_MAX,
                   return_stats: bool = False):
    """Correct a rough periodic profile to a solution of the collocation
    boundary-value problem at fixed parameters.

    ``reference`` anchors the integral phase condition (defaults to the
    guess itself).  Converges when both the residual max-norm and the Newton
    increment drop below ``tol``.

    Raises
    ------
    NewtonDivergedError
        Residual grew over three consecutive iterations.
    MaxIterationsError
        Tolerance not met within ``max_iter`` iterations.
    WrapDepthExceededError
        ``tau/T`` exceeded ``wrap_max`` during the iteration.
    """
    corr = _corrector_for(guess, wrap_max)
    anchor = corr.anchor(reference if reference is not None else guess)
    U = guess.values.copy()
    T = float(guess.period)
    prev_res = np.inf
    n_grow = 0
    for it in range(1, max_iter + 1):
        R, J = corr.residual_and_jacobian(p, U, T, anchor)
        res = float(np.max(np.abs(R)))
        if res > prev_res * 1.000001:
            n_grow += 1
            if n_grow >= 3:
                raise NewtonDivergedError(
                    f"residual grew for 3 iterations (now {res:.3e})")
        else:
            n_grow = 0
        prev_res = res
        try:
            delta = np.linalg.solve(J, -R)
        except np.linalg.LinAlgError as exc:
            raise NewtonDivergedError(f"singular collocation system: {exc}")
        inc = float(np.max(np.abs(delta)))
        U = U + delta[:-1].reshape(U.shape)
        T = T + delta[-1]
        if T <= 0:
            raise NewtonDivergedError("period became non-positive")
        if res < tol and inc < tol:
            out = guess.with_updates(values=U, period=T, params=p)
            if return_stats:
                return out, {"iterations": it, "residual": res, "increment": inc}
            return out
    raise MaxIterationsError(
        f"no convergence in {max_iter} iterations (residual {prev_res:.3e})")


# ---------------------------------------------------------------------------
# Floquet multipliers
# ---------------------------------------------------------------------------

@dataclass
class FloquetSpectrum:
    """Dominant multipliers of the linearized period map, sorted by modulus
    (descending).  One multiplier is always the trivial 1."""

    multipliers: np.ndarray
    trivial_index: int
    floquet_tol: float = 1e-4
    map_dim: int = 0

    @property
    def trivial_error(self) -> float:
        return float(abs(self.multipliers[self.trivial_index] - 1.0))

    @property
    def nontrivial(self) -> np.ndarray:
        keep = np.ones(len(self.multipliers), dtype=bool)
        keep[self.trivial_index] = False
        return self.multipliers[keep]

    @property
    def stable(self) -> bool:
        nt = self.nontrivial
        return bool(len(nt) == 0 or np.all(np.abs(nt) < 1.0 + self.floquet_tol))

    def max_nontrivial_modulus(self) -> float:
        nt = self.nontrivial
        return float(np.max(np.abs(nt))) if len(nt) else 0.0


def _floquet_operator(orbit: OrbitProfile, p: ModelParams, wrap_max=WRAP_MAX):
    """Build the discretized period map acting on history segments.

    Returns (matvec, dim_H, make_dense) where the map sends the node values
    on [-ell, 0] to those on [1-ell, 1]."""
    system = get_system(orbit.system)
    n = system.dim
    basis = orbit.basis
    P = basis.n_points - 1
    T = orbit.period
    delays = system.delays(p)
    d = [tau / T for tau in delays]
    if max(d, default=0.0) > wrap_max:
        raise WrapDepthExceededError("delay exceeds wrap depth for Floquet map")
    ell = max(1, int(math.ceil(max(d, default=0.0) - 1e-12)))

    corr = OrbitCorrector(orbit.system, orbit.mesh, orbit.degree, wrap_max)
    c = corr.c_s
    Q = corr.Q
    U = orbit.values
    u_c = corr.C @ U
    uds = [basis.eval_matrix(np.mod(c - dk, 1.0)) @ U for dk in d]
    J0, Jks = system.jacs(p, u_c, uds)

    n_hist = ell * P + 1          # nodes on [-ell, 0]
    nH = n * n_hist
    A = np.zeros((n * Q, n * P))
    B = np.zeros((n * Q, nH))

    def scatter(q, g, blk):
        # sign convention A X = B H: history columns carry -coefficient
        if g <= 0:
            colbase = (g + ell * P) * n
            B[q * n:(q + 1) * n, colbase:colbase + n] -= blk
        else:
            colbase = (g - 1) * n
            A[q * n:(q + 1) * n, colbase:colbase + n] += blk

    m = orbit.degree
    i_own, sigma_own, h_own = basis.locate(c)
    Lder = _lagrange_weights(sigma_own, m, deriv=1)
    Lval = _lagrange_weights(sigma_own, m, deriv=0)
    eye = np.eye(n)
    for q in range(Q):
        # derivative and undelayed terms on the current interval
        for j in range(m + 1):
            g = i_own[q] * m + j
            scatter(q, g, (Lder[q, j] / h_own[q]) * eye - T * Lval[q, j] * J0[q])
        # delayed terms, unwrapped to the left
        for dk, Jk in zip(d, Jks):
            sd = c[q] - dk
            shift = math.floor(sd + 1e-14)
            s_loc = min(max(sd - shift, 0.0), 1.0 - 1e-15)
            i_loc, sig_loc, _ = basis.locate(np.array([s_loc]))
            W = _lagrange_weights(sig_loc, m, deriv=0)[0]
            for j in range(m + 1):
                g = shift * P + i_loc[0] * m + j
                scatter(q, g, -T * W[j] * Jk[q])

    lu = sla.lu_factor(A)

    # new history nodes correspond to old extended nodes g' = j - (ell-1)P
    idx_from_H = []
    idx_from_X = []
    for j in range(n_hist):
        g_new = j - (ell - 1) * P
        if g_new <= 0:
            idx_from_H.append((j, (g_new + ell * P)))
        else:
            idx_from_X.append((j, g_new - 1))

    def matvec(hvec):
        x = sla.lu_solve(lu, B @ hvec)
        out = np.zeros(nH, dtype=x.dtype)
        for j, src in idx_from_H:
            out[j * n:(j + 1) * n] = hvec[src * n:(src + 1) * n]
        for j, src in idx_from_X:
            out[j * n:(j + 1) * n] = x[src * n:(src + 1) * n]
        return out

    def make_dense():
        X = sla.lu_solve(lu, B)
        Mmat = np.zeros((nH, nH))
        for j, src in idx_from_H:
            Mmat[j * n:(j + 1) * n, src * n:(src + 1) * n] = np.eye(n)
        for j, src in idx_from_X:
            Mmat[j * n:(j + 1) * n, :] = X[src * n:(src + 1) * n, :]
        return Mmat

    return matvec, nH, make_dense


def floquet(orbit: OrbitProfile, p: ModelParams, n_mult: int = 12,
            dense_cutoff: int = 450, floquet_tol: float = 1e-4,
            wrap_max: float = WRAP_MAX) -> FloquetSpectrum:
    """Dominant Floquet multipliers of a converged orbit.

    Small maps are solved densely; larger ones with implicitly restarted
    Arnoldi on the period map (falling back to the dense solver if Arnoldi
    stagnates).  At least ``n_mult`` multipliers are returned, sorted by
    modulus, including the trivial multiplier.
    """
    matvec, dim, make_dense = _floquet_operator(orbit, p, wrap_max)
    mults = None
    if dim > dense_cutoff:
        k = min(n_mult, dim - 2)
        op = spla.LinearOperator((dim, dim), matvec=matvec)
        try:
            vals = spla.eigs(op, k=k, which="LM", return_eigenvectors=False,
                             maxiter=max(3000, 40 * dim), tol=1e-12)
            mults = np.asarray(vals)
        except (spla.ArpackNoConvergence, spla.ArpackError) as exc:
            log.warning("Arnoldi failed (%s); falling back to dense solve", exc)
    if mults is None:
        try:
            mults = np.linalg.eigvals(make_dense())
        except np.linalg.LinAlgError as exc:
            raise EigFailureError(str(exc)) from exc
        order = np.argsort(-np.abs(mults))
        mults = mults[order][:max(n_mult, 12)]

    order = np.argsort(-np.abs(mults))
    mults = np.asarray(mults)[order]
    trivial = int(np.argmin(np.abs(mults - 1.0)))
    spec = FloquetSpectrum(multipliers=mults, trivial_index=trivial,
                           floquet_tol=floquet_tol, map_dim=dim)
    if spec.trivial_error > 1e-4:
        log.warning("trivial multiplier off by %.2e (discretization health)",
                    spec.trivial_error)
    return spec


# ---------------------------------------------------------------------------
# seeding: from a Hopf point, from simulation samples
# ---------------------------------------------------------------------------

def branch_from_hopf(h, p: ModelParams | None = None, eps: float = 1e-3,
                     free_param: str = "a", mesh_n: int = DEFAULT_MESH_N,
                     degree: int = DEFAULT_DEGREE,
                     hopf_tol: float = 1e-6) -> OrbitProfile:
    """Small-amplitude orbit emerging from a Hopf bifurcation of the origin.

    Builds the linear predictor from the critical eigenvector of the
    characteristic matrix, corrects it with the amplitude pinned to ``eps``
    (freeing ``free_param`` so the corrector can leave the bifurcation
    point), then releases the pin with a final fixed-parameter correction.
    """
    p = p if p is not None else h.params
    omega = h.omega
    D = char_matrix(p, 1j * omega)
    _, svals, Vh = np.linalg.svd(D)
    if svals[-1] > hopf_tol * svals[0]:
        raise HopfResidualTooLargeError(
            f"smallest singular value {svals[-1]:.2e} (rel {svals[-1]/svals[0]:.2e})")
    v = Vh[-1].conj()
    k = int(np.argmax(np.abs(v)))
    v = v * (np.abs(v[k]) / v[k])  # deterministic phase

    mesh = np.linspace(0.0, 1.0, mesh_n + 1)
    basis = PiecewiseBasis(mesh, degree)
    s = basis.nodes
    U0 = eps * np.real(v[None, :] * np.exp(2j * np.pi * s)[:, None])
    T0 = 2 * np.pi / omega
    label = ("InPhaseFamily" if h.mode_hint is SubspaceMode.IN_PHASE
             else "AntiPhaseFamily" if h.mode_hint is SubspaceMode.ANTI_PHASE
             else "Other")
    guess = OrbitProfile(mesh=mesh, degree=degree, values=U0, period=T0,
                         params=p, label=label, system="full")

    corr = OrbitCorrector("full", mesh, degree)
    anchor = corr.anchor(guess)
    # amplitude pin: <u_pred, u> integrated over the cycle stays at its
    # predictor value
    pred_c = guess.evaluate(corr.c_s)
    amp_row_vals = np.einsum("q,qa,qp->pa", corr.quad_w, pred_c, corr.C).reshape(-1)
    amp_rhs = float(np.sum(corr.quad_w[:, None] * pred_c * pred_c))

    U = U0.copy()
    T = T0
    eta = model.get_param(p, free_param)
    p_cur = p
    for it in range(30):
        R, J = corr.residual_and_jacobian(p_cur, U, T, anchor)
        col = corr.param_column(p_cur, U, T, free_param)
        amp_res = float(amp_row_vals @ U.reshape(-1) - amp_rhs)
        Rext = np.concatenate([R, [amp_res]])
        M = corr.n_unknowns
        Jext = np.zeros((M + 1, M + 1))
        Jext[:M, :M] = J
        Jext[:M, M] = col
        Jext[M, :M - 1] = amp_row_vals
        delta = np.linalg.solve(Jext, -Rext)
        U = U + delta[:M - 1].reshape(U.shape)
        T = T + delta[M - 1]
        eta = eta + delta[M]
        p_cur = model.with_param(p, free_param, eta)
        if np.max(np.abs(delta)) < 1e-10 and np.max(np.abs(Rext)) < 1e-10:
            break
    else:
        raise MaxIterationsError("pinned-amplitude correction did not converge")

    pinned = OrbitProfile(mesh=mesh, degree=degree, values=U, period=T,
                          params=p_cur, label=label, system="full")
    return newton_correct(pinned, p_cur, reference=pinned)


def fit_from_samples(est, mesh_n: int = DEFAULT_MESH_N,
                     degree: int = DEFAULT_DEGREE) -> OrbitProfile:
    """Least-squares projection of a one-period sample block onto the
    piecewise-polynomial space (the bridge from simulation to collocation)."""
    samples = np.asarray(est.samples, dtype=float)
    n_samp, dim = samples.shape
    mesh = np.linspace(0.0, 1.0, mesh_n + 1)
    basis = PiecewiseBasis(mesh, degree)
    if n_samp < basis.n_points:
        raise InsufficientSamplesError(
            f"{n_samp} samples for {basis.n_points} nodes")
    s = (np.asarray(est.sample_times) - est.sample_times[0]) / est.period
    E = basis.eval_matrix(np.mod(s, 1.0))
    # periodic fold: last node coincides with the first
    E_eff = E[:, :-1].copy()
    E_eff[:, 0] += E[:, -1]
    sol, *_ = np.linalg.lstsq(E_eff, samples, rcond=None)
    values = np.vstack([sol, sol[:1]])
    return OrbitProfile(mesh=mesh, degree=degree, values=values,
                        period=float(est.period), params=est.params,
                        label="Other", system=est.system)


def amplitude(orbit: OrbitProfile, component: int = 0) -> float:
    """Max over the period of ``|component|``, computed exactly from the
    piecewise-polynomial representation (critical points per interval)."""
    m = orbit.degree
    best = 0.0
    nodes = np.arange(m + 1) / m
    for i in range(orbit.basis.n_intervals):
        vals = orbit.values[i * m:(i + 1) * m + 1, component]
        coeffs = np.polynomial.polynomial.polyfit(nodes, vals, m)
        dcoeffs = np.polynomial.polynomial.polyder(coeffs)
        roots = np.polynomial.polynomial.polyroots(dcoeffs)
        crit = [r.real for r in roots if abs(r.imag) < 1e-10 and -1e-12 <= r.real <= 1 + 1e-12]
        for sig in [0.0, 1.0] + crit:
            best = max(best, abs(np.polynomial.polynomial.polyval(sig, coeffs)))
    return float(best)


# ---------------------------------------------------------------------------
# structured text record
# ---------------------------------------------------------------------------

_ORBIT_FORMAT = "hkbdelay-orbit/1"


def orbit_to_json(orbit: OrbitProfile) -> str:
    """Self-contained text record; floats serialize via shortest round-trip
    repr, so loading reproduces the profile bit-exactly."""
    doc = {
        "format": _ORBIT_FORMAT,
        "system": orbit.system,
        "label": orbit.label,
        "degree": orbit.degree,
        "period": orbit.period,
        "mesh": orbit.mesh.tolist(),
        "values": orbit.values.tolist(),
        "params": orbit.params.as_dict(),
    }
    return json.dumps(doc, indent=1)


def orbit_from_json(text: str) -> OrbitProfile:
    doc = json.loads(text)
    if doc.get("format") != _ORBIT_FORMAT:
        raise ValueError(f"unrecognized orbit record format {doc.get('format')!r}")
    return OrbitProfile(
        mesh=np.array(doc["mesh"], dtype=float),
        degree=int(doc["degree"]),
        values=np.array(doc["values"], dtype=float),
        period=float(doc["period"]),
        params=ModelParams(**doc["params"]),
        label=doc.get("label", "Other"),
        system=doc.get("system", "full"),
    )


def save_orbit(orbit: OrbitProfile, path) -> None:
    with open(path, "w") as fh:
        fh.write(orbit_to_json(orbit))


def load_orbit(path) -> OrbitProfile:
    with open(path) as fh:
        return orbit_from_json(fh.read())
