"""Direct time integration of the delay system by the method of steps.

Fixed-step classical Runge-Kutta (RK4) with breakpoints aligned to the
delays, so propagated derivative discontinuities of a non-smooth initial
history always fall on step boundaries.  Delayed values are read from the
accumulated solution through cubic Hermite interpolation, which preserves
the scheme's fourth order.  The integrator also runs the symmetry-reduced
single-oscillator systems, which is how unstable in-phase/anti-phase orbits
of the full system are located (they are attracting inside their subspace).

The simulator is deliberately independent of the collocation machinery: it
serves as exploration tool, as seed generator for isolated branches, and as
an oracle for Floquet-based stability classification.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import brentq

from .model import ModelParams, SubspaceMode, Y1, _rhs_full_jit, _rhs_reduced_jit

__all__ = [
    "NonFiniteError", "StepTooLargeError", "NotConvergedError", "NoCrossingsError",
    "ConstantHistory", "SampledHistory", "Trajectory", "PeriodicEstimate",
    "integrate", "settle_to_orbit", "stability_probe", "Verdict",
]

_FULL, _RED_IN, _RED_ANTI = 0, 1, 2


class NonFiniteError(RuntimeError):
    """State left the configured bound: the trajectory is diverging."""

    def __init__(self, t):
        super().__init__(f"state exceeded bound at t={t:.6g}")
        self.t = t


class StepTooLargeError(ValueError):
    """Step must not exceed a quarter of the smallest positive delay."""


class NotConvergedError(RuntimeError):
    """No periodic regime detected before t_max (quasi-periodic, chaotic or
    still in transient)."""

    def __init__(self, msg, residual=None, n_crossings=0):
        super().__init__(msg)
        self.residual = residual
        self.n_crossings = n_crossings


class NoCrossingsError(RuntimeError):
    """Trajectory produced no section crossings (collapse to equilibrium)."""


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------

class ConstantHistory:
    """History identically equal to one state on [-tau_max, 0]."""

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(self.value, t.shape + self.value.shape).copy()

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        return np.zeros(t.shape + self.value.shape)


class SampledHistory:
    """History given by node values and derivatives on a uniform grid
    (cubic Hermite in between), e.g. the tail of a previous trajectory."""

    def __init__(self, t, u, f):
        self.t = np.asarray(t, dtype=float)
        self.u = np.asarray(u, dtype=float)
        self.f = np.asarray(f, dtype=float)
        if self.t.ndim != 1 or len(self.t) < 2:
            raise ValueError("need at least two history nodes")
        if self.u.shape[0] != len(self.t) or self.f.shape != self.u.shape:
            raise ValueError("inconsistent history arrays")

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        j = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 2)
        h = self.t[j + 1] - self.t[j]
        th = (t - self.t[j]) / h
        return j, h, th

    def eval(self, t):
        j, h, th = self._locate(t)
        return _hermite(self.u[j], self.f[j], self.u[j + 1], self.f[j + 1],
                        th[..., None], h[..., None])

    def deriv(self, t):
        j, h, th = self._locate(t)
        return _hermite_deriv(self.u[j], self.f[j], self.u[j + 1], self.f[j + 1],
                              th[..., None], h[..., None])


class _FunctionHistory:
    """Adapter for an arbitrary callable ``t -> state``; derivative by
    central differences (used for perturbed-orbit histories)."""

    def __init__(self, fn, dim, fd_step=1e-6):
        self.fn = fn
        self.dim = dim
        self.fd_step = fd_step

    def _value(self, tk):
        return np.asarray(self.fn(tk), dtype=float).reshape(self.dim)

    def eval(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if len(t) == 0:
            return np.zeros((0, self.dim))
        return np.stack([self._value(tk) for tk in t])

    def deriv(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if len(t) == 0:
            return np.zeros((0, self.dim))
        e = self.fd_step
        return np.stack([(self._value(tk + e) - self._value(tk - e)) / (2 * e)
                         for tk in t])


def _hermite(u0, f0, u1, f1, th, h):
    t2 = th * th
    t3 = t2 * th
    return ((2 * t3 - 3 * t2 + 1) * u0 + (t3 - 2 * t2 + th) * h * f0
            + (-2 * t3 + 3 * t2) * u1 + (t3 - t2) * h * f1)


def _hermite_deriv(u0, f0, u1, f1, th, h):
    t2 = th * th
    return ((6 * t2 - 6 * th) * u0 / h + (3 * t2 - 4 * th + 1) * f0
            + (-6 * t2 + 6 * th) * u1 / h + (3 * t2 - 2 * th) * f1)


# ---------------------------------------------------------------------------
# dense-output trajectory
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Piecewise-cubic dense output on a uniform breakpoint grid.

    ``u`` and ``f`` hold state and derivative at the breakpoints; between
    breakpoints evaluation uses the matching cubic Hermite interpolant.
    """

    t: np.ndarray
    u: np.ndarray
    f: np.ndarray
    params: ModelParams
    system: str = "full"
    step: float = field(default=0.0)

    def __post_init__(self):
        if self.step == 0.0:
            self.step = float(self.t[1] - self.t[0])

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def dim(self) -> int:
        return self.u.shape[1]

    def __call__(self, times, deriv=False):
        """Evaluate the dense output at ``times`` (within [t0, t_end])."""
        times = np.asarray(times, dtype=float)
        if np.any(times < self.t0 - 1e-12) or np.any(times > self.t_end + 1e-12):
            raise ValueError("evaluation outside the computed interval")
        scalar = times.ndim == 0
        tt = np.atleast_1d(times)
        r = np.clip((tt - self.t0) / self.step, 0.0, len(self.t) - 1.0)
        j = np.minimum(r.astype(int), len(self.t) - 2)
        th = (r - j)[:, None]
        fn = _hermite_deriv if deriv else _hermite
        out = fn(self.u[j], self.f[j], self.u[j + 1], self.f[j + 1], th, self.step)
        return out[0] if scalar else out

    def tail_history(self, span: float) -> SampledHistory:
        """History object for restarting from the last ``span`` seconds,
        with time shifted so the trajectory end becomes t=0."""
        n = int(math.ceil(span / self.step - 1e-9)) + 1
        if n > len(self.t):
            raise ValueError("trajectory shorter than requested history span")
        return SampledHistory(self.t[-n:] - self.t[-1], self.u[-n:], self.f[-n:])

    def to_csv(self, path, stride: int = 1) -> None:
        names = ["x1", "x2", "y1", "y2"] if self.dim == 4 else ["x", "y"]
        with open(path, "w") as fh:
            fh.write("t," + ",".join(names) + "\n")
            for k in range(0, len(self.t), stride):
                row = ",".join(repr(float(v)) for v in self.u[k])
                fh.write(f"{float(self.t[k])!r},{row}\n")


@dataclass
class PeriodicEstimate:
    """Result of settling onto a periodic regime.

    ``samples`` holds one period of the attractor on a uniform grid starting
    at a section crossing (a maximum of the position observable);
    ``residual`` is the max-norm distance between the last pair of matched
    return states and gauges convergence.
    """

    period: float
    crossings: np.ndarray
    samples: np.ndarray
    sample_times: np.ndarray
    residual: float
    params: ModelParams
    system: str = "full"
    stride: int = 1


# ---------------------------------------------------------------------------
# core stepper
# ---------------------------------------------------------------------------

@njit(cache=True)
def _interp_delayed(u, f, f0_left, n_hist, h, r, out):
    j = int(r)
    th = r - j
    if th < 1e-13:
        for i in range(u.shape[1]):
            out[i] = u[j, i]
        return
    h00 = (2 * th - 3) * th * th + 1.0
    h10 = (((th - 2) * th + 1.0) * th) * h
    h01 = (3.0 - 2 * th) * th * th
    h11 = ((th - 1.0) * th * th) * h
    for i in range(u.shape[1]):
        fR = f0_left[i] if j + 1 == n_hist else f[j + 1, i]
        out[i] = h00 * u[j, i] + h10 * f[j, i] + h01 * u[j + 1, i] + h11 * fR


@njit(cache=True)
def _eval_rhs(system_id, pv, uin, ud1, ud2, out):
    if system_id == 0:
        _rhs_full_jit(pv, uin, ud1, ud2, out)
    elif system_id == 1:
        _rhs_reduced_jit(pv, 1.0, uin, ud1, out)
    else:
        _rhs_reduced_jit(pv, -1.0, uin, ud1, out)


@njit(cache=True)
def _step_kernel(system_id, pv, u, f, f0_left, n_hist, n_steps, h,
                 n1f, n2f, bound):
    """March RK4 from node n_hist; returns index of failure or -1."""
    dim = u.shape[1]
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    us = np.empty(dim)
    d1 = np.empty(dim)
    d2 = np.empty(dim)
    half = 0.5 * h
    for k in range(n_hist, n_hist + n_steps):
        # stage 1 at t_k
        if n1f == 0.0:
            d1[:] = u[k]
        else:
            _interp_delayed(u, f, f0_left, n_hist, h, k - n1f, d1)
        if n2f == 0.0:
            d2[:] = u[k]
        else:
            _interp_delayed(u, f, f0_left, n_hist, h, k - n2f, d2)
        _eval_rhs(system_id, pv, u[k], d1, d2, k1)
        f[k] = k1

        # stages 2,3 at t_k + h/2 share delayed values
        for i in range(dim):
            us[i] = u[k, i] + half * k1[i]
        if n1f != 0.0:
            _interp_delayed(u, f, f0_left, n_hist, h, k + 0.5 - n1f, d1)
        if n2f != 0.0:
            _interp_delayed(u, f, f0_left, n_hist, h, k + 0.5 - n2f, d2)
        if n1f == 0.0:
            d1[:] = us
        if n2f == 0.0:
            d2[:] = us
        _eval_rhs(system_id, pv, us, d1, d2, k2)

        for i in range(dim):
            us[i] = u[k, i] + half * k2[i]
        if n1f == 0.0:
            d1[:] = us
        if n2f == 0.0:
            d2[:] = us
        _eval_rhs(system_id, pv, us, d1, d2, k3)

        # stage 4 at t_k + h
        for i in range(dim):
            us[i] = u[k, i] + h * k3[i]
        if n1f != 0.0:
            _interp_delayed(u, f, f0_left, n_hist, h, k + 1.0 - n1f, d1)
        if n2f != 0.0:
            _interp_delayed(u, f, f0_left, n_hist, h, k + 1.0 - n2f, d2)
        if n1f == 0.0:
            d1[:] = us
        if n2f == 0.0:
            d2[:] = us
        _eval_rhs(system_id, pv, us, d1, d2, k4)

        ok = True
        for i in range(dim):
            u[k + 1, i] = u[k, i] + (h / 6.0) * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
            if not (abs(u[k + 1, i]) <= bound):
                ok = False
        if not ok:
            return k + 1

    # derivative at the final node (right limit irrelevant; store for dense output)
    k = n_hist + n_steps
    if n1f == 0.0:
        d1[:] = u[k]
    else:
        _interp_delayed(u, f, f0_left, n_hist, h, k - n1f, d1)
    if n2f == 0.0:
        d2[:] = u[k]
    else:
        _interp_delayed(u, f, f0_left, n_hist, h, k - n2f, d2)
    _eval_rhs(system_id, pv, u[k], d1, d2, k1)
    f[k] = k1
    return -1


def _system_info(p: ModelParams, system):
    if system == "full" or system is None:
        return _FULL, 4, p.tau1, p.tau2
    if isinstance(system, SubspaceMode):
        system = system.value
    if system == SubspaceMode.IN_PHASE.value:
        return _RED_IN, 2, p.tau1, 0.0
    if system == SubspaceMode.ANTI_PHASE.value:
        return _RED_ANTI, 2, p.tau1, 0.0
    raise ValueError(f"unknown system {system!r}")


def default_step(p: ModelParams, system="full") -> float:
    """min(tau, 2*pi/omega)/200, the resolution heuristic used throughout."""
    t_guess = 2 * math.pi / p.omega
    _, _, tau1, tau2 = _system_info(p, system)
    taus = [t for t in (tau1, tau2) if t > 0]
    return min(taus + [t_guess]) / 200.0


def _choose_step(step, tau1, tau2, t_end):
    taus = [t for t in (tau1, tau2) if t > 0]
    for t in taus:
        if step > t / 4 + 1e-15:
            raise StepTooLargeError(
                f"step {step} exceeds a quarter of the delay {t}")
    if taus:
        # align so the dominant delay is an exact number of steps
        t_align = tau1 if tau1 > 0 else tau2
        n = int(math.ceil(t_align / step - 1e-9))
        h = t_align / n
    else:
        h = step
    n_steps = int(math.ceil(t_end / h - 1e-9))
    return h, n_steps


def integrate(p: ModelParams, history, t_end: float, step: float | None = None,
              system="full", bound: float = 1e6) -> Trajectory:
    """Integrate the delay system on [0, t_end].

    Parameters
    ----------
    history : ConstantHistory | SampledHistory | array
        Initial data on [-tau_max, 0]; a bare state array means constant
        history.  Must be defined on the whole delay interval.
    step : float, optional
        Requested step; adjusted downward so the breakpoints align with the
        delays.  Defaults to :func:`default_step`.
    system : "full" | SubspaceMode
        Full 4-d pair or one of the reduced single-oscillator systems.

    Raises
    ------
    StepTooLargeError
        If ``step`` exceeds a quarter of the smallest positive delay.
    NonFiniteError
        If the state exceeds ``bound`` (divergence).
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    system_id, dim, tau1, tau2 = _system_info(p, system)
    if isinstance(history, (list, tuple, np.ndarray)):
        history = ConstantHistory(history)
    if step is None:
        step = default_step(p, system)
    h, n_steps = _choose_step(step, tau1, tau2, t_end)

    n1f = tau1 / h
    n2f = tau2 / h
    n_hist = int(math.ceil(max(n1f, n2f) - 1e-9))

    u = np.zeros((n_hist + n_steps + 1, dim))
    f = np.zeros_like(u)
    t_hist = (np.arange(n_hist + 1) - n_hist) * h
    u[:n_hist + 1] = history.eval(t_hist)
    f[:n_hist] = history.deriv(t_hist[:-1])
    f0_left = np.asarray(history.deriv(np.array([0.0])))[0]

    fail = _step_kernel(system_id, p.packed(), u, f, f0_left, n_hist, n_steps,
                        h, n1f, n2f, bound)
    if fail >= 0:
        raise NonFiniteError((fail - n_hist) * h)

    t = np.arange(n_steps + 1) * h
    sysname = system.value if isinstance(system, SubspaceMode) else system
    return Trajectory(t=t, u=u[n_hist:], f=f[n_hist:], params=p,
                      system=sysname, step=h)


# ---------------------------------------------------------------------------
# attractor settling
# ---------------------------------------------------------------------------

def _section_crossings(traj: Trajectory, t_from: float):
    """Times of downward zero crossings of the velocity of oscillator 1
    (i.e. maxima of its position), after ``t_from``."""
    yidx = Y1 if traj.dim == 4 else 1
    y = traj.u[:, yidx]
    k0 = int(np.searchsorted(traj.t, t_from))
    sign_drop = (y[k0:-1] > 0) & (y[k0 + 1:] <= 0)
    idx = np.nonzero(sign_drop)[0] + k0
    times = []
    for k in idx:
        fn = lambda tt: float(traj(tt, deriv=False)[yidx])
        try:
            times.append(brentq(fn, traj.t[k], traj.t[k + 1], xtol=1e-13))
        except ValueError:
            times.append(float(traj.t[k]))
    return np.asarray(times)


def settle_to_orbit(p: ModelParams, history, t_transient: float, t_max: float,
                    tol: float = 1e-7, system="full", step: float | None = None,
                    n_samples: int = 1024, max_stride: int = 8,
                    bound: float = 1e6) -> PeriodicEstimate:
    """Integrate past a transient and detect convergence to a periodic orbit.

    Returns to the section {velocity of oscillator 1 = 0, decreasing} are
    matched with stride 1, 2, ..., ``max_stride`` (orbits with several local
    maxima per period return to the section more than once per period);
    convergence requires the last few stride-matched return states to agree
    within ``tol`` in max norm.

    Raises
    ------
    NoCrossingsError
        No section returns after the transient (trajectory collapsed).
    NotConvergedError
        Oscillation does not settle before ``t_max``.
    """
    if not t_transient < t_max:
        raise ValueError("t_transient must be smaller than t_max")
    traj = integrate(p, history, t_max, step=step, system=system, bound=bound)
    crossings = _section_crossings(traj, t_transient)
    if len(crossings) == 0:
        # distinguish collapse from slow oscillation: any crossing at all?
        raise NoCrossingsError("no section crossings after the transient")
    states = traj(crossings)

    best_residual = np.inf
    for stride in range(1, max_stride + 1):
        need = 6 * stride + 1
        if len(crossings) < need:
            break
        sel = states[-need::stride]
        diffs = np.max(np.abs(np.diff(sel, axis=0)), axis=1)
        best_residual = min(best_residual, float(diffs[-1]))
        if np.all(diffs < tol):
            tsel = crossings[-need::stride]
            spans = np.diff(tsel)
            period = float(np.mean(spans[-5:]))
            t_last = tsel[-1]
            sample_times = t_last - period + np.arange(n_samples) * (period / n_samples)
            samples = traj(sample_times)
            sysname = system.value if isinstance(system, SubspaceMode) else system
            return PeriodicEstimate(
                period=period, crossings=crossings, samples=samples,
                sample_times=sample_times, residual=float(diffs[-1]),
                params=p, system=sysname, stride=stride)
    raise NotConvergedError(
        f"no periodic convergence within t_max={t_max}",
        residual=None if not np.isfinite(best_residual) else best_residual,
        n_crossings=len(crossings))


# ---------------------------------------------------------------------------
# stability probe
# ---------------------------------------------------------------------------

class Verdict(str, enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    INCONCLUSIVE = "inconclusive"


def _orbit_history(orbit, perturbation):
    """History on [-tau_max, 0] following the orbit profile, plus a constant
    perturbation vector."""
    T = orbit.period

    def fn(t):
        s = (t / T) % 1.0
        return orbit.evaluate(s) + perturbation

    return _FunctionHistory(fn, dim=4)


def profile_distance(A: np.ndarray, B: np.ndarray) -> float:
    """Max-norm distance between two closed curves sampled on equal uniform
    grids, minimized over cyclic shifts (i.e. over relative phase)."""
    M = A.shape[0]
    best = np.inf
    for k in range(M):
        d = np.max(np.abs(A - np.roll(B, k, axis=0)))
        if d < best:
            best = d
    return float(best)


def orbit_distance(samples: np.ndarray, orbit, refine: bool = True) -> float:
    """Max-norm distance between one period of samples (uniform grid) and an
    orbit profile, minimized over a continuous phase shift."""
    from scipy.optimize import minimize_scalar

    M = samples.shape[0]
    s = np.arange(M) / M

    def dist(phi):
        return float(np.max(np.abs(samples - orbit.evaluate((s + phi) % 1.0))))

    vals = [dist(k / M) for k in range(M)]
    k0 = int(np.argmin(vals))
    if not refine:
        return vals[k0]
    res = minimize_scalar(dist, bounds=((k0 - 1) / M, (k0 + 1) / M),
                          method="bounded", options={"xatol": 1e-10})
    return float(min(res.fun, vals[k0]))


def stability_probe(orbit, p: ModelParams, epsilon: float = 1e-3,
                    horizon: float = 30.0, seed: int = 0,
                    step: float | None = None, n_compare: int = 256) -> Verdict:
    """Independent simulation-based stability check of a periodic orbit.

    Starts from the orbit's own history perturbed by ``epsilon`` in a random
    (seeded) direction, integrates ``horizon`` periods, and compares the last
    period against the orbit profile after optimal phase alignment.
    """
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(4)
    direction /= np.linalg.norm(direction)
    T = orbit.period
    hist = _orbit_history(orbit, epsilon * direction)
    try:
        traj = integrate(p, hist, horizon * T, step=step)
    except NonFiniteError:
        return Verdict.UNSTABLE

    t_end = traj.t_end
    times = t_end - T + np.arange(n_compare) * (T / n_compare)
    final = traj(times)
    dist = orbit_distance(final, orbit)

    lo = epsilon / 10 if epsilon > 0 else 1e-5
    hi = 10 * epsilon if epsilon > 0 else np.inf
    if dist < lo:
        return Verdict.STABLE
    if dist > hi:
        return Verdict.UNSTABLE
    return Verdict.INCONCLUSIVE
