"""Linear analysis of the trivial equilibrium of the delay-coupled pair.

The characteristic matrix of the linearization at the origin is

    D(lambda) = lambda*I - J0 - J1*exp(-lambda*tau1) - J2*exp(-lambda*tau2)

with the Jacobians evaluated at the zero state.  Characteristic roots solve
``det D(lambda) = 0``; purely imaginary root pairs mark Hopf bifurcations of
the equilibrium.  For symmetric parameters the determinant factorizes into
two scalar functions, one per invariant subspace::

    in-phase  : lambda**2 - (gamma+a)*lambda + a*lambda*exp(-lambda*tau) + omega**2
    anti-phase: lambda**2 - (gamma+a)*lambda - a*lambda*exp(-lambda*tau) + omega**2

which yields closed-form Hopf loci used as oracles for the general
determinant-based continuation.
"""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, SubspaceMode, get_param, jacobians, with_param

__all__ = [
    "CharRoot", "HopfPoint", "HopfCurve",
    "char_matrix", "char_det", "mode_char",
    "newton_root", "roots_near_axis",
    "hopf_point_correct", "hopf_points_along_line",
    "continue_hopf", "symmetric_hopf_curve", "double_hopf_points",
    "hopf_curve_to_csv",
]

log = logging.getLogger(__name__)

_Z4 = np.zeros(4)


@dataclass(frozen=True)
class CharRoot:
    """A characteristic root with its defect ``|det D(lambda)|``."""

    lam: complex
    residual: float
    mode_hint: SubspaceMode | None = None


@dataclass(frozen=True)
class HopfPoint:
    """Parameter point where the origin has a purely imaginary root pair
    ``+-i*omega``."""

    params: ModelParams
    omega: float
    mode_hint: SubspaceMode | None = None
    residual: float = 0.0
    degenerate: bool = False

    def value(self, name: str) -> float:
        return get_param(self.params, name)


@dataclass
class HopfCurve:
    """Continued Hopf locus in a two-parameter plane."""

    free: tuple[str, str]
    points: list[HopfPoint] = field(default_factory=list)
    terminated: str = "range"

    def coords(self) -> np.ndarray:
        return np.array([[pt.value(self.free[0]), pt.value(self.free[1])]
                         for pt in self.points])


def _origin_jacobians(p: ModelParams):
    return jacobians(p, _Z4, _Z4, _Z4)


def char_matrix(p: ModelParams, lam: complex) -> np.ndarray:
    """Characteristic matrix ``D(lambda)`` of the origin equilibrium."""
    J0, J1, J2 = _origin_jacobians(p)
    return (lam * np.eye(4) - J0 - J1 * cmath.exp(-lam * p.tau1)
            - J2 * cmath.exp(-lam * p.tau2))


def _char_matrix_dlam(p: ModelParams, lam: complex) -> np.ndarray:
    _, J1, J2 = _origin_jacobians(p)
    return (np.eye(4) + p.tau1 * J1 * cmath.exp(-lam * p.tau1)
            + p.tau2 * J2 * cmath.exp(-lam * p.tau2))


def char_det(p: ModelParams, lam: complex) -> complex:
    return complex(np.linalg.det(char_matrix(p, lam)))


def mode_char(mode: SubspaceMode, p: ModelParams, lam: complex) -> complex:
    """Scalar characteristic function of one invariant subspace (symmetric
    parameters only)."""
    if not p.symmetric():
        raise ValueError("mode characteristic requires symmetric parameters")
    a, tau = p.a1, p.tau1
    s = mode.sign
    return (lam * lam - (p.gamma + a) * lam + s * a * lam * cmath.exp(-lam * tau)
            + p.omega ** 2)


def _mode_hint(p: ModelParams, lam: complex, tol: float = 1e-7) -> SubspaceMode | None:
    if not p.symmetric():
        return None
    vals = {m: abs(mode_char(m, p, lam)) for m in SubspaceMode}
    best = min(vals, key=vals.get)
    return best if vals[best] < tol * (1 + abs(lam)) ** 2 else None


def newton_root(p: ModelParams, lam0: complex, max_iter: int = 50,
                tol: float = 1e-13) -> CharRoot | None:
    """Newton iteration on ``det D(lambda) = 0`` from one seed.

    Uses the logarithmic-derivative form ``step = -1/tr(D^-1 D')`` which
    avoids determinant under/overflow.  Returns None when the iteration does
    not converge to an acceptable residual.
    """
    lam = complex(lam0)
    for _ in range(max_iter):
        D = char_matrix(p, lam)
        try:
            S = np.linalg.solve(D, _char_matrix_dlam(p, lam))
        except np.linalg.LinAlgError:
            lam += 1e-9 * (1 + abs(lam))
            continue
        trace = np.trace(S)
        if trace == 0:
            return None
        step = -1.0 / trace  # Newton step -det/det' via the log-derivative
        lam = lam + step
        if abs(step) < tol * (1 + abs(lam)):
            break
    residual = abs(char_det(p, lam))
    if not np.isfinite(residual) or residual > 1e-10 * (1 + abs(lam)) ** 4:
        return None
    return CharRoot(lam=lam, residual=residual, mode_hint=_mode_hint(p, lam))


def _ode_eigenvalues(p: ModelParams) -> np.ndarray:
    """Eigenvalues of the zero-delay limit (delay terms folded into J0)."""
    J0, J1, J2 = _origin_jacobians(p)
    return np.linalg.eigvals(J0 + J1 + J2)


def roots_near_axis(p: ModelParams, re_window=(-1.0, 0.5), im_max: float = 12.0,
                    n_grid_re: int = 7, n_grid_im: int | None = None,
                    n_homotopy: int = 24, dedup_tol: float = 1e-8) -> list[CharRoot]:
    """All characteristic roots with ``Re`` in ``re_window`` and
    ``|Im| <= im_max``.

    Seeds combine (i) the zero-delay eigenvalues continued to the target
    delays in small homotopy steps and (ii) a rectangular grid of Newton
    starts.  Individual non-converging seeds are dropped silently; the result
    is deduplicated, conjugate-completed and sorted by (Re, Im).
    """
    r_min, r_max = re_window
    if not r_min < r_max:
        raise ValueError("empty real window")
    if im_max <= 0:
        raise ValueError("im_max must be positive")

    seeds: list[complex] = []
    # homotopy in the delays from the ODE limit
    lams = list(_ode_eigenvalues(p))
    if p.tau_max > 0:
        for k in range(1, n_homotopy + 1):
            fac = k / n_homotopy
            pk = p.replace(tau1=fac * p.tau1, tau2=fac * p.tau2)
            cont = []
            for lam in lams:
                r = newton_root(pk, lam)
                if r is not None:
                    cont.append(r.lam)
            lams = cont
    seeds.extend(lams)

    if n_grid_im is None:
        n_grid_im = max(8, int(math.ceil(im_max * max(p.tau_max, 0.25))) + 4)
    for re in np.linspace(r_min, r_max, n_grid_re):
        for im in np.linspace(0.0, im_max, n_grid_im):
            seeds.append(complex(re, im))

    found: list[CharRoot] = []
    n_conv = 0
    for seed in seeds:
        root = newton_root(p, seed)
        if root is None:
            continue
        n_conv += 1
        for cand in (root.lam, root.lam.conjugate()):
            if not (r_min - 1e-9 <= cand.real <= r_max + 1e-9
                    and abs(cand.imag) <= im_max + 1e-9):
                continue
            if any(abs(cand - r.lam) < dedup_tol * (1 + abs(cand)) for r in found):
                continue
            found.append(CharRoot(lam=cand, residual=root.residual,
                                  mode_hint=_mode_hint(p, cand)))
    log.debug("roots_near_axis: %d seeds, %d converged, %d kept",
              len(seeds), n_conv, len(found))
    found.sort(key=lambda r: (r.lam.real, r.lam.imag))
    return found


# ---------------------------------------------------------------------------
# Hopf points
# ---------------------------------------------------------------------------

def _apply_overrides(d: dict, overrides: dict) -> dict:
    out = dict(d)
    for name, v in overrides.items():
        if name in ("a", "b", "tau"):
            out[name + "1"] = v
            out[name + "2"] = v
        else:
            out[name] = v
    return out


def _origin_char_det(d: dict, lam: complex) -> complex:
    """det D(lambda) built from a raw parameter mapping.

    Equivalent to ``char_det`` on valid parameters but tolerates values
    outside the model's domain (e.g. slightly negative delays probed by
    finite differences near a boundary)."""
    w1s = d["omega"] ** 2
    w2s = (d["omega"] + d["delta"]) ** 2
    e1 = cmath.exp(-lam * d["tau1"])
    e2 = cmath.exp(-lam * d["tau2"])
    D = np.array([
        [lam, 0.0, -1.0, 0.0],
        [0.0, lam, 0.0, -1.0],
        [w1s, 0.0, lam - (d["gamma"] + d["a1"]), d["a1"] * e1],
        [0.0, w2s, d["a2"] * e2, lam - (d["gamma"] + d["a2"])],
    ], dtype=complex)
    return complex(np.linalg.det(D))


def _free_residual(p_base: ModelParams, overrides: dict, omega: float) -> np.ndarray:
    """Hadamard-normalized real/imag parts of det D(i*omega): dividing by the
    product of row norms bounds the value in [0, 1] without moving the zero
    set, so residual tolerances are scale-free in the parameters."""
    d = _apply_overrides(p_base.as_dict(), overrides)
    w1s = d["omega"] ** 2
    w2s = (d["omega"] + d["delta"]) ** 2
    lam = 1j * omega
    e1 = cmath.exp(-lam * d["tau1"])
    e2 = cmath.exp(-lam * d["tau2"])
    D = np.array([
        [lam, 0.0, -1.0, 0.0],
        [0.0, lam, 0.0, -1.0],
        [w1s, 0.0, lam - (d["gamma"] + d["a1"]), d["a1"] * e1],
        [0.0, w2s, d["a2"] * e2, lam - (d["gamma"] + d["a2"])],
    ], dtype=complex)
    scale = np.prod(np.linalg.norm(D, axis=1))
    val = complex(np.linalg.det(D)) / scale
    return np.array([val.real, val.imag])


def _hopf_residual(p: ModelParams, omega: float) -> np.ndarray:
    return _free_residual(p, {}, omega)


def _snap_params(p_base: ModelParams, overrides: dict) -> ModelParams | None:
    """Construct validated parameters, snapping round-off-negative delays."""
    clean = {}
    for name, v in overrides.items():
        if name in ("tau", "tau1", "tau2") and -1e-9 <= v < 0.0:
            v = 0.0
        clean[name] = float(v)
    try:
        p = p_base
        for name, v in clean.items():
            p = with_param(p, name, v)
        return p
    except ValueError:
        return None


def hopf_point_correct(p: ModelParams, free_param: str, omega0: float,
                       tol: float = 1e-11, max_iter: int = 30) -> HopfPoint | None:
    """Solve the two-real-equation system ``det D(i*omega) = 0`` for
    ``(omega, free_param)`` by a finite-difference Newton iteration."""
    z = np.array([omega0, get_param(p, free_param)])

    def G(zv):
        return _free_residual(p, {free_param: zv[1]}, zv[0])

    for _ in range(max_iter):
        g = G(z)
        J = np.empty((2, 2))
        for j in range(2):
            h = 1e-7 * (1 + abs(z[j]))
            zp, zm = z.copy(), z.copy()
            zp[j] += h
            zm[j] -= h
            J[:, j] = (G(zp) - G(zm)) / (2 * h)
        try:
            dz = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError:
            return None
        z = z + dz
        if z[0] <= 0:
            return None
        if np.max(np.abs(dz)) < tol * (1 + np.max(np.abs(z))):
            break
    pt = _snap_params(p, {free_param: z[1]})
    if pt is None:
        return None
    res = float(np.linalg.norm(_hopf_residual(pt, z[0])))
    if res > 1e-9:
        return None
    return HopfPoint(params=pt, omega=float(z[0]), residual=res,
                     mode_hint=_mode_hint(pt, 1j * z[0]))


def hopf_points_along_line(p: ModelParams, param: str, lo: float, hi: float,
                           n_scan: int = 41, im_max: float = 12.0,
                           re_window=(-1.0, 0.5)) -> list[HopfPoint]:
    """Hopf points of the origin along a one-parameter line.

    Tracks all near-axis roots across a scan grid from both endpoints,
    brackets sign changes of the real part, and corrects each crossing with
    the two-unknown Newton solver.
    """
    grid = np.linspace(lo, hi, n_scan)
    points: list[HopfPoint] = []

    def track(values):
        roots = [r.lam for r in roots_near_axis(with_param(p, param, values[0]),
                                                re_window=re_window, im_max=im_max)
                 if r.lam.imag > 1e-8]
        for k in range(1, len(values)):
            pk = with_param(p, param, values[k])
            moved = []
            for lam in roots:
                r = newton_root(pk, lam)
                if r is None or abs(r.lam.imag) < 1e-8:
                    continue
                lam_new = r.lam if r.lam.imag > 0 else r.lam.conjugate()
                if abs(lam_new - lam) > 0.5 * (1 + abs(lam)):
                    continue  # jumped to a different root: drop the track
                moved.append(lam_new)
                if lam.real * lam_new.real < 0 or lam_new.real == 0.0:
                    frac = abs(lam.real) / (abs(lam.real) + abs(lam_new.real))
                    eta_guess = values[k - 1] + frac * (values[k] - values[k - 1])
                    om_guess = lam.imag + frac * (lam_new.imag - lam.imag)
                    pt = hopf_point_correct(with_param(p, param, eta_guess),
                                            param, om_guess)
                    if pt is not None and lo - 1e-9 <= pt.value(param) <= hi + 1e-9:
                        points.append(pt)
            roots = moved

    track(grid)
    track(grid[::-1])

    unique: list[HopfPoint] = []
    for pt in sorted(points, key=lambda q: (q.value(param), q.omega)):
        if any(abs(pt.value(param) - u.value(param)) < 1e-7 * (1 + abs(pt.value(param)))
               and abs(pt.omega - u.omega) < 1e-6 * (1 + pt.omega) for u in unique):
            continue
        unique.append(pt)
    return unique


# ---------------------------------------------------------------------------
# Hopf-curve continuation in two parameters
# ---------------------------------------------------------------------------

def _curve_G(p_base: ModelParams, free, z):
    return _free_residual(p_base, {free[0]: z[1], free[1]: z[2]}, z[0])


def _curve_jac(p_base, free, z):
    J = np.empty((2, 3))
    for j in range(3):
        h = 1e-7 * (1 + abs(z[j]))
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        J[:, j] = (_curve_G(p_base, free, zp) - _curve_G(p_base, free, zm)) / (2 * h)
    return J


def _curve_correct(p_base, free, z_pred, tangent, tol=1e-11, max_iter=15):
    z = z_pred.copy()
    degenerate = False
    for _ in range(max_iter):
        g = _curve_G(p_base, free, z)
        A = np.vstack([_curve_jac(p_base, free, z), tangent])
        b = -np.concatenate([g, [tangent @ (z - z_pred)]])
        cond = np.linalg.cond(A)
        if cond > 1e10:
            degenerate = True
        try:
            dz = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            return None, degenerate
        z = z + dz
        if np.max(np.abs(dz)) < tol * (1 + np.max(np.abs(z))):
            g = _curve_G(p_base, free, z)
            if np.linalg.norm(g) < 1e-9:
                return z, degenerate
            return None, degenerate
    return None, degenerate


def _clamp_to_range(p_base, free, z, ranges):
    """Pin any out-of-range parameter at its boundary and re-solve for the
    remaining two unknowns, giving an exact boundary point."""
    for idx, (lo, hi) in zip((1, 2), ranges):
        v = z[idx]
        if v < lo or v > hi:
            pinned = lo if v < lo else hi
            other = 2 if idx == 1 else 1
            p_pin = with_param(p_base, free[idx - 1], pinned)
            pt = hopf_point_correct(
                with_param(p_pin, free[other - 1], z[other]),
                free[other - 1], z[0])
            if pt is not None:
                zc = z.copy()
                zc[0] = pt.omega
                zc[idx] = pinned
                zc[other] = pt.value(free[other - 1])
                return zc
    return None


def continue_hopf(start: HopfPoint, free: tuple[str, str], ranges,
                  ds: float = 0.02, max_points: int = 2000,
                  ds_floor: float = 1e-8, ds_max: float = 0.04) -> HopfCurve:
    """Pseudo-arclength continuation of a Hopf locus in two parameters.

    The defining system is ``Re det D(i*omega) = Im det D(i*omega) = 0`` in
    the unknowns ``(omega, p1, p2)``.  Runs in both directions from ``start``
    until a parameter leaves ``ranges`` (the end point is then corrected onto
    the boundary exactly), the point budget is hit, or the step shrinks to
    ``ds_floor``.  Near-degenerate corrector systems flag the point and the
    curve continues with a reduced step.
    """
    p_base = start.params
    z0 = np.array([start.omega, start.value(free[0]), start.value(free[1])])
    scale = np.array([max(1.0, abs(z0[0])),
                      max(1e-2, ranges[0][1] - ranges[0][0]),
                      max(1e-2, ranges[1][1] - ranges[1][0])])

    J = _curve_jac(p_base, free, z0)
    _, _, Vt = np.linalg.svd(J)
    t0 = Vt[-1]

    def make_point(z, degenerate=False):
        pt = _snap_params(p_base, {free[0]: z[1], free[1]: z[2]})
        if pt is None:
            return None
        res = float(np.linalg.norm(_hopf_residual(pt, z[0])))
        return HopfPoint(params=pt, omega=float(z[0]),
                         mode_hint=start.mode_hint if start.mode_hint is not None
                         else _mode_hint(pt, 1j * z[0]),
                         residual=res, degenerate=degenerate)

    # steps live in box-scaled coordinates: ds_max = 0.04 is 4% of the
    # parameter box diagonal per step
    curve = HopfCurve(free=free, points=[make_point(z0)])
    terminated = "range"

    for direction in (+1.0, -1.0):
        z_prev = z0.copy()
        tangent = direction * t0
        h = ds
        side: list[HopfPoint] = []
        while len(side) + len(curve.points) < max_points:
            z_pred = z_prev + h * tangent * scale
            z_new, degen = _curve_correct(p_base, free, z_pred, tangent / scale)
            if z_new is None:
                h *= 0.5
                if h < ds_floor:
                    terminated = "step_floor"
                    break
                continue
            if z_new[0] <= 1e-6:
                terminated = "omega_zero"
                break
            out_of_range = (not ranges[0][0] <= z_new[1] <= ranges[0][1]
                            or not ranges[1][0] <= z_new[2] <= ranges[1][1])
            if out_of_range:
                zc = _clamp_to_range(p_base, free, z_new, ranges)
                if zc is not None:
                    end_pt = make_point(zc, degen)
                    if end_pt is not None:
                        side.append(end_pt)
                break
            new_pt = make_point(z_new, degen)
            if new_pt is None:
                terminated = "domain"
                break
            side.append(new_pt)
            new_tan = (z_new - z_prev) / scale
            nrm = np.linalg.norm(new_tan)
            if nrm > 0:
                tangent = new_tan / nrm
            z_prev = z_new
            h = min(h * 1.3, ds_max) if not degen else max(h * 0.5, ds_floor)
        if direction > 0:
            curve.points.extend(side)
        else:
            curve.points = side[::-1] + curve.points
    curve.terminated = terminated
    return curve


# ---------------------------------------------------------------------------
# closed forms and curve utilities
# ---------------------------------------------------------------------------

def symmetric_hopf_curve(mode: SubspaceMode, p: ModelParams,
                         theta: np.ndarray) -> dict:
    """Closed-form Hopf locus of one subspace in the (a, tau)-plane.

    Parametrized by ``theta = omega_H * tau``; derived from the scalar mode
    characteristic with ``lambda = i*omega_H``.  Returns arrays ``a``,
    ``tau``, ``omega`` (entries with no admissible root are NaN).
    """
    theta = np.asarray(theta, dtype=float)
    gamma, w0 = p.gamma, p.omega
    with np.errstate(divide="ignore", invalid="ignore"):
        if mode is SubspaceMode.IN_PHASE:
            a = gamma / (np.cos(theta) - 1.0)
            omega = 0.5 * (a * np.sin(theta)
                           + np.sqrt(a ** 2 * np.sin(theta) ** 2 + 4 * w0 ** 2))
        else:
            a = -gamma / (np.cos(theta) + 1.0)
            omega = 0.5 * (-a * np.sin(theta)
                           + np.sqrt(a ** 2 * np.sin(theta) ** 2 + 4 * w0 ** 2))
        tau = theta / omega
    bad = ~np.isfinite(a) | ~np.isfinite(omega) | (omega <= 0) | (tau < 0)
    a = np.where(bad, np.nan, a)
    tau = np.where(bad, np.nan, tau)
    omega = np.where(bad, np.nan, omega)
    return {"a": a, "tau": tau, "omega": omega}


def symmetric_hopf_points_at_delay(mode: SubspaceMode, p: ModelParams, tau: float,
                                   a_range=(-50.0, 0.0), theta_max: float = 40.0,
                                   n_scan: int = 8001) -> list[HopfPoint]:
    """Closed-form Hopf points of one subspace at a fixed delay.

    Scans the ``theta = omega_H * tau`` parametrization of
    :func:`symmetric_hopf_curve` for crossings of the target delay and
    polishes each with a bisection on theta.  Symmetric parameters only.
    """
    from scipy.optimize import brentq

    if tau < 0:
        raise ValueError("tau must be non-negative")
    theta = np.linspace(1e-6, theta_max, n_scan)
    cf = symmetric_hopf_curve(mode, p, theta)

    def tau_of(th):
        c = symmetric_hopf_curve(mode, p, np.array([th]))
        return c["tau"][0] - tau

    pts: list[HopfPoint] = []
    g = cf["tau"] - tau
    for i in range(len(theta) - 1):
        if not (np.isfinite(g[i]) and np.isfinite(g[i + 1])):
            continue
        if g[i] == 0.0 or g[i] * g[i + 1] < 0:
            th = brentq(tau_of, theta[i], theta[i + 1], xtol=1e-14)
            c = symmetric_hopf_curve(mode, p, np.array([th]))
            a, om = float(c["a"][0]), float(c["omega"][0])
            if not a_range[0] <= a <= a_range[1]:
                continue
            params = p.replace(a1=a, a2=a, tau1=tau, tau2=tau)
            res = float(np.linalg.norm(_hopf_residual(params, om)))
            if any(abs(q.value("a") - a) < 1e-9 * (1 + abs(a)) for q in pts):
                continue
            pts.append(HopfPoint(params=params, omega=om, mode_hint=mode,
                                 residual=res))
    pts.sort(key=lambda q: q.value("a"))
    return pts


def _segment_intersection(p1, p2, q1, q2):
    d1 = p2 - p1
    d2 = q2 - q1
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(denom) < 1e-14:
        return None
    r = q1 - p1
    t = (r[0] * d2[1] - r[1] * d2[0]) / denom
    s = (r[0] * d1[1] - r[1] * d1[0]) / denom
    if 0 <= t <= 1 and 0 <= s <= 1:
        return p1 + t * d1
    return None


def double_hopf_points(curve_a: HopfCurve, curve_b: HopfCurve) -> list[np.ndarray]:
    """Crossings of two Hopf loci in their shared parameter plane (points
    where two distinct imaginary pairs coexist)."""
    if curve_a.free != curve_b.free:
        raise ValueError("curves live in different parameter planes")
    A = curve_a.coords()
    B = curve_b.coords()
    hits = []
    for i in range(len(A) - 1):
        for j in range(len(B) - 1):
            pt = _segment_intersection(A[i], A[i + 1], B[j], B[j + 1])
            if pt is not None:
                if not any(np.linalg.norm(pt - h) < 1e-6 for h in hits):
                    hits.append(pt)
    return hits


def hopf_curve_to_csv(curve: HopfCurve, path) -> None:
    with open(path, "w") as fh:
        fh.write("p1,p2,omega_H,mode\n")
        for pt in curve.points:
            mode = pt.mode_hint.value if pt.mode_hint else ""
            fh.write(f"{pt.value(curve.free[0])!r},{pt.value(curve.free[1])!r},"
                     f"{pt.omega!r},{mode}\n")
