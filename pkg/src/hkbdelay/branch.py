"""Pseudo-arclength continuation of periodic orbits in one parameter.

A branch is an arclength-ordered list of corrected orbits with Floquet data;
the continuation extends the collocation system by the free parameter and an
arclength constraint, so folds are passed transparently.  Bifurcation events
are detected from sign changes of multiplier test functions between
consecutive points and refined by bisection:

* fold            - the tangent's parameter component changes sign
* branch_point    - a non-trivial real multiplier crosses +1 (no fold nearby)
* period_doubling - a real multiplier crosses -1
* torus           - a truly complex pair crosses the unit circle
* stability_change- the overall stable/unstable flag flips

Branch switching onto bifurcating solutions is deliberately not performed;
events are recorded and exported only.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import model
from .model import ModelParams, SubspaceMode
from .ddesim import (ConstantHistory, NoCrossingsError, NotConvergedError,
                     orbit_distance, settle_to_orbit)
from .colloc import (FloquetSpectrum, MaxIterationsError, NewtonDivergedError,
                     OrbitCorrector, OrbitProfile, amplitude, fit_from_samples,
                     floquet, newton_correct, orbit_to_json)

__all__ = [
    "BranchPoint", "BranchEvent", "Branch",
    "continue_branch", "detect_events", "isola_hunt", "classify_family",
    "default_seed_ensemble", "branch_to_csv", "branch_to_json_text",
    "plot_branches",
]

log = logging.getLogger(__name__)

ANGLE_TOL = 0.05          # radians: separates torus pairs from real crossings
EVENT_PARAM_TOL = 1e-6
DEDUP_TOL = 1e-3


@dataclass
class BranchPoint:
    param: float
    orbit: OrbitProfile
    floquet: FloquetSpectrum | None
    amplitude: float
    period: float
    phi_rel: float | None = None

    @property
    def stable(self) -> bool | None:
        return None if self.floquet is None else self.floquet.stable


@dataclass
class BranchEvent:
    kind: str
    index_lo: int
    index_hi: int
    param: float
    critical_multiplier: complex | None = None
    ambiguous: bool = False

    def __str__(self):
        amb = " (ambiguous)" if self.ambiguous else ""
        return f"{self.kind}@{self.param:.6g}{amb}"


@dataclass
class Branch:
    free: str
    points: list[BranchPoint] = field(default_factory=list)
    events: list[BranchEvent] = field(default_factory=list)
    family: str = "Other"
    provenance: str = "manual"
    terminal: str = "range"

    def params(self) -> np.ndarray:
        return np.array([pt.param for pt in self.points])

    def amplitudes(self) -> np.ndarray:
        return np.array([pt.amplitude for pt in self.points])

    def stability(self) -> np.ndarray:
        return np.array([bool(pt.stable) for pt in self.points])

    def stable_intervals(self) -> list[tuple[float, float]]:
        """Parameter intervals covered by maximal stable arcs (a folded
        branch can cover the same interval several times).  Arc boundaries
        use the refined stability-change event parameters where available."""
        refined = {}
        for ev in self.events:
            if ev.kind == "stability_change":
                refined[(ev.index_lo, ev.index_hi)] = ev.param
        out = []
        run = None
        for k, pt in enumerate(self.points):
            if pt.stable:
                lo_edge = refined.get((k - 1, k), pt.param)
                if run is None:
                    run = [min(lo_edge, pt.param), max(lo_edge, pt.param)]
                else:
                    run[0] = min(run[0], pt.param)
                    run[1] = max(run[1], pt.param)
            else:
                if run is not None:
                    hi_edge = refined.get((k - 1, k), None)
                    if hi_edge is not None:
                        run[0] = min(run[0], hi_edge)
                        run[1] = max(run[1], hi_edge)
                    out.append(tuple(run))
                    run = None
        if run is not None:
            out.append(tuple(run))
        return out

    def orbit_near(self, value: float):
        """Branch point closest to a parameter value (None if empty)."""
        if not self.points:
            return None
        k = int(np.argmin(np.abs(self.params() - value)))
        return self.points[k]


# ---------------------------------------------------------------------------
# continuation core
# ---------------------------------------------------------------------------

class _Extended:
    """Bordered collocation system over (node values, period, parameter)."""

    def __init__(self, corrector: OrbitCorrector, free: str, p_base: ModelParams):
        self.corr = corrector
        self.free = free
        self.p_base = p_base
        self.M = corrector.n_unknowns

    def params_at(self, eta: float) -> ModelParams:
        return model.with_param(self.p_base, self.free, eta)

    def correct(self, U, T, eta, anchor, row_arc=None, rhs_arc=0.0,
                tol=1e-9, max_iter=12):
        """Newton on the bordered system; ``row_arc`` of length M+1 (or None
        for fixed-parameter correction)."""
        U = U.copy()
        T = float(T)
        eta = float(eta)
        prev = np.inf
        grow = 0
        for it in range(1, max_iter + 1):
            p = self.params_at(eta)
            R, J = self.corr.residual_and_jacobian(p, U, T, anchor)
            if row_arc is None:
                res = float(np.max(np.abs(R)))
            else:
                z = np.concatenate([U.reshape(-1), [T, eta]])
                g = float(row_arc @ z - rhs_arc)
                res = max(float(np.max(np.abs(R))), abs(g))
            if res > prev * 1.000001:
                grow += 1
                if grow >= 3:
                    return None
            else:
                grow = 0
            prev = res
            col = self.corr.param_column(p, U, T, self.free)
            if row_arc is None:
                try:
                    delta = np.linalg.solve(J, -R)
                except np.linalg.LinAlgError:
                    return None
                dU, dT, deta = delta[:-1], delta[-1], 0.0
            else:
                A = np.zeros((self.M + 1, self.M + 1))
                A[:self.M, :self.M] = J
                A[:self.M, self.M] = col
                A[self.M, :] = row_arc
                b = -np.concatenate([R, [g]])
                try:
                    delta = np.linalg.solve(A, b)
                except np.linalg.LinAlgError:
                    return None
                dU, dT, deta = delta[:self.M - 1], delta[self.M - 1], delta[self.M]
            U = U + dU.reshape(U.shape)
            T = T + dT
            eta = eta + deta
            if T <= 0:
                return None
            inc = float(np.max(np.abs(dU))) if len(dU) else 0.0
            inc = max(inc, abs(dT), abs(deta))
            if res < tol and inc < tol:
                return U, T, eta, it
        return None


def _zvec(U, T, eta):
    return np.concatenate([U.reshape(-1), [T, eta]])


def continue_branch(start: OrbitProfile, free: str, prange, ds0: float | None = None,
                    max_points: int = 600, floquet_stride: int = 1,
                    n_mult: int = 12, family: str | None = None,
                    provenance: str = "manual", tol: float = 1e-9,
                    detect: bool = True, close_tol: float = DEDUP_TOL) -> Branch:
    """Continue a converged orbit in one free parameter over ``prange``.

    Secant predictor, bordered Newton corrector, adaptive steps (halving on
    failure, growing 1.3x after fast convergence).  Runs both directions from
    the start; ends on range exit (with an exact boundary point), step floor,
    point budget, or branch closure (isolas).  Floquet data is attached to
    every ``floquet_stride``-th point and events are populated unless
    ``detect`` is False.
    """
    lo, hi = float(prange[0]), float(prange[1])
    span = hi - lo
    if span <= 0:
        raise ValueError("empty parameter range")
    eta0 = model.get_param(start.params, free)
    if not lo - 1e-12 <= eta0 <= hi + 1e-12:
        raise ValueError(f"start parameter {eta0} outside range {prange}")

    corr = OrbitCorrector(start.system, start.mesh, start.degree)
    ext = _Extended(corr, free, start.params)
    n_flat = start.values.size

    # scaled inner product for arclength: profile RMS, relative period,
    # parameter over a tenth of the range
    s_eta = span / 10.0
    s_T = max(start.period, 1e-2)
    w = np.concatenate([np.full(n_flat, 1.0 / math.sqrt(n_flat)),
                        [1.0 / s_T, 1.0 / s_eta]])

    if ds0 is None:
        ds0 = 0.05
    ds_max = 1.0          # one tenth of the range when parameter-dominated
    ds_floor = 1e-6

    def make_point(orbit, with_floquet):
        spec = floquet(orbit, orbit.params, n_mult=n_mult) if with_floquet else None
        return BranchPoint(param=model.get_param(orbit.params, free), orbit=orbit,
                           floquet=spec, amplitude=amplitude(orbit),
                           period=orbit.period)

    start_point = make_point(start, True)
    branch = Branch(free=free, points=[start_point],
                    family=family if family is not None else start.label,
                    provenance=provenance)
    terminal = {"+": "range", "-": "range"}

    z_start = _zvec(start.values, start.period, eta0)

    for direction, sgn in (("+", +1.0), ("-", -1.0)):
        # first step: natural continuation a small parameter step away
        side_points: list[BranchPoint] = []
        prev_orbit = start
        anchor = corr.anchor(prev_orbit)
        h_nat = ds0
        first = None
        while h_nat >= ds_floor:
            eta1 = eta0 + sgn * h_nat * s_eta
            if not lo <= eta1 <= hi:
                eta1 = min(max(eta1, lo), hi)
            got = ext.correct(prev_orbit.values, prev_orbit.period, eta1, anchor)
            if got is not None and abs(got[2] - eta0) > 1e-14:
                first = got
                break
            h_nat *= 0.5
        if first is None:
            terminal[direction] = "corrector_stuck"
            continue
        U1, T1, eta1, _ = first
        orb1 = start.with_updates(values=U1, period=T1,
                                  params=ext.params_at(eta1))
        z_prev = _zvec(start.values, start.period, eta0)
        z_cur = _zvec(U1, T1, eta1)
        side_points.append(make_point(orb1, True))
        prev_orbit = orb1

        ds = ds0
        closed = False
        while len(side_points) < max_points:
            t_sc = (z_cur - z_prev) * w
            nrm = np.linalg.norm(t_sc)
            if nrm == 0:
                terminal[direction] = "corrector_stuck"
                break
            t_sc /= nrm
            z_pred = z_cur + ds * (t_sc / w)
            anchor = corr.anchor(prev_orbit)
            row_arc = t_sc * w
            rhs_arc = float(row_arc @ z_pred)
            got = ext.correct(z_pred[:n_flat].reshape(prev_orbit.values.shape),
                              z_pred[n_flat], z_pred[n_flat + 1], anchor,
                              row_arc=row_arc, rhs_arc=rhs_arc, tol=tol)
            if got is None:
                ds *= 0.5
                if ds < ds_floor:
                    terminal[direction] = "corrector_stuck"
                    break
                continue
            U2, T2, eta2, iters = got
            if not lo <= eta2 <= hi:
                eta_b = min(max(eta2, lo), hi)
                got_b = ext.correct(U2, T2, eta_b, anchor)
                if got_b is not None:
                    Ub, Tb, _, _ = got_b
                    orb_b = prev_orbit.with_updates(values=Ub, period=Tb,
                                                    params=ext.params_at(eta_b))
                    side_points.append(make_point(orb_b, True))
                terminal[direction] = "range"
                break
            orb2 = prev_orbit.with_updates(values=U2, period=T2,
                                           params=ext.params_at(eta2))
            z_new = _zvec(U2, T2, eta2)
            # isola closure: back at the start after a genuine excursion
            if len(side_points) > 12:
                d_start = np.linalg.norm((z_new - z_start) * w)
                if d_start < 2 * ds and orbit_distance(
                        orb2.evaluate(np.arange(128) / 128),
                        start) < close_tol:
                    closed = True
                    terminal[direction] = "closed"
                    break
            with_fl = (len(side_points) % floquet_stride) == 0
            side_points.append(make_point(orb2, with_fl))
            z_prev, z_cur = z_cur, z_new
            prev_orbit = orb2
            if iters <= 3:
                ds = min(ds * 1.3, ds_max)
        else:
            terminal[direction] = "budget"

        if direction == "+":
            branch.points.extend(side_points)
        else:
            branch.points = side_points[::-1] + branch.points
        if closed and direction == "+":
            # a closed loop needs no second direction
            terminal["-"] = "closed"
            break

    branch.terminal = (terminal["-"], terminal["+"]) if isinstance(terminal, dict) else terminal
    branch.terminal = f"-:{terminal['-']},+:{terminal['+']}"
    if detect:
        detect_events(branch, ext)
    return branch


# ---------------------------------------------------------------------------
# event detection
# ---------------------------------------------------------------------------

def _real_mults(spec, positive):
    out = []
    for mu in spec.nontrivial:
        if abs(mu.imag) <= ANGLE_TOL * max(1.0, abs(mu)):
            if (mu.real > 0) == positive:
                out.append(mu.real)
    return out


def _test_bp(spec) -> float:
    vals = _real_mults(spec, positive=True)
    if not vals:
        return -0.5
    # positive iff some real multiplier sits beyond +1
    worst = max(vals)
    near = min(vals, key=lambda v: abs(v - 1.0))
    return (near - 1.0) if abs(near - 1.0) < 0.8 else (0.5 if worst > 1 else -0.5)


def _test_pd(spec) -> float:
    vals = _real_mults(spec, positive=False)
    if not vals:
        return -0.5
    near = min(vals, key=lambda v: abs(v + 1.0))
    worst = min(vals)
    return (abs(near) - 1.0) if abs(abs(near) - 1.0) < 0.8 else (0.5 if worst < -1 else -0.5)


def _test_torus(spec) -> float:
    best = None
    for mu in spec.nontrivial:
        ang = abs(np.angle(mu))
        if ANGLE_TOL < ang < np.pi - ANGLE_TOL:
            m = abs(mu)
            if best is None or abs(m - 1.0) < abs(best - 1.0):
                best = m
    if best is None:
        return -0.5
    return best - 1.0


def _critical_multiplier(spec, kind):
    if kind == "branch_point":
        vals = _real_mults(spec, positive=True)
        return complex(min(vals, key=lambda v: abs(v - 1.0))) if vals else None
    if kind == "period_doubling":
        vals = _real_mults(spec, positive=False)
        return complex(min(vals, key=lambda v: abs(v + 1.0))) if vals else None
    if kind == "torus":
        cands = [mu for mu in spec.nontrivial
                 if ANGLE_TOL < abs(np.angle(mu)) < np.pi - ANGLE_TOL]
        return min(cands, key=lambda mu: abs(abs(mu) - 1.0)) if cands else None
    return None


_TESTS = {"branch_point": _test_bp, "period_doubling": _test_pd,
          "torus": _test_torus}


def _refine_multiplier_event(ext, branch, k, kind, n_mult):
    """Bisection in the parameter between points k and k+1."""
    a_pt, b_pt = branch.points[k], branch.points[k + 1]
    fa = _TESTS[kind](a_pt.floquet)
    orb = a_pt.orbit
    lo_eta, hi_eta = a_pt.param, b_pt.param
    spec_mid = None
    for _ in range(40):
        if abs(hi_eta - lo_eta) < EVENT_PARAM_TOL * (1 + abs(lo_eta)):
            break
        mid = 0.5 * (lo_eta + hi_eta)
        anchor = ext.corr.anchor(orb)
        got = ext.correct(orb.values, orb.period, mid, anchor)
        if got is None:
            break
        U, T, _, _ = got
        orb = orb.with_updates(values=U, period=T, params=ext.params_at(mid))
        spec_mid = floquet(orb, orb.params, n_mult=n_mult)
        fm = _TESTS[kind](spec_mid)
        if fa * fm <= 0:
            hi_eta = mid
        else:
            lo_eta = mid
            fa = fm
    param = 0.5 * (lo_eta + hi_eta)
    spec = spec_mid if spec_mid is not None else b_pt.floquet
    return param, _critical_multiplier(spec, kind)


def detect_events(branch: Branch, ext: _Extended | None = None,
                  n_mult: int = 12, refine: bool = True) -> Branch:
    """Populate ``branch.events`` from the per-point Floquet data."""
    branch.events = []
    pts = branch.points
    if len(pts) < 2:
        return branch
    if ext is None:
        first = pts[0].orbit
        ext = _Extended(OrbitCorrector(first.system, first.mesh, first.degree),
                        branch.free, first.params)

    # folds from the polyline of parameter values
    etas = branch.params()
    d = np.diff(etas)
    fold_brackets = set()
    for k in range(1, len(d)):
        if d[k - 1] * d[k] < 0:
            lo, hi = sorted((etas[k - 1], etas[k + 1]))
            # parabolic refinement through the three points
            y0, y1, y2 = etas[k - 1], etas[k], etas[k + 1]
            denom = (y0 - 2 * y1 + y2)
            extremum = y1 - 0.125 * (y2 - y0) ** 2 / denom if denom != 0 else y1
            branch.events.append(BranchEvent(
                kind="fold", index_lo=k - 1, index_hi=k + 1, param=float(extremum)))
            fold_brackets.update((k - 1, k))

    for kind in ("branch_point", "period_doubling", "torus"):
        test = _TESTS[kind]
        for k in range(len(pts) - 1):
            sa, sb = pts[k].floquet, pts[k + 1].floquet
            if sa is None or sb is None:
                continue
            fa, fb = test(sa), test(sb)
            if fa * fb < 0:
                ambiguous = kind == "branch_point" and k in fold_brackets
                if refine and not ambiguous:
                    param, crit = _refine_multiplier_event(ext, branch, k, kind, n_mult)
                else:
                    param = 0.5 * (pts[k].param + pts[k + 1].param)
                    crit = _critical_multiplier(sb if abs(fb) < abs(fa) else sa, kind)
                branch.events.append(BranchEvent(
                    kind=kind, index_lo=k, index_hi=k + 1, param=float(param),
                    critical_multiplier=crit, ambiguous=ambiguous))

    for k in range(len(pts) - 1):
        sa, sb = pts[k].floquet, pts[k + 1].floquet
        if sa is None or sb is None:
            continue
        if sa.stable != sb.stable:
            explained = [ev for ev in branch.events
                         if ev.kind != "stability_change"
                         and min(pts[k].param, pts[k + 1].param) - 1e-9 <= ev.param
                         <= max(pts[k].param, pts[k + 1].param) + 1e-9]
            param = explained[0].param if explained else 0.5 * (
                pts[k].param + pts[k + 1].param)
            branch.events.append(BranchEvent(
                kind="stability_change", index_lo=k, index_hi=k + 1,
                param=float(param)))

    branch.events.sort(key=lambda ev: (ev.index_lo, ev.kind))
    return branch


# ---------------------------------------------------------------------------
# family classification
# ---------------------------------------------------------------------------

def classify_family(branch_or_orbit, asym_tol: float = 1e-6,
                    homotopy: bool = True) -> str:
    """Family label: Hopf-provenance hint, symmetric-subspace residual at
    zero detuning, or detuning-homotopy connection to a labeled orbit."""
    from .colloc import orbit_asymmetry

    if isinstance(branch_or_orbit, Branch):
        branch = branch_or_orbit
        if branch.provenance.startswith("hopf") and branch.family != "Other":
            return branch.family
        orbit = branch.points[len(branch.points) // 2].orbit
    else:
        branch = None
        orbit = branch_or_orbit
        if orbit.label != "Other":
            return orbit.label

    if orbit.dim != 4:
        return ("InPhaseFamily" if orbit.system == SubspaceMode.IN_PHASE.value
                else "AntiPhaseFamily")

    scale = max(amplitude(orbit), 1e-6)
    if orbit.params.delta == 0.0 and orbit.params.symmetric():
        asym = orbit_asymmetry(orbit)
        if asym["inphase"] < asym_tol * scale:
            return "InPhaseFamily"
        if asym["antiphase"] < asym_tol * scale:
            return "AntiPhaseFamily"
        return "Other"

    if not homotopy:
        return "Other"
    # connect to delta = 0 by continuation and classify there
    delta0 = orbit.params.delta
    lo, hi = (min(delta0, 0.0), max(delta0, 0.0))
    pad = 0.05 * max(abs(delta0), 1.0)
    try:
        hom = continue_branch(orbit, "delta", (lo - pad, hi + pad),
                              floquet_stride=10**9, detect=False,
                              provenance="homotopy")
    except (NewtonDivergedError, MaxIterationsError, ValueError):
        return "Other"
    end = hom.orbit_near(0.0)
    if end is None or abs(end.param) > 1e-8 * max(1.0, abs(delta0)):
        return "Other"
    return classify_family(end.orbit, asym_tol=asym_tol, homotopy=False)


# ---------------------------------------------------------------------------
# isolated-branch hunting
# ---------------------------------------------------------------------------

def default_seed_ensemble(grid_extent: float = 1.5, n_side: int = 5) -> list:
    """Constant histories on an (x1, x2) grid with zero velocities, plus
    in-phase and anti-phase biased seeds."""
    seeds = []
    for x1 in np.linspace(-grid_extent, grid_extent, n_side):
        for x2 in np.linspace(-grid_extent, grid_extent, n_side):
            seeds.append(np.array([x1, x2, 0.0, 0.0]))
    for amp in (0.3, 1.0):
        seeds.append(np.array([amp, amp, 0.0, 0.0]))
        seeds.append(np.array([amp, -amp, 0.0, 0.0]))
    return seeds


def _attractor_known(est, candidates, tol=DEDUP_TOL):
    grid = np.arange(128) / 128
    block = est.samples[:: max(1, len(est.samples) // 128)][:128]
    for orb in candidates:
        if abs(orb.period - est.period) > 0.05 * max(orb.period, est.period):
            continue
        if orbit_distance(block, orb) < tol * max(1.0, np.max(np.abs(block))):
            return True
    return False


def isola_hunt(p_grid, free: str, prange, seeds=None, known_branches=(),
               t_transient: float | None = None, t_max: float | None = None,
               settle_tol: float = 1e-6, step: float | None = None,
               mesh_n: int = 40, degree: int = 4, max_points: int = 400,
               floquet_stride: int = 1, dedup_tol: float = DEDUP_TOL) -> list[Branch]:
    """Simulation census over a parameter grid, then continuation of every
    attractor not reachable from the known branches.

    For each grid parameter set, the seed ensemble is settled to attractors;
    profiles already explained by ``known_branches`` (or by previously found
    ones) are dropped, the rest are fitted, corrected and continued over
    ``prange``.  Per-seed convergence failures are logged and skipped.
    """
    if seeds is None:
        seeds = default_seed_ensemble()
    found: list[Branch] = []
    for p in p_grid:
        T_guess = 2 * np.pi / p.omega
        t_tr = t_transient if t_transient is not None else 120 * T_guess
        t_mx = t_max if t_max is not None else t_tr + 120 * T_guess
        eta = model.get_param(p, free)
        known_orbits = []
        for br in list(known_branches) + found:
            pt = br.orbit_near(eta)
            if pt is not None and abs(pt.param - eta) < 0.05 * (prange[1] - prange[0]):
                known_orbits.append(pt.orbit)
        new_estimates = []
        for seed in seeds:
            try:
                est = settle_to_orbit(p, ConstantHistory(seed), t_transient=t_tr,
                                      t_max=t_mx, tol=settle_tol, step=step)
            except (NotConvergedError, NoCrossingsError) as exc:
                log.debug("seed %s at %s=%.4g: %s", seed[:2], free, eta, exc)
                continue
            if _attractor_known(est, known_orbits, dedup_tol):
                continue
            if any(_attractor_known(est, [o], dedup_tol) for o in new_estimates):
                continue
            try:
                orb = newton_correct(fit_from_samples(est, mesh_n=mesh_n,
                                                      degree=degree), p)
            except (NewtonDivergedError, MaxIterationsError) as exc:
                log.info("correction failed for attractor at %s=%.4g: %s",
                         free, eta, exc)
                continue
            new_estimates.append(orb)
        for orb in new_estimates:
            orb = orb.with_updates(label=classify_family(orb))
            br = continue_branch(orb, free, prange, max_points=max_points,
                                 floquet_stride=floquet_stride,
                                 family=orb.label, provenance="isola")
            found.append(br)
    return found


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def branch_to_csv(branch: Branch, path) -> None:
    with open(path, "w") as fh:
        fh.write("param,amplitude,period,stability,family\n")
        for pt in branch.points:
            stab = "" if pt.stable is None else ("stable" if pt.stable else "unstable")
            fh.write(f"{pt.param!r},{pt.amplitude!r},{pt.period!r},"
                     f"{stab},{branch.family}\n")


def branch_to_json_text(branch: Branch) -> str:
    doc = {
        "format": "hkbdelay-branch/1",
        "free": branch.free,
        "family": branch.family,
        "provenance": branch.provenance,
        "terminal": branch.terminal,
        "events": [{
            "kind": ev.kind, "param": ev.param,
            "index_lo": ev.index_lo, "index_hi": ev.index_hi,
            "critical_multiplier": (None if ev.critical_multiplier is None
                                    else [ev.critical_multiplier.real,
                                          ev.critical_multiplier.imag]),
            "ambiguous": ev.ambiguous,
        } for ev in branch.events],
        "points": [{
            "param": pt.param, "amplitude": pt.amplitude, "period": pt.period,
            "stable": pt.stable, "phi_rel": pt.phi_rel,
            "floquet_moduli": (None if pt.floquet is None
                               else np.abs(pt.floquet.multipliers).tolist()),
            "orbit": json.loads(orbit_to_json(pt.orbit)),
        } for pt in branch.points],
    }
    return json.dumps(doc, indent=1)


_FAMILY_COLOR = {"InPhaseFamily": "tab:blue", "AntiPhaseFamily": "tab:red",
                 "Other": "tab:gray"}
_EVENT_MARK = {"fold": ("v", "k"), "branch_point": ("x", "k"),
               "torus": ("*", "k"), "period_doubling": ("s", "k"),
               "stability_change": (".", "gray")}


def plot_branches(branches, path, xlabel: str = "parameter",
                  title: str | None = None) -> None:
    """One-parameter bifurcation diagram: amplitude vs parameter, thick
    segments stable, thin unstable, events as markers (SVG/PNG by suffix)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    for br in branches:
        color = _FAMILY_COLOR.get(br.family, "tab:gray")
        etas = br.params()
        amps = br.amplitudes()
        stab = np.array([pt.stable if pt.stable is not None else False
                         for pt in br.points])
        for k in range(len(etas) - 1):
            lw = 2.2 if (stab[k] and stab[k + 1]) else 0.7
            ax.plot(etas[k:k + 2], amps[k:k + 2], color=color, lw=lw,
                    solid_capstyle="round")
        for ev in br.events:
            if ev.kind == "stability_change":
                continue
            k = min(ev.index_hi, len(br.points) - 1)
            mark, mcol = _EVENT_MARK[ev.kind]
            ax.plot([ev.param], [br.points[k].amplitude], mark, color=mcol,
                    ms=7, mew=1.5, zorder=5)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("|x1|")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
