import numpy as np
import pytest

from hkbdelay.model import ModelParams, SubspaceMode
from hkbdelay.ddesim import orbit_distance
from hkbdelay.branch import (
    Branch, branch_to_csv, branch_to_json_text, classify_family,
    continue_branch, default_seed_ensemble, detect_events, isola_hunt,
    plot_branches,
)
from hkbdelay.colloc import amplitude, branch_from_hopf, newton_correct
from hkbdelay.spectrum import hopf_point_correct
from tests.conftest import P_COUPLED, settle_and_correct

TWO_PI = 2 * np.pi


@pytest.fixture(scope="module")
def antiphase_paper_units():
    p = ModelParams.symmetric_coupling(a=-0.2, b=0.2, tau=0.14,
                                       omega=TWO_PI * 1.3)
    _, _, full = settle_and_correct(p, SubspaceMode.ANTI_PHASE,
                                    t_transient=60.0, t_max=200.0, step=0.002)
    return p, full


class TestContinueBranch:
    def test_finds_antiphase_stabilization_point(self, antiphase_paper_units):
        # the anti-phase orbit of the delay-coupled pair gains stability at a
        # branch point near f = 1.2816 cycles/s
        _, ap = antiphase_paper_units
        br = continue_branch(ap, "omega", (TWO_PI * 1.15, TWO_PI * 1.45))
        bps = [ev for ev in br.events if ev.kind == "branch_point"]
        assert len(bps) == 1
        assert bps[0].param / TWO_PI == pytest.approx(1.2816, abs=2e-3)
        assert abs(bps[0].critical_multiplier - 1.0) < 1e-3
        scs = [ev for ev in br.events if ev.kind == "stability_change"]
        assert len(scs) == 1 and scs[0].param == bps[0].param
        # event-refined boundary feeds the stable intervals
        ivs = br.stable_intervals()
        assert len(ivs) == 1
        assert ivs[0][0] == pytest.approx(bps[0].param, abs=1e-6)

    def test_smooth_stable_segment_has_no_events(self, antiphase_paper_units):
        _, ap = antiphase_paper_units
        br = continue_branch(ap, "omega", (TWO_PI * 1.295, TWO_PI * 1.5))
        assert br.events == []
        assert all(pt.stable for pt in br.points)

    def test_path_retrace_reproduces_orbits(self, antiphase_paper_units):
        _, ap = antiphase_paper_units
        fwd = continue_branch(ap, "omega", (TWO_PI * 1.3, TWO_PI * 1.6),
                              floquet_stride=10**9, detect=False)
        far = fwd.points[-1].orbit
        back = continue_branch(far, "omega", (TWO_PI * 1.3, TWO_PI * 1.6),
                               floquet_stride=10**9, detect=False)
        # correct the backward branch at three parameter values of the
        # forward one and compare profiles
        from hkbdelay.model import with_param
        grid = np.arange(256) / 256
        for pt in fwd.points[2:-2:4]:
            near = back.orbit_near(pt.param)
            corrected = newton_correct(
                near.orbit.with_updates(params=with_param(near.orbit.params,
                                                          "omega", pt.param)),
                with_param(near.orbit.params, "omega", pt.param))
            assert abs(corrected.period - pt.period) < 1e-6 * pt.period
            assert orbit_distance(corrected.evaluate(grid), pt.orbit) < 1e-6

    def test_trivial_multiplier_health_along_branch(self, antiphase_paper_units):
        _, ap = antiphase_paper_units
        br = continue_branch(ap, "omega", (TWO_PI * 1.25, TWO_PI * 1.35))
        for pt in br.points:
            assert pt.floquet.trivial_error < 1e-4


class TestBranchFromHopfScaling:
    def test_amplitude_scales_as_sqrt_of_offset(self):
        # generic Hopf: amplitude ~ sqrt(|a - a_H|); fit over the first
        # continuation points
        p = ModelParams.symmetric_coupling(a=-0.3205, b=0.2, tau=0.0)
        h = hopf_point_correct(p, "a", omega0=p.omega)
        orb = branch_from_hopf(h, eps=1e-3, free_param="a")
        a_H = -p.gamma / 2
        br = continue_branch(orb, "a", (a_H - 0.05, a_H + 0.05), ds0=0.02,
                             floquet_stride=10**9, detect=False, max_points=12)
        offs, amps = [], []
        for pt in br.points:
            off = abs(pt.param - a_H)
            if off > 1e-8 and pt.amplitude > 0:
                offs.append(off)
                amps.append(pt.amplitude)
        assert len(offs) >= 6
        slope = np.polyfit(np.log(offs), np.log(amps), 1)[0]
        assert abs(slope - 0.5) < 0.1


class TestClassifyFamily:
    def test_provenance_label_inherited(self):
        p = ModelParams.symmetric_coupling(a=-0.3205, b=0.2, tau=0.0)
        h = hopf_point_correct(p, "a", omega0=p.omega)
        orb = branch_from_hopf(h, eps=1e-3, free_param="a")
        assert classify_family(orb) == "AntiPhaseFamily"

    def test_symmetry_residual_classification(self, antiphase_orbit_tau0,
                                              inphase_orbit_tau0):
        _, _, ap = antiphase_orbit_tau0
        _, _, ip = inphase_orbit_tau0
        assert classify_family(ap.with_updates(label="Other")) == "AntiPhaseFamily"
        assert classify_family(ip.with_updates(label="Other")) == "InPhaseFamily"

    def test_detuned_orbit_classified_by_homotopy(self, inphase_orbit_tau0):
        _, _, ip = inphase_orbit_tau0
        br = continue_branch(ip, "delta", (-0.06, 0.06), floquet_stride=10**9,
                             detect=False)
        pt = br.orbit_near(-0.05)
        assert abs(pt.param + 0.05) < 0.02
        detuned = pt.orbit.with_updates(label="Other")
        assert detuned.params.delta != 0.0
        assert classify_family(detuned) == "InPhaseFamily"


class TestIsolaHunt:
    def test_empty_grid_gives_nothing(self):
        assert isola_hunt([], "a", (-1.0, 1.0)) == []

    def test_known_attractor_not_duplicated(self, inphase_orbit_tau0):
        _, _, ip = inphase_orbit_tau0
        known = Branch(free="a", points=[], family="InPhaseFamily")
        from hkbdelay.branch import BranchPoint
        known.points.append(BranchPoint(param=-0.2, orbit=ip, floquet=None,
                                        amplitude=amplitude(ip),
                                        period=ip.period))
        seeds = [np.array([0.3, 0.3, 0.0, 0.0])]
        out = isola_hunt([P_COUPLED], "a", (-0.5, 0.1), seeds=seeds,
                         known_branches=[known], t_transient=300.0,
                         t_max=900.0, step=0.01)
        assert out == []

    def test_new_attractor_found_and_continued(self):
        seeds = [np.array([0.3, 0.3, 0.0, 0.0])]
        out = isola_hunt([P_COUPLED], "a", (-0.25, -0.15), seeds=seeds,
                         t_transient=300.0, t_max=900.0, step=0.01,
                         floquet_stride=10**9, max_points=8)
        assert len(out) == 1
        br = out[0]
        assert br.family == "InPhaseFamily"
        assert br.provenance == "isola"
        assert len(br.points) >= 3


class TestExports:
    def test_csv_and_json_and_svg(self, antiphase_paper_units, tmp_path):
        _, ap = antiphase_paper_units
        br = continue_branch(ap, "omega", (TWO_PI * 1.28, TWO_PI * 1.34))
        csv_path = tmp_path / "branch.csv"
        branch_to_csv(br, csv_path)
        lines = csv_path.read_text().strip().split("\n")
        assert lines[0] == "param,amplitude,period,stability,family"
        assert len(lines) == 1 + len(br.points)
        assert lines[1].endswith("AntiPhaseFamily")

        doc = branch_to_json_text(br)
        import json
        parsed = json.loads(doc)
        assert parsed["format"] == "hkbdelay-branch/1"
        assert len(parsed["points"]) == len(br.points)

        svg = tmp_path / "branch.svg"
        plot_branches([br], svg, xlabel="omega")
        head = svg.read_text()[:200]
        assert "<svg" in head or "svg" in head
