import numpy as np
import pytest

from hkbdelay.phase import (
    DegenerateSignalError, HarmonicOverflowError, MultipleMaximaError,
    marker_phase_oracle, proto_phase, relative_phase, uniform_phase,
)

N = 1024
T_GRID = np.arange(N) / N  # one exact period, endpoint exclusive


class SignalOrbit:
    """Synthetic orbit defined by closed-form component functions of scaled
    time; exposes the profile-evaluation protocol the phase module uses."""

    def __init__(self, x1, x2, y1=None, y2=None, period=1.0):
        self.period = period
        self.fns = [x1, x2,
                    y1 if y1 is not None else (lambda s: np.zeros_like(s) + 1.0),
                    y2 if y2 is not None else (lambda s: np.zeros_like(s) + 1.0)]

    def evaluate(self, s, deriv=0):
        s = np.atleast_1d(np.mod(np.asarray(s, dtype=float), 1.0))
        return np.stack([fn(s) for fn in self.fns], axis=-1)


def two_harmonic(s, phase=0.0):
    base = 2 * np.pi * s + phase
    return np.cos(base) + 0.2 * np.cos(3 * base)


def two_harmonic_analytic_angle(s, phase=0.0):
    # analytic signal of cos(k t) is exp(i k t): direct construction
    base = 2 * np.pi * s + phase
    z = np.exp(1j * base) + 0.2 * np.exp(3j * base)
    return np.unwrap(np.angle(z))


class TestProtoPhase:
    def test_pure_cosine_gives_linear_angle(self):
        th = proto_phase(np.cos(2 * np.pi * T_GRID))
        lin = th[0] + 2 * np.pi * T_GRID
        assert np.max(np.abs(th - lin)) < 1e-6

    def test_two_harmonic_matches_direct_analytic_signal(self):
        th = proto_phase(two_harmonic(T_GRID))
        oracle = two_harmonic_analytic_angle(T_GRID)
        assert np.max(np.abs(th - oracle)) < 1e-8
        gained = th[-1] - th[0] + (th[-1] - th[-2])
        assert gained == pytest.approx(2 * np.pi, abs=1e-6)

    def test_periodic_orbit_observable_gains_two_pi(self, inphase_orbit_tau0):
        # over two concatenated exact periods the unwrapped angle advances by
        # exactly 2*pi per period
        _, _, full = inphase_orbit_tau0
        x1 = full.evaluate(T_GRID)[:, 0]
        th = proto_phase(np.tile(x1, 2))
        assert th[N] - th[0] == pytest.approx(2 * np.pi, abs=1e-8)

    def test_degenerate_signal_rejected(self):
        with pytest.raises(DegenerateSignalError):
            proto_phase(np.full(N, 0.3) + 1e-15 * np.sin(2 * np.pi * T_GRID))

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            proto_phase(np.cos(2 * np.pi * np.arange(100) / 100))


class TestUniformPhase:
    def test_identity_on_linear_protophase(self):
        th = -0.7 + 2 * np.pi * T_GRID
        phi = uniform_phase(th)
        assert np.max(np.abs(phi - th)) < 1e-10

    def test_two_harmonic_becomes_linear(self):
        th = proto_phase(two_harmonic(T_GRID))
        phi = uniform_phase(th)
        lin = phi[0] + 2 * np.pi * T_GRID
        assert np.max(np.abs(phi - lin)) < 1e-3

    def test_orbit_nonuniformity_decreases_with_harmonics(self, inphase_orbit_tau0):
        _, _, full = inphase_orbit_tau0
        x1 = full.evaluate(T_GRID)[:, 0]
        th = proto_phase(x1)
        resid = []
        for nh in (4, 8, 16, 24):
            phi = uniform_phase(th, n_harmonics=nh)
            lin = phi[0] + 2 * np.pi * T_GRID
            resid.append(np.max(np.abs(phi - lin)))
        # monotone decrease down to the finite-sampling floor
        assert all(b <= a * 1.05 + 1e-9 for a, b in zip(resid, resid[1:]))
        assert resid[-1] < 0.01 * resid[0]

    def test_harmonic_overflow(self):
        with pytest.raises(HarmonicOverflowError):
            uniform_phase(2 * np.pi * T_GRID[:400], n_harmonics=200)


class TestRelativePhase:
    def test_identical_signals_in_phase(self, inphase_orbit_tau0):
        _, _, full = inphase_orbit_tau0
        prof = relative_phase(full)
        assert min(prof.phi_rel, 360 - prof.phi_rel) < 0.5

    def test_antiphase_orbit_is_180(self, antiphase_orbit_tau0):
        _, _, full = antiphase_orbit_tau0
        prof = relative_phase(full)
        assert abs(prof.phi_rel - 180.0) < 0.5
        assert abs(prof.complement - (360.0 - prof.phi_rel) % 360.0) < 1e-12

    def test_shift_and_scale_invariance(self):
        x1 = lambda s: two_harmonic(s)
        x2 = lambda s: np.cos(2 * np.pi * s - 1.1) + 0.1 * np.cos(4 * np.pi * s)
        base = relative_phase(SignalOrbit(x1, x2))
        mod = relative_phase(SignalOrbit(lambda s: 2.7 * x1(s) + 0.4,
                                         lambda s: 0.3 * x2(s) - 1.9))
        d = abs(base.phi_rel - mod.phi_rel)
        assert min(d, 360 - d) < 0.1

    def test_swap_antisymmetry(self):
        x1 = lambda s: two_harmonic(s)
        x2 = lambda s: np.cos(2 * np.pi * s - 1.1) + 0.1 * np.cos(4 * np.pi * s)
        fwd = relative_phase(SignalOrbit(x1, x2))
        rev = relative_phase(SignalOrbit(x2, x1))
        assert abs(((fwd.phi_rel + rev.phi_rel) % 360.0)) < 1e-6 or \
            abs(((fwd.phi_rel + rev.phi_rel) % 360.0) - 360.0) < 1e-6

    def test_two_period_consistency(self):
        x1 = lambda s: two_harmonic(s, 0.2)
        x2 = lambda s: np.cos(2 * np.pi * s - 2.0)
        one = relative_phase(SignalOrbit(x1, x2))

        class TwoPeriod(SignalOrbit):
            def evaluate(self, s, deriv=0):
                return super().evaluate(2.0 * np.atleast_1d(s), deriv)

        two = relative_phase(TwoPeriod(x1, x2))
        d = abs(one.phi_rel - two.phi_rel)
        assert min(d, 360 - d) < 0.1

    def test_sampling_convergence(self, antiphase_orbit_tau0):
        _, _, full = antiphase_orbit_tau0
        a = relative_phase(full, n_samples=1024)
        b = relative_phase(full, n_samples=2048)
        d = abs(a.phi_rel - b.phi_rel)
        assert min(d, 360 - d) < 0.05


class TestMarkerOracle:
    def test_antiphase_marker_is_180(self, antiphase_orbit_tau0):
        _, _, full = antiphase_orbit_tau0
        assert abs(marker_phase_oracle(full) - 180.0) < 0.1

    def test_marker_agrees_with_hilbert_for_near_sinusoidal(self):
        delta = 0.23
        x1 = lambda s: np.cos(2 * np.pi * s)
        x2 = lambda s: np.cos(2 * np.pi * s - delta)
        orbit = SignalOrbit(x1, x2)
        marker = marker_phase_oracle(orbit)
        hilbert = relative_phase(orbit).phi_rel
        d = abs(marker - hilbert)
        assert min(d, 360 - d) < 3.0
        expect = np.degrees(delta)
        dd = abs(hilbert - expect)
        assert min(dd, 360 - dd) < 0.5

    def test_multi_loop_orbit_rejected(self):
        x1 = lambda s: np.cos(2 * np.pi * s) + 0.9 * np.cos(4 * np.pi * s)
        x2 = lambda s: np.cos(2 * np.pi * s - 0.5)
        with pytest.raises(MultipleMaximaError):
            marker_phase_oracle(SignalOrbit(x1, x2))
