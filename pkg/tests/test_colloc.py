import numpy as np
import pytest

from hkbdelay.model import ModelParams, SubspaceMode
from hkbdelay.ddesim import orbit_distance, settle_to_orbit
from hkbdelay.colloc import (
    InsufficientSamplesError, OrbitCorrector, OrbitProfile, PiecewiseBasis,
    amplitude, branch_from_hopf, embed_reduced, fit_from_samples, floquet,
    newton_correct, orbit_asymmetry, orbit_from_json, orbit_to_json,
    resample_orbit, restrict_to_subspace,
)
from hkbdelay.spectrum import hopf_point_correct

RNG = np.random.default_rng(11)

P_COUPLED = ModelParams.symmetric_coupling(a=-0.2, b=0.2, tau=0.0)
P_DELAYED = ModelParams.symmetric_coupling(a=-0.2, b=0.2, tau=0.14)


class TestBasis:
    def test_lagrange_partition_of_unity(self):
        basis = PiecewiseBasis(np.linspace(0, 1, 7), 4)
        s = RNG.uniform(0, 1, 50)
        E = basis.eval_matrix(s)
        np.testing.assert_allclose(E.sum(axis=1), 1.0, atol=1e-12)

    def test_reproduces_piecewise_cubic_exactly(self):
        basis = PiecewiseBasis(np.linspace(0, 1, 5), 3)
        f = lambda s: 2.0 - s + 3 * s**2 - 0.5 * s**3
        df = lambda s: -1.0 + 6 * s - 1.5 * s**2
        vals = f(basis.nodes)[:, None]
        s = RNG.uniform(0, 1, 40)
        np.testing.assert_allclose(basis.eval_matrix(s) @ vals, f(s)[:, None],
                                   atol=1e-12)
        np.testing.assert_allclose(basis.eval_matrix(s, deriv=1) @ vals,
                                   df(s)[:, None], atol=1e-11)


class TestJacobianConsistency:
    def test_collocation_jacobian_matches_finite_differences(self):
        # small mesh so the FD sweep stays cheap
        p = ModelParams.symmetric_coupling(a=-0.3, b=0.5, tau=0.3)
        mesh = np.linspace(0, 1, 5)
        corr = OrbitCorrector("full", mesh, 3)
        basis = corr.basis
        U = 0.3 * RNG.standard_normal((basis.n_points, 4))
        U[-1] = U[0]
        T = 4.5
        ref = OrbitProfile(mesh=mesh, degree=3,
                           values=0.2 * RNG.standard_normal((basis.n_points, 4)),
                           period=T, params=p)
        anchor = corr.anchor(ref)
        R0, J = corr.residual_and_jacobian(p, U, T, anchor)

        h = 1e-7
        for trial in range(25):
            j = RNG.integers(0, corr.n_unknowns)
            Up, Tp = U.copy(), T
            Um, Tm = U.copy(), T
            if j == corr.n_unknowns - 1:
                Tp, Tm = T + h, T - h
            else:
                Up.flat[j] += h
                Um.flat[j] -= h
            Rp = corr.residual(p, Up, Tp, anchor)
            Rm = corr.residual(p, Um, Tm, anchor)
            fd = (Rp - Rm) / (2 * h)
            scale = max(1.0, np.max(np.abs(fd)))
            np.testing.assert_allclose(J[:, j], fd, rtol=0, atol=2e-6 * scale)


class TestNewtonCorrect:
    def test_reproduces_simulation_period_and_profile(self, inphase_orbit_tau0):
        est, red, full = inphase_orbit_tau0
        assert abs(full.period - est.period) / est.period < 1e-6
        dist = orbit_distance(est.samples, red)
        assert dist < 1e-5

    def test_exact_solution_is_fixed_point(self, inphase_orbit_tau0):
        _, _, full = inphase_orbit_tau0
        out, stats = newton_correct(full, P_COUPLED, return_stats=True)
        assert stats["iterations"] <= 2
        assert abs(out.period - full.period) < 1e-9
        assert np.max(np.abs(out.values - full.values)) < 1e-8

    def test_inphase_orbit_stays_symmetric_and_matches_reduced(self, inphase_orbit_tau0):
        _, red, full = inphase_orbit_tau0
        asym = orbit_asymmetry(full)
        assert asym["inphase"] < 1e-8
        # independently computed reduced orbit, embedded, phase-aligned
        grid = np.arange(512) / 512
        dist = orbit_distance(full.evaluate(grid), embed_reduced(red))
        assert dist < 1e-6
        assert abs(full.period - red.period) / red.period < 1e-9

    def test_wrapped_delay_periodicity_identity(self, inphase_orbit_tau0):
        _, _, full = inphase_orbit_tau0
        s = RNG.uniform(0, 1, 16)
        np.testing.assert_allclose(full.evaluate(s), full.evaluate(s + 1.0),
                                   rtol=0, atol=1e-12)

    def test_mesh_doubling_changes_little(self):
        # production-regime orbit (fast oscillation, T ~ 0.77)
        p = ModelParams.symmetric_coupling(a=-0.2, b=0.2, tau=0.14,
                                           omega=2 * np.pi * 1.3)
        est = settle_to_orbit(p, np.array([0.1, 0.0]), t_transient=60.0,
                              t_max=240.0, tol=1e-10, step=0.002,
                              system=SubspaceMode.IN_PHASE)
        full = newton_correct(embed_reduced(
            newton_correct(fit_from_samples(est), p)), p)
        refined = newton_correct(resample_orbit(full, 2 * full.basis.n_intervals),
                                 p, reference=full)
        assert abs(refined.period - full.period) / full.period < 1e-8
        grid = np.arange(512) / 512
        assert orbit_distance(full.evaluate(grid), refined) < 1e-7


class TestFloquet:
    def test_trivial_multiplier_on_every_converged_orbit(self, inphase_orbit_tau0,
                                                         antiphase_orbit_tau0):
        for fix in (inphase_orbit_tau0, antiphase_orbit_tau0):
            _, _, full = fix
            spec = floquet(full, full.params)
            assert spec.trivial_error < 1e-6

    def test_coupled_inphase_orbit_is_stable(self, inphase_orbit_tau0):
        _, _, full = inphase_orbit_tau0
        spec = floquet(full, P_COUPLED)
        assert spec.stable
        assert spec.max_nontrivial_modulus() < 1.0

    def test_antiphase_orbit_unstable_without_delay(self, antiphase_orbit_tau0):
        _, _, full = antiphase_orbit_tau0
        spec = floquet(full, P_COUPLED)
        assert not spec.stable
        real_unstable = [m for m in spec.nontrivial
                         if abs(m.imag) < 1e-6 and m.real > 1.0]
        assert len(real_unstable) >= 1

    def test_arnoldi_agrees_with_dense(self, inphase_orbit_tau0):
        _, _, full = inphase_orbit_tau0
        dense = floquet(full, P_COUPLED, dense_cutoff=10**9)
        arno = floquet(full, P_COUPLED, dense_cutoff=0)
        md = np.sort(np.abs(dense.multipliers))[::-1][:6]
        ma = np.sort(np.abs(arno.multipliers))[::-1][:6]
        np.testing.assert_allclose(md, ma, atol=1e-8)

    def test_delayed_orbit_floquet(self, inphase_orbit_tau0):
        _, red, _ = inphase_orbit_tau0
        est = settle_to_orbit(P_DELAYED, np.array([0.1, 0.0]), t_transient=300.0,
                              t_max=900.0, tol=1e-9, step=0.005,
                              system=SubspaceMode.IN_PHASE)
        redd = newton_correct(fit_from_samples(est), P_DELAYED)
        full = newton_correct(embed_reduced(redd), P_DELAYED)
        spec = floquet(full, P_DELAYED)
        assert spec.trivial_error < 1e-6
        assert spec.stable


class TestBranchFromHopf:
    def test_antiphase_hopf_seed(self):
        p = ModelParams.symmetric_coupling(a=-0.3205, b=0.2, tau=0.0)
        h = hopf_point_correct(p, "a", omega0=p.omega)
        assert h is not None
        eps = 1e-3
        orb = branch_from_hopf(h, eps=eps, free_param="a")
        assert orb.label == "AntiPhaseFamily"
        asym = orbit_asymmetry(orb)
        assert asym["antiphase"] < 10 * eps
        assert abs(orb.period - 2 * np.pi / h.omega) < 0.05 * orb.period
        # small amplitude of the seeded orbit, set by the pin
        assert 0.1 * eps < amplitude(orb) < 50 * eps

    def test_bad_hopf_point_rejected(self):
        from hkbdelay.colloc import HopfResidualTooLargeError
        from hkbdelay.spectrum import HopfPoint
        p = ModelParams.symmetric_coupling(a=-0.1, b=0.2, tau=0.0)
        fake = HopfPoint(params=p, omega=1.0, mode_hint=None)
        with pytest.raises(HopfResidualTooLargeError):
            branch_from_hopf(fake)


class TestFitFromSamples:
    def test_roundtrip_changes_profile_little(self, inphase_orbit_tau0):
        est, red, _ = inphase_orbit_tau0
        refit = newton_correct(fit_from_samples(est), P_COUPLED)
        grid = np.arange(512) / 512
        assert orbit_distance(refit.evaluate(grid), red) < 1e-4

    def test_exact_polynomial_reproduced(self):
        # periodic quartic lies exactly in the degree-4 piecewise space
        class Est:
            period = 2.0
            params = P_COUPLED
            system = "full"
            sample_times = np.arange(256) / 256 * 2.0
            s = sample_times / 2.0
            samples = np.stack([s**2 * (1 - s)**2, 16 * s**2 * (1 - s)**2,
                                np.full_like(s, 0.3), s * 0 - 1.0], axis=1)

        orb = fit_from_samples(Est(), mesh_n=8, degree=4)
        E = orb.basis.eval_matrix(np.mod(Est.s, 1.0))
        resid = np.max(np.abs(E @ orb.values - Est.samples))
        assert resid < 1e-12

    def test_refinement_reduces_projection_residual(self, inphase_orbit_tau0):
        est, _, _ = inphase_orbit_tau0
        res = []
        for n in (5, 10, 20):
            orb = fit_from_samples(est, mesh_n=n)
            E = orb.basis.eval_matrix(
                np.mod((est.sample_times - est.sample_times[0]) / est.period, 1.0))
            res.append(np.max(np.abs(E @ orb.values - est.samples)))
        assert res[0] > res[1] > res[2]

    def test_insufficient_samples(self, inphase_orbit_tau0):
        est, _, _ = inphase_orbit_tau0

        class Tiny:
            period = est.period
            params = est.params
            system = est.system
            sample_times = est.sample_times[:40]
            samples = est.samples[:40]

        with pytest.raises(InsufficientSamplesError):
            fit_from_samples(Tiny(), mesh_n=40, degree=4)


class TestAmplitude:
    def test_zero_profile(self):
        mesh = np.linspace(0, 1, 5)
        basis = PiecewiseBasis(mesh, 3)
        orb = OrbitProfile(mesh=mesh, degree=3,
                           values=np.zeros((basis.n_points, 4)), period=1.0,
                           params=P_COUPLED)
        assert amplitude(orb) == 0.0

    def test_equal_amplitudes_on_symmetric_orbits(self, inphase_orbit_tau0,
                                                  antiphase_orbit_tau0):
        for fix in (inphase_orbit_tau0, antiphase_orbit_tau0):
            _, _, full = fix
            assert abs(amplitude(full, 0) - amplitude(full, 1)) < 1e-8

    def test_matches_simulated_maximum(self, inphase_orbit_tau0):
        est, _, full = inphase_orbit_tau0
        assert abs(amplitude(full, 0) - np.max(np.abs(est.samples[:, 0]))) < 1e-4

    def test_interior_maximum_found(self):
        # profile nodes all below the true interior maximum
        mesh = np.linspace(0, 1, 2)
        basis = PiecewiseBasis(mesh, 4)
        s = basis.nodes
        vals = np.stack([np.sin(np.pi * s + 0.4), 0 * s], axis=1)
        orb = OrbitProfile(mesh=mesh, degree=4, values=vals, period=1.0,
                           params=P_COUPLED.replace(a1=0, a2=0, b1=0, b2=0),
                           system="inphase")
        assert amplitude(orb, 0) > np.max(np.abs(vals[:, 0])) - 1e-12


class TestOrbitIO:
    def test_json_roundtrip_bit_exact(self, inphase_orbit_tau0):
        _, _, full = inphase_orbit_tau0
        text = orbit_to_json(full)
        back = orbit_from_json(text)
        assert np.array_equal(back.values, full.values)
        assert np.array_equal(back.mesh, full.mesh)
        assert back.period == full.period
        assert back.params == full.params
        assert back.label == full.label and back.system == full.system
        assert orbit_to_json(back) == text

    def test_restrict_and_embed_are_inverse(self, inphase_orbit_tau0):
        _, _, full = inphase_orbit_tau0
        red = restrict_to_subspace(full, SubspaceMode.IN_PHASE)
        again = embed_reduced(red)
        np.testing.assert_allclose(again.values, full.values, atol=1e-8)
