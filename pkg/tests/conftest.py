import numpy as np
import pytest

from hkbdelay.model import ModelParams, SubspaceMode
from hkbdelay.ddesim import settle_to_orbit
from hkbdelay.colloc import embed_reduced, fit_from_samples, newton_correct

P_COUPLED = ModelParams.symmetric_coupling(a=-0.2, b=0.2, tau=0.0)


def settle_and_correct(p, mode, t_transient=300.0, t_max=900.0, step=0.005,
                       tol=1e-10, mesh_n=40):
    """Reduced-system settle, collocation fit, embed, full correction."""
    est = settle_to_orbit(p, np.array([0.1, 0.0]), t_transient=t_transient,
                          t_max=t_max, tol=tol, step=step, system=mode)
    red = newton_correct(fit_from_samples(est, mesh_n=mesh_n), p)
    full = newton_correct(embed_reduced(red), p)
    return est, red, full


@pytest.fixture(scope="session")
def inphase_orbit_tau0():
    return settle_and_correct(P_COUPLED, SubspaceMode.IN_PHASE)


@pytest.fixture(scope="session")
def antiphase_orbit_tau0():
    return settle_and_correct(P_COUPLED, SubspaceMode.ANTI_PHASE)
