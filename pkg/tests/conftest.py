import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from goyld.noise import CoefficientFamily, CovarianceQ, MarkSpace
from goyld.shell_core import ModelParams, ShellGrid

settings.register_profile("goyld", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("goyld")


def scalar_setup(nu=1e-9, u0=1.0, sigma=0.0, jump=0.0, lam=1.0, q1=1.0):
    """Three shells, nonlinearity off, noise on shell 1 only."""
    grid = ShellGrid(1.0, 3)
    params = ModelParams(nu, grid, u0=np.array([u0, 0, 0], complex), nonlinear=False)
    q = CovarianceQ([q1, 0.0, 0.0])
    marks = MarkSpace(["z"], [lam])
    fam = CoefficientFamily("additive", np.r_[sigma, 0.0, 0.0], [[jump, 0, 0]], q, marks)
    return params, fam, marks, q


def goy8(kind="additive", nu=0.05, scale=0.5):
    grid = ShellGrid(1.0, 8)
    u0 = np.zeros(8, complex)
    u0[:3] = [0.8, 0.4j, 0.2]
    f = np.zeros(8, complex)
    f[0] = 0.5
    params = ModelParams(nu, grid, u0=u0, forcing=f)
    q = CovarianceQ(np.r_[1.0, 0.5, np.zeros(6)])
    marks = MarkSpace(["a", "b"], [1.0, 0.5])
    c = np.zeros((2, 8), complex)
    c[0, 0] = scale
    c[1, 1] = 1j * scale
    fam = CoefficientFamily(kind, np.r_[scale, scale, np.zeros(6)], c, q, marks)
    return params, fam, marks, q


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
