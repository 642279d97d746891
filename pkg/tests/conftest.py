import numpy as np
import pytest

from fptmc import FirmSpec, JumpLaw, MarketModel, Threshold, sigma_rows_from_corr

# Production two-firm configuration used across the suite: an A-rated and a
# Ba-rated firm with diffusion correlation 0.4 and one shared shock.
A_PARAMS = dict(sigma=0.09, lam=0.1, mu_z=-0.2, sigma_z=0.5)
BA_PARAMS = dict(sigma=0.1587, lam=0.1, mu_z=-0.5515, sigma_z=1.6412)
RHO = 0.4


def make_single_firm(sigma=0.09, lam=0.1, mu_z=-0.2, sigma_z=0.5, horizon=10.0, name="A"):
    firm = FirmSpec(
        mu=-0.001,
        sigma_row=(sigma,),
        jump_laws=(JumpLaw(mu_z, sigma_z),),
        threshold=Threshold(kappa=1.0, gamma=-0.001),
        x0=2.0,
        name=name,
    )
    return MarketModel(firms=(firm,), shock_intensities=(lam,), horizon=horizon)


def make_two_firm(rho=RHO, horizon=10.0, bridge_rho=RHO):
    rows = sigma_rows_from_corr(A_PARAMS["sigma"], BA_PARAMS["sigma"], rho)
    fa = FirmSpec(
        mu=-0.001,
        sigma_row=rows[0],
        jump_laws=(JumpLaw(A_PARAMS["mu_z"], A_PARAMS["sigma_z"]),),
        threshold=Threshold(kappa=1.0, gamma=-0.001),
        x0=2.0,
        name="A",
    )
    fb = FirmSpec(
        mu=-0.001,
        sigma_row=rows[1],
        jump_laws=(JumpLaw(BA_PARAMS["mu_z"], BA_PARAMS["sigma_z"]),),
        threshold=Threshold(kappa=1.0, gamma=-0.001),
        x0=2.0,
        name="Ba",
    )
    return MarketModel(
        firms=(fa, fb),
        shock_intensities=(A_PARAMS["lam"],),
        horizon=horizon,
        bridge_correlations=((1.0, bridge_rho), (bridge_rho, 1.0)),
    )


def make_driftless_diffusion(sigma=1.0, horizon=10.0, start_distance=2.0):
    """Pure diffusion firm whose boundary moves parallel to the drift."""
    firm = FirmSpec(
        mu=-0.001,
        sigma_row=(sigma,),
        jump_laws=(),
        threshold=Threshold(kappa=1.0, gamma=-0.001),
        x0=start_distance,
        name="D",
    )
    return MarketModel(firms=(firm,), shock_intensities=(), horizon=horizon)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
