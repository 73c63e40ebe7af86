import numpy as np
import pytest

from specscan.core import Camera, parallel_rig, swir_grid, vnir_grid
from specscan.forward import GaussianField, IlluminantModel, SensorModel
from specscan.models import ScanGeometry, default_illuminant, default_sensor, truth_fields


@pytest.fixture(scope="session")
def rig():
    return parallel_rig(32, 32, focal_px=100.0, baseline_m=0.02)


@pytest.fixture(scope="session")
def geometry():
    return ScanGeometry()


@pytest.fixture(scope="session")
def grids():
    return {Camera.VNIR: vnir_grid(), Camera.SWIR: swir_grid()}


@pytest.fixture(scope="session")
def fields(rig, geometry, grids):
    return truth_fields(rig, geometry, grids)


@pytest.fixture(scope="session")
def illum():
    return default_illuminant()


@pytest.fixture(scope="session")
def sensor():
    return default_sensor()


@pytest.fixture(scope="session")
def ideal_illum():
    return IlluminantModel.ideal()


@pytest.fixture(scope="session")
def ideal_sensor():
    return SensorModel.ideal()


def flat_field(mu0=0.0, sigma0=1.0, lams=(500.0, 900.0), mu_slope=1.0):
    """A tiny field, constant over x/y/Z, linear in wavelength."""
    lams = np.asarray(lams, dtype=np.float64)
    mu = mu0 + mu_slope * (lams - lams[0]) / max(lams[-1] - lams[0], 1.0)
    shape = (1, 1, 1, lams.size)
    return GaussianField(
        xs=np.array([0.0]),
        ys=np.array([0.0]),
        zs=np.array([1.0]),
        lams=lams,
        mu=mu.reshape(shape),
        sigma=np.full(shape, sigma0),
    )


@pytest.fixture()
def unit_field():
    return flat_field()
