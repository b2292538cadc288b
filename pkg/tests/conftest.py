import os
import pickle

import pytest

from vhjlab.calibration import CalibrationConstants, PilotWindow, calibrate
from vhjlab.core import Params
from vhjlab.grid import make_grid

CACHE_ENV = "VHJLAB_CALIBRATION_CACHE"


@pytest.fixture(scope="session")
def params3():
    return Params(p=3.0)


@pytest.fixture(scope="session")
def grid4097():
    return make_grid(4097)


@pytest.fixture(scope="session")
def synthetic_calibration():
    """Structurally valid constants for plan-logic tests (no pilot runs)."""
    plain = PilotWindow(
        c1=0.136, c2=0.436, C0=0.106, c_rec=0.878, c_gbu=0.0288,
        K=1.58, K1=2.404, amplitude=2.404,
    )
    linked = PilotWindow(
        c1=0.149, c2=0.496, C0=0.106, c_rec=4.22, c_gbu=0.0078,
        K=2.59, K1=3.944, amplitude=3.944,
    )
    return CalibrationConstants(
        plain=plain, linked=linked, a1=0.10, a2=0.22, eps_ref=0.1, L=2.0,
        scaling_check=0.25,
    )


@pytest.fixture(scope="session")
def calibration(params3, grid4097):
    """Real pilot calibration; cached across sessions via the env var."""
    cache = os.environ.get(CACHE_ENV, "")
    if cache and os.path.exists(cache):
        with open(cache, "rb") as f:
            return pickle.load(f)
    cal = calibrate(params3, grid=grid4097)
    if cache:
        with open(cache, "wb") as f:
            pickle.dump(cal, f)
    return cal
