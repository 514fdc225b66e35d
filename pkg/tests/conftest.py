import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the oracles module

from armpose import CameraIntrinsics, load_bundled_model


@pytest.fixture(scope="session")
def model():
    return load_bundled_model()


@pytest.fixture(scope="session")
def intr():
    return CameraIntrinsics(fx=320.0, fy=320.0, cx=128.0, cy=128.0, width=256, height=256)


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.Philox(key=np.array([1234, 0], dtype=np.uint64)))


@pytest.fixture(scope="session")
def grid_reach():
    from armpose import bundled_model_path
    from oracles import max_horizontal_reach_oracle

    return max_horizontal_reach_oracle(bundled_model_path(), step_deg=1.0)
