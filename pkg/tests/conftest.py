import numpy as np
import pytest

from sglidar.geometry import SensorSpec


@pytest.fixture
def toy_sensor() -> SensorSpec:
    return SensorSpec(
        width=256, height=32, fov_up_deg=3.0, fov_down_deg=-25.0,
        r_min=1.0, r_max=50.0, mount_height=1.8,
    )


@pytest.fixture
def small_sensor() -> SensorSpec:
    """Tiny grid for fast model-in-the-loop tests."""
    return SensorSpec(
        width=64, height=16, fov_up_deg=3.0, fov_down_deg=-25.0,
        r_min=1.0, r_max=50.0, mount_height=1.8,
    )


def random_cloud(rng: np.random.Generator, n: int, sensor: SensorSpec) -> np.ndarray:
    """Points spread over the sensor's FOV and range gate."""
    r = rng.uniform(sensor.r_min * 1.2, sensor.r_max * 0.95, n)
    theta = rng.uniform(-np.pi, np.pi, n)
    phi = rng.uniform(sensor.phi_min, sensor.phi_max, n)
    return np.stack(
        [
            r * np.cos(phi) * np.cos(theta),
            r * np.cos(phi) * np.sin(theta),
            r * np.sin(phi),
        ],
        axis=1,
    )
