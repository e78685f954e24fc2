"""Shared fixtures for the spadsim test suite."""

import pytest

from spadsim.schemas import AdcConfig, CompensatorConfig, DeviceProfile, Illumination, Scenario


def make_scenario(n_gates: int = 4000, seed: int = 7, **overrides) -> Scenario:
    """Scenario built from a device override dict plus scenario-level overrides."""
    device = overrides.pop("device", {})
    devices = overrides.pop("devices", None)
    if devices is None:
        devices = (DeviceProfile(**device),)
    return Scenario(n_gates=n_gates, seed=seed, devices=devices, **overrides)


@pytest.fixture
def quiet_scenario() -> Scenario:
    """No light, no dark counts, no noise: frames are pure feedthrough."""
    return make_scenario(
        n_gates=600,
        device={"efficiency_eta": 0.0, "dark_prob_per_gate": 0.0},
        illumination=Illumination(kind="all_dark"),
        noise_sigma_v=0.0,
    )


@pytest.fixture
def event_scenario() -> Scenario:
    """Alternating light with photon, dark and afterpulse events plus noise."""
    return make_scenario(
        n_gates=3000,
        device={"efficiency_eta": 0.3, "dark_prob_per_gate": 0.02, "afterpulse_prob": 0.05},
    )


@pytest.fixture
def compensator_config() -> CompensatorConfig:
    return CompensatorConfig(window_n=32, v_th=0.008)


@pytest.fixture
def fine_adc() -> AdcConfig:
    return AdcConfig(bits=16, full_scale_v=0.2, offset_v=-0.05)
