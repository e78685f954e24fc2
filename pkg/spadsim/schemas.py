"""
Pydantic schemas for the spadsim toolkit.

This module defines the validated configuration types of every service
and the JSON run configuration consumed by the CLI. All schemas follow
Pydantic v2 conventions, are immutable, and reject unknown keys so that a
run is fully described by its document.
"""

import math
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
import orjson
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from spadsim.constants import (
    ADC_DEFAULTS,
    COMPENSATOR_DEFAULTS,
    DEFAULT_DELTA_T_K,
    DEFAULT_HARNESS,
    DEVICE_DEFAULTS,
    GATE_DEFAULTS,
    KEYRATE_DEFAULTS,
    RESPONSIVITY_BAND_A_PER_W,
    RF_DEFAULTS,
    TARGET_GAIN_RATIO,
    THERMAL_BUDGET_MW,
)
from spadsim.exceptions import ConfigError
from spadsim.utils.validation import check_positive, check_probability, validate_thresholds


class StrictModel(BaseModel):
    """Base for configuration models: frozen, unknown keys rejected."""

    model_config = ConfigDict(extra="forbid", frozen=True)


class GateConfig(StrictModel):
    """
    Gate drive of the APD.

    Attributes:
        repetition_hz: Gates per second.
        gate_amplitude: Gate pulse amplitude in volts.
        gate_width_s: Gate pulse width in seconds, shorter than one period.
        samples_per_gate: ADC samples per gate period.
        oversample: Rendering grid points per ADC sample.
    """

    repetition_hz: float = Field(default=GATE_DEFAULTS["repetition_hz"], gt=0)
    gate_amplitude: float = GATE_DEFAULTS["gate_amplitude"]
    gate_width_s: float = Field(default=GATE_DEFAULTS["gate_width_s"], gt=0)
    samples_per_gate: int = Field(default=GATE_DEFAULTS["samples_per_gate"], ge=4)
    oversample: int = Field(default=GATE_DEFAULTS["oversample"], ge=1, le=1024)

    @model_validator(mode="after")
    def _width_inside_period(self) -> "GateConfig":
        if self.gate_width_s >= self.period_s:
            raise ValueError(
                f"gate_width_s ({self.gate_width_s}) must be shorter than the period ({self.period_s})"
            )
        return self

    @property
    def period_s(self) -> float:
        return 1.0 / self.repetition_hz

    @property
    def sample_period_s(self) -> float:
        return self.period_s / self.samples_per_gate

    @property
    def fine_points(self) -> int:
        """Rendering grid points per gate period."""
        return self.samples_per_gate * self.oversample


class DeviceProfile(StrictModel):
    """
    Physical parameters of one APD channel.

    Attributes:
        responsivity_a_per_w: Stored responsivity (A/W).
        feedthrough_gain: Coupling of the gate edges into the output.
        coupling_tau_s: Time constant of the capacitive differentiator.
        transfer_poles: (frequency Hz, damping) of each two-pole low-pass section.
        variation_fraction: Magnitude of per-instance parameter perturbation.
        avalanche_amp_mean_v: Mean avalanche amplitude in volts.
        avalanche_amp_sigma_v: Avalanche amplitude spread in volts.
        avalanche_decay_s: Exponential decay of the avalanche pulse.
        efficiency_eta: Avalanche probability given a photon in the gate.
        dark_prob_per_gate: Dark avalanche probability per gate.
        afterpulse_prob: Afterpulse probability per prior avalanche.
        afterpulse_tau_s: Trap release time constant.
        crosstalk_chi: Fraction of the partner channel's avalanche waveform injected here.
    """

    responsivity_a_per_w: float = DEVICE_DEFAULTS["responsivity_a_per_w"]
    feedthrough_gain: float = Field(default=DEVICE_DEFAULTS["feedthrough_gain"], ge=0)
    coupling_tau_s: float = Field(default=DEVICE_DEFAULTS["coupling_tau_s"], gt=0)
    transfer_poles: Tuple[Tuple[float, float], ...] = tuple(DEVICE_DEFAULTS["transfer_poles"])
    variation_fraction: float = Field(default=DEVICE_DEFAULTS["variation_fraction"], ge=0, lt=1)
    avalanche_amp_mean_v: float = Field(default=DEVICE_DEFAULTS["avalanche_amp_mean_v"], ge=0)
    avalanche_amp_sigma_v: float = Field(default=DEVICE_DEFAULTS["avalanche_amp_sigma_v"], ge=0)
    avalanche_decay_s: float = DEVICE_DEFAULTS["avalanche_decay_s"]
    efficiency_eta: float = DEVICE_DEFAULTS["efficiency_eta"]
    dark_prob_per_gate: float = DEVICE_DEFAULTS["dark_prob_per_gate"]
    afterpulse_prob: float = DEVICE_DEFAULTS["afterpulse_prob"]
    afterpulse_tau_s: float = DEVICE_DEFAULTS["afterpulse_tau_s"]
    crosstalk_chi: float = DEVICE_DEFAULTS["crosstalk_chi"]

    @field_validator("efficiency_eta", "dark_prob_per_gate", "afterpulse_prob", "crosstalk_chi")
    @classmethod
    def _probability(cls, value: float, info) -> float:
        return check_probability(value, info.field_name)

    @field_validator("avalanche_decay_s", "afterpulse_tau_s")
    @classmethod
    def _positive_time(cls, value: float, info) -> float:
        return check_positive(value, info.field_name)

    @field_validator("responsivity_a_per_w")
    @classmethod
    def _responsivity_band(cls, value: float) -> float:
        low, high = RESPONSIVITY_BAND_A_PER_W
        if not low <= value <= high:
            raise ValueError(f"responsivity {value} A/W outside plausible band [{low}, {high}]")
        return value

    @field_validator("transfer_poles")
    @classmethod
    def _poles(cls, poles: Tuple[Tuple[float, float], ...]) -> Tuple[Tuple[float, float], ...]:
        for frequency, damping in poles:
            check_positive(frequency, "pole frequency")
            check_positive(damping, "pole damping")
        return poles


class AdcConfig(StrictModel):
    """
    ADC model: round-to-nearest codes over [offset_v, offset_v + full_scale_v].

    Attributes:
        bits: Resolution.
        full_scale_v: Input span in volts.
        offset_v: Voltage mapped to code 0.
    """

    bits: int = Field(default=ADC_DEFAULTS["bits"], ge=2, le=16)
    full_scale_v: float = Field(default=ADC_DEFAULTS["full_scale_v"], gt=0)
    offset_v: float = ADC_DEFAULTS["offset_v"]

    @property
    def max_code(self) -> int:
        return (1 << self.bits) - 1

    @property
    def lsb_v(self) -> float:
        return self.full_scale_v / self.max_code


class Illumination(StrictModel):
    """
    Per-gate light pattern.

    ``alternating`` lights even gates with exactly one photon; ``poisson``
    lights even gates with a coherent pulse of mean ``mu_gate`` photons.
    """

    kind: Literal["all_lit", "all_dark", "alternating", "poisson"] = "alternating"
    mu_gate: float = Field(default=0.1, ge=0)

    def lit_mask(self, start_gate: int, stop_gate: int) -> np.ndarray:
        """Boolean mask of source-lit gates in [start_gate, stop_gate)."""
        n = stop_gate - start_gate
        if self.kind == "all_lit":
            return np.ones(n, dtype=bool)
        if self.kind == "all_dark":
            return np.zeros(n, dtype=bool)
        return (np.arange(start_gate, stop_gate) % 2) == 0


class Scenario(StrictModel):
    """
    Complete description of one simulated experiment.

    Attributes:
        gate: Gate drive.
        devices: One or two APD channels.
        adc: Sampling ADC.
        illumination: Light pattern.
        noise_sigma_v: Additive white noise per sample (volts).
        n_gates: Gates to simulate.
        seed: 64-bit seed of every random stream.
        onset_fraction: Avalanche onset position within the gate.
        onset_jitter_samples: Uniform integer onset jitter in samples.
        apply_variation: Perturb each device with its own derived seed.
    """

    gate: GateConfig = Field(default_factory=GateConfig)
    devices: Tuple[DeviceProfile, ...] = Field(default=(DeviceProfile(),), min_length=1, max_length=2)
    adc: AdcConfig = Field(default_factory=AdcConfig)
    illumination: Illumination = Field(default_factory=Illumination)
    noise_sigma_v: float = Field(default=1e-3, ge=0)
    n_gates: int = Field(default=100_000, ge=1)
    seed: int = Field(default=1, ge=0, lt=2**64)
    onset_fraction: float = Field(default=0.3, ge=0, lt=1)
    onset_jitter_samples: int = Field(default=0, ge=0)
    apply_variation: bool = False

    @model_validator(mode="after")
    def _onset_inside_gate(self) -> "Scenario":
        last = math.floor(self.onset_fraction * self.gate.samples_per_gate) + self.onset_jitter_samples
        if last >= self.gate.samples_per_gate:
            raise ValueError("onset_fraction plus onset_jitter_samples must stay inside the gate")
        return self

    @property
    def n_channels(self) -> int:
        return len(self.devices)


class CompensatorConfig(StrictModel):
    """
    Self-training compensator and discriminator settings.

    Attributes:
        window_n: Past accepted frames averaged into the template.
        warmup_gates: Gates whose decisions are withheld (defaults to window_n).
        guard_multiplier: Guard level in units of the estimated noise sigma.
        timing_window: (start, end) fractions of the gate searched for a peak.
        v_th: Discrimination level in volts.
    """

    window_n: int = Field(default=COMPENSATOR_DEFAULTS["window_n"], ge=1)
    warmup_gates: Optional[int] = Field(default=None, ge=0)
    guard_multiplier: float = Field(default=COMPENSATOR_DEFAULTS["guard_multiplier"], gt=0)
    timing_window: Tuple[float, float] = COMPENSATOR_DEFAULTS["timing_window"]
    v_th: float = Field(default=COMPENSATOR_DEFAULTS["v_th"], ge=0)

    @field_validator("timing_window")
    @classmethod
    def _ordered_window(cls, window: Tuple[float, float]) -> Tuple[float, float]:
        start, end = window
        if not 0.0 <= start < end <= 1.0:
            raise ValueError(f"timing_window must satisfy 0 <= start < end <= 1, got {window}")
        return window

    @property
    def warmup(self) -> int:
        return self.window_n if self.warmup_gates is None else self.warmup_gates

    def window_slice(self, samples_per_gate: int) -> slice:
        """Sample indices searched for the avalanche peak (never empty)."""
        start = int(math.floor(self.timing_window[0] * samples_per_gate))
        stop = int(math.ceil(self.timing_window[1] * samples_per_gate))
        return slice(start, max(stop, start + 1))


class GridSpec(StrictModel):
    """Linear or logarithmic grid of ``count`` points between ``min`` and ``max``."""

    min: float
    max: float
    count: int = Field(ge=1)
    scale: Literal["linear", "log"] = "linear"

    @model_validator(mode="after")
    def _ordered(self) -> "GridSpec":
        if self.count > 1 and self.max <= self.min:
            raise ValueError("grid max must exceed min")
        if self.scale == "log" and self.min <= 0:
            raise ValueError("log grid needs min > 0")
        return self

    def values(self) -> List[float]:
        if self.count == 1:
            return [self.min]
        if self.scale == "log":
            return np.geomspace(self.min, self.max, self.count).tolist()
        return np.linspace(self.min, self.max, self.count).tolist()


def _grid_values(spec: Union[List[float], GridSpec]) -> List[float]:
    return spec.values() if isinstance(spec, GridSpec) else list(spec)


class SweepSpec(StrictModel):
    """
    Threshold sweep definition, with an optional second detector for A/B comparison.

    Attributes:
        thresholds: Explicit V_th list or a grid spec.
        scenario_b: Second scenario compared at matched efficiency.
        target_p_pd: P_PD at which the A/B dark ratio is reported.
        poisson_mu: Mean photon number for the Poisson-corrected efficiency.
        reprocess: Re-run the compensator for each threshold instead of reusing peaks.
    """

    thresholds: Union[List[float], GridSpec]
    scenario_b: Optional[Scenario] = None
    target_p_pd: float = Field(default=0.05, gt=0, lt=1)
    poisson_mu: Optional[float] = Field(default=None, gt=0)
    reprocess: bool = False

    @model_validator(mode="after")
    def _valid_thresholds(self) -> "SweepSpec":
        is_valid, error = validate_thresholds(self.threshold_values())
        if not is_valid:
            raise ValueError(error)
        return self

    def threshold_values(self) -> List[float]:
        return _grid_values(self.thresholds)


class KeyRateParams(StrictModel):
    """
    Inputs of the weak-coherent two-detector rate model.

    Attributes:
        mu: Mean photon number per pulse.
        channel_loss_db: Total loss (fiber and receiver) in dB.
        eta_det: Detector efficiency.
        p_dk: Dark count probability per gate per detector.
        e_det: Intrinsic misalignment error probability.
        sift_q: Sifting factor.
        f_ec: Error-correction inefficiency (1 = Shor–Preskill bound).
    """

    mu: float = Field(default=KEYRATE_DEFAULTS["mu"], ge=0)
    channel_loss_db: float = Field(default=KEYRATE_DEFAULTS["channel_loss_db"], ge=0)
    eta_det: float = KEYRATE_DEFAULTS["eta_det"]
    p_dk: float = KEYRATE_DEFAULTS["p_dk"]
    e_det: float = KEYRATE_DEFAULTS["e_det"]
    sift_q: float = Field(default=KEYRATE_DEFAULTS["sift_q"], gt=0, le=1)
    f_ec: float = Field(default=KEYRATE_DEFAULTS["f_ec"], ge=1)

    @field_validator("eta_det", "p_dk", "e_det")
    @classmethod
    def _probability(cls, value: float, info) -> float:
        return check_probability(value, info.field_name)


class KeyRateGrid(StrictModel):
    """
    Key-rate grid for the CLI.

    Attributes:
        base: Parameters held fixed across the grid.
        loss_db: Channel losses evaluated.
        mu: Mean photon numbers evaluated (defaults to base.mu).
        p_dk: Dark probabilities evaluated (defaults to base.p_dk).
        reduction_factor: Dark-count reduction for the gain curve.
        target_ratio: Gain ratio located by the grid-search oracle.
    """

    base: KeyRateParams = Field(default_factory=KeyRateParams)
    loss_db: Union[List[float], GridSpec] = Field(
        default_factory=lambda: GridSpec(min=0.0, max=30.0, count=61)
    )
    mu: Optional[List[float]] = None
    p_dk: Optional[List[float]] = None
    reduction_factor: float = Field(default=10.0, ge=1)
    target_ratio: float = Field(default=TARGET_GAIN_RATIO, gt=1)

    def loss_values(self) -> List[float]:
        values = _grid_values(self.loss_db)
        if any(value < 0 for value in values):
            raise ConfigError("loss_db values must be >= 0")
        return values


class RfLinkSpec(StrictModel):
    """
    Lumped bond-wire link: source z0, series L, shunt C, load z0.

    Attributes:
        z0_ohm: Reference impedance.
        wire_inductance_per_mm: Henries per millimetre of wire.
        wire_length_mm: Total wire length.
        shunt_c_f: Chip/pad capacitance.
        f_max_hz: Evaluation ceiling.
        n_points: Frequency grid size.
    """

    z0_ohm: float = Field(default=RF_DEFAULTS["z0_ohm"], gt=0)
    wire_inductance_per_mm: float = Field(default=RF_DEFAULTS["wire_inductance_per_mm"], ge=0)
    wire_length_mm: float = Field(default=RF_DEFAULTS["wire_length_mm"], ge=0)
    shunt_c_f: float = Field(default=RF_DEFAULTS["shunt_c_f"], ge=0)
    f_max_hz: float = Field(default=RF_DEFAULTS["f_max_hz"], gt=0)
    n_points: int = Field(default=RF_DEFAULTS["n_points"], ge=2)

    @property
    def inductance_h(self) -> float:
        return self.wire_inductance_per_mm * self.wire_length_mm


class WireSpec(StrictModel):
    """One group of identical wires crossing from ambient to the cooled stage."""

    count: int = Field(gt=0)
    conductivity_k: float = Field(gt=0)
    cross_section_m2: float = Field(gt=0)
    length_m: float = Field(gt=0)
    material: str = "unspecified"


class HwSpec(StrictModel):
    """
    Hardware budget inputs.

    Attributes:
        rf: Bond-wire link.
        target_bandwidth_hz: Bandwidth the wire length must support.
        wires: Wire harness (defaults to the calibration harness).
        delta_t_k: Ambient minus cold-stage temperature.
        budget_mw: Allowed conducted flux.
    """

    rf: RfLinkSpec = Field(default_factory=RfLinkSpec)
    target_bandwidth_hz: float = Field(default=3.0e9, gt=0)
    wires: Tuple[WireSpec, ...] = Field(
        default_factory=lambda: tuple(WireSpec(**wire) for wire in DEFAULT_HARNESS)
    )
    delta_t_k: float = Field(default=DEFAULT_DELTA_T_K, ge=0)
    budget_mw: float = Field(default=THERMAL_BUDGET_MW, ge=0)


class OutputSpec(StrictModel):
    """Where and how results are written."""

    directory: Optional[str] = None
    format: Literal["csv"] = "csv"


class BenchSpec(StrictModel):
    """Throughput benchmark settings."""

    trials: int = Field(default=5, ge=5)
    min_gates_per_s: float = Field(default=1e5, ge=0)
    target_gates_per_s: float = Field(default=1e6, ge=0)


class RunConfig(StrictModel):
    """
    One JSON run document; each subcommand requires its own sections.
    """

    scenario: Optional[Scenario] = None
    compensator: Optional[CompensatorConfig] = None
    sweep: Optional[SweepSpec] = None
    keyrate: Optional[KeyRateGrid] = None
    hw: Optional[HwSpec] = None
    bench: Optional[BenchSpec] = None
    output: OutputSpec = Field(default_factory=OutputSpec)

    def require(self, *sections: str) -> None:
        """
        Ensure the named sections are present.

        Raises:
            ConfigError: If any required section is missing.
        """
        missing = [name for name in sections if getattr(self, name) is None]
        if missing:
            raise ConfigError(f"run config is missing required section(s): {', '.join(missing)}")


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Read and validate a JSON run configuration.

    Args:
        path: Location of the JSON document.

    Returns:
        RunConfig: The validated configuration.

    Raises:
        ConfigError: If the file cannot be read, is not JSON, or fails validation.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        document = orjson.loads(raw)
    except orjson.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    try:
        return RunConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"config {path} failed validation:\n{e}") from e
