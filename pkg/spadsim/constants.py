"""
Constants used throughout the spadsim toolkit.

This module defines toolkit-wide defaults and file-format constants to
ensure consistency and make calibration changes easier to manage. None of
the device values are published hardware figures; they are plausible
defaults chosen so that quantization is visible but not dominant.
"""

from typing import Any, Dict, List, Tuple

# Gate drive defaults
GATE_DEFAULTS: Dict[str, Any] = {
    "repetition_hz": 1.0e9,
    "gate_amplitude": 2.0,
    "gate_width_s": 0.5e-9,
    "samples_per_gate": 16,
    "oversample": 32,
}

# Per-APD physical defaults; one two-pole section gives -3 dB at 3 GHz
DEVICE_DEFAULTS: Dict[str, Any] = {
    "responsivity_a_per_w": 1.03,
    "feedthrough_gain": 0.04,
    "coupling_tau_s": 50e-12,
    "transfer_poles": [(3.0e9, 0.7071067811865476)],
    "variation_fraction": 0.0,
    "avalanche_amp_mean_v": 0.05,
    "avalanche_amp_sigma_v": 0.01,
    "avalanche_decay_s": 0.25e-9,
    "efficiency_eta": 0.1,
    "dark_prob_per_gate": 1e-4,
    "afterpulse_prob": 0.0,
    "afterpulse_tau_s": 10e-9,
    "crosstalk_chi": 0.0,
}

# Plausible responsivity band used by the DeviceProfile check
RESPONSIVITY_BAND_A_PER_W: Tuple[float, float] = (0.5, 2.0)

# ADC defaults: full scale = 4x the nominal avalanche mean
ADC_DEFAULTS: Dict[str, Any] = {
    "bits": 8,
    "full_scale_v": 0.2,
    "offset_v": -0.05,
}

COMPENSATOR_DEFAULTS: Dict[str, Any] = {
    "window_n": 64,
    "guard_multiplier": 6.0,
    "timing_window": (0.2, 0.9),
    "v_th": 0.01,
}

# Scale factor turning a median absolute deviation into a Gaussian sigma
MAD_TO_SIGMA: float = 1.4826

# Fewest out-of-window samples the noise estimate is taken from
MIN_NOISE_SAMPLES: int = 3

KEYRATE_DEFAULTS: Dict[str, Any] = {
    "mu": 0.1,
    "channel_loss_db": 10.0,
    "eta_det": 0.1,
    "p_dk": 1e-5,
    "e_det": 0.01,
    "sift_q": 0.5,
    "f_ec": 1.0,
}

# Dark-count gain the key-rate oracle looks for
TARGET_GAIN_RATIO: float = 3.2

RF_DEFAULTS: Dict[str, Any] = {
    "z0_ohm": 50.0,
    "wire_inductance_per_mm": 1.0e-9,
    "wire_length_mm": 5.0,
    "shunt_c_f": 0.0,
    "f_max_hz": 20e9,
    "n_points": 2001,
}

# Cooled-stage thermal budget
THERMAL_BUDGET_MW: float = 250.0
DEFAULT_DELTA_T_K: float = 100.0

# Calibration harness: 2 gold RF ribbons + 8 gold DC bond wires (25 um).
# Geometry is a calibration choice, not a measured module value.
DEFAULT_HARNESS: List[Dict[str, Any]] = [
    {
        "material": "gold RF ribbon",
        "count": 2,
        "conductivity_k": 315.0,
        "cross_section_m2": 3.125e-9,
        "length_m": 1.5e-3,
    },
    {
        "material": "gold DC bond wire",
        "count": 8,
        "conductivity_k": 315.0,
        "cross_section_m2": 4.91e-10,
        "length_m": 2.0e-3,
    },
]

# Frame binary: little-endian header {magic, u32 samples_per_gate, u32 bits, u64 n_gates}
FRAME_MAGIC: bytes = b"SPADSIM1"
FRAME_HEADER_FORMAT: str = "<8sIIQ"

# CSV headers
GROUND_TRUTH_HEADER: List[str] = ["gate_index", "photon_present", "avalanche", "cause"]
DECISION_HEADER: List[str] = [
    "gate_index",
    "channel",
    "click",
    "peak_v",
    "peak_sample",
    "withheld",
]
SWEEP_HEADER: List[str] = [
    "v_th",
    "gates_lit",
    "clicks_lit",
    "gates_dark",
    "clicks_dark",
    "p_pd",
    "p_pd_ci_lo",
    "p_pd_ci_hi",
    "p_dk",
    "p_dk_ci_lo",
    "p_dk_ci_hi",
]
RATE_HEADER: List[str] = ["loss_db", "mu", "p_dk", "Q", "E", "R"]
GAIN_HEADER: List[str] = ["loss_db", "ratio"]

# Exit codes of the CLI
EXIT_CODES: Dict[str, int] = {"OK": 0, "CONFIG_ERROR": 1, "RUNTIME_ERROR": 2, "CHECK_FAILED": 3}

# Prefix of the machine-readable summary line
RESULT_PREFIX: str = "RESULT "
