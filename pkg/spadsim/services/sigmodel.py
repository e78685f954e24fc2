"""
Signal model service: synthetic gated-APD ADC frames with ground truth.

Waveforms are rendered on an oversampled grid and every ADC sample is the
mean over its sampling aperture, which keeps pulse areas exact. The gate
feedthrough (charge pulse) is the periodic steady-state response of the
gate drive through a capacitive differentiator and the device low-pass
sections. Avalanches are exponential pulses through the same low-pass.
Events are decided from counter-based per-gate draws first, then rendered
chunk by chunk, so the output is independent of the worker count.
"""

import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterator, List, Optional, Sequence

import numba
import numpy as np
from scipy import signal

from spadsim.exceptions import SpadSimError
from spadsim.schemas import AdcConfig, DeviceProfile, GateConfig, Scenario
from spadsim.utils.logging import get_logger
from spadsim.utils.rng import gate_normals, gate_uniforms, map_chunks, stream_key

logger = get_logger(__name__)

CAUSES = ("none", "photon", "dark", "afterpulse", "crosstalk")
CAUSE_CODES: Dict[str, int] = {name: code for code, name in enumerate(CAUSES)}

# exp(-35) ~ 6e-16: pulse tails are rendered until they are below double precision
_TAIL_DECAYS = 35.0


class SignalModelError(SpadSimError):
    """Custom exception for signal model related errors."""

    pass


@dataclass(frozen=True)
class SampledFrame:
    """One gate period of ADC codes."""

    gate_index: int
    samples: np.ndarray
    channel: int = 0


@dataclass
class FrameStream:
    """
    All frames of one channel, stored as a (n_gates, samples_per_gate) code array.

    Attributes:
        channel: Detector channel.
        codes: uint16 ADC codes, one row per gate.
        bits: ADC resolution the codes belong to.
        start_gate: Gate index of the first row.
    """

    channel: int
    codes: np.ndarray
    bits: int
    start_gate: int = 0

    def __len__(self) -> int:
        return int(self.codes.shape[0])

    def __iter__(self) -> Iterator[SampledFrame]:
        for row, samples in enumerate(self.codes):
            yield SampledFrame(self.start_gate + row, samples, self.channel)

    @property
    def samples_per_gate(self) -> int:
        return int(self.codes.shape[1])

    @property
    def gate_indices(self) -> np.ndarray:
        return np.arange(self.start_gate, self.start_gate + len(self), dtype=np.int64)

    def frame(self, gate_index: int) -> SampledFrame:
        return SampledFrame(gate_index, self.codes[gate_index - self.start_gate], self.channel)

    def checksum(self) -> str:
        """SHA-256 of the little-endian code array."""
        return hashlib.sha256(np.ascontiguousarray(self.codes, dtype="<u2").tobytes()).hexdigest()


@dataclass(frozen=True)
class GroundTruthRecord:
    """One ground-truth row, as written to the ground-truth CSV."""

    gate_index: int
    photon_present: bool
    avalanche: bool
    cause: str


@dataclass
class GroundTruth:
    """
    Per-gate oracle labels of one channel.

    Attributes:
        channel: Detector channel.
        lit: Source pulse sent in the gate (illumination pattern).
        photon_present: At least one photon reached the detector.
        avalanche: The frame carries an avalanche signal.
        cause: Code into ``CAUSES``.
        amplitude_v: Amplitude of the channel's own avalanche (0 if none).
        onset_sample: Onset sample of the channel's own avalanche.
    """

    channel: int
    lit: np.ndarray
    photon_present: np.ndarray
    avalanche: np.ndarray
    cause: np.ndarray
    amplitude_v: np.ndarray
    onset_sample: np.ndarray

    def __len__(self) -> int:
        return int(self.lit.shape[0])

    @property
    def own_avalanche(self) -> np.ndarray:
        return self.avalanche & (self.cause != CAUSE_CODES["crosstalk"])

    def records(self) -> Iterator[GroundTruthRecord]:
        for gate_index in range(len(self)):
            yield GroundTruthRecord(
                gate_index,
                bool(self.photon_present[gate_index]),
                bool(self.avalanche[gate_index]),
                CAUSES[int(self.cause[gate_index])],
            )

    def cause_counts(self) -> Dict[str, int]:
        counts = np.bincount(self.cause, minlength=len(CAUSES))
        return {name: int(counts[code]) for code, name in enumerate(CAUSES)}


@dataclass
class SimulationResult:
    """Frame streams and ground truth of every channel of one scenario."""

    scenario: Scenario
    devices: List[DeviceProfile]
    frames: List[FrameStream]
    truth: List[GroundTruth]
    feedthrough_v: List[np.ndarray] = field(default_factory=list)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for stream in self.frames:
            digest.update(stream.checksum().encode())
        return digest.hexdigest()


def _differentiator_response(device: DeviceProfile, freqs: np.ndarray) -> np.ndarray:
    jw_tau = 2j * np.pi * freqs * device.coupling_tau_s
    return jw_tau / (1.0 + jw_tau)


def _lowpass_response(device: DeviceProfile, freqs: np.ndarray) -> np.ndarray:
    response = np.ones_like(freqs, dtype=complex)
    omega = 2.0 * np.pi * freqs
    for f0, damping in device.transfer_poles:
        w0 = 2.0 * np.pi * f0
        response *= w0**2 / (w0**2 - omega**2 + 2j * damping * w0 * omega)
    return response


def _lowpass_sos(device: DeviceProfile, fine_rate_hz: float) -> Optional[np.ndarray]:
    """Bilinear discretisation of the low-pass sections as second-order sections."""
    if not device.transfer_poles:
        return None
    sections = []
    for f0, damping in device.transfer_poles:
        w0 = 2.0 * np.pi * f0
        bz, az = signal.bilinear([w0**2], [1.0, 2.0 * damping * w0, w0**2], fs=fine_rate_hz)
        bz = np.pad(bz, (0, 3 - len(bz)))
        sections.append(np.concatenate([bz / az[0], az / az[0]]))
    return np.array(sections)


def _aperture_mean(fine: np.ndarray, oversample: int) -> np.ndarray:
    return fine.reshape(-1, oversample).mean(axis=1)


def gate_feedthrough_waveform(gate: GateConfig, device: DeviceProfile) -> np.ndarray:
    """
    Charge-pulse waveform of one gate period.

    The periodic gate drive (rising edge at t = 0, falling edge at
    ``gate_width_s``) passes through the capacitive differentiator and
    the device low-pass; the periodic steady state is evaluated exactly at
    the gate harmonics. The differentiator blocks DC, so the waveform has
    zero net area.

    Args:
        gate: Gate drive.
        device: APD channel.

    Returns:
        np.ndarray: ``samples_per_gate`` values in volts.
    """
    n_fine = gate.fine_points
    h = gate.period_s / n_fine
    cell_start = np.arange(n_fine) * h
    covered = np.clip(np.minimum(cell_start + h, gate.gate_width_s) - cell_start, 0.0, h) / h
    drive = gate.gate_amplitude * covered

    harmonics = np.fft.rfftfreq(n_fine, d=h)
    response = device.feedthrough_gain * _differentiator_response(device, harmonics)
    response *= _lowpass_response(device, harmonics)
    fine = np.fft.irfft(np.fft.rfft(drive) * response, n=n_fine)
    return _aperture_mean(fine, gate.oversample)


def _pulse_span_gates(gate: GateConfig, device: DeviceProfile, onset_sample: int) -> int:
    settle_s = sum(_TAIL_DECAYS / (damping * 2.0 * np.pi * f0) for f0, damping in device.transfer_poles)
    duration = onset_sample * gate.sample_period_s + _TAIL_DECAYS * device.avalanche_decay_s + settle_s
    return int(math.ceil(duration / gate.period_s)) + 1


@lru_cache(maxsize=256)
def _unit_pulse(gate: GateConfig, device: DeviceProfile, onset_sample: int) -> np.ndarray:
    span = _pulse_span_gates(gate, device, onset_sample)
    n_fine = span * gate.fine_points
    h = gate.period_s / gate.fine_points
    tau = device.avalanche_decay_s

    start = onset_sample * gate.oversample
    t0 = np.arange(n_fine - start) * h
    # exact mean of A*exp(-t/tau) over each fine cell
    fine = np.zeros(n_fine)
    fine[start:] = (tau / h) * (np.exp(-t0 / tau) - np.exp(-(t0 + h) / tau))

    sos = _lowpass_sos(device, 1.0 / h)
    if sos is not None:
        fine = signal.sosfilt(sos, fine)
    pulse = _aperture_mean(fine, gate.oversample).reshape(span, gate.samples_per_gate)
    pulse.setflags(write=False)
    return pulse


def avalanche_pulse(
    device: DeviceProfile,
    onset_fraction: float,
    amplitude_v: float,
    gate: Optional[GateConfig] = None,
) -> np.ndarray:
    """
    Avalanche waveform starting in the current gate, tail included.

    Row 0 is the in-frame part; rows 1.. are the tail that spills into the
    following frames and must be carried over.

    Args:
        device: APD channel (decay and band limit).
        onset_fraction: Onset position in [0, 1) of the gate period; the
            pulse starts at sample ``floor(onset_fraction * samples_per_gate)``.
        amplitude_v: Pulse amplitude in volts.
        gate: Gate drive (defaults to ``GateConfig()``).

    Returns:
        np.ndarray: Array of shape (span_gates, samples_per_gate) in volts.

    Raises:
        SignalModelError: If the onset lies outside the gate period.
    """
    gate = gate or GateConfig()
    if not 0.0 <= onset_fraction < 1.0:
        raise SignalModelError(f"onset_fraction must lie in [0, 1), got {onset_fraction}")
    onset_sample = int(math.floor(onset_fraction * gate.samples_per_gate))
    return amplitude_v * _unit_pulse(gate, device, onset_sample)


def apply_device_variation(base: DeviceProfile, seed: int) -> DeviceProfile:
    """
    Perturb the transfer parameters and feedthrough gain of a device.

    Each pole frequency, pole damping, the coupling time constant and the
    feedthrough gain is multiplied by ``1 + u`` with ``u`` uniform in
    ``[-variation_fraction, +variation_fraction]``, deterministic in ``seed``.

    Args:
        base: Nominal device.
        seed: Instance seed.

    Returns:
        DeviceProfile: The perturbed copy (``base`` itself when the fraction is 0).
    """
    fraction = base.variation_fraction
    if fraction == 0.0:
        return base
    n_params = 2 * len(base.transfer_poles) + 2
    u = fraction * (2.0 * gate_uniforms(seed, "variation", 0, 0, 1, n_params)[0] - 1.0)

    poles = tuple(
        (f0 * (1.0 + u[2 * i]), damping * (1.0 + u[2 * i + 1]))
        for i, (f0, damping) in enumerate(base.transfer_poles)
    )
    return base.model_copy(
        update={
            "transfer_poles": poles,
            "coupling_tau_s": base.coupling_tau_s * (1.0 + u[-2]),
            "feedthrough_gain": base.feedthrough_gain * (1.0 + u[-1]),
        }
    )


def scenario_devices(scenario: Scenario) -> List[DeviceProfile]:
    """
    Effective per-channel devices of a scenario.

    With ``apply_variation`` every channel gets its own instance derived
    from its listed profile and a channel-specific seed, as two chips of one
    module would.
    """
    if not scenario.apply_variation:
        return list(scenario.devices)
    return [
        apply_device_variation(device, int(stream_key(scenario.seed, "variation", channel)[0]))
        for channel, device in enumerate(scenario.devices)
    ]


def quantize(waveform: np.ndarray, adc: AdcConfig) -> np.ndarray:
    """
    Round-to-nearest ADC codes, clamped to the code range.

    Args:
        waveform: Volts, any shape.
        adc: ADC model.

    Returns:
        np.ndarray: uint16 codes of the same shape.
    """
    scaled = (np.asarray(waveform, dtype=float) - adc.offset_v) / adc.full_scale_v * adc.max_code
    return np.clip(np.floor(scaled + 0.5), 0, adc.max_code).astype(np.uint16)


def dequantize(codes: np.ndarray, adc: AdcConfig) -> np.ndarray:
    """Volts represented by ADC codes."""
    return adc.offset_v + np.asarray(codes, dtype=float) * adc.lsb_v


def combined_avalanche_probability(
    p_photon_trigger: float, dark_prob: float, after_prob: float = 0.0
) -> float:
    """Probability that at least one independent trigger fires in a gate."""
    return 1.0 - (1.0 - p_photon_trigger) * (1.0 - dark_prob) * (1.0 - after_prob)


@numba.njit(nogil=True, cache=True)
def _afterpulse_scan(base_trigger, u_after, afterpulse_prob, decay):  # pragma: no cover
    # memory: decayed count of earlier avalanches
    n = base_trigger.shape[0]
    avalanche = np.zeros(n, dtype=np.bool_)
    after_trigger = np.zeros(n, dtype=np.bool_)
    memory = 0.0
    for g in range(n):
        p_after = afterpulse_prob * memory
        if p_after > 1.0:
            p_after = 1.0
        fired = u_after[g] < p_after
        after_trigger[g] = fired
        avalanche[g] = base_trigger[g] or fired
        memory = decay * (memory + (1.0 if avalanche[g] else 0.0))
    return avalanche, after_trigger


def afterpulse_probabilities(avalanche: np.ndarray, afterpulse_prob: float, decay: float) -> np.ndarray:
    """
    Afterpulse probability of every gate given the avalanche history.

    ``p_after[g] = min(1, afterpulse_prob * sum_{j<g, avalanche[j]} decay**(g - j))``
    evaluated directly; used as the scalar replay oracle of the scan.
    """
    p_after = np.zeros(avalanche.shape[0])
    memory = 0.0
    for g, fired in enumerate(avalanche):
        p_after[g] = min(1.0, afterpulse_prob * memory)
        memory = decay * (memory + float(fired))
    return p_after


def _draw_channel_events(
    scenario: Scenario, device: DeviceProfile, channel: int, threads: int
) -> GroundTruth:
    gate = scenario.gate
    illumination = scenario.illumination
    seed = scenario.seed

    # Per-gate photon presence and trigger probabilities
    if illumination.kind == "poisson":
        mu = illumination.mu_gate
        p_present = -math.expm1(-mu)
        p_trigger = (-math.expm1(-device.efficiency_eta * mu) / p_present) if p_present > 0 else 0.0
    else:
        p_present = 1.0
        p_trigger = device.efficiency_eta
    base_onset = int(math.floor(scenario.onset_fraction * gate.samples_per_gate))

    def draw(start: int, stop: int) -> np.ndarray:
        n = stop - start
        lit = illumination.lit_mask(start, stop)
        present = lit & (gate_uniforms(seed, "photon", channel, start, n)[:, 0] < p_present)
        photon = present & (gate_uniforms(seed, "trigger", channel, start, n)[:, 0] < p_trigger)
        dark = gate_uniforms(seed, "dark", channel, start, n)[:, 0] < device.dark_prob_per_gate
        u_after = gate_uniforms(seed, "afterpulse", channel, start, n)[:, 0]
        amplitude = device.avalanche_amp_mean_v + device.avalanche_amp_sigma_v * gate_normals(
            seed, "amplitude", channel, start, n
        )[:, 0]
        onset = np.full(n, base_onset, dtype=np.int64)
        if scenario.onset_jitter_samples:
            jitter = gate_uniforms(seed, "onset", channel, start, n)[:, 0]
            onset += np.floor(jitter * (scenario.onset_jitter_samples + 1)).astype(np.int64)
        return np.column_stack(
            [lit, present, photon, dark, u_after, np.maximum(amplitude, 0.0), onset]
        )

    table = np.concatenate(map_chunks(draw, scenario.n_gates, threads), axis=0)
    lit, present, photon, dark = (table[:, i].astype(bool) for i in range(4))
    u_after, amplitude, onset = table[:, 4], table[:, 5], table[:, 6].astype(np.int64)

    # Afterpulse memory is sequential
    base_trigger = photon | dark
    if device.afterpulse_prob > 0.0:
        decay = math.exp(-gate.period_s / device.afterpulse_tau_s)
        avalanche, after = _afterpulse_scan(base_trigger, u_after, device.afterpulse_prob, decay)
    else:
        avalanche, after = base_trigger, np.zeros_like(base_trigger)

    # Label causes, photon taking precedence over dark over afterpulse
    cause = np.zeros(scenario.n_gates, dtype=np.uint8)
    cause[after] = CAUSE_CODES["afterpulse"]
    cause[dark] = CAUSE_CODES["dark"]
    cause[photon] = CAUSE_CODES["photon"]

    return GroundTruth(
        channel=channel,
        lit=lit,
        photon_present=present,
        avalanche=avalanche,
        cause=cause,
        amplitude_v=np.where(avalanche, amplitude, 0.0),
        onset_sample=onset,
    )


def _label_crosstalk(truth: List[GroundTruth], devices: Sequence[DeviceProfile]) -> None:
    if len(truth) != 2:
        return
    own = [t.avalanche.copy() for t in truth]
    for channel, partner in ((0, 1), (1, 0)):
        if devices[channel].crosstalk_chi == 0.0:
            continue
        injected = own[partner] & ~own[channel]
        truth[channel].avalanche = truth[channel].avalanche | injected
        truth[channel].cause[injected] = CAUSE_CODES["crosstalk"]


def avalanche_contribution(
    truth: GroundTruth, gate: GateConfig, device: DeviceProfile, start: int, stop: int
) -> np.ndarray:
    """
    Analog sum of a channel's own avalanche pulses over gates [start, stop).

    Pulses that began in earlier gates contribute their carried-over tails.

    Returns:
        np.ndarray: (stop - start, samples_per_gate) volts.
    """
    out = np.zeros((stop - start, gate.samples_per_gate))
    own = truth.own_avalanche
    onsets = truth.onset_sample
    spans = {int(o): _unit_pulse(gate, device, int(o)).shape[0] for o in np.unique(onsets[own])}
    if not spans:
        return out
    # Include earlier gates whose tails reach into the range
    lo = max(0, start - max(spans.values()) + 1)
    idx = np.flatnonzero(own[lo:stop]) + lo
    for onset, span in spans.items():
        selected = idx[onsets[idx] == onset]
        if selected.size == 0:
            continue
        amplitudes = truth.amplitude_v[selected]
        pulse = _unit_pulse(gate, device, onset)
        for lag in range(span):
            target = selected + lag
            inside = (target >= start) & (target < stop)
            if inside.any():
                out[target[inside] - start] += amplitudes[inside, None] * pulse[lag][None, :]
    return out


def render_analog(
    scenario: Scenario,
    devices: Sequence[DeviceProfile],
    truth: Sequence[GroundTruth],
    channel: int,
    start: int,
    stop: int,
    feedthrough: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Pre-quantization waveform of one channel over gates [start, stop).

    Sum of feedthrough, own avalanches (with carried tails), crosstalk from
    the partner channel and white noise.
    """
    gate = scenario.gate
    device = devices[channel]
    if feedthrough is None:
        feedthrough = gate_feedthrough_waveform(gate, device)
    analog = np.broadcast_to(feedthrough, (stop - start, gate.samples_per_gate)).copy()
    analog += avalanche_contribution(truth[channel], gate, device, start, stop)
    if len(devices) == 2 and device.crosstalk_chi > 0.0:
        partner = 1 - channel
        analog += device.crosstalk_chi * avalanche_contribution(
            truth[partner], gate, devices[partner], start, stop
        )
    if scenario.noise_sigma_v > 0.0:
        analog += scenario.noise_sigma_v * gate_normals(
            scenario.seed, "noise", channel, start, stop - start, gate.samples_per_gate
        )
    return analog


def simulate_gate_train(scenario: Scenario, threads: int = 1) -> SimulationResult:
    """
    Simulate a gated train on every channel of a scenario.

    Pass 1 draws the events of every gate (counter-based draws, chunked)
    and resolves afterpulse memory sequentially; pass 2 renders and
    quantizes frames chunk by chunk. Output is bit-identical for any
    ``threads``.

    Args:
        scenario: Validated experiment description.
        threads: Worker threads for chunked draws and rendering.

    Returns:
        SimulationResult: Frames and ground truth per channel.

    Raises:
        SignalModelError: If a device's trigger probabilities are not valid.
    """
    devices = scenario_devices(scenario)

    # Validate trigger probabilities
    for channel, device in enumerate(devices):
        p = combined_avalanche_probability(device.efficiency_eta, device.dark_prob_per_gate, device.afterpulse_prob)
        if not 0.0 <= p <= 1.0:
            raise SignalModelError(f"channel {channel}: combined avalanche probability {p} outside [0, 1]")

    # Pass 1: events
    truth = [
        _draw_channel_events(scenario, device, channel, threads)
        for channel, device in enumerate(devices)
    ]
    _label_crosstalk(truth, devices)

    # Pass 2: render and quantize
    feedthroughs = [gate_feedthrough_waveform(scenario.gate, device) for device in devices]
    frames = []
    for channel in range(len(devices)):
        def render(start: int, stop: int, channel: int = channel) -> np.ndarray:
            analog = render_analog(scenario, devices, truth, channel, start, stop, feedthroughs[channel])
            return quantize(analog, scenario.adc)

        codes = np.concatenate(map_chunks(render, scenario.n_gates, threads), axis=0)
        frames.append(FrameStream(channel=channel, codes=codes, bits=scenario.adc.bits))

    for t in truth:
        logger.debug(f"channel {t.channel}: {t.cause_counts()}")
    logger.info(
        f"Simulated {scenario.n_gates} gates on {len(devices)} channel(s) (seed {scenario.seed})"
    )
    return SimulationResult(
        scenario=scenario, devices=devices, frames=frames, truth=truth, feedthrough_v=feedthroughs
    )
