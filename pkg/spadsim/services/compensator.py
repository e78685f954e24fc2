"""
Self-training charge-pulse compensator and threshold discriminator.

The template is the mean of the last ``window_n`` accepted frames of the
channel's own ADC stream, so it follows each device's charge pulse without
per-device tuning. Each incoming frame is compared against the template
built from earlier frames only, the residual is discriminated, and then the
frame is offered to the template.

Frames are held in the ring as integer ADC codes, so the ring sum is exact
and the template always equals the arithmetic mean of the ring contents.

The guard noise estimate uses only the samples outside the timing window,
which avalanche frames absorbed during warm-up leave unbiased.
"""

from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Union

import numba
import numpy as np

from spadsim.constants import MAD_TO_SIGMA, MIN_NOISE_SAMPLES
from spadsim.exceptions import SpadSimError
from spadsim.schemas import AdcConfig, CompensatorConfig
from spadsim.services.sigmodel import FrameStream, SampledFrame
from spadsim.utils.logging import get_logger
from spadsim.utils.validation import validate_frame_length

logger = get_logger(__name__)


class CompensatorError(SpadSimError):
    """Custom exception for compensator related errors."""

    pass


@dataclass
class CompensatorState:
    """
    Template and bookkeeping of one channel's compensator.

    Attributes:
        config: Compensator settings.
        adc: ADC the frames were sampled with.
        ring: (window_n, samples_per_gate) int64 codes of accepted frames.
        ring_sum: Per-sample code sum of the ring.
        ring_count: Frames currently in the ring.
        ring_head: Slot the next accepted frame overwrites.
        accepted_count: Frames accepted since init.
        rejected_count: Frames excluded by the guard since init.
        frames_seen: Frames offered since init.
        noise_sigma_est: Running robust noise estimate (volts).
        noise_updates: Frames that contributed to the noise estimate.
    """

    config: CompensatorConfig
    adc: AdcConfig
    ring: np.ndarray
    ring_sum: np.ndarray
    ring_count: int = 0
    ring_head: int = 0
    accepted_count: int = 0
    rejected_count: int = 0
    frames_seen: int = 0
    noise_sigma_est: float = 0.0
    noise_updates: int = 0

    @property
    def samples_per_gate(self) -> int:
        return int(self.ring.shape[1])

    @property
    def capacity(self) -> int:
        return int(self.ring.shape[0])

    @property
    def template(self) -> np.ndarray:
        """Mean of the ring contents in volts (zeros while the ring is empty)."""
        if self.ring_count == 0:
            return np.zeros(self.samples_per_gate)
        return self.adc.offset_v + (self.ring_sum / self.ring_count) * self.adc.lsb_v

    @property
    def in_warmup(self) -> bool:
        return self.frames_seen < self.config.warmup

    @property
    def noise_floor_v(self) -> float:
        return self.adc.lsb_v / np.sqrt(12.0)

    @property
    def guard_level_v(self) -> float:
        return self.config.guard_multiplier * max(self.noise_sigma_est, self.noise_floor_v)

    def ring_frames(self) -> np.ndarray:
        """Ring contents (codes) in insertion order, oldest first."""
        if self.ring_count < self.capacity:
            return self.ring[: self.ring_count].copy()
        return np.roll(self.ring, -self.ring_head, axis=0)

    def copy(self) -> "CompensatorState":
        return CompensatorState(
            config=self.config,
            adc=self.adc,
            ring=self.ring.copy(),
            ring_sum=self.ring_sum.copy(),
            ring_count=self.ring_count,
            ring_head=self.ring_head,
            accepted_count=self.accepted_count,
            rejected_count=self.rejected_count,
            frames_seen=self.frames_seen,
            noise_sigma_est=self.noise_sigma_est,
            noise_updates=self.noise_updates,
        )


@dataclass(frozen=True)
class Decision:
    """Discriminator output for one gate."""

    gate_index: int
    click: bool
    peak_v: float
    peak_sample: int
    withheld: bool = False
    channel: int = 0


@dataclass
class DecisionStream:
    """
    Decisions of one channel as parallel arrays.

    ``peak_v`` does not depend on V_th, so clicks at any other level are
    ``peak_v > v_th`` on the same stream.
    """

    channel: int
    gate_index: np.ndarray
    click: np.ndarray
    peak_v: np.ndarray
    peak_sample: np.ndarray
    withheld: np.ndarray
    v_th: float

    def __len__(self) -> int:
        return int(self.gate_index.shape[0])

    def __iter__(self) -> Iterator[Decision]:
        for i in range(len(self)):
            yield Decision(
                int(self.gate_index[i]),
                bool(self.click[i]),
                float(self.peak_v[i]),
                int(self.peak_sample[i]),
                bool(self.withheld[i]),
                self.channel,
            )

    def at_threshold(self, v_th: float) -> "DecisionStream":
        """The same stream discriminated at another level."""
        return DecisionStream(
            channel=self.channel,
            gate_index=self.gate_index,
            click=(self.peak_v > v_th) & ~self.withheld,
            peak_v=self.peak_v,
            peak_sample=self.peak_sample,
            withheld=self.withheld,
            v_th=v_th,
        )

    @property
    def counted(self) -> np.ndarray:
        return ~self.withheld


def init_compensator(
    config: CompensatorConfig, samples_per_gate: int, adc: Optional[AdcConfig] = None
) -> CompensatorState:
    """
    Fresh compensator: zero template, empty ring of capacity ``window_n``.

    Args:
        config: Compensator settings.
        samples_per_gate: Frame length.
        adc: ADC used to de-quantize frames (defaults to ``AdcConfig()``).

    Returns:
        CompensatorState: The initial state.
    """
    return CompensatorState(
        config=config,
        adc=adc or AdcConfig(),
        ring=np.zeros((config.window_n, samples_per_gate), dtype=np.int64),
        ring_sum=np.zeros(samples_per_gate, dtype=np.int64),
    )


def _frame_codes(frame: Union[SampledFrame, np.ndarray], state: CompensatorState) -> np.ndarray:
    samples = frame.samples if isinstance(frame, SampledFrame) else frame
    is_valid, error = validate_frame_length(samples, state.samples_per_gate)
    if not is_valid:
        raise CompensatorError(error)
    return np.asarray(samples, dtype=np.int64)


def noise_samples(config: CompensatorConfig, samples_per_gate: int) -> np.ndarray:
    """
    Sample indices the noise estimate is computed from.

    These are the samples outside the timing window. When fewer than
    ``MIN_NOISE_SAMPLES`` lie outside it, every sample is used.
    """
    window = config.window_slice(samples_per_gate)
    index = np.arange(samples_per_gate, dtype=np.int64)
    quiet = index[(index < window.start) | (index >= window.stop)]
    return index if quiet.size < MIN_NOISE_SAMPLES else quiet


def _mad_sigma(residual: np.ndarray) -> float:
    return MAD_TO_SIGMA * float(np.median(np.abs(residual - np.median(residual))))


def update_template(state: CompensatorState, frame: Union[SampledFrame, np.ndarray]) -> CompensatorState:
    """
    Offer a frame to the template.

    During warm-up every frame is accepted. Afterwards a frame is accepted
    only if its largest positive excursion above the template stays within
    ``guard_multiplier`` noise sigmas. An accepted frame enters the ring
    (evicting the oldest) and, once the template exists, updates the running
    noise estimate with the MAD of its residual over ``noise_samples``.

    Args:
        state: Current state (not modified).
        frame: Frame of ADC codes.

    Returns:
        CompensatorState: The new state.

    Raises:
        CompensatorError: If the frame length does not match the template.
    """
    codes = _frame_codes(frame, state)
    new = state.copy()
    residual = state.adc.offset_v + codes * state.adc.lsb_v - state.template

    # Guard test (skipped during warm-up)
    accept = state.in_warmup or float(residual.max()) <= state.guard_level_v
    new.frames_seen += 1
    if not accept:
        new.rejected_count += 1
        return new

    # Update noise estimate once a template exists
    if state.ring_count > 0:
        quiet = residual[noise_samples(state.config, state.samples_per_gate)]
        new.noise_updates += 1
        new.noise_sigma_est += (_mad_sigma(quiet) - state.noise_sigma_est) / min(
            new.noise_updates, state.capacity
        )

    # Push into the ring, evicting the oldest frame when full
    if new.ring_count == new.capacity:
        new.ring_sum -= new.ring[new.ring_head]
    else:
        new.ring_count += 1
    new.ring[new.ring_head] = codes
    new.ring_sum += codes
    new.ring_head = (new.ring_head + 1) % new.capacity
    new.accepted_count += 1
    return new


def compensate(state: CompensatorState, frame: Union[SampledFrame, np.ndarray]) -> np.ndarray:
    """
    Residual of a frame against the current template, in volts.

    Raises:
        CompensatorError: If the frame length does not match the template.
    """
    codes = _frame_codes(frame, state)
    return state.adc.offset_v + codes * state.adc.lsb_v - state.template


def discriminate(residual: np.ndarray, config: CompensatorConfig, gate_index: int = 0) -> Decision:
    """
    One-sided peak discrimination inside the timing window.

    A click requires the window peak to exceed ``v_th`` strictly.
    """
    residual = np.asarray(residual, dtype=float)
    window = config.window_slice(residual.shape[0])
    offset = window.start
    segment = residual[window]
    peak_sample = offset + int(np.argmax(segment))
    peak_v = float(residual[peak_sample])
    return Decision(gate_index, peak_v > config.v_th, peak_v, peak_sample)


@numba.njit(nogil=True, cache=True)
def _process_kernel(
    codes,
    ring,
    ring_sum,
    counters,
    noise,
    offset_v,
    lsb_v,
    warmup,
    guard_multiplier,
    noise_floor,
    window_start,
    window_stop,
    quiet,
    peak_v,
    peak_sample,
):  # pragma: no cover
    n_frames, n_samples = codes.shape
    capacity = ring.shape[0]
    ring_count = counters[0]
    ring_head = counters[1]
    accepted = counters[2]
    rejected = counters[3]
    seen = counters[4]
    noise_updates = counters[5]
    sigma = noise[0]
    residual = np.empty(n_samples)
    for g in range(n_frames):
        # Compensate against the template of earlier frames
        for s in range(n_samples):
            volts = offset_v + codes[g, s] * lsb_v
            if ring_count > 0:
                template = offset_v + (ring_sum[s] / ring_count) * lsb_v
            else:
                template = 0.0
            residual[s] = volts - template

        # Discriminate: window peak, first maximum wins
        best = window_start
        for s in range(window_start, window_stop):
            if residual[s] > residual[best]:
                best = s
        peak_v[g] = residual[best]
        peak_sample[g] = best

        # Guard test (skipped during warm-up)
        accept = seen < warmup
        if not accept:
            level = sigma if sigma > noise_floor else noise_floor
            accept = residual.max() <= guard_multiplier * level
        seen += 1
        if not accept:
            rejected += 1
            continue

        # Noise estimate from the out-of-window samples
        if ring_count > 0:
            noise_updates += 1
            sample = residual[quiet]
            centre = np.median(sample)
            mad = MAD_TO_SIGMA * np.median(np.abs(sample - centre))
            weight = noise_updates if noise_updates < capacity else capacity
            sigma += (mad - sigma) / weight

        # Push into the ring
        if ring_count == capacity:
            for s in range(n_samples):
                ring_sum[s] -= ring[ring_head, s]
        else:
            ring_count += 1
        for s in range(n_samples):
            ring[ring_head, s] = codes[g, s]
            ring_sum[s] += codes[g, s]
        ring_head = (ring_head + 1) % capacity
        accepted += 1

    counters[0] = ring_count
    counters[1] = ring_head
    counters[2] = accepted
    counters[3] = rejected
    counters[4] = seen
    counters[5] = noise_updates
    noise[0] = sigma


def process_codes(
    codes: np.ndarray,
    config: CompensatorConfig,
    adc: AdcConfig,
    state: Optional[CompensatorState] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, CompensatorState]:
    """
    Run compensate → discriminate → update_template over a code array.

    Args:
        codes: (n_gates, samples_per_gate) ADC codes in gate order.
        config: Compensator settings.
        adc: ADC model.
        state: State to continue from (a fresh one if None; never modified).

    Returns:
        tuple: (peak_v, peak_sample, withheld, final state).

    Raises:
        CompensatorError: If the frame length does not match the state.
    """
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    if codes.ndim != 2:
        raise CompensatorError(f"frame array must be 2-D, got shape {codes.shape}")
    if state is None:
        state = init_compensator(config, codes.shape[1], adc)
    if codes.shape[1] != state.samples_per_gate:
        raise CompensatorError(
            f"frame length {codes.shape[1]} does not match template length {state.samples_per_gate}"
        )
    new = state.copy()
    n_frames = codes.shape[0]
    counters = np.array(
        [new.ring_count, new.ring_head, new.accepted_count, new.rejected_count, new.frames_seen, new.noise_updates],
        dtype=np.int64,
    )
    noise = np.array([new.noise_sigma_est])
    peak_v = np.empty(n_frames)
    peak_sample = np.empty(n_frames, dtype=np.int64)
    window = config.window_slice(codes.shape[1])
    withheld = (state.frames_seen + np.arange(n_frames)) < config.warmup

    _process_kernel(
        codes,
        new.ring,
        new.ring_sum,
        counters,
        noise,
        adc.offset_v,
        adc.lsb_v,
        config.warmup,
        config.guard_multiplier,
        new.noise_floor_v,
        window.start,
        window.stop,
        noise_samples(config, codes.shape[1]),
        peak_v,
        peak_sample,
    )
    (
        new.ring_count,
        new.ring_head,
        new.accepted_count,
        new.rejected_count,
        new.frames_seen,
        new.noise_updates,
    ) = (int(value) for value in counters)
    new.noise_sigma_est = float(noise[0])
    return peak_v, peak_sample, withheld, new


def process_stream(
    frames: Union[FrameStream, Iterable[SampledFrame]],
    config: CompensatorConfig,
    adc: Optional[AdcConfig] = None,
) -> tuple[DecisionStream, CompensatorState]:
    """
    Sequential self-training discrimination of one channel's frames.

    For each frame in order: compensate against the template of earlier
    frames, discriminate, then offer the frame to the template. Decisions
    during warm-up are reported with ``withheld`` set.

    Args:
        frames: A FrameStream or an iterable of SampledFrame of one channel.
        config: Compensator settings.
        adc: ADC model (defaults to ``AdcConfig()``).

    Returns:
        tuple: (DecisionStream, final CompensatorState).

    Raises:
        CompensatorError: If frame lengths are not homogeneous.
    """
    adc = adc or AdcConfig()
    if isinstance(frames, FrameStream):
        channel, gate_index, codes = frames.channel, frames.gate_indices, frames.codes
    else:
        frame_list: List[SampledFrame] = list(frames)
        if not frame_list:
            raise CompensatorError("cannot process an empty frame stream")
        lengths = {len(frame.samples) for frame in frame_list}
        if len(lengths) != 1:
            raise CompensatorError(f"frame lengths are not homogeneous: {sorted(lengths)}")
        channel = frame_list[0].channel
        gate_index = np.array([frame.gate_index for frame in frame_list], dtype=np.int64)
        codes = np.stack([np.asarray(frame.samples) for frame in frame_list])

    peak_v, peak_sample, withheld, state = process_codes(codes, config, adc)
    click = (peak_v > config.v_th) & ~withheld
    logger.debug(
        f"channel {channel}: {len(gate_index)} frames, accepted {state.accepted_count}, "
        f"rejected {state.rejected_count}, clicks {int(click.sum())}"
    )
    decisions = DecisionStream(
        channel=channel,
        gate_index=gate_index,
        click=click,
        peak_v=peak_v,
        peak_sample=peak_sample,
        withheld=withheld,
        v_th=config.v_th,
    )
    return decisions, state
