"""
Detector characterisation: P_PD / P_DK estimation and threshold sweeps.

Lit and dark gates come from the illumination pattern (alternating by
default), withheld warm-up decisions are excluded, and every proportion is
reported with a 95% Wilson score interval. A sweep simulates and
compensates one frame stream and evaluates every threshold on it, so rows
differ only in V_th.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from spadsim.exceptions import SpadSimError
from spadsim.schemas import CompensatorConfig, Illumination, Scenario
from spadsim.services.compensator import DecisionStream, process_stream
from spadsim.services.sigmodel import SimulationResult, simulate_gate_train
from spadsim.utils.logging import get_logger
from spadsim.utils.validation import validate_thresholds

logger = get_logger(__name__)

WILSON_Z = float(norm.ppf(0.975))


class CharStatsError(SpadSimError):
    """Custom exception for characterisation related errors."""

    pass


class InsufficientDataError(CharStatsError):
    """Raised when a lit or dark gate class has no counted gates."""

    pass


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z) -> Tuple[float, float]:
    """
    Wilson score interval of a binomial proportion.

    Args:
        successes: Observed successes.
        trials: Number of trials (> 0).
        z: Normal quantile (95% two-sided by default).

    Returns:
        Tuple[float, float]: (lower, upper), always bracketing successes/trials.
    """
    if trials <= 0:
        raise InsufficientDataError("Wilson interval needs at least one trial")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    centre = (p + z2 / (2.0 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials)) / denom
    return min(max(0.0, centre - half), p), max(min(1.0, centre + half), p)


@dataclass(frozen=True)
class SweepRow:
    """One operating point of a sweep."""

    v_th: float
    gates_lit: int
    clicks_lit: int
    gates_dark: int
    clicks_dark: int
    p_pd: float
    p_pd_ci_lo: float
    p_pd_ci_hi: float
    p_dk: float
    p_dk_ci_lo: float
    p_dk_ci_hi: float
    efficiency_est: Optional[float] = None
    frame_checksum: str = ""

    def csv_values(self) -> list:
        """Values in ``SWEEP_HEADER`` order."""
        return list(astuple(self))[:11]


@dataclass
class SweepResult:
    """Rows of a threshold sweep, in threshold order."""

    rows: List[SweepRow]
    channel: int = 0

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def v_th(self) -> np.ndarray:
        return np.array([row.v_th for row in self.rows])

    @property
    def p_pd(self) -> np.ndarray:
        return np.array([row.p_pd for row in self.rows])

    @property
    def p_dk(self) -> np.ndarray:
        return np.array([row.p_dk for row in self.rows])


def _lit_for(decisions: DecisionStream, pattern: Union[Illumination, np.ndarray]) -> np.ndarray:
    if isinstance(pattern, Illumination):
        return pattern.lit_mask(0, int(decisions.gate_index.max()) + 1)[decisions.gate_index]
    pattern = np.asarray(pattern, dtype=bool)
    if pattern.shape[0] <= int(decisions.gate_index.max()):
        raise CharStatsError("illumination pattern is shorter than the decision stream")
    return pattern[decisions.gate_index]


def count_statistics(
    decisions: DecisionStream,
    pattern: Union[Illumination, np.ndarray],
    poisson_mu: Optional[float] = None,
    frame_checksum: str = "",
) -> SweepRow:
    """
    P_PD and P_DK of a decision stream.

    Args:
        decisions: Decisions of one channel.
        pattern: Illumination pattern or boolean lit mask indexed by gate_index.
        poisson_mu: Mean photon number of lit gates; enables the
            Poisson-corrected efficiency estimate.
        frame_checksum: Checksum of the frames the decisions came from.

    Returns:
        SweepRow: Counts, proportions and Wilson intervals at the stream's V_th.

    Raises:
        InsufficientDataError: If no counted lit or no counted dark gate exists.
    """
    if len(decisions) == 0:
        raise InsufficientDataError("empty decision stream")
    # Split counted gates into lit and dark classes
    lit = _lit_for(decisions, pattern)
    counted = decisions.counted
    click = decisions.click & counted

    gates_lit = int(np.count_nonzero(counted & lit))
    gates_dark = int(np.count_nonzero(counted & ~lit))
    if gates_lit == 0 or gates_dark == 0:
        raise InsufficientDataError(
            f"need lit and dark gates, got {gates_lit} lit and {gates_dark} dark"
        )
    clicks_lit = int(np.count_nonzero(click & lit))
    clicks_dark = int(np.count_nonzero(click & ~lit))
    p_pd = clicks_lit / gates_lit
    p_dk = clicks_dark / gates_dark

    # Poisson-corrected efficiency
    efficiency = None
    if poisson_mu is not None:
        if p_pd >= 1.0:
            efficiency = 1.0
        elif p_dk >= 1.0:
            # Saturated dark gates: the estimate's limit is zero
            logger.warning(f"every dark gate clicks at V_th={decisions.v_th}; efficiency estimate clamped to 0")
            efficiency = 0.0
        else:
            efficiency = -math.log((1.0 - p_pd) / (1.0 - p_dk)) / poisson_mu
            efficiency = min(max(efficiency, 0.0), 1.0)

    return SweepRow(
        decisions.v_th,
        gates_lit,
        clicks_lit,
        gates_dark,
        clicks_dark,
        p_pd,
        *wilson_interval(clicks_lit, gates_lit),
        p_dk,
        *wilson_interval(clicks_dark, gates_dark),
        efficiency_est=efficiency,
        frame_checksum=frame_checksum,
    )


def threshold_sweep(
    scenario: Scenario,
    thresholds: Sequence[float],
    compensator: Optional[CompensatorConfig] = None,
    channel: int = 0,
    threads: int = 1,
    reprocess: bool = False,
    poisson_mu: Optional[float] = None,
    simulation: Optional[SimulationResult] = None,
) -> SweepResult:
    """
    P_PD / P_DK versus discrimination level on one frame stream.

    The scenario is simulated once. By default the compensator runs once
    and each threshold is applied to the per-gate peaks, which are
    independent of V_th; with ``reprocess`` every threshold re-runs the
    full compensator on the same frames (in parallel over ``threads``).

    Args:
        scenario: Experiment to simulate.
        thresholds: Strictly increasing V_th values in volts.
        compensator: Compensator settings (its v_th is replaced per row).
        channel: Channel to characterise.
        threads: Worker threads.
        reprocess: Re-run the compensator for every threshold.
        poisson_mu: Mean photon number for the corrected efficiency
            (defaults to the scenario's when its illumination is Poisson).
        simulation: Pre-computed simulation of ``scenario`` to reuse.

    Returns:
        SweepResult: Rows in threshold order.

    Raises:
        CharStatsError: If the thresholds are invalid or the channel does not exist.
    """
    is_valid, error = validate_thresholds(thresholds)
    if not is_valid:
        raise CharStatsError(error)
    if not 0 <= channel < scenario.n_channels:
        raise CharStatsError(f"scenario has no channel {channel}")
    compensator = compensator or CompensatorConfig()
    if poisson_mu is None and scenario.illumination.kind == "poisson":
        poisson_mu = scenario.illumination.mu_gate

    # Simulate once, every row shares the frames
    simulation = simulation or simulate_gate_train(scenario, threads=threads)
    frames = simulation.frames[channel]
    checksum = frames.checksum()

    if reprocess:
        def run(v_th: float) -> DecisionStream:
            config = compensator.model_copy(update={"v_th": float(v_th)})
            return process_stream(frames, config, scenario.adc)[0]

        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            streams = list(pool.map(run, thresholds))
    else:
        base, _ = process_stream(frames, compensator, scenario.adc)
        streams = [base.at_threshold(float(v_th)) for v_th in thresholds]

    rows = [
        count_statistics(stream, scenario.illumination, poisson_mu, checksum) for stream in streams
    ]
    logger.info(f"Sweep over {len(rows)} thresholds on channel {channel} ({len(frames)} gates)")
    return SweepResult(rows=rows, channel=channel)


def p_dk_at_efficiency(sweep: SweepResult, target_p_pd: float) -> Tuple[float, float]:
    """
    Threshold and dark probability at which a sweep reaches ``target_p_pd``.

    The threshold is interpolated linearly between the bracketing rows; the
    dark probability is interpolated log-linearly (linearly if either
    bracketing value is zero).

    Returns:
        Tuple[float, float]: (v_th, p_dk) at the target efficiency.

    Raises:
        CharStatsError: If the sweep does not bracket the target.
    """
    v_th, p_pd, p_dk = sweep.v_th, sweep.p_pd, sweep.p_dk
    if len(sweep) == 0 or not p_pd.min() <= target_p_pd <= p_pd.max():
        raise CharStatsError(
            f"target P_PD {target_p_pd} outside sweep range "
            f"[{p_pd.min() if len(sweep) else 'n/a'}, {p_pd.max() if len(sweep) else 'n/a'}]"
        )
    for i in range(len(sweep)):
        if p_pd[i] == target_p_pd:
            return float(v_th[i]), float(p_dk[i])
        if i + 1 < len(sweep) and p_pd[i] > target_p_pd > p_pd[i + 1]:
            frac = (p_pd[i] - target_p_pd) / (p_pd[i] - p_pd[i + 1])
            v = v_th[i] + frac * (v_th[i + 1] - v_th[i])
            if p_dk[i] > 0 and p_dk[i + 1] > 0:
                dark = math.exp(math.log(p_dk[i]) + frac * (math.log(p_dk[i + 1]) - math.log(p_dk[i])))
            else:
                dark = p_dk[i] + frac * (p_dk[i + 1] - p_dk[i])
            return float(v), float(dark)
    raise CharStatsError(f"P_PD is not monotone around target {target_p_pd}")


def dark_at_matched_efficiency(sweep_a: SweepResult, sweep_b: SweepResult, target_p_pd: float) -> float:
    """
    Ratio of dark probabilities of two detectors at equal P_PD.

    Args:
        sweep_a: Sweep of the detector under test.
        sweep_b: Sweep of the reference detector.
        target_p_pd: Efficiency at which both are compared.

    Returns:
        float: p_dk_a / p_dk_b at the target efficiency.

    Raises:
        CharStatsError: If either sweep does not bracket the target or the
            reference has zero dark probability there.
    """
    _, dark_a = p_dk_at_efficiency(sweep_a, target_p_pd)
    _, dark_b = p_dk_at_efficiency(sweep_b, target_p_pd)
    if dark_b <= 0.0:
        raise CharStatsError("reference detector has zero dark probability at the target P_PD")
    return dark_a / dark_b
