"""
Key-rate service: gain, QBER and the Shor–Preskill secret-key rate.

The receiver model is the standard weak-coherent, two-detector one: signal
clicks arrive with probability ``1 - exp(-mu * t)`` and err with the
misalignment probability, and dark-only clicks err half of the time. The
dark-count gain compares the rate at a reduced dark probability against the
baseline, and ``find_gain_crossing`` locates a loss at which that gain
equals a target by grid search followed by bisection.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from spadsim.constants import TARGET_GAIN_RATIO
from spadsim.exceptions import SpadSimError
from spadsim.schemas import KeyRateParams
from spadsim.utils.logging import get_logger

logger = get_logger(__name__)


class KeyRateError(SpadSimError):
    """Custom exception for key-rate related errors."""

    pass


@dataclass(frozen=True)
class RatePoint:
    """Rate-model output at one parameter point."""

    loss_db: float
    mu: float
    p_dk: float
    gain: float
    qber: float
    rate: float

    def csv_values(self) -> list:
        return [self.loss_db, self.mu, self.p_dk, self.gain, self.qber, self.rate]


@dataclass(frozen=True)
class GainCrossing:
    """Loss at which the dark-count gain equals the target ratio."""

    loss_db: float
    ratio: float
    target: float


def binary_entropy(e: float) -> float:
    """
    Binary Shannon entropy H2(e) in bits, with H2(0) = H2(1) = 0.

    Raises:
        KeyRateError: If ``e`` lies outside [0, 1].
    """
    if not 0.0 <= e <= 1.0 or math.isnan(e):
        raise KeyRateError(f"binary entropy is defined on [0, 1], got {e}")
    if e == 0.0 or e == 1.0:
        return 0.0
    return -e * math.log2(e) - (1.0 - e) * math.log2(1.0 - e)


def transmittance(params: KeyRateParams) -> float:
    """Overall transmittance: detector efficiency times channel loss."""
    return params.eta_det * 10.0 ** (-params.channel_loss_db / 10.0)


def gain_and_qber(params: KeyRateParams) -> tuple[float, float]:
    """
    Gain Q and QBER E of the two-detector receiver.

    ``Q = 1 - (1 - p_sig)(1 - 2 p_dk)`` and
    ``E = (e_det * p_sig + 0.5 * (Q - p_sig)) / Q``, both clamped to their
    valid ranges.

    Returns:
        tuple[float, float]: (Q, E).

    Raises:
        KeyRateError: If Q is zero, which leaves E undefined.
    """
    p_sig = -math.expm1(-params.mu * transmittance(params))
    # Q - p_sig = 2 p_dk (1 - p_sig)
    dark = 2.0 * params.p_dk * (1.0 - p_sig)
    gain = p_sig + dark
    gain = min(max(gain, 0.0), 1.0)
    if gain <= 0.0:
        raise KeyRateError("gain is zero: no detection events, QBER undefined")
    qber = (params.e_det * p_sig + 0.5 * dark) / gain
    return gain, min(max(qber, 0.0), 0.5)


def shor_preskill_rate(gain: float, qber: float, sift_q: float = 0.5, f_ec: float = 1.0) -> float:
    """
    Secret-key rate per pulse, ``max(0, q Q (1 - f_ec H2(E) - H2(E)))``.

    Raises:
        KeyRateError: If an input is out of range.
    """
    if not 0.0 <= gain <= 1.0:
        raise KeyRateError(f"gain must lie in [0, 1], got {gain}")
    if not 0.0 < sift_q <= 1.0:
        raise KeyRateError(f"sift_q must lie in (0, 1], got {sift_q}")
    if f_ec < 1.0:
        raise KeyRateError(f"f_ec must be >= 1, got {f_ec}")
    h = binary_entropy(qber)
    return max(0.0, sift_q * gain * (1.0 - f_ec * h - h))


def key_rate(params: KeyRateParams) -> float:
    """Shor–Preskill rate per pulse for a full parameter set."""
    gain, qber = gain_and_qber(params)
    return shor_preskill_rate(gain, qber, params.sift_q, params.f_ec)


def shor_preskill_threshold(f_ec: float = 1.0) -> float:
    """QBER at which ``1 - (1 + f_ec) H2(E)`` vanishes (about 0.11 for f_ec = 1)."""
    return brentq(lambda e: 1.0 - (1.0 + f_ec) * binary_entropy(e), 1e-9, 0.5, xtol=1e-12)


def dark_count_gain(params: KeyRateParams, reduction_factor: float = 10.0) -> float:
    """
    Rate ratio obtained by dividing the dark probability by ``reduction_factor``.

    Returns:
        float: R(p_dk / factor) / R(p_dk).

    Raises:
        KeyRateError: If the baseline regime produces no key.
    """
    if reduction_factor < 1.0:
        raise KeyRateError(f"reduction_factor must be >= 1, got {reduction_factor}")
    baseline = key_rate(params)
    if baseline <= 0.0:
        raise KeyRateError("baseline regime produces no key")
    improved = key_rate(params.model_copy(update={"p_dk": params.p_dk / reduction_factor}))
    return improved / baseline


def rate_grid(
    base: KeyRateParams,
    losses_db: Sequence[float],
    mus: Optional[Sequence[float]] = None,
    p_dks: Optional[Sequence[float]] = None,
) -> List[RatePoint]:
    """
    Evaluate gain, QBER and rate over a (loss, mu, p_dk) grid.

    Points whose gain is zero are reported with Q = 0, E = 0.5, R = 0.
    """
    points = []
    for loss in losses_db:
        for mu in mus if mus is not None else [base.mu]:
            for p_dk in p_dks if p_dks is not None else [base.p_dk]:
                params = base.model_copy(update={"channel_loss_db": float(loss), "mu": float(mu), "p_dk": float(p_dk)})
                try:
                    gain, qber = gain_and_qber(params)
                    rate = shor_preskill_rate(gain, qber, params.sift_q, params.f_ec)
                except KeyRateError:
                    gain, qber, rate = 0.0, 0.5, 0.0
                points.append(RatePoint(float(loss), float(mu), float(p_dk), gain, qber, rate))
    return points


def gain_curve(
    base: KeyRateParams, losses_db: Sequence[float], reduction_factor: float = 10.0
) -> List[tuple[float, float]]:
    """
    Dark-count gain versus loss; losses where the baseline yields no key are skipped.
    """
    curve = []
    for loss in losses_db:
        params = base.model_copy(update={"channel_loss_db": float(loss)})
        try:
            curve.append((float(loss), dark_count_gain(params, reduction_factor)))
        except KeyRateError:
            continue
    return curve


def find_gain_crossing(
    base: KeyRateParams,
    losses_db: Sequence[float],
    target: float = TARGET_GAIN_RATIO,
    reduction_factor: float = 10.0,
    tol_db: float = 1e-6,
) -> Optional[GainCrossing]:
    """
    Grid-search oracle for the loss at which the dark-count gain equals ``target``.

    Scans the loss grid for the first pair of neighbouring points whose
    gains bracket the target, then bisects on loss.

    Returns:
        Optional[GainCrossing]: The crossing, or None if the grid never brackets it.
    """
    curve = gain_curve(base, sorted(losses_db), reduction_factor)

    def offset(loss: float) -> float:
        params = base.model_copy(update={"channel_loss_db": loss})
        return dark_count_gain(params, reduction_factor) - target

    for (lo, ratio_lo), (hi, ratio_hi) in zip(curve, curve[1:]):
        if (ratio_lo - target) * (ratio_hi - target) > 0:
            continue
        # Bisect inside the bracketing interval
        while hi - lo > tol_db:
            mid = 0.5 * (lo + hi)
            if (offset(lo) > 0) == (offset(mid) > 0):
                lo = mid
            else:
                hi = mid
        loss = 0.5 * (lo + hi)
        ratio = offset(loss) + target
        logger.info(f"Dark-count gain {ratio:.3f} reached at {loss:.4f} dB")
        return GainCrossing(loss_db=loss, ratio=ratio, target=target)
    logger.warning(f"Gain curve never crosses {target} on the given loss grid")
    return None


def monte_carlo_gain_qber(params: KeyRateParams, trials: int, seed: int = 0) -> tuple[float, float, float, float]:
    """
    Gate-by-gate click simulation of the receiver model.

    Each pulse carries Poisson(mu) photons, each surviving with probability
    t; a dark event (probability 2 p_dk) fires independently. Signal clicks
    err with e_det, dark-only clicks err with probability 1/2.

    Returns:
        tuple: (Q, E, standard error of Q, standard error of E).
    """
    rng = np.random.default_rng(seed)
    t = transmittance(params)
    clicks = 0
    errors = 0
    chunk = 1_000_000
    remaining = trials
    # Chunked to bound memory
    while remaining > 0:
        n = min(chunk, remaining)
        photons = rng.binomial(rng.poisson(params.mu, size=n), t)
        signal = photons > 0
        dark = rng.random(n) < 2.0 * params.p_dk
        click = signal | dark
        err = np.where(signal, rng.random(n) < params.e_det, rng.random(n) < 0.5) & click
        clicks += int(click.sum())
        errors += int(err.sum())
        remaining -= n
    gain = clicks / trials
    qber = errors / clicks if clicks else 0.5
    se_gain = math.sqrt(gain * (1.0 - gain) / trials)
    se_qber = math.sqrt(qber * (1.0 - qber) / clicks) if clicks else 0.0
    return gain, qber, se_gain, se_qber
