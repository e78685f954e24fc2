"""
Hardware design checks: bond-wire RF bandwidth and conducted thermal load.

The RF link is a lumped two-port (series wire inductance, shunt pad
capacitance) between matched source and load; its transmission is
computed from cascaded ABCD matrices. The thermal check sums Fourier
conduction through each wire group of the harness and compares the total
against the cooler's budget.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from spadsim.constants import THERMAL_BUDGET_MW
from spadsim.exceptions import SpadSimError
from spadsim.schemas import RfLinkSpec, WireSpec
from spadsim.utils.logging import get_logger

logger = get_logger(__name__)

# Longest wire the length search will consider
MAX_SEARCH_LENGTH_MM = 1.0e4

_BISECTION_STEPS = 80


class HwBudgetError(SpadSimError):
    """Custom exception for hardware-check related errors."""

    pass


@dataclass(frozen=True)
class BandwidthResult:
    f_3db_hz: float
    reached_ceiling: bool


@dataclass(frozen=True)
class LengthResult:
    length_mm: float
    at_bound: bool
    f_3db_hz: float


@dataclass(frozen=True)
class WireFlux:
    material: str
    count: int
    flux_mw: float


@dataclass(frozen=True)
class ThermalResult:
    total_mw: float
    per_wire: List[WireFlux]


@dataclass(frozen=True)
class BudgetResult:
    passed: bool
    flux_mw: float
    budget_mw: float
    margin_mw: float


def series_impedance_abcd(z: np.ndarray) -> np.ndarray:
    """ABCD matrices of a series impedance, one per frequency."""
    abcd = np.zeros(z.shape + (2, 2), dtype=complex)
    abcd[..., 0, 0] = 1.0
    abcd[..., 0, 1] = z
    abcd[..., 1, 1] = 1.0
    return abcd


def shunt_admittance_abcd(y: np.ndarray) -> np.ndarray:
    """ABCD matrices of a shunt admittance, one per frequency."""
    abcd = np.zeros(y.shape + (2, 2), dtype=complex)
    abcd[..., 0, 0] = 1.0
    abcd[..., 1, 0] = y
    abcd[..., 1, 1] = 1.0
    return abcd


def s21_from_abcd(abcd: np.ndarray, z0: float) -> np.ndarray:
    """Forward transmission of a two-port between equal real terminations."""
    a, b, c, d = abcd[..., 0, 0], abcd[..., 0, 1], abcd[..., 1, 0], abcd[..., 1, 1]
    return 2.0 / (a + b / z0 + c * z0 + d)


def s21_response(spec: RfLinkSpec, freqs_hz: Sequence[float]) -> np.ndarray:
    """
    Complex S21 of the bond-wire link at the given frequencies.

    Args:
        spec: Link description.
        freqs_hz: Evaluation frequencies.

    Returns:
        np.ndarray: Complex transmission, one value per frequency.
    """
    omega = 2.0 * math.pi * np.asarray(freqs_hz, dtype=float)
    chain = series_impedance_abcd(1j * omega * spec.inductance_h) @ shunt_admittance_abcd(
        1j * omega * spec.shunt_c_f
    )
    return s21_from_abcd(chain, spec.z0_ohm)


def _magnitude(spec: RfLinkSpec, f_hz: float) -> float:
    return float(np.abs(s21_response(spec, [f_hz])[0]))


def rf_bandwidth(spec: RfLinkSpec) -> BandwidthResult:
    """
    -3 dB bandwidth of the link.

    ``|S21|`` is evaluated on ``n_points`` frequencies from DC to
    ``f_max_hz``; the first grid interval where it falls below
    ``1/sqrt(2)`` of its DC value is bisected to the crossing.

    Returns:
        BandwidthResult: Crossing frequency, or ``f_max_hz`` with
        ``reached_ceiling`` set when the response never drops 3 dB.
    """
    freqs = np.linspace(0.0, spec.f_max_hz, spec.n_points)
    magnitude = np.abs(s21_response(spec, freqs))
    level = magnitude[0] / math.sqrt(2.0)
    below = np.flatnonzero(magnitude < level)
    if below.size == 0:
        return BandwidthResult(f_3db_hz=spec.f_max_hz, reached_ceiling=True)

    # Refine the first grid crossing
    hi = float(freqs[below[0]])
    lo = float(freqs[below[0] - 1])
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if _magnitude(spec, mid) < level:
            hi = mid
        else:
            lo = mid
    return BandwidthResult(f_3db_hz=0.5 * (lo + hi), reached_ceiling=False)


def min_length_for_bandwidth(spec: RfLinkSpec, target_hz: float) -> LengthResult:
    """
    Longest wire that still supports ``target_hz`` of bandwidth.

    Bandwidth falls monotonically with length, so the length at which
    ``rf_bandwidth`` equals the target is found by bisection between zero
    and ``MAX_SEARCH_LENGTH_MM``.

    Args:
        spec: Link template; its ``wire_length_mm`` is ignored.
        target_hz: Required bandwidth, below ``f_max_hz``.

    Returns:
        LengthResult: The length, flagged ``at_bound`` when even the
        search bound still exceeds the target.

    Raises:
        HwBudgetError: If the target is at or above the ceiling, or is
            unattainable even with a zero-length wire.
    """
    if not 0.0 < target_hz < spec.f_max_hz:
        raise HwBudgetError(f"target bandwidth {target_hz} Hz must lie in (0, {spec.f_max_hz}) Hz")

    def bandwidth(length_mm: float) -> float:
        return rf_bandwidth(spec.model_copy(update={"wire_length_mm": length_mm})).f_3db_hz

    at_zero = bandwidth(0.0)
    if at_zero < target_hz:
        raise HwBudgetError(
            f"target {target_hz / 1e9:.3f} GHz unattainable: zero-length link reaches only "
            f"{at_zero / 1e9:.3f} GHz"
        )
    at_max = bandwidth(MAX_SEARCH_LENGTH_MM)
    if at_max >= target_hz:
        logger.warning(f"Target {target_hz} Hz still met at the {MAX_SEARCH_LENGTH_MM} mm search bound")
        return LengthResult(length_mm=MAX_SEARCH_LENGTH_MM, at_bound=True, f_3db_hz=at_max)

    # Bandwidth falls with length
    lo, hi = 0.0, MAX_SEARCH_LENGTH_MM
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if bandwidth(mid) >= target_hz:
            lo = mid
        else:
            hi = mid
    return LengthResult(length_mm=lo, at_bound=False, f_3db_hz=bandwidth(lo))


def thermal_flux(wires: Sequence[WireSpec], delta_t_k: float) -> ThermalResult:
    """
    Conducted heat load of a wire harness, ``count * k * A * dT / L`` per group.

    Args:
        wires: Wire groups.
        delta_t_k: Warm-side minus cold-side temperature (>= 0).

    Returns:
        ThermalResult: Total and per-group flux in mW.

    Raises:
        HwBudgetError: If ``delta_t_k`` is negative.
    """
    if delta_t_k < 0:
        raise HwBudgetError(f"delta_t_k must be >= 0, got {delta_t_k}")
    per_wire = [
        WireFlux(
            material=wire.material,
            count=wire.count,
            flux_mw=1e3 * wire.count * wire.conductivity_k * wire.cross_section_m2 * delta_t_k / wire.length_m,
        )
        for wire in wires
    ]
    return ThermalResult(total_mw=sum(w.flux_mw for w in per_wire), per_wire=per_wire)


def budget_check(flux_mw: float, budget_mw: Optional[float] = None) -> BudgetResult:
    """Pass when the flux does not exceed the budget (inclusive)."""
    budget = THERMAL_BUDGET_MW if budget_mw is None else budget_mw
    return BudgetResult(
        passed=flux_mw <= budget,
        flux_mw=flux_mw,
        budget_mw=budget,
        margin_mw=budget - flux_mw,
    )
