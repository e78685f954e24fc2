import math

import numpy as np
import pytest

from spadsim.constants import DEFAULT_HARNESS
from spadsim.schemas import HwSpec, RfLinkSpec, WireSpec
from spadsim.services.hwbudget import (
    HwBudgetError,
    budget_check,
    min_length_for_bandwidth,
    rf_bandwidth,
    s21_response,
    thermal_flux,
)


def _closed_form(z0: float, inductance_h: float) -> float:
    return 2.0 * z0 / (2.0 * math.pi * inductance_h)


def test_zero_length_link_is_flat():
    result = rf_bandwidth(RfLinkSpec(wire_length_mm=0.0))
    assert result.reached_ceiling
    assert result.f_3db_hz == RfLinkSpec().f_max_hz


def test_five_mm_bond_wire_bandwidth():
    result = rf_bandwidth(RfLinkSpec(wire_length_mm=5.0, wire_inductance_per_mm=1e-9))
    assert not result.reached_ceiling
    assert result.f_3db_hz == pytest.approx(3.183e9, rel=0.005)


@pytest.mark.parametrize("inductance_nh", [0.5, 1.0, 2.0, 5.0, 10.0, 20.0])
def test_series_inductor_matches_closed_form(inductance_nh):
    spec = RfLinkSpec(wire_length_mm=inductance_nh, wire_inductance_per_mm=1e-9, f_max_hz=100e9)
    expected = _closed_form(spec.z0_ohm, spec.inductance_h)
    assert rf_bandwidth(spec).f_3db_hz == pytest.approx(expected, rel=0.005)


def test_bandwidth_decreases_with_length():
    bandwidths = [rf_bandwidth(RfLinkSpec(wire_length_mm=mm)).f_3db_hz for mm in range(1, 11)]
    assert all(a > b for a, b in zip(bandwidths, bandwidths[1:]))


def test_link_is_passive():
    spec = RfLinkSpec(wire_length_mm=5.0, shunt_c_f=1e-12)
    freqs = np.linspace(0.0, spec.f_max_hz, spec.n_points)
    assert np.all(np.abs(s21_response(spec, freqs)) <= 1.0 + 1e-9)
    assert np.abs(s21_response(spec, [0.0])[0]) == pytest.approx(1.0)


def test_shunt_capacitance_lowers_bandwidth():
    bare = rf_bandwidth(RfLinkSpec(wire_length_mm=5.0)).f_3db_hz
    loaded = rf_bandwidth(RfLinkSpec(wire_length_mm=5.0, shunt_c_f=0.5e-12)).f_3db_hz
    assert loaded < bare


def test_max_length_for_three_gigahertz():
    result = min_length_for_bandwidth(RfLinkSpec(), 3.0e9)
    assert not result.at_bound
    assert result.length_mm == pytest.approx(5.305, rel=0.02)
    assert result.length_mm >= 5.0
    assert result.f_3db_hz == pytest.approx(3.0e9, rel=1e-6)


def test_max_length_round_trip():
    spec = RfLinkSpec(wire_length_mm=3.0, shunt_c_f=0.2e-12)
    target = rf_bandwidth(spec).f_3db_hz
    assert min_length_for_bandwidth(spec, target).length_mm == pytest.approx(3.0, abs=1e-3)


def test_degenerate_target_returns_bound():
    result = min_length_for_bandwidth(RfLinkSpec(), 1.0)
    assert result.at_bound
    assert result.length_mm > 1e3


def test_unattainable_target_is_an_error():
    with pytest.raises(HwBudgetError):
        min_length_for_bandwidth(RfLinkSpec(shunt_c_f=1e-12), 8.0e9)
    with pytest.raises(HwBudgetError):
        min_length_for_bandwidth(RfLinkSpec(), 25e9)


def test_thermal_flux_of_empty_harness():
    assert thermal_flux([], 100.0).total_mw == 0.0


def test_thermal_flux_is_linear():
    wire = WireSpec(count=3, conductivity_k=315.0, cross_section_m2=1e-9, length_m=2e-3)
    base = thermal_flux([wire], 50.0).total_mw
    assert base == pytest.approx(3 * 315.0 * 1e-9 * 50.0 / 2e-3 * 1e3)
    assert thermal_flux([wire], 100.0).total_mw == pytest.approx(2 * base, rel=1e-15)
    doubled_area = wire.model_copy(update={"cross_section_m2": 2e-9})
    assert thermal_flux([doubled_area], 50.0).total_mw == pytest.approx(2 * base, rel=1e-15)
    doubled_count = wire.model_copy(update={"count": 6})
    assert thermal_flux([doubled_count], 50.0).total_mw == pytest.approx(2 * base, rel=1e-15)


def test_thermal_flux_rejects_negative_delta():
    with pytest.raises(HwBudgetError):
        thermal_flux([], -1.0)


def test_default_harness_fits_budget():
    spec = HwSpec()
    result = thermal_flux(spec.wires, spec.delta_t_k)
    assert len(result.per_wire) == len(DEFAULT_HARNESS)
    assert 150.0 <= result.total_mw <= 250.0
    assert result.total_mw == pytest.approx(193.1, abs=0.1)
    check = budget_check(result.total_mw, spec.budget_mw)
    assert check.passed and check.margin_mw > 0


@pytest.mark.parametrize(
    "flux,passed,margin",
    [(200.0, True, 50.0), (250.0, True, 0.0), (300.0, False, -50.0)],
)
def test_budget_check(flux, passed, margin):
    check = budget_check(flux)
    assert check.passed is passed
    assert check.margin_mw == pytest.approx(margin)
