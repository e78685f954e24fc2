import math

import numpy as np
import pytest

from spadsim.schemas import CompensatorConfig, DeviceProfile, Illumination
from spadsim.services.charstats import (
    CharStatsError,
    InsufficientDataError,
    SweepResult,
    SweepRow,
    count_statistics,
    dark_at_matched_efficiency,
    p_dk_at_efficiency,
    threshold_sweep,
    wilson_interval,
)
from spadsim.services.compensator import DecisionStream, process_stream
from spadsim.services.sigmodel import avalanche_pulse, simulate_gate_train
from tests.conftest import make_scenario


def _stream(click, withheld=None, v_th=0.01):
    click = np.asarray(click, dtype=bool)
    n = click.shape[0]
    return DecisionStream(
        channel=0,
        gate_index=np.arange(n),
        click=click,
        peak_v=np.where(click, 1.0, 0.0),
        peak_sample=np.zeros(n, dtype=np.int64),
        withheld=np.zeros(n, dtype=bool) if withheld is None else np.asarray(withheld),
        v_th=v_th,
    )


def _row(v_th, p_pd, p_dk):
    return SweepRow(v_th, 1000, int(p_pd * 1000), 1000, int(p_dk * 1000), p_pd, 0, 1, p_dk, 0, 1)


def test_wilson_interval_known_value():
    lo, hi = wilson_interval(5, 10)
    assert lo == pytest.approx(0.2366, abs=1e-3)
    assert hi == pytest.approx(0.7634, abs=1e-3)


@pytest.mark.parametrize("k,n", [(0, 10), (10, 10), (1, 1000), (999, 1000), (3, 7)])
def test_wilson_interval_brackets_proportion(k, n):
    lo, hi = wilson_interval(k, n)
    assert 0.0 <= lo <= k / n <= hi <= 1.0


def test_wilson_interval_coverage():
    rng = np.random.default_rng(17)
    p, n = 0.02, 10_000
    hits = 0
    for k in rng.binomial(n, p, size=1000):
        lo, hi = wilson_interval(int(k), n)
        hits += lo <= p <= hi
    assert hits / 1000 >= 0.93


def test_count_statistics_no_clicks():
    row = count_statistics(_stream(np.zeros(10)), Illumination(kind="alternating"))
    assert row.p_pd == 0.0 and row.p_dk == 0.0
    assert row.gates_lit == 5 and row.gates_dark == 5


def test_count_statistics_all_lit_gates_click():
    click = np.arange(10) % 2 == 0
    row = count_statistics(_stream(click), Illumination(kind="alternating"))
    assert row.p_pd == 1.0 and row.p_dk == 0.0
    assert row.p_pd_ci_hi == 1.0


def test_count_statistics_excludes_withheld():
    click = np.ones(10, dtype=bool)
    withheld = np.arange(10) < 4
    row = count_statistics(_stream(click & ~withheld, withheld), Illumination(kind="alternating"))
    assert row.gates_lit + row.gates_dark == 6
    assert row.clicks_lit == 3


def test_count_statistics_requires_both_classes():
    with pytest.raises(InsufficientDataError):
        count_statistics(_stream(np.zeros(10)), Illumination(kind="all_lit"))


def test_count_statistics_accepts_explicit_mask():
    mask = np.array([True, False] * 5)
    row = count_statistics(_stream(mask), mask)
    assert row.p_pd == 1.0
    with pytest.raises(CharStatsError):
        count_statistics(_stream(mask), mask[:4])


@pytest.mark.slow
def test_poisson_corrected_efficiency():
    scenario = make_scenario(
        n_gates=200_000,
        device={"efficiency_eta": 0.1, "dark_prob_per_gate": 1e-3},
        illumination=Illumination(kind="poisson", mu_gate=1.0),
    )
    sweep = threshold_sweep(scenario, [0.008], CompensatorConfig())
    row = sweep.rows[0]
    sigma_eff = math.sqrt(row.p_pd * (1 - row.p_pd) / row.gates_lit) / (1 - row.p_pd)
    assert abs(row.efficiency_est - 0.1) < 4 * sigma_eff
    assert abs(row.p_dk - 1e-3) < 4 * math.sqrt(1e-3 / row.gates_dark)


def test_sweep_recovers_injected_rates_and_is_monotone():
    eta, dark = 0.3, 0.01
    scenario = make_scenario(n_gates=20_000, device={"efficiency_eta": eta, "dark_prob_per_gate": dark})
    thresholds = np.linspace(0.008, 0.08, 20)
    sweep = threshold_sweep(scenario, thresholds, CompensatorConfig())

    assert len(sweep) == 20
    assert np.all(np.diff(sweep.p_pd) <= 0)
    assert np.all(np.diff(sweep.p_dk) <= 0)
    assert np.all(sweep.p_pd >= sweep.p_dk)
    assert len({row.frame_checksum for row in sweep.rows}) == 1

    plateau = sweep.rows[0]
    expected_pd = 1 - (1 - eta) * (1 - dark)
    assert abs(plateau.p_pd - expected_pd) < 4 * math.sqrt(expected_pd * (1 - expected_pd) / plateau.gates_lit)
    assert abs(plateau.p_dk - dark) < 4 * math.sqrt(dark * (1 - dark) / plateau.gates_dark)


@pytest.mark.slow
def test_default_sweep_recovers_device_rates():
    eta, dark = 0.1, 1e-4
    scenario = make_scenario(n_gates=100_000)
    sweep = threshold_sweep(scenario, np.linspace(0.008, 0.08, 20), CompensatorConfig())

    assert np.all(np.diff(sweep.p_pd) <= 0)
    assert np.all(np.diff(sweep.p_dk) <= 0)
    plateau = sweep.rows[0]
    expected_pd = 1 - (1 - eta) * (1 - dark)
    assert abs(plateau.p_pd - expected_pd) <= 3 * math.sqrt(expected_pd * (1 - expected_pd) / plateau.gates_lit)
    assert abs(plateau.p_dk - dark) <= 3 * math.sqrt(dark * (1 - dark) / plateau.gates_dark)


def test_efficiency_estimate_with_every_dark_gate_clicking():
    click = np.ones(10, dtype=bool)
    click[0] = False
    row = count_statistics(_stream(click), Illumination(kind="alternating"), poisson_mu=0.1)
    assert row.p_dk == 1.0
    assert row.p_pd == pytest.approx(0.8)
    assert row.efficiency_est == 0.0


def test_single_threshold_sweep_equals_count_statistics():
    scenario = make_scenario(n_gates=3000, device={"efficiency_eta": 0.3, "dark_prob_per_gate": 0.02})
    config = CompensatorConfig(v_th=0.02)
    sweep = threshold_sweep(scenario, [0.02], config)

    frames = simulate_gate_train(scenario).frames[0]
    decisions, _ = process_stream(frames, config, scenario.adc)
    row = count_statistics(decisions, scenario.illumination)
    assert sweep.rows[0].csv_values() == row.csv_values()


def test_thresholds_above_any_residual_give_zero_rates():
    scenario = make_scenario(n_gates=2000, device={"efficiency_eta": 0.5, "dark_prob_per_gate": 0.05})
    sweep = threshold_sweep(scenario, [5.0, 6.0], CompensatorConfig())
    assert np.all(sweep.p_pd == 0) and np.all(sweep.p_dk == 0)


def test_reprocessing_matches_peak_reuse():
    scenario = make_scenario(n_gates=3000, device={"efficiency_eta": 0.3, "dark_prob_per_gate": 0.02})
    thresholds = [0.01, 0.02, 0.04]
    reused = threshold_sweep(scenario, thresholds, CompensatorConfig())
    rerun = threshold_sweep(scenario, thresholds, CompensatorConfig(), threads=3, reprocess=True)
    assert [r.csv_values() for r in reused.rows] == [r.csv_values() for r in rerun.rows]


def test_sweep_rejects_bad_thresholds():
    scenario = make_scenario(n_gates=100)
    with pytest.raises(CharStatsError):
        threshold_sweep(scenario, [0.02, 0.01])
    with pytest.raises(CharStatsError):
        threshold_sweep(scenario, [0.01], channel=1)


def test_p_dk_at_efficiency_interpolates_log_linearly():
    sweep = SweepResult([_row(0.01, 0.2, 1e-2), _row(0.02, 0.1, 1e-4), _row(0.03, 0.0, 0.0)])
    v_th, p_dk = p_dk_at_efficiency(sweep, 0.15)
    assert v_th == pytest.approx(0.015)
    assert p_dk == pytest.approx(1e-3)
    with pytest.raises(CharStatsError):
        p_dk_at_efficiency(sweep, 0.5)


def test_matched_efficiency_of_sweep_with_itself_is_one():
    sweep = SweepResult([_row(0.01, 0.2, 1e-2), _row(0.02, 0.1, 1e-3), _row(0.03, 0.01, 1e-4)])
    assert dark_at_matched_efficiency(sweep, sweep, 0.05) == pytest.approx(1.0)
    with pytest.raises(CharStatsError):
        dark_at_matched_efficiency(sweep, sweep, 0.9)


@pytest.mark.slow
def test_matched_efficiency_tracks_tenfold_dark_reduction():
    device = DeviceProfile(efficiency_eta=1.0, dark_prob_per_gate=0.01)
    scenario_a = make_scenario(n_gates=1_500_000, seed=99, devices=(device,))
    scenario_b = make_scenario(
        n_gates=1_500_000, seed=99, devices=(device.model_copy(update={"dark_prob_per_gate": 0.1}),)
    )
    peak = avalanche_pulse(device, scenario_a.onset_fraction, device.avalanche_amp_mean_v, scenario_a.gate).max()
    thresholds = peak * np.linspace(0.8, 1.8, 51)
    config = CompensatorConfig(v_th=float(peak))

    sweep_a = threshold_sweep(scenario_a, thresholds, config, threads=4)
    sweep_b = threshold_sweep(scenario_b, thresholds, config, threads=4)
    ratio = dark_at_matched_efficiency(sweep_a, sweep_b, 0.05)
    assert ratio == pytest.approx(0.10, rel=0.25)
