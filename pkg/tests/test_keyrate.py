import math

import numpy as np
import pytest

from spadsim.schemas import KeyRateParams
from spadsim.services.keyrate import (
    KeyRateError,
    binary_entropy,
    dark_count_gain,
    find_gain_crossing,
    gain_and_qber,
    gain_curve,
    key_rate,
    monte_carlo_gain_qber,
    rate_grid,
    shor_preskill_rate,
    shor_preskill_threshold,
)

DEMO_LOSSES = np.linspace(0.0, 30.0, 61)


def test_binary_entropy_values():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.5) == pytest.approx(1.0)
    assert binary_entropy(0.11) == pytest.approx(0.49991, abs=1e-5)


@pytest.mark.parametrize("e", [-0.1, 1.1, math.nan])
def test_binary_entropy_domain(e):
    with pytest.raises(KeyRateError):
        binary_entropy(e)


def test_shor_preskill_threshold():
    assert shor_preskill_threshold() == pytest.approx(0.1100, abs=1e-4)
    assert shor_preskill_rate(0.01, shor_preskill_threshold()) == pytest.approx(0.0, abs=1e-12)


def test_error_free_rate_is_sifted_gain():
    params = KeyRateParams(p_dk=0.0, e_det=0.0)
    gain, qber = gain_and_qber(params)
    assert qber == 0.0
    assert key_rate(params) == pytest.approx(params.sift_q * gain)


def test_zero_gain_is_an_error():
    with pytest.raises(KeyRateError):
        gain_and_qber(KeyRateParams(mu=0.0, p_dk=0.0))


def test_dark_only_clicks_have_half_error():
    gain, qber = gain_and_qber(KeyRateParams(mu=0.0, p_dk=1e-3))
    assert gain == pytest.approx(2e-3)
    assert qber == pytest.approx(0.5)


def test_rate_inputs_are_checked():
    with pytest.raises(KeyRateError):
        shor_preskill_rate(1.5, 0.01)
    with pytest.raises(KeyRateError):
        shor_preskill_rate(0.1, 0.01, f_ec=0.5)


def test_dark_count_gain_without_dark_counts_is_one():
    base = KeyRateParams(p_dk=0.0)
    curve = gain_curve(base, DEMO_LOSSES)
    assert len(curve) == len(DEMO_LOSSES)
    assert all(ratio == pytest.approx(1.0) for _, ratio in curve)


@pytest.mark.parametrize("p_dk", [1e-6, 1e-5, 1e-4, 1e-3])
def test_dark_count_gain_never_below_one(p_dk):
    for loss, ratio in gain_curve(KeyRateParams(p_dk=p_dk), DEMO_LOSSES):
        assert ratio >= 1.0 - 1e-12, loss


def test_dark_count_gain_requires_baseline_key():
    with pytest.raises(KeyRateError, match="no key"):
        dark_count_gain(KeyRateParams(channel_loss_db=60.0))


def test_demo_gain_crossing():
    crossing = find_gain_crossing(KeyRateParams(), DEMO_LOSSES, target=3.2)
    assert crossing is not None
    assert crossing.ratio == pytest.approx(3.2, abs=0.1)
    assert 17.0 < crossing.loss_db < 21.0
    params = KeyRateParams(channel_loss_db=crossing.loss_db)
    assert dark_count_gain(params) == pytest.approx(3.2, abs=1e-3)


def test_gain_crossing_absent_on_short_grid():
    assert find_gain_crossing(KeyRateParams(), [0.0, 5.0], target=3.2) is None


def test_rate_grid_shape_and_zero_gain_points():
    points = rate_grid(KeyRateParams(), [0.0, 10.0], mus=[0.0, 0.1], p_dks=[0.0, 1e-5])
    assert len(points) == 8
    dead = [p for p in points if p.mu == 0.0 and p.p_dk == 0.0]
    assert all(p.gain == 0.0 and p.rate == 0.0 for p in dead)
    assert all(0.0 <= p.qber <= 0.5 for p in points)


@pytest.mark.slow
@pytest.mark.parametrize("loss", [0.0, 5.0, 10.0, 15.0, 20.0])
def test_gain_and_qber_match_monte_carlo(loss):
    for i, p_dk in enumerate([1e-5, 1e-4, 1e-3, 1e-2, 0.05]):
        params = KeyRateParams(channel_loss_db=loss, p_dk=p_dk, mu=0.5, e_det=0.03)
        gain, qber = gain_and_qber(params)
        mc_gain, mc_qber, se_gain, se_qber = monte_carlo_gain_qber(params, 1_000_000, seed=int(loss) * 10 + i)
        assert abs(mc_gain - gain) < 4 * se_gain
        assert abs(mc_qber - qber) < 4 * max(se_qber, 1e-12)
