import pytest

from topoprobe.costmodel import (
    estimate,
    fee_bounds,
    grid_shape,
    round_fee_breakdown,
    rounds_required,
    scan_duration,
)


@pytest.mark.parametrize("r_n, shape, rounds", [
    (1000, (32, 32), 62),
    (10000, (100, 100), 198),
    (20000, (100, 200), 399),
    (9, (3, 3), 4),
    (1, (1, 1), 0),
])
def test_rounds_required(r_n, shape, rounds):
    assert grid_shape(r_n) == shape
    assert rounds_required(r_n) == rounds


def test_grid_shape_rejects_empty_network():
    with pytest.raises(ValueError):
        grid_shape(0)


@pytest.mark.parametrize("r_n, minutes", [(1000, 155), (10000, 495), (1, 0)])
def test_scan_duration(r_n, minutes):
    assert scan_duration(r_n) == minutes


@pytest.mark.parametrize("r_n, fee_rate, bounds", [
    (10000, 5, (573210, 764280)),
    (1000, 5, (179490, 239320)),
    (1000, 0, (0, 0)),
])
def test_fee_bounds(r_n, fee_rate, bounds):
    assert fee_bounds(r_n, fee_rate) == bounds


def test_negative_fee_rate():
    with pytest.raises(ValueError):
        fee_bounds(100, -1)


def test_estimate_and_breakdown():
    cost = estimate(10000, 5, minutes_per_round=3)
    assert cost.rounds == 198
    assert cost.duration_minutes == 594
    assert (cost.fee_low, cost.fee_high) == (573210, 764280)

    breakdown = round_fee_breakdown(5)
    assert breakdown == {"cleanse": 1930, "flood_accepted": 965, "parent_marker_accepted": 1930}
