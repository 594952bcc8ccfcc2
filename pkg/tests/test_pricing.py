from collections import deque
from fractions import Fraction
import math

import pytest
from hypothesis import given, strategies as st

from energy_donation.pricing import DemandSupplySnapshot, PriceState, clearing_price, compute_price


def oracle_price(fit, up, requested, offered, history):
    if offered == 0:
        return up
    raw = math.floor(Fraction(requested, offered) * Fraction(sum(history), 3) + Fraction(1, 2))
    return max(fit, min(up, raw))


def test_unit_ratio_returns_history_mean():
    assert compute_price(5, 20, 1000, 1000, [11, 12, 13]) == 12


def test_high_demand_clamps_to_utility_price():
    assert compute_price(5, 20, 10_000, 1000, [12, 12, 12]) == 20


def test_no_demand_clamps_to_feed_in_tariff():
    assert compute_price(5, 20, 0, 1000, [20, 20, 20]) == 5


def test_no_offers_returns_utility_price():
    assert compute_price(5, 20, 1000, 0, [12, 12, 12]) == 20
    assert compute_price(5, 20, 0, 0, [12, 12, 12]) == 20


def test_rounding_is_single_and_half_up():
    # 1 * (10 + 10 + 11) / 3 / 2 = 5.1666.. -> 5; 3 * 31 / 3 / 2 = 15.5 -> 16
    assert compute_price(0, 100, 1, 2, [10, 10, 11]) == 5
    assert compute_price(0, 100, 3, 2, [10, 10, 11]) == 16


def test_fit_above_utility_price_is_rejected():
    with pytest.raises(ValueError):
        compute_price(21, 20, 1, 1, [20, 20, 20])


def test_history_must_have_three_entries():
    with pytest.raises(ValueError):
        compute_price(5, 20, 1, 1, [20, 20])


def test_negative_snapshot_rejected():
    with pytest.raises(ValueError):
        DemandSupplySnapshot(-1, 0)


def test_state_starts_from_utility_price_and_shifts():
    state = PriceState.initial(5, 20)
    assert list(state.history) == [20, 20, 20]
    assert state.last == 20
    p1 = clearing_price(state, DemandSupplySnapshot(500, 1000), 20)
    assert p1 == 10
    assert list(state.history) == [20, 20, 10]
    p2 = clearing_price(state, DemandSupplySnapshot(1000, 1000), 20)
    assert p2 == round(Fraction(50, 3))  # 16.67 -> 17
    assert list(state.history) == [20, 10, 17]
    assert len(state.history) == 3


history = st.lists(st.integers(0, 200), min_size=3, max_size=3)


@st.composite
def pricing_inputs(draw):
    up = draw(st.integers(0, 200))
    fit = draw(st.integers(0, up))
    return fit, up, draw(st.integers(0, 10**7)), draw(st.integers(0, 10**7)), draw(history)


@given(pricing_inputs())
def test_price_matches_oracle_and_stays_in_bounds(args):
    fit, up, r, o, h = args
    p = compute_price(fit, up, r, o, h)
    assert p == oracle_price(fit, up, r, o, h)
    assert fit <= p <= up


@given(pricing_inputs(), st.integers(0, 10**6))
def test_price_is_monotone_in_demand(args, extra):
    fit, up, r, o, h = args
    assert compute_price(fit, up, r + extra, o, h) >= compute_price(fit, up, r, o, h)


@given(pricing_inputs(), st.integers(1, 10**6))
def test_price_is_antitone_in_supply(args, extra):
    fit, up, r, o, h = args
    if o == 0:
        return
    assert compute_price(fit, up, r, o + extra, h) <= compute_price(fit, up, r, o, h)


@given(pricing_inputs())
def test_price_evaluation_does_not_touch_history(args):
    fit, up, r, o, h = args
    hist = deque(h, maxlen=3)
    compute_price(fit, up, r, o, hist)
    assert list(hist) == h
