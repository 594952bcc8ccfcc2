"""Community clearing price: demand/supply ratio times a three-step moving
average of past prices, clamped between the feed-in tariff and the utility
price."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .model import CentsPerKwh, Wh, round_half_up

HISTORY_LEN = 3


@dataclass(frozen=True)
class DemandSupplySnapshot:
    requested: Wh  # sum of buy_request quantities
    offered: Wh  # sum of offer quantities

    def __post_init__(self):
        if self.requested < 0 or self.offered < 0:
            raise ValueError("demand and supply must be non-negative")


def compute_price(
    fit: CentsPerKwh,
    utility_price: CentsPerKwh,
    requested: Wh,
    offered: Wh,
    history,
) -> CentsPerKwh:
    """Pure price evaluation; ``history`` holds the last three clearing prices."""
    if fit > utility_price:
        raise ValueError(f"feed-in tariff {fit} exceeds utility price {utility_price}")
    if len(history) != HISTORY_LEN:
        raise ValueError("price history must hold exactly three entries")
    if offered == 0:
        return utility_price
    # single terminal rounding of requested * mean(history) / offered
    raw = round_half_up(requested * sum(history), HISTORY_LEN * offered)
    return max(fit, min(utility_price, raw))


@dataclass
class PriceState:
    fit: CentsPerKwh
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_LEN))

    @classmethod
    def initial(cls, fit: CentsPerKwh, first_utility_price: CentsPerKwh) -> "PriceState":
        # no past market exists at t=0, so start from the grid price
        return cls(fit, deque([first_utility_price] * HISTORY_LEN, maxlen=HISTORY_LEN))

    @property
    def last(self) -> CentsPerKwh:
        return self.history[-1]

    def clear(self, snapshot: DemandSupplySnapshot, utility_price: CentsPerKwh) -> CentsPerKwh:
        price = compute_price(
            self.fit, utility_price, snapshot.requested, snapshot.offered, self.history
        )
        self.history.append(price)
        return price


def clearing_price(
    state: PriceState, snapshot: DemandSupplySnapshot, utility_price: CentsPerKwh
) -> CentsPerKwh:
    return state.clear(snapshot, utility_price)
