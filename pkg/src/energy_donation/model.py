"""Shared domain vocabulary: quantities, peers, timesteps and market intents.

Energy is integer watt-hours and money is integer euro-cents throughout, so
every sum in the simulator is exact. Prices are integer cents per kWh.
"""
from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Optional

from .errors import UnderflowError

Wh = int
Cents = int
CentsPerKwh = int


def round_half_up(numerator: int, denominator: int = 1) -> int:
    """Round ``numerator / denominator`` to the nearest integer, ties upward."""
    if denominator <= 0:
        raise ValueError("denominator must be positive")
    return (2 * numerator + denominator) // (2 * denominator)


def cost_cents(quantity: Wh, price: CentsPerKwh) -> Cents:
    """Price of ``quantity`` Wh at ``price`` cents/kWh, rounded half-up to cents."""
    return round_half_up(quantity * price, 1000)


def affordable_wh(budget: Cents, price: CentsPerKwh) -> Optional[Wh]:
    """Energy a budget buys by direct division, or None when energy is free."""
    if price == 0:
        return None
    return budget * 1000 // price


def checked_sub(value: int, amount: int, what: str = "quantity") -> int:
    if amount < 0:
        raise ValueError(f"negative {what} delta {amount}")
    if amount > value:
        raise UnderflowError(f"{what} underflow: {value} - {amount}")
    return value - amount


class Role(str, Enum):
    PROSUMER = "prosumer"
    CONSUMER = "consumer"


class IntentKind(str, Enum):
    OFFER = "offer"
    BUY_REQUEST = "buy_request"
    DONATION_REQUEST = "donation_request"


@dataclass(frozen=True)
class TimeStep:
    index: int
    timestamp: datetime

    @property
    def month_key(self) -> tuple[int, int]:
        return (self.timestamp.year, self.timestamp.month)


@dataclass
class PeerState:
    id: int
    role: Role
    balance: Cents = 0
    willing_to_donate: bool = False

    def credit(self, amount: Cents) -> None:
        if amount < 0:
            raise ValueError(f"negative credit {amount}")
        self.balance += amount

    def debit(self, amount: Cents) -> None:
        self.balance = checked_sub(self.balance, amount, f"peer {self.id} balance")


@dataclass(frozen=True)
class MarketIntent:
    peer: int
    kind: IntentKind
    quantity: Wh
    arrival_order: int

    def __post_init__(self):
        if self.quantity <= 0:
            raise ValueError(f"intent quantity must be positive, got {self.quantity}")


def net_position(production: Wh, consumption: Wh) -> int:
    """Signed net energy; positive is surplus, negative is need."""
    return production - consumption


def classify_intent(net: int, balance: Cents, unit_price: CentsPerKwh) -> Optional[IntentKind]:
    """Decide whether a peer sells, buys or asks for a donation this hour.

    A peer with a need buys only if its balance covers the whole need at
    ``unit_price``; otherwise it asks for a donation.
    """
    if unit_price < 0:
        raise ValueError("unit_price must be non-negative")
    if net > 0:
        return IntentKind.OFFER
    if net == 0:
        return None
    if balance >= cost_cents(-net, unit_price):
        return IntentKind.BUY_REQUEST
    return IntentKind.DONATION_REQUEST
