"""Donation allocation over post-trading residuals.

Four allocators share the same building blocks:

* ``ug2d``  -- the fund buys grid energy for donees at the utility price.
* ``p2d``   -- the fund buys residual prosumer surplus at the clearing price.
* ``p2pd``  -- willing prosumers give their residual surplus for free.
* ``hed``   -- per donee: fund-bought prosumer energy, then fund-bought grid
  energy, then free energy from willing prosumers.

All allocators mutate the residual they are given (surplus and need are
decremented as energy moves) and return the donation events in the order
they happened.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Union

from .errors import InvariantError, UnderflowError
from .model import Cents, CentsPerKwh, Wh, affordable_wh, cost_cents
from .trading import MarketResidual

GRID = "grid"
EXTERNAL = "external"


class Source(str, Enum):
    GRID_FUNDED = "grid_funded"
    PEER_FUNDED = "peer_funded"
    PEER_DIRECT = "peer_direct"


@dataclass(frozen=True)
class DonationEvent:
    timestep: int
    donee: int
    quantity: Wh
    source: Source
    payee: Union[int, str, None]  # prosumer id, GRID, or None for free energy
    payment: Cents
    donor: Optional[int] = None  # supplying prosumer; None for grid energy

    def __post_init__(self):
        if self.quantity <= 0:
            raise ValueError("donation quantity must be positive")
        if self.source is Source.PEER_DIRECT and (self.payment != 0 or self.payee is not None):
            raise ValueError("direct donations carry no payment")
        if self.source is Source.GRID_FUNDED and self.payee != GRID:
            raise ValueError("grid-funded donations pay the grid")


class FundKind(str, Enum):
    DEPOSIT = "deposit"
    GRID_PAYMENT = "grid_payment"
    PROSUMER_PAYMENT = "prosumer_payment"


@dataclass(frozen=True)
class FundEntry:
    timestep: int
    kind: FundKind
    amount: Cents
    counterparty: Union[int, str]
    balance_after: Cents


class FundLedger:
    """External-donation fund with an append-only history."""

    def __init__(self, balance: Cents = 0):
        if balance < 0:
            raise ValueError("fund balance cannot be negative")
        self.opening = balance
        self.balance = balance
        self.entries: list[FundEntry] = []

    def deposit(self, timestep: int, amount: Cents, counterparty: str = EXTERNAL) -> None:
        if amount < 0:
            raise ValueError("negative deposit")
        self.balance += amount
        self.entries.append(FundEntry(timestep, FundKind.DEPOSIT, amount, counterparty, self.balance))

    def pay(self, timestep: int, kind: FundKind, amount: Cents, counterparty) -> None:
        if kind is FundKind.DEPOSIT:
            raise ValueError("use deposit() for deposits")
        if amount > self.balance:
            raise UnderflowError(f"fund pays {amount} cents but holds {self.balance}")
        self.balance -= amount
        self.entries.append(FundEntry(timestep, kind, amount, counterparty, self.balance))

    def replay(self) -> Cents:
        """Recompute the balance from the entry history alone."""
        bal = self.opening
        for e in self.entries:
            bal += e.amount if e.kind is FundKind.DEPOSIT else -e.amount
            if bal < 0 or bal != e.balance_after:
                raise InvariantError(f"fund replay diverged at step {e.timestep}")
        return bal


def _fund_limited(need: Wh, supply: Optional[Wh], ledger: FundLedger, price: CentsPerKwh) -> Wh:
    if ledger.balance == 0:
        return 0  # an empty fund buys nothing, even energy priced at zero
    q = need if supply is None else min(need, supply)
    cap = affordable_wh(ledger.balance, price)
    return q if cap is None else min(q, cap)


def _buy_from_prosumers(donee, need, residual, ledger, price, timestep, events) -> Wh:
    for seller in list(residual.surplus):
        if need == 0:
            break
        q = _fund_limited(need, residual.surplus[seller], ledger, price)
        if q == 0:
            break  # funds cannot buy a single Wh at this price
        payment = cost_cents(q, price)
        ledger.pay(timestep, FundKind.PROSUMER_PAYMENT, payment, seller)
        events.append(DonationEvent(timestep, donee, q, Source.PEER_FUNDED, seller, payment, seller))
        _take(residual.surplus, seller, q)
        need -= q
    return need


def _buy_from_grid(donee, need, ledger, utility_price, timestep, events) -> Wh:
    if need == 0:
        return need
    q = _fund_limited(need, None, ledger, utility_price)
    if q == 0:
        return need
    payment = cost_cents(q, utility_price)
    ledger.pay(timestep, FundKind.GRID_PAYMENT, payment, GRID)
    events.append(DonationEvent(timestep, donee, q, Source.GRID_FUNDED, GRID, payment))
    return need - q


def _give_directly(donee, need, residual, willing, timestep, events) -> Wh:
    for donor in list(residual.surplus):
        if need == 0:
            break
        if not willing.get(donor, False):
            continue
        q = min(need, residual.surplus[donor])
        events.append(DonationEvent(timestep, donee, q, Source.PEER_DIRECT, None, 0, donor))
        _take(residual.surplus, donor, q)
        need -= q
    return need


def _take(pool: dict, key, q: Wh) -> None:
    left = pool[key] - q
    if left < 0:
        raise UnderflowError(f"surplus of {key} underflows")
    if left:
        pool[key] = left
    else:
        del pool[key]


def _serve(residual: MarketResidual, serve_one) -> list[DonationEvent]:
    events: list[DonationEvent] = []
    for donee in list(residual.donation_need):
        left = serve_one(donee, residual.donation_need[donee], events)
        if left:
            residual.donation_need[donee] = left
        else:
            del residual.donation_need[donee]
    return events


def run_ug2d(
    residual: MarketResidual, ledger: FundLedger, utility_price: CentsPerKwh, timestep: int = 0
) -> list[DonationEvent]:
    return _serve(
        residual,
        lambda r, need, ev: _buy_from_grid(r, need, ledger, utility_price, timestep, ev),
    )


def run_p2d(
    residual: MarketResidual, ledger: FundLedger, price: CentsPerKwh, timestep: int = 0
) -> list[DonationEvent]:
    return _serve(
        residual,
        lambda r, need, ev: _buy_from_prosumers(r, need, residual, ledger, price, timestep, ev),
    )


def run_p2pd(
    residual: MarketResidual, willing: Mapping[int, bool], timestep: int = 0
) -> list[DonationEvent]:
    return _serve(
        residual,
        lambda r, need, ev: _give_directly(r, need, residual, willing, timestep, ev),
    )


def run_hed(
    residual: MarketResidual,
    ledger: FundLedger,
    price: CentsPerKwh,
    utility_price: CentsPerKwh,
    willing: Mapping[int, bool],
    timestep: int = 0,
) -> list[DonationEvent]:
    def serve(r, need, ev):
        need = _buy_from_prosumers(r, need, residual, ledger, price, timestep, ev)
        need = _buy_from_grid(r, need, ledger, utility_price, timestep, ev)
        return _give_directly(r, need, residual, willing, timestep, ev)

    return _serve(residual, serve)


ALGORITHMS = ("ug2d", "p2d", "p2pd", "hed")

# which sources an algorithm can ever produce
ALGORITHM_SOURCES = {
    "ug2d": {Source.GRID_FUNDED},
    "p2d": {Source.PEER_FUNDED},
    "p2pd": {Source.PEER_DIRECT},
    "hed": {Source.GRID_FUNDED, Source.PEER_FUNDED, Source.PEER_DIRECT},
}


def donate(
    algorithm: str,
    residual: MarketResidual,
    ledger: FundLedger,
    price: CentsPerKwh,
    utility_price: CentsPerKwh,
    willing: Mapping[int, bool],
    timestep: int = 0,
) -> list[DonationEvent]:
    """Dispatch to one allocator by name."""
    dispatch: dict[str, Callable[[], list[DonationEvent]]] = {
        "ug2d": lambda: run_ug2d(residual, ledger, utility_price, timestep),
        "p2d": lambda: run_p2d(residual, ledger, price, timestep),
        "p2pd": lambda: run_p2pd(residual, willing, timestep),
        "hed": lambda: run_hed(residual, ledger, price, utility_price, willing, timestep),
    }
    if algorithm not in dispatch:
        raise ValueError(f"unknown donation algorithm {algorithm!r}")
    return dispatch[algorithm]()


def total_donated(events: Iterable[DonationEvent]) -> Wh:
    return sum(e.quantity for e in events)
