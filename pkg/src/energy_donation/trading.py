"""First-come first-served matching of offers against buy requests."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .errors import UnderflowError
from .model import Cents, CentsPerKwh, IntentKind, MarketIntent, PeerState, Wh, cost_cents


@dataclass(frozen=True)
class Trade:
    timestep: int
    seller: int
    buyer: int
    quantity: Wh
    unit_price: CentsPerKwh
    payment: Cents

    def __post_init__(self):
        if self.quantity <= 0:
            raise ValueError("trade quantity must be positive")
        if self.seller == self.buyer:
            raise ValueError("seller and buyer must differ")


@dataclass
class MarketResidual:
    """What is left after trading. Dicts preserve arrival order."""

    surplus: dict[int, Wh] = field(default_factory=dict)
    unmet_buy: dict[int, Wh] = field(default_factory=dict)
    donation_need: dict[int, Wh] = field(default_factory=dict)

    def copy(self) -> "MarketResidual":
        return MarketResidual(dict(self.surplus), dict(self.unmet_buy), dict(self.donation_need))

    def total_surplus(self) -> Wh:
        return sum(self.surplus.values())

    def total_need(self) -> Wh:
        return sum(self.donation_need.values())


def _max_within_budget(quantity: Wh, price: CentsPerKwh, budget: Cents) -> Wh:
    """Largest q <= quantity whose rounded cost fits ``budget``."""
    if cost_cents(quantity, price) <= budget:
        return quantity
    # cost(q) <= budget  <=>  2*q*price < (2*budget + 1) * 1000
    q = ((2 * budget + 1) * 1000 - 1) // (2 * price)
    return min(q, quantity)


def match_fcfs(
    offers: Iterable[MarketIntent],
    requests: Iterable[MarketIntent],
    price: CentsPerKwh,
    timestep: int = 0,
    budgets: Optional[Mapping[int, Cents]] = None,
) -> tuple[list[Trade], MarketResidual]:
    """Fill requests in arrival order from offers in arrival order.

    ``requests`` may mix buy and donation requests; only buy requests trade,
    donation requests pass straight through to the residual. When ``budgets``
    is given, a buyer is never filled beyond what its budget pays for at
    ``price`` under per-trade rounding; the unaffordable part is left in
    ``unmet_buy`` and matching moves on to the next request.
    """
    offers = sorted(offers, key=lambda i: i.arrival_order)
    requests = sorted(requests, key=lambda i: i.arrival_order)
    residual = MarketResidual()
    for o in offers:
        if o.kind is not IntentKind.OFFER:
            raise ValueError(f"not an offer: {o}")
        residual.surplus[o.peer] = residual.surplus.get(o.peer, 0) + o.quantity

    trades: list[Trade] = []
    sellers = [p for p in residual.surplus]
    cursor = 0
    remaining_budget = dict(budgets) if budgets is not None else None
    for req in requests:
        if req.kind is IntentKind.DONATION_REQUEST:
            residual.donation_need[req.peer] = residual.donation_need.get(req.peer, 0) + req.quantity
            continue
        if req.kind is not IntentKind.BUY_REQUEST:
            raise ValueError(f"not a request: {req}")
        need = req.quantity
        while need > 0 and cursor < len(sellers):
            seller = sellers[cursor]
            available = residual.surplus[seller]
            if available == 0:
                cursor += 1
                continue
            q = min(need, available)
            capped = False
            if remaining_budget is not None:
                q_budget = _max_within_budget(q, price, remaining_budget.get(req.peer, 0))
                capped = q_budget < q
                q = q_budget
            if q > 0:
                payment = cost_cents(q, price)
                if remaining_budget is not None:
                    remaining_budget[req.peer] -= payment
                trades.append(Trade(timestep, seller, req.peer, q, price, payment))
                residual.surplus[seller] = available - q
                need -= q
            if capped:
                # budget spent; stop before sub-cent fills round to free energy
                break
        if need > 0:
            residual.unmet_buy[req.peer] = residual.unmet_buy.get(req.peer, 0) + need
    residual.surplus = {p: q for p, q in residual.surplus.items() if q > 0}
    return trades, residual


def settle(trades: Iterable[Trade], peers: Mapping[int, PeerState]) -> Mapping[int, PeerState]:
    """Move each trade's payment from buyer to seller.

    All debits are checked before any balance changes, so an underflow
    leaves the peers untouched.
    """
    trades = list(trades)
    owed: dict[int, Cents] = {}
    for t in trades:
        owed[t.buyer] = owed.get(t.buyer, 0) + t.payment
    for buyer, amount in owed.items():
        if peers[buyer].balance < amount:
            raise UnderflowError(
                f"peer {buyer} owes {amount} cents but holds {peers[buyer].balance}"
            )
    for t in trades:
        peers[t.buyer].debit(t.payment)
        peers[t.seller].credit(t.payment)
    return peers
