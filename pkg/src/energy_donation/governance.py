"""Donation-backed governance tokens.

Tokens are minted only when energy is donated and are destroyed when used
to vote on whether a peer may receive donations. Every state change is
appended to ``TokenLedger.log`` as a JSON-serializable record, and
``TokenLedger.replay`` rebuilds an identical ledger from that log.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Union

from .donation import EXTERNAL, DonationEvent, Source
from .errors import GovernanceError
from .model import round_half_up

Account = Union[int, str]


class Direction(str, Enum):
    FOR = "for"
    AGAINST = "against"


class Status(str, Enum):
    OPEN = "open"
    APPROVED = "approved"
    REJECTED = "rejected"


@dataclass
class EligibilityProposal:
    id: int
    subject: int
    quorum: int = 0
    opened_at: int = 0
    closes_at: int = 0
    votes_for: int = 0
    votes_against: int = 0
    status: Status = Status.OPEN


@dataclass(frozen=True)
class Vote:
    voter: Account
    proposal: int
    direction: Direction
    burn_amount: int


def resolve(proposal: EligibilityProposal, now: int) -> Status:
    """Finalize a proposal: burned weight majority plus quorum, ties reject."""
    if proposal.status is not Status.OPEN:
        raise GovernanceError(f"proposal {proposal.id} already {proposal.status.value}")
    if now < proposal.closes_at:
        raise GovernanceError(f"proposal {proposal.id} closes at {proposal.closes_at}, now {now}")
    turnout = proposal.votes_for + proposal.votes_against
    if proposal.votes_for > proposal.votes_against and turnout >= proposal.quorum:
        proposal.status = Status.APPROVED
    else:
        proposal.status = Status.REJECTED
    return proposal.status


def donation_account(event: DonationEvent) -> Account:
    """Who is credited for a donation: the giving peer, or the pooled external donors."""
    if event.source is Source.PEER_DIRECT:
        return event.donor
    return EXTERNAL


class TokenLedger:
    def __init__(self, tokens_per_kwh: Union[int, str, Fraction] = 1):
        self.rate = Fraction(tokens_per_kwh)
        if self.rate < 0:
            raise ValueError("mint rate must be non-negative")
        self.balances: dict[Account, int] = {}
        self.total_supply = 0
        self.minted = 0
        self.burned = 0
        self.proposals: dict[int, EligibilityProposal] = {}
        self.log: list[dict] = []

    def balance(self, account: Account) -> int:
        return self.balances.get(account, 0)

    def tokens_for(self, quantity_wh: int) -> int:
        return round_half_up(quantity_wh * self.rate.numerator, 1000 * self.rate.denominator)

    # -- mutations ---------------------------------------------------------

    def mint_for_donation(self, event: DonationEvent) -> int:
        """Credit tokens for one donation; returns the amount minted.

        Donations too small to round to one token mint nothing and leave no
        record.
        """
        amount = self.tokens_for(event.quantity)
        if amount == 0:
            return 0
        account = donation_account(event)
        self._credit(account, amount)
        payload = {
            "timestep": event.timestep, "donee": event.donee, "quantity": event.quantity,
            "source": event.source.value, "payee": event.payee, "payment": event.payment, "donor": event.donor,
        }
        self._record("mint", account=account, amount=amount, timestep=event.timestep, donation=payload)
        return amount

    def open_proposal(self, subject: int, quorum: int = 0, opened_at: int = 0, closes_at: int = 0) -> EligibilityProposal:
        if quorum < 0 or closes_at < opened_at:
            raise GovernanceError("invalid proposal window or quorum")
        pid = len(self.proposals)
        prop = EligibilityProposal(pid, subject, quorum, opened_at, closes_at)
        self.proposals[pid] = prop
        self._record("open", proposal=pid, subject=subject, quorum=quorum,
                     opened_at=opened_at, closes_at=closes_at)
        return prop

    def cast_vote(self, vote: Vote) -> EligibilityProposal:
        prop = self.proposals.get(vote.proposal)
        if prop is None:
            raise GovernanceError(f"unknown proposal {vote.proposal}")
        if prop.status is not Status.OPEN:
            raise GovernanceError(f"proposal {prop.id} is not open")
        if vote.burn_amount < 1:
            raise GovernanceError("a vote must burn at least one token")
        held = self.balance(vote.voter)
        if held < vote.burn_amount:
            raise GovernanceError(
                f"insufficient balance: {vote.voter} holds {held}, burns {vote.burn_amount}"
            )
        direction = Direction(vote.direction)
        self.balances[vote.voter] = held - vote.burn_amount
        self.total_supply -= vote.burn_amount
        self.burned += vote.burn_amount
        if direction is Direction.FOR:
            prop.votes_for += vote.burn_amount
        else:
            prop.votes_against += vote.burn_amount
        self._record("vote", proposal=prop.id, voter=vote.voter,
                     direction=direction.value, burn=vote.burn_amount)
        return prop

    def resolve(self, proposal_id: int, now: int) -> Status:
        prop = self.proposals.get(proposal_id)
        if prop is None:
            raise GovernanceError(f"unknown proposal {proposal_id}")
        status = resolve(prop, now)
        self._record("resolve", proposal=prop.id, now=now, status=status.value,
                     votes_for=prop.votes_for, votes_against=prop.votes_against)
        return status

    def _credit(self, account: Account, amount: int) -> None:
        self.balances[account] = self.balance(account) + amount
        self.total_supply += amount
        self.minted += amount

    def _record(self, op: str, **fields) -> None:
        self.log.append({"seq": len(self.log), "op": op, **fields})

    # -- views -------------------------------------------------------------

    def snapshot(self) -> dict:
        accounts = sorted(self.balances, key=lambda a: (isinstance(a, str), a))
        return {
            "total_supply": self.total_supply,
            "minted": self.minted,
            "burned": self.burned,
            "balances": [[a, self.balances[a]] for a in accounts],
            "proposals": [
                {**asdict(p), "status": p.status.value} for p in self.proposals.values()
            ],
        }

    def check(self) -> None:
        if any(b < 0 for b in self.balances.values()):
            raise GovernanceError("negative token balance")
        if not (self.total_supply == sum(self.balances.values()) == self.minted - self.burned):
            raise GovernanceError("token supply does not reconcile")

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.log)

    @classmethod
    def replay(cls, records: Iterable[dict], tokens_per_kwh=1) -> "TokenLedger":
        """Rebuild a ledger by re-applying logged operations in order."""
        ledger = cls(tokens_per_kwh)
        for rec in records:
            op = rec["op"]
            if op == "mint":
                if ledger.tokens_for(rec["donation"]["quantity"]) != rec["amount"]:
                    raise GovernanceError(f"mint record {rec['seq']} disagrees with its donation")
                ledger._credit(rec["account"], rec["amount"])
                ledger._record("mint", account=rec["account"], amount=rec["amount"],
                               timestep=rec["timestep"], donation=rec["donation"])
            elif op == "open":
                ledger.open_proposal(rec["subject"], rec["quorum"], rec["opened_at"], rec["closes_at"])
            elif op == "vote":
                ledger.cast_vote(Vote(rec["voter"], rec["proposal"], Direction(rec["direction"]), rec["burn"]))
            elif op == "resolve":
                ledger.resolve(rec["proposal"], rec["now"])
            else:
                raise GovernanceError(f"unknown log op {op!r}")
        return ledger

    @classmethod
    def from_jsonl(cls, text: str, tokens_per_kwh=1) -> "TokenLedger":
        return cls.replay((json.loads(line) for line in text.splitlines() if line.strip()), tokens_per_kwh)


def mint_on_donation(ledger: TokenLedger, event: DonationEvent) -> TokenLedger:
    ledger.mint_for_donation(event)
    return ledger


def cast_vote(ledger: TokenLedger, proposal: EligibilityProposal, vote: Vote) -> tuple[TokenLedger, EligibilityProposal]:
    if vote.proposal != proposal.id or ledger.proposals.get(proposal.id) is not proposal:
        raise GovernanceError("vote does not target this ledger's proposal")
    return ledger, ledger.cast_vote(vote)

