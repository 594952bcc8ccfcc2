import copy
import json

import pytest
from hypothesis import settings, strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, precondition, rule

from energy_donation.donation import EXTERNAL, GRID, DonationEvent, Source
from energy_donation.errors import GovernanceError
from energy_donation.governance import (
    Direction, EligibilityProposal, Status, TokenLedger, Vote, cast_vote, mint_on_donation, resolve,
)

A, B = 1, 2


def direct(wh, donor=A, t=0):
    return DonationEvent(t, 9, wh, Source.PEER_DIRECT, None, 0, donor)


def test_direct_donation_mints_to_donor_rounding_half_up():
    ledger = mint_on_donation(TokenLedger(), direct(2500))
    assert ledger.balance(A) == 3 and ledger.total_supply == 3


def test_funded_donation_mints_to_external_account():
    ledger = TokenLedger()
    ledger.mint_for_donation(DonationEvent(0, 9, 1000, Source.GRID_FUNDED, GRID, 20))
    ledger.mint_for_donation(DonationEvent(0, 9, 1500, Source.PEER_FUNDED, B, 8, B))
    assert ledger.balance(EXTERNAL) == 3 and ledger.balance(B) == 0


def test_sub_token_donation_mints_nothing():
    ledger = TokenLedger()
    assert ledger.mint_for_donation(direct(499)) == 0
    assert ledger.log == [] and ledger.total_supply == 0


def test_mint_rate_scales_tokens():
    assert TokenLedger("1/2").tokens_for(3000) == 2  # 1.5 -> 2
    assert TokenLedger(2).tokens_for(1250) == 3  # 2.5 -> 3
    with pytest.raises(ValueError):
        TokenLedger(-1)


def funded_ledger(**balances):
    ledger = TokenLedger()
    for voter, tokens in balances.items():
        ledger.mint_for_donation(direct(tokens * 1000, donor=int(voter[1:])))
    return ledger


def test_vote_burns_and_tallies():
    ledger = funded_ledger(p1=10)
    prop = ledger.open_proposal(subject=9)
    ledger, prop = cast_vote(ledger, prop, Vote(A, prop.id, Direction.FOR, 4))
    assert ledger.balance(A) == 6 and ledger.total_supply == 6 and prop.votes_for == 4


def test_overdrawn_vote_rejected_without_change():
    ledger = funded_ledger(p1=3)
    prop = ledger.open_proposal(subject=9)
    before = (ledger.snapshot(), ledger.to_jsonl())
    with pytest.raises(GovernanceError):
        ledger.cast_vote(Vote(A, prop.id, Direction.FOR, 4))
    assert (ledger.snapshot(), ledger.to_jsonl()) == before


def test_against_tallies_add():
    ledger = funded_ledger(p1=5, p2=5)
    prop = ledger.open_proposal(subject=9)
    ledger.cast_vote(Vote(A, prop.id, Direction.AGAINST, 2))
    ledger.cast_vote(Vote(B, prop.id, Direction.AGAINST, 3))
    assert prop.votes_against == 5


def test_zero_burn_and_unknown_proposal_rejected():
    ledger = funded_ledger(p1=5)
    prop = ledger.open_proposal(subject=9)
    with pytest.raises(GovernanceError):
        ledger.cast_vote(Vote(A, prop.id, Direction.FOR, 0))
    with pytest.raises(GovernanceError):
        ledger.cast_vote(Vote(A, 7, Direction.FOR, 1))


@pytest.mark.parametrize("votes_for,votes_against,quorum,status", [
    (5, 3, 4, Status.APPROVED),
    (5, 3, 10, Status.REJECTED),
    (4, 4, 0, Status.REJECTED),
    (0, 0, 0, Status.REJECTED),
])
def test_resolution_rule(votes_for, votes_against, quorum, status):
    prop = EligibilityProposal(0, 9, quorum, votes_for=votes_for, votes_against=votes_against)
    assert resolve(prop, now=0) is status


def test_resolution_happens_once_and_not_early():
    prop = EligibilityProposal(0, 9, closes_at=5)
    with pytest.raises(GovernanceError):
        resolve(prop, now=4)
    resolve(prop, now=5)
    with pytest.raises(GovernanceError):
        resolve(prop, now=6)


def test_votes_after_resolution_rejected():
    ledger = funded_ledger(p1=5)
    prop = ledger.open_proposal(subject=9)
    ledger.resolve(prop.id, now=0)
    with pytest.raises(GovernanceError):
        ledger.cast_vote(Vote(A, prop.id, Direction.FOR, 1))


def test_replay_round_trip():
    ledger = funded_ledger(p1=5, p2=7)
    ledger.mint_for_donation(DonationEvent(3, 9, 1200, Source.GRID_FUNDED, GRID, 24))
    prop = ledger.open_proposal(subject=9, quorum=3, closes_at=4)
    ledger.cast_vote(Vote(A, prop.id, Direction.FOR, 4))
    ledger.cast_vote(Vote(EXTERNAL, prop.id, Direction.AGAINST, 1))
    ledger.resolve(prop.id, now=4)
    again = TokenLedger.from_jsonl(ledger.to_jsonl())
    assert again.to_jsonl() == ledger.to_jsonl()
    assert json.dumps(again.snapshot()) == json.dumps(ledger.snapshot())
    assert again.proposals[0].status is Status.APPROVED


def test_replay_rejects_tampered_mint():
    ledger = funded_ledger(p1=5)
    rec = json.loads(ledger.to_jsonl())
    rec["amount"] = 6
    with pytest.raises(GovernanceError):
        TokenLedger.replay([rec])


def test_cast_vote_wrapper_checks_proposal_identity():
    ledger = funded_ledger(p1=5)
    ledger.open_proposal(subject=9)
    stray = EligibilityProposal(0, 9)
    with pytest.raises(GovernanceError):
        cast_vote(ledger, stray, Vote(A, 0, Direction.FOR, 1))


class LedgerMachine(RuleBasedStateMachine):
    """Random mint / open / vote / resolve sequences against a plain model."""

    def __init__(self):
        super().__init__()
        self.ledger = TokenLedger()
        self.model = {}
        self.now = 0

    @rule(donor=st.sampled_from([1, 2, 3]), wh=st.integers(1, 20_000), funded=st.booleans())
    def mint(self, donor, wh, funded):
        if funded:
            ev = DonationEvent(self.now, 9, wh, Source.GRID_FUNDED, GRID, 1)
            account = EXTERNAL
        else:
            ev = direct(wh, donor, self.now)
            account = donor
        amount = self.ledger.mint_for_donation(ev)
        assert amount == (2 * wh + 1000) // 2000
        self.model[account] = self.model.get(account, 0) + amount
        self.now += 1

    @rule(quorum=st.integers(0, 20))
    def open(self, quorum):
        self.ledger.open_proposal(subject=9, quorum=quorum, opened_at=self.now, closes_at=self.now)

    @precondition(lambda self: self.ledger.proposals)
    @rule(data=st.data(), voter=st.sampled_from([1, 2, 3, EXTERNAL]),
          direction=st.sampled_from(list(Direction)), burn=st.integers(-1, 30))
    def vote(self, data, voter, direction, burn):
        pid = data.draw(st.sampled_from(sorted(self.ledger.proposals)))
        prop = self.ledger.proposals[pid]
        before = (copy.deepcopy(self.ledger.snapshot()), len(self.ledger.log))
        held = self.model.get(voter, 0)
        ok = prop.status is Status.OPEN and 1 <= burn <= held
        tallies = (prop.votes_for, prop.votes_against)
        try:
            self.ledger.cast_vote(Vote(voter, pid, direction, burn))
        except GovernanceError:
            assert not ok
            assert (self.ledger.snapshot(), len(self.ledger.log)) == before
            return
        assert ok
        self.model[voter] = held - burn
        assert prop.votes_for >= tallies[0] and prop.votes_against >= tallies[1]

    @precondition(lambda self: self.ledger.proposals)
    @rule(data=st.data())
    def settle(self, data):
        pid = data.draw(st.sampled_from(sorted(self.ledger.proposals)))
        prop = self.ledger.proposals[pid]
        if prop.status is Status.OPEN:
            status = self.ledger.resolve(pid, self.now)
            want = prop.votes_for > prop.votes_against and prop.votes_for + prop.votes_against >= prop.quorum
            assert status is (Status.APPROVED if want else Status.REJECTED)
        else:
            with pytest.raises(GovernanceError):
                self.ledger.resolve(pid, self.now)

    @invariant()
    def balances_match_model(self):
        self.ledger.check()
        assert {a: b for a, b in self.ledger.balances.items() if b or a in self.model} == {
            a: b for a, b in self.model.items() if b or a in self.ledger.balances}
        assert self.ledger.total_supply == sum(self.model.values())

    def teardown(self):
        again = TokenLedger.from_jsonl(self.ledger.to_jsonl())
        assert again.to_jsonl() == self.ledger.to_jsonl()
        assert json.dumps(again.snapshot()) == json.dumps(self.ledger.snapshot())


TestLedgerMachine = LedgerMachine.TestCase
TestLedgerMachine.settings = settings(max_examples=100, stateful_step_count=30, deadline=None)
