"""Scenario configuration and the hour-by-hour simulation loop.

Each hour runs, in order: month-start credits and fund deposit, intent
collection (affordability judged at the previous clearing price), price
clearing, first-come first-served trading and settlement, donation over
the post-trade residuals, and token minting for every donation.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .donation import ALGORITHMS, FundLedger, DonationEvent, Source, donate
from .errors import ConfigError, InvariantError, SimulationError
from .governance import TokenLedger
from .ingestion import (
    ReadingSeries,
    SyntheticConfig,
    as_fraction,
    build_balance_schedule,
    build_donation_schedule,
    generate_synthetic,
    load_utility_prices,
    parse_readings,
)
from .metrics import DonationReport, ParticipationStats, aggregate, compare, participation, pct_label, Comparison
from .model import IntentKind, MarketIntent, PeerState, Role, classify_intent, round_half_up
from .pricing import DemandSupplySnapshot, PriceState
from .trading import Trade, match_fcfs, settle

log = logging.getLogger(__name__)


@dataclass
class ScenarioConfig:
    donation_algorithm: str
    balance_percentage: Fraction
    utility_price_cents_per_kwh: Union[int, str]
    fit_cents_per_kwh: int
    seed: int = 0
    readings_path: Optional[str] = None
    synthetic: Optional[SyntheticConfig] = None
    column_mapping: dict = field(default_factory=dict)
    balance_carryover: bool = True
    auto_approve_eligibility: bool = True
    eligible_peers: Optional[list] = None
    mint_tokens_per_kwh: Fraction = Fraction(1)
    willing_to_donate: dict = field(default_factory=dict)
    donor_fraction: Optional[Fraction] = None
    scenario_id: Optional[str] = None
    base_dir: Optional[str] = field(default=None, compare=False, repr=False)

    KEYS = (
        "donation_algorithm", "balance_percentage", "utility_price_cents_per_kwh",
        "fit_cents_per_kwh", "seed", "readings_path", "synthetic", "column_mapping",
        "balance_carryover", "auto_approve_eligibility", "eligible_peers",
        "mint_tokens_per_kwh", "willing_to_donate", "donor_fraction", "scenario_id",
    )

    def __post_init__(self):
        if self.donation_algorithm not in ALGORITHMS:
            raise ConfigError(
                f"donation_algorithm must be one of {', '.join(ALGORITHMS)}, got {self.donation_algorithm!r}"
            )
        self.balance_percentage = as_fraction(self.balance_percentage)
        if self.balance_percentage <= 0:
            raise ConfigError("balance_percentage must be positive")
        if not _is_int(self.fit_cents_per_kwh) or self.fit_cents_per_kwh < 0:
            raise ConfigError("fit_cents_per_kwh must be a non-negative integer")
        if _is_int(self.utility_price_cents_per_kwh):
            if self.fit_cents_per_kwh > self.utility_price_cents_per_kwh:
                raise ConfigError(
                    f"feed-in tariff {self.fit_cents_per_kwh} exceeds utility price "
                    f"{self.utility_price_cents_per_kwh}"
                )
        elif not isinstance(self.utility_price_cents_per_kwh, str):
            raise ConfigError("utility_price_cents_per_kwh must be an integer or a CSV path")
        if not _is_int(self.seed):
            raise ConfigError("seed must be an integer")
        if (self.readings_path is None) == (self.synthetic is None):
            raise ConfigError("exactly one of readings_path and synthetic is required")
        self.mint_tokens_per_kwh = as_fraction(self.mint_tokens_per_kwh)
        if self.mint_tokens_per_kwh < 0:
            raise ConfigError("mint_tokens_per_kwh must be non-negative")
        if self.donor_fraction is not None:
            self.donor_fraction = as_fraction(self.donor_fraction)
            if not 0 <= self.donor_fraction <= 1:
                raise ConfigError("donor_fraction must lie in [0, 1]")
        self.willing_to_donate = {int(k): bool(v) for k, v in self.willing_to_donate.items()}
        if not self.auto_approve_eligibility and self.eligible_peers is None:
            raise ConfigError("eligible_peers is required when auto_approve_eligibility is false")
        if self.scenario_id is None:
            self.scenario_id = f"{self.donation_algorithm}_bp{pct_label(self.balance_percentage)}"

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: Union[str, Path, None] = None) -> "ScenarioConfig":
        unknown = set(data) - set(cls.KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        for key in ("donation_algorithm", "balance_percentage", "utility_price_cents_per_kwh", "fit_cents_per_kwh"):
            if key not in kwargs:
                raise ConfigError(f"missing config key {key!r}")
        if kwargs.get("synthetic") is not None:
            if not isinstance(kwargs["synthetic"], Mapping):
                raise ConfigError("synthetic must be an object")
            kwargs["synthetic"] = SyntheticConfig.from_dict(kwargs["synthetic"])
        return cls(**kwargs, base_dir=None if base_dir is None else str(base_dir))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ScenarioConfig":
        path = Path(path)
        return cls.from_dict(_read_json(path), path.parent)

    def to_dict(self) -> dict:
        out = {}
        for key in self.KEYS:
            value = getattr(self, key)
            if isinstance(value, Fraction):
                value = str(value)
            elif isinstance(value, SyntheticConfig):
                value = dict(vars(value))
            elif key == "willing_to_donate":
                value = {str(k): v for k, v in sorted(value.items())}
            out[key] = value
        return out

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and self.base_dir is not None:
            p = Path(self.base_dir) / p
        return p

    def readings_key(self):
        """Identity of the readings source, for checking that matrix cells agree."""
        if self.synthetic is not None:
            return ("synthetic", tuple(sorted(vars(self.synthetic).items())))
        return ("path", str(self.resolve(self.readings_path).resolve()),
                tuple(sorted(self.column_mapping.items())))


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _read_json(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None


def load_readings(config: ScenarioConfig) -> ReadingSeries:
    if config.synthetic is not None:
        return generate_synthetic(config.synthetic)
    return parse_readings(config.resolve(config.readings_path), config.column_mapping)


# -- run artifacts ---------------------------------------------------------------

@dataclass(frozen=True)
class StepRecord:
    timestep: int
    timestamp: str
    utility_price: int
    clearing_price: int
    requested_wh: int
    offered_wh: int
    traded_wh: int
    donation_need_wh: int
    donated_wh: int


@dataclass(frozen=True)
class BalanceEntry:
    timestep: int
    peer: int
    kind: str  # "credit" or "expire"
    amount: int


@dataclass
class RunArtifacts:
    config: ScenarioConfig
    steps: list[StepRecord]
    trades: list[Trade]
    donations: list[DonationEvent]
    balance_log: list[BalanceEntry]
    fund: FundLedger
    tokens: TokenLedger
    peers: dict[int, PeerState]
    report: DonationReport
    participation: ParticipationStats
    monthly_deposit: int

    @property
    def clearing_prices(self) -> list[int]:
        return [s.clearing_price for s in self.steps]

    def serialize(self) -> dict[str, str]:
        """File name -> file content. Identical inputs give identical bytes."""
        return {
            "steps.csv": _csv(
                ["timestep", "timestamp", "utility_price_cents", "clearing_price_cents", "requested_wh",
                 "offered_wh", "traded_wh", "donation_need_wh", "donated_wh"],
                ([s.timestep, s.timestamp, s.utility_price, s.clearing_price, s.requested_wh,
                  s.offered_wh, s.traded_wh, s.donation_need_wh, s.donated_wh] for s in self.steps),
            ),
            "trades.csv": _csv(
                ["timestep", "seller", "buyer", "quantity_wh", "unit_price_cents", "payment_cents"],
                ([t.timestep, t.seller, t.buyer, t.quantity, t.unit_price, t.payment] for t in self.trades),
            ),
            "donations.csv": _csv(
                ["timestep", "donee", "quantity_wh", "source", "payee", "payment_cents", "donor"],
                ([e.timestep, e.donee, e.quantity, e.source.value, _blank(e.payee), e.payment, _blank(e.donor)]
                 for e in self.donations),
            ),
            "fund_ledger.csv": _csv(
                ["timestep", "kind", "amount_cents", "counterparty", "balance_cents"],
                ([e.timestep, e.kind.value, e.amount, e.counterparty, e.balance_after]
                 for e in self.fund.entries),
            ),
            "balance_ledger.csv": _csv(
                ["timestep", "peer", "kind", "amount_cents"],
                ([b.timestep, b.peer, b.kind, b.amount] for b in self.balance_log),
            ),
            "governance.jsonl": self.tokens.to_jsonl(),
            "final_state.json": _json({
                "peers": [
                    {"id": p.id, "role": p.role.value, "balance_cents": p.balance,
                     "willing_to_donate": p.willing_to_donate}
                    for p in sorted(self.peers.values(), key=lambda p: p.id)
                ],
                "fund_balance_cents": self.fund.balance,
                "monthly_deposit_cents": self.monthly_deposit,
                "tokens": self.tokens.snapshot(),
            }),
            "report.json": _json({
                "scenario_id": self.config.scenario_id,
                "config": self.config.to_dict(),
                "donation_report": self.report.to_dict(),
                "participation": self.participation.to_dict(),
            }),
        }

    def write(self, out_dir: Union[str, Path]) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, content in self.serialize().items():
            with open(out / name, "w", newline="") as fh:
                fh.write(content)
        return out


def _blank(x):
    return "" if x is None else x


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- the simulation loop ----------------------------------------------------------

def _willingness(config: ScenarioConfig, prosumers: list[int]) -> dict[int, bool]:
    willing = {p: True for p in prosumers}
    if config.donor_fraction is not None:
        k = round_half_up(config.donor_fraction.numerator * len(prosumers), config.donor_fraction.denominator)
        chosen = set(random.Random(f"{config.seed}:donors").sample(prosumers, k))
        willing = {p: p in chosen for p in prosumers}
    for peer, flag in config.willing_to_donate.items():
        if peer in willing:
            willing[peer] = flag
    return willing


def run(config: ScenarioConfig, readings: Optional[ReadingSeries] = None) -> RunArtifacts:
    """Simulate one scenario end to end."""
    if readings is None:
        readings = load_readings(config)
    up_spec = config.utility_price_cents_per_kwh
    utility = load_utility_prices(up_spec if _is_int(up_spec) else config.resolve(up_spec), readings.timestamps)
    if config.fit_cents_per_kwh > min(utility):
        raise ConfigError(f"feed-in tariff {config.fit_cents_per_kwh} exceeds minimum utility price {min(utility)}")
    balances = build_balance_schedule(readings, utility, config.balance_percentage)
    deposits = build_donation_schedule(balances)

    peer_ids = readings.peers
    prosumers = [p for p in peer_ids if readings.is_prosumer(p)]
    willing = _willingness(config, prosumers)
    peers = {
        p: PeerState(p, Role.PROSUMER if p in willing else Role.CONSUMER, 0, willing.get(p, False))
        for p in peer_ids
    }
    eligible = None if config.auto_approve_eligibility else {int(p) for p in config.eligible_peers}

    fund = FundLedger()
    tokens = TokenLedger(config.mint_tokens_per_kwh)
    price_state = PriceState.initial(config.fit_cents_per_kwh, utility[0])
    steps: list[StepRecord] = []
    trades_log: list[Trade] = []
    donations_log: list[DonationEvent] = []
    balance_log: list[BalanceEntry] = []
    money_in = 0  # credits + deposits - expiries - grid payments, for the running money check

    month_index = {k: i for i, k in enumerate(balances.months)}
    current_month = None
    algorithm = config.donation_algorithm
    production, consumption = readings.production, readings.consumption

    for t, ts in enumerate(readings.timestamps):
        month = month_index[(ts.year, ts.month)]
        if month != current_month:
            current_month = month
            for p in peer_ids:
                peer = peers[p]
                if not config.balance_carryover and peer.balance:
                    balance_log.append(BalanceEntry(t, p, "expire", peer.balance))
                    money_in -= peer.balance
                    peer.balance = 0
                credit = balances.credits[p][month]
                if credit:
                    peer.credit(credit)
                    balance_log.append(BalanceEntry(t, p, "credit", credit))
                    money_in += credit
            if deposits.deposit:
                fund.deposit(t, deposits.deposit)
                money_in += deposits.deposit

        order = list(peer_ids)
        random.Random(f"{config.seed}:{t}").shuffle(order)
        prev_price = price_state.last
        offers, requests = [], []
        requested = offered = 0
        for arrival, p in enumerate(order):
            net = production[p][t] - consumption[p][t]
            kind = classify_intent(net, peers[p].balance, prev_price)
            if kind is None:
                continue
            intent = MarketIntent(p, kind, abs(net), arrival)
            if kind is IntentKind.OFFER:
                offers.append(intent)
                offered += intent.quantity
            else:
                if kind is IntentKind.BUY_REQUEST:
                    requested += intent.quantity
                requests.append(intent)

        up = utility[t]
        price = price_state.clear(DemandSupplySnapshot(requested, offered), up)
        budgets = {i.peer: peers[i.peer].balance for i in requests if i.kind is IntentKind.BUY_REQUEST}
        trades, residual = match_fcfs(offers, requests, price, t, budgets)
        try:
            settle(trades, peers)
        except SimulationError as exc:
            raise InvariantError(f"timestep {t} ({ts.isoformat()}): settlement: {exc}") from None

        if eligible is not None:
            residual.donation_need = {p: q for p, q in residual.donation_need.items() if p in eligible}
        need_before = residual.total_need()
        surplus_before = residual.total_surplus()
        events = donate(algorithm, residual, fund, price, up, willing, t)

        donated = peer_sourced = 0
        for ev in events:
            donated += ev.quantity
            if ev.source is Source.PEER_FUNDED:
                peers[ev.payee].credit(ev.payment)
                peer_sourced += ev.quantity
            elif ev.source is Source.PEER_DIRECT:
                peer_sourced += ev.quantity
            else:
                money_in -= ev.payment
            tokens.mint_for_donation(ev)

        _check_step(t, ts, peers, fund, money_in, donated, need_before, residual,
                    peer_sourced, surplus_before)
        traded = sum(tr.quantity for tr in trades)
        steps.append(StepRecord(t, ts.isoformat(timespec="minutes"), up, price, requested,
                                offered, traded, need_before, donated))
        trades_log.extend(trades)
        donations_log.extend(events)

    return RunArtifacts(
        config=config,
        steps=steps,
        trades=trades_log,
        donations=donations_log,
        balance_log=balance_log,
        fund=fund,
        tokens=tokens,
        peers=peers,
        report=aggregate(donations_log, [s.clearing_price for s in steps]),
        participation=participation(donations_log, peer_ids),
        monthly_deposit=deposits.deposit,
    )


def _check_step(t, ts, peers, fund, money_in, donated, need_before, residual, peer_sourced, surplus_before):
    def fail(name, detail):
        raise InvariantError(f"timestep {t} ({ts.isoformat()}): {name}: {detail}")

    if fund.balance < 0:
        fail("fund non-negative", f"fund balance {fund.balance}")
    held = sum(p.balance for p in peers.values())
    if held + fund.balance != money_in:
        fail("money conservation", f"peers {held} + fund {fund.balance} != inflows {money_in}")
    if donated + residual.total_need() != need_before:
        fail("need cap", f"donated {donated} + unmet {residual.total_need()} != need {need_before}")
    if peer_sourced + residual.total_surplus() != surplus_before:
        fail("supply conservation", f"peer-sourced {peer_sourced} exceeds surplus {surplus_before}")


# -- scenario matrices --------------------------------------------------------------

def load_matrix(path: Union[str, Path]) -> list[ScenarioConfig]:
    """Expand a matrix file: a ``base`` config plus ``sweep`` lists and/or ``scenarios`` overrides."""
    path = Path(path)
    data = _read_json(path)
    if not isinstance(data, Mapping) or "base" not in data:
        raise ConfigError("matrix config needs a 'base' object")
    unknown = set(data) - {"base", "sweep", "scenarios"}
    if unknown:
        raise ConfigError(f"unknown matrix keys: {', '.join(sorted(unknown))}")
    overrides = []
    sweep = data.get("sweep") or {}
    if sweep:
        keys = sorted(sweep)
        for values in itertools.product(*(sweep[k] for k in keys)):
            overrides.append(dict(zip(keys, values)))
    overrides.extend(data.get("scenarios") or [])
    if not overrides:
        raise ConfigError("matrix config defines no scenarios")
    configs = [ScenarioConfig.from_dict({**data["base"], **o}, path.parent) for o in overrides]
    ids = [c.scenario_id for c in configs]
    if len(set(ids)) != len(ids):
        raise ConfigError("matrix scenario ids are not unique")
    return configs


@dataclass
class MatrixResult:
    configs: list[ScenarioConfig]
    runs: dict[str, object]  # scenario id -> RunArtifacts or the exception that stopped it
    comparison: Comparison

    @property
    def failures(self) -> dict[str, SimulationError]:
        return {k: v for k, v in self.runs.items() if not isinstance(v, RunArtifacts)}


def _run_cell(args):
    config, readings = args
    try:
        return run(config, readings)
    except SimulationError as exc:
        return exc


def run_matrix(configs: Sequence[ScenarioConfig], jobs: int = 1) -> MatrixResult:
    """Run every scenario over shared readings and compare the results."""
    if not configs:
        raise ConfigError("empty scenario matrix")
    keys = {c.readings_key() for c in configs}
    if len(keys) != 1:
        raise ConfigError("matrix scenarios use different readings sources")
    cells_seen = [(c.donation_algorithm, c.balance_percentage) for c in configs]
    if len(set(cells_seen)) != len(cells_seen):
        raise ConfigError("matrix has two scenarios for the same algorithm and balance percentage")
    readings = load_readings(configs[0])
    work = [(c, readings) for c in configs]
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, work))
    else:
        results = [_run_cell(w) for w in work]
    runs = {c.scenario_id: r for c, r in zip(configs, results)}
    cells = {}
    for c, r in zip(configs, results):
        if not isinstance(r, RunArtifacts):
            log.warning("scenario %s failed: %s", c.scenario_id, r)
        cells[(c.donation_algorithm, c.balance_percentage)] = r.report if isinstance(r, RunArtifacts) else f"failed: {r}"
    return MatrixResult(list(configs), runs, compare(cells))
