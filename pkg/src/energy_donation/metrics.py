"""Run-level donation metrics and cross-scenario comparison tables."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .donation import ALGORITHM_SOURCES, ALGORITHMS, DonationEvent, Source
from .errors import ConfigError
from .model import Cents, Wh, cost_cents

ROW_LABELS = ("External Donations (MW)", "Internal Donations (GW)", "Total Donated (MW)")


@dataclass(frozen=True)
class DonationReport:
    grid_funded_wh: Wh = 0
    peer_funded_wh: Wh = 0
    peer_direct_wh: Wh = 0
    grid_payments_cents: Cents = 0
    prosumer_payments_cents: Cents = 0
    direct_value_cents: Cents = 0  # peer_direct energy valued at the clearing price
    event_count: int = 0

    @property
    def external_donated_wh(self) -> Wh:
        return self.grid_funded_wh + self.peer_funded_wh

    @property
    def internal_donated_wh(self) -> Wh:
        return self.peer_direct_wh

    @property
    def total_donated_wh(self) -> Wh:
        return self.external_donated_wh + self.internal_donated_wh

    @property
    def funded_payments_cents(self) -> Cents:
        return self.grid_payments_cents + self.prosumer_payments_cents

    @property
    def expenses_cents(self) -> Cents:
        return self.funded_payments_cents + self.direct_value_cents

    @property
    def external_cost_cents_per_kwh(self) -> Optional[Fraction]:
        if self.external_donated_wh == 0:
            return None
        return Fraction(self.funded_payments_cents * 1000, self.external_donated_wh)

    @property
    def external_cost_per_mwh(self) -> Optional[Fraction]:
        """EUR per MWh of externally funded energy."""
        c = self.external_cost_cents_per_kwh
        return None if c is None else c * 10

    def source_shares(self) -> dict[Source, Fraction]:
        total = self.total_donated_wh
        if total == 0:
            return {s: Fraction(0) for s in Source}
        return {
            Source.GRID_FUNDED: Fraction(self.grid_funded_wh, total),
            Source.PEER_FUNDED: Fraction(self.peer_funded_wh, total),
            Source.PEER_DIRECT: Fraction(self.peer_direct_wh, total),
        }

    def to_dict(self) -> dict:
        cost = self.external_cost_per_mwh
        return {
            "grid_funded_wh": self.grid_funded_wh,
            "peer_funded_wh": self.peer_funded_wh,
            "peer_direct_wh": self.peer_direct_wh,
            "external_donated_wh": self.external_donated_wh,
            "internal_donated_wh": self.internal_donated_wh,
            "total_donated_wh": self.total_donated_wh,
            "grid_payments_cents": self.grid_payments_cents,
            "prosumer_payments_cents": self.prosumer_payments_cents,
            "direct_value_cents": self.direct_value_cents,
            "expenses_cents": self.expenses_cents,
            "external_cost_eur_per_mwh": None if cost is None else _num(cost),
            "source_shares": {s.value: _num(v) for s, v in self.source_shares().items()},
            "event_count": self.event_count,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DonationReport":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


def _num(x: Fraction) -> float:
    return round(float(x), 9)


def aggregate(donations: Iterable[DonationEvent], clearing_prices: Sequence[int]) -> DonationReport:
    """Sum a donation log by source.

    ``clearing_prices[t]`` values the free peer-to-peer energy given at
    timestep ``t``.
    """
    totals = {s: 0 for s in Source}
    grid_paid = prosumer_paid = direct_value = n = 0
    for ev in donations:
        n += 1
        totals[ev.source] += ev.quantity
        if ev.source is Source.GRID_FUNDED:
            grid_paid += ev.payment
        elif ev.source is Source.PEER_FUNDED:
            prosumer_paid += ev.payment
        else:
            direct_value += cost_cents(ev.quantity, clearing_prices[ev.timestep])
    return DonationReport(
        totals[Source.GRID_FUNDED], totals[Source.PEER_FUNDED], totals[Source.PEER_DIRECT],
        grid_paid, prosumer_paid, direct_value, n,
    )


@dataclass(frozen=True)
class ParticipationStats:
    pct_sellers_for_donation: Fraction = Fraction(0)
    pct_direct_donors: Fraction = Fraction(0)
    pct_donation_receivers: Fraction = Fraction(0)
    pct_donors_turned_donees: Fraction = Fraction(0)

    def to_dict(self) -> dict:
        return {k: _num(getattr(self, k)) for k in self.__dataclass_fields__}


def participation(donations: Iterable[DonationEvent], peers: Sequence[int]) -> ParticipationStats:
    """Shares of the whole roster; donors-turned-donees is a share of direct donors."""
    sellers, donors, donees = set(), set(), set()
    for ev in donations:
        donees.add(ev.donee)
        if ev.source is Source.PEER_FUNDED:
            sellers.add(ev.payee)
        elif ev.source is Source.PEER_DIRECT:
            donors.add(ev.donor)
    n = len(peers)
    if n == 0:
        return ParticipationStats()
    return ParticipationStats(
        Fraction(len(sellers), n),
        Fraction(len(donors), n),
        Fraction(len(donees), n),
        Fraction(len(donors & donees), len(donors)) if donors else Fraction(0),
    )


def percent_change(new: int, base: int) -> Optional[Fraction]:
    """Relative change of ``new`` over ``base``; None when base is zero."""
    if base == 0:
        return None
    return Fraction(new, base) - 1


def pct_label(fraction: Fraction) -> str:
    """0.0005 -> '0.05' (the balance fraction written as a percentage)."""
    d = Decimal(fraction.numerator * 100) / Decimal(fraction.denominator)
    return format(d.normalize(), "f")


def _fixed(wh: int, digits: int) -> str:
    scale = 10 ** digits
    return f"{wh // scale}.{wh % scale:0{digits}d}"


@dataclass
class Comparison:
    """Reports for an algorithm x balance-percentage grid.

    A cell holding a string instead of a report marks a failed run.
    """

    algorithms: list[str]
    percentages: list[Fraction]
    cells: dict[tuple[str, Fraction], object] = field(default_factory=dict)

    def report(self, algorithm: str, pct: Fraction) -> Optional[DonationReport]:
        cell = self.cells.get((algorithm, pct))
        return cell if isinstance(cell, DonationReport) else None

    @property
    def complete(self) -> bool:
        return all(isinstance(c, DonationReport) for c in self.cells.values())

    def average_total(self, algorithm: str) -> Optional[Fraction]:
        reports = [self.report(algorithm, p) for p in self.percentages]
        if not reports or any(r is None for r in reports):
            return None
        return Fraction(sum(r.total_donated_wh for r in reports), len(reports))

    def changes(self) -> dict[tuple[str, str], Optional[Fraction]]:
        """Pairwise relative change of average total donated energy, (a over b)."""
        out = {}
        for a in self.algorithms:
            for b in self.algorithms:
                ta, tb = self.average_total(a), self.average_total(b)
                out[(a, b)] = None if ta is None or tb is None or tb == 0 else ta / tb - 1
        return out

    # -- rendering ---------------------------------------------------------

    def _cell_values(self, algorithm: str, pct: Fraction) -> list[str]:
        cell = self.cells.get((algorithm, pct))
        if not isinstance(cell, DonationReport):
            return ["failed"] * 3
        sources = ALGORITHM_SOURCES[algorithm]
        funded = {Source.GRID_FUNDED, Source.PEER_FUNDED} & sources
        ext = _fixed(cell.external_donated_wh, 6) if funded else "N.A."
        internal = _fixed(cell.internal_donated_wh, 9) if Source.PEER_DIRECT in sources else "N.A."
        return [ext, internal, _fixed(cell.total_donated_wh, 6)]

    def column_headers(self) -> list[tuple[str, str]]:
        return [(f"Balance Percentage: {pct_label(p)}", a.upper())
                for p in self.percentages for a in self.algorithms]

    def table_rows(self) -> list[list[str]]:
        columns = [self._cell_values(a, p) for p in self.percentages for a in self.algorithms]
        return [[label] + [col[i] for col in columns] for i, label in enumerate(ROW_LABELS)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Metric"] + [f"{group} / {alg}" for group, alg in self.column_headers()])
        w.writerows(self.table_rows())
        return buf.getvalue()

    def render_table(self) -> str:
        headers = self.column_headers()
        rows = self.table_rows()
        first = max(len("Metric"), *(len(r[0]) for r in rows))
        widths = [max(len(h[0]) if i % len(self.algorithms) == 0 else 0, len(h[1]),
                      *(len(r[i + 1]) for r in rows)) for i, h in enumerate(headers)]
        widths = [max(w, 8) for w in widths]
        groups = ["Metric".ljust(first)]
        for i, (group, _) in enumerate(headers):
            groups.append((group if i % len(self.algorithms) == 0 else "").ljust(widths[i]))
        lines = ["  ".join(groups).rstrip()]
        lines.append("  ".join([" " * first] + [h[1].rjust(widths[i]) for i, h in enumerate(headers)]))
        for r in rows:
            lines.append("  ".join([r[0].ljust(first)] + [v.rjust(widths[i]) for i, v in enumerate(r[1:])]))
        lines.append("")
        lines.append("Average donated energy across balance percentages (Wh):")
        for a in self.algorithms:
            avg = self.average_total(a)
            lines.append(f"  {a.upper():5s} {'failed' if avg is None else f'{float(avg):.1f}'}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        cells = []
        for p in self.percentages:
            for a in self.algorithms:
                cell = self.cells.get((a, p))
                entry = {"algorithm": a, "balance_percentage": str(p)}
                if isinstance(cell, DonationReport):
                    entry["report"] = cell.to_dict()
                else:
                    entry["failed"] = str(cell)
                cells.append(entry)
        averages = {a: (None if self.average_total(a) is None else _num(self.average_total(a)))
                    for a in self.algorithms}
        changes = [{"algorithm": a, "baseline": b, "change": None if c is None else _num(c)}
                   for (a, b), c in self.changes().items() if a != b]
        return {
            "columns": [f"{g} / {a}" for g, a in self.column_headers()],
            "rows": {r[0]: r[1:] for r in self.table_rows()},
            "cells": cells,
            "average_total_donated_wh": averages,
            "pairwise_change": changes,
            "complete": self.complete,
        }


def compare(reports: Mapping[tuple[str, object], object]) -> Comparison:
    """Arrange per-scenario reports into an algorithm x balance-percentage grid.

    Every algorithm present must have been run at the same set of balance
    percentages.
    """
    if not reports:
        raise ConfigError("nothing to compare")
    by_alg: dict[str, set[Fraction]] = {}
    cells = {}
    for (alg, pct), report in reports.items():
        pct = Fraction(pct)
        by_alg.setdefault(alg, set()).add(pct)
        cells[(alg, pct)] = report
    pct_sets = list(by_alg.values())
    if any(s != pct_sets[0] for s in pct_sets):
        raise ConfigError("algorithms were run over different balance percentages")
    algorithms = [a for a in ALGORITHMS if a in by_alg] + sorted(set(by_alg) - set(ALGORITHMS))
    return Comparison(algorithms, sorted(pct_sets[0]), cells)
