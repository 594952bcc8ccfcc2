"""Independent replay of a run's serialized logs.

Works only from the files a run writes plus the raw readings, with its own
rounding (via Fraction) and its own bookkeeping, so it shares no code path
with the engine beyond the input data.
"""
from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from fractions import Fraction


def rnd(x: Fraction) -> int:
    return math.floor(Fraction(x) + Fraction(1, 2))


def rows(files, name):
    return list(csv.DictReader(io.StringIO(files[name])))


class OracleFailure(AssertionError):
    pass


def check(cond, msg):
    if not cond:
        raise OracleFailure(msg)


def expected_credits(readings, utility, pct: Fraction):
    """(peer, month key) -> credit cents, recomputed from raw readings."""
    owed = defaultdict(int)  # Wh x cents/kWh
    for t, ts in enumerate(readings.timestamps):
        for p in readings.peers:
            need = readings.consumption[p][t] - readings.production[p][t]
            if need > 0:
                owed[(p, (ts.year, ts.month))] += need * utility[t]
    return {k: rnd(pct * Fraction(v, 1000)) for k, v in owed.items()}


def replay_money(files, readings, pct: Fraction, carryover: bool = True):
    steps = rows(files, "steps.csv")
    utility = [int(s["utility_price_cents"]) for s in steps]
    clearing = [int(s["clearing_price_cents"]) for s in steps]
    credits = expected_credits(readings, utility, pct)
    months = []
    for ts in readings.timestamps:
        k = (ts.year, ts.month)
        if k not in months:
            months.append(k)
    monthly_totals = [sum(v for (p, m), v in credits.items() if m == k) for k in months]
    deposit = rnd(Fraction(sum(monthly_totals), len(months)))

    by_t = defaultdict(lambda: {"bal": [], "trades": [], "don": [], "fund": []})
    for r in rows(files, "balance_ledger.csv"):
        by_t[int(r["timestep"])]["bal"].append(r)
    for r in rows(files, "trades.csv"):
        by_t[int(r["timestep"])]["trades"].append(r)
    for r in rows(files, "donations.csv"):
        by_t[int(r["timestep"])]["don"].append(r)
    for r in rows(files, "fund_ledger.csv"):
        by_t[int(r["timestep"])]["fund"].append(r)

    balance = {p: 0 for p in readings.peers}
    fund = 0
    inflow = 0
    grid_paid = 0
    seen_months = set()
    for t, ts in enumerate(readings.timestamps):
        ev = by_t.get(t, {"bal": [], "trades": [], "don": [], "fund": []})
        key = (ts.year, ts.month)
        first_hour = key not in seen_months
        seen_months.add(key)
        # month-start money
        credited = {}
        for r in ev["bal"]:
            check(first_hour, f"t={t}: balance entry off a month boundary")
            p, amount = int(r["peer"]), int(r["amount_cents"])
            if r["kind"] == "expire":
                check(not carryover and amount == balance[p], f"t={t}: bad expiry for {p}")
                balance[p] = 0
                inflow -= amount
            else:
                check(r["kind"] == "credit", "unknown balance kind")
                balance[p] += amount
                inflow += amount
                credited[p] = amount
        if first_hour:
            for p in readings.peers:
                check(credited.get(p, 0) == credits.get((p, key), 0),
                      f"t={t}: credit for peer {p} is {credited.get(p, 0)}, expected {credits.get((p, key), 0)}")
            if not carryover:
                check(all(balance[p] == credited.get(p, 0) for p in readings.peers), "carryover leaked")
        deposits = [r for r in ev["fund"] if r["kind"] == "deposit"]
        if first_hour and deposit:
            check(len(deposits) == 1 and int(deposits[0]["amount_cents"]) == deposit,
                  f"t={t}: expected one deposit of {deposit}")
        else:
            check(not deposits, f"t={t}: unexpected deposit")
        for r in deposits:
            fund += int(r["amount_cents"])
            inflow += int(r["amount_cents"])
        # trades
        for r in ev["trades"]:
            q, price, pay = int(r["quantity_wh"]), int(r["unit_price_cents"]), int(r["payment_cents"])
            check(price == clearing[t], f"t={t}: trade not at clearing price")
            check(pay == rnd(Fraction(q * price, 1000)), f"t={t}: trade payment rule")
            b, s = int(r["buyer"]), int(r["seller"])
            balance[b] -= pay
            balance[s] += pay
            check(balance[b] >= 0, f"t={t}: buyer {b} overdrawn")
        # donations
        paid = {"grid_payment": 0, "prosumer_payment": 0}
        for r in ev["don"]:
            q, pay, src = int(r["quantity_wh"]), int(r["payment_cents"]), r["source"]
            if src == "grid_funded":
                check(r["payee"] == "grid" and pay == rnd(Fraction(q * utility[t], 1000)), f"t={t}: grid rule")
                fund -= pay
                grid_paid += pay
                inflow -= pay
                paid["grid_payment"] += pay
            elif src == "peer_funded":
                check(pay == rnd(Fraction(q * clearing[t], 1000)), f"t={t}: prosumer rule")
                fund -= pay
                balance[int(r["payee"])] += pay
                paid["prosumer_payment"] += pay
            else:
                check(src == "peer_direct" and pay == 0 and r["payee"] == "", f"t={t}: direct rule")
            check(fund >= 0, f"t={t}: fund overdrawn")
        for kind in paid:
            logged = sum(int(r["amount_cents"]) for r in ev["fund"] if r["kind"] == kind)
            check(logged == paid[kind], f"t={t}: fund ledger {kind} {logged} != donations {paid[kind]}")

    state = json.loads(files["final_state.json"])
    final = {p["id"]: p["balance_cents"] for p in state["peers"]}
    check(final == balance, "final peer balances differ from replay")
    check(state["fund_balance_cents"] == fund, "final fund differs from replay")
    check(sum(balance.values()) + fund == inflow, "total money does not reconcile")
    return {"balances": balance, "fund": fund, "grid_paid": grid_paid}


def replay_energy(files, readings):
    received = defaultdict(int)
    supplied = defaultdict(int)
    total_in = total_out = grid = 0
    for r in rows(files, "trades.csv"):
        t, q = int(r["timestep"]), int(r["quantity_wh"])
        check(q > 0, "empty trade")
        received[(t, int(r["buyer"]))] += q
        supplied[(t, int(r["seller"]))] += q
        total_in += q
        total_out += q
    for r in rows(files, "donations.csv"):
        t, q = int(r["timestep"]), int(r["quantity_wh"])
        check(q > 0, "empty donation")
        received[(t, int(r["donee"]))] += q
        total_in += q
        if r["source"] == "grid_funded":
            check(r["donor"] == "", "grid energy has no peer donor")
            grid += q
        else:
            supplied[(t, int(r["donor"]))] += q
            total_out += q
    for (t, p), q in received.items():
        need = readings.consumption[p][t] - readings.production[p][t]
        check(q <= max(need, 0), f"t={t}: peer {p} received {q} > need {need}")
    for (t, p), q in supplied.items():
        surplus = readings.production[p][t] - readings.consumption[p][t]
        check(q <= max(surplus, 0), f"t={t}: peer {p} supplied {q} > surplus {surplus}")
    check(total_in == total_out + grid, "energy received != peer supply + grid supply")
    return {"received": total_in, "peer_supplied": total_out, "grid": grid}
