"""Acceptance checks, one test per criterion.

Each test records a one-line detail; conftest prints a PASS/FAIL line per
criterion at the end of the run. Monte Carlo checks share one outcome pool,
so a bundle simulated by one criterion is not re-simulated by another.
"""

from __future__ import annotations

import time
from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from dclc.catalog import parse_month, seed_catalog
from dclc.cli import main
from dclc.fleet import Cohort, FleetState
from dclc.lifecycle import OPERATION_FLAGS, OperationPolicy, RefreshPolicy, simulate
from dclc.perf import (SloSpec, Unservable, WorkloadShape, max_goodput, model_requirements, roofline_latency,
                       scan_goodput)
from dclc.scenario import save_scenario
from dclc.search import (PolicyBundle, ScenarioDistribution, holistic_space, monte_carlo,
                         optimize, refresh_generations, stage_space)
from dclc.tco import (COMPONENTS, AmortizationSchedule, InfrastructureDesign, PowerDesign, PriceBook,
                      amortize, amortize_month, annual_tco, facility_snapshot, fleet_capacity, make_design,
                      stranded_power)

MC_TRIALS = 200
HOLISTIC_TRIALS = 50
REFRESH_GRID = (0, 36, 84, 120)
SEED = 0


def note(request, text):
    request.node.user_properties.append(("detail", text))


class Clock:
    def __init__(self, limit_s):
        self.limit = limit_s
        self.start = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.start

    def check(self):
        assert self.elapsed < self.limit, f"took {self.elapsed:.1f}s, limit {self.limit}s"


def saving(mc, bundle, base):
    dist, pool = mc
    d = monte_carlo(dist, bundle, MC_TRIALS, SEED, pool).normalized(base)
    assert d.exhausted == 0, f"{bundle.label} exhausted capacity in {d.exhausted} trials"
    return 1.0 - d.mean_ratio


@pytest.fixture(scope="module")
def mc_base(mc, baseline_bundle):
    dist, pool = mc
    return monte_carlo(dist, baseline_bundle, MC_TRIALS, SEED, pool)


# --- 1 ------------------------------------------------------------------------------------------

@pytest.mark.criterion(1, "roofline anchor")
def test_roofline_anchor(request, catalog):
    clock = Clock(1.0)
    skus, models = catalog
    req = model_requirements(models["llama3-70b"], WorkloadShape())
    est = roofline_latency(req, skus["H200"], 8, 10.0)
    note(request, f"TTFT {est.ttft_ms:.0f} ms, TBT {est.tbt_ms:.1f} ms (targets 200 and 50 +-25%)")
    assert est.ttft_ms == pytest.approx(200, rel=0.25)
    assert est.tbt_ms == pytest.approx(50, rel=0.25)
    clock.check()


# --- 2 ------------------------------------------------------------------------------------------

@pytest.mark.criterion(2, "goodput search equals linear scan")
def test_goodput_oracle_every_pair(request):
    clock = Clock(60.0)
    skus, models = seed_catalog()
    mismatches, unservable = [], 0
    for model in models:
        for sku in skus:
            try:
                fast = max_goodput(model, WorkloadShape(), sku, SloSpec()).goodput_rps
            except Unservable:
                fast = None
            try:
                slow = scan_goodput(model, WorkloadShape(), sku, SloSpec())
            except Unservable:
                slow = None
            unservable += fast is None
            if (fast is None) != (slow is None) or (fast is not None and abs(fast - slow) > 1e-9):
                mismatches.append((model.id, sku.id, fast, slow))
    pairs = len(skus) * len(models)
    note(request, f"{pairs} pairs, {unservable} unservable by both, {len(mismatches)} mismatches, "
                  f"{clock.elapsed:.1f}s")
    assert not mismatches
    clock.check()


# --- 3 ------------------------------------------------------------------------------------------

_H100 = {s.id: s for s in seed_catalog()[0]}["H100"]
_A100 = {s.id: s for s in seed_catalog()[0]}["A100"]
_MONTH = parse_month("2024-01")
_PRICES, _SCHED, _DESIGN = PriceBook(), AmortizationSchedule(), make_design()


@settings(max_examples=10_000, derandomize=True)
@given(st.integers(0, 10 ** 12), st.integers(1, 240), st.sampled_from(["straight-line", "declining-balance"]))
def _amortization_conserves(cost, months, method):
    monthly = [amortize_month(cost, months, m, method) for m in range(months + 2)]
    assert all(c >= 0 for c in monthly) and monthly[-1] == monthly[-2] == 0
    if method == "straight-line":
        assert sum(monthly) == cost
    else:
        assert sum(monthly) <= cost
    years = Fraction(months, 12)
    assert sum(amortize(cost, years, y, method) for y in range(months // 12 + 2)) == sum(monthly)


@settings(max_examples=10_000, derandomize=True)
@given(st.integers(0, 5000), st.integers(0, 5000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def _tco_additive(a, b, ua, ub):
    ca = Cohort(_H100, _MONTH, a, 60)
    cb = Cohort(_A100, _MONTH - 24, b, 48)
    whole = annual_tco(FleetState(_MONTH, (ca, cb), utilization=(ua, ub), peak_utilization=(ua, ub),
                                  provisioned_watts=0.0),
                       _DESIGN, _PRICES, _SCHED)
    parts = [annual_tco(FleetState(_MONTH, (c,), utilization=(u,), peak_utilization=(u,), provisioned_watts=0.0),
                        _DESIGN, _PRICES, _SCHED) for c, u in ((ca, ua), (cb, ub))]
    assert all(isinstance(getattr(whole, n), int) for n in COMPONENTS)
    assert whole.total == sum(getattr(whole, n) for n in COMPONENTS)
    for name in COMPONENTS:
        # each component is rounded to the cent once per fleet
        assert abs(getattr(whole, name) - sum(getattr(p, name) for p in parts)) <= 1


@settings(max_examples=10_000, derandomize=True)
@given(st.floats(1.0, 1e8), st.floats(1.0, 1e5), st.floats(1.0, 1e6))
def _stranded_bounded(budget, tdp, domain):
    n, left = stranded_power(budget, tdp)
    assert 0 <= left < tdp and n >= 0
    assert n * tdp + left == pytest.approx(budget, rel=1e-9)
    flat = make_design("per-dc", facility_capacity_watts=budget)
    split = InfrastructureDesign(power=PowerDesign("per-pdu", domain), facility_capacity_watts=budget)
    assert fleet_capacity(split, tdp) <= fleet_capacity(flat, tdp) == n


@pytest.mark.criterion(3, "cost engine exactness")
def test_cost_engine_properties(request):
    clock = Clock(60.0)
    _amortization_conserves()
    _tco_additive()
    _stranded_bounded()
    note(request, f"3 x 10,000 cases in {clock.elapsed:.1f}s")
    clock.check()


# --- 4 ------------------------------------------------------------------------------------------

@pytest.mark.criterion(4, "10 MW facility breakdown")
def test_facility_breakdown(request, catalog):
    clock = Clock(10.0)
    skus, _ = catalog
    prices = replace(PriceBook(), energy_tariff_per_mwh=4_000)     # top of the 20-40 USD/MWh range
    snap = facility_snapshot(skus["H100"], make_design(), prices, AmortizationSchedule(), 0.75)
    parts = {n: getattr(snap.breakdown, n) for n in COMPONENTS}
    order = sorted(parts, key=parts.get, reverse=True)
    note(request, f"{snap.servers} servers, {snap.facility_energy_mwh / 1000:.1f} GWh/yr, "
                  f"order {' > '.join(order)}")
    assert snap.servers == pytest.approx(500, rel=0.15)
    assert snap.facility_energy_mwh == pytest.approx(70_000, rel=0.15)
    assert order[:2] == ["capex_it", "opex_energy"]
    smallest = sorted(parts.values())[:2]
    assert parts["capex_building"] in smallest and parts["opex_maintenance"] <= sorted(parts.values())[2]
    clock.check()


# --- 5 ------------------------------------------------------------------------------------------

@pytest.mark.criterion(5, "baseline timeline")
def test_baseline_timeline(request, baseline):
    clock = Clock(30.0)
    result = simulate(baseline, RefreshPolicy(), OperationPolicy())
    counts = dict(zip(result.months, result.server_totals))
    start = result.server_totals[0]
    year_2024 = [counts[m] for m in range(parse_month("2024-01"), parse_month("2025-01"))]
    peak = max(year_2024)
    note(request, f"start {start} servers, 2024 peak {peak} (target 25K +-30%), {clock.elapsed:.1f}s")
    assert not result.halted
    assert start == 50
    assert peak == pytest.approx(25_000, rel=0.30)
    clock.check()


# --- 6 ------------------------------------------------------------------------------------------

@pytest.mark.criterion(6, "build-stage deltas")
def test_build_stage(request, mc, baseline, mc_base):
    clock = Clock(300.0)
    cap = baseline.design.facility_capacity_watts

    def pp(power="per-pdu", cooling="air", network="ethernet"):
        return 100 * saving(mc, PolicyBundle(make_design(power, cooling, network, cap)), mc_base)

    power = pp("per-dc")
    cooling = {c: pp(cooling=c) for c in ("air", "hybrid", "liquid")}
    nvlink, hier = pp(network="nvlink"), pp(network="hierarchical")
    note(request, f"per-dc {power:.1f} pp, hybrid {cooling['hybrid']:.1f} pp (liquid {cooling['liquid']:.1f}), "
                  f"hierarchical vs nvlink {hier - nvlink:.1f} pp")
    assert power > 0 and max(cooling, key=cooling.get) == "hybrid" and hier > nvlink
    assert abs(power - 4.2) <= 2.0
    assert abs(cooling["hybrid"] - 9) <= 3
    assert abs((hier - nvlink) - 6) <= 3
    clock.check()


# --- 7 ------------------------------------------------------------------------------------------

@pytest.mark.criterion(7, "refresh sweep")
def test_refresh_sweep(request, mc, baseline, baseline_bundle):
    clock = Clock(600.0)
    dist, pool = mc
    space = stage_space("refresh", baseline, baseline_bundle, REFRESH_GRID)
    res = optimize(dist, space, trials=MC_TRIALS, seed=SEED, pool=pool)
    best_saving = 1 - res.baseline_ratio
    skips = []
    for cand in res.candidates:
        overrides = dict(cand.bundle.refresh.lifetime_months_by_generation)
        if list(overrides.values()) == [0] and cand.dist.exhausted == 0 and cand.ratio < 1.0:
            skips.append((next(iter(overrides)), cand.ratio))
    note(request, f"best {res.best.label} saves {100 * best_saving:.1f}%; skip beats keeping for "
                  f"{', '.join(f'{g} ({r:.3f})' for g, r in skips) or 'none'}; {clock.elapsed:.0f}s")
    assert 0.15 <= best_saving <= 0.25
    assert skips
    assert set(g for g, _ in skips) <= set(refresh_generations(baseline))
    clock.check()


# --- 8 ------------------------------------------------------------------------------------------

@pytest.mark.criterion(8, "operation optimizations")
def test_operation_savings(request, mc, baseline, mc_base):
    clock = Clock(300.0)
    single = {f: saving(mc, PolicyBundle(baseline.design, op=OperationPolicy().with_flags(f)), mc_base)
              for f in OPERATION_FLAGS}
    combined = saving(mc, PolicyBundle(baseline.design, op=OperationPolicy.all_on()), mc_base)
    note(request, f"single {100 * min(single.values()):.1f}-{100 * max(single.values()):.1f}%, "
                  f"combined {100 * combined:.1f}% vs sum {100 * sum(single.values()):.1f}%")
    for flag, s in single.items():
        assert 0.12 <= s <= 0.39, flag
    assert combined > 0.50
    assert abs(combined - sum(single.values())) > 0.05
    clock.check()


# --- 9 ------------------------------------------------------------------------------------------

@pytest.mark.criterion(9, "cross-stage optimum")
def test_holistic_optimum(request, mc, baseline, baseline_bundle):
    clock = Clock(1800.0)
    dist, pool = mc
    stages = {}
    for stage in ("build", "refresh", "operate"):
        space = stage_space(stage, baseline, baseline_bundle, REFRESH_GRID)
        stages[stage] = optimize(dist, space, trials=HOLISTIC_TRIALS, seed=SEED, pool=pool)
    space = holistic_space(dist, baseline_bundle, stages, HOLISTIC_TRIALS, SEED, pool=pool)
    res = optimize(dist, space, trials=HOLISTIC_TRIALS, seed=SEED, pool=pool)
    saved = 1 - res.baseline_ratio
    note(request, f"holistic {res.best.label} saves {100 * saved:.1f}%; stage ratios "
                  + ", ".join(f"{k} {r.baseline_ratio:.3f}" for k, r in stages.items())
                  + f"; {len(space)} candidates, {clock.elapsed:.0f}s")
    assert saved >= 0.35
    assert all(res.baseline_ratio <= r.baseline_ratio for r in stages.values())
    clock.check()


# --- 10 -----------------------------------------------------------------------------------------

COMMAND_LINES = {
    "simulate": ["simulate", "--scenario", "baseline"],
    "sweep": ["sweep", "--stage", "operate", "--trials", "2"],
    "optimize": ["optimize", "--scenario", "{short}", "--trials", "2", "--lifetimes", "0,60"],
    "matrix": ["matrix", "--scenario", "{short}", "--space", "operate", "--trials", "1"],
    "validate": ["validate", "--scenario", "baseline"],
}


@pytest.mark.criterion(10, "determinism")
def test_determinism(request, tmp_path, baseline, capsys):
    clock = Clock(300.0)
    short = replace(baseline, horizon_months=12, demand=replace(baseline.demand, horizon_months=12))
    short_path = tmp_path / "short.yaml"
    save_scenario(short, short_path)
    for name, argv in COMMAND_LINES.items():
        argv = [a.replace("{short}", str(short_path)) for a in argv]
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / name / run
            code = main(["--seed", "11"] + argv + ["--out", str(out)])
            assert code == 0, (name, code)
            files = {p.name: p.read_bytes() for p in sorted(out.iterdir())} if out.exists() else {}
            outputs.append((files, capsys.readouterr().out.replace(str(out), "<out>")))
        assert outputs[0] == outputs[1], name
    dist = ScenarioDistribution(baseline)
    bundle = PolicyBundle(baseline.design)
    few = monte_carlo(dist, bundle, 8, 3)
    many = monte_carlo(dist, bundle, 16, 3)
    assert many.values[:8] == few.values and many.halt_offsets[:8] == few.halt_offsets
    note(request, f"{len(COMMAND_LINES)} subcommands byte-identical, prefix stable 8 -> 16 trials, "
                  f"{clock.elapsed:.0f}s")
    clock.check()
