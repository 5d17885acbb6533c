"""Monthly fleet simulator.

Each month: retire cohorts past their service life, activate newly released
models, split demand across the served models, assign it to cohorts, buy
servers on shortfall, and record power draw. Capital charges are accrued
after the loop from the purchase ledger, which keeps the monthly step cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .catalog import HardwareSku, ModelSpec, compact_models, format_month, frontier_models
from .fleet import Cohort, FleetState
from .perf import (SPANNING_SERVERS, PerfConfig, ProfileModifier, SloSpec, Unservable, WorkloadShape,
                   cached_goodput, model_requirements, smallest_tp)
from .tco import (COMPONENTS, HOURS_PER_YEAR, AmortizationSchedule, InfrastructureDesign, PriceBook,
                  TcoBreakdown, cents, provisioned_watts)

if TYPE_CHECKING:  # pragma: no cover
    from .scenario import Scenario

PURCHASE_MODES = ("on-availability", "on-demand")
HOURS_PER_MONTH = HOURS_PER_YEAR / 12


def _default_diurnal() -> Tuple[float, ...]:
    hours = np.arange(24)
    return tuple(float(x) for x in 1.0 + 0.3 * np.cos(2 * np.pi * (hours - 15) / 24))


@dataclass(frozen=True)
class DemandTrajectory:
    base_rps: float = 100_000.0
    annual_growth: float = 0.15
    diurnal_shape: Tuple[float, ...] = field(default_factory=_default_diurnal)
    horizon_months: int = 180

    def __post_init__(self) -> None:
        if not self.base_rps > 0:
            raise ValueError("base_rps must be > 0")
        if not self.annual_growth > -1:
            raise ValueError("annual_growth must be > -1")
        if len(self.diurnal_shape) != 24 or min(self.diurnal_shape) < 0:
            raise ValueError("diurnal_shape needs 24 non-negative fractions")
        if abs(sum(self.diurnal_shape) / 24 - 1.0) > 1e-9:
            raise ValueError("diurnal_shape must have mean 1")
        if self.horizon_months < 1:
            raise ValueError("horizon_months must be >= 1")

    @property
    def peak_factor(self) -> float:
        return max(self.diurnal_shape)


@dataclass(frozen=True)
class Demand:
    mean_rps: float
    peak_rps: float


def demand_at(traj: DemandTrajectory, month: int) -> Demand:
    if not 0 <= month < traj.horizon_months:
        raise IndexError(f"month {month} outside 0..{traj.horizon_months - 1}")
    mean = traj.base_rps * (1.0 + traj.annual_growth) ** (month / 12.0)
    return Demand(mean, mean * traj.peak_factor)


@dataclass(frozen=True)
class RefreshPolicy:
    # ((sku id, months), ...); 0 skips the generation
    lifetime_months_by_generation: Tuple[Tuple[str, int], ...] = ()
    default_lifetime_months: Optional[int] = 60
    purchase_mode: str = "on-availability"

    def __post_init__(self) -> None:
        if self.purchase_mode not in PURCHASE_MODES:
            raise ValueError(f"unknown purchase_mode {self.purchase_mode!r}")
        for sku_id, months in self.lifetime_months_by_generation:
            if months != 0 and not 12 <= months <= 120:
                raise ValueError(f"lifetime for {sku_id} must be 0 or 12..120 months")
        if self.default_lifetime_months is not None and not self.default_lifetime_months >= 1:
            raise ValueError("default lifetime must be >= 1 month")
        ids = [k for k, _ in self.lifetime_months_by_generation]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate generation in refresh policy")

    def lifetime_for(self, sku_id: str) -> Optional[int]:
        return dict(self.lifetime_months_by_generation).get(sku_id, self.default_lifetime_months)

    def skips(self, sku_id: str) -> bool:
        return self.lifetime_for(sku_id) == 0

    @property
    def skip_set(self) -> frozenset:
        return frozenset(k for k, v in self.lifetime_months_by_generation if v == 0)

    def with_lifetime(self, sku_id: str, months: int) -> "RefreshPolicy":
        table = dict(self.lifetime_months_by_generation)
        if months == self.default_lifetime_months:
            table.pop(sku_id, None)
        else:
            table[sku_id] = months
        return replace(self, lifetime_months_by_generation=tuple(sorted(table.items())))


OPERATION_FLAGS = ("migration_smoothing", "quantization", "kv_cache_mgmt", "disaggregation",
                   "alt_architectures", "model_routing", "hetero_scheduling", "infra_scheduling")


@dataclass(frozen=True)
class OperationPolicy:
    migration_smoothing: bool = False
    migration_window_months: int = 12
    quantization: bool = False
    quant_compute_factor: float = 0.8
    quant_memory_factor: float = 0.7
    kv_cache_mgmt: bool = False
    kv_byte_factor: float = 0.7
    prefix_reuse_fraction: float = 0.4
    disaggregation: bool = False
    alt_architectures: bool = False
    alt_active_factor: float = 0.7
    model_routing: bool = False
    small_model_fraction: float = 0.3
    hetero_scheduling: bool = False
    # without hetero scheduling a model only runs on SKUs released at most this long before it
    deployment_window_months: int = 38
    infra_scheduling: bool = False
    headroom_factor: float = 1.15

    def __post_init__(self) -> None:
        for name in ("quant_compute_factor", "quant_memory_factor", "kv_byte_factor",
                     "alt_active_factor", "small_model_fraction"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if not 0 <= self.prefix_reuse_fraction < 1:
            raise ValueError("prefix_reuse_fraction must lie in [0, 1)")
        if self.migration_window_months < 0 or self.deployment_window_months < 0:
            raise ValueError("windows must be >= 0")
        if self.headroom_factor < 1:
            raise ValueError("headroom_factor must be >= 1")

    def enabled(self) -> Tuple[str, ...]:
        return tuple(f for f in OPERATION_FLAGS if getattr(self, f))

    def with_flags(self, *names: str, value: bool = True) -> "OperationPolicy":
        unknown = set(names) - set(OPERATION_FLAGS)
        if unknown:
            raise ValueError(f"unknown operation flags {sorted(unknown)}")
        return replace(self, **{n: value for n in names})

    @classmethod
    def all_on(cls, **params) -> "OperationPolicy":
        return cls(**params).with_flags(*OPERATION_FLAGS)

    def profile_modifier(self) -> ProfileModifier:
        mod = ProfileModifier()
        if self.quantization:
            mod = mod * ProfileModifier(compute=self.quant_compute_factor, weight_bytes=self.quant_memory_factor,
                                        kv_bytes=self.quant_memory_factor)
        if self.kv_cache_mgmt:
            mod = mod * ProfileModifier(kv_bytes=self.kv_byte_factor, prefill=1.0 - self.prefix_reuse_fraction)
        if self.alt_architectures:
            mod = mod * ProfileModifier(active=self.alt_active_factor)
        return mod


@dataclass(frozen=True)
class EffectiveRequirements:
    profile: ProfileModifier
    adoption: float   # fraction of the model's lineage traffic that has moved to it


def adoption(policy: OperationPolicy, months_since_release: int) -> float:
    if months_since_release < 0:
        return 0.0
    window = policy.migration_window_months if policy.migration_smoothing else 0
    if window == 0:
        return 1.0
    return min(1.0, months_since_release / window)


def effective_requirements(model: ModelSpec, policy: OperationPolicy,
                           months_since_release: int) -> EffectiveRequirements:
    mod = policy.profile_modifier()
    if model.architecture == "ssm" and policy.alt_architectures:
        # already recurrent: nothing left to gain from conversion
        mod = mod * ProfileModifier(active=1.0 / policy.alt_active_factor)
    return EffectiveRequirements(mod, adoption(policy, months_since_release))


def frontier_shares(models: Sequence[ModelSpec], month: int, policy: OperationPolicy) -> List[Tuple[ModelSpec, float]]:
    """Traffic split across released frontier models, newest first.

    A model's adoption ramps linearly over the migration window; traffic it has
    not yet captured stays with its predecessors in the same way.
    """
    released = [m for m in models if m.release_month <= month]
    remaining = 1.0
    out: List[Tuple[ModelSpec, float]] = []
    for i, m in enumerate(sorted(released, key=lambda m: m.release_month, reverse=True)):
        a = adoption(policy, month - m.release_month)
        if i == len(released) - 1:
            a = 1.0
        share = remaining * a
        if share > 1e-12:
            out.append((m, share))
        remaining -= share
        if remaining <= 1e-12:
            break
    return out


# ---------------------------------------------------------------------------
# assignment

@dataclass(frozen=True)
class DemandClass:
    model: ModelSpec
    rps: float


@dataclass
class Assignment:
    # per class index: list of (cohort index, rps served)
    served: Dict[int, List[Tuple[int, float]]]
    busy: np.ndarray               # server units used per cohort
    shortfall: Dict[Tuple[int, str], float]   # (class index, phase) -> rps


class GoodputTable:
    """Per-server goodput lookups for one scenario and operation policy.

    A replica may span several servers only for models that no SKU in
    ``roadmap`` can hold within one server.
    """

    def __init__(self, shape: WorkloadShape, slo: SloSpec, perf: PerfConfig, design: InfrastructureDesign,
                 policy: OperationPolicy, roadmap: Sequence[HardwareSku] = ()):
        self.shape, self.slo, self.policy = shape, slo, policy
        self.base = replace(perf, tp_penalty=design.network.tp_penalty)
        self.design = design
        self.roadmap = tuple(roadmap)
        self._cache: Dict[Tuple[str, str, str], float] = {}
        self._spans: Dict[str, bool] = {}

    def config_for(self, sku: HardwareSku) -> PerfConfig:
        return replace(self.base, perf_factor=self.base.perf_factor * self.design.cooling.perf_factor(sku.tdp_server_watts))

    def _needs_span(self, model: ModelSpec) -> bool:
        hit = self._spans.get(model.id)
        if hit is None:
            req = model_requirements(model, self.shape, effective_requirements(model, self.policy, 0).profile)
            hit = bool(self.roadmap)
            for sku in self.roadmap:
                try:
                    smallest_tp(req, sku, self.config_for(sku))
                except Unservable:
                    continue
                hit = False
                break
            self._spans[model.id] = hit
        return hit

    def get(self, sku: HardwareSku, model: ModelSpec, phase: str = "both") -> float:
        key = (sku.id, model.id, phase)
        hit = self._cache.get(key)
        if hit is None:
            mod = effective_requirements(model, self.policy, 0).profile
            config = self.config_for(sku)
            if self._needs_span(model):
                config = replace(config, max_servers_per_replica=max(config.max_servers_per_replica,
                                                                     SPANNING_SERVERS))
            hit = cached_goodput(model, self.shape, sku, self.slo, config, mod, phase)
            self._cache[key] = hit
        return hit


def _order_cohorts(cohorts: Sequence[Cohort], idx: Sequence[int], table: GoodputTable, model: ModelSpec,
                   by_value: bool, phase: str, oldest_first: bool = False) -> List[int]:
    if by_value:
        def value(i: int) -> float:
            c = cohorts[i]
            return table.get(c.sku, model, phase) / c.sku.server_cost_cents
        return sorted(idx, key=lambda i: (-value(i), -cohorts[i].purchase_month))
    sign = 1 if oldest_first else -1
    return sorted(idx, key=lambda i: (sign * cohorts[i].sku.release_month, sign * cohorts[i].purchase_month))


def port_cutoff(model: ModelSpec, policy: OperationPolicy, cutoffs: Optional[Mapping[str, int]] = None) -> int:
    """Oldest SKU release month a model is deployed on without heterogeneity-aware scheduling."""
    if cutoffs and model.id in cutoffs:
        return cutoffs[model.id]
    return model.release_month - policy.deployment_window_months


def assign_fleet(demand: Sequence[DemandClass], cohorts: Sequence[Cohort], policy: OperationPolicy,
                 table: GoodputTable, free: Optional[np.ndarray] = None,
                 cutoffs: Optional[Mapping[str, int]] = None) -> Assignment:
    """Greedy fill of demand onto cohorts.

    Without heterogeneity-aware scheduling a model is only deployed on SKUs
    released at most ``deployment_window_months`` before it (older stacks
    are not ported) and cohorts are filled newest generation first.
    With it, any memory- and SLO-feasible cohort is eligible and the fill
    order is goodput per dollar. Disaggregation places the prompt phase
    under those rules and lets the token phase run on any feasible cohort,
    oldest first. ``cutoffs`` overrides the oldest eligible release month
    per model id.
    """
    n = len(cohorts)
    capacity = np.array([c.server_count for c in cohorts], dtype=float) if free is None else free.copy()
    busy = np.zeros(n)
    served: Dict[int, List[Tuple[int, float]]] = {}
    shortfall: Dict[Tuple[int, str], float] = {}
    hetero = policy.hetero_scheduling
    # compact models first so they claim the cheap old hardware
    order = sorted(range(len(demand)), key=lambda k: (demand[k].model.tier != "compact",
                                                     -demand[k].model.release_month))
    for k in order:
        cls = demand[k]
        if cls.rps <= 0:
            continue
        model = cls.model
        oldest = port_cutoff(model, policy, cutoffs)
        tied = [i for i in range(n) if hetero or cohorts[i].sku.release_month >= oldest]
        phases = ("prefill", "decode") if policy.disaggregation else ("both",)
        for phase in phases:
            eligible = tied if phase != "decode" else list(range(n))
            rank = _order_cohorts(cohorts, eligible, table, model, hetero, phase,
                                  oldest_first=(phase == "decode" and not hetero))
            left = cls.rps
            for i in rank:
                if left <= 0:
                    break
                if capacity[i] <= 1e-12:
                    continue
                g = table.get(cohorts[i].sku, model, phase)
                if g <= 0:
                    continue
                take = min(left, capacity[i] * g)
                units = take / g
                capacity[i] -= units
                busy[i] += units
                left -= take
                if phase != "decode":
                    served.setdefault(k, []).append((i, take))
            if left > 1e-9 * max(cls.rps, 1.0):
                shortfall[(k, phase)] = left
    return Assignment(served, busy, shortfall)


# ---------------------------------------------------------------------------
# simulation

@dataclass(frozen=True)
class Event:
    month: int
    kind: str          # purchase | decommission | model-release | sku-available | halt
    subject: str
    count: int = 0

    def as_row(self) -> Tuple[str, str, str, int]:
        return (format_month(self.month), self.kind, self.subject, self.count)


@dataclass
class SimulationResult:
    fleet_timeline: List[FleetState]
    annual_tco: List[TcoBreakdown]
    years: List[int]
    event_log: List[Event]
    counts: List[Dict[str, int]]          # servers per SKU id, one entry per simulated month
    months: List[int]
    halted: bool = False
    halt_month: Optional[int] = None
    halt_reason: str = ""

    @property
    def lifetime_tco(self) -> int:
        return sum(b.total for b in self.annual_tco)

    @property
    def server_totals(self) -> List[int]:
        return [sum(c.values()) for c in self.counts]


class CapacityExhausted(RuntimeError):
    pass


def _lifetime_or_default(policy: RefreshPolicy, sku: HardwareSku) -> Optional[int]:
    life = policy.lifetime_for(sku.id)
    return None if life == 0 else life


def _accrue(costs: np.ndarray, start: np.ndarray, life: np.ndarray, n_months: int) -> np.ndarray:
    """Monthly straight-line charges of many assets (integer cents, exact).

    Month ``a`` of an asset's life is charged floor(c(a+1)/n) - floor(ca/n),
    so the charges of a full life sum to the cost exactly.
    """
    out = np.zeros(n_months, dtype=np.int64)
    keep = (costs != 0) & (start < n_months)
    costs, start, life = costs[keep], start[keep], life[keep]
    for n in np.unique(life).tolist():
        sel = life == n
        c = costs[sel][:, None].astype(np.int64)
        s = start[sel][:, None]
        a = np.arange(n, dtype=np.int64)[None, :]
        charges = (c * (a + 1)) // n - (c * a) // n
        idx = s + a
        inside = idx < n_months
        np.add.at(out, idx[inside], charges[inside])
    return out


def _accrue_declining(costs: np.ndarray, start: np.ndarray, life: np.ndarray, n_months: int) -> np.ndarray:
    from .tco import amortize_month
    out = np.zeros(n_months, dtype=np.int64)
    for cost, s, n in zip(costs.tolist(), start.tolist(), life.tolist()):
        for a in range(0, min(n, n_months - s)):
            out[s + a] += amortize_month(cost, n, a, "declining-balance")
    return out


def simulate(scenario: "Scenario", refresh: RefreshPolicy, op: OperationPolicy,
             record_timeline: bool = True) -> SimulationResult:
    skus, models = scenario.resolve()
    return Simulator(scenario, skus, models, refresh, op, record_timeline).run()


class Simulator:
    def __init__(self, scenario: "Scenario", skus: Sequence[HardwareSku], models: Sequence[ModelSpec],
                 refresh: RefreshPolicy, op: OperationPolicy, record_timeline: bool = True):
        self.sc = scenario
        self.skus = sorted(skus, key=lambda s: (s.available_month, s.release_month))
        self.frontier = frontier_models(models)
        self.compact = compact_models(models)
        self.refresh, self.op = refresh, op
        self.record = record_timeline
        self.design: InfrastructureDesign = scenario.design
        self.table = GoodputTable(scenario.shape, scenario.slo, scenario.perf, self.design, op, self.skus)
        self.oversub = op.headroom_factor if op.infra_scheduling else 1.0
        self._watts_cache: Dict[Tuple[float, int], float] = {}
        # per model: oldest deployable SKU release, fixed when the model goes live
        self.cutoffs: Dict[str, int] = {}

    # -- demand -------------------------------------------------------------
    def demand_classes(self, month: int, target_rps: float) -> List[DemandClass]:
        frontier_rps = target_rps
        out: List[DemandClass] = []
        if self.op.model_routing:
            small = [m for m in self.compact if m.release_month <= month]
            if small:
                routed = target_rps * self.op.small_model_fraction
                out.append(DemandClass(small[-1], routed))
                frontier_rps -= routed
        for model, share in frontier_shares(self.frontier, month, self.op):
            out.append(DemandClass(model, frontier_rps * share))
        return out

    # -- purchasing ---------------------------------------------------------
    def _servers_needed(self, sku: HardwareSku, demand: Sequence[DemandClass],
                        shortfall: Dict[Tuple[int, str], float]) -> Optional[int]:
        units = 0.0
        for (k, phase), rps in shortfall.items():
            model = demand[k].model
            if (not self.op.hetero_scheduling and phase != "decode"
                    and sku.release_month < port_cutoff(model, self.op, self.cutoffs)):
                return None
            g = self.table.get(sku, model, phase)
            if g <= 0:
                return None
            units += rps / g
        return max(1, math.ceil(units - 1e-9))

    def _cutoff_at_release(self, model: ModelSpec, month: int) -> int:
        """The usual window, widened to the newest purchasable generation when
        nothing that recent can be bought (the model is ported to it)."""
        cutoff = model.release_month - self.op.deployment_window_months
        buyable = [s.release_month for s in self.skus
                   if s.available_month <= month and not self.refresh.skips(s.id)]
        if buyable and max(buyable) < cutoff:
            cutoff = max(buyable)
        return cutoff

    def choose_purchase(self, month: int, demand: Sequence[DemandClass],
                        shortfall: Dict[Tuple[int, str], float]) -> Optional[Tuple[HardwareSku, int]]:
        best = None
        for sku in self.skus:
            if sku.available_month > month or self.refresh.skips(sku.id):
                continue
            n = self._servers_needed(sku, demand, shortfall)
            if n is None:
                continue
            if self.refresh.purchase_mode == "on-availability":
                key = (-sku.release_month, n * sku.server_cost_cents)
            else:
                key = (n * sku.server_cost_cents, -sku.release_month)
            if best is None or key < best[0]:
                best = (key, sku, n)
        return None if best is None else (best[1], best[2])

    def _cohort_watts(self, c: Cohort) -> float:
        key = (c.sku.tdp_server_watts, c.server_count)
        w = self._watts_cache.get(key)
        if w is None:
            w = provisioned_watts(self.design, c.sku.tdp_server_watts, c.server_count, self.oversub)
            self._watts_cache[key] = w
        return w

    def _built_watts(self, cohorts: Sequence[Cohort]) -> float:
        return sum(self._cohort_watts(c) for c in cohorts)

    # -- main loop ----------------------------------------------------------
    def run(self) -> SimulationResult:
        sc, op = self.sc, self.op
        n_months = sc.horizon_months
        start = sc.start_month
        traj = sc.demand
        cohorts: List[Cohort] = []
        for sku_id, count in sc.initial_fleet:
            sku = next(s for s in self.skus if s.id == sku_id)
            cohorts.append(Cohort(sku, start, count, _lifetime_or_default(self.refresh, sku)))
        events: List[Event] = [Event(start, "purchase", c.sku.id, c.server_count) for c in cohorts]
        released = set()
        available = set()
        timeline: List[FleetState] = []
        counts: List[Dict[str, int]] = []
        purchases: List[Tuple[int, Cohort]] = [(0, c) for c in cohorts]
        energy_wh = np.zeros(n_months)
        peak_w = np.zeros(n_months)
        servers = np.zeros(n_months, dtype=np.int64)
        built = np.zeros(n_months)
        built_so_far = 0.0
        live_watts = self._built_watts(cohorts)
        cap = self.design.facility_capacity_watts
        halted, halt_month, reason = False, None, ""
        pue = self.design.cooling.pue

        for t in range(n_months):
            month = start + t
            # (1) retire
            if any(c.expired(month) for c in cohorts):
                keep = []
                for c in cohorts:
                    if c.expired(month):
                        events.append(Event(month, "decommission", c.sku.id, c.server_count))
                        live_watts -= self._cohort_watts(c)
                    else:
                        keep.append(c)
                cohorts = keep
            # (2) activations
            for m in self.frontier + self.compact:
                if m.release_month <= month and m.id not in released:
                    released.add(m.id)
                    self.cutoffs[m.id] = self._cutoff_at_release(m, month)
                    if m.release_month >= start:
                        events.append(Event(month, "model-release", m.id))
            for s in self.skus:
                if s.available_month <= month and s.id not in available:
                    available.add(s.id)
                    if s.available_month >= start:
                        events.append(Event(month, "sku-available", s.id))
            # (3) demand
            d = demand_at(traj, t)
            target = max(d.mean_rps, d.peak_rps / self.oversub)
            demand = self.demand_classes(month, target)
            # (4) assign
            result = assign_fleet(demand, cohorts, op, self.table, cutoffs=self.cutoffs)
            busy = result.busy
            # (5) purchase on shortfall
            if result.shortfall:
                choice = self.choose_purchase(month, demand, result.shortfall)
                if choice is None:
                    halted, halt_month, reason = True, month, "no available SKU can serve the demand"
                else:
                    sku, n = choice
                    new = Cohort(sku, month, n, _lifetime_or_default(self.refresh, sku))
                    if live_watts + self._cohort_watts(new) > cap:
                        halted, halt_month, reason = True, month, "facility power capacity exhausted"
                    else:
                        cohorts = cohorts + [new]
                        purchases.append((t, new))
                        events.append(Event(month, "purchase", sku.id, n))
                        result = assign_fleet(demand, cohorts, op, self.table, cutoffs=self.cutoffs)
                        busy = result.busy
                        # re-assignment can shift classes between cohorts and leave
                        # a sliver unserved; top up on the new SKU until it clears
                        for _ in range(32):
                            if not result.shortfall:
                                break
                            extra = self._servers_needed(sku, demand, result.shortfall)
                            if extra is None:
                                break
                            n += extra
                            cohorts[-1] = replace(new, server_count=n)
                            purchases[-1] = (t, cohorts[-1])
                            events[-1] = Event(month, "purchase", sku.id, n)
                            result = assign_fleet(demand, cohorts, op, self.table, cutoffs=self.cutoffs)
                            busy = result.busy
                        if result.shortfall:
                            halted, halt_month, reason = True, month, "shortfall persists after purchase"
                        elif live_watts + self._cohort_watts(cohorts[-1]) > cap:
                            halted, halt_month, reason = True, month, "facility power capacity exhausted"
                        else:
                            live_watts += self._cohort_watts(cohorts[-1])
            if halted:
                events.append(Event(month, "halt", reason))
                n_months = t
                break
            # (6) record
            counts_now = np.array([c.server_count for c in cohorts], dtype=float)
            busy_frac = np.divide(busy, counts_now, out=np.zeros_like(busy), where=counts_now > 0)
            mean_u = np.minimum(busy_frac * (d.mean_rps / target), 1.0)
            peak_u = np.minimum(busy_frac * (d.peak_rps / target), 1.0)
            tdp = np.array([c.sku.tdp_server_watts for c in cohorts])
            idle = np.array([c.sku.idle_power_fraction for c in cohorts])
            draw_mean = counts_now * tdp * (idle + (1 - idle) * mean_u)
            draw_peak = counts_now * tdp * (idle + (1 - idle) * peak_u)
            energy_wh[t] = draw_mean.sum() * HOURS_PER_MONTH
            peak_w[t] = draw_peak.sum() * pue
            servers[t] = int(counts_now.sum())
            built_so_far = max(built_so_far, live_watts)
            built[t] = built_so_far
            per_sku: Dict[str, int] = {}
            for c in cohorts:
                per_sku[c.sku.id] = per_sku.get(c.sku.id, 0) + c.server_count
            counts.append(per_sku)
            if self.record:
                assignments = {}
                for k, parts in result.served.items():
                    total = sum(r for _, r in parts)
                    if total > 0:
                        merged: Dict[int, float] = {}
                        for i, r in parts:
                            merged[i] = merged.get(i, 0.0) + r / total
                        assignments[demand[k].model.id] = tuple(sorted(merged.items()))
                timeline.append(FleetState(month, tuple(cohorts), assignments,
                                           tuple(float(x) for x in mean_u), tuple(float(x) for x in peak_u)))

        annual, years = self._costs(purchases, energy_wh[:n_months], peak_w[:n_months], servers[:n_months],
                                    built[:n_months], n_months)
        return SimulationResult(timeline, annual, years, events, counts, list(range(start, start + n_months)),
                                halted, halt_month, reason)

    # -- costs --------------------------------------------------------------
    def _costs(self, purchases, energy_wh, peak_w, servers, built, n_months):
        sc = self.sc
        prices: PriceBook = sc.prices
        sched: AmortizationSchedule = sc.schedule
        design = self.design
        if n_months == 0:
            return [], []
        accrue = _accrue if sched.method == "straight-line" else _accrue_declining
        # IT and network capex per cohort
        it_cost = np.array([prices.server_cost(c.sku) * c.server_count for _, c in purchases], dtype=np.int64)
        it_life = np.array([c.lifetime_months if c.lifetime_months is not None else int(round(sched.it_years * 12))
                            for _, c in purchases], dtype=np.int64)
        start = np.array([t for t, _ in purchases], dtype=np.int64)
        net_unit = prices.network_capex_per_server * design.network.capex_multiplier / 100
        net_cost = np.array([cents(c.server_count * net_unit) for _, c in purchases], dtype=np.int64)
        net_life = np.full(len(purchases), int(round(sched.network_years * 12)), dtype=np.int64)
        capex_it = accrue(it_cost, start, it_life, n_months)
        capex_net = accrue(net_cost, start, net_life, n_months)
        # facility tranches whenever built capacity grows
        grow = np.diff(np.concatenate([[0.0], built]))
        t_idx = np.nonzero(grow > 0)[0]
        fac_life = np.full(len(t_idx), int(round(sched.facility_years * 12)), dtype=np.int64)
        power_cost = np.array([cents(grow[t] * prices.power_capex_per_watt * design.power.capex_multiplier / 100)
                               for t in t_idx], dtype=np.int64)
        cool_cost = np.array([cents(grow[t] * prices.cooling_capex_per_watt * design.cooling.capex_multiplier / 100)
                              for t in t_idx], dtype=np.int64)
        max_servers = np.maximum.accumulate(servers)
        area_grow = np.diff(np.concatenate([[0], max_servers]))
        a_idx = np.nonzero(area_grow > 0)[0]
        area_cost = np.array([cents(area_grow[t] * design.sqft_per_server * prices.building_capex_per_sqft / 100)
                              for t in a_idx], dtype=np.int64)
        capex_power = accrue(power_cost, t_idx.astype(np.int64), fac_life, n_months)
        capex_cool = accrue(cool_cost, t_idx.astype(np.int64), fac_life, n_months)
        capex_building = accrue(area_cost, a_idx.astype(np.int64),
                                np.full(len(a_idx), int(round(sched.facility_years * 12)), dtype=np.int64), n_months)
        # opex per month
        pue = design.cooling.pue
        energy = np.rint(energy_wh / 1e6 * pue * prices.energy_tariff_per_mwh).astype(np.int64)
        maint_rate = (prices.maintenance_per_server_yr * design.maintenance_rate
                      * design.cooling.maintenance_multiplier * design.power.maintenance_multiplier)
        maint = np.rint(servers * maint_rate / 12).astype(np.int64)
        net_op = np.rint(servers * prices.network_opex_per_server_yr * design.network.opex_multiplier / 12).astype(np.int64)
        software = np.rint(servers * prices.software_per_server_yr / 12).astype(np.int64)

        annual: List[TcoBreakdown] = []
        years: List[int] = []
        first_year = sc.start_month // 12
        for y0 in range(0, n_months, 12):
            sl = slice(y0, min(y0 + 12, n_months))
            months_in = sl.stop - sl.start
            peak_kw = float(peak_w[sl].max()) / 1e3
            peak_cost = int(round(peak_kw * prices.peak_demand_charge_per_kw_month * months_in))
            annual.append(TcoBreakdown(
                capex_it=int(capex_it[sl].sum()), capex_network=int(capex_net[sl].sum()),
                capex_building=int(capex_building[sl].sum()), capex_power=int(capex_power[sl].sum()),
                capex_cooling=int(capex_cool[sl].sum()), opex_energy=int(energy[sl].sum()),
                opex_peak_power=peak_cost, opex_maintenance=int(maint[sl].sum()),
                opex_network=int(net_op[sl].sum()), opex_software=int(software[sl].sum()),
            ))
            years.append(first_year + y0 // 12)
        return annual, years
