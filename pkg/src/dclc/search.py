"""Monte Carlo over scenario uncertainty and exhaustive policy search.

Trial ``i`` of a run with master seed ``s`` draws its scenario from
``SeedSequence(s, spawn_key=(i,))``, so a trial's scenario never depends on
how many trials run or in which order, and every candidate policy sees the
same scenarios (common random numbers).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .catalog import GrowthRegime, REGIME_SHAPES
from .lifecycle import OPERATION_FLAGS, OperationPolicy, RefreshPolicy, SimulationResult, simulate
from .scenario import Roadmap, Scenario
from .tco import COOLING_KINDS, NETWORK_KINDS, POWER_TOPOLOGIES, InfrastructureDesign, PriceBook, make_design

PERCENTILES = (5, 25, 50, 75, 95)
OBJECTIVES = ("mean", "p95")
SeedLike = Union[int, np.random.SeedSequence]


# ---------------------------------------------------------------------------
# scenario distribution

@dataclass(frozen=True)
class ScenarioDistribution:
    base: Scenario
    growth: Tuple[float, float, float] = (0.05, 0.15, 0.25)      # triangular (low, mode, high)
    model_regimes: Tuple[Tuple[str, float], ...] = (("medium-linear", 1.0),)
    hardware_regimes: Tuple[Tuple[str, float], ...] = (("medium-linear", 1.0),)
    regime_rate: float = 1.0
    availability_delay: Tuple[int, int] = (6, 12)                 # months, inclusive, projected SKUs
    tariff_usd_per_mwh: Tuple[float, float] = (20.0, 40.0)
    price_jitter: float = 0.1

    def __post_init__(self) -> None:
        lo, mode, hi = self.growth
        if not (-1 < lo <= mode <= hi):
            raise ValueError("growth needs -1 < low <= mode <= high")
        for name in ("model_regimes", "hardware_regimes"):
            weights = getattr(self, name)
            if not weights or any(s not in REGIME_SHAPES or w < 0 for s, w in weights):
                raise ValueError(f"{name}: shapes must be known and weights non-negative")
            if abs(sum(w for _, w in weights) - 1.0) > 1e-9:
                raise ValueError(f"{name}: weights must sum to 1")
        d_lo, d_hi = self.availability_delay
        if not 0 <= d_lo <= d_hi:
            raise ValueError("availability delay needs 0 <= low <= high")
        t_lo, t_hi = self.tariff_usd_per_mwh
        if not 0 < t_lo <= t_hi:
            raise ValueError("tariff needs 0 < low <= high")
        if not 0 <= self.price_jitter < 1:
            raise ValueError("price_jitter must lie in [0, 1)")
        if not self.regime_rate > 0:
            raise ValueError("regime_rate must be > 0")

    @classmethod
    def fixed(cls, base: Scenario) -> "ScenarioDistribution":
        """Zero-width distribution at the base scenario's own values."""
        tariff = base.prices.energy_tariff_per_mwh / 100
        model = base.models.regime or GrowthRegime()
        hw = base.hardware.regime or GrowthRegime()
        return cls(base, growth=(base.demand.annual_growth,) * 3, model_regimes=((model.shape, 1.0),),
                   hardware_regimes=((hw.shape, 1.0),), regime_rate=hw.rate, availability_delay=(9, 9),
                   tariff_usd_per_mwh=(tariff, tariff), price_jitter=0.0)

    def with_regimes(self, model_shape: str, hardware_shape: str) -> "ScenarioDistribution":
        return replace(self, model_regimes=((model_shape, 1.0),), hardware_regimes=((hardware_shape, 1.0),))


def _seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))


def trial_seed(master: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=(int(index),))


def _pick(rng: np.random.Generator, weights: Tuple[Tuple[str, float], ...]) -> str:
    if len(weights) == 1:
        rng.random()     # keep the draw count fixed
        return weights[0][0]
    u = rng.random()
    acc = 0.0
    for shape, w in weights:
        acc += w
        if u < acc:
            return shape
    return weights[-1][0]


def _jitter_prices(prices: PriceBook, rng: np.random.Generator, jitter: float, tariff_cents: int) -> PriceBook:
    names = [n for n in PriceBook.__dataclass_fields__ if n not in ("server_costs", "energy_tariff_per_mwh")]
    factors = rng.uniform(1 - jitter, 1 + jitter, size=len(names))
    values = {n: int(round(getattr(prices, n) * f)) for n, f in zip(names, factors)}
    return replace(prices, energy_tariff_per_mwh=tariff_cents, **values)


def sample_scenario(dist: ScenarioDistribution, seed: SeedLike) -> Scenario:
    """Deterministic draw of one scenario; the draw order is fixed."""
    rng = np.random.default_rng(_seed_sequence(seed))
    lo, mode, hi = dist.growth
    growth = mode if lo == hi else float(rng.triangular(lo, mode, hi))
    if lo == hi:
        rng.random()
    model_shape = _pick(rng, dist.model_regimes)
    hw_shape = _pick(rng, dist.hardware_regimes)
    d_lo, d_hi = dist.availability_delay
    delay = int(rng.integers(d_lo, d_hi + 1))
    t_lo, t_hi = dist.tariff_usd_per_mwh
    tariff = int(round(rng.uniform(t_lo, t_hi) * 100))
    prices = _jitter_prices(dist.base.prices, rng, dist.price_jitter, tariff)
    base = dist.base
    model_regime = replace(base.models.regime or GrowthRegime(), shape=model_shape, rate=dist.regime_rate)
    hw_regime = replace(base.hardware.regime or GrowthRegime(), shape=hw_shape, rate=dist.regime_rate,
                        synthetic_delay=delay)
    return replace(base, demand=replace(base.demand, annual_growth=growth),
                   models=Roadmap(base.models.seeds, model_regime),
                   hardware=Roadmap(base.hardware.seeds, hw_regime), prices=prices)


# ---------------------------------------------------------------------------
# policies

@dataclass(frozen=True)
class PolicyBundle:
    design: InfrastructureDesign
    refresh: RefreshPolicy = field(default_factory=RefreshPolicy)
    op: OperationPolicy = field(default_factory=OperationPolicy)

    @property
    def label(self) -> str:
        life = self.refresh.default_lifetime_months
        parts = [self.design.label, f"life={life}"]
        parts += [f"{k}={v}" for k, v in self.refresh.lifetime_months_by_generation]
        if self.refresh.purchase_mode != "on-availability":
            parts.append(self.refresh.purchase_mode)
        ops = self.op.enabled()
        parts.append("ops=" + ("+".join(ops) if ops else "none"))
        return " ".join(parts)

    def tie_key(self) -> Tuple:
        """Preference among equal objectives: simpler design, longer lives, fewer optimizations."""
        d = self.design
        complexity = (POWER_TOPOLOGIES.index(d.power.topology) + COOLING_KINDS.index(d.cooling.kind)
                      + ("ethernet", "infiniband", "hierarchical", "nvlink").index(d.network.kind))
        lives = [self.refresh.default_lifetime_months or 10 ** 6]
        lives += [v for _, v in self.refresh.lifetime_months_by_generation]
        return (complexity, -sum(lives), len(self.op.enabled()), self.label)


def enumerate_refresh_policies(generations: Sequence[str], lifetimes: Iterable[int], factorial: bool = False,
                               baseline: Optional[RefreshPolicy] = None, cap: int = 10 ** 6) -> List[RefreshPolicy]:
    """One-at-a-time variations of ``baseline`` (or the full factorial when asked)."""
    gens = list(generations)
    lives = sorted(set(lifetimes))
    if not gens or not lives:
        raise ValueError("need at least one generation and one lifetime")
    base = baseline or RefreshPolicy()
    if not factorial:
        return [base.with_lifetime(g, life) for g in gens for life in lives]
    size = len(lives) ** len(gens)
    if size > cap:
        raise ValueError(f"factorial space of {size} policies exceeds the cap of {cap}")
    out = []
    for combo in itertools.product(lives, repeat=len(gens)):
        policy = base
        for g, life in zip(gens, combo):
            policy = policy.with_lifetime(g, life)
        out.append(policy)
    return out


def all_designs(facility_capacity_watts: float) -> List[InfrastructureDesign]:
    return [make_design(p, c, n, facility_capacity_watts)
            for p in POWER_TOPOLOGIES for c in COOLING_KINDS for n in NETWORK_KINDS]


def operation_subsets(flags: Sequence[str] = OPERATION_FLAGS, base: Optional[OperationPolicy] = None) -> List[OperationPolicy]:
    base = base or OperationPolicy()
    out = []
    for r in range(len(flags) + 1):
        for combo in itertools.combinations(flags, r):
            out.append(base.with_flags(*combo))
    return out


# ---------------------------------------------------------------------------
# Monte Carlo

@dataclass(frozen=True)
class TcoDistribution:
    trials: int
    values: Tuple[Optional[int], ...]     # lifetime TCO cents per trial; None = capacity exhausted
    ratios: Optional[Tuple[Optional[float], ...]] = None   # per-trial value / baseline value
    # months offset from the start at which exhausted trials halted
    halt_offsets: Tuple[Optional[int], ...] = ()

    @property
    def ok(self) -> np.ndarray:
        return np.array([v for v in self.values if v is not None], dtype=float)

    @property
    def exhausted(self) -> int:
        return sum(v is None for v in self.values)

    @property
    def mean(self) -> float:
        ok = self.ok
        return float(ok.mean()) if ok.size else math.inf

    @property
    def std(self) -> float:
        ok = self.ok
        return float(ok.std(ddof=1)) if ok.size > 1 else 0.0

    @property
    def sem(self) -> float:
        ok = self.ok
        return self.std / math.sqrt(ok.size) if ok.size else math.inf

    def percentile(self, q: float) -> float:
        ok = self.ok
        return float(np.percentile(ok, q)) if ok.size else math.inf

    @property
    def percentiles(self) -> Dict[int, float]:
        return {q: self.percentile(q) for q in PERCENTILES}

    def objective(self, kind: str = "mean") -> float:
        if self.exhausted:
            return math.inf
        if kind == "mean":
            return self.mean
        if kind == "p95":
            return self.percentile(95)
        raise ValueError(f"unknown objective {kind!r}")

    def rank_key(self, kind: str = "mean") -> Tuple[int, float, float]:
        """Sort key: fewer exhausted trials, then later halts, then the cost objective."""
        if not self.exhausted:
            return (0, 0.0, self.objective(kind))
        halts = [h for h in self.halt_offsets if h is not None]
        later = -float(np.mean(halts)) if halts else 0.0
        return (self.exhausted, later, math.inf)

    def normalized(self, baseline: "TcoDistribution") -> "TcoDistribution":
        ratios = tuple(None if (v is None or b is None) else v / b for v, b in zip(self.values, baseline.values))
        return replace(self, ratios=ratios)

    @property
    def mean_ratio(self) -> Optional[float]:
        if self.ratios is None:
            return None
        ok = [r for r in self.ratios if r is not None]
        return float(np.mean(ok)) if ok else None


def scenario_for(bundle: PolicyBundle, scenario: Scenario) -> Scenario:
    return replace(scenario, design=bundle.design)


def run_trial(scenario: Scenario, bundle: PolicyBundle) -> SimulationResult:
    return simulate(scenario_for(bundle, scenario), bundle.refresh, bundle.op, record_timeline=False)


class ScenarioPool:
    """Sampled trial scenarios memoised by (master seed, index).

    Trial outcomes are memoised too, keyed by bundle, so overlapping
    searches over the same pool never simulate a (bundle, trial) twice.
    """

    def __init__(self, dist: ScenarioDistribution):
        self.dist = dist
        self._cache: Dict[Tuple[int, int], Scenario] = {}
        self._outcomes: Dict[Tuple[PolicyBundle, int, int], Tuple[Optional[int], Optional[int]]] = {}

    def outcome(self, bundle: PolicyBundle, seed: int, index: int) -> Tuple[Optional[int], Optional[int]]:
        """(lifetime TCO or None, halt offset or None) of one trial."""
        key = (bundle, seed, index)
        hit = self._outcomes.get(key)
        if hit is None:
            sc = self.get(seed, index)
            result = run_trial(sc, bundle)
            if result.halted:
                hit = (None, result.halt_month - sc.start_month)
            else:
                hit = (result.lifetime_tco, None)
            self._outcomes[key] = hit
        return hit

    def get(self, seed: int, index: int) -> Scenario:
        key = (seed, index)
        sc = self._cache.get(key)
        if sc is None:
            sc = sample_scenario(self.dist, trial_seed(seed, index))
            self._cache[key] = sc
        return sc


def monte_carlo(dist: ScenarioDistribution, bundle: PolicyBundle, trials: int, seed: int,
                pool: Optional[ScenarioPool] = None) -> TcoDistribution:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    pool = pool or ScenarioPool(dist)
    values: List[Optional[int]] = []
    halts: List[Optional[int]] = []
    for i in range(trials):
        value, halt = pool.outcome(bundle, seed, i)
        values.append(value)
        halts.append(halt)
    return TcoDistribution(trials, tuple(values), halt_offsets=tuple(halts))


# ---------------------------------------------------------------------------
# search

@dataclass(frozen=True)
class PolicySpace:
    baseline: PolicyBundle
    candidates: Tuple[PolicyBundle, ...]

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValueError("empty policy space")
        if self.baseline not in self.candidates:
            raise ValueError("the baseline bundle must belong to the space")

    @classmethod
    def product(cls, baseline: PolicyBundle, designs: Sequence[InfrastructureDesign] = (),
                refreshes: Sequence[RefreshPolicy] = (), ops: Sequence[OperationPolicy] = ()) -> "PolicySpace":
        designs = list(designs) or [baseline.design]
        refreshes = list(refreshes) or [baseline.refresh]
        ops = list(ops) or [baseline.op]
        seen = {}
        for d, r, o in itertools.product(designs, refreshes, ops):
            b = PolicyBundle(d, r, o)
            seen.setdefault(b, None)
        seen.setdefault(baseline, None)
        return cls(baseline, tuple(seen))

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True)
class CandidateResult:
    bundle: PolicyBundle
    dist: TcoDistribution
    objective: float
    ratio: float


@dataclass(frozen=True)
class OptimizeResult:
    best: PolicyBundle
    dist: TcoDistribution
    baseline_ratio: float
    baseline: TcoDistribution
    candidates: Tuple[CandidateResult, ...]
    objective: str

    def ranked(self) -> List[CandidateResult]:
        return sorted(self.candidates, key=lambda c: (c.dist.rank_key(self.objective), c.bundle.tie_key()))


def evaluate_space(dist: ScenarioDistribution, space: PolicySpace, trials: int, seed: int,
                   objective: str = "mean", pool: Optional[ScenarioPool] = None,
                   progress: Optional[Callable[[int, int], None]] = None) -> OptimizeResult:
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    pool = pool or ScenarioPool(dist)
    base_dist = monte_carlo(dist, space.baseline, trials, seed, pool)
    base_obj = base_dist.objective(objective)
    results = []
    for k, bundle in enumerate(space.candidates):
        d = base_dist if bundle == space.baseline else monte_carlo(dist, bundle, trials, seed, pool)
        d = d.normalized(base_dist)
        obj = d.objective(objective)
        results.append(CandidateResult(bundle, d, obj, obj / base_obj if math.isfinite(obj) else math.inf))
        if progress:
            progress(k + 1, len(space.candidates))
    best = min(results, key=lambda c: (c.dist.rank_key(objective), c.bundle.tie_key()))
    return OptimizeResult(best.bundle, best.dist, best.ratio, base_dist.normalized(base_dist), tuple(results),
                          objective)


def optimize(dist: ScenarioDistribution, space: PolicySpace, objective: str = "mean", trials: int = 200,
             seed: int = 0, pool: Optional[ScenarioPool] = None) -> OptimizeResult:
    """Exhaustive search of ``space`` under common random numbers."""
    return evaluate_space(dist, space, trials, seed, objective, pool)


def greedy_operation_flags(dist: ScenarioDistribution, base: PolicyBundle, trials: int, seed: int,
                           objective: str = "mean", pool: Optional[ScenarioPool] = None) -> OperationPolicy:
    """Forward selection over operation flags: add the flag that helps most until none helps."""
    pool = pool or ScenarioPool(dist)
    current = base
    best = monte_carlo(dist, current, trials, seed, pool).rank_key(objective)
    remaining = [f for f in OPERATION_FLAGS if not getattr(current.op, f)]
    while remaining:
        scored = []
        for flag in remaining:
            cand = replace(current, op=current.op.with_flags(flag))
            scored.append((monte_carlo(dist, cand, trials, seed, pool).rank_key(objective), flag))
        value, flag = min(scored)
        if value >= best:
            break
        best = value
        current = replace(current, op=current.op.with_flags(flag))
        remaining.remove(flag)
    return current.op


def cross_stage_space(dist: ScenarioDistribution, baseline: PolicyBundle, refreshes: Sequence[RefreshPolicy],
                      trials: int, seed: int, objective: str = "mean",
                      pool: Optional[ScenarioPool] = None) -> PolicySpace:
    """Designs x refresh policies x a pruned set of operation policies.

    The operation flags are pruned by a greedy forward pass at the baseline
    design and refresh; the search then keeps no optimizations, the greedy
    pick, and everything on.
    """
    picked = greedy_operation_flags(dist, baseline, trials, seed, objective, pool)
    ops = list(dict.fromkeys([baseline.op, picked, OperationPolicy.all_on()]))
    designs = all_designs(baseline.design.facility_capacity_watts)
    return PolicySpace.product(baseline, designs, list(refreshes) or [baseline.refresh], ops)


# ---------------------------------------------------------------------------
# stage spaces

STAGES = ("build", "refresh", "operate")
DEFAULT_LIFETIMES = tuple(range(0, 121, 12))


def refresh_generations(scenario: Scenario) -> List[str]:
    """SKU ids that become available before the horizon ends."""
    skus, _ = scenario.resolve()
    end = scenario.end_month
    return [s.id for s in sorted(skus, key=lambda s: (s.available_month, s.id)) if s.available_month <= end]


def stage_space(stage: str, scenario: Scenario, baseline: PolicyBundle,
                lifetimes: Iterable[int] = DEFAULT_LIFETIMES, exhaustive_ops: bool = False) -> PolicySpace:
    """Candidates that vary one lifecycle stage and hold the others at the baseline."""
    if stage == "build":
        return PolicySpace.product(baseline, designs=all_designs(baseline.design.facility_capacity_watts))
    if stage == "refresh":
        generations = refresh_generations(scenario)
        if not generations:   # nothing is bought within the horizon
            return PolicySpace.product(baseline)
        refreshes = enumerate_refresh_policies(generations, lifetimes, baseline=baseline.refresh)
        return PolicySpace.product(baseline, refreshes=refreshes)
    if stage == "operate":
        if exhaustive_ops:
            ops = operation_subsets(base=baseline.op)
        else:
            ops = [baseline.op.with_flags(f) for f in OPERATION_FLAGS] + [OperationPolicy.all_on()]
        return PolicySpace.product(baseline, ops=ops)
    raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")


def holistic_space(dist: ScenarioDistribution, baseline: PolicyBundle, stage_results: Mapping[str, OptimizeResult],
                   trials: int, seed: int, objective: str = "mean", pool: Optional[ScenarioPool] = None,
                   top: int = 4) -> PolicySpace:
    """Combinations of the leading choices of every stage.

    Takes the ``top`` designs and refresh policies from the stage-wise
    rankings, and for operations the baseline, the stage optimum, the greedy
    flag set and everything on. Each stage-wise optimum is a member, so the
    holistic argmin is never worse than any of them.
    """
    def leaders(stage: str, attr: str, default) -> List:
        res = stage_results.get(stage)
        if res is None:
            return [default]
        picked = []
        for cand in res.ranked():
            value = getattr(cand.bundle, attr)
            if value not in picked:
                picked.append(value)
            if len(picked) == top:
                break
        return picked

    designs = list(dict.fromkeys([baseline.design] + leaders("build", "design", baseline.design)))
    refreshes = list(dict.fromkeys([baseline.refresh] + leaders("refresh", "refresh", baseline.refresh)))
    ops = leaders("operate", "op", baseline.op)[:1]
    ops += [greedy_operation_flags(dist, baseline, trials, seed, objective, pool), OperationPolicy.all_on()]
    return PolicySpace.product(baseline, designs, refreshes, list(dict.fromkeys([baseline.op] + ops)))


# ---------------------------------------------------------------------------
# regime matrix

MATRIX_SHAPES = ("slow-sublinear", "medium-linear", "fast-exponential")


@dataclass(frozen=True)
class MatrixCell:
    model_shape: str
    hardware_shape: str
    result: OptimizeResult

    def rows(self) -> Dict[str, str]:
        b = self.result.best
        lives = [b.refresh.default_lifetime_months] + [v for _, v in b.refresh.lifetime_months_by_generation]
        skips = sorted(b.refresh.skip_set)
        refresh = f"{(b.refresh.default_lifetime_months or 0) / 12:g}y"
        if skips:
            refresh += " skip " + "+".join(skips)
        others = [(k, v) for k, v in b.refresh.lifetime_months_by_generation if v]
        if others:
            refresh += " " + " ".join(f"{k}:{v / 12:g}y" for k, v in others)
        ops = b.op.enabled()
        return {"build": b.design.label, "refresh": refresh, "operate": "+".join(ops) if ops else "none"}


def regime_matrix(dists: Mapping[Tuple[str, str], ScenarioDistribution],
                  spaces: Union[PolicySpace, Mapping[Tuple[str, str], PolicySpace]],
                  trials: int, seed: int, objective: str = "mean") -> Dict[Tuple[str, str], MatrixCell]:
    """Best bundle per (model regime, hardware regime) cell."""
    cells = {}
    for model_shape in MATRIX_SHAPES:
        for hw_shape in MATRIX_SHAPES:
            key = (model_shape, hw_shape)
            if key not in dists:
                raise ValueError(f"missing distribution for cell {key}")
            space = spaces[key] if isinstance(spaces, Mapping) else spaces
            cells[key] = MatrixCell(model_shape, hw_shape, optimize(dists[key], space, objective, trials, seed))
    return cells
