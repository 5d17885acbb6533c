"""Annualised CapEx/OpEx engine. Every money value is an integer number of cents."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from typing import Dict, Iterable, Mapping, Optional, Tuple

from .catalog import HardwareSku
from .fleet import Cohort, FleetState

HOURS_PER_YEAR = 8760
POWER_TOPOLOGIES = ("per-pdu", "per-udomain", "per-dc")
COOLING_KINDS = ("air", "hybrid", "liquid")
NETWORK_KINDS = ("ethernet", "infiniband", "nvlink", "hierarchical")
METHODS = ("straight-line", "declining-balance")


class UnpricedSku(KeyError):
    pass


def cents(usd: float) -> int:
    return int(round(usd * 100))


# ---------------------------------------------------------------------------
# price book, schedule, design

@dataclass(frozen=True)
class PriceBook:
    network_capex_per_server: int = 200_000
    building_capex_per_sqft: int = 50
    power_capex_per_watt: int = 700
    cooling_capex_per_watt: int = 250
    network_opex_per_server_yr: int = 60_000
    energy_tariff_per_mwh: int = 3_000
    peak_demand_charge_per_kw_month: int = 300
    maintenance_per_server_yr: int = 500_000
    software_per_server_yr: int = 20_000
    # explicit per-SKU server prices; None defers to the catalog price
    server_costs: Optional[Tuple[Tuple[str, int], ...]] = None

    def __post_init__(self) -> None:
        for f in fields(self):
            if f.name == "server_costs":
                continue
            value = getattr(self, f.name)
            if not isinstance(value, int) or value < 0:
                raise ValueError(f"{f.name} must be a non-negative integer number of cents")
        for sku_id, value in self.server_costs or ():
            if not isinstance(value, int) or value < 0:
                raise ValueError(f"server cost for {sku_id} must be non-negative cents")

    def server_cost(self, sku: HardwareSku) -> int:
        if self.server_costs is None:
            return sku.server_cost_cents
        table = dict(self.server_costs)
        if sku.id not in table:
            raise UnpricedSku(sku.id)
        return table[sku.id]

    def scaled(self, factor: int) -> "PriceBook":
        """Every entry multiplied by an integer factor."""
        values = {f.name: getattr(self, f.name) * factor for f in fields(self) if f.name != "server_costs"}
        costs = None if self.server_costs is None else tuple((k, v * factor) for k, v in self.server_costs)
        return PriceBook(server_costs=costs, **values)


@dataclass(frozen=True)
class AmortizationSchedule:
    facility_years: float = 30
    network_years: float = 10
    it_years: float = 5
    method: str = "straight-line"

    def __post_init__(self) -> None:
        if not 15 <= self.facility_years <= 30:
            raise ValueError("facility_years must lie in 15..30")
        if not 7 <= self.network_years <= 10:
            raise ValueError("network_years must lie in 7..10")
        if not 3 <= self.it_years <= 5:
            raise ValueError("it_years must lie in 3..5")
        if self.method not in METHODS:
            raise ValueError(f"unknown amortization method {self.method!r}")


@dataclass(frozen=True)
class PowerDesign:
    topology: str = "per-pdu"
    domain_budget_watts: float = 20_000
    capex_multiplier: float = 1.0
    maintenance_multiplier: float = 1.0

    def __post_init__(self) -> None:
        if self.topology not in POWER_TOPOLOGIES:
            raise ValueError(f"unknown power topology {self.topology!r}")
        if not self.domain_budget_watts > 0:
            raise ValueError("domain_budget_watts must be > 0")
        if self.capex_multiplier < 0 or self.maintenance_multiplier < 0:
            raise ValueError("power multipliers must be non-negative")


@dataclass(frozen=True)
class CoolingDesign:
    kind: str = "air"
    pue: float = 1.30
    capex_multiplier: float = 1.0
    maintenance_multiplier: float = 1.0
    # servers above the density limit run at dense_perf_factor of nominal speed
    density_limit_watts: float = math.inf
    dense_perf_factor: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in COOLING_KINDS:
            raise ValueError(f"unknown cooling design {self.kind!r}")
        if self.pue < 1.0:
            raise ValueError("pue must be >= 1")
        if not 0 < self.dense_perf_factor <= 1:
            raise ValueError("dense_perf_factor must lie in (0, 1]")

    def perf_factor(self, server_watts: float) -> float:
        return self.dense_perf_factor if server_watts > self.density_limit_watts else 1.0


@dataclass(frozen=True)
class NetworkDesign:
    kind: str = "ethernet"
    capex_multiplier: float = 1.0
    opex_multiplier: float = 1.0
    # tensor-parallel scaling penalty per doubling; lower means a faster fabric
    tp_penalty: float = 0.05

    def __post_init__(self) -> None:
        if self.kind not in NETWORK_KINDS:
            raise ValueError(f"unknown network design {self.kind!r}")
        if self.capex_multiplier < 0 or self.opex_multiplier < 0:
            raise ValueError("network multipliers must be non-negative")
        if not 0 <= self.tp_penalty < 1 / 3:
            raise ValueError("tp_penalty must keep TP8 throughput positive")


@dataclass(frozen=True)
class InfrastructureDesign:
    power: PowerDesign = field(default_factory=PowerDesign)
    cooling: CoolingDesign = field(default_factory=CoolingDesign)
    network: NetworkDesign = field(default_factory=NetworkDesign)
    facility_capacity_watts: float = 10_000_000
    sqft_per_server: float = 8.0
    # maintenance jobs per server-year; each costs maintenance_per_server_yr
    maintenance_rate: float = 0.02

    def __post_init__(self) -> None:
        if not self.facility_capacity_watts > 0:
            raise ValueError("facility_capacity_watts must be > 0")
        if self.sqft_per_server < 0 or self.maintenance_rate < 0:
            raise ValueError("density and maintenance rate must be non-negative")

    @property
    def label(self) -> str:
        return f"{self.power.topology}/{self.cooling.kind}/{self.network.kind}"


# Qualitative trade-off tables turned into numbers; see README for the calibration.
POWER_PRESETS: Dict[str, PowerDesign] = {
    "per-pdu": PowerDesign("per-pdu", 20_000, 1.00, 1.00),
    "per-udomain": PowerDesign("per-udomain", 1_000_000, 1.08, 0.90),
    "per-dc": PowerDesign("per-dc", 1_000_000, 1.15, 0.80),
}
COOLING_PRESETS: Dict[str, CoolingDesign] = {
    "air": CoolingDesign("air", 1.30, 1.00, 1.0, 12_000, 0.80),
    "hybrid": CoolingDesign("hybrid", 1.15, 1.25, 1.5),
    "liquid": CoolingDesign("liquid", 1.08, 1.60, 3.0),
}
NETWORK_PRESETS: Dict[str, NetworkDesign] = {
    "ethernet": NetworkDesign("ethernet", 1.0, 1.0, 0.08),
    "infiniband": NetworkDesign("infiniband", 1.75, 1.5, 0.065),
    "nvlink": NetworkDesign("nvlink", 30.0, 6.0, 0.04),
    "hierarchical": NetworkDesign("hierarchical", 1.9, 1.5, 0.05),
}


def make_design(power: str = "per-pdu", cooling: str = "air", network: str = "ethernet",
                facility_capacity_watts: float = 10_000_000, **overrides) -> InfrastructureDesign:
    return InfrastructureDesign(POWER_PRESETS[power], COOLING_PRESETS[cooling], NETWORK_PRESETS[network],
                                facility_capacity_watts, **overrides)


# ---------------------------------------------------------------------------
# amortization

def _allocate(cost: int, periods: Fraction, index: int) -> int:
    """Integer share of ``cost`` charged in period ``index`` of a straight-line
    schedule lasting ``periods``; shares over all periods sum to ``cost``."""
    if index < 0 or index >= periods:
        return 0
    # floor(cost * k / periods) in integers: periods = p / q
    p, q = periods.numerator, periods.denominator
    hi = min((index + 1) * q, p)
    return cost * hi // p - cost * index * q // p


def _declining_rate(lifetime: Fraction) -> Fraction:
    return min(Fraction(1), 2 / lifetime)


def _declining_charge(cost: int, lifetime: Fraction, year: int) -> int:
    if year < 0 or year >= lifetime:
        return 0
    keep = 1 - _declining_rate(lifetime)
    p, q = keep.numerator, keep.denominator
    # residual value floor(cost * keep**n), computed in integers
    return cost * p ** year // q ** year - cost * p ** (year + 1) // q ** (year + 1)


def amortize(cost: int, lifetime_years: float, years_in_service: float,
             method: str = "straight-line") -> int:
    """Charge for service year ``floor(years_in_service)`` of an asset, in cents.

    Straight-line charges sum exactly to ``cost`` over the lifetime; the
    declining-balance variant writes off a fixed fraction (double the
    straight-line rate) of the residual each year and never exceeds ``cost``.
    """
    if cost < 0 or not lifetime_years > 0 or years_in_service < 0:
        raise ValueError("need cost >= 0, lifetime > 0, years_in_service >= 0")
    life = lifetime_years
    if not isinstance(life, Fraction):
        life = Fraction(life).limit_denominator(1200)
    year = int(math.floor(years_in_service))
    if method == "straight-line":
        return _allocate(int(cost), life, year)
    if method == "declining-balance":
        return _declining_charge(int(cost), life, year)
    raise ValueError(f"unknown amortization method {method!r}")


def amortize_month(cost: int, lifetime_months: int, age_months: int, method: str = "straight-line") -> int:
    """Charge for month ``age_months`` of an asset; sums over its life equal the
    annual schedule exactly."""
    if method == "straight-line":
        if not 0 <= age_months < lifetime_months:
            return 0
        cost = int(cost)
        return cost * (age_months + 1) // lifetime_months - cost * age_months // lifetime_months
    year_charge = _declining_charge(int(cost), Fraction(lifetime_months, 12), age_months // 12)
    months_in_year = min(12, lifetime_months - 12 * (age_months // 12))
    return _allocate(year_charge, Fraction(months_in_year), age_months % 12)


# ---------------------------------------------------------------------------
# power domains

def stranded_power(domain_budget_watts: float, server_tdp_watts: float) -> Tuple[int, float]:
    if not (domain_budget_watts > 0 and server_tdp_watts > 0):
        raise ValueError("budget and tdp must be > 0")
    servers = int(domain_budget_watts // server_tdp_watts)
    return servers, domain_budget_watts - server_tdp_watts * servers


def _domains(design: InfrastructureDesign) -> Iterable[float]:
    capacity = design.facility_capacity_watts
    if design.power.topology == "per-dc":
        return [capacity]
    budget = design.power.domain_budget_watts
    full = int(capacity // budget)
    rest = capacity - full * budget
    return [budget] * full + ([rest] if rest > 0 else [])


def fleet_capacity(design: InfrastructureDesign, server_tdp_watts: float) -> int:
    """Servers of one TDP deployable across all power-sharing domains."""
    if design.power.topology == "per-dc":
        return stranded_power(design.facility_capacity_watts, server_tdp_watts)[0]
    budget = design.power.domain_budget_watts
    full = int(design.facility_capacity_watts // budget)
    rest = design.facility_capacity_watts - full * budget
    per_domain = stranded_power(budget, server_tdp_watts)[0]
    return full * per_domain + (stranded_power(rest, server_tdp_watts)[0] if rest > 0 else 0)


def provisioned_watts(design: InfrastructureDesign, server_tdp_watts: float, servers: int,
                      oversubscription: float = 1.0) -> float:
    """IT power that has to be built to host ``servers`` of one TDP.

    Flat designs pool the whole facility and build exactly the deployed load.
    Partitioned designs build whole domains; with ``oversubscription`` > 1 a
    domain hosts servers up to budget x oversubscription (power capping).
    A server larger than one domain takes several whole domains.
    """
    if servers <= 0:
        return 0.0
    if design.power.topology == "per-dc":
        return servers * server_tdp_watts / oversubscription
    budget = design.power.domain_budget_watts
    per_domain = int(budget * oversubscription // server_tdp_watts)
    if per_domain >= 1:
        return math.ceil(servers / per_domain) * budget
    return servers * math.ceil(server_tdp_watts / (budget * oversubscription)) * budget


# ---------------------------------------------------------------------------
# energy

@dataclass(frozen=True)
class EnergyCost:
    energy: int
    peak: int

    @property
    def total(self) -> int:
        return self.energy + self.peak


def energy_opex(it_energy_mwh: float, pue: float, tariff: int, peak_kw: float, demand_charge: int) -> EnergyCost:
    """Yearly energy bill; tariff in cents/MWh, demand charge in cents/kW-month."""
    if min(it_energy_mwh, tariff, peak_kw, demand_charge) < 0 or pue < 1:
        raise ValueError("inputs must be non-negative and pue >= 1")
    return EnergyCost(int(round(it_energy_mwh * pue * tariff)),
                      int(round(peak_kw * pue * demand_charge * 12)))


def server_power(sku: HardwareSku, utilization: float) -> float:
    """Average draw of one server at a busy fraction."""
    u = min(max(utilization, 0.0), 1.0)
    return sku.tdp_server_watts * (sku.idle_power_fraction + (1.0 - sku.idle_power_fraction) * u)


# ---------------------------------------------------------------------------
# breakdown

COMPONENTS = ("capex_it", "capex_network", "capex_building", "capex_power", "capex_cooling",
              "opex_energy", "opex_peak_power", "opex_maintenance", "opex_network", "opex_software")


@dataclass(frozen=True)
class TcoBreakdown:
    capex_it: int = 0
    capex_network: int = 0
    capex_building: int = 0
    capex_power: int = 0
    capex_cooling: int = 0
    opex_energy: int = 0
    opex_peak_power: int = 0
    opex_maintenance: int = 0
    opex_network: int = 0
    opex_software: int = 0

    def __post_init__(self) -> None:
        for name in COMPONENTS:
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ValueError(f"{name} must be a non-negative integer number of cents, got {value!r}")

    @property
    def total(self) -> int:
        return sum(getattr(self, name) for name in COMPONENTS)

    @property
    def capex(self) -> int:
        return sum(getattr(self, n) for n in COMPONENTS if n.startswith("capex"))

    @property
    def opex(self) -> int:
        return self.total - self.capex

    def __add__(self, other: "TcoBreakdown") -> "TcoBreakdown":
        return TcoBreakdown(*(getattr(self, n) + getattr(other, n) for n in COMPONENTS))

    def as_dict(self) -> Dict[str, int]:
        out = {n: getattr(self, n) for n in COMPONENTS}
        out["total"] = self.total
        return out

    def ranked(self) -> Tuple[str, ...]:
        return tuple(sorted(COMPONENTS, key=lambda n: -getattr(self, n)))


def sum_breakdowns(items: Iterable[TcoBreakdown]) -> TcoBreakdown:
    out = TcoBreakdown()
    for item in items:
        out = out + item
    return out


def _it_life_years(cohort: Cohort, schedule: AmortizationSchedule) -> float:
    if cohort.lifetime_months is None:
        return schedule.it_years
    return cohort.lifetime_months / 12.0


def facility_charges(watts: float, design: InfrastructureDesign, prices: PriceBook,
                     schedule: AmortizationSchedule, year_index: int = 0) -> Tuple[int, int]:
    """(power, cooling) yearly capex for ``watts`` of built IT capacity."""
    power = cents(watts * prices.power_capex_per_watt * design.power.capex_multiplier / 100)
    cooling = cents(watts * prices.cooling_capex_per_watt * design.cooling.capex_multiplier / 100)
    return (amortize(power, schedule.facility_years, year_index, schedule.method),
            amortize(cooling, schedule.facility_years, year_index, schedule.method))


def annual_tco(fleet: FleetState, design: InfrastructureDesign, prices: PriceBook,
               schedule: AmortizationSchedule) -> TcoBreakdown:
    """Yearly cost rate of a fleet snapshot.

    Facility (power, cooling, building) is charged on the built capacity:
    ``fleet.provisioned_watts`` when given, otherwise the design's facility
    capacity, so an empty facility still accrues its amortization.
    """
    it = net = 0
    servers = 0
    it_mwh = 0.0
    peak_w = fleet.ancillary_watts
    for i, cohort in enumerate(fleet.cohorts):
        n = cohort.server_count
        servers += n
        years = cohort.age(fleet.month) / 12.0
        it += amortize(prices.server_cost(cohort.sku) * n, _it_life_years(cohort, schedule), max(years, 0.0),
                       schedule.method)
        net_cost = cents(n * prices.network_capex_per_server * design.network.capex_multiplier / 100)
        net += amortize(net_cost, schedule.network_years, max(years, 0.0), schedule.method)
        it_mwh += n * server_power(cohort.sku, fleet.mean_util(i)) * HOURS_PER_YEAR / 1e6
        peak_w += n * server_power(cohort.sku, fleet.peak_util(i))
    it_mwh += fleet.ancillary_watts * HOURS_PER_YEAR / 1e6
    built = design.facility_capacity_watts if fleet.provisioned_watts is None else fleet.provisioned_watts
    power, cooling = facility_charges(built, design, prices, schedule)
    area_cost = cents(servers * design.sqft_per_server * prices.building_capex_per_sqft / 100)
    energy = energy_opex(it_mwh, design.cooling.pue, prices.energy_tariff_per_mwh, peak_w / 1e3,
                         prices.peak_demand_charge_per_kw_month)
    maint_scale = design.maintenance_rate * design.cooling.maintenance_multiplier * design.power.maintenance_multiplier
    return TcoBreakdown(
        capex_it=it,
        capex_network=net,
        capex_building=amortize(area_cost, schedule.facility_years, 0, schedule.method),
        capex_power=power,
        capex_cooling=cooling,
        opex_energy=energy.energy,
        opex_peak_power=energy.peak,
        opex_maintenance=cents(servers * prices.maintenance_per_server_yr * maint_scale / 100),
        opex_network=cents(servers * prices.network_opex_per_server_yr * design.network.opex_multiplier / 100),
        opex_software=servers * prices.software_per_server_yr,
    )


# ---------------------------------------------------------------------------
# representative facility snapshot

@dataclass(frozen=True)
class FacilitySnapshot:
    servers: int
    facility_energy_mwh: float
    breakdown: TcoBreakdown
    fleet: FleetState


def facility_snapshot(sku: HardwareSku, design: InfrastructureDesign, prices: PriceBook,
                      schedule: AmortizationSchedule, utilization: float, month: int = 0) -> FacilitySnapshot:
    """A facility filled with one SKU and run at ``utilization`` of its rated power.

    The server count is what the power domains can host. Servers run at the
    same busy fraction; whatever the facility draws beyond them is booked as
    ancillary IT load (hosts, storage, fabric), so the facility-level energy is
    capacity x utilization x hours.
    """
    if not 0 <= utilization <= 1:
        raise ValueError("utilization must lie in [0, 1]")
    n = fleet_capacity(design, sku.tdp_server_watts)
    facility_avg = design.facility_capacity_watts * utilization
    gpu_it = n * server_power(sku, utilization)
    ancillary = max(facility_avg / design.cooling.pue - gpu_it, 0.0)
    fleet = FleetState(month=month, cohorts=(Cohort(sku, month, n, int(schedule.it_years * 12)),),
                       utilization=(utilization,), peak_utilization=(utilization,), ancillary_watts=ancillary)
    breakdown = annual_tco(fleet, design, prices, schedule)
    energy = (gpu_it + ancillary) * design.cooling.pue * HOURS_PER_YEAR / 1e6
    return FacilitySnapshot(n, energy, breakdown, fleet)
