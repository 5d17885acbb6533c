"""Scenario files, report tables and the summary document.

Scenarios are YAML with a ``schema_version`` field. Unknown keys are errors,
money is written in USD and held as integer cents, and calendar months are
``YYYY-MM`` strings.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import yaml

from . import __version__
from .catalog import (CatalogError, GrowthRegime, HardwareSku, ModelSpec, by_id, format_month,
                      frontier_models, lineages, model_from_record, model_to_record, parse_month,
                      project_hardware_roadmap, project_model_roadmap, seed_catalog, sku_from_record,
                      sku_to_record)
from .lifecycle import DemandTrajectory, SimulationResult
from .perf import PerfConfig, SloSpec, WorkloadShape
from .tco import (COMPONENTS, COOLING_PRESETS, NETWORK_PRESETS, POWER_PRESETS, AmortizationSchedule,
                  CoolingDesign, InfrastructureDesign, NetworkDesign, PowerDesign, PriceBook)

SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1
DATA_DIR = Path(__file__).resolve().parent / "data"


class ScenarioError(ValueError):
    """A scenario file that does not parse or violates an invariant.

    ``location`` names the file position or the dotted field path.
    """

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


@dataclass(frozen=True)
class Roadmap:
    """Seed entries plus an optional growth regime used to extend them."""

    seeds: Tuple[Any, ...]
    regime: Optional[GrowthRegime] = None


@dataclass(frozen=True)
class Scenario:
    start_month: int
    horizon_months: int
    demand: DemandTrajectory
    models: Roadmap
    hardware: Roadmap
    initial_fleet: Tuple[Tuple[str, int], ...] = ()
    design: InfrastructureDesign = field(default_factory=InfrastructureDesign)
    prices: PriceBook = field(default_factory=PriceBook)
    schedule: AmortizationSchedule = field(default_factory=AmortizationSchedule)
    slo: SloSpec = field(default_factory=SloSpec)
    shape: WorkloadShape = field(default_factory=WorkloadShape)
    perf: PerfConfig = field(default_factory=PerfConfig)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ScenarioError(f"schema_version {self.schema_version} is not supported "
                                f"(expected {SCHEMA_VERSION})", "schema_version")
        if self.horizon_months < 12:
            raise ScenarioError("horizon must be at least 12 months", "horizon_months")
        if self.demand.horizon_months != self.horizon_months:
            raise ScenarioError("demand horizon differs from scenario horizon", "demand.horizon_months")
        sku_ids = {s.id for s in self.hardware.seeds}
        for sku_id, count in self.initial_fleet:
            if sku_id not in sku_ids:
                raise ScenarioError(f"unknown SKU {sku_id!r}", "initial_fleet")
            if count < 1:
                raise ScenarioError("server counts must be >= 1", "initial_fleet")
        frontier = frontier_models(self.models.seeds)
        if not frontier or frontier[0].release_month > self.start_month:
            raise ScenarioError("a frontier model must be released by the start month", "models")
        if len({m.id for m in self.models.seeds}) != len(self.models.seeds):
            raise ScenarioError("duplicate model ids", "models")
        if len(sku_ids) != len(self.hardware.seeds):
            raise ScenarioError("duplicate SKU ids", "hardware")
        try:
            lineages(self.hardware.seeds)
        except CatalogError as exc:
            raise ScenarioError(str(exc), "hardware") from exc

    @property
    def end_month(self) -> int:
        return self.start_month + self.horizon_months - 1

    def resolve(self) -> Tuple[Tuple[HardwareSku, ...], Tuple[ModelSpec, ...]]:
        """Seed catalogs extended to the horizon under their growth regimes."""
        return _resolve(self.hardware, self.models, self.end_month)


@lru_cache(maxsize=512)
def _resolve(hardware: Roadmap, models: Roadmap, end: int) -> Tuple[Tuple[HardwareSku, ...], Tuple[ModelSpec, ...]]:
    skus: List[HardwareSku] = []
    for group in lineages(hardware.seeds).values():
        if hardware.regime is None or group[-1].release_month >= end:
            skus.extend(group)
        else:
            skus.extend(project_hardware_roadmap(group, end, hardware.regime))
    frontier = frontier_models(models.seeds)
    others = [m for m in models.seeds if m.tier != "frontier"]
    if models.regime is not None and frontier[-1].release_month < end:
        frontier = project_model_roadmap(frontier, end, models.regime)
    return tuple(skus), tuple(frontier + others)


# ---------------------------------------------------------------------------
# loading

def _check_keys(data: Mapping, allowed: Iterable[str], where: str) -> None:
    if not isinstance(data, Mapping):
        raise ScenarioError("expected a mapping", where)
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ScenarioError(f"unknown field(s) {unknown}", where)


def _month(value: Any, where: str) -> int:
    try:
        return parse_month(str(value))
    except (CatalogError, ValueError) as exc:
        raise ScenarioError(str(exc), where) from exc


def _build(cls, kwargs: Dict[str, Any], where: str):
    try:
        return cls(**kwargs)
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc), where) from exc


def _number(value: Any, where: str) -> float:
    # PyYAML reads exponent forms like 1.0e9 as strings
    try:
        if isinstance(value, bool):
            raise ValueError
        return float(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"expected a number, got {value!r}", where) from None


def _regime(data: Optional[Mapping], where: str) -> Optional[GrowthRegime]:
    if data is None:
        return None
    _check_keys(data, ("shape", "rate", "cost_follows_trend", "synthetic_delay"), where)
    return _build(GrowthRegime, dict(data), where)


def _roadmap(data: Mapping, kind: str, where: str, defaults: List[str]) -> Roadmap:
    _check_keys(data, ("catalog", "include", "records", "regime"), where)
    records = data.get("records")
    entries: List[Any] = []
    if records is not None:
        for i, rec in enumerate(records):
            try:
                entries.append(sku_from_record(rec) if kind == "sku" else model_from_record(rec))
            except (CatalogError, TypeError, KeyError) as exc:
                raise ScenarioError(str(exc), f"{where}.records[{i}]") from exc
    source = data.get("catalog")
    if source is not None:
        if source != "builtin":
            raise ScenarioError("catalog must be 'builtin' (use records for custom entries)", f"{where}.catalog")
        skus, models = seed_catalog()
        pool = by_id(skus if kind == "sku" else models)
        include = data.get("include", sorted(pool))
        missing = [i for i in include if i not in pool]
        if missing:
            raise ScenarioError(f"unknown catalog ids {missing}", f"{where}.include")
        entries.extend(pool[i] for i in include)
    elif "include" in data:
        raise ScenarioError("include needs catalog: builtin", f"{where}.include")
    if "regime" not in data:
        defaults.append(f"{where}.regime")
    entries.sort(key=lambda e: (e.release_month, e.id))
    return Roadmap(tuple(entries), _regime(data.get("regime"), f"{where}.regime"))


def _usd_fields(data: Mapping, cls, where: str, cents_fields: Sequence[str]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for key, value in data.items():
        if key in cents_fields:
            if not isinstance(value, (int, float)) or isinstance(value, bool) or value < 0 or not math.isfinite(value):
                raise ScenarioError("must be a non-negative number of USD", f"{where}.{key}")
            out[key] = int(round(value * 100))
        else:
            out[key] = value
    return out


_PRICE_FIELDS = tuple(f.name for f in fields(PriceBook) if f.name != "server_costs")


def _prices(data: Mapping, where: str) -> PriceBook:
    _check_keys(data, _PRICE_FIELDS + ("server_costs",), where)
    kwargs = _usd_fields({k: v for k, v in data.items() if k != "server_costs"}, PriceBook, where, _PRICE_FIELDS)
    if "server_costs" in data:
        table = data["server_costs"]
        _check_keys(table, table.keys(), f"{where}.server_costs")
        kwargs["server_costs"] = tuple(sorted((str(k), int(round(float(v) * 100))) for k, v in table.items()))
    return _build(PriceBook, kwargs, where)


def _sub_design(data: Any, presets: Mapping, cls, key: str, where: str):
    if isinstance(data, str):
        if data not in presets:
            raise ScenarioError(f"unknown preset {data!r}; choose from {sorted(presets)}", where)
        return presets[data]
    _check_keys(data, [f.name for f in fields(cls)], where)
    base = presets.get(data.get(key)) if key in data else None
    if key in data and base is None:
        raise ScenarioError(f"unknown {key} {data[key]!r}", where)
    values = {k: (math.inf if v == "inf" else v) for k, v in data.items()}
    if base is None:
        return _build(cls, values, where)
    return _build(lambda **kw: replace(base, **kw), values, where)


def _design(data: Mapping, where: str) -> InfrastructureDesign:
    keys = ("power", "cooling", "network", "facility_capacity_watts", "sqft_per_server", "maintenance_rate")
    _check_keys(data, keys, where)
    kwargs: Dict[str, Any] = {}
    if "power" in data:
        kwargs["power"] = _sub_design(data["power"], POWER_PRESETS, PowerDesign, "topology", f"{where}.power")
    else:
        kwargs["power"] = POWER_PRESETS["per-pdu"]
    if "cooling" in data:
        kwargs["cooling"] = _sub_design(data["cooling"], COOLING_PRESETS, CoolingDesign, "kind", f"{where}.cooling")
    else:
        kwargs["cooling"] = COOLING_PRESETS["air"]
    if "network" in data:
        kwargs["network"] = _sub_design(data["network"], NETWORK_PRESETS, NetworkDesign, "kind", f"{where}.network")
    else:
        kwargs["network"] = NETWORK_PRESETS["ethernet"]
    for k in keys[3:]:
        if k in data:
            kwargs[k] = _number(data[k], f"{where}.{k}")
    return _build(InfrastructureDesign, kwargs, where)


def _perf(data: Mapping, where: str) -> PerfConfig:
    allowed = ("efficiency", "usable_memory_fraction", "resolution_rps", "amortization_years")
    _check_keys(data, allowed, where)
    kwargs = dict(data)
    if "efficiency" in kwargs:
        eff = kwargs["efficiency"]
        _check_keys(eff, ("gpu-server", "cpu-server"), f"{where}.efficiency")
        merged = dict(PerfConfig().efficiency)
        merged.update({k: float(v) for k, v in eff.items()})
        kwargs["efficiency"] = tuple(sorted(merged.items()))
    return _build(PerfConfig, kwargs, where)


TOP_LEVEL = ("schema_version", "start_month", "horizon_months", "demand", "models", "hardware",
             "initial_fleet", "design", "prices", "schedule", "slo", "workload", "perf")
OPTIONAL_SECTIONS = ("initial_fleet", "design", "prices", "schedule", "slo", "workload", "perf")


@dataclass(frozen=True)
class LoadedScenario:
    scenario: Scenario
    defaults_applied: Tuple[str, ...]
    path: str


def scenario_from_dict(data: Mapping, defaults: Optional[List[str]] = None) -> Scenario:
    defaults = [] if defaults is None else defaults
    _check_keys(data, TOP_LEVEL, "scenario")
    for key in ("schema_version", "start_month", "horizon_months", "demand", "models", "hardware"):
        if key not in data:
            raise ScenarioError("required field is missing", key)
    if data["schema_version"] != SCHEMA_VERSION:
        raise ScenarioError(f"schema_version {data['schema_version']!r} is not supported "
                            f"(expected {SCHEMA_VERSION})", "schema_version")
    for key in OPTIONAL_SECTIONS:
        if key not in data:
            defaults.append(key)
    start = _month(data["start_month"], "start_month")
    horizon = data["horizon_months"]
    if not isinstance(horizon, int) or isinstance(horizon, bool):
        raise ScenarioError("must be an integer", "horizon_months")
    dem = data["demand"]
    _check_keys(dem, ("base_rps", "annual_growth", "diurnal_shape"), "demand")
    dem_kwargs = dict(dem)
    if "diurnal_shape" in dem_kwargs:
        dem_kwargs["diurnal_shape"] = tuple(float(x) for x in dem_kwargs["diurnal_shape"])
        shape = dem_kwargs["diurnal_shape"]
        if len(shape) == 24 and abs(sum(shape) / 24 - 1.0) > 1e-9:
            raise ScenarioError(f"diurnal_shape must have mean 1 (got {sum(shape) / 24:.6g})", "demand.diurnal_shape")
    demand = _build(DemandTrajectory, {**dem_kwargs, "horizon_months": horizon}, "demand")
    models = _roadmap(data["models"], "model", "models", defaults)
    hardware = _roadmap(data["hardware"], "sku", "hardware", defaults)
    fleet = []
    for i, entry in enumerate(data.get("initial_fleet", []) or []):
        _check_keys(entry, ("sku", "servers"), f"initial_fleet[{i}]")
        fleet.append((str(entry["sku"]), int(entry["servers"])))
    kwargs: Dict[str, Any] = dict(start_month=start, horizon_months=horizon, demand=demand, models=models,
                                  hardware=hardware, initial_fleet=tuple(fleet))
    if "design" in data:
        kwargs["design"] = _design(data["design"], "design")
    if "prices" in data:
        kwargs["prices"] = _prices(data["prices"], "prices")
    if "schedule" in data:
        _check_keys(data["schedule"], [f.name for f in fields(AmortizationSchedule)], "schedule")
        kwargs["schedule"] = _build(AmortizationSchedule, dict(data["schedule"]), "schedule")
    if "slo" in data:
        _check_keys(data["slo"], [f.name for f in fields(SloSpec)], "slo")
        kwargs["slo"] = _build(SloSpec, dict(data["slo"]), "slo")
    if "workload" in data:
        _check_keys(data["workload"], [f.name for f in fields(WorkloadShape)], "workload")
        kwargs["shape"] = _build(WorkloadShape, dict(data["workload"]), "workload")
    if "perf" in data:
        kwargs["perf"] = _perf(data["perf"], "perf")
    return _build(Scenario, kwargs, "scenario")


def _resolve_path(path: Union[str, Path]) -> Path:
    p = Path(path)
    if p.exists():
        return p
    builtin = DATA_DIR / f"{p.name}.yaml" if not p.suffix else DATA_DIR / p.name
    if builtin.exists():
        return builtin
    raise ScenarioError("no such scenario file", str(path))


def load_scenario_with_metadata(path: Union[str, Path]) -> LoadedScenario:
    p = _resolve_path(path)
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{p}:{mark.line + 1}:{mark.column + 1}" if mark else str(p)
        raise ScenarioError(f"parse error: {getattr(exc, 'problem', exc)}", where) from exc
    if data is None:
        raise ScenarioError("empty scenario file", str(p))
    defaults: List[str] = []
    try:
        scenario = scenario_from_dict(data, defaults)
    except ScenarioError as exc:
        raise ScenarioError(str(exc), str(p)) from exc
    return LoadedScenario(scenario, tuple(defaults), str(p))


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Parse and validate a scenario file (or a shipped scenario by name)."""
    return load_scenario_with_metadata(path).scenario


# ---------------------------------------------------------------------------
# serialising

def _usd(c: int) -> Union[int, float]:
    return c // 100 if c % 100 == 0 else c / 100


def _plain(obj) -> Dict[str, Any]:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        out[f.name] = "inf" if isinstance(v, float) and math.isinf(v) else v
    return out


def scenario_to_dict(sc: Scenario) -> Dict[str, Any]:
    def regime(r: Optional[GrowthRegime]):
        return None if r is None else _plain(r)

    def sku_rec(s: HardwareSku):
        rec = sku_to_record(s)
        rec["server_cost_usd"] = _usd(rec.pop("server_cost_cents"))
        return rec

    prices = {name: _usd(getattr(sc.prices, name)) for name in _PRICE_FIELDS}
    if sc.prices.server_costs is not None:
        prices["server_costs"] = {k: _usd(v) for k, v in sc.prices.server_costs}
    models: Dict[str, Any] = {"records": [model_to_record(m) for m in sc.models.seeds]}
    hardware: Dict[str, Any] = {"records": [sku_rec(s) for s in sc.hardware.seeds]}
    if sc.models.regime is not None:
        models["regime"] = regime(sc.models.regime)
    if sc.hardware.regime is not None:
        hardware["regime"] = regime(sc.hardware.regime)
    return {
        "schema_version": sc.schema_version,
        "start_month": format_month(sc.start_month),
        "horizon_months": sc.horizon_months,
        "demand": {"base_rps": sc.demand.base_rps, "annual_growth": sc.demand.annual_growth,
                   "diurnal_shape": list(sc.demand.diurnal_shape)},
        "models": models,
        "hardware": hardware,
        "initial_fleet": [{"sku": k, "servers": n} for k, n in sc.initial_fleet],
        "design": {"power": _plain(sc.design.power), "cooling": _plain(sc.design.cooling),
                   "network": _plain(sc.design.network),
                   "facility_capacity_watts": sc.design.facility_capacity_watts,
                   "sqft_per_server": sc.design.sqft_per_server, "maintenance_rate": sc.design.maintenance_rate},
        "prices": prices,
        "schedule": _plain(sc.schedule),
        "slo": _plain(sc.slo),
        "workload": _plain(sc.shape),
        "perf": {"efficiency": dict(sc.perf.efficiency), "usable_memory_fraction": sc.perf.usable_memory_fraction,
                 "resolution_rps": sc.perf.resolution_rps, "amortization_years": sc.perf.amortization_years},
    }


def serialize_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False)


def save_scenario(sc: Scenario, path: Union[str, Path]) -> None:
    Path(path).write_text(serialize_scenario(sc))


# ---------------------------------------------------------------------------
# reports

def fmt_cents(c: int) -> str:
    """Integer cents as a fixed-point USD string."""
    sign = "-" if c < 0 else ""
    c = abs(int(c))
    return f"{sign}{c // 100}.{c % 100:02d}"


def fmt_ratio(x: float) -> str:
    return f"{x:.3f}"


@dataclass
class Table:
    name: str
    header: Tuple[str, ...]
    rows: List[Tuple[str, ...]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()

    def to_records(self) -> List[Dict[str, str]]:
        return [dict(zip(self.header, r)) for r in self.rows]


def fleet_timeline_table(result: SimulationResult, seed: Optional[int] = None) -> Table:
    rows = []
    for month, counts in zip(result.months, result.counts):
        for sku_id in sorted(counts):
            rows.append((format_month(month), sku_id, str(counts[sku_id])))
    return Table("fleet_timeline", ("month", "sku", "servers"), rows)


def annual_tco_table(result: SimulationResult) -> Table:
    rows = []
    for year, b in zip(result.years, result.annual_tco):
        for name in COMPONENTS:
            rows.append((str(year), name, fmt_cents(getattr(b, name))))
        rows.append((str(year), "total", fmt_cents(b.total)))
    return Table("annual_tco", ("year", "component", "usd"), rows)


def events_table(result: SimulationResult) -> Table:
    rows = [tuple(str(x) for x in e.as_row()) for e in result.event_log]
    return Table("events", ("month", "event", "subject", "servers"), rows)


def simulation_tables(result: SimulationResult) -> List[Table]:
    return [fleet_timeline_table(result), annual_tco_table(result), events_table(result)]


def _usd_or_blank(x: float) -> str:
    return fmt_cents(int(round(x))) if math.isfinite(x) else ""


def distribution_table(named: Sequence[Tuple[str, Any]]) -> Table:
    """One row per (candidate, statistic) for (label, TcoDistribution) pairs."""
    rows = []
    for label, d in named:
        stats = [("trials", str(d.trials)), ("exhausted", str(d.exhausted)),
                 ("mean_usd", _usd_or_blank(d.mean)), ("std_usd", _usd_or_blank(d.std)),
                 ("sem_usd", _usd_or_blank(d.sem))]
        stats += [(f"p{q}_usd", _usd_or_blank(v)) for q, v in d.percentiles.items()]
        ratio = d.mean_ratio
        stats.append(("mean_ratio", "" if ratio is None else fmt_ratio(ratio)))
        rows += [(label, k, v) for k, v in stats]
    return Table("tco_distribution", ("candidate", "statistic", "value"), rows)


def trials_table(named: Sequence[Tuple[str, Any]]) -> Table:
    """Per-trial lifetime TCO and ratio to the baseline; exhausted trials are marked, not dropped."""
    rows = []
    for label, d in named:
        ratios = d.ratios or (None,) * d.trials
        for i, (v, r) in enumerate(zip(d.values, ratios)):
            status = "exhausted" if v is None else "ok"
            rows.append((label, str(i), status, "" if v is None else fmt_cents(v),
                         "" if r is None else fmt_ratio(r)))
    return Table("tco_trials", ("candidate", "trial", "status", "tco_usd", "ratio"), rows)


def regime_matrix_table(cells: Mapping[Tuple[str, str], Any]) -> Table:
    """Strategy matrix: build, refresh and operate rows per (model regime, hardware regime) cell."""
    rows = []
    for (model_shape, hw_shape), cell in cells.items():
        res = cell.result
        for stage, text in cell.rows().items():
            rows.append((model_shape, hw_shape, stage, text))
        ratio = res.baseline_ratio
        rows.append((model_shape, hw_shape, "ratio", fmt_ratio(ratio) if math.isfinite(ratio) else ""))
        rows.append((model_shape, hw_shape, "exhausted", f"{res.dist.exhausted}/{res.dist.trials}"))
    return Table("regime_matrix", ("model_regime", "hardware_regime", "stage", "strategy"), rows)


@dataclass
class ReportBundle:
    seed: Optional[int]
    command: str
    tables: List[Table]
    summary: Dict[str, Any] = field(default_factory=dict)

    def metadata(self) -> Dict[str, Any]:
        # timestamps would break byte-identical reruns; the seed and version identify a run
        return {"tool": "dclc", "version": __version__, "report_schema_version": REPORT_SCHEMA_VERSION,
                "command": self.command, "seed": self.seed}


def emit_reports(bundle: ReportBundle, out_dir: Union[str, Path], formats: Iterable[str] = ("csv",)) -> List[Path]:
    """Write every table plus a summary JSON document; returns the written paths."""
    formats = set(formats)
    bad = formats - {"csv", "json"}
    if bad:
        raise ValueError(f"unknown report formats {sorted(bad)}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written: List[Path] = []
    seed_col = "" if bundle.seed is None else str(bundle.seed)
    for table in bundle.tables:
        seeded = Table(table.name, table.header + ("seed",), [r + (seed_col,) for r in table.rows])
        if "csv" in formats:
            p = out / f"{table.name}.csv"
            p.write_text(seeded.to_csv())
            written.append(p)
        if "json" in formats:
            p = out / f"{table.name}.json"
            p.write_text(json.dumps({"seed": bundle.seed, "columns": list(table.header),
                                     "rows": [list(r) for r in table.rows]}, indent=1) + "\n")
            written.append(p)
    summary = {"metadata": bundle.metadata(), **bundle.summary}
    p = out / "summary.json"
    p.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    written.append(p)
    return written
