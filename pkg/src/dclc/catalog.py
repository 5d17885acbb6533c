"""Hardware SKUs, model releases, and their projection into the future.

Calendar months are plain integers (``year * 12 + month - 1``) so that month
arithmetic is ordinary integer arithmetic; ``parse_month``/``format_month``
convert to and from ``YYYY-MM`` strings.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

SKU_KINDS = ("gpu-server", "cpu-server")
INTERCONNECTS = ("ethernet", "infiniband", "nvlink")
ARCHITECTURES = ("dense-transformer", "moe", "ssm")
MODEL_TIERS = ("frontier", "compact", "reference")
REGIME_SHAPES = ("slow-sublinear", "medium-linear", "fast-exponential")

CATALOG_SCHEMA_VERSION = 1
DEFAULT_SYNTHETIC_DELAY = 9


class CatalogError(ValueError):
    """Invalid catalog entry or projection request."""


def parse_month(text: str) -> int:
    year, month = str(text).split("-")
    y, m = int(year), int(month)
    if not 1 <= m <= 12:
        raise CatalogError(f"month out of range in {text!r}")
    return y * 12 + m - 1


def format_month(index: int) -> str:
    return f"{index // 12:04d}-{index % 12 + 1:02d}"


def month_year(index: int) -> int:
    return index // 12


@dataclass(frozen=True)
class HardwareSku:
    """One server generation. Compute and bandwidth are per accelerator,
    memory capacity is for the whole server."""

    id: str
    kind: str
    release_month: int
    availability_delay_months: int
    peak_flops: float
    mem_bandwidth: float
    mem_capacity: float
    tdp_server_watts: float
    accelerators_per_server: int
    server_cost_cents: int
    interconnect_class: str
    lineage: str = "default"
    idle_power_fraction: float = 0.3
    # dense 8-bit tensor throughput per accelerator; 0 when the part has no 8-bit path
    peak_flops_8bit: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in SKU_KINDS:
            raise CatalogError(f"{self.id}: unknown kind {self.kind!r}")
        if self.interconnect_class not in INTERCONNECTS:
            raise CatalogError(f"{self.id}: unknown interconnect {self.interconnect_class!r}")
        if self.availability_delay_months < 0:
            raise CatalogError(f"{self.id}: availability_delay_months must be >= 0")
        for name in ("peak_flops", "mem_bandwidth", "mem_capacity", "tdp_server_watts",
                     "accelerators_per_server", "server_cost_cents"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise CatalogError(f"{self.id}: {name} must be positive, got {value}")
        if self.peak_flops_8bit < 0:
            raise CatalogError(f"{self.id}: peak_flops_8bit must be non-negative")
        if not 0.0 <= self.idle_power_fraction <= 1.0:
            raise CatalogError(f"{self.id}: idle_power_fraction must lie in [0, 1]")

    @property
    def available_month(self) -> int:
        return self.release_month + self.availability_delay_months

    @property
    def server_cost_usd(self) -> float:
        return self.server_cost_cents / 100.0

    @property
    def mem_per_accelerator(self) -> float:
        return self.mem_capacity / self.accelerators_per_server


@dataclass(frozen=True)
class ModelSpec:
    id: str
    release_month: int
    total_params: float
    active_params: float
    architecture: str
    layers: int
    hidden_dim: int
    bytes_per_param: float
    kv_bytes_per_token: float
    # fixed per-request recurrent state, only meaningful for ssm models
    state_bytes: float = 0.0
    tier: str = "frontier"

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise CatalogError(f"{self.id}: unknown architecture {self.architecture!r}")
        if self.tier not in MODEL_TIERS:
            raise CatalogError(f"{self.id}: unknown tier {self.tier!r}")
        if not 0 < self.active_params <= self.total_params:
            raise CatalogError(f"{self.id}: need 0 < active_params <= total_params")
        if self.architecture == "dense-transformer" and self.active_params != self.total_params:
            raise CatalogError(f"{self.id}: dense models have active_params == total_params")
        if self.kv_bytes_per_token < 0 or self.state_bytes < 0:
            raise CatalogError(f"{self.id}: kv/state bytes must be non-negative")
        if self.kv_bytes_per_token == 0 and self.architecture != "ssm":
            raise CatalogError(f"{self.id}: kv_bytes_per_token = 0 is only valid for ssm")
        for name in ("layers", "hidden_dim", "bytes_per_param"):
            if not getattr(self, name) > 0:
                raise CatalogError(f"{self.id}: {name} must be positive")

    @property
    def weight_bytes(self) -> float:
        return self.total_params * self.bytes_per_param

    @property
    def active_weight_bytes(self) -> float:
        return self.active_params * self.bytes_per_param


@dataclass(frozen=True)
class GrowthRegime:
    """Projection shape plus a steepness multiplier on the fitted seed trend.

    ``rate = 1`` reproduces the trend fitted to the seeds; 2 doubles its
    slope (or its log-slope for the exponential shape).
    """

    shape: str = "medium-linear"
    rate: float = 1.0
    # projected server prices follow their trend, or stay at the last seed's price
    cost_follows_trend: bool = True
    # months between a projected SKU's release and its availability
    synthetic_delay: int = DEFAULT_SYNTHETIC_DELAY

    def __post_init__(self) -> None:
        if self.synthetic_delay < 0:
            raise CatalogError("synthetic_delay must be >= 0")
        if self.shape not in REGIME_SHAPES:
            raise CatalogError(f"unknown regime shape {self.shape!r}")
        if not self.rate > 0:
            raise CatalogError("regime rate must be > 0")


# ---------------------------------------------------------------------------
# projection

def _years(months: Sequence[int]) -> np.ndarray:
    return np.asarray(months, dtype=float) / 12.0


def _fit_slope(t: np.ndarray, y: np.ndarray) -> float:
    if len(t) < 2 or np.ptp(t) == 0:
        return 0.0
    tc = t - t.mean()
    return float((tc * (y - y.mean())).sum() / (tc * tc).sum())


def _extrapolate(shape: str, rate: float, t: np.ndarray, values: np.ndarray,
                 dt_years: float, non_decreasing: bool) -> float:
    last = float(values[-1])
    if shape == "fast-exponential":
        growth = _fit_slope(t, np.log(values))
        if non_decreasing:
            growth = max(growth, 0.0)
        return last * math.exp(rate * growth * dt_years)
    slope = _fit_slope(t, values)
    if non_decreasing:
        slope = max(slope, 0.0)
    if shape == "medium-linear":
        return last + rate * slope * dt_years
    return last + rate * slope * math.sqrt(dt_years)


def release_cadence(months: Sequence[int]) -> int:
    """Mean gap between consecutive releases, rounded to whole months (min 1)."""
    if len(months) < 2:
        return 12
    gaps = np.diff(np.asarray(months, dtype=float))
    return max(1, int(round(float(gaps.mean()))))


def _future_months(last: int, cadence: int, horizon: int) -> List[int]:
    return list(range(last + cadence, horizon + 1, cadence))


def _check_seeds(seeds: Sequence, horizon_month: int) -> None:
    if not seeds:
        raise CatalogError("projection needs at least one seed")
    months = [s.release_month for s in seeds]
    if any(b < a for a, b in zip(months, months[1:])):
        raise CatalogError("seeds must be in chronological order")
    if horizon_month < months[-1]:
        raise CatalogError("horizon precedes the last seed release")


def project_hardware_roadmap(seed_skus: Sequence[HardwareSku], horizon_month: int,
                             regime: GrowthRegime) -> List[HardwareSku]:
    seeds = list(seed_skus)
    _check_seeds(seeds, horizon_month)
    months = [s.release_month for s in seeds]
    t = _years(months)
    last = seeds[-1]
    columns = {
        "peak_flops": (np.array([s.peak_flops for s in seeds]), True),
        "mem_bandwidth": (np.array([s.mem_bandwidth for s in seeds]), True),
        "mem_capacity": (np.array([s.mem_capacity for s in seeds]), True),
        "tdp_server_watts": (np.array([s.tdp_server_watts for s in seeds]), False),
        "server_cost_cents": (np.array([float(s.server_cost_cents) for s in seeds]), False),
    }
    out = list(seeds)
    for k, month in enumerate(_future_months(last.release_month, release_cadence(months), horizon_month), 1):
        dt = (month - last.release_month) / 12.0
        values = {}
        for name, (series, monotone) in columns.items():
            if name == "server_cost_cents" and not regime.cost_follows_trend:
                values[name] = float(last.server_cost_cents)
                continue
            v = _extrapolate(regime.shape, regime.rate, t, series, dt, monotone)
            if not (v > 0 and math.isfinite(v)):
                raise CatalogError(f"projected {name} is non-positive at {format_month(month)}; "
                                   f"check the regime rate")
            values[name] = v
        out.append(replace(
            last,
            id=f"{last.lineage}-proj{k}-{format_month(month)}",
            release_month=month,
            availability_delay_months=regime.synthetic_delay,
            peak_flops=values["peak_flops"],
            peak_flops_8bit=last.peak_flops_8bit * values["peak_flops"] / last.peak_flops,
            mem_bandwidth=values["mem_bandwidth"],
            mem_capacity=values["mem_capacity"],
            tdp_server_watts=values["tdp_server_watts"],
            server_cost_cents=int(round(values["server_cost_cents"])),
        ))
    return out


def project_model_roadmap(seed_models: Sequence[ModelSpec], horizon_month: int,
                          regime: GrowthRegime) -> List[ModelSpec]:
    """Extend the seed lineage with synthetic releases.

    Size ratios against the latest seed drive the other fields: depth and
    width each scale with the cube root of the parameter ratio, so KV bytes
    per token scale with its 2/3 power.
    """
    seeds = list(seed_models)
    _check_seeds(seeds, horizon_month)
    months = [m.release_month for m in seeds]
    t = _years(months)
    params = np.array([m.total_params for m in seeds])
    last = seeds[-1]
    sparsity = last.active_params / last.total_params
    out = list(seeds)
    for k, month in enumerate(_future_months(last.release_month, release_cadence(months), horizon_month), 1):
        dt = (month - last.release_month) / 12.0
        total = _extrapolate(regime.shape, regime.rate, t, params, dt, True)
        if not (total > 0 and math.isfinite(total)):
            raise CatalogError(f"projected total_params is non-positive at {format_month(month)}")
        ratio = total / last.total_params
        out.append(replace(
            last,
            id=f"{last.id}-proj{k}",
            release_month=month,
            total_params=total,
            active_params=total if last.architecture == "dense-transformer" else total * sparsity,
            layers=max(1, int(round(last.layers * ratio ** (1 / 3)))),
            hidden_dim=max(1, int(round(last.hidden_dim * ratio ** (1 / 3)))),
            kv_bytes_per_token=last.kv_bytes_per_token * ratio ** (2 / 3),
            state_bytes=last.state_bytes * ratio ** (2 / 3),
        ))
    return out


# ---------------------------------------------------------------------------
# catalog files: JSON lines, first line a header carrying the schema version

_SKU_FIELDS = {f.name for f in fields(HardwareSku)}
_MODEL_FIELDS = {f.name for f in fields(ModelSpec)}


def sku_from_record(rec: Dict) -> HardwareSku:
    rec = dict(rec)
    unknown = set(rec) - (_SKU_FIELDS | {"server_cost_usd"}) - {"server_cost_cents"}
    if unknown:
        raise CatalogError(f"unknown SKU fields: {sorted(unknown)}")
    if "server_cost_usd" in rec:
        rec["server_cost_cents"] = int(round(float(rec.pop("server_cost_usd")) * 100))
    rec["release_month"] = parse_month(rec["release_month"])
    return HardwareSku(**rec)


def sku_to_record(sku: HardwareSku) -> Dict:
    rec = asdict(sku)
    rec["release_month"] = format_month(sku.release_month)
    return rec


def model_from_record(rec: Dict) -> ModelSpec:
    rec = dict(rec)
    unknown = set(rec) - _MODEL_FIELDS
    if unknown:
        raise CatalogError(f"unknown model fields: {sorted(unknown)}")
    rec["release_month"] = parse_month(rec["release_month"])
    return ModelSpec(**rec)


def model_to_record(model: ModelSpec) -> Dict:
    rec = asdict(model)
    rec["release_month"] = format_month(model.release_month)
    return rec


def read_catalog_lines(path: Path) -> Tuple[List[HardwareSku], List[ModelSpec]]:
    skus: List[HardwareSku] = []
    models: List[ModelSpec] = []
    lines = Path(path).read_text().splitlines()
    header = None
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CatalogError(f"{path}:{lineno}: {exc.msg}") from exc
        if header is None:
            header = rec
            if rec.get("schema_version") != CATALOG_SCHEMA_VERSION:
                raise CatalogError(f"{path}:{lineno}: expected schema_version {CATALOG_SCHEMA_VERSION}")
            continue
        kind = rec.pop("record", None)
        try:
            if kind == "sku":
                skus.append(sku_from_record(rec))
            elif kind == "model":
                models.append(model_from_record(rec))
            else:
                raise CatalogError(f"record type must be 'sku' or 'model', got {kind!r}")
        except (CatalogError, TypeError, KeyError) as exc:
            raise CatalogError(f"{path}:{lineno}: {exc}") from exc
    if header is None:
        raise CatalogError(f"{path}: empty catalog")
    return skus, models


DATA_DIR = Path(__file__).resolve().parent / "data"


def seed_catalog() -> Tuple[List[HardwareSku], List[ModelSpec]]:
    return read_catalog_lines(DATA_DIR / "catalog.jsonl")


def by_id(items: Iterable) -> Dict[str, object]:
    return {item.id: item for item in items}


def lineages(skus: Iterable[HardwareSku]) -> Dict[str, List[HardwareSku]]:
    out: Dict[str, List[HardwareSku]] = {}
    for sku in skus:
        out.setdefault(sku.lineage, []).append(sku)
    for group in out.values():
        group.sort(key=lambda s: s.release_month)
        months = [s.release_month for s in group]
        if len(set(months)) != len(months):
            raise CatalogError(f"lineage {group[0].lineage}: release months must strictly increase")
    return out


def frontier_models(models: Iterable[ModelSpec]) -> List[ModelSpec]:
    return sorted((m for m in models if m.tier == "frontier"), key=lambda m: m.release_month)


def compact_models(models: Iterable[ModelSpec]) -> List[ModelSpec]:
    return sorted((m for m in models if m.tier == "compact"), key=lambda m: m.release_month)


def latest_released(models: Sequence[ModelSpec], month: int) -> Optional[ModelSpec]:
    best = None
    for m in models:
        if m.release_month <= month and (best is None or m.release_month >= best.release_month):
            best = m
    return best
