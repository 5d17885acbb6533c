"""Roofline latency model, SLO-bounded goodput and replica provisioning.

Latency semantics: a request's first token waits for its own prompt pass
(prefill work divided by the batch it was counted over), while every decode
step of a running batch advances all of its requests at once. The replica
throughput ceiling is the batch size over the time to prefill the whole batch
and decode it to completion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Dict, Optional, Tuple, Union

from . import kernels
from .catalog import HardwareSku, ModelSpec

TP_CHOICES = (1, 2, 4, 8)
# upper bound on whole-server replica groups for models no single server can hold
SPANNING_SERVERS = 4096


class ModelDoesNotFit(ValueError):
    """Aggregate memory of the chosen tensor-parallel group is too small."""


class Unservable(ValueError):
    """No tensor-parallel degree fits the model on this SKU."""


class _SloInfeasible:
    """Marker returned when the offered load reaches the throughput ceiling."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "SLO_INFEASIBLE"

    def __bool__(self) -> bool:
        return False


SLO_INFEASIBLE = _SloInfeasible()


@dataclass(frozen=True)
class WorkloadShape:
    seq_len_prompt: int = 1024
    seq_len_decode: int = 192
    batch_size: int = 32

    def __post_init__(self) -> None:
        if self.seq_len_prompt < 1 or self.batch_size < 1 or self.seq_len_decode < 0:
            raise ValueError("prompt and batch must be >= 1, decode >= 0")

    @property
    def mean_context(self) -> float:
        return self.seq_len_prompt + self.seq_len_decode / 2.0


@dataclass(frozen=True)
class RequirementProfile:
    prefill_flops: float              # whole batch, 2 * active * prompt * batch
    decode_flops_per_token: float     # one decode step of the whole batch
    decode_bytes_per_token: float     # active weights + KV traffic of one step
    weight_footprint: float
    kv_footprint_per_request: float
    batch_size: int = 1
    decode_steps: int = 0
    decode_kv_bytes_per_token: float = 0.0   # KV share of decode_bytes_per_token
    eight_bit: bool = False                  # weights stored natively in 8 bits or fewer

    def __post_init__(self) -> None:
        for name in ("prefill_flops", "decode_flops_per_token", "decode_bytes_per_token",
                     "weight_footprint", "kv_footprint_per_request", "decode_kv_bytes_per_token"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def prefill_flops_per_request(self) -> float:
        return self.prefill_flops / self.batch_size

    @property
    def prefill_bytes(self) -> float:
        return self.weight_footprint

    @property
    def batch_memory(self) -> float:
        return self.weight_footprint + self.kv_footprint_per_request * self.batch_size


@dataclass(frozen=True)
class ProfileModifier:
    """Multiplicative adjustments an operation policy applies to a profile."""

    compute: float = 1.0        # all FLOPs
    weight_bytes: float = 1.0   # stored and streamed weights
    active: float = 1.0         # FLOPs and streamed weights, not footprint
    kv_bytes: float = 1.0       # KV traffic and footprint
    prefill: float = 1.0        # prompt FLOPs only (prefix reuse)

    def __mul__(self, other: "ProfileModifier") -> "ProfileModifier":
        return ProfileModifier(self.compute * other.compute, self.weight_bytes * other.weight_bytes,
                               self.active * other.active, self.kv_bytes * other.kv_bytes,
                               self.prefill * other.prefill)

    @property
    def is_identity(self) -> bool:
        return self == ProfileModifier()


@dataclass(frozen=True)
class LatencyEstimate:
    ttft_ms: float
    tbt_ms: float

    def __post_init__(self) -> None:
        if self.ttft_ms < 0 or self.tbt_ms < 0:
            raise ValueError("latencies must be non-negative")


@dataclass(frozen=True)
class SloSpec:
    ttft_ms_max: float = 400.0
    tbt_ms_max: float = 100.0

    def __post_init__(self) -> None:
        if not (self.ttft_ms_max > 0 and self.tbt_ms_max > 0):
            raise ValueError("SLO bounds must be positive")


@dataclass(frozen=True)
class EfficiencyMetrics:
    goodput_rps: float
    goodput_per_watt: float
    goodput_per_watt_per_dollar: float
    tensor_parallel: int = 0
    replicas: int = 0
    servers_per_replica: int = 1


@dataclass(frozen=True)
class PerfConfig:
    """Knobs of the roofline model that are not properties of a SKU or model."""

    efficiency: Tuple[Tuple[str, float], ...] = (("cpu-server", 0.4), ("gpu-server", 0.6))
    tp_penalty: float = 0.05
    perf_factor: float = 1.0            # design-level derate (cooling, fabric)
    usable_memory_fraction: float = 0.9
    resolution_rps: float = 0.1
    amortization_years: float = 5.0     # for the per-dollar metric only
    max_servers_per_replica: int = 1    # >1 lets a replica span 2, 4, 8, ... whole servers

    def __post_init__(self) -> None:
        if self.max_servers_per_replica < 1:
            raise ValueError("max_servers_per_replica must be >= 1")
        # one canonical order so equal configs compare and hash equal
        object.__setattr__(self, "efficiency", tuple(sorted(dict(self.efficiency).items())))

    def efficiency_for(self, kind: str) -> float:
        return dict(self.efficiency)[kind]

    def with_efficiency(self, kind: str, value: float) -> "PerfConfig":
        eff = dict(self.efficiency)
        eff[kind] = value
        return replace(self, efficiency=tuple(sorted(eff.items())))


DEFAULT_CONFIG = PerfConfig()


def model_requirements(model: ModelSpec, shape: WorkloadShape,
                       modifier: Optional[ProfileModifier] = None) -> RequirementProfile:
    mod = modifier or ProfileModifier()
    b = shape.batch_size
    active_flops = 2.0 * model.active_params * mod.active * mod.compute
    kv_token = model.kv_bytes_per_token * mod.kv_bytes
    kv_step = kv_token * shape.mean_context * b + model.state_bytes * mod.kv_bytes * b
    weights_step = model.active_weight_bytes * mod.active * mod.weight_bytes
    return RequirementProfile(
        prefill_flops=active_flops * mod.prefill * shape.seq_len_prompt * b,
        decode_flops_per_token=active_flops * b,
        decode_bytes_per_token=weights_step + kv_step,
        weight_footprint=model.weight_bytes * mod.weight_bytes,
        kv_footprint_per_request=kv_token * (shape.seq_len_prompt + shape.seq_len_decode)
        + model.state_bytes * mod.kv_bytes,
        batch_size=b,
        decode_steps=shape.seq_len_decode,
        decode_kv_bytes_per_token=kv_step,
        eight_bit=model.bytes_per_param <= 1,
    )


def effective_rates(sku: HardwareSku, tensor_parallel: int,
                    config: PerfConfig = DEFAULT_CONFIG, eight_bit: bool = False) -> Tuple[float, float]:
    """Achievable (FLOP/s, bytes/s) of a tensor-parallel group.

    Natively 8-bit models run on the 8-bit tensor path where the SKU has one.
    """
    scale = (tensor_parallel * config.efficiency_for(sku.kind)
             * (1.0 - config.tp_penalty * math.log2(tensor_parallel)) * config.perf_factor)
    if scale <= 0:
        raise ValueError("tensor-parallel penalty leaves no effective throughput")
    peak = max(sku.peak_flops, sku.peak_flops_8bit) if eight_bit else sku.peak_flops
    return peak * scale, sku.mem_bandwidth * scale


def phase_times(req: RequirementProfile, sku: HardwareSku, tensor_parallel: int,
                config: PerfConfig = DEFAULT_CONFIG) -> Tuple[float, float, float]:
    """Unloaded (first-token seconds, per-token seconds, ceiling requests/s) of one replica."""
    if tensor_parallel < 1:
        raise ValueError("tensor_parallel must be >= 1")
    if sku.mem_per_accelerator * tensor_parallel < req.weight_footprint:
        raise ModelDoesNotFit(f"{req.weight_footprint:.3g} B of weights exceed TP{tensor_parallel} memory on {sku.id}")
    flops, bw = effective_rates(sku, tensor_parallel, config, req.eight_bit)
    t_first = max(req.prefill_flops_per_request / flops, req.prefill_bytes / bw)
    t_token = max(req.decode_flops_per_token / flops, req.decode_bytes_per_token / bw)
    ceiling = req.batch_size / (batch_prefill_time(req, flops, bw) + req.decode_steps * t_token)
    return t_first, t_token, ceiling


def batch_prefill_time(req: RequirementProfile, flops: float, bw: float) -> float:
    # one weight pass serves the whole batch's prompts
    return max(req.prefill_flops / flops, req.prefill_bytes / bw)


def roofline_latency(req: RequirementProfile, sku: HardwareSku, tensor_parallel: int, load_rps: float,
                     config: PerfConfig = DEFAULT_CONFIG) -> Union[LatencyEstimate, _SloInfeasible]:
    """Latency of one replica at ``load_rps`` requests/s."""
    if load_rps < 0:
        raise ValueError("load must be non-negative")
    t_first, t_token, ceiling = phase_times(req, sku, tensor_parallel, config)
    if load_rps >= ceiling:
        return SLO_INFEASIBLE
    inflation = 1.0 / (1.0 - load_rps / ceiling)
    return LatencyEstimate(t_first * 1e3 * inflation, t_token * 1e3 * inflation)


def fits(req: RequirementProfile, sku: HardwareSku, tensor_parallel: int,
         config: PerfConfig = DEFAULT_CONFIG) -> bool:
    return req.batch_memory <= config.usable_memory_fraction * sku.mem_per_accelerator * tensor_parallel


def tp_candidates(sku: HardwareSku, config: PerfConfig = DEFAULT_CONFIG):
    """Tensor-parallel degrees in increasing order: within one server, then whole-server groups."""
    per_server = sku.accelerators_per_server
    for tp in TP_CHOICES:
        if tp <= per_server:
            yield tp
    servers = 2
    while servers <= config.max_servers_per_replica:
        tp = servers * per_server
        if 1.0 - config.tp_penalty * math.log2(tp) <= 0:
            return
        yield tp
        servers *= 2


def smallest_tp(req: RequirementProfile, sku: HardwareSku, config: PerfConfig = DEFAULT_CONFIG) -> int:
    for tp in tp_candidates(sku, config):
        if fits(req, sku, tp, config):
            return tp
    raise Unservable(f"model-unservable-on-sku: {sku.id}")


def replica_layout(sku: HardwareSku, tp: int) -> Tuple[int, int]:
    """(replicas per server, servers per replica); one of the two is 1."""
    per_server = sku.accelerators_per_server
    if tp <= per_server:
        return per_server // tp, 1
    return 1, tp // per_server


def _metrics(goodput: float, sku: HardwareSku, tp: int, config: PerfConfig) -> EfficiencyMetrics:
    per_watt = goodput / sku.tdp_server_watts
    yearly_cost = sku.server_cost_usd / config.amortization_years
    replicas, servers = replica_layout(sku, tp)
    return EfficiencyMetrics(goodput, per_watt, per_watt / yearly_cost, tp, replicas, servers)


def goodput_from_profile(req: RequirementProfile, sku: HardwareSku, slo: SloSpec,
                         config: PerfConfig = DEFAULT_CONFIG, phase: str = "both") -> EfficiencyMetrics:
    """Per-server goodput for a prepared profile.

    ``phase`` restricts the replica to prompt processing (``"prefill"``) or
    token generation (``"decode"``) for disaggregated serving.
    """
    tp = smallest_tp(req, sku, config)
    t_first, t_token, ceiling = phase_times(req, sku, tp, config)
    slo_first, slo_token = slo.ttft_ms_max, slo.tbt_ms_max
    if phase == "prefill":
        ceiling = req.batch_size / batch_prefill_time(req, *effective_rates(sku, tp, config, req.eight_bit))
        t_token, slo_token = 0.0, math.inf
    elif phase == "decode":
        if req.decode_steps == 0:
            # nothing to generate: token work never limits the server
            return _metrics(math.inf, sku, tp, config)
        ceiling = req.batch_size / (req.decode_steps * t_token)
        t_first, slo_first = 0.0, math.inf
    elif phase != "both":
        raise ValueError(f"unknown phase {phase!r}")
    replicas, servers = replica_layout(sku, tp)
    steps = kernels.search_steps(t_first, t_token, ceiling, replicas, config.resolution_rps,
                                 slo_first, slo_token)
    goodput = max(steps, 0) * config.resolution_rps / servers
    return _metrics(goodput, sku, tp, config)


def max_goodput(model: ModelSpec, shape: WorkloadShape, sku: HardwareSku, slo: SloSpec,
                config: PerfConfig = DEFAULT_CONFIG,
                modifier: Optional[ProfileModifier] = None) -> EfficiencyMetrics:
    return goodput_from_profile(model_requirements(model, shape, modifier), sku, slo, config)


@lru_cache(maxsize=200_000)
def cached_goodput(model: ModelSpec, shape: WorkloadShape, sku: HardwareSku, slo: SloSpec,
                   config: PerfConfig, modifier: ProfileModifier, phase: str = "both") -> float:
    """Per-server goodput in requests/s, 0 when the model cannot be served."""
    try:
        return goodput_from_profile(model_requirements(model, shape, modifier), sku, slo, config, phase).goodput_rps
    except Unservable:
        return 0.0


def scan_goodput(model: ModelSpec, shape: WorkloadShape, sku: HardwareSku, slo: SloSpec,
                 config: PerfConfig = DEFAULT_CONFIG) -> float:
    """Brute-force reference: walk the load grid upward through ``roofline_latency``."""
    req = model_requirements(model, shape)
    tp = smallest_tp(req, sku, config)
    replicas, servers = replica_layout(sku, tp)
    best = None
    k = 0
    while True:
        est = roofline_latency(req, sku, tp, k * config.resolution_rps / replicas, config)
        if est is SLO_INFEASIBLE or est.ttft_ms > slo.ttft_ms_max or est.tbt_ms > slo.tbt_ms_max:
            break
        best = k
        k += 1
    return 0.0 if best is None else best * config.resolution_rps / servers


def provision(demand_rps: float, model: ModelSpec, sku: HardwareSku, slo: SloSpec,
              shape: WorkloadShape = WorkloadShape(), config: PerfConfig = DEFAULT_CONFIG,
              goodput_rps: Optional[float] = None) -> Tuple[int, float]:
    if demand_rps < 0:
        raise ValueError("demand must be non-negative")
    per_server = goodput_rps if goodput_rps is not None else max_goodput(model, shape, sku, slo, config).goodput_rps
    if demand_rps == 0:
        return 0, 0.0
    if per_server <= 0:
        raise Unservable(f"model-unservable-on-sku: {sku.id} has zero goodput for {model.id}")
    servers = max(1, math.ceil(demand_rps / per_server))
    return servers, demand_rps / (servers * per_server)


def calibrate_efficiency(model: ModelSpec, sku: HardwareSku, shape: WorkloadShape, load_rps: float,
                         target: LatencyEstimate, tensor_parallel: int,
                         config: PerfConfig = DEFAULT_CONFIG, grid: int = 2000) -> float:
    """Efficiency factor minimising the summed log error against a latency target."""
    req = model_requirements(model, shape)
    best_err, best_eff = math.inf, config.efficiency_for(sku.kind)
    for i in range(1, grid + 1):
        eff = i / grid
        est = roofline_latency(req, sku, tensor_parallel, load_rps, config.with_efficiency(sku.kind, eff))
        if est is SLO_INFEASIBLE:
            continue
        err = abs(math.log(est.ttft_ms / target.ttft_ms)) + abs(math.log(est.tbt_ms / target.tbt_ms))
        if err < best_err:
            best_err, best_eff = err, eff
    return best_eff
