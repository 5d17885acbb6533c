"""Fleet snapshot types shared by the cost engine and the simulator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from .catalog import HardwareSku


@dataclass(frozen=True)
class Cohort:
    """Servers of one SKU bought in the same month."""

    sku: HardwareSku
    purchase_month: int
    server_count: int
    # planned service life; None keeps the server until the end of the horizon
    lifetime_months: Optional[int] = None

    def age(self, month: int) -> int:
        return month - self.purchase_month

    def expired(self, month: int) -> bool:
        return self.lifetime_months is not None and self.age(month) >= self.lifetime_months


@dataclass(frozen=True)
class FleetState:
    month: int
    cohorts: Tuple[Cohort, ...] = ()
    # model id -> ((cohort index, share of that model's demand), ...)
    assignments: Dict[str, Tuple[Tuple[int, float], ...]] = field(default_factory=dict)
    utilization: Tuple[float, ...] = ()        # diurnal-mean busy fraction per cohort
    peak_utilization: Tuple[float, ...] = ()   # busy fraction at the daily peak
    ancillary_watts: float = 0.0               # average non-accelerator IT load
    provisioned_watts: Optional[float] = None  # built IT power; None means design capacity

    def __post_init__(self) -> None:
        n = len(self.cohorts)
        if self.utilization and len(self.utilization) != n:
            raise ValueError("one utilization value per cohort")
        if self.peak_utilization and len(self.peak_utilization) != n:
            raise ValueError("one peak utilization value per cohort")
        for model, parts in self.assignments.items():
            total = sum(share for _, share in parts)
            if parts and abs(total - 1.0) > 1e-6:
                raise ValueError(f"shares for {model} sum to {total}, not 1")
            for idx, _ in parts:
                if not 0 <= idx < n:
                    raise ValueError(f"assignment of {model} names missing cohort {idx}")

    @property
    def server_count(self) -> int:
        return sum(c.server_count for c in self.cohorts)

    def mean_util(self, i: int) -> float:
        return self.utilization[i] if self.utilization else 0.0

    def peak_util(self, i: int) -> float:
        if self.peak_utilization:
            return self.peak_utilization[i]
        return self.mean_util(i)

    def counts_by_sku(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for c in self.cohorts:
            out[c.sku.id] = out.get(c.sku.id, 0) + c.server_count
        return out
