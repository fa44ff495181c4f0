"""Run counters, derived statistics, and the energy / ED^2 model."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Optional

from .config import SimConfig
from .geometry import derive_geometry, tag_compare_cost

SOURCES = ("L1", "L2", "PB", "NVM-LLC", "SRAM-LLC", "memory")


@dataclass
class RunMetrics:
    instructions: int = 0
    cycles: int = 0
    loads: int = 0
    stores: int = 0

    l1_hits: int = 0
    l1_misses: int = 0
    l2_hits: int = 0
    l2_misses: int = 0
    llc_lookups: int = 0
    llc_hits: int = 0
    llc_misses: int = 0
    pb_hits: int = 0
    llc_array_hits: int = 0
    llc_hits_refilled_pages: int = 0

    # summed over L2-miss reads: issue -> data back at L2
    l2_miss_response_cycles: int = 0
    # summed over L2-miss reads: issue -> LLC response (hit) or LLC miss verdict
    llc_read_service_cycles: int = 0

    # L1 TLB refills that satisfy the trigger rule, whether or not a PTR consumer exists
    ptr_eligible: int = 0
    ptr_sent: int = 0
    ptr_delivered: int = 0
    ptr_pb_resident: int = 0
    ptr_gated_out: int = 0
    ptr_no_victim: int = 0
    pb_promotions: int = 0
    pb_replacements: int = 0
    promoted_lines: int = 0
    promoted_lines_accessed: int = 0
    pb_reads: int = 0
    pb_writes: int = 0
    pb_tag_checks: int = 0

    llc_tag_lookups: int = 0
    llc_ptr_scans: int = 0
    llc_data_reads: int = 0
    llc_data_writes: int = 0
    llc_row_reads: int = 0
    llc_row_lines_read: int = 0
    llc_installs: int = 0
    llc_evictions: int = 0
    llc_dirty_evictions: int = 0
    write_queue_stall_cycles: int = 0
    llc_array_busy_cycles: int = 0

    mem_reads: int = 0
    mem_writes: int = 0

    l1_tlb_hits: int = 0
    l1_tlb_misses: int = 0
    l2_tlb_hits: int = 0
    page_walks: int = 0
    tlb_refills: int = 0

    l2_prefetches: int = 0
    fetch_to_l2_lines: int = 0
    fetch_to_l2_dropped: int = 0

    audits_run: int = 0
    audit_violations: int = 0

    source_counts: dict[str, int] = field(default_factory=lambda: dict.fromkeys(SOURCES, 0))
    source_cycles: dict[str, int] = field(default_factory=lambda: dict.fromkeys(SOURCES, 0))
    # LLC-resident lines of a 4KB page at each L1 TLB refill, and at each delivered PTR
    refill_residency_hist: list[int] = field(default_factory=lambda: [0] * 65)
    ptr_population_hist: list[int] = field(default_factory=lambda: [0] * 65)

    def record(self, name: str, amount: int = 1) -> None:
        setattr(self, name, getattr(self, name) + amount)

    def record_service(self, source: str, cycles: int) -> None:
        self.source_counts[source] += 1
        self.source_cycles[source] += cycles

    def merge(self, other: "RunMetrics") -> "RunMetrics":
        out = RunMetrics()
        for f in dataclasses.fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, dict):
                setattr(out, f.name, {k: a.get(k, 0) + b.get(k, 0) for k in a.keys() | b.keys()})
            elif isinstance(a, list):
                setattr(out, f.name, [x + y for x, y in zip(a, b)])
            else:
                setattr(out, f.name, a + b)
        return out


@dataclass(frozen=True)
class EnergyModel:
    llc_read: float
    llc_write: float
    llc_tag: float
    llc_ptr_tag: float
    llc_leak: float
    pb_read: float
    pb_write: float
    pb_tag: float
    pb_leak: float
    mem_access: float
    core_power: float
    clock_hz: float

    @classmethod
    def from_config(cls, config: SimConfig) -> "EnergyModel":
        e = config.energy
        if config.nvm:
            read, write, tag, leak = e.nvm_read, e.nvm_write, e.nvm_tag, e.nvm_leak
        else:
            read, write, tag, leak = e.sram_read, e.sram_write, e.sram_tag, e.sram_leak
        ptr_tag = 0.0
        if config.llc.layout == "page_row":
            cost = tag_compare_cost(derive_geometry(config))
            ptr_tag = tag * cost.ratio
        pbs = config.pb.enabled
        return cls(
            llc_read=read,
            llc_write=write,
            llc_tag=tag,
            llc_ptr_tag=ptr_tag,
            llc_leak=leak * config.llc.slices,
            pb_read=e.pb_read,
            pb_write=e.pb_write,
            pb_tag=e.pb_tag,
            pb_leak=e.pb_leak * config.llc.slices if pbs else 0.0,
            mem_access=e.mem_access,
            core_power=e.core_power,
            clock_hz=config.core.clock_hz,
        )

    def breakdown(self, m: RunMetrics) -> dict[str, float]:
        seconds = m.cycles / self.clock_hz
        llc = (
            (m.llc_data_reads + m.llc_row_lines_read) * self.llc_read
            + m.llc_data_writes * self.llc_write
            + m.llc_tag_lookups * self.llc_tag
            + m.llc_ptr_scans * self.llc_ptr_tag
        )
        pb = m.pb_reads * self.pb_read + m.pb_writes * self.pb_write + m.pb_tag_checks * self.pb_tag
        mem = (m.mem_reads + m.mem_writes) * self.mem_access
        leak = (self.llc_leak + self.pb_leak) * seconds
        core = self.core_power * seconds
        return {"llc_dynamic": llc, "pb_dynamic": pb, "mem_dynamic": mem, "leakage": leak, "core": core}

    def energy(self, m: RunMetrics) -> float:
        return sum(self.breakdown(m).values())

    def ed2(self, m: RunMetrics) -> float:
        seconds = m.cycles / self.clock_hz
        return self.energy(m) * seconds * seconds


def _ratio(num: float, den: float) -> Optional[float]:
    return num / den if den else None


def finalize(metrics: RunMetrics, config: SimConfig) -> dict[str, Any]:
    """Derived statistics; ratios with a zero denominator are reported as None."""
    m = metrics
    model = EnergyModel.from_config(config)
    kilo = m.instructions / 1000
    parts = model.breakdown(m)
    energy = sum(parts.values())
    seconds = m.cycles / config.core.clock_hz
    return {
        "instructions": m.instructions,
        "cycles": m.cycles,
        "ipc": _ratio(m.instructions, m.cycles),
        "l2_mpki": _ratio(m.l2_misses, kilo),
        "llc_mpki": _ratio(m.llc_misses, kilo),
        "llc_hits": m.llc_hits,
        "llc_misses": m.llc_misses,
        "pb_hits": m.pb_hits,
        "pb_hit_fraction": _ratio(m.pb_hits, m.llc_hits),
        "l2_miss_response_cycles": m.l2_miss_response_cycles,
        "llc_read_service_cycles": m.llc_read_service_cycles,
        "ptr_sent": m.ptr_sent,
        "ptr_delivered": m.ptr_delivered,
        "ptr_gated_out": m.ptr_gated_out,
        "ptr_no_victim": m.ptr_no_victim,
        "ptr_promoted": m.pb_promotions,
        "ptr_eligible_fraction": _ratio(m.ptr_eligible, m.l1_tlb_misses),
        "ptr_victim_found_fraction": _ratio(m.pb_promotions, m.pb_promotions + m.ptr_no_victim),
        "promoted_lines": m.promoted_lines,
        "promoted_lines_accessed": m.promoted_lines_accessed,
        "promotion_utilization": _ratio(m.promoted_lines_accessed, m.promoted_lines),
        "refilled_page_hit_fraction": _ratio(m.llc_hits_refilled_pages, m.llc_hits),
        "nvm_reads": m.llc_data_reads + m.llc_row_lines_read if config.nvm else 0,
        "nvm_writes": m.llc_data_writes if config.nvm else 0,
        "mem_reads": m.mem_reads,
        "mem_writes": m.mem_writes,
        "energy_j": energy,
        "energy_llc_j": parts["llc_dynamic"],
        "energy_pb_j": parts["pb_dynamic"],
        "energy_mem_j": parts["mem_dynamic"],
        "energy_leak_j": parts["leakage"],
        "ed2": energy * seconds * seconds,
        "audit_violations": m.audit_violations,
        "refill_residency_hist": list(m.refill_residency_hist),
        "ptr_population_hist": list(m.ptr_population_hist),
    }
