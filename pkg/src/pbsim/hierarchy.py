"""Trace-driven timing model of the core, private caches, LLC, PBs and memory.

Functional state changes happen in trace order; timing is layered on top with
per-resource reservation (NVM data array, L2 response bus) and a small event
heap for page transfer requests that arrive after the TLB refill.

Timing of an L2 miss issued at cycle ``t`` (NVM LLC, Table-2 defaults)::

    t + 21          request reaches the LLC and its tags have answered
    LLC miss        data back at t + 190
    PB hit          data back at t + 43 + 1 (region-bit check)
    NVM hit         array busy [s, s + 10) with s >= t + 21; data back at s + 42
"""

from __future__ import annotations

import gc
import heapq
import itertools
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .config import SimConfig
from .metrics import RunMetrics
from .nvm_llc import LlcSlice
from .page_buffers import PageBufferSet
from .translation import PtrRequest, Translator
from .workload import TraceRecord


@dataclass(slots=True)
class MemRequest:
    id: int
    kind: str
    paddr: int
    issue_cycle: int
    completion_cycle: int = -1
    service_source: Optional[str] = None
    value: Optional[int] = None


class PrivateCache:
    """Set-associative LRU cache; each entry is ``[data, dirty]``."""

    def __init__(self, size: int, ways: int, line: int):
        self.ways = ways
        self.nsets = size // line // ways
        self.mask = self.nsets - 1
        self.sets: list[OrderedDict] = [OrderedDict() for _ in range(self.nsets)]

    def __contains__(self, la: int) -> bool:
        return la in self.sets[la & self.mask]

    def get(self, la: int):
        return self.sets[la & self.mask].get(la)

    def lines(self):
        for s in self.sets:
            yield from s


class ResponseBus:
    """LLC-to-L2 response bus: one line per cycle, first come first served."""

    def __init__(self):
        self.taken: set[int] = set()
        self._high = 0

    def reserve(self, cycle: int) -> int:
        taken = self.taken
        while cycle in taken:
            cycle += 1
        taken.add(cycle)
        if cycle > self._high:
            self._high = cycle
        if len(taken) > 8192:
            floor = self._high - 4096
            self.taken = {c for c in taken if c >= floor}
        return cycle


class AuditError(AssertionError):
    pass


class Hierarchy:
    def __init__(self, config: SimConfig, metrics: Optional[RunMetrics] = None, strict_audit: bool = False):
        self.config = config
        self.m = metrics if metrics is not None else RunMetrics()
        self.strict_audit = strict_audit
        self.audit_log: list[str] = []
        cfg = config
        line = cfg.line_size
        self.line_shift = line.bit_length() - 1
        self.translator = Translator(cfg)
        self.l1 = PrivateCache(cfg.l1.size, cfg.l1.ways, line)
        self.l2 = PrivateCache(cfg.l2.size, cfg.l2.ways, line)
        self.slices: list[LlcSlice] = []
        for _ in range(cfg.llc.slices):
            pbs = PageBufferSet(cfg, self.m) if cfg.pb.enabled else None
            self.slices.append(LlcSlice(cfg, self.m, pbs))
        first = self.slices[0]
        if cfg.llc.slices > 1:
            if first.page_row:
                self._slice_shift = first.geom.tag_high[1] - self.line_shift
            else:
                self._slice_shift = first.nsets.bit_length() - 1
        else:
            self._slice_shift = 0
        self._slice_mask = cfg.llc.slices - 1
        self.memory: dict[int, int] = {}
        self.bus = ResponseBus()

        llc = cfg.llc
        tag = llc.tag_latency
        if cfg.nvm:
            rt, data = llc.nvm_read_rt, llc.nvm_data_latency
        else:
            rt, data = llc.sram_rt, llc.sram_data_latency
        to_llc = (rt - tag - data) // 2
        self.arrive = to_llc + tag
        self.after_start = rt - self.arrive
        self.pb_rt = cfg.pb.rt + cfg.pb.region_check
        self.region_check = cfg.pb.region_check
        self.mem_rt = cfg.mem.rt
        self.l1_rt = cfg.l1.rt
        self.l2_rt = cfg.l2.rt
        self.tag_latency = tag
        self.ptr_latency = cfg.pb.ptr_latency
        self.llc_source = "NVM-LLC" if cfg.nvm else "SRAM-LLC"
        self.sends_ptrs = cfg.pb.enabled or cfg.core.fetch_to_l2
        self.mshr_limit = cfg.core.mshr_limit

        self.events: list = []
        self._seq = itertools.count()
        self.mshr: list[int] = []  # completion cycles of outstanding L1-miss loads
        self.now = 0
        self.last_completion = 0
        self._req_ids = itertools.count()

    # -- helpers ------------------------------------------------------------
    def slice_for(self, la: int) -> LlcSlice:
        if self._slice_mask == 0:
            return self.slices[0]
        return self.slices[(la >> self._slice_shift) & self._slice_mask]

    def schedule_ptr(self, ptr: PtrRequest, sent_cycle: int) -> None:
        self.m.ptr_sent += 1
        heapq.heappush(self.events, (sent_cycle + self.ptr_latency, next(self._seq), ptr))

    def process_events(self, upto: int) -> None:
        events = self.events
        while events and events[0][0] <= upto:
            due, _, ptr = heapq.heappop(events)
            self.deliver_ptr(ptr, due)

    # -- LLC request path ---------------------------------------------------
    def _service(self, la: int, now: int, refilled: bool = False) -> tuple[int, bool, int, str]:
        """Serve an L2 miss at the LLC. Returns ``(data, dirty, completion, source)``."""
        m = self.m
        m.l2_misses += 1
        m.llc_lookups += 1
        m.llc_tag_lookups += 1
        sl = self.slice_for(la)
        pbs = sl.pbs
        if pbs is not None:
            m.pb_tag_checks += 1
        way = sl.where.get(la)
        if way is None:
            m.llc_misses += 1
            m.mem_reads += 1
            m.llc_read_service_cycles += self.arrive
            completion = now + self.mem_rt
            m.l2_miss_response_cycles += self.mem_rt
            return self.memory.get(la, 0), False, completion, "memory"

        m.llc_hits += 1
        if refilled:
            m.llc_hits_refilled_pages += 1
        res = sl.lookup(la)
        arrival = now + self.arrive
        pb_hit = extra = False
        if pbs is not None:
            pb_hit, extra = pbs.pb_lookup(True, res.position, la >> sl.page_line_shift, arrival)
        if pb_hit:
            m.pb_hits += 1
            value = pbs.on_pb_read_hit(la >> sl.page_line_shift, res.position, now)
            if self.config.core.audit_interval and value != sl.data[la]:
                self._violation(f"PB served stale data for line {la:#x}")
            ready = now + self.pb_rt
            source = "PB"
        else:
            m.llc_array_hits += 1
            value, start = sl.read_line(la, arrival)
            ready = start + self.after_start + (self.region_check if extra else 0)
            source = self.llc_source
        completion = self.bus.reserve(ready)
        dirty = la in sl.dirty
        sl.invalidate(la)
        m.llc_read_service_cycles += completion - now
        m.l2_miss_response_cycles += completion - now
        return value, dirty, completion, source

    def _evict_l2(self, la: int, data: int, dirty: bool, now: int) -> int:
        """Send an L2 victim to the LLC; return the write-queue accept cycle."""
        l1set = self.l1.sets[la & self.l1.mask]
        e1 = l1set.pop(la, None)
        if e1 is not None and e1[1]:
            data, dirty = e1[0], True
        sl = self.slice_for(la)
        evicted, accept = sl.install_victim(la, data, dirty, now)
        if evicted is not None and evicted.dirty:
            self.memory[evicted.la] = evicted.data
            self.m.mem_writes += 1
        return accept

    def _fill_l2(self, la: int, data: int, dirty: bool, now: int) -> int:
        l2set = self.l2.sets[la & self.l2.mask]
        accept = now
        if len(l2set) >= self.l2.ways:
            vla, (vdata, vdirty) = l2set.popitem(last=False)
            accept = self._evict_l2(vla, vdata, vdirty, now)
        l2set[la] = [data, dirty]
        return accept

    def _l2_miss(self, la: int, now: int, refilled: bool) -> tuple[int, int, str]:
        """L2 miss: fetch from LLC/memory and fill L2. Returns ``(data, completion, source)``."""
        value, dirty, completion, source = self._service(la, now, refilled)
        accept = self._fill_l2(la, value, dirty, now)
        if accept > completion:
            self.m.write_queue_stall_cycles += accept - completion
            completion = accept
        if self.config.l2.next_block_prefetch:
            self._prefetch(la + 1, now)
        return value, completion, source

    def _prefetch(self, la: int, now: int) -> None:
        if la in self.l2:
            return
        m = self.m
        m.l2_prefetches += 1
        m.llc_tag_lookups += 1
        sl = self.slice_for(la)
        if la in sl.where:
            value, _ = sl.read_line(la, now + self.arrive)
            dirty = la in sl.dirty
            sl.invalidate(la)
        else:
            value, dirty = self.memory.get(la, 0), False
            m.mem_reads += 1
        self._fill_l2(la, value, dirty, now)

    def service_read(self, paddr: int, issue: int, kind: str = "load", refilled: bool = False) -> MemRequest:
        """Run one L2-miss read through the LLC path and fill L2 (and L1 for loads)."""
        la = paddr >> self.line_shift
        if self.events:
            self.process_events(issue)
        value, completion, source = self._l2_miss(la, issue, refilled)
        if kind == "load":
            self._fill_l1(la, value, False)
        req = MemRequest(next(self._req_ids), kind, paddr, issue, completion, source, value)
        return req

    def _fill_l1(self, la: int, value: int, dirty: bool) -> list:
        l1set = self.l1.sets[la & self.l1.mask]
        if len(l1set) >= self.l1.ways:
            vla, (vdata, vdirty) = l1set.popitem(last=False)
            if vdirty:
                e2 = self.l2.sets[vla & self.l2.mask][vla]
                e2[0] = vdata
                e2[1] = True
        entry = [value, dirty]
        l1set[la] = entry
        return entry

    # -- page transfer requests ---------------------------------------------
    def deliver_ptr(self, ptr: PtrRequest, due: int) -> None:
        """Handle a PTR at the LLC controller once it arrives."""
        m = self.m
        m.ptr_delivered += 1
        la = ptr.base >> self.line_shift
        sl = self.slice_for(la)
        if self.config.core.fetch_to_l2:
            self._fetch_to_l2(sl, ptr, due)
            return
        pbs = sl.pbs
        if pbs is None:
            return
        m.pb_tag_checks += 1
        ppn = ptr.base >> 12
        pb_id = pbs.find_pb(ppn)
        if pb_id is not None:
            pbs.touch(pb_id, due)
            m.ptr_pb_resident += 1
            return
        m.llc_ptr_scans += 1
        population = sl.page_population(ppn)
        m.ptr_population_hist[population] += 1
        if not pbs.gate_promotion(population):
            m.ptr_gated_out += 1
            return
        victim = pbs.select_victim_pb(due)
        if victim is None:
            m.ptr_no_victim += 1
            return
        pbs.promote_from_llc(victim, sl, ppn, sl.region_of_address(ptr.trigger), due + self.tag_latency, due)

    def _fetch_to_l2(self, sl: LlcSlice, ptr: PtrRequest, due: int) -> None:
        """Alternative design: push the page's resident lines straight into L2."""
        m = self.m
        m.llc_ptr_scans += 1
        population, vmap = sl.lookup_ptr(ptr.base)
        m.ptr_population_hist[population] += 1
        if population < self.config.pb.threshold:
            m.ptr_gated_out += 1
            return
        snap = sl.read_row(ptr.base, vmap, due + self.tag_latency)
        busy_limit = 0.9 * self.mshr_limit
        for pos in sorted(snap.lines):
            la, _ = snap.lines[pos]
            outstanding = sum(1 for c in self.mshr if c > due)
            if outstanding >= busy_limit:
                m.fetch_to_l2_dropped += 1
                continue
            got = sl.invalidate(la)
            if got is None:
                continue
            value, dirty = got
            self.bus.reserve(snap.ready_cycle)
            self._fill_l2(la, value, dirty, due)
            m.fetch_to_l2_lines += 1

    # -- audits -------------------------------------------------------------
    def _violation(self, msg: str) -> None:
        self.m.audit_violations += 1
        self.audit_log.append(msg)
        if self.strict_audit:
            raise AuditError(msg)

    def audit(self) -> list[str]:
        """Exclusivity, L1 inclusion and PB coherence/residency checks."""
        self.m.audits_run += 1
        problems = []
        l2 = self.l2
        for la in l2.lines():
            if la in self.slice_for(la).where:
                problems.append(f"line {la:#x} valid in both L2 and LLC")
        for la in self.l1.lines():
            if la not in l2:
                problems.append(f"line {la:#x} in L1 but not L2")
        for sl in self.slices:
            if sl.pbs is not None:
                problems.extend(sl.pbs.audit(sl))
        for p in problems:
            self._violation(p)
        return problems

    # -- driver -------------------------------------------------------------
    def run(self, trace: Iterable[TraceRecord], observer: Optional[Callable[[int, TraceRecord, int], None]] = None) -> RunMetrics:
        """Drive the trace to completion plus drain and return the counters.

        ``observer(index, record, value)`` is called for every load with the
        value the hierarchy returned. Store ``i`` writes the value ``i + 1``.
        """
        gc_was_enabled = gc.isenabled()
        gc.disable()  # the hot loop allocates many short-lived containers and no cycles
        try:
            return self._run(trace, observer)
        finally:
            if gc_was_enabled:
                gc.enable()

    def _run(self, trace, observer):
        m = self.m
        cfg = self.config
        translate = self.translator.translate
        l1 = self.l1
        l1sets, l1mask, l1ways = l1.sets, l1.mask, l1.ways
        l2sets, l2mask = self.l2.sets, self.l2.mask
        l1_rt, l2_rt = self.l1_rt, self.l2_rt
        l1_tlb_rt = cfg.core.l1_tlb_rt
        mshr = self.mshr
        limit = self.mshr_limit
        events = self.events
        sends = self.sends_ptrs
        audit_every = cfg.core.audit_interval
        next_audit = audit_every if audit_every else -1
        heappush, heappop = heapq.heappush, heapq.heappop
        src_counts, src_cycles = m.source_counts, m.source_cycles
        hist = m.refill_residency_hist
        line_shift = self.line_shift
        now = self.now
        last = self.last_completion
        instructions = 0
        loads = stores = 0
        l1_hits = l2_hits = 0
        idx = -1
        for idx, rec in enumerate(trace):
            gap, op, vaddr = rec
            instructions += gap + 1
            now += gap
            if events and events[0][0] <= now:
                self.process_events(now)
            is_write = op == "W"
            tr = translate(vaddr, is_write)
            if tr.l1_tlb_hit:
                m.l1_tlb_hits += 1
            else:
                m.l1_tlb_misses += 1
                if tr.l2_tlb_hit:
                    m.l2_tlb_hits += 1
                if tr.walk_performed:
                    m.page_walks += 1
                now += tr.latency_cycles - l1_tlb_rt
                if tr.ptr_request is not None:
                    m.ptr_eligible += 1
                if tr.refill:
                    m.tlb_refills += 1
                    pa4k = tr.paddr >> 12
                    hist[self.slice_for(pa4k << (12 - line_shift)).page_population(pa4k)] += 1
                if events and events[0][0] <= now:
                    self.process_events(now)
            if sends and tr.ptr_request is not None:
                self.schedule_ptr(tr.ptr_request, now)
            la = tr.paddr >> line_shift
            l1set = l1sets[la & l1mask]
            entry = l1set.get(la)
            if entry is not None:
                l1set.move_to_end(la)
                l1_hits += 1
                src_counts["L1"] += 1
                src_cycles["L1"] += l1_rt
                if is_write:
                    stores += 1
                    entry[0] = idx + 1
                    entry[1] = True
                else:
                    loads += 1
                    done = now + l1_rt
                    if done > last:
                        last = done
                    if observer is not None:
                        observer(idx, rec, entry[0])
            else:
                if not is_write:
                    while mshr and mshr[0] <= now:
                        heappop(mshr)
                    if len(mshr) >= limit:
                        now = heappop(mshr)
                        while mshr and mshr[0] <= now:
                            heappop(mshr)
                        if events and events[0][0] <= now:
                            self.process_events(now)
                l2set = l2sets[la & l2mask]
                e2 = l2set.get(la)
                if e2 is not None:
                    l2set.move_to_end(la)
                    l2_hits += 1
                    value = e2[0]
                    completion = now + l2_rt
                    source = "L2"
                else:
                    value, completion, source = self._l2_miss(la, now, tr.pte.refilled)
                src_counts[source] += 1
                src_cycles[source] += completion - now
                # inline L1 fill
                if len(l1set) >= l1ways:
                    vla, (vdata, vdirty) = l1set.popitem(last=False)
                    if vdirty:
                        e2v = l2sets[vla & l2mask][vla]
                        e2v[0] = vdata
                        e2v[1] = True
                if is_write:
                    stores += 1
                    l1set[la] = [idx + 1, True]
                else:
                    loads += 1
                    l1set[la] = [value, False]
                    heappush(mshr, completion)
                    if completion > last:
                        last = completion
                    if observer is not None:
                        observer(idx, rec, value)
            now += 1
            if idx == next_audit:
                self.audit()
                next_audit += audit_every
        self.now = now
        self.last_completion = last
        if events:
            self.process_events(1 << 62)
        m.instructions += instructions
        m.loads += loads
        m.stores += stores
        m.l1_hits += l1_hits
        m.l1_misses += loads + stores - l1_hits
        m.l2_hits += l2_hits
        m.cycles = max(now, last)
        m.llc_array_busy_cycles = sum(sl.array.busy_cycles for sl in self.slices)
        if audit_every:
            self.audit()
        return m


def simulate(config: SimConfig, trace: Iterable[TraceRecord], observer=None, strict_audit: bool = False) -> RunMetrics:
    return Hierarchy(config, strict_audit=strict_audit).run(trace, observer)
