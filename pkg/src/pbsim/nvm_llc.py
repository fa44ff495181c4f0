"""One LLC slice acting as a victim cache of L2.

Tags are SRAM. The data array is either NVM (non-pipelined: each access holds
the array for a fixed number of cycles) or SRAM (pipelined, one access per
cycle). Lines are tracked by line address ``la = pa >> 6``; the tag fields of
the layout are a pure function of ``la``, so a dict keyed by ``la`` is an exact
stand-in for the (row, set, tag) match.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple, Optional

from .config import SimConfig
from .geometry import LayoutGeometry, derive_geometry

if TYPE_CHECKING:
    from .metrics import RunMetrics
    from .page_buffers import PageBufferSet


class DataArray:
    """Occupancy model of a data array with a bounded, read-prioritized write queue.

    Reads reserve the array at the first free cycle. Buffered writes drain only
    in idle gaps before the next read, unless the queue is full, in which case
    the oldest write is forced onto the array.
    """

    def __init__(self, read_occupancy: int, write_occupancy: int, queue_depth: int):
        self.read_occupancy = read_occupancy
        self.write_occupancy = write_occupancy
        self.queue_depth = queue_depth
        self.busy_until = 0
        self.busy_cycles = 0
        self.pending: deque[int] = deque()
        self.intervals: Optional[list[tuple[int, int]]] = None  # set to [] to record

    def _occupy(self, start: int, length: int) -> int:
        end = start + length
        self.busy_until = end
        self.busy_cycles += length
        if self.intervals is not None:
            self.intervals.append((start, end))
        return end

    def drain(self, now: int) -> None:
        """Retire queued writes that fit entirely before ``now``."""
        occ = self.write_occupancy
        pending = self.pending
        while pending:
            start = max(self.busy_until, pending[0])
            if start + occ > now:
                break
            pending.popleft()
            self._occupy(start, occ)

    def read(self, earliest: int, occupancy: Optional[int] = None) -> int:
        """Reserve the array for a read; return its start cycle."""
        if self.pending:
            self.drain(earliest)
        start = earliest if earliest > self.busy_until else self.busy_until
        self._occupy(start, self.read_occupancy if occupancy is None else occupancy)
        return start

    def enqueue_write(self, now: int) -> int:
        """Buffer a write; return the cycle at which the queue accepted it."""
        if self.pending:
            self.drain(now)
        accept = now
        if len(self.pending) >= self.queue_depth:
            oldest = self.pending.popleft()
            start = max(self.busy_until, oldest, now)
            accept = self._occupy(start, self.write_occupancy)
        self.pending.append(accept)
        return accept

    def flush(self) -> int:
        """Drain every queued write; return the cycle the array goes idle."""
        while self.pending:
            start = max(self.busy_until, self.pending.popleft())
            self._occupy(start, self.write_occupancy)
        return self.busy_until


class LookupResult(NamedTuple):
    hit: bool
    way: int
    position: int
    region: int


@dataclass
class RowSnapshot:
    row: int
    ppn: int
    lines: dict[int, tuple[int, int]] = field(default_factory=dict)  # position -> (la, data)
    start_cycle: int = 0
    ready_cycle: int = 0

    @property
    def population(self) -> int:
        return len(self.lines)


class Evicted(NamedTuple):
    la: int
    data: int
    dirty: bool


class LlcSlice:
    def __init__(self, config: SimConfig, metrics: Optional["RunMetrics"] = None, pbs: Optional["PageBufferSet"] = None):
        llc = config.llc
        self.config = config
        self.metrics = metrics
        self.pbs = pbs
        self.ways = llc.ways
        self.line_shift = config.line_size.bit_length() - 1
        self.page_row = llc.layout == "page_row"
        self.nvm = llc.technology == "nvm"
        lines = llc.size // config.line_size
        self.nsets = lines // self.ways
        if self.page_row:
            self.geom: Optional[LayoutGeometry] = derive_geometry(config)
            g = self.geom
            self.lines_per_page = g.lines_per_page
            self.lines_per_region = g.lines_per_region
            self.set_bits = g.sets_per_row.bit_length() - 1
            self.page_line_shift = (config.mem.page_size.bit_length() - 1) - self.line_shift
            self.row_mask = g.rows_per_slice - 1
            self.rows = g.rows_per_slice
        else:
            self.geom = None
            self.lines_per_page = config.mem.page_size // config.line_size
            self.lines_per_region = self.lines_per_page
            self.set_bits = 0
            self.page_line_shift = 0
            self.row_mask = 0
            self.rows = 0
        self.set_mask = self.nsets - 1
        self._spr_mask = (1 << self.set_bits) - 1
        if self.nvm:
            self.array = DataArray(llc.nvm_read_occupancy, llc.nvm_write_occupancy, llc.write_queue_depth)
        else:
            self.array = DataArray(1, 1, llc.write_queue_depth)
        # gset -> [slots (la or None per way), lru order of ways, LRU first]
        self._sets: dict[int, list] = {}
        self.where: dict[int, int] = {}  # la -> way
        self.data: dict[int, int] = {}
        self.dirty: set[int] = set()
        # 4KB page number -> {resident line address: position in its row}
        self.page_lines: dict[int, dict[int, int]] = {}
        self._page_shift = (config.mem.page_size // config.line_size).bit_length() - 1

    # -- indexing ---------------------------------------------------------
    def gset(self, la: int) -> int:
        if self.page_row:
            row = (la >> self.page_line_shift) & self.row_mask
            return (row << self.set_bits) | (la & self._spr_mask)
        return la & self.set_mask

    def position(self, la: int, way: int) -> int:
        """Slot index of a line within its physical row (0 for conventional layout)."""
        return (la & self._spr_mask) * self.ways + way

    def region_of(self, position: int) -> int:
        return position // self.lines_per_region

    def region_of_address(self, pa: int) -> int:
        """Row region an address maps to, independent of way placement when ways <= slots per region."""
        la = pa >> self.line_shift
        if self.ways <= self.lines_per_region:
            return ((la & self._spr_mask) * self.ways) // self.lines_per_region
        page_off = pa & (self.config.mem.page_size - 1)
        return page_off // self.config.pb.size

    def _set(self, gs: int) -> list:
        s = self._sets.get(gs)
        if s is None:
            s = [[None] * self.ways, list(range(self.ways))]
            self._sets[gs] = s
        return s

    # -- tag operations ---------------------------------------------------
    def contains(self, la: int) -> bool:
        return la in self.where

    def position_of(self, la: int) -> Optional[int]:
        way = self.where.get(la)
        return None if way is None else self.position(la, way)

    def lookup(self, la: int, touch: bool = True) -> LookupResult:
        way = self.where.get(la)
        if way is None:
            return LookupResult(False, -1, -1, -1)
        if touch:
            lru = self._sets[self.gset(la)][1]
            lru.remove(way)
            lru.append(way)
        pos = self.position(la, way)
        return LookupResult(True, way, pos, pos // self.lines_per_region)

    def lookup_clr(self, pa: int) -> LookupResult:
        return self.lookup(pa >> self.line_shift)

    def lookup_ptr(self, pa: int) -> tuple[int, int]:
        """Population and position bitmap of the page's lines resident in its row.

        Equivalent to matching Tag-High across every position of the row; no
        data-array or LRU side effects.
        """
        if not self.page_row:
            raise RuntimeError("page transfer requests need the page_row layout")
        lines = self.page_lines.get(pa >> (self.page_line_shift + self.line_shift))
        if not lines:
            return 0, 0
        vmap = 0
        for pos in lines.values():
            vmap |= 1 << pos
        return len(lines), vmap

    def scan_row(self, pa: int) -> tuple[int, int]:
        """Reference version of :meth:`lookup_ptr` that walks the row's tag slots."""
        ppn = pa >> (self.page_line_shift + self.line_shift)
        first = (ppn & self.row_mask) << self.set_bits
        ways = self.ways
        count = 0
        vmap = 0
        for s in range(1 << self.set_bits):
            entry = self._sets.get(first | s)
            if entry is None:
                continue
            for way, la in enumerate(entry[0]):
                if la is not None and la >> self.page_line_shift == ppn:
                    count += 1
                    vmap |= 1 << (s * ways + way)
        return count, vmap

    def page_population(self, ppn4k: int) -> int:
        """Number of resident lines of a 4KB physical page, for any layout."""
        lines = self.page_lines.get(ppn4k)
        return len(lines) if lines else 0

    # -- data operations --------------------------------------------------
    def read_row(self, pa: int, valid_map: Optional[int], earliest: int) -> RowSnapshot:
        """Copy every line flagged in ``valid_map`` with one array read.

        ``valid_map=None`` reads every resident line of the page, the same set
        :meth:`lookup_ptr` would flag.
        """
        ppn = pa >> (self.page_line_shift + self.line_shift)
        row = ppn & self.row_mask
        snap = RowSnapshot(row=row, ppn=ppn)
        data = self.data
        lines = snap.lines
        if valid_map is None:
            for la, pos in self.page_lines.get(ppn, {}).items():
                lines[pos] = (la, data[la])
        else:
            first = row << self.set_bits
            ways = self.ways
            m = valid_map
            while m:
                low = m & -m
                pos = low.bit_length() - 1
                la = self._sets[first | (pos // ways)][0][pos % ways]
                lines[pos] = (la, data[la])
                m ^= low
        snap.start_cycle, snap.ready_cycle = self.reserve_row_read(earliest, len(lines))
        return snap

    def reserve_row_read(self, earliest: int, nlines: int) -> tuple[int, int]:
        """Occupy the array for one row read: ``(start, data ready)`` cycles."""
        start = self.array.read(earliest)
        if self.metrics is not None:
            self.metrics.llc_row_reads += 1
            self.metrics.llc_row_lines_read += nlines
        return start, start + self._data_latency()

    def _data_latency(self) -> int:
        llc = self.config.llc
        return llc.nvm_data_latency if self.nvm else llc.sram_data_latency

    def read_line(self, la: int, earliest: int) -> tuple[int, int]:
        """Read a resident line: ``(data, array start cycle)``."""
        start = self.array.read(earliest)
        if self.metrics is not None:
            self.metrics.llc_data_reads += 1
        return self.data[la], start

    def install_victim(self, la: int, data: int, dirty: bool, now: int = 0) -> tuple[Optional[Evicted], int]:
        """Place an L2 victim; return ``(evicted line or None, queue accept cycle)``."""
        if la in self.where:
            raise RuntimeError(f"line {la:#x} already valid in the LLC")
        if self.page_row:
            gs = (((la >> self.page_line_shift) & self.row_mask) << self.set_bits) | (la & self._spr_mask)
        else:
            gs = la & self.set_mask
        entry = self._sets.get(gs)
        if entry is None:
            entry = self._set(gs)
        slots, lru = entry
        evicted = None
        way = -1
        for w in lru:
            if slots[w] is None:
                way = w
                break
        if way < 0:
            way = lru[0]
            old = slots[way]
            evicted = Evicted(old, self.data[old], old in self.dirty)
            self._drop(old, way, slots)
        lru.remove(way)
        lru.append(way)
        slots[way] = la
        self.where[la] = way
        self.data[la] = data
        ppn = la >> self._page_shift
        pos = (la & self._spr_mask) * self.ways + way
        page = self.page_lines.get(ppn)
        if page is None:
            self.page_lines[ppn] = {la: pos}
        else:
            page[la] = pos
        if dirty:
            self.dirty.add(la)
        accept = self.array.enqueue_write(now)
        m = self.metrics
        if m is not None:
            m.llc_installs += 1
            m.llc_data_writes += 1
            if evicted is not None:
                m.llc_evictions += 1
                if evicted.dirty:
                    m.llc_dirty_evictions += 1
        pbs = self.pbs
        if pbs is not None and ppn in pbs.by_ppn:
            pbs.on_llc_write(la, pos, data, now)
        return evicted, accept

    def _drop(self, la: int, way: int, slots: Optional[list] = None) -> None:
        """Clear a line's valid bit and tell the page buffers."""
        if slots is None:
            slots = self._sets[self.gset(la)][0]
        slots[way] = None
        del self.where[la]
        self.data.pop(la, None)
        ppn = la >> self._page_shift
        page = self.page_lines[ppn]
        pos = page.pop(la)
        if not page:
            del self.page_lines[ppn]
        self.dirty.discard(la)
        pbs = self.pbs
        if pbs is not None and ppn in pbs.by_ppn:
            pbs.on_llc_invalidate(la, pos)

    def invalidate(self, la: int) -> Optional[tuple[int, bool]]:
        """Reset a line's valid bit (L2 promotion or probe); no-op if absent."""
        way = self.where.get(la)
        if way is None:
            return None
        data = self.data[la]
        dirty = la in self.dirty
        self._drop(la, way)
        return data, dirty

    def write_line(self, la: int, data: int, now: int = 0) -> int:
        """Overwrite a resident line; the writer is acknowledged once the queue accepts it."""
        way = self.where.get(la)
        if way is None:
            raise KeyError(f"line {la:#x} not resident")
        self.data[la] = data
        self.dirty.add(la)
        accept = self.array.enqueue_write(now)
        if self.metrics is not None:
            self.metrics.llc_data_writes += 1
        if self.pbs is not None:
            self.pbs.on_llc_write(la, self.position(la, way), data, now)
        return accept

    # -- inspection -------------------------------------------------------
    def resident_lines(self):
        return self.where.keys()

    def row_entries(self, row: int) -> list[Optional[int]]:
        """Line address per position of a physical row (page_row layout)."""
        out: list[Optional[int]] = []
        for s in range(1 << self.set_bits):
            entry = self._sets.get((row << self.set_bits) | s)
            out.extend(entry[0] if entry else [None] * self.ways)
        return out

    def dump(self) -> str:
        """Text dump of every non-empty set: ``set way la dirty``."""
        out = []
        for gs in sorted(self._sets):
            slots = self._sets[gs][0]
            for way, la in enumerate(slots):
                if la is not None:
                    out.append(f"{gs:6d} {way:2d} {la:#014x} {'D' if la in self.dirty else '-'}")
        return "\n".join(out) + ("\n" if out else "")
