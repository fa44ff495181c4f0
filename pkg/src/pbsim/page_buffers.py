"""SRAM page buffers (PBs) in front of the NVM data array, plus their tags.

A PB holds up to ``lines_per_region`` lines of a single 4KB page. A physical
row is split into ``regions_per_page`` regions; the line at row position ``p``
may only live in PB slot ``p % lines_per_region`` and the slot's region bits
record which region it came from. The LLC tags stay authoritative: a PB slot
is read only when the LLC tags hit and the region bits match.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

from .config import SimConfig

if TYPE_CHECKING:
    from .metrics import RunMetrics
    from .nvm_llc import LlcSlice, RowSnapshot


def _replaces(held: int, incoming: int, trigger_region: int) -> bool:
    """Slot conflict: the trigger's region wins, otherwise the lower region."""
    return held != trigger_region and (incoming == trigger_region or incoming < held)


class PageBuffer:
    __slots__ = (
        "pb_id", "ppn", "loaded", "occupant", "data", "region", "live",
        "promoted", "used", "residency", "counter", "touched", "ready",
    )

    def __init__(self, pb_id: int, slots: int):
        self.pb_id = pb_id
        self.ppn: Optional[int] = None
        self.loaded = False
        self.ready = 0
        self._clear(slots)

    def _clear(self, slots: int) -> None:
        self.occupant: list[Optional[int]] = [None] * slots
        self.data = [0] * slots
        self.region = [0] * slots
        # occupant is currently valid in the LLC at the position the region bits name
        self.live = [False] * slots
        self.promoted = [False] * slots
        self.used = [False] * slots
        self.residency = 0
        self.counter = 0
        self.touched = 0


@dataclass(frozen=True)
class PbTagEntry:
    pb_id: int
    ppn: int
    replacement_counter: int
    residency_counter: int
    region_bits: tuple[int, ...]


class PageBufferSet:
    def __init__(self, config: SimConfig, metrics: Optional["RunMetrics"] = None):
        pb = config.pb
        line = config.line_size
        self.count = pb.count
        self.slots = pb.size // line
        self._slot_shift = self.slots.bit_length() - 1
        self.regions = config.mem.page_size // pb.size
        self.threshold = pb.threshold
        self.activation_period = pb.activation_period
        self.counter_max = (1 << pb.replacement_bits) - 1
        self.metrics = metrics
        self.buffers = [PageBuffer(i, self.slots) for i in range(self.count)]
        self.by_ppn: dict[int, int] = {}
        self._ppn_shift = (config.mem.page_size // line).bit_length() - 1
        self.audit_violations: list[str] = []

    # -- counters -----------------------------------------------------------
    def _recompute(self, buf: PageBuffer, now: int) -> None:
        buf.counter = min(buf.residency * self.activation_period, self.counter_max)
        buf.touched = now

    def effective_counter(self, pb_id: int, now: int) -> int:
        """Replacement counter after one decrement per elapsed cycle (applied lazily)."""
        buf = self.buffers[pb_id]
        return max(0, buf.counter - max(0, now - buf.touched))

    def decay(self, now: int) -> list[int]:
        return [self.effective_counter(i, now) for i in range(self.count)]

    # -- tag lookups --------------------------------------------------------
    def find_pb(self, ppn: int) -> Optional[int]:
        return self.by_ppn.get(ppn)

    def gate_promotion(self, population: int) -> bool:
        return population >= self.threshold

    def select_victim_pb(self, now: int) -> Optional[int]:
        """Never-loaded PBs first, then the lowest-id PB whose counter reached 0."""
        for buf in self.buffers:
            if not buf.loaded:
                return buf.pb_id
        for buf in self.buffers:
            if buf.counter - (now - buf.touched) <= 0:
                return buf.pb_id
        return None

    def touch(self, pb_id: int, now: int) -> None:
        self._recompute(self.buffers[pb_id], now)

    # -- promotion ----------------------------------------------------------
    def promote(self, pb_id: int, snapshot: "RowSnapshot", trigger_region: int, now: int) -> PbTagEntry:
        """Load a PB from a row snapshot.

        On a slot conflict the line from the trigger's region wins; if neither
        line is from the trigger's region the lower region wins.
        """
        buf = self._begin(pb_id, snapshot.ppn, snapshot.ready_cycle)
        nslots = self.slots
        occupant, data, region = buf.occupant, buf.data, buf.region
        for pos, (la, value) in snapshot.lines.items():
            r, slot = divmod(pos, nslots)
            if occupant[slot] is None or _replaces(region[slot], r, trigger_region):
                occupant[slot] = la
                data[slot] = value
                region[slot] = r
        self._finish(buf, now)
        return self.tag_entry(pb_id, now)

    def promote_from_llc(self, pb_id: int, llc: "LlcSlice", ppn: int, trigger_region: int, earliest: int, now: int) -> int:
        """Read the page's row out of ``llc`` straight into a PB; return the ready cycle.

        Same result as ``promote(pb_id, llc.read_row(...), ...)`` without the
        intermediate snapshot.
        """
        lines = llc.page_lines.get(ppn, {})
        _, ready = llc.reserve_row_read(earliest, len(lines))
        buf = self._begin(pb_id, ppn, ready)
        llc_data = llc.data
        mask, shift = self.slots - 1, self._slot_shift
        occupant, data, region = buf.occupant, buf.data, buf.region
        for la, pos in lines.items():
            slot = pos & mask
            r = pos >> shift
            if occupant[slot] is None or _replaces(region[slot], r, trigger_region):
                occupant[slot] = la
                data[slot] = llc_data[la]
                region[slot] = r
        self._finish(buf, now)
        return ready

    def _begin(self, pb_id: int, ppn: int, ready: int) -> PageBuffer:
        buf = self.buffers[pb_id]
        if buf.ppn is not None:
            self.by_ppn.pop(buf.ppn, None)
            self._retire(buf)
        buf._clear(self.slots)
        buf.ppn = ppn
        buf.loaded = True
        buf.ready = ready
        self.by_ppn[ppn] = pb_id
        return buf

    def _finish(self, buf: PageBuffer, now: int) -> None:
        live = [o is not None for o in buf.occupant]
        buf.live = live
        buf.promoted = live[:]
        placed = sum(live)
        buf.residency = placed
        self._recompute(buf, now)
        m = self.metrics
        if m is not None:
            m.pb_promotions += 1
            m.promoted_lines += placed
            m.pb_writes += placed

    def _retire(self, buf: PageBuffer) -> None:
        if self.metrics is not None:
            self.metrics.pb_replacements += 1

    # -- request path -------------------------------------------------------
    def pb_lookup(self, llc_hit: bool, position: int, ppn: int, arrival: Optional[int] = None) -> tuple[bool, bool]:
        """``(pb_hit, extra_cycle)`` for a CLR whose LLC tag lookup gave ``position``.

        The PPN compare runs alongside the LLC tags; the region-bit check needs
        the LLC position and adds one cycle when both the PPN and the tags hit.
        A PB still being filled (``arrival`` before its ready cycle) does not hit.
        """
        pb_id = self.by_ppn.get(ppn)
        if pb_id is None or not llc_hit:
            return False, False
        buf = self.buffers[pb_id]
        slot = position % self.slots
        hit = buf.region[slot] == position // self.slots
        if hit and arrival is not None and arrival < buf.ready:
            hit = False
        return hit, True

    def on_pb_read_hit(self, ppn: int, position: int, now: int) -> int:
        """Serve a line from its PB slot; the line leaves for the private caches."""
        pb_id = self.by_ppn[ppn]
        buf = self.buffers[pb_id]
        slot = position % self.slots
        value = buf.data[slot]
        if buf.live[slot]:
            buf.live[slot] = False
            buf.residency -= 1
        if buf.promoted[slot] and not buf.used[slot]:
            buf.used[slot] = True
            if self.metrics is not None:
                self.metrics.promoted_lines_accessed += 1
        self._recompute(buf, now)
        if self.metrics is not None:
            self.metrics.pb_reads += 1
        return value

    def on_llc_write(self, la: int, position: int, value: int, now: int) -> None:
        pb_id = self.by_ppn.get(la >> self._ppn_shift)
        if pb_id is None:
            return
        buf = self.buffers[pb_id]
        slot = position % self.slots
        r = position // self.slots
        if buf.occupant[slot] == la and buf.live[slot] and buf.region[slot] == r:
            buf.data[slot] = value
        elif not buf.live[slot]:
            buf.occupant[slot] = la
            buf.data[slot] = value
            buf.region[slot] = r
            buf.live[slot] = True
            buf.promoted[slot] = False
            buf.used[slot] = False
            buf.residency += 1
        else:
            return
        self._recompute(buf, now)
        if self.metrics is not None:
            self.metrics.pb_writes += 1

    def on_llc_invalidate(self, la: int, position: int) -> None:
        pb_id = self.by_ppn.get(la >> self._ppn_shift)
        if pb_id is None:
            return
        buf = self.buffers[pb_id]
        slot = position % self.slots
        if buf.occupant[slot] == la and buf.live[slot] and buf.region[slot] == position // self.slots:
            buf.live[slot] = False
            if buf.residency > 0:
                buf.residency -= 1

    # -- inspection ---------------------------------------------------------
    def tag_entry(self, pb_id: int, now: Optional[int] = None) -> PbTagEntry:
        buf = self.buffers[pb_id]
        counter = buf.counter if now is None else self.effective_counter(pb_id, now)
        return PbTagEntry(pb_id, buf.ppn if buf.ppn is not None else -1, counter, buf.residency, tuple(buf.region))

    def slot_contents(self, pb_id: int) -> dict[int, tuple[int, int, int]]:
        """``slot -> (line address, data, region)`` for occupied slots."""
        buf = self.buffers[pb_id]
        return {
            s: (buf.occupant[s], buf.data[s], buf.region[s])
            for s in range(self.slots)
            if buf.occupant[s] is not None
        }

    def dump(self, now: Optional[int] = None) -> str:
        lines = []
        for buf in self.buffers:
            if not buf.loaded:
                continue
            e = self.tag_entry(buf.pb_id, now)
            bits = "".join(str(b) for b in e.region_bits)
            lines.append(f"pb{e.pb_id:02d} ppn={e.ppn:#011x} repl={e.replacement_counter} res={e.residency_counter} region={bits}")
        return "\n".join(lines) + ("\n" if lines else "")

    def audit(self, llc: "LlcSlice") -> list[str]:
        """Check residency counters and PB/NVM data agreement against the LLC tags."""
        problems = []
        nslots = self.slots
        for buf in self.buffers:
            if buf.ppn is None:
                continue
            valid = 0
            for s in range(nslots):
                la = buf.occupant[s]
                if la is None:
                    continue
                pos = llc.position_of(la)
                if pos is None or pos != buf.region[s] * nslots + s:
                    continue
                valid += 1
                if buf.data[s] != llc.data[la]:
                    problems.append(f"pb{buf.pb_id} slot {s}: data {buf.data[s]} != nvm {llc.data[la]}")
            if valid != buf.residency:
                problems.append(f"pb{buf.pb_id}: residency {buf.residency} != recomputed {valid}")
        return problems
