"""Data TLBs, a first-touch page table, and the page-transfer trigger."""

from __future__ import annotations

import random
from collections import OrderedDict
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .config import SimConfig

BASE_PAGE = 4096
BASE_PAGE_SHIFT = 12


class OutOfMemoryError(RuntimeError):
    pass


@dataclass(slots=True)
class PageTableEntry:
    vpn: int
    ppn: int
    page_size: int
    accessed: bool = False
    dirty: bool = False
    # sticky: the translation was evicted from the L1 TLB and later refilled
    refilled: bool = False


@dataclass(slots=True)
class TlbEntry:
    vpn: int
    ppn: int
    page_size: int
    pte: PageTableEntry
    last_chunk: Optional[int] = None

    @property
    def chunk_bits(self) -> int:
        return (self.page_size // BASE_PAGE).bit_length() - 1


class PtrRequest(NamedTuple):
    """Page transfer request: 4KB-aligned physical base plus the address that caused it."""

    base: int
    trigger: int


@dataclass(slots=True)
class TranslationResult:
    paddr: int
    l1_tlb_hit: bool
    l2_tlb_hit: bool
    walk_performed: bool
    latency_cycles: int
    ptr_request: Optional[PtrRequest]
    pte: PageTableEntry
    # L1 TLB miss for a page that had been in the L1 TLB before
    refill: bool = False


def should_send_ptr(l2_hit: bool, pte: PageTableEntry) -> bool:
    """A page counts as previously referenced if the L2 TLB holds it or A/D is set."""
    return l2_hit or pte.accessed or pte.dirty


def huge_page_ptr(vaddr: int, entry: TlbEntry) -> Optional[PtrRequest]:
    """Emit a PTR when an access moves to a different 4KB chunk of a huge page."""
    offset = vaddr & (entry.page_size - 1)
    chunk = offset >> BASE_PAGE_SHIFT
    if chunk == entry.last_chunk:
        return None
    entry.last_chunk = chunk
    base = entry.ppn * entry.page_size + (chunk << BASE_PAGE_SHIFT)
    return PtrRequest(base, base | (offset & (BASE_PAGE - 1)))


class FrameAllocator:
    """Hands out physical frames in a seeded pseudo-random order, without reuse."""

    def __init__(self, mem_size: int, frame_size: int, seed: int):
        self.frames = mem_size // frame_size
        self._rng = random.Random(seed)
        self._used: set[int] = set()
        self._free: Optional[list[int]] = None

    def allocate(self) -> int:
        if len(self._used) >= self.frames:
            raise OutOfMemoryError(f"all {self.frames} physical frames are allocated")
        if self._free is None and len(self._used) * 2 < self.frames:
            while True:
                frame = self._rng.randrange(self.frames)
                if frame not in self._used:
                    self._used.add(frame)
                    return frame
        if self._free is None:
            # dense regime: draw from an explicit free list
            self._free = [f for f in range(self.frames) if f not in self._used]
        frame = self._free.pop(self._rng.randrange(len(self._free)))
        self._used.add(frame)
        return frame


class Tlb:
    """Set-associative LRU TLB; ``entries // ways`` sets (remainder unused)."""

    def __init__(self, entries: int, ways: int):
        self.ways = ways
        self.nsets = max(1, entries // ways)
        self.sets = [OrderedDict() for _ in range(self.nsets)]

    def lookup(self, vpn: int):
        s = self.sets[vpn % self.nsets]
        entry = s.get(vpn)
        if entry is not None:
            s.move_to_end(vpn)
        return entry

    def insert(self, vpn: int, entry):
        """Insert as MRU; return the evicted ``(vpn, entry)`` or None."""
        s = self.sets[vpn % self.nsets]
        victim = None
        if vpn not in s and len(s) >= self.ways:
            victim = s.popitem(last=False)
        s[vpn] = entry
        return victim

    def remove(self, vpn: int) -> None:
        self.sets[vpn % self.nsets].pop(vpn, None)

    def __contains__(self, vpn: int) -> bool:
        return vpn in self.sets[vpn % self.nsets]

    def keys(self):
        for s in self.sets:
            yield from s


class Translator:
    """L1/L2 data TLBs (L2 inclusive of L1) over a first-touch page table.

    All pages have one size per run: 4KB, or the configured huge page size.
    """

    def __init__(self, config: SimConfig):
        core = config.core
        self.page_size = config.page_size
        self.page_shift = self.page_size.bit_length() - 1
        self.huge = self.page_size > BASE_PAGE
        self.l1 = Tlb(core.l1_tlb_entries, core.l1_tlb_ways)
        self.l2 = Tlb(core.l2_tlb_entries, core.l2_tlb_ways)
        self.l1_rt = core.l1_tlb_rt
        self.l2_rt = core.l2_tlb_rt
        self.walk_latency = config.mem.rt
        self.page_table: dict[int, PageTableEntry] = {}
        self.allocator = FrameAllocator(config.mem.size, self.page_size, core.seed)
        self._ever_in_l1: set[int] = set()
        self.walks = 0

    def allocate_page(self, vpn: int) -> int:
        if vpn in self.page_table:
            raise ValueError(f"vpn {vpn:#x} already mapped")
        ppn = self.allocator.allocate()
        self.page_table[vpn] = PageTableEntry(vpn, ppn, self.page_size)
        return ppn

    def _fill_l1(self, vpn: int, pte: PageTableEntry) -> TlbEntry:
        entry = TlbEntry(vpn, pte.ppn, pte.page_size, pte)
        self.l1.insert(vpn, entry)
        self._ever_in_l1.add(vpn)
        return entry

    def translate(self, vaddr: int, is_write: bool) -> TranslationResult:
        vpn = vaddr >> self.page_shift
        offset = vaddr & (self.page_size - 1)
        entry = self.l1.lookup(vpn)
        if entry is not None:
            pte = entry.pte
            pte.accessed = True
            if is_write:
                pte.dirty = True
            paddr = (entry.ppn << self.page_shift) | offset
            ptr = huge_page_ptr(vaddr, entry) if self.huge else None
            return TranslationResult(paddr, True, False, False, self.l1_rt, ptr, pte)

        pte = self.l2.lookup(vpn)
        l2_hit = pte is not None
        walked = False
        latency = self.l2_rt
        if not l2_hit:
            walked = True
            self.walks += 1
            latency += self.walk_latency
            pte = self.page_table.get(vpn)
            if pte is None:
                self.allocate_page(vpn)
                pte = self.page_table[vpn]
            victim = self.l2.insert(vpn, pte)
            if victim is not None:
                self.l1.remove(victim[0])
        refill = vpn in self._ever_in_l1
        if refill:
            pte.refilled = True
        eligible = should_send_ptr(l2_hit, pte)
        pte.accessed = True
        if is_write:
            pte.dirty = True
        entry = self._fill_l1(vpn, pte)
        paddr = (pte.ppn << self.page_shift) | offset
        ptr = None
        if self.huge:
            chunk = offset >> BASE_PAGE_SHIFT
            if eligible:
                ptr = huge_page_ptr(vaddr, entry)
            else:
                entry.last_chunk = chunk
        elif eligible:
            ptr = PtrRequest(paddr & ~(BASE_PAGE - 1), paddr)
        return TranslationResult(paddr, False, l2_hit, walked, latency, ptr, pte, refill)
