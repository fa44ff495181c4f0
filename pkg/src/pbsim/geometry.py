"""Address arithmetic for the page-row LLC layout and for conventional indexing.

In the page-row layout every line of a physical page lands in one physical
row of the LLC slice. The physical address is split, high to low, into::

    | Tag-High | Row Index | Tag-Low | Set Index | Offset |
      PPN bits   PPN bits    page-offset bits

A line request (CLR) selects ``(row, set)`` and matches Tag-High and Tag-Low.
A page request (PTR) selects ``row`` and matches Tag-High only, over every
line position of the row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .config import PHYS_ADDR_BITS, ConfigError, SimConfig

BitRange = tuple[int, int]  # (hi, lo), inclusive


class GeometryError(ConfigError):
    pass


def _log2(n: int, what: str) -> int:
    if n <= 0 or n & (n - 1):
        raise GeometryError(f"{what} must be a power of two, got {n}")
    return n.bit_length() - 1


def _width(r: BitRange) -> int:
    return r[0] - r[1] + 1


def _mask(r: BitRange) -> int:
    return (1 << _width(r)) - 1


@dataclass(frozen=True)
class LayoutGeometry:
    rows_per_slice: int
    sets_per_row: int
    ways: int
    line_size: int
    page_size: int
    pb_size: int
    offset: BitRange
    set_index: BitRange
    tag_low: BitRange
    row_index: BitRange
    tag_high: BitRange
    slices: int = 1

    @property
    def lines_per_page(self) -> int:
        return self.page_size // self.line_size

    @property
    def regions_per_page(self) -> int:
        return self.page_size // self.pb_size

    @property
    def lines_per_region(self) -> int:
        return self.pb_size // self.line_size

    @property
    def tag_high_width(self) -> int:
        return _width(self.tag_high)

    @property
    def tag_low_width(self) -> int:
        return _width(self.tag_low)

    def fields(self) -> dict[str, BitRange]:
        return {
            "offset": self.offset,
            "set": self.set_index,
            "tag_low": self.tag_low,
            "row": self.row_index,
            "tag_high": self.tag_high,
        }


class ClrIndex(NamedTuple):
    row: int
    set: int
    tag_high: int
    tag_low: int
    offset: int


class PtrIndex(NamedTuple):
    row: int
    tag_high: int


class ConventionalIndex(NamedTuple):
    set: int
    tag: int
    offset: int


def geometry_for(
    slice_size: int,
    ways: int,
    line_size: int = 64,
    page_size: int = 4096,
    pb_size: int = 2048,
    slices: int = 1,
) -> LayoutGeometry:
    """Page-row geometry of one LLC slice."""
    off_bits = _log2(line_size, "line size")
    page_bits = _log2(page_size, "page size")
    _log2(slice_size, "slice size")
    _log2(ways, "associativity")
    _log2(pb_size, "PB size")
    _log2(slices, "slice count")
    lines_per_page = page_size // line_size
    if ways > lines_per_page:
        raise GeometryError(f"{ways} ways exceed the {lines_per_page} lines of a page")
    if slice_size < page_size:
        raise GeometryError("slice smaller than a page")
    if not line_size <= pb_size <= page_size:
        raise GeometryError("PB size must lie between line and page size")
    rows = slice_size // page_size
    sets_per_row = lines_per_page // ways
    set_bits = _log2(sets_per_row, "sets per row")
    row_bits = _log2(rows, "rows")
    offset = (off_bits - 1, 0)
    set_index = (off_bits + set_bits - 1, off_bits)
    tag_low = (page_bits - 1, off_bits + set_bits)
    row_index = (page_bits + row_bits - 1, page_bits)
    tag_high = (PHYS_ADDR_BITS - 1, page_bits + row_bits)
    if tag_high[0] < tag_high[1]:
        raise GeometryError("configuration needs more than 48 physical address bits")
    return LayoutGeometry(
        rows_per_slice=rows,
        sets_per_row=sets_per_row,
        ways=ways,
        line_size=line_size,
        page_size=page_size,
        pb_size=pb_size,
        offset=offset,
        set_index=set_index,
        tag_low=tag_low,
        row_index=row_index,
        tag_high=tag_high,
        slices=slices,
    )


def derive_geometry(config: SimConfig) -> LayoutGeometry:
    return geometry_for(
        config.llc.size,
        config.llc.ways,
        config.line_size,
        config.mem.page_size,
        config.pb.size,
        config.llc.slices,
    )


def _slice(pa: int, r: BitRange) -> int:
    return (pa >> r[1]) & _mask(r)


def decompose_clr(pa: int, geom: LayoutGeometry) -> ClrIndex:
    return ClrIndex(
        row=_slice(pa, geom.row_index),
        set=_slice(pa, geom.set_index),
        tag_high=_slice(pa, geom.tag_high),
        tag_low=_slice(pa, geom.tag_low),
        offset=_slice(pa, geom.offset),
    )


def recompose_clr(idx: ClrIndex, geom: LayoutGeometry) -> int:
    return (
        (idx.tag_high << geom.tag_high[1])
        | (idx.row << geom.row_index[1])
        | (idx.tag_low << geom.tag_low[1])
        | (idx.set << geom.set_index[1])
        | (idx.offset << geom.offset[1])
    )


def decompose_ptr(pa: int, geom: LayoutGeometry) -> PtrIndex:
    return PtrIndex(row=_slice(pa, geom.row_index), tag_high=_slice(pa, geom.tag_high))


def slice_of(pa: int, geom: LayoutGeometry) -> int:
    """Slice id: the PPN bits just above Row Index, so a page never straddles slices."""
    return (pa >> geom.tag_high[1]) & (geom.slices - 1)


def conventional_bits(size: int, ways: int, line_size: int = 64) -> tuple[BitRange, BitRange, BitRange]:
    """``(offset, set, tag)`` bit ranges for a plain set-associative cache."""
    off_bits = _log2(line_size, "line size")
    sets = size // line_size // ways
    set_bits = _log2(sets, "set count")
    return (off_bits - 1, 0), (off_bits + set_bits - 1, off_bits), (PHYS_ADDR_BITS - 1, off_bits + set_bits)


def decompose_conventional(pa: int, config: SimConfig) -> ConventionalIndex:
    off, st, tag = conventional_bits(config.llc.size, config.llc.ways, config.line_size)
    set_bits = _width(st) if st[0] >= st[1] else 0
    sets = (pa >> st[1]) & ((1 << set_bits) - 1)
    return ConventionalIndex(set=sets, tag=pa >> tag[1], offset=pa & _mask(off))


@dataclass(frozen=True)
class TagCompareCost:
    clr_bits: int
    ptr_bits: int

    @property
    def ratio(self) -> float:
        return self.ptr_bits / self.clr_bits if self.clr_bits else 0.0


def tag_compare_cost(geom: LayoutGeometry) -> TagCompareCost:
    """Tag bits compared by one CLR (a set) and by one PTR (a row)."""
    clr = geom.ways * (geom.tag_high_width + geom.tag_low_width)
    ptr = geom.lines_per_page * geom.tag_high_width
    return TagCompareCost(clr, ptr)


@dataclass(frozen=True)
class PbTagWidth:
    ppn: int
    replacement: int
    residency: int
    region: int

    @property
    def total(self) -> int:
        return self.ppn + self.replacement + self.residency + self.region


def pb_tag_width(page_size: int = 4096, pb_size: int = 2048, line_size: int = 64, replacement_bits: int = 10) -> PbTagWidth:
    page_bits = _log2(page_size, "page size")
    slots = pb_size // line_size
    regions = page_size // pb_size
    return PbTagWidth(
        ppn=PHYS_ADDR_BITS - page_bits,
        replacement=replacement_bits,
        residency=_log2(slots, "PB slots"),
        region=slots * _log2(regions, "regions per page"),
    )


def pb_area_overhead(
    slice_size: int = 16 * 1024**2,
    pb_size: int = 2048,
    page_size: int = 4096,
    line_size: int = 64,
    replacement_bits: int = 10,
    sram_to_nvm_cell_area: float = 4.0,
) -> float:
    """Area of one PB (tag + data, SRAM) as a fraction of the NVM data array."""
    bits = pb_tag_width(page_size, pb_size, line_size, replacement_bits).total + pb_size * 8
    return bits * sram_to_nvm_cell_area / (slice_size * 8)
