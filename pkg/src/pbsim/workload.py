"""Trace files and seeded synthetic trace generators.

Text format, one record per line::

    <instruction gap> <R|W> <hex virtual address>

``#`` starts a comment. The binary variant starts with the magic ``PBT1`` and a
little-endian u64 record count, followed by ``<u32 gap><u8 op><u64 vaddr>``
records (op 0 = R, 1 = W).
"""

from __future__ import annotations

import io
import random
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple

VADDR_LIMIT = 1 << 48
MAGIC = b"PBT1"
_HEADER = struct.Struct("<4sQ")
_RECORD = struct.Struct("<IBQ")


class TraceError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TraceRecord(NamedTuple):
    gap: int
    op: str
    vaddr: int

    @property
    def is_write(self) -> bool:
        return self.op == "W"


def parse_line(text: str, lineno: int) -> TraceRecord | None:
    body = text.split("#", 1)[0].strip()
    if not body:
        return None
    parts = body.split()
    if len(parts) != 3:
        raise TraceError(f"expected 'gap op addr', got {text.strip()!r}", lineno)
    gap_s, op, addr_s = parts
    if not gap_s.isdigit():
        raise TraceError(f"bad instruction gap {gap_s!r}", lineno)
    if op not in ("R", "W"):
        raise TraceError(f"bad op {op!r}", lineno)
    try:
        vaddr = int(addr_s, 16)
    except ValueError:
        raise TraceError(f"bad address {addr_s!r}", lineno) from None
    if vaddr < 0 or vaddr >= VADDR_LIMIT:
        raise TraceError(f"address {addr_s} exceeds 48 bits", lineno)
    return TraceRecord(int(gap_s), op, vaddr)


def iter_trace(stream: Iterable[str]) -> Iterator[TraceRecord]:
    for lineno, text in enumerate(stream, 1):
        rec = parse_line(text, lineno)
        if rec is not None:
            yield rec


def parse_trace(stream: Iterable[str] | str) -> list[TraceRecord]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    return list(iter_trace(stream))


def write_trace(trace: Iterable[TraceRecord], stream: IO[str]) -> None:
    write = stream.write
    for gap, op, vaddr in trace:
        write(f"{gap} {op} {vaddr:#x}\n")


def write_binary(trace: list[TraceRecord], stream: IO[bytes]) -> None:
    stream.write(_HEADER.pack(MAGIC, len(trace)))
    pack = _RECORD.pack
    stream.write(b"".join(pack(g, 1 if op == "W" else 0, a) for g, op, a in trace))


def read_binary(stream: IO[bytes]) -> list[TraceRecord]:
    head = stream.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise TraceError("truncated binary header")
    magic, count = _HEADER.unpack(head)
    if magic != MAGIC:
        raise TraceError(f"bad magic {magic!r}")
    body = stream.read(count * _RECORD.size)
    if len(body) != count * _RECORD.size:
        raise TraceError("truncated binary trace")
    out = []
    for i, (gap, op, addr) in enumerate(_RECORD.iter_unpack(body)):
        if op > 1 or addr >= VADDR_LIMIT:
            raise TraceError(f"bad record {i}")
        out.append(TraceRecord(gap, "W" if op else "R", addr))
    return out


def load_trace(path: str | Path) -> list[TraceRecord]:
    """Read a text or binary trace, picking the format from the magic bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) == MAGIC:
            fh.seek(0)
            return read_binary(fh)
    with open(path) as fh:
        return parse_trace(fh)


def save_trace(trace: list[TraceRecord], path: str | Path, binary: bool = False) -> None:
    path = Path(path)
    if binary:
        with open(path, "wb") as fh:
            write_binary(trace, fh)
    else:
        with open(path, "w") as fh:
            write_trace(trace, fh)


@dataclass(frozen=True)
class SynthParams:
    """Page-reuse workload knobs.

    Each *visit* picks a page and touches that page's hot lines once each.
    ``revisit_distance`` is the minimum number of visits to other pages before
    a page may be revisited; set it above the L1 TLB reach to force refills.
    """

    pages: int = 2048
    phases: int = 1
    lines_min: int = 16
    lines_max: int = 48
    revisit_prob: float = 0.95
    revisit_distance: int = 128
    read_fraction: float = 0.8
    accesses: int = 100_000
    gap_mean: float = 3.0
    seed: int = 1
    base_vaddr: int = 0x5555_0000_0000

    def __post_init__(self):
        for name in ("revisit_prob", "read_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if not 1 <= self.lines_min <= self.lines_max <= 64:
            raise ValueError("need 1 <= lines_min <= lines_max <= 64")
        if self.pages < 1 or self.phases < 1 or self.phases > self.pages:
            raise ValueError("need 1 <= phases <= pages")
        if self.accesses < 0 or self.revisit_distance < 0 or self.gap_mean < 0:
            raise ValueError("accesses, revisit_distance and gap_mean must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _gap(rng: random.Random, mean: float) -> int:
    if mean <= 0:
        return 0
    # geometric on {0, 1, ...} with the requested mean
    return int(rng.expovariate(1.0 / (mean + 0.5)))


def generate(params: SynthParams) -> list[TraceRecord]:
    p = params
    rng = random.Random(p.seed)
    base = (p.base_vaddr >> 12) << 12
    per_phase = p.pages // p.phases
    order = list(range(p.pages))
    rng.shuffle(order)
    hot: dict[int, list[int]] = {}
    trace: list[TraceRecord] = []
    append = trace.append
    last_visit: dict[int, int] = {}
    visit = 0
    phase_touched: list[int] = []
    phase = -1
    next_new = 0
    while len(trace) < p.accesses:
        cur = len(trace) * p.phases // p.accesses if p.accesses else 0
        if cur != phase:
            phase = cur
            lo = phase * per_phase
            hi = p.pages if phase == p.phases - 1 else lo + per_phase
            pool = order[lo:hi]
            next_new = 0
            phase_touched = []
        page = None
        if phase_touched and rng.random() < p.revisit_prob:
            for _ in range(8):
                cand = phase_touched[rng.randrange(len(phase_touched))]
                if visit - last_visit[cand] > p.revisit_distance:
                    page = cand
                    break
        if page is None:
            if next_new < len(pool):
                page = pool[next_new]
                next_new += 1
                phase_touched.append(page)
            elif p.revisit_prob == 0.0:
                break
            else:
                page = phase_touched[rng.randrange(len(phase_touched))]
        lines = hot.get(page)
        if lines is None:
            lines = rng.sample(range(64), rng.randint(p.lines_min, p.lines_max))
            hot[page] = lines
        last_visit[page] = visit
        visit += 1
        page_base = base + page * 4096
        for line in lines:
            op = "R" if rng.random() < p.read_fraction else "W"
            append(TraceRecord(_gap(rng, p.gap_mean), op, page_base + line * 64))
            if len(trace) >= p.accesses:
                break
    return trace


def random_trace(accesses: int, footprint: int, read_fraction: float = 0.7, seed: int = 1, gap_mean: float = 2.0) -> list[TraceRecord]:
    """Uniformly random line addresses over ``footprint`` bytes."""
    rng = random.Random(seed)
    lines = footprint // 64
    base = 0x1000_0000
    out = []
    for _ in range(accesses):
        op = "R" if rng.random() < read_fraction else "W"
        out.append(TraceRecord(_gap(rng, gap_mean), op, base + rng.randrange(lines) * 64))
    return out


def footprint_bytes(trace: Iterable[TraceRecord], page_size: int = 4096) -> int:
    return len({r.vaddr // page_size for r in trace}) * page_size
