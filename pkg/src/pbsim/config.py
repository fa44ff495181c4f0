"""Simulator configuration: sectioned ``key = value`` files plus scheme presets."""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

SCHEMES = ("baseline", "nvm_only", "cloak", "osram")

# Keys a scheme fixes unless the user sets them explicitly.
SCHEME_PRESETS: dict[str, dict[str, str]] = {
    "baseline": {"llc.technology": "sram", "llc.layout": "conventional", "llc.size": "4MB", "pb.enabled": "false"},
    "nvm_only": {"llc.technology": "nvm", "llc.layout": "conventional", "llc.size": "16MB", "pb.enabled": "false"},
    "cloak": {"llc.technology": "nvm", "llc.layout": "page_row", "llc.size": "16MB", "pb.enabled": "true"},
    "osram": {"llc.technology": "sram", "llc.layout": "conventional", "llc.size": "16MB", "pb.enabled": "false"},
}

PHYS_ADDR_BITS = 48


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CoreConfig:
    scheme: str = "cloak"
    clock_hz: float = 3.2e9
    mshr_limit: int = 8
    seed: int = 1
    audit_interval: int = 0
    l1_tlb_entries: int = 64
    l1_tlb_ways: int = 4
    l1_tlb_rt: int = 2
    l2_tlb_entries: int = 1024
    l2_tlb_ways: int = 12
    l2_tlb_rt: int = 12
    fetch_to_l2: bool = False


@dataclass(frozen=True)
class L1Config:
    size: int = 32 * 1024
    ways: int = 8
    line: int = 64
    rt: int = 2


@dataclass(frozen=True)
class L2Config:
    size: int = 512 * 1024
    ways: int = 8
    rt: int = 14
    next_block_prefetch: bool = False


@dataclass(frozen=True)
class LlcConfig:
    technology: str = "nvm"
    layout: str = "page_row"
    size: int = 16 * 1024 * 1024
    slices: int = 1
    ways: int = 16
    tag_latency: int = 2
    sram_rt: int = 53
    sram_data_latency: int = 12
    nvm_read_rt: int = 63
    nvm_data_latency: int = 22
    nvm_read_occupancy: int = 10
    nvm_write_rt: int = 78
    nvm_write_occupancy: int = 26
    write_queue_depth: int = 16


@dataclass(frozen=True)
class PbConfig:
    enabled: bool = True
    count: int = 20
    size: int = 2048
    rt: int = 43
    region_check: int = 1
    ptr_latency: int = 6
    threshold: int = 6
    activation_period: int = 20
    replacement_bits: int = 10


@dataclass(frozen=True)
class MemConfig:
    size: int = 64 * 1024**3
    rt: int = 190
    page_size: int = 4096
    huge_page_size: int = 0


@dataclass(frozen=True)
class EnergyConfig:
    nvm_read: float = 0.95e-9
    nvm_write: float = 6.3e-9
    nvm_tag: float = 7e-12
    nvm_leak: float = 0.829
    sram_read: float = 0.47e-9
    sram_write: float = 0.48e-9
    sram_tag: float = 4e-12
    sram_leak: float = 1.4
    pb_read: float = 12e-12
    pb_write: float = 13e-12
    pb_tag: float = 12e-12
    pb_leak: float = 4.1e-3
    mem_access: float = 20e-9
    core_power: float = 0.0


SECTIONS = {
    "core": CoreConfig,
    "l1": L1Config,
    "l2": L2Config,
    "llc": LlcConfig,
    "pb": PbConfig,
    "mem": MemConfig,
    "energy": EnergyConfig,
}


@dataclass(frozen=True)
class SimConfig:
    core: CoreConfig = field(default_factory=CoreConfig)
    l1: L1Config = field(default_factory=L1Config)
    l2: L2Config = field(default_factory=L2Config)
    llc: LlcConfig = field(default_factory=LlcConfig)
    pb: PbConfig = field(default_factory=PbConfig)
    mem: MemConfig = field(default_factory=MemConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)

    @property
    def line_size(self) -> int:
        return self.l1.line

    @property
    def nvm(self) -> bool:
        return self.llc.technology == "nvm"

    @property
    def pbs_enabled(self) -> bool:
        return self.pb.enabled

    @property
    def page_size(self) -> int:
        """Size of the pages handed out by the allocator."""
        return self.mem.huge_page_size or self.mem.page_size

    def replace(self, **overrides: Any) -> "SimConfig":
        """Return a copy with ``section.key`` style overrides applied."""
        return apply_overrides(self, overrides)

    def validate(self) -> "SimConfig":
        validate(self)
        return self


_SIZE_RE = re.compile(r"^\s*(\d+)\s*([KMGT]?)B?\s*$", re.IGNORECASE)
_UNITS = {"": 1, "K": 1024, "M": 1024**2, "G": 1024**3, "T": 1024**4}


def parse_size(text: str | int) -> int:
    """Parse ``"32KB"``, ``"16MB"``, ``"4096"`` into a byte count."""
    if isinstance(text, int):
        return text
    m = _SIZE_RE.match(str(text))
    if not m:
        raise ConfigError(f"bad size {text!r}")
    return int(m.group(1)) * _UNITS[m.group(2).upper()]


def _coerce(section: str, key: str, default: Any, raw: Any) -> Any:
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return parse_size(raw) if isinstance(raw, str) else int(raw)
        except (ConfigError, ValueError):
            raise ConfigError(f"{where}: expected an integer or size, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {raw!r}") from None
    return str(raw).strip()


def _read_layer(text: str, origin: str) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    flat = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        for key, value in parser.items(section):
            flat[f"{section}.{key}"] = value
    return flat


def _expand_virtual(flat: dict[str, Any], base: Mapping[str, Any]) -> dict[str, Any]:
    """Expand ``llc.nvm_read_extra``: extra NVM data-array read cycles over SRAM."""
    flat = dict(flat)
    if "llc.nvm_read_extra" in flat:
        extra = int(flat.pop("llc.nvm_read_extra"))
        sram_rt = int(flat.get("llc.sram_rt", base["llc.sram_rt"]))
        sram_data = int(flat.get("llc.sram_data_latency", base["llc.sram_data_latency"]))
        flat["llc.nvm_read_rt"] = sram_rt + extra
        flat["llc.nvm_data_latency"] = sram_data + extra
        flat["llc.nvm_read_occupancy"] = extra
    return flat


def _build(flat: Mapping[str, Any]) -> SimConfig:
    sections: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}
    for dotted, raw in flat.items():
        section, _, key = dotted.partition(".")
        cls = SECTIONS.get(section)
        if cls is None:
            raise ConfigError(f"unknown section in key {dotted!r}")
        defaults = {f.name: f.default for f in dataclasses.fields(cls)}
        if key not in defaults:
            raise ConfigError(f"unknown key {dotted!r}")
        sections[section][key] = _coerce(section, key, defaults[key], raw)
    return SimConfig(**{name: SECTIONS[name](**vals) for name, vals in sections.items()})


def _flatten(cfg: SimConfig) -> dict[str, Any]:
    flat = {}
    for name in SECTIONS:
        sec = getattr(cfg, name)
        for f in dataclasses.fields(sec):
            flat[f"{name}.{f.name}"] = getattr(sec, f.name)
    return flat


def default_config_text() -> str:
    return resources.files("pbsim").joinpath("data/default.cfg").read_text()


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> SimConfig:
    """Load defaults, then the scheme preset, then ``path``, then ``overrides``.

    Keys set explicitly in the file or the overrides win over the preset.
    """
    base = _read_layer(default_config_text(), "<default>")
    user: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        user.update(_read_layer(text, str(path)))
    for key, value in (overrides or {}).items():
        user[key] = value
    user = _expand_virtual(user, base)
    scheme = str(user.get("core.scheme", base["core.scheme"])).strip()
    if scheme not in SCHEMES:
        raise ConfigError(f"core.scheme must be one of {SCHEMES}, got {scheme!r}")
    flat: dict[str, Any] = dict(base)
    flat.update(SCHEME_PRESETS[scheme])
    flat.update(user)
    return validate(_build(flat))


def apply_overrides(cfg: SimConfig, overrides: Mapping[str, Any]) -> SimConfig:
    flat = _flatten(cfg)
    flat.update(_expand_virtual(dict(overrides), flat))
    return validate(_build(flat))


def scheme_config(scheme: str, **overrides: Any) -> SimConfig:
    """Default configuration for ``scheme`` with dotted-key overrides.

    Keyword names use ``__`` for the dot, e.g. ``llc__size="4MB"``.
    """
    ov = {k.replace("__", "."): v for k, v in overrides.items()}
    ov["core.scheme"] = scheme
    return load_config(None, ov)


def _pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def validate(cfg: SimConfig) -> SimConfig:
    line = cfg.l1.line
    page = cfg.mem.page_size
    for name, value in [
        ("l1.line", line),
        ("l1.size", cfg.l1.size),
        ("l2.size", cfg.l2.size),
        ("llc.size", cfg.llc.size),
        ("llc.slices", cfg.llc.slices),
        ("pb.size", cfg.pb.size),
        ("mem.page_size", page),
        ("mem.size", cfg.mem.size),
    ]:
        if not _pow2(value):
            raise ConfigError(f"{name} must be a power of two, got {value}")
    if cfg.mem.huge_page_size not in (0, 2 * 1024**2, 1024**3):
        raise ConfigError("mem.huge_page_size must be 0, 2MB or 1GB")
    if not (line <= cfg.pb.size <= page):
        raise ConfigError("pb.size must lie between the line size and the page size")
    if not 1 <= cfg.pb.threshold <= page // line:
        raise ConfigError(f"pb.threshold must be in [1, {page // line}]")
    if cfg.llc.technology not in ("nvm", "sram"):
        raise ConfigError("llc.technology must be nvm or sram")
    if cfg.llc.layout not in ("page_row", "conventional"):
        raise ConfigError("llc.layout must be page_row or conventional")
    if cfg.pb.enabled and cfg.llc.technology != "nvm":
        raise ConfigError("page buffers require an NVM LLC (pb.enabled with an SRAM LLC)")
    if cfg.pb.enabled and cfg.llc.layout != "page_row":
        raise ConfigError("page buffers require the page_row layout")
    if cfg.core.fetch_to_l2 and cfg.llc.layout != "page_row":
        raise ConfigError("core.fetch_to_l2 requires the page_row layout")
    if cfg.core.mshr_limit < 1:
        raise ConfigError("core.mshr_limit must be >= 1")
    if cfg.llc.write_queue_depth < 1:
        raise ConfigError("llc.write_queue_depth must be >= 1")
    for name, cache in (("l1", cfg.l1), ("l2", cfg.l2)):
        sets = cache.size // line // cache.ways
        if sets < 1 or not _pow2(sets):
            raise ConfigError(f"{name}: size/line/ways must be a power of two")
    if cfg.llc.size // line // cfg.llc.ways < 1:
        raise ConfigError("llc: fewer lines than ways")
    if cfg.mem.size.bit_length() - 1 > PHYS_ADDR_BITS:
        raise ConfigError("physical memory exceeds the 48-bit address space")
    if cfg.llc.nvm_read_occupancy > cfg.llc.nvm_data_latency:
        raise ConfigError("llc.nvm_read_occupancy exceeds llc.nvm_data_latency")
    if cfg.llc.layout == "page_row":
        from .geometry import derive_geometry

        derive_geometry(cfg)
    energy = cfg.energy
    for f in dataclasses.fields(energy):
        if getattr(energy, f.name) < 0:
            raise ConfigError(f"energy.{f.name} must be non-negative")
    return cfg
