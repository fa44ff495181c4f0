import pytest

from pbsim.config import ConfigError, SimConfig, load_config, parse_size, scheme_config


def test_defaults_are_table_values():
    cfg = load_config()
    assert cfg == load_config(None, {})
    assert (cfg.l1.size, cfg.l1.ways, cfg.l1.rt) == (32 * 1024, 8, 2)
    assert (cfg.l2.size, cfg.l2.ways, cfg.l2.rt) == (512 * 1024, 8, 14)
    assert (cfg.llc.nvm_read_rt, cfg.llc.nvm_write_rt, cfg.llc.nvm_data_latency, cfg.llc.nvm_read_occupancy) == (63, 78, 22, 10)
    assert (cfg.llc.sram_rt, cfg.llc.tag_latency, cfg.llc.sram_data_latency) == (53, 2, 12)
    assert (cfg.pb.count, cfg.pb.size, cfg.pb.rt) == (20, 2048, 43)
    assert (cfg.pb.ptr_latency, cfg.pb.threshold, cfg.pb.activation_period) == (6, 6, 20)
    assert (cfg.core.l1_tlb_entries, cfg.core.l1_tlb_ways, cfg.core.l1_tlb_rt) == (64, 4, 2)
    assert (cfg.core.l2_tlb_entries, cfg.core.l2_tlb_ways, cfg.core.l2_tlb_rt) == (1024, 12, 12)
    assert cfg.mem.rt == 190 and cfg.mem.size == 64 * 1024**3
    assert cfg.core.clock_hz == 3.2e9
    e = cfg.energy
    assert (e.nvm_read, e.nvm_write, e.nvm_tag, e.nvm_leak) == (0.95e-9, 6.3e-9, 7e-12, 0.829)
    assert (e.sram_read, e.sram_write, e.sram_tag, e.sram_leak) == (0.47e-9, 0.48e-9, 4e-12, 1.4)
    assert (e.pb_read, e.pb_write, e.pb_tag, e.pb_leak) == (12e-12, 13e-12, 12e-12, 4.1e-3)


def test_dataclass_defaults_match_shipped_file():
    assert load_config() == SimConfig()


@pytest.mark.parametrize("text,value", [("32KB", 32768), ("16MB", 16 << 20), ("4096", 4096), ("64gb", 64 << 30), (7, 7)])
def test_parse_size(text, value):
    assert parse_size(text) == value


def test_parse_size_rejects_junk():
    with pytest.raises(ConfigError):
        parse_size("lots")


def test_scheme_presets():
    assert scheme_config("baseline").llc.size == 4 << 20
    assert not scheme_config("baseline").nvm
    o = scheme_config("osram")
    assert (o.llc.size, o.llc.technology, o.llc.layout, o.pb.enabled) == (16 << 20, "sram", "conventional", False)
    c = scheme_config("cloak")
    assert c.pb.enabled and c.llc.layout == "page_row"


def test_user_keys_beat_preset():
    assert scheme_config("baseline", llc__size="8MB").llc.size == 8 << 20


def test_file_layer(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("[core]\nscheme = nvm_only\n[pb]\nthreshold = 9  # comment\n")
    cfg = load_config(p)
    assert cfg.core.scheme == "nvm_only" and cfg.pb.threshold == 9 and not cfg.pb.enabled


@pytest.mark.parametrize(
    "text",
    ["[core]\nbogus = 1\n", "[cache]\nsize = 1\n", "[l1]\nsize = 3KB\n", "[pb]\nthreshold = 65\n", "[core]\nmshr_limit = x\n"],
)
def test_bad_files(tmp_path, text):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/x.cfg")


@pytest.mark.parametrize(
    "overrides",
    [
        {"core.scheme": "osram", "pb.enabled": "true"},
        {"core.scheme": "nvm_only", "pb.enabled": "true"},
        {"core.scheme": "baseline", "core.fetch_to_l2": "true"},
        {"core.scheme": "warp"},
        {"mem.huge_page_size": "4MB"},
    ],
)
def test_conflicts_rejected(overrides):
    with pytest.raises(ConfigError):
        load_config(None, overrides)


def test_nvm_read_extra_expands():
    cfg = load_config(None, {"llc.nvm_read_extra": 20})
    assert (cfg.llc.nvm_read_rt, cfg.llc.nvm_data_latency, cfg.llc.nvm_read_occupancy) == (73, 32, 20)
    # +10 reproduces the defaults
    assert load_config(None, {"llc.nvm_read_extra": 10}) == load_config()


def test_replace():
    cfg = scheme_config("cloak").replace(**{"pb.count": 4})
    assert cfg.pb.count == 4
    with pytest.raises(ConfigError):
        cfg.replace(**{"llc.technology": "sram"})
