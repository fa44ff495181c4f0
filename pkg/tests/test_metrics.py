import pytest

from pbsim.config import scheme_config
from pbsim.metrics import EnergyModel, RunMetrics, finalize

NVM = scheme_config("nvm_only")
CLOAK = scheme_config("cloak")


def test_mpki():
    m = RunMetrics(instructions=1000, llc_misses=10, l2_misses=25, llc_lookups=25)
    r = finalize(m, NVM)
    assert r["llc_mpki"] == 10 and r["l2_mpki"] == 25


def test_zero_instructions_flagged():
    r = finalize(RunMetrics(), NVM)
    assert r["llc_mpki"] is None and r["ipc"] is None and r["pb_hit_fraction"] is None


def test_hand_energy():
    m = RunMetrics(cycles=100, llc_data_reads=3, llc_data_writes=1)
    expected = 3 * 0.95e-9 + 6.3e-9 + 0.829 * (100 / 3.2e9)
    assert EnergyModel.from_config(NVM).energy(m) == pytest.approx(expected, rel=1e-12)


def test_cloak_terms():
    model = EnergyModel.from_config(CLOAK)
    assert model.llc_ptr_tag == pytest.approx(7e-12 * 1536 / 448)
    m = RunMetrics(cycles=0, pb_reads=2, pb_writes=3, pb_tag_checks=4, llc_ptr_scans=1, llc_row_lines_read=5)
    expected = 2 * 12e-12 + 3 * 13e-12 + 4 * 12e-12 + model.llc_ptr_tag + 5 * 0.95e-9
    assert model.energy(m) == pytest.approx(expected)


def test_pb_leakage_only_with_pbs():
    assert EnergyModel.from_config(NVM).pb_leak == 0
    assert EnergyModel.from_config(CLOAK).pb_leak == 4.1e-3


def test_ed2_scales_with_square_of_time():
    model = EnergyModel.from_config(scheme_config("nvm_only", energy__nvm_leak=0))
    m = RunMetrics(cycles=1000, llc_data_reads=10)
    m2 = RunMetrics(cycles=2000, llc_data_reads=10)
    assert model.ed2(m2) == pytest.approx(4 * model.ed2(m))


def test_energy_monotone_in_events_and_linear_leakage():
    model = EnergyModel.from_config(NVM)
    base = RunMetrics(cycles=500, llc_data_reads=4)
    assert model.energy(RunMetrics(cycles=500, llc_data_reads=5)) > model.energy(base)
    leak = lambda c: model.breakdown(RunMetrics(cycles=c))["leakage"]
    assert leak(3000) == pytest.approx(3 * leak(1000))


def test_merge_sums_everything():
    a = RunMetrics(cycles=5, pb_hits=1)
    a.source_counts["PB"] = 1
    a.ptr_population_hist[6] = 2
    b = RunMetrics(cycles=7, pb_hits=2)
    b.source_counts["PB"] = 3
    c = a.merge(b)
    assert c.cycles == 12 and c.pb_hits == 3 and c.source_counts["PB"] == 4
    assert c.ptr_population_hist[6] == 2


def test_record_helpers():
    m = RunMetrics()
    m.record("pb_hits")
    m.record("ptr_gated_out", 2)
    m.record_service("PB", 44)
    assert (m.pb_hits, m.ptr_gated_out, m.source_cycles["PB"]) == (1, 2, 44)


def test_fractions():
    m = RunMetrics(llc_hits=10, pb_hits=4, promoted_lines=8, promoted_lines_accessed=6, l1_tlb_misses=20, ptr_eligible=19)
    r = finalize(m, CLOAK)
    assert r["pb_hit_fraction"] == 0.4
    assert r["promotion_utilization"] == 0.75
    assert r["ptr_eligible_fraction"] == 0.95
