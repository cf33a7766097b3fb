import math

import numpy as np
import pytest
from scipy import stats

from clicklab import simkit
from clicklab.configfile import ConfigError, parse_config
from clicklab.simkit import (KIND_AFTERPULSE, CwSourceModel, DetectorModel, ModelRangeError, PdcSourceModel,
                             detect, detect_labeled, photon_arrivals_cw, simple_detector, simulate_pdc,
                             simulate_poisson_clicks)
from clicklab.timetag import TagRun, write_tags

from conftest import stream

S = 10**12


def test_poisson_zero_rate():
    assert len(simulate_poisson_clicks(0.0, S, 1)) == 0


@pytest.mark.parametrize("seed", range(5))
def test_poisson_count_310Hz(seed):
    n = len(simulate_poisson_clicks(310.0, 60 * S, seed))
    assert abs(n - 18600) <= 3 * math.sqrt(18600)


def test_poisson_deterministic():
    a = simulate_poisson_clicks(1e4, S, 42)
    b = simulate_poisson_clicks(1e4, S, 42)
    assert np.array_equal(a.tags, b.tags)
    assert not np.array_equal(a.tags, simulate_poisson_clicks(1e4, S, 43).tags)


def test_poisson_ks_exponential():
    rate = 1e5
    s = simulate_poisson_clicks(rate, int(1.2 * S), 7)
    gaps = np.diff(s.tags)[:100_000] * 1e-12
    assert len(gaps) == 100_000
    # integer-ps flooring shifts gaps by < 1 ps against a 10 us mean
    assert stats.kstest(gaps, "expon", args=(0, 1 / rate)).pvalue > 0.01


def test_poisson_tags_in_window():
    s = simulate_poisson_clicks(1e6, 10**9, 3)
    assert s.tags.min() >= 0 and s.tags.max() < 10**9


def test_cw_photon_rate():
    src = CwSourceModel(1e-3, 1560.0, 4.7e-12)
    assert src.photon_rate == pytest.approx(3.691e4, rel=1e-3)
    n = len(photon_arrivals_cw(src, S, 1))
    assert abs(n - src.photon_rate) < 4 * math.sqrt(src.photon_rate)
    assert len(photon_arrivals_cw(CwSourceModel(1e-3, 1560.0, 1e-30), S, 1)) == 0


def test_cw_linear_in_power():
    n1 = np.mean([len(photon_arrivals_cw(CwSourceModel(1e-3), S // 10, s)) for s in range(10)])
    n2 = np.mean([len(photon_arrivals_cw(CwSourceModel(2e-3), S // 10, s)) for s in range(10)])
    assert n2 / n1 == pytest.approx(2.0, rel=0.03)


def test_pdc_no_pairs():
    sync, sig, idl = simulate_pdc(PdcSourceModel(mean_pairs_per_pulse=0.0), S // 100, 1)
    assert len(sig) == len(idl) == 0 and len(sync) > 0


def test_pdc_sync_count():
    sync, _, _ = simulate_pdc(PdcSourceModel(mean_pairs_per_pulse=0.0), S, 1)
    assert len(sync) == 593750
    assert sync.channel == simkit.SYNC_CHANNEL


def test_pdc_pairs_unit_efficiency():
    src = PdcSourceModel(mean_pairs_per_pulse=1e-3)
    _, sig, idl = simulate_pdc(src, S, 5)
    assert abs(len(sig) - 76_000) < 3 * math.sqrt(76_000)
    assert np.array_equal(sig.tags, idl.tags)
    pulse = np.rint(sig.tags / src.pulse_period_ps) * src.pulse_period_ps
    assert np.all(np.abs(sig.tags - pulse) <= 1)


def test_pdc_delays_and_thinning():
    src = PdcSourceModel(mean_pairs_per_pulse=1e-3, path_eta_signal=0.5, path_eta_idler=0.25,
                         signal_delay_ps=3000, idler_delay_ps=5000)
    _, sig, idl = simulate_pdc(src, S // 10, 2)
    assert len(sig) == pytest.approx(3800, rel=0.1)
    assert len(idl) == pytest.approx(1900, rel=0.1)
    d = sig.tags - 3000.0
    d -= src.pulse_period_ps * np.rint(d / src.pulse_period_ps)
    assert np.all(np.abs(d) < 2)


def test_detect_identity():
    photons = stream(np.sort(np.random.default_rng(1).integers(0, 10**9, 1000)), 10**9)
    out = detect(photons, simple_detector(), 0.0, 1560.0, None, 10**9, 3)
    assert np.array_equal(out.tags, photons.tags)


def test_detect_eta_zero_is_dark_only():
    photons = stream(np.arange(0, 10**9, 10**4), 10**9)
    det = simple_detector(eta=0.0, dark_rate_Hz=5e4)
    lab = detect_labeled(photons, det, 0.0, 1560.0, None, 10**9, 3)
    assert np.all(lab.kinds == simkit.KIND_DARK)
    assert abs(len(lab.stream) - 5e4 * 1e-3) < 4 * math.sqrt(50)


def test_detect_dead_time_example():
    out = detect(stream([0, 10**6], 10**7), simple_detector(dead_time_ps=5 * 10**6), 0.0, 1560.0, None, 10**7, 1)
    assert list(out.tags) == [0]


def test_dead_time_invariant_exact_without_jitter():
    det = simple_detector(eta=0.5, dark_rate_Hz=2e4, dead_time_ps=100_000, p_ap=0.3, tau_ps=200_000)
    ph = photon_arrivals_cw(CwSourceModel(1e-2), S // 10, 4)
    out = detect(ph, det, 0.0, 1560.0, None, S // 10, 5)
    assert len(out) > 1000
    assert np.diff(out.tags).min() >= 100_000


def test_dead_time_with_jitter_bound():
    det = simple_detector(eta=0.5, dark_rate_Hz=2e4, dead_time_ps=100_000, p_ap=0.3, tau_ps=200_000,
                          jitter_sigma_ps=500.0)
    ph = photon_arrivals_cw(CwSourceModel(1e-2), S // 10, 4)
    out = detect(ph, det, 0.0, 1560.0, None, S // 10, 5)
    assert np.diff(out.tags).min() >= 100_000 - 6 * 500
    assert out.tags.min() >= 0 and out.tags.max() <= S // 10


def test_afterpulse_cascade_total():
    p = 0.3
    det = simple_detector(eta=0.0, dark_rate_Hz=20.0, p_ap=p, tau_ps=1_000_000, t0_ps=30_000)
    lab = detect_labeled(stream([], 1000 * S), det, 0.0, 1560.0, None, 1000 * S, 11)
    # W of 40 tau is long against the cascade and short against the primary spacing
    near = np.count_nonzero(np.diff(lab.stream.tags) <= 40_000_000)
    primaries = len(lab.stream) - near
    ratio = near / primaries
    expected = p / (1 - p)
    # geometric cluster size: var(afterpulses per primary) = p / (1 - p)^2
    sigma = math.sqrt(p / (1 - p) ** 2 / primaries)
    assert abs(ratio - expected) < 3 * sigma
    assert lab.count(KIND_AFTERPULSE) == pytest.approx(near, rel=0.01)


def test_cascade_depth_cap():
    det = simple_detector(eta=0.0, dark_rate_Hz=10.0, p_ap=0.999, tau_ps=1000, t0_ps=1000, max_cascade_depth=3)
    lab = detect_labeled(stream([], 10 * S), det, 0.0, 1560.0, None, 10 * S, 2)
    n_dark = lab.count(simkit.KIND_DARK)
    assert lab.count(KIND_AFTERPULSE) <= 3 * n_dark


def test_detect_deterministic_bytes(tmp_path):
    det = DetectorModel.load("paper-nfad")
    ph = photon_arrivals_cw(CwSourceModel(1e-3), S, 9)
    for k in range(2):
        out = detect(ph, det, -70.0, 1560.0, "b3", S, 21)
        write_tags(TagRun.from_streams(out), tmp_path / f"r{k}.clk")
    assert (tmp_path / "r0.clk").read_bytes() == (tmp_path / "r1.clk").read_bytes()


def test_shipped_model_tables():
    det = DetectorModel.load("paper-nfad")
    for lam in range(1530, 1601, 10):
        assert det.rel_sensitivity(-60.0, lam) == 1.0
    assert det.rel_sensitivity(-90.0, 1600) < det.rel_sensitivity(-70.0, 1600) < 1.0
    assert det.dark_rate(-60.0, "b1") == pytest.approx(250.0)
    r = det.dark_rate(-65.0, "b1")
    assert r == pytest.approx(math.sqrt(250.0 * 150.0))
    assert det.afterpulse_prob(-90.0) > det.afterpulse_prob(-60.0)


@pytest.mark.parametrize("T, lam", [(-95.0, 1560.0), (-50.0, 1560.0), (-60.0, 1520.0), (-60.0, 1610.0)])
def test_model_range_errors(T, lam):
    det = DetectorModel.load("paper-nfad")
    with pytest.raises(ModelRangeError):
        detect(stream([], S), det, T, lam, "b1", S, 1)


def test_unknown_bias():
    with pytest.raises(ModelRangeError):
        DetectorModel.load("paper-nfad").dark_rate(-60.0, "b9")


def test_model_validation():
    with pytest.raises(ValueError):
        DetectorModel(efficiency_eta0=1.5)
    with pytest.raises(ValueError):
        DetectorModel(afterpulse_table=((0.0, 1.0, 1000.0),))
    with pytest.raises(ValueError):
        DetectorModel(rel_sensitivity_table=((-60.0, 1550.0, 0.9),))
    with pytest.raises(ValueError):
        DetectorModel(dead_time_ps=-1)


def test_model_from_text():
    doc = parse_config("""
efficiency_eta0 = 0.2
dead_time_ns = 10

dark_rate_table:
    temperature_C, bias, rate_Hz
    -80, lo, 100
    -60, lo, 400
""")
    det = DetectorModel.from_config(doc)
    assert det.dead_time_ps == 10_000
    assert det.dark_rate(-70.0, "lo") == pytest.approx(200.0)
    with pytest.raises(ConfigError):
        DetectorModel.from_config(parse_config("dead_time_ns = 3\n"))


def test_source_validation():
    with pytest.raises(ValueError):
        CwSourceModel(0.0)
    with pytest.raises(ValueError):
        PdcSourceModel(sync_divider=0)
    with pytest.raises(ValueError):
        PdcSourceModel(path_eta_signal=1.5)
