import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse, stats
from scipy.sparse.csgraph import maximum_bipartite_matching

from clicklab import pairs
from clicklab.metrics import Measured, count_rate
from clicklab.pairs import (accidental_rate, car, count_coincidences, count_pairs_in_window,
                            cross_correlation_histogram, klyshko, peak_offset)
from clicklab.simkit import PdcSourceModel, detect, simple_detector, simulate_pdc, simulate_poisson_clicks

from conftest import stream
from oracles import coincidence_oracle, pair_delays

S = 10**12
NS = 1000


def test_coincidence_examples():
    assert count_coincidences(stream([0], 100), stream([40], 100), 40, 10).count == 1
    assert count_coincidences(stream([0, NS], 10 * NS), stream([0], 10 * NS), 0, 10 * NS).count == 1
    assert count_coincidences(stream([0, 100 * NS], 200 * NS), stream([50 * NS, 150 * NS], 200 * NS), 0, NS).count == 0


def test_coincidence_window_closed():
    a, b = stream([0], 100), stream([5], 100)
    assert count_coincidences(a, b, 0, 10).count == 1
    assert count_coincidences(a, b, 0, 9).count == 0


def test_coincidence_pairs_recorded():
    r = count_coincidences(stream([0, 10, 20], 100), stream([11, 21], 100), 1, 2, record_pairs=True)
    assert r.count == 2
    assert list(r.pairs[0]) == [1, 2] and list(r.pairs[1]) == [0, 1]


def test_coincidence_errors():
    with pytest.raises(ValueError):
        count_coincidences(stream([0], 10), stream([0], 11), 0, 5)
    with pytest.raises(ValueError):
        count_coincidences(stream([0], 10), stream([0], 10), 0, 0)


pair_st = st.tuples(st.lists(st.integers(0, 5000), max_size=60).map(sorted),
                    st.lists(st.integers(0, 5000), max_size=60).map(sorted),
                    st.integers(-300, 300), st.integers(1, 400))


@settings(max_examples=300, deadline=None)
@given(pair_st)
def test_coincidence_properties(args):
    a_tags, b_tags, offset, window = args
    a, b = stream(a_tags, 5001), stream(b_tags, 5001)
    n = count_coincidences(a, b, offset, window).count
    assert n == count_coincidences(b, a, -offset, window).count
    assert n == coincidence_oracle(a.tags, b.tags, offset, window)
    assert count_coincidences(a, b, offset, window + 7).count >= n
    assert count_pairs_in_window(a, b, offset, window).count >= n


def _maximum_matching(a, b, offset, window):
    adj = np.abs(b[None, :] - offset - a[:, None]) * 2 <= window
    m = maximum_bipartite_matching(sparse.csr_matrix(adj.astype(np.int8)), perm_type="column")
    return int(np.count_nonzero(m >= 0))


def test_greedy_is_maximum_matching(rng):
    for _ in range(200):
        a = np.sort(rng.integers(0, 2000, rng.integers(0, 80)))
        b = np.sort(rng.integers(0, 2000, rng.integers(0, 80)))
        offset, window = int(rng.integers(-50, 50)), int(rng.integers(1, 200))
        n = count_coincidences(stream(a, 2001), stream(b, 2001), offset, window).count
        assert n == _maximum_matching(a, b, offset, window)


def test_xcorr_examples():
    a = stream(np.arange(0, 10**6, 10_000), 10**6)
    h = cross_correlation_histogram(a, a, 100, 5000)
    zero = h.bin_of(0)
    assert h.counts[zero] == len(a) and h.counts.sum() == len(a)
    assert h.edges[zero] <= 0 < h.edges[zero + 1]
    b = stream(a.tags + 10 * NS, 10**6 + 10 * NS)
    a2 = stream(a.tags, 10**6 + 10 * NS)
    h = cross_correlation_histogram(a2, b, 100, 20 * NS)
    assert peak_offset(h) == 10 * NS


def test_xcorr_matches_brute_force(rng):
    a = np.sort(rng.integers(0, 10**5, 300))
    b = np.sort(rng.integers(0, 10**5, 300))
    h = cross_correlation_histogram(stream(a, 10**5), stream(b, 10**5), 37, 2000)
    d = pair_delays(a, b, 10**5)
    d = d[(d >= h.edges[0]) & (d < h.edges[-1])]
    assert h.edges[0] <= -2000 and h.edges[-1] > 2000
    assert h.total_in == len(d) and h.underflow == h.overflow == 0
    assert np.array_equal(h.counts, np.bincount((d - h.origin_ps) // 37, minlength=len(h)))


def test_xcorr_independent_streams_flat():
    Ra, Rb, T = 2e5, 2e5, 10 * S
    a = simulate_poisson_clicks(Ra, T, 1)
    b = simulate_poisson_clicks(Rb, T, 2)
    w = 1000
    h = cross_correlation_histogram(a, b, w, 50_000)
    mean = Ra * Rb * w * 1e-12 * T * 1e-12
    z = (h.counts - mean) / math.sqrt(mean)
    # Bonferroni over bins keeps the family-wise false-alarm rate near 0.3 %
    zmax = stats.norm.isf(0.0015 / len(h))
    assert np.abs(z).max() < zmax
    assert stats.chisquare(h.counts, np.full(len(h), h.counts.mean())).pvalue > 0.001


def test_accidental_examples():
    assert accidental_rate(810, 832, 76e6) == pytest.approx(8.87e-3, rel=1e-3)
    assert accidental_rate(0, 832, 76e6) == 0
    assert accidental_rate(20, 40, 1e6) == pytest.approx(4 * accidental_rate(10, 20, 1e6))
    assert pairs.accidental_rate_cw(1e3, 1e3, 1000) == pytest.approx(1e-3)
    with pytest.raises(ValueError):
        accidental_rate(1, 1, 0)


def test_car_examples():
    r = car(12.3, accidental_rate(810, 832, 76e6))
    assert r.value == pytest.approx(1387, rel=1e-3)
    assert abs(r.value - 1390) < 60
    assert car(5.0, 5.0).value == 1.0
    assert car(0.0, 5.0).value == 0.0
    with pytest.raises(ValueError):
        car(1.0, 0.0)


def test_klyshko_examples():
    A = accidental_rate(810, 832, 76e6)
    k = klyshko(12.3, A, 810, 832)
    assert k.eta_signal.value == pytest.approx(0.0148, abs=5e-5)
    assert k.eta_idler.value == pytest.approx(0.0152, abs=5e-5)
    k = klyshko(3.0, 3.0, 810, 832)
    assert k.eta_signal.value == 0 and k.eta_idler.value == 0
    with pytest.raises(ValueError):
        klyshko(1.0, 0.0, 0.0, 1.0)


def test_klyshko_recovers_known_efficiency():
    src = PdcSourceModel(mean_pairs_per_pulse=2e-3, path_eta_signal=0.4, path_eta_idler=0.6,
                         signal_delay_ps=2000, idler_delay_ps=2000)
    T = 2 * S
    _, sig_ph, idl_ph = simulate_pdc(src, T, 3)
    det = simple_detector(eta=0.5, dark_rate_Hz=10.0)
    sig = detect(sig_ph, det, 0.0, 1578.0, None, T, 4)
    idl = detect(idl_ph, det, 0.0, 1578.0, None, T, 5)
    c = count_coincidences(sig, idl, 0, 1300).rate
    Ns, Ni = count_rate(sig), count_rate(idl)
    A = pairs.accidental_measured(Ns, Ni, src.rep_rate_Hz)
    k = klyshko(c.value, A.value, Ns.value, Ni.value, c.error, A.error, Ns.error, Ni.error)
    assert abs(k.eta_signal.value - 0.2) < 3 * k.eta_signal.error
    assert abs(k.eta_idler.value - 0.3) < 3 * k.eta_idler.error


def test_coincidence_result_dict():
    r = count_coincidences(stream([0], S), stream([0], S), 0, 10)
    assert r.to_dict() == {"count": 1, "rate_Hz": 1.0, "rate_err_Hz": 1.0, "offset_ps": 0, "window_ps": 10}
    assert r.rate == Measured(1.0, 1.0)
