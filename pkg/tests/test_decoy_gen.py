import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from premiumnn.decoy_gen import (
    EmpiricalDist,
    decoys_for,
    fit_empirical,
    sample_matching,
    sample_uniform_range,
)
from premiumnn.param_select import select_bn_full_layer, select_conv_sampled
from premiumnn.tensor_nn import build_resnet

# upper 1% point of chi-square with 19 degrees of freedom
CHI2_99_DF19 = 36.191


def test_fit_two_values():
    d = fit_empirical([0.0, 1.0], bins=2)
    assert d.bin_counts == (1, 1)
    assert d.bin_edges == (0.0, 0.5, 1.0)


def test_fit_constant_values():
    d = fit_empirical([0.3] * 7)
    assert d.bin_counts == (7,) and d.support == (0.3, 0.3)
    assert np.all(sample_matching(d, 10, 0) == 0.3)


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_empirical([1.0])
    with pytest.raises(ValueError):
        fit_empirical([1.0, 2.0], bins=0)
    with pytest.raises(ValueError):
        EmpiricalDist((0.0, 1.0, 1.0), (1, 1))
    with pytest.raises(ValueError):
        EmpiricalDist((0.0, 1.0), (0,))


def test_fit_counts_match_direct_counting():
    v = np.random.default_rng(0).standard_normal(10_000)
    d = fit_empirical(v, bins=50)
    e = d.bin_edges
    direct = [0] * 50
    for x in v.tolist():
        for i in range(50):
            if e[i] <= x < e[i + 1] or (i == 49 and x == e[50]):
                direct[i] += 1
                break
    assert list(d.bin_counts) == direct
    assert sum(direct) == 10_000


def test_single_bin_samples_stay_inside():
    d = EmpiricalDist((2.0, 3.0), (5,))
    s = sample_matching(d, 1000, 1)
    assert s.min() >= 2.0 and s.max() <= 3.0


def test_two_bin_occupancy_binomial():
    d = EmpiricalDist((0.0, 1.0, 2.0), (1, 1))
    s = sample_matching(d, 10_000, 2)
    k = int((s < 1.0).sum())
    # Binomial(10^4, 1/2): mean 5000, sd 50
    assert abs(k - 5000) <= 3 * 50


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=50), st.integers(1, 30), st.integers(0, 1000))
def test_samples_never_leave_support(values, bins, seed):
    d = fit_empirical(values, bins)
    s = sample_matching(d, 200, seed)
    lo, hi = d.support
    assert s.min() >= lo and s.max() <= hi


def test_matching_passes_two_sample_chi_square():
    src = np.random.default_rng(3).gamma(2.0, 0.3, 10_000)
    d = fit_empirical(src, bins=20)
    s = sample_matching(d, 10_000, 4)
    counts, _ = np.histogram(s, bins=np.asarray(d.bin_edges))
    a = np.asarray(d.bin_counts, np.float64)
    b = counts.astype(np.float64)
    keep = (a + b) > 0
    stat = float((((a - b) ** 2)[keep] / (a + b)[keep]).sum())
    assert keep.sum() == 20
    assert stat <= CHI2_99_DF19


def test_sampling_is_deterministic():
    d = fit_empirical(np.arange(100.0), bins=7)
    assert np.array_equal(sample_matching(d, 50, 9), sample_matching(d, 50, 9))
    assert np.array_equal(sample_uniform_range(0, 1, 50, 9), sample_uniform_range(0, 1, 50, 9))


def test_uniform_range():
    s = sample_uniform_range(0.0, 0.4, 10_000, 0)
    assert s.min() >= 0.0 and s.max() <= 0.4
    tiny = sample_uniform_range(1.0, 1.0 + 1e-9, 100, 0)
    assert np.allclose(tiny, 1.0, atol=1e-9)
    with pytest.raises(ValueError):
        sample_uniform_range(1.0, 1.0, 3, 0)


def test_uniform_mean_within_clt_bound():
    lo, hi, n = -0.5, 2.0, 100_000
    s = sample_uniform_range(lo, hi, n, 5)
    sd = (hi - lo) / math.sqrt(12 * n)
    assert abs(s.mean() - (lo + hi) / 2) <= 3 * sd


def test_decoys_for_selection():
    m = build_resnet((3, 8, 8), 4, widths=(4, 6), seed=0)
    conv = select_conv_sampled(m)
    d = decoys_for(conv, m, seed=1)
    w = m.params[0]["weight"]
    assert len(d) == 4 and d.min() >= w.min() and d.max() <= w.max()
    g = decoys_for(select_bn_full_layer(m, 1), m, lo=0.0, hi=0.4, seed=1)
    assert g.min() >= 0 and g.max() <= 0.4
    sel = select_bn_full_layer(m, 1)
    sel.true_values[:] = [0.1, 0.2, 0.3, 0.4]
    mt = decoys_for(sel, m, mode="match", seed=2)
    assert mt.min() >= 0.1 and mt.max() <= 0.4
    with pytest.raises(ValueError):
        decoys_for(sel, m, mode="gauss")
