import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from scsg.sampling import (
    GeomParam,
    ParameterError,
    RandomStream,
    derive_stream,
    sample_geometric,
    sample_subset,
    sample_weighted_index,
)

labels = st.one_of(st.text(max_size=8), st.integers(min_value=-(2**40), max_value=2**40))
seeds = st.integers(min_value=0, max_value=2**64 - 1)


# streams -------------------------------------------------------------------


def test_derive_appends_label():
    child = derive_stream(RandomStream(7), "epoch:1")
    assert child.seed == 7
    assert child.path == ("epoch:1",)


def test_derive_is_repeatable():
    a = derive_stream(RandomStream(7), "epoch:1").uniform(50)
    b = derive_stream(RandomStream(7), "epoch:1").uniform(50)
    assert a.tobytes() == b.tobytes()


def test_derived_streams_uncorrelated():
    root = RandomStream(7)
    a = derive_stream(root, "a").uniform(10**4)
    b = derive_stream(root, "b").uniform(10**4)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05


def test_derivation_does_not_consume_parent():
    parent = RandomStream(3)
    derive_stream(parent, "x").uniform(10)
    assert parent.uniform(5).tobytes() == RandomStream(3).uniform(5).tobytes()


@given(seeds, st.lists(labels, max_size=4))
@settings(max_examples=60, deadline=None)
def test_stream_is_function_of_seed_and_path(seed, path):
    a = RandomStream(seed, tuple(path))
    b = RandomStream(seed)
    for label in path:
        b = derive_stream(b, label)
    assert a == b
    assert a.integers(1000, size=8).tolist() == b.integers(1000, size=8).tolist()


def test_int_and_str_labels_differ():
    assert RandomStream(1, (1,)).uniform(4).tolist() != RandomStream(1, ("1",)).uniform(4).tolist()


def test_uniform_excludes_zero():
    u = RandomStream(0).uniform(10**5)
    assert np.all(u > 0) and np.all(u <= 1)


def test_seed_range_checked():
    with pytest.raises(ParameterError):
        RandomStream(-1)
    with pytest.raises(ParameterError):
        RandomStream(2**64)


# geometric -----------------------------------------------------------------


def test_geometric_gamma_zero():
    assert sample_geometric(RandomStream(1), 0.0) == 0
    assert np.all(sample_geometric(RandomStream(1), 0.0, size=100) == 0)


@pytest.mark.parametrize("gamma", [-0.1, 1.0, 1.5, math.nan])
def test_geometric_rejects_bad_gamma(gamma):
    with pytest.raises(ParameterError):
        sample_geometric(RandomStream(1), gamma)


def test_geom_param_from_batch():
    p = GeomParam.from_batch(120, 1)
    assert p.gamma == pytest.approx(120 / 121)
    assert p.mean == pytest.approx(120.0)


@pytest.mark.parametrize("gamma", [0.5, 100 / 101])
def test_geometric_mean(gamma):
    draws = 10**5
    N = sample_geometric(RandomStream(5, ("mean", str(gamma))), gamma, size=draws)
    mean = gamma / (1 - gamma)
    se = math.sqrt(gamma) / (1 - gamma) / math.sqrt(draws)
    assert abs(N.mean() - mean) <= 3 * se


@pytest.mark.parametrize("gamma", [0.3, 0.5, 0.9])
def test_geometric_chi_square(gamma):
    draws = 10**5
    N = sample_geometric(RandomStream(11, ("chi2", str(gamma))), gamma, size=draws)
    obs = np.bincount(np.minimum(N, 20), minlength=21)
    k = np.arange(20)
    probs = np.append(gamma**k * (1 - gamma), gamma**20)
    assert stats.chisquare(obs, probs * draws).pvalue > 0.01


def test_geometric_scalar_and_vector_agree():
    s = RandomStream(9)
    assert int(sample_geometric(s, 0.7)) == int(sample_geometric(RandomStream(9), 0.7, size=1)[0])


@given(seeds, st.floats(min_value=0.0, max_value=0.999))
@settings(max_examples=50, deadline=None)
def test_geometric_nonnegative_and_deterministic(seed, gamma):
    a = sample_geometric(RandomStream(seed), gamma, size=20)
    b = sample_geometric(RandomStream(seed), gamma, size=20)
    assert np.all(a >= 0)
    assert a.tolist() == b.tolist()


# subsets -------------------------------------------------------------------


def test_full_subset():
    assert sample_subset(RandomStream(0), 5, 5).tolist() == [0, 1, 2, 3, 4]


@pytest.mark.parametrize("n,m", [(5, 0), (3, 4), (0, 0)])
def test_subset_rejects_bad_sizes(n, m):
    with pytest.raises(ParameterError):
        sample_subset(RandomStream(0), n, m)


def test_subset_two_choose_one_frequency():
    s = RandomStream(3)
    picks = [int(sample_subset(s, 2, 1)[0]) for _ in range(10**4)]
    assert abs(np.mean(picks) - 0.5) <= 0.02


def test_subset_average_variance_pm_one():
    pop = np.array([1.0, -1.0])
    s = RandomStream(4)
    vals = [pop[sample_subset(s, 2, 1)].mean() ** 2 for _ in range(1000)]
    assert np.mean(vals) == 1.0
    M, m = 2, 1
    assert (M - m) / ((M - 1) * m) * np.mean(pop**2) == 1.0


@given(seeds, st.integers(min_value=1, max_value=300), st.data())
@settings(max_examples=80, deadline=None)
def test_subset_sorted_distinct_in_range(seed, n, data):
    m = data.draw(st.integers(min_value=1, max_value=n))
    idx = sample_subset(RandomStream(seed), n, m)
    assert len(idx) == m
    assert np.all(np.diff(idx) > 0)
    assert idx[0] >= 0 and idx[-1] < n


ALL_SMALL = [(n, m) for n in range(1, 7) for m in range(1, n + 1)]


@pytest.mark.parametrize("n,m", ALL_SMALL)
def test_subset_uniform_small(n, m):
    combos = {c: i for i, c in enumerate(itertools.combinations(range(n), m))}
    s = RandomStream(12, ("uniform", n, m))
    draws = 10**5
    counts = np.zeros(len(combos))
    for _ in range(draws):
        counts[combos[tuple(sample_subset(s, n, m).tolist())]] += 1
    if len(combos) == 1:
        assert counts[0] == draws
    else:
        assert stats.chisquare(counts).pvalue > 0.01


# weighted index ------------------------------------------------------------


def test_weighted_single():
    assert sample_weighted_index(RandomStream(0), [1]) == 0


@pytest.mark.parametrize("weights,target", [([1, 1, 1], [1 / 3] * 3), ([1, 3], [0.25, 0.75])])
def test_weighted_frequencies(weights, target):
    s = RandomStream(13)
    counts = np.bincount([sample_weighted_index(s, weights) for _ in range(10**4)], minlength=len(weights))
    assert np.all(np.abs(counts / 10**4 - target) <= 0.02)


@pytest.mark.parametrize("weights", [[], [0, 0], [1, -1], [1, math.inf], [math.nan]])
def test_weighted_rejects(weights):
    with pytest.raises(ParameterError):
        sample_weighted_index(RandomStream(0), weights)


@given(seeds, st.lists(st.floats(min_value=0, max_value=1e6), min_size=1, max_size=10))
@settings(max_examples=80, deadline=None)
def test_weighted_never_picks_zero_weight(seed, weights):
    if sum(weights) <= 0:
        weights = weights + [1.0]
    k = sample_weighted_index(RandomStream(seed), weights)
    assert 0 <= k < len(weights)
    assert weights[k] > 0
