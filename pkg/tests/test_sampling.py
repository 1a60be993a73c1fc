import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from normrecon.bounds import ParameterError
from normrecon.linalg import numerical_rank
from normrecon.rng import child_seed, make_rng
from normrecon.sampling import (PER_ENTRY, PER_OBSERVATION, WITH, WITHOUT, AdversarialNoise, GaussianNoise,
                                IndexSample, LocationDependentNoise, NoNoise, ObservationSet, UniformNoise,
                                multiplicity_vector, noise_from_spec, noise_precondition_check, observe,
                                observe_all, planted_low_rank, reduce_multiplicity, sample_indices,
                                spiky_matrix)

from oracles import multiplicities


def test_child_seed_is_stable_and_tag_sensitive():
    assert child_seed(1, "a", 2) == child_seed(1, "a", 2)
    assert child_seed(1, "a", 2) != child_seed(1, "a", 3)
    assert make_rng(5, "x").integers(0, 2**31) == make_rng(5, "x").integers(0, 2**31)


def test_full_sample_without_replacement_hits_every_position_once():
    smp = sample_indices(4, 5, 20, WITHOUT, seed=3)
    assert sorted(smp.linear.tolist()) == list(range(20))
    assert multiplicity_vector(smp).tolist() == [20] + [0] * 19


def test_with_replacement_pairs_uniform_chi_square():
    counts = Counter()
    for seed in range(16000):
        smp = sample_indices(2, 2, 2, WITH, seed=seed)
        counts[tuple(smp.linear.tolist())] += 1
    observed = [counts[k] for k in itertools.product(range(4), repeat=2)]
    assert len(counts) == 16
    assert stats.chisquare(observed).pvalue > 0.001


def test_without_replacement_subsets_uniform():
    nm, s, draws = 6, 3, 100_000
    counts = Counter()
    for seed in range(draws):
        smp = sample_indices(2, 3, s, WITHOUT, seed=seed)
        counts[tuple(sorted(smp.linear.tolist()))] += 1
    k = math.comb(nm, s)
    assert len(counts) == k
    p = 1 / k
    se = math.sqrt(draws * p * (1 - p))
    assert max(abs(c - draws * p) for c in counts.values()) <= 5 * se


def test_without_replacement_order_is_uniform():
    counts = Counter(tuple(sample_indices(1, 3, 3, WITHOUT, seed=s).linear.tolist()) for s in range(6000))
    assert len(counts) == 6
    assert stats.chisquare(list(counts.values())).pvalue > 0.001


def test_sample_parameter_errors():
    with pytest.raises(ParameterError):
        sample_indices(2, 2, 5, WITHOUT)
    with pytest.raises(ParameterError):
        sample_indices(2, 2, 0, WITH)
    with pytest.raises(ParameterError):
        sample_indices(2, 2, 1, "sometimes")
    with pytest.raises(ValueError):
        IndexSample(np.array([0, 2]), np.array([0, 0]), 2, 2)


def test_multiplicity_examples():
    smp = IndexSample.from_pairs([(0, 0), (0, 0), (1, 1)], 2, 2)
    assert multiplicity_vector(smp).tolist() == [1, 1, 0]
    distinct = sample_indices(5, 5, 7, WITHOUT, seed=1)
    assert multiplicity_vector(distinct).tolist() == [7, 0, 0, 0, 0, 0, 0]
    smp = sample_indices(2, 2, 6, WITH, seed=5)
    assert multiplicity_vector(smp).tolist() == multiplicities(smp.pairs.tolist(), 6)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 30), st.integers(0, 10**9))
def test_multiplicity_identity_property(n, m, s, seed):
    smp = sample_indices(n, m, s, WITH, seed=seed)
    N = multiplicity_vector(smp)
    assert int(np.dot(np.arange(1, s + 1), N)) == s and np.all(N >= 0)
    assert N.tolist() == multiplicities(smp.pairs.tolist(), s)


def test_reduce_multiplicity():
    assert reduce_multiplicity([2, 1, 0], 2) == ([4, 0, 0], [2, 0, 0])
    assert reduce_multiplicity([1, 0, 1], 3) == ([4, 0, 0], [1, 0, 0])
    assert reduce_multiplicity([1, 2, 1], 3) == ([4, 2, 0], [1, 2, 0])
    # both derived vectors keep the total minus what was stripped
    Np, Npp = reduce_multiplicity([1, 2, 1], 3)
    assert sum((i + 1) * c for i, c in enumerate(Np)) == 1 + 4 + 3
    assert sum((i + 1) * c for i, c in enumerate(Npp)) == 1 + 4
    assert reduce_multiplicity([3, 0], 1) == ([3, 0], [0, 0])
    with pytest.raises(ValueError):
        reduce_multiplicity([1, 1], 1)


def test_observe_noise_free_and_deterministic():
    M = make_rng(0).standard_normal((4, 3))
    smp = sample_indices(4, 3, 9, WITH, seed=2)
    obs = observe(M, smp)
    assert np.array_equal(obs.values, M[smp.rows, smp.cols])
    a = observe(M, smp, GaussianNoise(1.0), PER_OBSERVATION, seed=4)
    b = observe(M, smp, GaussianNoise(1.0), PER_OBSERVATION, seed=4)
    assert np.array_equal(a.values, b.values)


def _groups(obs):
    g = {}
    for lin, v in zip(obs.linear.tolist(), obs.values.tolist()):
        g.setdefault(lin, set()).add(v)
    return g


def test_per_entry_repeats_agree_and_per_observation_differ():
    M = np.zeros((2, 2))
    smp = IndexSample.from_pairs([(0, 1)] * 5 + [(1, 0)] * 3, 2, 2)
    pe = observe(M, smp, GaussianNoise(1.0), PER_ENTRY, seed=1)
    assert all(len(v) == 1 for v in _groups(pe).values())
    po = observe(M, smp, GaussianNoise(1.0), PER_OBSERVATION, seed=1)
    assert all(len(v) > 1 for v in _groups(po).values())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**9), st.sampled_from(["gaussian", "uniform", "two_point"]))
def test_per_entry_consistency_property(seed, kind):
    smp = sample_indices(3, 3, 20, WITH, seed=seed)
    noise = noise_from_spec(kind, 0.7, 3, 3)
    obs = observe(np.ones((3, 3)), smp, noise, PER_ENTRY, seed=seed)
    assert all(len(v) == 1 for v in _groups(obs).values())


def test_per_observation_law_of_large_numbers():
    M = np.array([[0.3, -1.2]])
    smp = IndexSample.from_pairs([(0, 1)] * 10_000, 1, 2)
    obs = observe(M, smp, GaussianNoise(1.0), PER_OBSERVATION, seed=9)
    assert abs(obs.values.mean() - M[0, 1]) <= 4 / math.sqrt(10_000)
    assert abs(obs.values.var(ddof=1) - 1.0) <= 0.1


def test_adversarial_noise_semantics():
    Z = np.array([[0.0, 5.0], [1.0, 1.0]])
    smp = sample_indices(2, 2, 6, WITH, seed=0)
    obs = observe(np.zeros((2, 2)), smp, AdversarialNoise(Z), PER_ENTRY)
    assert np.array_equal(obs.values, Z[smp.rows, smp.cols])
    with pytest.raises(ParameterError):
        observe(np.zeros((2, 2)), smp, AdversarialNoise(Z), PER_OBSERVATION)
    with pytest.raises(ParameterError):
        observe(np.zeros((2, 2)), smp, AdversarialNoise(np.zeros((3, 3))), PER_ENTRY)


def test_location_dependent_validation_and_moments():
    vals = np.array([[[-1.0, 2.0]]])
    with pytest.raises(ValueError, match="mean zero"):
        LocationDependentNoise(vals, np.array([[[0.5, 0.5]]]))
    ok = LocationDependentNoise(vals, np.array([[[2 / 3, 1 / 3]]]))
    assert ok.second_moment(1, 1)[0, 0] == pytest.approx(2 / 3 + 4 / 3)
    draws = ok.draw(make_rng(0), np.zeros(30000, int), np.zeros(30000, int))
    assert set(np.unique(draws)) == {-1.0, 2.0}
    assert abs(draws.mean()) < 0.05
    with pytest.raises(ValueError):
        LocationDependentNoise(vals, np.array([[[0.7, 0.7]]]))


def test_noise_second_moments():
    assert GaussianNoise(0.5).second_moment(2, 2)[0, 0] == 0.25
    assert UniformNoise(3.0).second_moment(1, 1)[0, 0] == pytest.approx(3.0)
    assert NoNoise().second_moment(1, 1)[0, 0] == 0.0
    with pytest.raises(ParameterError):
        noise_from_spec("laplace")


def test_noise_precondition_examples():
    rep = noise_precondition_check(np.zeros((3, 3)), 1)
    assert rep["passes_lenient"] and rep["passes_strict"]
    Z = np.zeros((100, 100))
    Z[3, 4] = 5.0
    rep = noise_precondition_check(Z, 2)
    assert rep["threshold"] == pytest.approx(math.sqrt(200 / math.log(100)))
    assert rep["threshold"] == pytest.approx(6.59, abs=0.01)
    assert rep["strict_threshold"] == pytest.approx(3.03, abs=0.01)
    assert rep["passes_lenient"] and not rep["passes_strict"]
    assert rep["passed"] and not noise_precondition_check(Z, 2, strict=True)["passed"]


def test_gaussian_noise_usually_passes_lenient_check():
    passes = sum(noise_precondition_check(make_rng(s, "pre").standard_normal((100, 100)), 2)["passed"]
                 for s in range(100))
    assert passes >= 99


def test_spiky_matrix_invariants():
    for n, m, r, seed in [(6, 8, 2, 0), (10, 10, 3, 1), (5, 4, 1, 2)]:
        Y = spiky_matrix(n, m, r, seed)
        assert (Y**2).mean() == pytest.approx(1.0, abs=1e-12)
        assert np.abs(Y).max() ** 2 == pytest.approx(m / r, rel=1e-12)
        assert numerical_rank(Y) <= r
        assert np.all(Y[:, r:] == 0)
    with pytest.raises(ParameterError):
        spiky_matrix(3, 3, 4)


def test_planted_low_rank_scale():
    M = planted_low_rank(30, 20, 3, seed=1)
    assert np.abs(M).max() <= 1 + 1e-12
    assert numerical_rank(M) == 3


def test_observation_file_roundtrip(tmp_path):
    M = make_rng(1).standard_normal((3, 4))
    obs = observe(M, sample_indices(3, 4, 7, WITH, seed=1), GaussianNoise(0.3), PER_OBSERVATION, seed=2)
    path = tmp_path / "obs.txt"
    obs.write(path)
    assert path.read_text().splitlines()[0] == "3 4 7 per_observation"
    back = ObservationSet.read(path)
    assert np.array_equal(back.values, obs.values) and np.array_equal(back.rows, obs.rows)
    assert back.semantics == PER_OBSERVATION
    path.write_text("3 4 2 per_entry\n0 0 1.0\n")
    with pytest.raises(ValueError):
        ObservationSet.read(path)


def test_observe_all():
    Y = np.arange(6.0).reshape(2, 3)
    obs = observe_all(Y)
    assert obs.s == 6 and np.array_equal(obs.values, Y.ravel())
