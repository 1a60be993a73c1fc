import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from normrecon.bounds import ParameterError, bound_eq2, without_replacement_cap
from normrecon.rademacher import (MaxBracketConfig, expected_trace_rad, finite_class_gap, fit_trace_rad_constant,
                                  ind_noise_gap_check, finite_class_excess_check, max_ball_rad_bracket,
                                  trace_ball_rad_exact, trace_ball_rad_mc)
from normrecon.rng import make_rng
from normrecon.sampling import WITH, WITHOUT, IndexSample, LocationDependentNoise, NoNoise, sample_indices


def brute_force_rad(sample, A):
    """Mean of ``A/s ||Q||_2`` over all ``2^s`` sign vectors, no symmetry shortcut."""
    total = 0.0
    for signs in itertools.product((-1.0, 1.0), repeat=sample.s):
        Q = np.zeros((sample.n, sample.m))
        np.add.at(Q, (sample.rows, sample.cols), signs)
        total += np.linalg.norm(Q, 2)
    return A / sample.s * total / 2**sample.s


CLOSED_FORM = [
    (IndexSample.from_pairs([(1, 2)], 3, 4), 1.0),
    (IndexSample.from_pairs([(0, 0), (0, 0)], 2, 2), 0.5),
    (IndexSample.from_pairs([(1, 0), (1, 3)], 3, 4), 1 / math.sqrt(2)),
]


@pytest.mark.parametrize("sample,factor", CLOSED_FORM)
def test_closed_form_cases_exact(sample, factor):
    A = 2.5
    est = trace_ball_rad_exact(sample, A)
    assert est.mean == pytest.approx(A * factor, rel=1e-14)
    assert est.std_error == 0.0 and est.mode == "exact"


def test_single_observation_is_A_under_monte_carlo():
    est = trace_ball_rad_mc(CLOSED_FORM[0][0], 3.0, num_mc=50, seed=1)
    assert est.mean == pytest.approx(3.0, rel=1e-14) and est.std_error == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("seed", range(4))
def test_half_enumeration_matches_full(seed):
    smp = sample_indices(3, 4, 9, WITH, seed=seed)
    assert trace_ball_rad_exact(smp, 1.3).mean == pytest.approx(brute_force_rad(smp, 1.3), rel=1e-12)


def test_monte_carlo_agrees_with_exact_on_twenty_samples():
    outside = 0
    for seed in range(20):
        rng = make_rng(seed, "rad-fixture")
        n, m = (int(v) for v in rng.integers(2, 7, size=2))
        smp = sample_indices(n, m, 10, WITH, seed=seed)
        exact = trace_ball_rad_exact(smp, 1.0).mean
        mc = trace_ball_rad_mc(smp, 1.0, num_mc=10_000, seed=seed)
        outside += abs(mc.mean - exact) > 3 * mc.std_error
    assert outside == 0


def test_exact_rejects_large_samples():
    with pytest.raises(ParameterError):
        trace_ball_rad_exact(sample_indices(5, 5, 17, WITH, seed=0), 1.0)
    with pytest.raises(ParameterError):
        trace_ball_rad_mc(sample_indices(2, 2, 2, WITH, seed=0), 1.0, num_mc=0)


def test_expected_rad_envelope_and_monotone():
    n = m = 8
    A = 1.0
    full = expected_trace_rad(n, m, n * m, A, sample_trials=10, mc_per_sample=100, seed=2)
    assert 0 < full.mean <= A / math.sqrt(n * m)
    small = expected_trace_rad(n, m, 32, A, sample_trials=10, mc_per_sample=100, seed=3)
    big = expected_trace_rad(n, m, 64, A, sample_trials=10, mc_per_sample=100, seed=4)
    assert big.mean < small.mean + 2 * math.hypot(big.std_error, small.std_error)


def test_fit_trace_rad_constant_recovers_planted_constant():
    from normrecon.bounds import bound_eq3
    cfgs = [(16, 16, 64, 4.0), (32, 32, 256, 2.0), (20, 30, 100, 1.0)]
    est = [(n, m, s, A, 0.7 * bound_eq3(A, n, m, s, 1.0)) for n, m, s, A in cfgs]
    assert fit_trace_rad_constant(est) == pytest.approx(0.7, rel=1e-12)


def test_max_bracket_single_observation_hits_A():
    lower, upper = max_ball_rad_bracket(IndexSample.from_pairs([(2, 1)], 3, 3), 1.7,
                                        MaxBracketConfig(num_mc=20))
    assert lower.mean == pytest.approx(1.7, rel=1e-9)
    # the sup is exactly A; the upper side only has to contain it
    assert upper >= 1.7 - 1e-12


def test_max_bracket_consistent_and_below_worst_case_bound():
    smp = sample_indices(16, 16, 64, WITH, seed=5)
    lower, upper = max_ball_rad_bracket(smp, 1.0, MaxBracketConfig(num_mc=40))
    assert lower.mean <= upper + 3 * lower.std_error
    assert lower.mean <= 12 * math.sqrt(32 / 64)
    assert upper <= bound_eq2(1.0, 16, 16, 64)
    for seed in range(3):
        smp = sample_indices(5, 4, 12, WITH, seed=seed)
        lo, up = max_ball_rad_bracket(smp, 0.8, MaxBracketConfig(num_mc=30, seed=seed))
        assert lo.mean <= up + 1e-12


def _integer_class(seed, size, n, m):
    rng = make_rng(seed, "class")
    return [rng.integers(-2, 3, size=(n, m)).astype(float) for _ in range(size)]


def test_gap_is_zero_for_singleton_truth():
    Y = np.arange(6.0).reshape(2, 3)
    res = finite_class_gap([Y], Y, 3, exact=True)
    assert res.expectation == {WITH: 0, WITHOUT: 0}
    mc = finite_class_gap([Y], Y, 3, exact=False, trials=200)
    assert mc.expectation[WITH] == 0.0 and mc.expectation[WITHOUT] == 0.0


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("s", [2, 3])
@pytest.mark.parametrize("loss", ["abs", "squared"])
def test_replacement_inequalities_exact(seed, s, loss):
    n, m = 2, 3
    Y = make_rng(seed, "Y").integers(-2, 3, size=(n, m)).astype(float)
    cls = _integer_class(seed, 1 + seed % 3, n, m)
    res = finite_class_gap(cls, Y, s, loss=loss, exact=True, max_multiplicity=2)
    assert res.exact and all(isinstance(v, Fraction) for v in res.expectation.values())
    assert res.violations == {"expectation": 0, "probability": 0, "capped_expectation": 0,
                              "capped_probability": 0}
    # exact probabilities come from integer counts over the ordered sample space
    assert all(p.denominator <= 6**s for p in res.exceedance[WITH])


def test_gap_total_probability_and_json_rationals():
    Y = np.array([[1.0, 0.0, -1.0], [2.0, 0.0, 1.0]])
    res = finite_class_gap(_integer_class(3, 2, 2, 3), Y, 3, exact=True)
    assert res.exceedance[WITH][0] == 1 and res.exceedance[WITHOUT][0] == 1
    js = res.as_json()
    assert all("/" in v or v.lstrip("-").isdigit() for v in js["expectation"].values())


def test_gap_sign_symmetry():
    Y = make_rng(4).integers(-2, 3, size=(2, 3)).astype(float)
    cls = _integer_class(4, 3, 2, 3)
    a = finite_class_gap(cls, Y, 3, exact=True)
    b = finite_class_gap([-X for X in cls], -Y, 3, exact=True)
    assert a.expectation == b.expectation and a.exceedance == b.exceedance


def test_gap_size_limits():
    with pytest.raises(ParameterError):
        finite_class_gap([np.zeros((2, 5))], np.zeros((2, 5)), 2, exact=True)
    with pytest.raises(ParameterError):
        finite_class_gap([np.zeros((2, 2))], np.zeros((2, 2)), 5)
    with pytest.raises(ParameterError):
        finite_class_gap([], np.zeros((2, 2)), 2)


def test_monte_carlo_gap_direction():
    rng = make_rng(8)
    Y = rng.standard_normal((3, 4))
    cls = [Y + rng.standard_normal((3, 4)) for _ in range(5)]
    res = finite_class_gap(cls, Y, 8, exact=False, trials=3000, seed=1)
    assert res.violations["expectation"] == 0


def test_ind_noise_cap_error_echoes_value():
    cap = without_replacement_cap(1, 2, 3)
    with pytest.raises(ParameterError, match=f"{cap:.6g}"):
        ind_noise_gap_check([np.zeros((2, 3))], np.zeros((2, 3)), NoNoise(), 2, 1)


def _two_point(n, m):
    vals = np.broadcast_to(np.array([-1.0, 2.0]), (n, m, 2)).copy()
    probs = np.broadcast_to(np.array([2 / 3, 1 / 3]), (n, m, 2)).copy()
    return LocationDependentNoise(vals, probs)


def test_ind_noise_exact_two_point():
    n, m = 2, 3
    M = np.array([[0.0, 1.0, -1.0], [1.0, 0.0, 0.0]])
    cls = [M, np.zeros((n, m)), np.ones((n, m))]
    rep = ind_noise_gap_check(cls, M, _two_point(n, m), 2, K=2, exact=True)
    assert rep["exact"] and rep["violations"] == 0
    assert all(isinstance(p, Fraction) for p in rep["p_without"])
    assert rep["p_without"][0] == 1


def test_ind_noise_without_noise_matches_class_gap_support():
    M = np.array([[1.0, 0.0, -1.0], [0.0, 2.0, 1.0]])
    cls = [M, np.zeros((2, 3))]
    rep = ind_noise_gap_check(cls, M, NoNoise(), 2, K=2, exact=True)
    ref = finite_class_gap(cls, M, 2, loss="squared", exact=True)
    assert set(rep["thresholds"]) <= set(ref.thresholds)
    assert rep["violations"] == 0


def test_ind_noise_monte_carlo():
    M = make_rng(1).uniform(-1, 1, (4, 4))
    cls = [M, np.zeros((4, 4)), 0.5 * M]
    rep = ind_noise_gap_check(cls, M, _two_point(4, 4), 6, K=2, trials=4000, seed=2)
    assert not rep["exact"] and rep["violations"] == 0


def test_excess_risk_within_twice_rademacher():
    rng = make_rng(12)
    Y = rng.standard_normal((4, 5))
    cls = [Y + 0.5 * rng.standard_normal((4, 5)) for _ in range(6)]
    rep = finite_class_excess_check(cls, Y, 15, trials=1000, num_mc=300, seed=3)
    assert rep["holds"] and rep["expected_risk"] >= rep["best_risk"] - 1e-12
