"""Small solver fixtures shared by the estimator and acceptance tests."""

import math

import numpy as np

from normrecon.rng import make_rng
from normrecon.sampling import WITH, WITHOUT, IndexSample, observe, sample_indices

CONSTRAINTS = ("trace", "max", "trace_box", "max_box")
LOSSES = ("abs", "squared")


def oracle_fixtures():
    """``(name, obs, A, B)`` on 2x2 and 3x3 grids with binding radii.

    Values are drawn in ``[-2, 2]``; ``A = 0.4`` is small enough to bind on most of them and ``B = 0.8 |y|_inf``.
    """
    out = []
    specs = [(2, 2, 3, WITH, 0), (2, 2, 6, WITH, 1), (2, 2, 4, WITHOUT, 2),
             (3, 3, 7, WITH, 3), (3, 3, 9, WITHOUT, 4), (3, 3, 12, WITH, 5)]
    for n, m, s, mode, seed in specs:
        rng = make_rng(seed, "fixture")
        Y = rng.uniform(-2, 2, size=(n, m))
        obs = observe(Y, sample_indices(n, m, s, mode, seed=seed))
        B = 0.8 * float(np.abs(obs.values).max())
        out.append((f"{n}x{m}-s{s}-{mode[:4]}", obs, 0.4, B))
    # a repeated position with conflicting per-observation values
    smp = IndexSample.from_pairs([(0, 0), (0, 0), (1, 1), (0, 1)], 2, 2)
    obs = observe(np.array([[1.0, -1.0], [0.5, 2.0]]), smp)
    obs = type(obs)(obs.rows, obs.cols, np.array([1.5, 0.5, 2.0, -1.0]), 2, 2, "per_observation")
    out.append(("2x2-conflicting-repeats", obs, 0.9, 1.2))
    return out


def relative_gap(value, reference, scale=1.0):
    """``|value - reference| / reference``, with the denominator floored at ``1e-6 * scale``
    so that objectives at optimisation-tolerance level compare absolutely."""
    return abs(value - reference) / max(abs(reference), 1e-6 * scale)


def rank_one(seed, n=6, m=5):
    rng = make_rng(seed, "rank-one")
    u, v = rng.uniform(-1, 1, n), rng.uniform(-1, 1, m)
    return np.outer(u, v)


def full_radius(X):
    return math.sqrt(float(np.sum(X * X)))
