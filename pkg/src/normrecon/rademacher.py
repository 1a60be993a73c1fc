"""Rademacher complexities of norm balls and sampling-scheme comparisons.

For a sample of positions ``(i_t, j_t)`` and signs ``xi``, let
``Q = sum_t xi_t e_{i_t j_t}``. The empirical Rademacher complexity of the
trace ball of radius ``A`` is ``A / s * E ||Q||_2``. For the max ball the
supremum is computed by alternating exact maximisation over a factorisation.
That gives a certified lower bound for each sign vector.

The finite-class utilities compare the uniform deviation
``sup_X L(X) - Lhat_S(X)`` under sampling with and without replacement.
Here ``L`` is the full-matrix mean loss and ``Lhat_S`` is the mean over the
sample.
"""

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .bounds import ParameterError, bound_eq2, bound_eq3, without_replacement_cap
from .linalg import as_matrix, batch_spectral_norm
from .rng import make_rng
from .sampling import WITH, WITHOUT, LocationDependentNoise, NoNoise, sample_indices

EXACT_MAX_S = 16


@dataclass(frozen=True)
class RadEstimate:
    mean: float
    std_error: float
    num_mc: int
    mode: str
    ball: str
    A: float
    s: int

    def as_dict(self):
        return {"mean": self.mean, "std_error": self.std_error, "num_mc": self.num_mc,
                "mode": self.mode, "ball": self.ball, "A": self.A, "s": self.s}


def _sign_matrices(lin, n, m, xi):
    """Stack of ``Q`` matrices, one per row of ``xi``; repeated positions accumulate."""
    b, s = xi.shape
    nm = n * m
    idx = (np.arange(b)[:, None] * nm + lin[None, :]).ravel()
    return np.bincount(idx, weights=xi.ravel(), minlength=b * nm).reshape(b, n, m)


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def _spectral_draws(sample, num_mc, seed, batch=512):
    rng = make_rng(seed, "rad-signs", sample.n, sample.m, sample.s)
    out = []
    left = num_mc
    while left > 0:
        b = min(batch, left)
        xi = rng.choice([-1.0, 1.0], size=(b, sample.s))
        out.append(batch_spectral_norm(_sign_matrices(sample.linear, sample.n, sample.m, xi)))
        left -= b
    return np.concatenate(out)


def trace_ball_rad_mc(sample, A, num_mc=1000, seed=0):
    """Monte-Carlo ``A/s E ||Q||_2`` over ``num_mc`` uniform sign vectors."""
    if num_mc < 1:
        raise ParameterError("num_mc must be at least 1")
    vals = A / sample.s * _spectral_draws(sample, num_mc, seed)
    mean, se = _mean_se(vals)
    return RadEstimate(mean, se, num_mc, "monte_carlo", "trace", A, sample.s)


def trace_ball_rad_exact(sample, A):
    """Exact expectation over all sign vectors.

    ``||Q||`` is invariant under a global sign flip, so only the ``2^(s-1)``
    vectors with ``xi_1 = +1`` are enumerated.
    """
    s = sample.s
    if s > EXACT_MAX_S:
        raise ParameterError(f"exact enumeration needs s <= {EXACT_MAX_S}, got {s}")
    bits = (np.arange(2 ** (s - 1))[:, None] >> np.arange(s - 1)[None, :]) & 1
    xi = np.hstack([np.ones((len(bits), 1)), 1.0 - 2.0 * bits])
    norms = batch_spectral_norm(_sign_matrices(sample.linear, sample.n, sample.m, xi))
    return RadEstimate(float(A / s * norms.mean()), 0.0, len(xi), "exact", "trace", A, s)


def expected_trace_rad(n, m, s, A, sample_trials=20, mc_per_sample=200, seed=0):
    """Average of :func:`trace_ball_rad_mc` over fresh with-replacement samples.

    The standard error is taken across the per-sample means, so it covers
    both the sampling and the sign randomness.
    """
    if sample_trials < 1:
        raise ParameterError("sample_trials must be at least 1")
    means = []
    inner = None
    for t in range(sample_trials):
        smp = sample_indices(n, m, s, WITH, seed=make_rng(seed, "rad-sample", t).integers(2**63))
        inner = trace_ball_rad_mc(smp, A, mc_per_sample, seed=seed * 1_000_003 + t)
        means.append(inner.mean)
    mean, se = _mean_se(means)
    if sample_trials == 1:
        se = inner.std_error
    return RadEstimate(mean, se, sample_trials * mc_per_sample, "monte_carlo", "trace", A, s)


def fit_trace_rad_constant(estimates):
    """Least-squares ``K`` for ``estimate ~ K * bound_eq3(..., K=1)``.

    ``estimates`` is a list of ``(n, m, s, A, value)`` tuples.
    """
    b = np.array([bound_eq3(A, n, m, s, 1.0) for n, m, s, A, _ in estimates])
    y = np.array([v for *_, v in estimates])
    return float(np.dot(b, y) / np.dot(b, b))


# -- max ball -------------------------------------------------------------------

@dataclass(frozen=True)
class MaxBracketConfig:
    num_mc: int = 200
    restarts: int = 3
    steps: int = 300
    rank: Optional[int] = None
    seed: int = 0


def _normalise_rows(W, fallback):
    norms = np.linalg.norm(W, axis=-1, keepdims=True)
    return np.where(norms > 1e-300, W / np.where(norms > 0, norms, 1.0), fallback)


def _max_ball_sup(Q, A, k, restarts, steps, rng):
    """Lower bounds on ``sup_{||X||_max <= A} <Q, X>`` for a stack of ``Q``.

    Alternates the exact maximisers ``U_i = sqrt(A) unit((Q V)_i)`` and
    ``V_j = sqrt(A) unit((Q^T U)_j)``. Each step is monotone, and every
    iterate is a feasible point.
    """
    b, n, m = Q.shape
    best = np.full(b, -np.inf)
    for _ in range(restarts):
        V = _normalise_rows(rng.standard_normal((b, m, k)), 0.0)
        U = _normalise_rows(rng.standard_normal((b, n, k)), 0.0)
        Qt = Q.transpose(0, 2, 1)
        val = np.einsum("bjk,bjk->b", Qt @ U, V)
        for _ in range(steps):
            U = _normalise_rows(Q @ V, U)
            QtU = Qt @ U
            V = _normalise_rows(QtU, V)
            new = np.einsum("bjk,bjk->b", QtU, V)
            if np.all(new - val <= 1e-13 * np.maximum(np.abs(new), 1.0)):
                val = new
                break
            val = new
        best = np.maximum(best, A * val)
    return best


def max_ball_rad_bracket(sample, A, cfg=None):
    """``(lower, upper)`` for the empirical Rademacher complexity of ``{||X||_max <= A}``.

    ``lower`` is a Monte-Carlo mean of certified per-sign lower bounds.
    ``upper`` is the smaller of ``12 sqrt(A^2 (n+m) / s)`` and
    ``A sqrt(nm) / s E||Q||_2`` on the same sign draws. The second follows
    from ``||X||_trace <= sqrt(nm) ||X||_max``.
    """
    cfg = cfg or MaxBracketConfig()
    n, m, s = sample.n, sample.m, sample.s
    k = cfg.rank or int(math.ceil(math.sqrt(2 * (n + m)))) + 1
    rng = make_rng(cfg.seed, "max-bracket", n, m, s)
    lows, specs = [], []
    left = cfg.num_mc
    while left > 0:
        b = min(64, left)
        xi = rng.choice([-1.0, 1.0], size=(b, s))
        Q = _sign_matrices(sample.linear, n, m, xi)
        lows.append(_max_ball_sup(Q, A, k, cfg.restarts, cfg.steps, rng) / s)
        specs.append(batch_spectral_norm(Q))
        left -= b
    mean, se = _mean_se(np.concatenate(lows))
    trace_upper = A * math.sqrt(n * m) / s * float(np.concatenate(specs).mean())
    upper = min(bound_eq2(A, n, m, s), trace_upper)
    return RadEstimate(mean, se, cfg.num_mc, "monte_carlo", "max", A, s), upper


# -- finite classes and sampling schemes ---------------------------------------

def _loss(a, loss):
    return abs(a) if loss == "abs" else a * a


@dataclass
class FiniteClassGapResult:
    class_size: int
    s: int
    exact: bool
    expectation: dict
    std_error: dict
    thresholds: list = field(default_factory=list)
    exceedance: dict = field(default_factory=dict)
    violations: dict = field(default_factory=dict)

    def as_json(self):
        def fmt(v):
            return f"{v.numerator}/{v.denominator}" if isinstance(v, Fraction) else v
        return {
            "class_size": self.class_size, "s": self.s, "exact": self.exact,
            "expectation": {k: fmt(v) for k, v in self.expectation.items()},
            "expectation_float": {k: float(v) for k, v in self.expectation.items()},
            "std_error": self.std_error,
            "thresholds": [fmt(c) for c in self.thresholds],
            "exceedance": {k: [fmt(p) for p in v] for k, v in self.exceedance.items()},
            "violations": self.violations,
        }


def _ordered_samples(nm, s, cap):
    """All ordered samples of length ``s`` in which no position appears more than ``cap`` times."""
    for seq in itertools.product(range(nm), repeat=s):
        if cap >= s or max(seq.count(p) for p in set(seq)) <= cap:
            yield seq


def _class_tables(class_matrices, Y, loss, exact):
    Y = as_matrix(Y, "Y")
    mats = [as_matrix(X, "class member") for X in class_matrices]
    if not mats:
        raise ParameterError("class must be nonempty")
    if any(X.shape != Y.shape for X in mats):
        raise ParameterError("class members must match the shape of Y")
    nm = Y.size
    if exact:
        conv = Fraction
        losses = [[_loss(conv(float(x)) - conv(float(y)), loss) for x, y in zip(X.ravel(), Y.ravel())]
                  for X in mats]
        pop = [sum(row, Fraction(0)) / nm for row in losses]
    else:
        losses = np.array([_loss(X.ravel() - Y.ravel(), loss) for X in mats])
        pop = losses.mean(1)
    return losses, pop


def _gap_exact(seq, losses, pop):
    s = len(seq)
    return max(p - sum(row[q] for q in seq) / s for row, p in zip(losses, pop))


def _exceedance(gaps_with_counts, total, thresholds):
    """``P(gap >= c)`` as exact rationals for each threshold."""
    items = sorted(gaps_with_counts.items())
    out = []
    for c in thresholds:
        out.append(Fraction(sum(w for g, w in items if g >= c), total))
    return out


def finite_class_gap(class_matrices, Y, s, loss="abs", exact=True, trials=2000, seed=0,
                     max_multiplicity=None):
    """Distribution of ``sup_X L(X) - Lhat_S(X)`` with and without replacement.

    In exact mode every ordered sample is enumerated (``nm <= 9``, ``s <= 4``)
    and the results are rationals. The report carries both expectations and
    ``P(gap >= c)`` at every achievable threshold. It also counts violations of

    * ``E_wo <= E_w``, and
    * ``P_wo(>= c) <= 4 s P_w(>= c)``.

    ``max_multiplicity = r`` adds a third arm: uniform over ordered samples
    with no position repeated more than ``r`` times. For that arm it checks
    ``E_wo <= E_r`` and ``P_wo(>= c) <= r! P_r(>= c)``.
    """
    losses, pop = _class_tables(class_matrices, Y, loss, exact)
    Y = as_matrix(Y)
    nm = Y.size
    if s < 1:
        raise ParameterError("s must be at least 1")
    if s > nm:
        raise ParameterError("s exceeds n*m, so sampling without replacement is impossible")
    if exact:
        if nm > 9 or s > 4:
            raise ParameterError("exact mode needs n*m <= 9 and s <= 4")
        arms = {WITH: s, WITHOUT: 1}
        if max_multiplicity is not None:
            arms["capped"] = max_multiplicity
        dists = {}
        for arm, cap in arms.items():
            counts = {}
            for seq in _ordered_samples(nm, s, cap):
                g = _gap_exact(seq, losses, pop)
                counts[g] = counts.get(g, 0) + 1
            dists[arm] = counts
        totals = {a: sum(d.values()) for a, d in dists.items()}
        expectation = {a: sum(g * c for g, c in d.items()) / totals[a] for a, d in dists.items()}
        thresholds = sorted(set().union(*[set(d) for d in dists.values()]))
        exceed = {a: _exceedance(d, totals[a], thresholds) for a, d in dists.items()}
        viol = {
            "expectation": int(expectation[WITHOUT] > expectation[WITH]),
            "probability": sum(int(pw > 4 * s * p) for pw, p in zip(exceed[WITHOUT], exceed[WITH])),
        }
        if max_multiplicity is not None:
            r = max_multiplicity
            viol["capped_expectation"] = int(expectation[WITHOUT] > expectation["capped"])
            viol["capped_probability"] = sum(
                int(pw > math.factorial(r) * p) for pw, p in zip(exceed[WITHOUT], exceed["capped"]))
        return FiniteClassGapResult(len(losses), s, True, expectation,
                                    {a: 0.0 for a in dists}, thresholds, exceed, viol)

    rng = make_rng(seed, "class-gap", nm, s)
    out, ses, gaps = {}, {}, {}
    for arm in (WITH, WITHOUT):
        g = np.empty(trials)
        for t in range(trials):
            if arm == WITH:
                seq = rng.integers(0, nm, size=s)
            else:
                seq = rng.choice(nm, size=s, replace=False)
            g[t] = np.max(pop - losses[:, seq].mean(1))
        gaps[arm] = g
        out[arm], ses[arm] = _mean_se(g)
    thresholds = sorted(set(np.quantile(gaps[WITHOUT], np.linspace(0, 1, 21)).tolist()))
    exceed = {a: [float(np.mean(g >= c)) for c in thresholds] for a, g in gaps.items()}
    se_diff = math.hypot(ses[WITH], ses[WITHOUT])
    viol = {"expectation": int(out[WITHOUT] > out[WITH] + 3 * se_diff)}
    return FiniteClassGapResult(len(losses), s, False, out, ses, thresholds, exceed, viol)


def _noise_table(noise, n, m):
    """Per-entry ``(values, probs)`` as exact rationals."""
    if isinstance(noise, NoNoise):
        return [[([Fraction(0)], [Fraction(1)]) for _ in range(m)] for _ in range(n)]
    if isinstance(noise, LocationDependentNoise):
        return [[([Fraction(float(v)) for v in noise.values[i, j]],
                  [Fraction(float(p)).limit_denominator(10**9) for p in noise.probs[i, j]])
                 for j in range(m)] for i in range(n)]
    raise ParameterError("exact mode needs NoNoise or a LocationDependentNoise table")


def ind_noise_gap_check(class_matrices, M, noise, s, K, trials=20000, seed=0, exact=False,
                        thresholds=None):
    """Independent-noise comparison of sampling without and with replacement.

    Sampling with replacement redraws noise on every observation. Sampling
    without replacement sees each position once, with one draw. The loss is
    squared, and ``L(X)`` includes the noise variance. The check is
    ``P_wo(gap >= c) <= 4K P_w(gap >= c / (2K))`` at each threshold. It
    requires ``s <= (K+1)/e (nm)^(1 - 1/(K+1))``.

    This is a numerical consistency check, not a proof.
    """
    M = as_matrix(M, "M")
    n, m = M.shape
    nm = n * m
    cap = without_replacement_cap(K, n, m)
    if s > cap:
        raise ParameterError(f"s = {s} exceeds the cap (K+1)/e (nm)^(1-1/(K+1)) = {cap:.6g} for K = {K}")
    mats = [as_matrix(X, "class member") for X in class_matrices]
    if not mats:
        raise ParameterError("class must be nonempty")

    if exact:
        if nm > 9 or s > 3:
            raise ParameterError("exact mode needs n*m <= 9 and s <= 3")
        table = _noise_table(noise, n, m)
        Mf = [Fraction(float(v)) for v in M.ravel()]
        Xs = [[Fraction(float(v)) for v in X.ravel()] for X in mats]
        second = [sum(p * v * v for v, p in zip(*table[q // m][q % m])) for q in range(nm)]
        pop = [sum((Mf[q] - X[q]) ** 2 + second[q] for q in range(nm)) / nm for X in Xs]
        dists = {}
        for arm, cap_r in ((WITH, s), (WITHOUT, 1)):
            dist = {}
            for seq in _ordered_samples(nm, s, cap_r):
                outcomes = [list(zip(*table[q // m][q % m])) for q in seq]
                for combo in itertools.product(*outcomes):
                    prob = Fraction(1)
                    for _, p in combo:
                        prob *= p
                    if prob == 0:
                        continue
                    y = [Mf[q] + z for q, (z, _) in zip(seq, combo)]
                    g = max(p - sum((yy - X[q]) ** 2 for yy, q in zip(y, seq)) / s
                            for X, p in zip(Xs, pop))
                    dist[g] = dist.get(g, 0) + prob
            total = sum(dist.values())
            dists[arm] = {g: w / total for g, w in dist.items()}
        cs = sorted(dists[WITHOUT]) if thresholds is None else [Fraction(c) for c in thresholds]
        lhs = [sum(w for g, w in dists[WITHOUT].items() if g >= c) for c in cs]
        rhs = [4 * K * sum(w for g, w in dists[WITH].items() if g >= c / (2 * K)) for c in cs]
        margins = [r - l for l, r in zip(lhs, rhs)]
        return {"exact": True, "K": K, "cap": cap, "s": s, "thresholds": cs, "p_without": lhs,
                "rhs": rhs, "margins": margins, "violations": sum(int(x < 0) for x in margins)}

    rng = make_rng(seed, "ind-gap", nm, s, K)
    second = noise.second_moment(n, m).ravel()
    pop = np.array([np.mean((M - X).ravel() ** 2 + second) for X in mats])
    flat = np.array([X.ravel() for X in mats])
    Mr = M.ravel()
    gaps = {}
    for arm in (WITH, WITHOUT):
        g = np.empty(trials)
        for t in range(trials):
            seq = rng.integers(0, nm, size=s) if arm == WITH else rng.choice(nm, size=s, replace=False)
            z = noise.draw(rng, seq // m, seq % m)
            y = Mr[seq] + z
            g[t] = np.max(pop - ((y[None, :] - flat[:, seq]) ** 2).mean(1))
        gaps[arm] = g
    cs = (np.quantile(gaps[WITHOUT], np.linspace(0.05, 0.95, 19)) if thresholds is None
          else np.asarray(thresholds, dtype=float))
    lhs = np.array([np.mean(gaps[WITHOUT] >= c) for c in cs])
    rhs = np.array([4 * K * np.mean(gaps[WITH] >= c / (2 * K)) for c in cs])
    return {"exact": False, "K": K, "cap": cap, "s": s, "thresholds": cs.tolist(),
            "p_without": lhs.tolist(), "rhs": rhs.tolist(), "margins": (rhs - lhs).tolist(),
            "violations": int(np.sum(rhs < lhs))}


def finite_class_excess_check(class_matrices, Y, s, trials=2000, num_mc=200, seed=0):
    """Monte-Carlo check of ``E_S L(Xhat) <= min_X L(X) + 2 R_s`` for a finite class under abs loss.

    ``Xhat`` is the empirical minimiser over the class on a with-replacement
    sample. ``R_s = E sup_X (1/s) sum_t xi_t X_{i_t j_t}`` is estimated on
    fresh samples and signs.
    """
    Y = as_matrix(Y, "Y")
    mats = np.array([as_matrix(X).ravel() for X in class_matrices])
    nm = Y.size
    y = Y.ravel()
    pop = np.abs(mats - y).mean(1)
    rng = make_rng(seed, "class-excess", nm, s)
    risk = np.empty(trials)
    for t in range(trials):
        seq = rng.integers(0, nm, size=s)
        emp = np.abs(mats[:, seq] - y[seq]).mean(1)
        risk[t] = pop[int(np.argmin(emp))]
    rad = np.empty(num_mc)
    for t in range(num_mc):
        seq = rng.integers(0, nm, size=s)
        xi = rng.choice([-1.0, 1.0], size=s)
        rad[t] = np.max(mats[:, seq] @ xi) / s
    r_mean, r_se = _mean_se(rad)
    e_mean, e_se = _mean_se(risk)
    lhs = e_mean
    rhs = float(pop.min()) + 2 * r_mean
    joint = math.hypot(e_se, 2 * r_se)
    return {"expected_risk": e_mean, "risk_se": e_se, "best_risk": float(pop.min()),
            "rademacher": r_mean, "rademacher_se": r_se, "rhs": rhs, "joint_se": joint,
            "holds": bool(lhs <= rhs + 3 * joint)}
