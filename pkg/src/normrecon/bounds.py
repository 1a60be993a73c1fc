"""Closed-form bound and sample-complexity calculators.

Every formula hides a big-O constant in its source; here that constant is an
explicit argument defaulting to 1. Formulas written for square-ish matrices
in terms of a single dimension ``n`` use ``n = max(n, m)``.
"""

import math
from dataclasses import dataclass
from typing import Optional


class ParameterError(ValueError):
    """A required parameter is missing or out of range."""


@dataclass(frozen=True)
class SampleComplexityQuery:
    n: int
    m: int
    r: int
    epsilon: float
    which: str = "headline"
    sigma2: float = 0.0
    beta: float = 0.0
    constant: float = 1.0
    mu0: Optional[float] = None
    mu1: Optional[float] = None
    kappa: Optional[float] = None
    A: Optional[float] = None

    def __post_init__(self):
        vals = [self.n, self.m, self.r, self.epsilon, self.sigma2, self.beta, self.constant]
        if not all(math.isfinite(v) for v in vals):
            raise ParameterError("all query fields must be finite")
        if self.epsilon <= 0:
            raise ParameterError("epsilon must be positive")
        if self.sigma2 < 0 or self.beta < 0:
            raise ParameterError("sigma2 and beta must be nonnegative")
        if min(self.n, self.m, self.r) < 1:
            raise ParameterError("n, m, r must be positive")


def _need(q, *names):
    missing = [k for k in names if getattr(q, k) is None]
    if missing:
        raise ParameterError(f"formula {q.which!r} requires {', '.join(missing)}")
    return [getattr(q, k) for k in names]


def _noise_factor(q):
    return (q.sigma2 + q.epsilon) / q.epsilon


def _sc_headline(q):
    return q.r * (q.n + q.m) / q.epsilon * _noise_factor(q) * math.log(1 / q.epsilon) ** 3


def _sc_l1_trace(q):
    return q.r * (q.n + q.m) * math.log(max(q.n, q.m)) / q.epsilon**2


def _sc_l1_max(q):
    return q.r * (q.n + q.m) / q.epsilon**2


def _sc_l1_trace_high_prob(q):
    ln = math.log(max(q.n, q.m))
    return (q.r * (q.n + q.m) * ln + q.beta * ln) / q.epsilon**2


def _sc_l1_max_high_prob(q):
    return (q.r * (q.n + q.m) + q.beta * math.log(max(q.n, q.m))) / q.epsilon**2


def _sc_l2_max(q):
    return q.r * (q.n + q.m) / q.epsilon * _noise_factor(q) * (math.log(q.r / q.epsilon) ** 3 + q.beta)


def _sc_l2_max_box(q):
    return q.r * (q.n + q.m) / q.epsilon * _noise_factor(q) * (math.log(1 / q.epsilon) ** 3 + q.beta)


def _sc_l2_strict_noise(q):
    return q.r * (q.n + q.m) / q.epsilon * _noise_factor(q) * math.log(q.r / q.epsilon) ** 3


def _sc_l2_radius(q):
    (A,) = _need(q, "A")
    return A**2 * (q.n + q.m) / q.epsilon * _noise_factor(q) * (math.log(A**2 / q.epsilon) ** 3 + q.beta)


def _sc_l2_independent_noise(q):
    return _sc_l2_strict_noise(q)


def _sc_l2_independent_noise_log(q):
    return _sc_l2_independent_noise(q) * math.log(max(q.n, q.m))


def _sc_l2_trace_box(q):
    return _sc_l1_trace(q)


def _sc_nw_kolt(q):
    n = max(q.n, q.m)
    return q.r * n * math.log(n) / q.epsilon * (1 + q.sigma2)


def _sc_kmo_approxrec(q):
    n, m = max(q.n, q.m), min(q.n, q.m)
    return q.r * n / q.epsilon * math.sqrt(n / m) * (1 + math.log(n) * q.sigma2)


def _sc_recht(q):
    mu0, mu1 = _need(q, "mu0", "mu1")
    n = max(q.n, q.m)
    return q.r * n * max(mu0, mu1**2) * math.log(n) ** 2


def _sc_kmo(q):
    mu0, mu1, kappa = _need(q, "mu0", "mu1", "kappa")
    n, r, k4 = max(q.n, q.m), q.r, kappa**4
    inner = max(math.log(r * n * k4 / q.epsilon) / q.epsilon,
                r * kappa**2 * mu0**2, r * kappa**2 * mu1**2)
    return r * n * k4 * inner


def _sc_ours(q):
    mu0, kappa = _need(q, "mu0", "kappa")
    n, r = max(q.n, q.m), q.r
    return (r * n / q.epsilon * _noise_factor(q) * min(kappa**2, r) * mu0**2
            * math.log(mu0**2 * r / q.epsilon) ** 3)


FORMULAS = {
    "headline": _sc_headline,
    "l1_trace": _sc_l1_trace,
    "l1_max": _sc_l1_max,
    "l1_trace_high_prob": _sc_l1_trace_high_prob,
    "l1_max_high_prob": _sc_l1_max_high_prob,
    "l2_max": _sc_l2_max,
    "l2_max_box": _sc_l2_max_box,
    "l2_strict_noise": _sc_l2_strict_noise,
    "l2_radius": _sc_l2_radius,
    "l2_independent_noise": _sc_l2_independent_noise,
    "l2_independent_noise_log": _sc_l2_independent_noise_log,
    "l2_trace_box": _sc_l2_trace_box,
    "SC_NW_Kolt": _sc_nw_kolt,
    "SC_KMO_approxrec": _sc_kmo_approxrec,
    "SC_Recht": _sc_recht,
    "SC_KMO": _sc_kmo,
    "SC_ours": _sc_ours,
}


def sample_complexity(q):
    """Evaluate the sample size formula selected by ``q.which``, times ``q.constant``."""
    try:
        f = FORMULAS[q.which]
    except KeyError:
        raise ParameterError(f"unknown formula {q.which!r}; choose from {sorted(FORMULAS)}") from None
    return q.constant * f(q)


def smooth_excess_bound(Lstar, rad, B, b, H, s, delta, C=1.0):
    """Excess-risk bound for a smooth loss in terms of a Rademacher bound ``rad``.

    ``R = H rad^2 log^3(B / rad) + b log(log(s) / delta) / s``; the value is
    ``Lstar + C (sqrt(Lstar R) + R)``. The first term of ``R`` is taken as 0
    at ``rad = 0``; ``log(s)`` is floored at 1 so that ``s < e`` stays finite.
    """
    if min(Lstar, rad, B, b, H) < 0:
        raise ParameterError("inputs must be nonnegative")
    if not 0 < delta < 1:
        raise ParameterError("delta must lie in (0, 1)")
    if s < 1:
        raise ParameterError("s must be at least 1")
    first = 0.0 if rad == 0 else H * rad**2 * math.log(B / rad) ** 3
    second = b * math.log(max(math.log(s), 1.0) / delta) / s
    R = first + second
    return Lstar + C * (math.sqrt(Lstar * R) + R)


def bound_eq2(A, n, m, s):
    """Empirical Rademacher bound of the max-norm ball: ``12 sqrt(A^2 (n+m) / s)``."""
    return 12.0 * math.sqrt(A**2 * (n + m) / s)


def bound_eq3(A, n, m, s, K=1.0):
    """Expected Rademacher bound of the trace-norm ball: ``K sqrt(A^2/(nm) (n+m) log n / s)``."""
    return K * math.sqrt(A**2 / (n * m) * (n + m) * math.log(max(n, m)) / s)


def spectral_variance(s, n, m):
    """Matrix-variance parameter of ``Q = sum_t xi_t e_{i_t j_t}``: ``s max(n, m) / (nm)``."""
    return s * max(n, m) / (n * m)


def bound_tropp(sigma2_param, R, n, m, C=1.0):
    """``C (sqrt(sigma^2 log(n+m)) + R log(n+m))`` bound on the expected spectral norm."""
    L = math.log(n + m)
    return C * (math.sqrt(sigma2_param * L) + R * L)


def final_rad_bound(A, n, m, s, C=1.0):
    """``C A / sqrt(nm) sqrt((n+m) log(n+m) / s)``, the trace-ball rate from the spectral-norm bound."""
    return C * A / math.sqrt(n * m) * math.sqrt((n + m) * math.log(n + m) / s)


def without_replacement_cap(K, n, m):
    """Largest ``s`` for which the independent-noise reduction with parameter ``K`` applies."""
    return (K + 1) / math.e * (n * m) ** (1 - 1 / (K + 1))
