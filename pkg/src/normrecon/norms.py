"""Trace-norm, max-norm brackets, rank sandwiches and incoherence diagnostics."""

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .linalg import as_matrix, elementwise_norms, numerical_rank, svd
from .rng import make_rng


class BracketInconsistency(RuntimeError):
    """Raised when a max-norm upper certificate falls below the lower one."""


class SandwichViolation(AssertionError):
    """One side of a norm/rank sandwich failed."""


def trace_norm(X):
    return float(svd(X).singular_values.sum())


def trace_rank_sandwich(X, rel_tol=1e-8):
    """``(||X||_F, ||X||_tr, sqrt(rank X) * ||X||_F)``; the middle lies between the ends."""
    X = as_matrix(X)
    sig = svd(X).singular_values
    fro = float(np.sqrt(np.sum(X * X)))
    rank = 0 if sig[0] == 0 else int(np.sum(sig > rel_tol * sig[0]))
    return fro, float(sig.sum()), float(np.sqrt(rank) * fro)


@dataclass(frozen=True)
class FactoredMatrix:
    """``X = U V^T`` with every row of ``U`` and ``V`` of norm at most ``row_cap``."""

    U: np.ndarray
    V: np.ndarray
    row_cap: float = np.inf

    @property
    def matrix(self):
        return self.U @ self.V.T

    def max_row_norms(self):
        return (float(np.sqrt((self.U**2).sum(1)).max()),
                float(np.sqrt((self.V**2).sum(1)).max()))

    def max_norm_certificate(self):
        """Product of the largest row norms: an upper bound on ``||U V^T||_max``."""
        a, b = self.max_row_norms()
        return a * b


@dataclass(frozen=True)
class MaxNormBracket:
    lower: float
    upper: float
    lower_certificate: tuple  # (p, q) probability vectors
    upper_certificate: FactoredMatrix
    linf: float = field(default=0.0)

    @property
    def width(self):
        return self.upper - self.lower

    @property
    def midpoint(self):
        return 0.5 * (self.upper + self.lower)


def scaled_trace_norm(X, p, q):
    """``|| diag(sqrt p) X diag(sqrt q) ||_tr``; a lower bound on ``||X||_max`` for p, q in the simplex."""
    W = np.sqrt(p)[:, None] * X * np.sqrt(q)[None, :]
    return float(np.linalg.svd(W, compute_uv=False).sum())


def _scaling_ascent(X, p, q, iters, step):
    """Exponentiated-gradient ascent of the scaled trace norm over two simplices."""
    best = (scaled_trace_norm(X, p, q), p, q)
    floor = 1e-300
    last_gain = 0
    for it in range(iters):
        if it - last_gain > 50:
            break
        a, b = np.sqrt(p), np.sqrt(q)
        W = a[:, None] * X * b[None, :]
        Uw, sw, Vwt = np.linalg.svd(W, full_matrices=False)
        val = float(sw.sum())
        if val > best[0] * (1 + 1e-12):
            last_gain = it
        if val > best[0]:
            best = (val, p, q)
        PW = (Uw @ Vwt) * W
        gp = PW.sum(1) / (2 * np.maximum(p, floor))
        gq = PW.sum(0) / (2 * np.maximum(q, floor))
        sp = np.abs(gp).max()
        sq = np.abs(gq).max()
        if sp == 0 and sq == 0:
            break
        if sp > 0:
            p = p * np.exp(step * (gp - gp.max()) / sp)
            p /= p.sum()
        if sq > 0:
            q = q * np.exp(step * (gq - gq.max()) / sq)
            q /= q.sum()
    val = scaled_trace_norm(X, p, q)
    if val > best[0]:
        best = (val, p, q)
    return best


def _capped_rows(B, T, cap2):
    """Row-wise ``argmin_u ||B u - t||`` subject to ``||u||^2 <= cap2`` for every row ``t`` of ``T``.

    Every row is a trust-region subproblem sharing the Gram matrix ``B^T B``,
    so a single eigendecomposition serves all rows and the secular equation
    is solved by vectorised bisection on the multiplier.
    """
    lam, Q = np.linalg.eigh(B.T @ B)
    lam = np.maximum(lam, 0.0)
    H = (T @ B) @ Q
    pos = lam > lam.max(initial=0.0) * 1e-12
    coef = np.zeros_like(H)
    coef[:, pos] = H[:, pos] / lam[pos]
    norms2 = (coef**2).sum(1)
    need = norms2 > cap2
    if need.any():
        Hn = H[need]
        lo = np.zeros(Hn.shape[0])
        hi = np.sqrt((Hn**2).sum(1) / cap2)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            val = ((Hn / (lam[None, :] + mid[:, None])) ** 2).sum(1)
            big = val > cap2
            lo = np.where(big, mid, lo)
            hi = np.where(big, hi, mid)
        coef[need] = Hn / (lam[None, :] + hi[:, None])
    Uout = coef @ Q.T
    rn = np.sqrt((Uout**2).sum(1))
    over = rn > np.sqrt(cap2)
    Uout[over] *= (np.sqrt(cap2) / rn[over])[:, None]
    return Uout


def _altmin(X, U, V, cap2, iters, target):
    """Alternate capped least-squares updates of ``U`` and ``V``; stop once the residual is below ``target``."""
    res = np.linalg.norm(X - U @ V.T)
    for _ in range(iters):
        U = _capped_rows(V, X, cap2)
        V = _capped_rows(U, X.T, cap2)
        new = np.linalg.norm(X - U @ V.T)
        if new <= target:
            return U, V, new
        if new > res * (1 - 1e-4):
            res = new
            break
        res = new
    return U, V, res


def _exact_certificate(X, U, V):
    """Append the SVD of the residual so the factorization reproduces ``X`` exactly.

    Rows of ``U_E sqrt(S_E)`` have norm at most ``sqrt(sigma_1(E))``, so the
    correction costs little when the residual is small.
    """
    E = X - U @ V.T
    Ue, se, Vet = np.linalg.svd(E, full_matrices=False)
    # columns below this level change no entry of U V^T in double precision
    keep = se > np.finfo(float).eps * 1e-2 * max(np.linalg.norm(X), 1e-300)
    if keep.any():
        r = np.sqrt(se[keep])
        U = np.hstack([U, Ue[:, keep] * r])
        V = np.hstack([V, Vet[keep].T * r])
    return U, V


def _rebalance(U, V):
    """Rescale matched columns, ``(U D, V D^-1)``, to minimise the max-row-norm product.

    With ``D = diag(exp(x))`` the log of each squared row norm is a
    log-sum-exp of affine functions of ``x``, so the problem is convex and
    is solved in epigraph form.
    """
    live = (np.abs(U).sum(0) > 0) & (np.abs(V).sum(0) > 0)
    U, V = U[:, live], V[:, live]
    k = U.shape[1]
    if k <= 1:
        return U, V
    lu, lv = np.log(U**2 + 1e-300), np.log(V**2 + 1e-300)

    def lse(Z):
        mx = Z.max(1, keepdims=True)
        return (mx[:, 0] + np.log(np.exp(Z - mx).sum(1)))

    def cons(z):
        x, a, b = z[:k], z[k], z[k + 1]
        return np.concatenate([a - lse(lu + 2 * x), b - lse(lv - 2 * x)])

    def softmax(Z):
        E = np.exp(Z - Z.max(1, keepdims=True))
        return E / E.sum(1, keepdims=True)

    def cons_jac(z):
        x = z[:k]
        Ju = np.hstack([-2 * softmax(lu + 2 * x), np.ones((len(lu), 1)), np.zeros((len(lu), 1))])
        Jv = np.hstack([2 * softmax(lv - 2 * x), np.zeros((len(lv), 1)), np.ones((len(lv), 1))])
        return np.vstack([Ju, Jv])

    a0, b0 = lse(lu).max(), lse(lv).max()
    z0 = np.concatenate([np.zeros(k), [a0, b0]])
    sol = optimize.minimize(lambda z: z[k] + z[k + 1], z0, method="SLSQP",
                            jac=lambda z: np.r_[np.zeros(k), 1.0, 1.0],
                            constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac}],
                            options={"maxiter": 200, "ftol": 1e-14})
    x = sol.x[:k]
    x -= x.mean()
    Ur, Vr = U * np.exp(x), V * np.exp(-x)
    if FactoredMatrix(Ur, Vr).max_norm_certificate() < FactoredMatrix(U, V).max_norm_certificate():
        return Ur, Vr
    return U, V


def _balanced_svd_factors(X, k):
    Ux, sx, Vxt = np.linalg.svd(X, full_matrices=False)
    r = min(k, len(sx))
    U = Ux[:, :r] * np.sqrt(sx[:r])
    V = Vxt[:r].T * np.sqrt(sx[:r])
    if r < k:
        U = np.hstack([U, np.zeros((X.shape[0], k - r))])
        V = np.hstack([V, np.zeros((X.shape[1], k - r))])
    return U, V


def _dual_start(X, p, q, k):
    """Primal factors suggested by a diagonal scaling: ``D_a^-1 U_w S^1/2`` and ``D_b^-1 V_w S^1/2``.

    At an optimal scaling every supported row of these factors has squared
    norm equal to the max-norm; tiny weights are floored to keep rows finite.
    """
    a = np.sqrt(np.maximum(p, 1e-6 / len(p)))
    b = np.sqrt(np.maximum(q, 1e-6 / len(q)))
    Uw, sw, Vwt = np.linalg.svd(a[:, None] * X * b[None, :], full_matrices=False)
    U = (Uw * np.sqrt(sw)) / a[:, None]
    V = (Vwt.T * np.sqrt(sw)) / b[:, None]
    return _pad(U, V, k)


def _upper_search(X, U, V, lower, tol, iters, bisections=24):
    """Bisection on the balanced row cap, warm-starting alternating minimization."""
    fro = np.linalg.norm(X)
    target = tol * fro
    Ux, Vx = _rebalance(*_exact_certificate(X, U, V))
    best = (FactoredMatrix(Ux, Vx).max_norm_certificate(), Ux, Vx)
    U, V = _pad(Ux, Vx, U.shape[1])
    lo, hi = lower, best[0]
    for _ in range(bisections):
        if hi - lo <= 1e-9 * max(hi, 1e-300):
            break
        t = 0.5 * (lo + hi)
        Ut, Vt, res = _altmin(X, U, V, t, iters, target)
        if res <= target:
            Uc, Vc = _rebalance(*_exact_certificate(X, Ut, Vt))
            cert = FactoredMatrix(Uc, Vc).max_norm_certificate()
            if cert < best[0]:
                best = (cert, Uc, Vc)
            U, V = Ut, Vt
            hi = min(t, best[0])
        else:
            lo = t
    return best


def _pad(U, V, k):
    """Trim or zero-pad both factors to ``k`` columns, keeping the heaviest columns."""
    if U.shape[1] > k:
        w = np.sqrt((U**2).sum(0) * (V**2).sum(0))
        idx = np.sort(np.argsort(-w)[:k])
        return U[:, idx], V[:, idx]
    if U.shape[1] < k:
        extra = k - U.shape[1]
        return (np.hstack([U, np.zeros((U.shape[0], extra))]),
                np.hstack([V, np.zeros((V.shape[0], extra))]))
    return U, V


def max_norm_bracket(X, rank_budget=None, restarts=3, iters=500, tol=1e-9, seed=0,
                     step=0.1, altmin_iters=60):
    """Certified interval ``[lower, upper]`` containing ``||X||_max``.

    ``lower`` is the best of ``|X|_inf`` and the scaled trace norm reached by
    exponentiated-gradient ascent over pairs of probability vectors.
    ``upper`` is the max-row-norm product of an explicit factorization that
    reproduces ``X`` exactly (residual absorbed by an appended SVD block);
    it is searched by bisection on the row cap with capped alternating
    minimization, starting from the balanced SVD factors.
    """
    X = as_matrix(X)
    n, m = X.shape
    linf = float(np.abs(X).max())
    if linf == 0:
        Z = FactoredMatrix(np.zeros((n, 1)), np.zeros((m, 1)))
        return MaxNormBracket(0.0, 0.0, (np.full(n, 1 / n), np.full(m, 1 / m)), Z, 0.0)
    if rank_budget is None:
        rank_budget = min(n, m) + 1
    lower, p_best, q_best = -np.inf, None, None
    upper, cert = np.inf, None
    for r in range(max(1, restarts)):
        rng = make_rng(seed, "bracket", r)
        if r == 0:
            p0, q0 = np.full(n, 1 / n), np.full(m, 1 / m)
        else:
            p0, q0 = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
        val, p, q = _scaling_ascent(X, p0, q0, iters, step)
        if val > lower:
            lower, p_best, q_best = val, p, q
        if r == 0:
            U0, V0 = _balanced_svd_factors(X, rank_budget)
        elif r == 1:
            U0, V0 = _dual_start(X, p_best, q_best, rank_budget)
        else:
            scale = np.sqrt(linf / rank_budget)
            U0 = rng.standard_normal((n, rank_budget)) * scale
            V0 = rng.standard_normal((m, rank_budget)) * scale
        cval, Uc, Vc = _upper_search(X, U0, V0, max(lower, linf), tol, altmin_iters)
        if cval < upper:
            upper, cert = cval, FactoredMatrix(Uc, Vc)
        if upper - max(lower, linf) <= 1e-12 * upper and r >= 1:
            break
    if linf >= lower:
        lower = linf
        i, j = np.unravel_index(np.argmax(np.abs(X)), X.shape)
        p_best, q_best = np.eye(n)[i], np.eye(m)[j]
    if upper < lower - 1e-6:
        raise BracketInconsistency(f"upper {upper!r} below lower {lower!r}")
    return MaxNormBracket(float(lower), float(upper), (p_best, q_best), cert, linf)


def lemma1_sandwich(X, bracket, rel_tol=1e-8):
    """Check ``|X|_inf <= ||X||_max <= sqrt(rank X) |X|_inf`` at the bracket level.

    Returns a dict with the four numbers; raises :class:`SandwichViolation`
    naming the failing side.
    """
    X = as_matrix(X)
    linf = float(np.abs(X).max())
    rank = numerical_rank(X, rel_tol) if linf > 0 else 0
    hi = float(np.sqrt(rank) * linf)
    report = {"linf": linf, "sqrt_rank_linf": hi, "lower": bracket.lower, "upper": bracket.upper}
    if bracket.lower > hi + 1e-6:
        raise SandwichViolation(f"upper side: lower bound {bracket.lower} exceeds sqrt(rank)*|X|_inf = {hi}")
    if bracket.upper < linf - 1e-9:
        raise SandwichViolation(f"lower side: upper bound {bracket.upper} below |X|_inf = {linf}")
    return report


@dataclass(frozen=True)
class IncoherenceProfile:
    mu0: float
    mu1: float
    kappa: float
    r: int


def incoherence(M, rank_tol=1e-8):
    """Incoherence parameters ``mu0``, ``mu1`` and condition number of the reduced SVD."""
    M = as_matrix(M, "M")
    n, m = M.shape
    res = svd(M)
    sig = res.singular_values
    if sig[0] == 0:
        raise ValueError("incoherence is undefined for the zero matrix")
    r = int(np.sum(sig > rank_tol * sig[0]))
    U, V = res.left_vectors[:, :r], res.right_vectors[:, :r]
    mu0 = max(n / r * float((U**2).sum(1).max()), m / r * float((V**2).sum(1).max()))
    mu1 = float(np.sqrt(n * m / r) * np.abs(U @ V.T).max())
    return IncoherenceProfile(mu0, mu1, float(sig[0] / sig[r - 1]), r)


def lemma3_bound(M, profile=None):
    """``min(kappa, sqrt r) * mu0 * sqrt(r) * ||M||_F / sqrt(nm)``, an upper bound on ``||M||_max``."""
    M = as_matrix(M, "M")
    if profile is None:
        profile = incoherence(M)
    n, m = M.shape
    fro = elementwise_norms(M)[1]
    r = profile.r
    return float(min(profile.kappa, np.sqrt(r)) * profile.mu0 * np.sqrt(r) * fro / np.sqrt(n * m))


def incoherence_max_norm_quantity(M, profile=None):
    """``mu0 * sqrt(r) * ||M||_F / sqrt(nm)`` (the incoherence bound without the min factor)."""
    M = as_matrix(M, "M")
    if profile is None:
        profile = incoherence(M)
    n, m = M.shape
    return float(profile.mu0 * np.sqrt(profile.r) * elementwise_norms(M)[1] / np.sqrt(n * m))


def misaligned_spike_matrix(N):
    """The ``(N+1) x (N+1)`` rank-2 example whose SVD factors have misaligned spikes.

    Its SVD has identity singular values, so ``kappa = 1`` and the incoherence
    bound equals 1, while a rebalanced factorization has every row of norm
    ``N**-0.25`` and so certifies ``||M||_max <= N**-0.5``.
    """
    if N < 1:
        raise ValueError("N must be positive")
    U = np.zeros((N + 1, 2))
    V = np.zeros((N + 1, 2))
    U[0, 0] = 1.0
    U[1:, 1] = N**-0.5
    V[0, 1] = 1.0
    V[1:, 0] = N**-0.5
    return U @ V.T


def norms_report(X, seed=0):
    """Everything the ``norms report`` command prints, as a plain dict."""
    X = as_matrix(X)
    l1, fro, linf = elementwise_norms(X)
    tr = trace_norm(X)
    rank = numerical_rank(X) if linf > 0 else 0
    bracket = max_norm_bracket(X, seed=seed)
    out = {
        "frobenius": fro, "l1": l1, "linf": linf, "trace_norm": tr, "rank": rank,
        "maxnorm_lower": bracket.lower, "maxnorm_upper": bracket.upper,
        "mu0": None, "mu1": None, "kappa": None,
        "lemma1_lo": linf, "lemma1_hi": float(np.sqrt(rank) * linf), "lemma3_bound": None,
    }
    if linf > 0:
        prof = incoherence(X)
        out.update(mu0=prof.mu0, mu1=prof.mu1, kappa=prof.kappa, lemma3_bound=lemma3_bound(X, prof))
    return out
