"""Dense real linear algebra kernels.

Matrices are plain 2-D ``float64`` numpy arrays; :func:`as_matrix` is the
single validation point. The SVD is a one-sided (Hestenes) Jacobi sweep with
a round-robin pair schedule, so that every disjoint pair in a round is
rotated in one vectorised step.
"""

from dataclasses import dataclass

import numpy as np

from .rng import child_seed, make_rng


class ConvergenceError(RuntimeError):
    """An iterative kernel hit its iteration cap without meeting tolerance."""


def as_matrix(X, name="X"):
    """Return ``X`` as a finite 2-D float64 array, raising ``ValueError`` otherwise."""
    A = np.array(X, dtype=np.float64)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


@dataclass(frozen=True)
class SvdResult:
    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray

    def reconstruct(self):
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


def _round_robin(k):
    """Pair schedule: k-1 rounds (k even), each a perfect matching of 0..k-1."""
    players = list(range(k))
    rounds = []
    for _ in range(k - 1):
        half = k // 2
        top, bot = players[:half], players[half:][::-1]
        rounds.append((np.array(top), np.array(bot)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _complete_basis(Q, n):
    """Extend orthonormal columns ``Q`` (n x r) to an n x n orthonormal basis."""
    r = Q.shape[1]
    if r == n:
        return Q
    # project the standard basis off span(Q) and keep the best-conditioned directions
    P = np.eye(n) - Q @ Q.T
    extra, _, _ = np.linalg.svd(P)
    return np.hstack([Q, extra[:, : n - r]])


def svd(X, tol=1e-10, max_sweeps=80):
    """Thin SVD ``X = U diag(s) V^T`` with ``k = min(n, m)`` columns.

    Singular values are returned in nonincreasing order. Columns of ``U``
    belonging to zero singular values are completed to an orthonormal set.

    Raises
    ------
    ConvergenceError
        If the Jacobi sweeps do not orthogonalise the working columns within
        ``max_sweeps``; the message carries the residual.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    X = as_matrix(X)
    n, m = X.shape
    transposed = n < m
    # work at unit scale so that products of squared norms neither overflow nor underflow
    amax = float(np.abs(X).max())
    unit = amax if amax > 0 else 1.0
    G = (X.T if transposed else X) / unit
    rows, k = G.shape
    # columns rotated down to roundoff level count as zero
    eps = np.finfo(float).eps
    floor = (eps * max(rows, k)) ** 2 * float(np.sum(G * G))
    kk = k + (k % 2)
    if kk != k:
        G = np.hstack([G, np.zeros((rows, 1))])
    V = np.eye(kk)
    schedule = _round_robin(kk) if kk > 1 else []
    converged = kk == 1
    for _ in range(max_sweeps):
        off = 0.0
        for P, Q in schedule:
            gp, gq = G[:, P], G[:, Q]
            alpha = np.einsum("ij,ij->j", gp, gp)
            beta = np.einsum("ij,ij->j", gq, gq)
            gamma = np.einsum("ij,ij->j", gp, gq)
            scale = np.sqrt(alpha * beta)
            ratio = np.zeros_like(gamma)
            nz = (alpha > floor) & (beta > floor)
            ratio[nz] = np.abs(gamma[nz]) / scale[nz]
            off = max(off, float(ratio.max(initial=0.0)))
            act = ratio > rows * eps
            if not act.any():
                continue
            zeta = (beta[act] - alpha[act]) / (2.0 * gamma[act])
            t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
            t[zeta == 0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t**2)
            s = c * t
            p, q = P[act], Q[act]
            gp, gq = G[:, p], G[:, q]
            G[:, p], G[:, q] = c * gp - s * gq, s * gp + c * gq
            vp, vq = V[:, p], V[:, q]
            V[:, p], V[:, q] = c * vp - s * vq, s * vp + c * vq
        if off <= rows * eps:
            converged = True
            break
    sig = np.sqrt(np.einsum("ij,ij->j", G, G))[:k]
    V = V[:k, :k] if kk != k else V
    G = G[:, :k]
    order = np.argsort(-sig, kind="stable")
    sig, G, V = sig[order], G[:, order], V[:, order]
    cutoff = sig[0] * max(rows, k) * eps if sig[0] > 0 else 0.0
    keep = sig > cutoff
    U = np.zeros((rows, k))
    U[:, keep] = G[:, keep] / sig[keep]
    sig = np.where(keep, sig * unit, 0.0)
    r = int(keep.sum())
    if r < k:
        U = _complete_basis(U[:, :r], rows)[:, :k]
    res = SvdResult(*((V, sig, U) if transposed else (U, sig, V)))
    resid = np.linalg.norm(X - res.reconstruct())
    # tol is the orthogonality target; reconstruction is allowed 1e3 * tol relative
    if not converged or resid > 1e3 * tol * max(1.0, np.linalg.norm(X)):
        raise ConvergenceError(
            f"Jacobi SVD did not converge (converged={converged}, residual={resid:.3e})"
        )
    return res


def _start_vector(m, seed, restart):
    return make_rng(child_seed(seed, "power", m, restart)).standard_normal(m)


def top_singular_pair(X, tol=1e-10, max_iters=5000, seed=0, v0=None):
    """Leading singular triple ``(u, sigma, v)`` by power iteration on ``X^T X``.

    Two starts are run: ``v0`` (or a seeded vector derived from the shape
    and ``seed``) and one fresh seeded restart, which protects against a
    start that is orthogonal to the top right singular vector. The larger
    Rayleigh quotient wins.
    """
    X = as_matrix(X)
    n, m = X.shape
    if not np.any(X):
        u = np.zeros(n)
        u[0] = 1.0
        v = np.zeros(m)
        v[0] = 1.0
        return u, 0.0, v
    starts = [v0 if v0 is not None else _start_vector(m, seed + n, 0),
              _start_vector(m, seed + n, 1)]
    best = None
    for start in starts:
        v = np.asarray(start, dtype=float)
        nv = np.linalg.norm(v)
        if nv == 0:
            continue
        v = v / nv
        sigma_prev = -1.0
        done = False
        for _ in range(max_iters):
            w = X @ v
            sigma = np.linalg.norm(w)
            if sigma == 0:
                break
            z = X.T @ (w / sigma)
            nz = np.linalg.norm(z)
            v = z / nz
            # nz is the refined estimate of sigma_1
            if abs(nz - sigma_prev) <= tol * nz:
                done = True
                sigma = nz
                break
            sigma_prev = nz
        if not done and sigma != 0:
            raise ConvergenceError(
                f"power iteration hit {max_iters} iterations; last Rayleigh quotient {sigma_prev:.12g}"
            )
        if best is None or sigma > best[1]:
            best = (v, sigma)
    v, sigma = best
    u = X @ v
    sigma = np.linalg.norm(u)
    return u / sigma, float(sigma), v


def spectral_norm(X, tol=1e-10, max_iters=5000, seed=0):
    """Largest singular value by power iteration."""
    return top_singular_pair(X, tol=tol, max_iters=max_iters, seed=seed)[1]


def batch_spectral_norm(stack):
    """Spectral norms of a stack of matrices, shape ``(b, n, m)`` -> ``(b,)``.

    Backed by LAPACK; used in Monte-Carlo loops where thousands of small
    matrices are evaluated.
    """
    stack = np.asarray(stack, dtype=float)
    if stack.shape[1] == 1 or stack.shape[2] == 1:
        return np.sqrt(np.einsum("bij,bij->b", stack, stack))
    return np.linalg.svd(stack, compute_uv=False)[:, 0]


def elementwise_norms(X):
    """``(l1, frobenius, linf)`` of ``X`` taken entrywise."""
    X = as_matrix(X)
    a = np.abs(X)
    return float(a.sum()), float(np.sqrt(np.sum(X * X))), float(a.max())


def numerical_rank(X, rel_tol=1e-8):
    """Number of singular values above ``rel_tol * sigma_1`` (0 for the zero matrix)."""
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    sig = svd(X).singular_values
    if sig[0] == 0:
        return 0
    return int(np.sum(sig > rel_tol * sig[0]))


def write_matrix(path_or_file, X):
    """Write ``X`` in the shared text format: ``n m`` then one row per line."""
    X = as_matrix(X)
    lines = [f"{X.shape[0]} {X.shape[1]}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in X]
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w") as fh:
            fh.write(text)


def read_matrix(path_or_file):
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file) as fh:
            text = fh.read()
    tokens = text.split()
    if len(tokens) < 2:
        raise ValueError("matrix file is missing its 'n m' header")
    n, m = int(tokens[0]), int(tokens[1])
    vals = tokens[2:]
    if len(vals) != n * m:
        raise ValueError(f"expected {n * m} entries, found {len(vals)}")
    return as_matrix(np.array(vals, dtype=float).reshape(n, m))
