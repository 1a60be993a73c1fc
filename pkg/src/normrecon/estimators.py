"""Constrained empirical risk minimisers over norm balls.

Four estimators share one objective: the mean loss over observation records,
counted with repetition.

* ``erm_trace`` and ``erm_trace_box`` run Frank-Wolfe on the trace-norm ball.
* ``erm_max`` and ``erm_max_box`` run projected gradient on a factorisation
  ``U V^T`` whose rows are capped at ``sqrt(A)``. That set lies inside the
  max-norm ball of radius ``A``.

The box variants add a quadratic hinge penalty on entries above ``B`` in
magnitude. Its weight grows on a schedule. Abs loss is smoothed with a Huber
function whose width halves every ``huber_halving`` iterations.
"""

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .bounds import ParameterError
from .linalg import ConvergenceError, as_matrix, top_singular_pair
from .norms import FactoredMatrix, trace_norm
from .rng import make_rng

LOSSES = ("abs", "squared")
CONSTRAINTS = ("trace", "max", "trace_box", "max_box")


@dataclass(frozen=True)
class SolverConfig:
    loss: str = "squared"
    constraint: str = "max"
    iterations: int = 2000
    rank_budget: Optional[int] = None
    r: int = 2
    restarts: int = 5
    tol: float = 1e-9
    seed: int = 0
    huber_delta0: Optional[float] = None
    huber_halving: int = 200
    penalty0: float = 1.0
    penalty_growth: float = 2.0
    penalty_every: int = 200
    penalty_max: float = 1e6
    power_tol: float = 1e-9
    in_face_steps: int = 10

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ParameterError(f"loss must be one of {LOSSES}")
        if self.constraint not in CONSTRAINTS:
            raise ParameterError(f"constraint must be one of {CONSTRAINTS}")
        if self.iterations < 1 or self.restarts < 1:
            raise ParameterError("iterations and restarts must be at least 1")
        if self.rank_budget is not None and self.rank_budget < 1:
            raise ParameterError("rank_budget must be at least 1")

    @property
    def k(self):
        return self.rank_budget if self.rank_budget is not None else 2 * self.r + 2


@dataclass(frozen=True, eq=False)
class FitResult:
    estimate: np.ndarray
    factors: Optional[FactoredMatrix]
    loss_trajectory: np.ndarray
    best_trajectory: np.ndarray
    empirical_loss: float
    constraint: str
    A: float
    B: float
    constraint_residual: float
    box_violation: float
    converged: bool
    wall_time: float
    restart_losses: list = field(default_factory=list)

    def clipped(self):
        """Estimate with entries clipped to ``[-B, B]``; for evaluation only."""
        if math.isinf(self.B):
            return self.estimate
        return np.clip(self.estimate, -self.B, self.B)

    def report(self, max_points=1000):
        traj = self.loss_trajectory
        if len(traj) > max_points:
            idx = np.unique(np.linspace(0, len(traj) - 1, max_points).round().astype(int))
            traj = traj[idx]
        return {
            "constraint": self.constraint, "A": self.A,
            "B": None if math.isinf(self.B) else self.B,
            "empirical_loss": self.empirical_loss,
            "constraint_residual": self.constraint_residual,
            "box_violation": self.box_violation,
            "converged": self.converged, "wall_time": self.wall_time,
            "restart_losses": self.restart_losses,
            "loss_trajectory": [float(v) for v in traj],
        }


class _Objective:
    """Mean loss over records, with per-record data collapsed onto distinct positions."""

    def __init__(self, obs, loss):
        if obs.s == 0:
            raise ParameterError("no observations")
        self.n, self.m, self.s = obs.n, obs.m, obs.s
        self.loss = loss
        uniq, inv = np.unique(obs.linear, return_inverse=True)
        self.rows, self.cols, self.inv = uniq // obs.m, uniq % obs.m, inv
        self.y = np.asarray(obs.values, dtype=float)
        self.count = np.bincount(inv).astype(float)
        self.ybar = np.bincount(inv, self.y) / self.count
        self.const = float(np.sum((self.y - self.ybar[inv]) ** 2))
        self.scale = max(self.value(np.zeros(len(uniq))), 1e-12)
        self.max_count = max(np.bincount(self.rows, self.count).max(),
                             np.bincount(self.cols, self.count).max())

    def value(self, x):
        """True empirical loss given values ``x`` at the distinct positions."""
        if self.loss == "squared":
            return (float(np.dot(self.count, (x - self.ybar) ** 2)) + self.const) / self.s
        return float(np.abs(x[self.inv] - self.y).sum()) / self.s

    def smooth(self, x, delta):
        """Value and per-position gradient of the (possibly Huber-smoothed) loss."""
        if self.loss == "squared":
            d = x - self.ybar
            return self.value(x), 2.0 * self.count * d / self.s
        r = x[self.inv] - self.y
        a = np.abs(r)
        h = np.where(a <= delta, r * r / (2 * delta), a - delta / 2)
        g = np.clip(r / delta, -1.0, 1.0)
        return float(h.sum()) / self.s, np.bincount(self.inv, g, len(self.rows)) / self.s

    def curvature(self, delta):
        """Per-entry second-derivative bound of the smoothed loss."""
        return 2.0 if self.loss == "squared" else 1.0 / delta

    def at(self, X):
        return X[self.rows, self.cols]


class _BoxPenalty:
    """``lam(t) / (nm) * sum max(0, |X| - B)^2`` over the whole matrix."""

    def __init__(self, B, cfg, n, m):
        self.B, self.cfg, self.nm = B, cfg, n * m
        self.active = not math.isinf(B)

    def __call__(self, X, lam):
        if not self.active:
            return 0.0, None
        over = np.maximum(np.abs(X) - self.B, 0.0)
        return lam * float(np.sum(over**2)) / self.nm, 2.0 * lam / self.nm * np.sign(X) * over


def box_violation(X, B):
    return 0.0 if math.isinf(B) else float(max(np.abs(X).max() - B, 0.0))


def _check_radius(A, B):
    if not A > 0 or not math.isfinite(A):
        raise ParameterError("A must be a positive finite radius")
    if not B > 0:
        raise ParameterError("B must be positive")


# -- Frank-Wolfe on the trace ball ---------------------------------------------

class _Schedule:
    """Huber width and penalty weight.

    Both move on a clock (every ``huber_halving`` / ``penalty_every``
    iterations) and also move early once the current stage has stalled.
    """

    def __init__(self, cfg, obj, pen):
        self.cfg, self.obj, self.pen = cfg, obj, pen
        self.smoothing = cfg.loss == "abs"
        self.d0 = cfg.huber_delta0 if cfg.huber_delta0 is not None else 0.1 * math.sqrt(
            max(float(np.mean(obj.y**2)), 1e-12))
        self.jd = self.jl = 0
        self.jd_max = HUBER_STAGES if self.smoothing else 0
        self.jl_max = _penalty_stages(cfg) if pen.active else 0

    @property
    def delta(self):
        return self.d0 * 0.5**self.jd if self.smoothing else None

    @property
    def lam(self):
        if not self.pen.active:
            return 0.0
        c = self.cfg
        return min(c.penalty0 * c.penalty_growth**self.jl, c.penalty_max) * self.obj.scale

    @property
    def final(self):
        return self.jd >= self.jd_max and self.jl >= self.jl_max

    def tick(self, t):
        moved = False
        if t and self.jd < self.jd_max and t % self.cfg.huber_halving == 0:
            self.jd += 1
            moved = True
        if t and self.jl < self.jl_max and t % self.cfg.penalty_every == 0:
            self.jl += 1
            moved = True
        return moved

    def advance(self):
        moved = False
        if self.jd < self.jd_max:
            self.jd += 1
            moved = True
        if self.jl < self.jl_max:
            self.jl += 1
            moved = True
        return moved

    def curvature(self):
        """Bound on the per-entry second derivative of the staged objective."""
        c = self.obj.curvature(self.delta if self.smoothing else 1.0)
        return c, (2.0 * self.lam / self.pen.nm if self.pen.active else 0.0)


HUBER_STAGES = 20


def _staged_objective(obj, pen, sched):
    n, m = obj.n, obj.m

    def value(X):
        f, _ = obj.smooth(obj.at(X), sched.delta)
        return f + (pen(X, sched.lam)[0] if pen.active else 0.0)

    def grad(X):
        _, g = obj.smooth(obj.at(X), sched.delta)
        G = np.zeros((n, m))
        G[obj.rows, obj.cols] = g
        if pen.active:
            G += pen(X, sched.lam)[1]
        return G

    return value, grad


def _project_simplex_ball(sig, A):
    """Euclidean projection of a nonnegative vector onto ``{x >= 0, sum x <= A}``."""
    if sig.sum() <= A:
        return sig
    u = np.sort(sig)[::-1]
    css = np.cumsum(u) - A
    k = np.nonzero(u - css / np.arange(1, len(u) + 1) > 0)[0][-1]
    return np.maximum(sig - css[k] / (k + 1), 0.0)


def _in_face(X, value, grad, A, L, steps):
    """Projected gradient over ``{U W V^T : ||W||_trace <= A}`` with ``U, V`` spanning ``X``."""
    Uf, sig, Vt = np.linalg.svd(X, full_matrices=False)
    if sig[0] == 0:
        return X
    q = int(np.sum(sig > 1e-10 * sig[0]))
    U, V = Uf[:, :q], Vt[:q].T
    W = np.diag(sig[:q])
    f = value(X)
    eta = 1.0 / L
    for _ in range(steps):
        Gw = U.T @ grad(X) @ V
        a, w, b = np.linalg.svd(W - eta * Gw)
        Wn = (a * _project_simplex_ball(w, A)) @ b
        Xn = U @ Wn @ V.T
        fn = value(Xn)
        if fn <= f:
            W, X, f = Wn, Xn, fn
        else:
            eta *= 0.5
    return X


LMO_POWER_ITERS = 300


def _lmo_direction(G, cfg, v0):
    """Top singular pair of the gradient for the linear minimisation oracle.

    Warm-started power iteration, falling back to a dense SVD when the top
    singular values are so close that power iteration stalls (common for
    sign-like abs-loss gradients).
    """
    try:
        u, _, v = top_singular_pair(G, tol=cfg.power_tol, max_iters=LMO_POWER_ITERS, seed=cfg.seed, v0=v0)
    except ConvergenceError:
        U, _, Vt = np.linalg.svd(G, full_matrices=False)
        u, v = U[:, 0], Vt[0]
    return u, v


def _frank_wolfe(obs, A, B, cfg):
    obj = _Objective(obs, cfg.loss)
    pen = _BoxPenalty(B, cfg, obs.n, obs.m)
    sched = _Schedule(cfg, obj, pen)
    value, grad = _staged_objective(obj, pen, sched)
    X = np.zeros((obs.n, obs.m))
    best_X, best = X.copy(), obj.value(obj.at(X))
    traj, best_traj = [], []
    v_prev = None
    converged = False
    for t in range(cfg.iterations):
        sched.tick(t)
        G = grad(X)
        u, v = _lmo_direction(G, cfg, v_prev)
        v_prev = v
        S = -A * np.outer(u, v)
        D = S - X
        gap = float(np.sum(G * (X - S)))
        if gap <= cfg.tol * obj.scale:
            if sched.final:
                converged = True
                break
            sched.advance()
            continue
        if cfg.loss == "squared" and not pen.active:
            d = obj.at(D)
            curv = float(np.dot(obj.count, d * d))
            gamma = 1.0 if curv <= 0 else min(1.0, gap / (2.0 * curv / obj.s))
        else:
            gamma = _line_search(value, X, D)
        X = X + gamma * D
        if cfg.in_face_steps:
            c_data, c_pen = sched.curvature()
            L = c_data * obj.count.max() / obj.s + c_pen
            X = _in_face(X, value, grad, A, L, cfg.in_face_steps)
        cur = obj.value(obj.at(X))
        traj.append(cur)
        if not pen.active and cur < best:
            best_X = X.copy()
        best = min(best, cur)
        best_traj.append(best)
    if pen.active:
        # under a penalty the final iterate is the one to report
        best_X = X
    return best_X, obj.value(obj.at(best_X)), np.array(traj), np.array(best_traj), converged


def _line_search(value, X, D):
    from scipy.optimize import minimize_scalar

    f = lambda gamma: value(X + gamma * D)
    res = minimize_scalar(f, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-10})
    return float(res.x) if f(res.x) <= f(0.0) else 0.0


def _fit_trace(obs, A, B, cfg):
    _check_radius(A, B)
    t0 = time.perf_counter()
    X, loss, traj, best_traj, conv = _frank_wolfe(obs, A, B, cfg)
    resid = trace_norm(X) / A - 1.0 if np.any(X) else -1.0
    return FitResult(X, None, traj, best_traj, loss, cfg.constraint, A, B, resid,
                     box_violation(X, B), conv, time.perf_counter() - t0, [loss])


def erm_trace(obs, A, loss="squared", cfg=None):
    """Minimise the empirical loss over ``{X : ||X||_trace <= A}`` by Frank-Wolfe."""
    cfg = replace(cfg or SolverConfig(), loss=loss, constraint="trace")
    return _fit_trace(obs, A, math.inf, cfg)


def erm_trace_box(obs, A, B, loss="squared", cfg=None):
    """Trace ball intersected with ``|X|_inf <= B``, the box enforced by penalty."""
    cfg = replace(cfg or SolverConfig(), loss=loss, constraint="trace_box")
    return _fit_trace(obs, A, B, cfg)


# -- factored projected gradient for the max ball --------------------------------

def _cap_rows(W, cap):
    norms = np.sqrt(np.einsum("ij,ij->i", W, W))
    over = norms > cap
    if over.any():
        W = W.copy()
        W[over] *= (cap / norms[over])[:, None]
    return W


def _spectral_init(obj, k, cap):
    n, m = obj.n, obj.m
    Y = np.zeros((n, m))
    Y[obj.rows, obj.cols] = obj.ybar * obj.count * (n * m / obj.s)
    Uf, sig, Vt = np.linalg.svd(Y, full_matrices=False)
    kk = min(k, len(sig))
    U = np.zeros((n, k))
    V = np.zeros((m, k))
    U[:, :kk] = Uf[:, :kk] * np.sqrt(sig[:kk])
    V[:, :kk] = Vt[:kk].T * np.sqrt(sig[:kk])
    return _cap_rows(U, cap), _cap_rows(V, cap)


def _projected_gradient(obj, pen, A, cfg, U, V):
    cap = math.sqrt(A)
    n, m = obj.n, obj.m
    sched = _Schedule(cfg, obj, pen)
    U, V = _cap_rows(U, cap), _cap_rows(V, cap)

    def state(U, V):
        x = np.einsum("ij,ij->i", U[obj.rows], V[obj.cols])
        f, g = obj.smooth(x, sched.delta)
        G = np.zeros((n, m))
        G[obj.rows, obj.cols] = g
        if pen.active:
            pv, gp = pen(U @ V.T, sched.lam)
            f += pv
            G += gp
        return f, G, x

    def inv_lipschitz():
        c_data, c_pen = sched.curvature()
        return 1.0 / (c_data * A * obj.max_count / obj.s + c_pen * A * max(n, m))

    f, G, x = state(U, V)
    eta = inv_lipschitz()
    best = obj.value(x)
    best_UV = (U, V)
    traj, best_traj = [], []
    converged, quiet = False, 0
    for t in range(cfg.iterations):
        if sched.tick(t) or quiet >= PATIENCE:
            if quiet >= PATIENCE:
                if sched.final:
                    converged = True
                    break
                sched.advance()
            # the staged objective changed; re-evaluate and reset the step
            quiet = 0
            f, G, x = state(U, V)
            eta = inv_lipschitz()
        Un = _cap_rows(U - eta * (G @ V), cap)
        Vn = _cap_rows(V - eta * (G.T @ U), cap)
        fn, Gn, xn = state(Un, Vn)
        if fn > f:
            eta *= 0.5
            quiet = quiet + 1 if eta < 1e-6 * inv_lipschitz() else quiet
        else:
            decrease = f - fn
            U, V, f, G, x = Un, Vn, fn, Gn, xn
            quiet = quiet + 1 if decrease <= cfg.tol * obj.scale else 0
            # the 1/L step is conservative far from kinks; let backtracking find the scale
            eta *= STEP_GROWTH
        cur = obj.value(x)
        traj.append(cur)
        if pen.active:
            # under a penalty the latest accepted iterate is the one to report
            best_UV = (U, V)
        elif cur < best:
            best_UV = (U, V)
        best = min(best, cur)
        best_traj.append(best)
    return best_UV, np.array(traj), np.array(best_traj), converged


PATIENCE = 20
STEP_GROWTH = 1.25


def _penalty_stages(cfg):
    return int(math.ceil(math.log(cfg.penalty_max / cfg.penalty0) / math.log(cfg.penalty_growth)))


def _fit_max(obs, A, B, cfg, inits=None):
    _check_radius(A, B)
    t0 = time.perf_counter()
    obj = _Objective(obs, cfg.loss)
    pen = _BoxPenalty(B, cfg, obs.n, obs.m)
    k, cap = cfg.k, math.sqrt(A)
    best = None
    losses = []
    for rs in range(cfg.restarts):
        if inits is not None and rs < len(inits):
            U0, V0 = inits[rs]
        elif rs == 0:
            U0, V0 = _spectral_init(obj, k, cap)
        else:
            rng = make_rng(cfg.seed, "factored-start", rs)
            scale = 0.5 * cap / math.sqrt(k)
            U0 = scale * rng.standard_normal((obs.n, k))
            V0 = scale * rng.standard_normal((obs.m, k))
        (U, V), traj, best_traj, conv = _projected_gradient(obj, pen, A, cfg, U0, V0)
        X = U @ V.T
        loss = obj.value(obj.at(X))
        score = loss + (pen(X, cfg.penalty_max * obj.scale)[0] if pen.active else 0.0)
        losses.append(loss)
        if best is None or score < best[0]:
            best = (score, loss, U, V, traj, best_traj, conv)
    _, loss, U, V, traj, best_traj, conv = best
    fm = FactoredMatrix(U, V, cap)
    X = fm.matrix
    ru, rv = fm.max_row_norms()
    return FitResult(X, fm, traj, best_traj, loss, cfg.constraint, A, B, max(ru, rv) ** 2 / A - 1.0,
                     box_violation(X, B), conv, time.perf_counter() - t0, losses)


def erm_max(obs, A, loss="squared", cfg=None, inits=None):
    """Minimise the empirical loss over factored ``U V^T`` with row norms at most ``sqrt(A)``."""
    cfg = replace(cfg or SolverConfig(), loss=loss, constraint="max")
    return _fit_max(obs, A, math.inf, cfg, inits)


def erm_max_box(obs, A, B, loss="squared", cfg=None, inits=None):
    """As :func:`erm_max` with ``|X|_inf <= B`` enforced by penalty; ``B = inf`` disables it."""
    cfg = replace(cfg or SolverConfig(), loss=loss, constraint="max_box")
    return _fit_max(obs, A, B, cfg, inits)


def fit(obs, constraint, A, B=math.inf, loss="squared", cfg=None):
    if constraint == "trace":
        return erm_trace(obs, A, loss, cfg)
    if constraint == "max":
        return erm_max(obs, A, loss, cfg)
    if constraint == "trace_box":
        return erm_trace_box(obs, A, B, loss, cfg)
    if constraint == "max_box":
        return erm_max_box(obs, A, B, loss, cfg)
    raise ParameterError(f"unknown constraint {constraint!r}")


def empirical_loss(X, obs, loss="squared"):
    X = as_matrix(X)
    r = X[obs.rows, obs.cols] - obs.values
    return float(np.mean(np.abs(r) if loss == "abs" else r * r))


def loss_scale(obs, loss="squared"):
    """Empirical loss of the zero matrix: the yardstick for optimisation tolerances."""
    v = np.asarray(obs.values, dtype=float)
    return max(float(np.mean(np.abs(v) if loss == "abs" else v * v)), 1e-12)


# -- exact small-instance oracle -------------------------------------------------

def tiny_erm_oracle(obs, constraint, loss, A, B=math.inf, grid_resolution=21):
    """Global minimiser of the same objective by a conic solver, for ``nm <= 9``.

    The max ball uses the semidefinite characterisation
    ``[[W1, X], [X^T, W2]] >= 0`` with ``diag(W1), diag(W2) <= A``.
    ``grid_resolution`` is kept for interface compatibility only. The
    solver is exact up to its own tolerance and needs no grid.
    """
    import cvxpy as cp

    if obs.n * obs.m > 9:
        raise ParameterError("tiny_erm_oracle is limited to n*m <= 9")
    if grid_resolution < 21:
        raise ParameterError("grid_resolution must be at least 21")
    _check_radius(A, B)
    n, m = obs.n, obs.m
    X = cp.Variable((n, m))
    cons = []
    base = constraint.replace("_box", "")
    if base == "trace":
        cons.append(cp.normNuc(X) <= A)
    elif base == "max":
        W = cp.Variable((n + m, n + m), PSD=True)
        cons += [W[:n, n:] == X, cp.diag(W) <= A]
    else:
        raise ParameterError(f"unknown constraint {constraint!r}")
    if constraint.endswith("_box") and not math.isinf(B):
        cons.append(cp.abs(X) <= B)
    sel = np.zeros((obs.s, n * m))
    sel[np.arange(obs.s), obs.linear] = 1.0
    r = sel @ cp.vec(X, order="C") - obs.values
    f = cp.sum(cp.abs(r)) if loss == "abs" else cp.sum_squares(r)
    prob = cp.Problem(cp.Minimize(f / obs.s), cons)
    try:
        prob.solve(solver="CLARABEL")
    except cp.SolverError:
        prob.solve(solver="SCS", eps=1e-9)
    Xv = np.asarray(X.value)
    return empirical_loss(Xv, obs, loss), Xv


def evaluate(Xhat, target, heldout=None):
    """Mean absolute and mean squared deviation, optionally on a held-out index set."""
    Xhat, target = as_matrix(Xhat, "Xhat"), as_matrix(target, "target")
    if Xhat.shape != target.shape:
        raise ParameterError("shapes differ")
    D = target - Xhat
    out = {"l1": float(np.abs(D).mean()), "l2": float((D * D).mean())}
    if heldout is not None:
        d = D[heldout.rows, heldout.cols]
        out["heldout_l1"] = float(np.abs(d).mean())
        out["heldout_l2"] = float((d * d).mean())
    return out
