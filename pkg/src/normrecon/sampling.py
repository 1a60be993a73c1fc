"""Index sampling, noise models and observation sets."""

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import ParameterError
from .linalg import as_matrix
from .rng import make_rng

WITH = "with_replacement"
WITHOUT = "without_replacement"
PER_ENTRY = "per_entry"
PER_OBSERVATION = "per_observation"


@dataclass(frozen=True, eq=False)
class IndexSample:
    """Ordered sample of ``s`` positions in an ``n x m`` grid."""

    rows: np.ndarray
    cols: np.ndarray
    n: int
    m: int
    mode: str = WITH
    seed: int = 0

    def __post_init__(self):
        if len(self.rows) != len(self.cols):
            raise ValueError("rows and cols differ in length")
        if len(self.rows) and (self.rows.min() < 0 or self.rows.max() >= self.n
                               or self.cols.min() < 0 or self.cols.max() >= self.m):
            raise ValueError("index out of range")

    @property
    def s(self):
        return len(self.rows)

    @property
    def pairs(self):
        return np.column_stack([self.rows, self.cols])

    @property
    def linear(self):
        return self.rows * self.m + self.cols

    @classmethod
    def from_pairs(cls, pairs, n, m, mode=WITH, seed=0):
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return cls(pairs[:, 0].copy(), pairs[:, 1].copy(), n, m, mode, seed)


def sample_indices(n, m, s, mode=WITH, seed=0):
    """Draw ``s`` positions uniformly, i.i.d. or as a uniformly ordered ``s``-subset.

    The without-replacement branch is a partial Fisher-Yates shuffle over a
    virtual ``0..nm-1`` array; only the touched slots are stored.
    """
    nm = n * m
    if s < 1:
        raise ParameterError("s must be at least 1")
    rng = make_rng(seed, "indices", mode)
    if mode == WITH:
        lin = rng.integers(0, nm, size=s)
    elif mode == WITHOUT:
        if s > nm:
            raise ParameterError(f"s = {s} exceeds n*m = {nm} without replacement")
        swaps = rng.integers(np.arange(s), nm)
        virtual = {}
        lin = np.empty(s, dtype=np.int64)
        for t in range(s):
            j = int(swaps[t])
            vt, vj = virtual.get(t, t), virtual.get(j, j)
            virtual[t], virtual[j] = vj, vt
            lin[t] = vj
    else:
        raise ParameterError(f"unknown sampling mode {mode!r}")
    lin = np.asarray(lin, dtype=np.int64)
    return IndexSample(lin // m, lin % m, n, m, mode, seed)


def multiplicity_vector(sample):
    """``(N_1, ..., N_s)`` where ``N_i`` counts positions seen exactly ``i`` times."""
    counts = np.bincount(sample.linear, minlength=1)
    N = np.bincount(counts[counts > 0], minlength=sample.s + 1)[1:sample.s + 1]
    assert int(np.dot(np.arange(1, len(N) + 1), N)) == sample.s
    return N


def reduce_multiplicity(N, r):
    """The two derived vectors ``(N', N'')`` used to strip the top multiplicity ``r``.

    ``N'`` turns every position seen ``r`` times into ``r`` singletons;
    ``N''`` drops them. ``N`` must vanish beyond index ``r``.
    """
    N = [int(x) for x in N]
    if r < 1 or r > len(N) or any(N[r:]):
        raise ValueError("N must have the form (N_1, ..., N_r, 0, ...)")
    Np = [0] * len(N)
    Npp = [0] * len(N)
    for i in range(1, r):
        Np[i - 1] = N[i - 1]
        Npp[i - 1] = N[i - 1]
    Np[0] = N[0] + r * N[r - 1] if r > 1 else N[0]
    if r == 1:
        # stripping singletons leaves nothing of multiplicity 1
        Npp[0] = 0
    return Np, Npp


# -- noise models -----------------------------------------------------------

@dataclass(frozen=True)
class NoNoise:
    def draw(self, rng, rows, cols):
        return np.zeros(len(rows))

    def second_moment(self, n, m):
        return np.zeros((n, m))


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float

    def draw(self, rng, rows, cols):
        return self.sigma * rng.standard_normal(len(rows))

    def second_moment(self, n, m):
        return np.full((n, m), self.sigma**2)


@dataclass(frozen=True)
class UniformNoise:
    half_width: float

    def draw(self, rng, rows, cols):
        return rng.uniform(-self.half_width, self.half_width, len(rows))

    def second_moment(self, n, m):
        return np.full((n, m), self.half_width**2 / 3)


@dataclass(frozen=True, eq=False)
class LocationDependentNoise:
    """Finite discrete law per entry: ``values[i, j, :]`` with ``probs[i, j, :]``."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if v.shape != p.shape or v.ndim != 3:
            raise ValueError("values and probs must share shape (n, m, k)")
        if np.any(p < 0) or not np.allclose(p.sum(-1), 1.0, atol=1e-12):
            raise ValueError("each entry's probabilities must be nonnegative and sum to 1")
        if np.abs((v * p).sum(-1)).max() > 1e-12:
            raise ValueError("location-dependent noise must have mean zero at every entry")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def two_point(cls, n, m, amplitude):
        """Symmetric +-amplitude noise; ``amplitude`` may be a scalar or an ``n x m`` array."""
        a = np.broadcast_to(np.asarray(amplitude, dtype=float), (n, m))
        return cls(np.stack([-a, a], -1), np.full((n, m, 2), 0.5))

    def draw(self, rng, rows, cols):
        cdf = np.cumsum(self.probs[rows, cols], -1)
        u = rng.random(len(rows))[:, None]
        k = np.minimum((u > cdf).sum(-1), self.values.shape[-1] - 1)
        return self.values[rows, cols, k]

    def second_moment(self, n, m):
        return (self.values**2 * self.probs).sum(-1)


@dataclass(frozen=True, eq=False)
class AdversarialNoise:
    """A fixed, arbitrary noise matrix ``Z`` (possibly biased or correlated)."""

    Z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Z", as_matrix(self.Z, "Z"))

    def draw(self, rng, rows, cols):
        return self.Z[rows, cols]

    def second_moment(self, n, m):
        return self.Z**2


def noise_from_spec(kind, sigma=0.0, n=None, m=None, Z=None):
    if kind in ("none", None):
        return NoNoise()
    if kind == "gaussian":
        return GaussianNoise(sigma)
    if kind == "uniform":
        return UniformNoise(sigma)
    if kind == "two_point":
        return LocationDependentNoise.two_point(n, m, sigma)
    if kind == "adversarial":
        return AdversarialNoise(Z)
    raise ParameterError(f"unknown noise kind {kind!r}")


# -- observations -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ObservationSet:
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    n: int
    m: int
    semantics: str = PER_ENTRY
    mode: str = WITH
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def s(self):
        return len(self.values)

    @property
    def linear(self):
        return self.rows * self.m + self.cols

    @property
    def sample(self):
        return IndexSample(self.rows, self.cols, self.n, self.m, self.mode, self.seed)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(f"{self.n} {self.m} {self.s} {self.semantics}\n")
            for i, j, v in zip(self.rows, self.cols, self.values):
                fh.write(f"{i} {j} {v:.17g}\n")

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 4:
                raise ValueError("observation header must be 'n m s semantics'")
            n, m, s, semantics = int(header[0]), int(header[1]), int(header[2]), header[3]
            body = np.loadtxt(fh, ndmin=2) if s else np.zeros((0, 3))
        if body.shape[0] != s:
            raise ValueError(f"header announces {s} records, found {body.shape[0]}")
        rows, cols = body[:, 0].astype(np.int64), body[:, 1].astype(np.int64)
        return cls(rows, cols, body[:, 2].copy(), n, m, semantics)


def observe(M, sample, noise=None, semantics=PER_ENTRY, seed=0):
    """Observed values ``M_ij + noise`` at every position of ``sample``.

    ``per_entry`` draws one noise value per distinct position, so repeats
    agree exactly; ``per_observation`` draws fresh noise for every record.
    """
    M = as_matrix(M, "M")
    noise = NoNoise() if noise is None else noise
    if M.shape != (sample.n, sample.m):
        raise ParameterError(f"M has shape {M.shape}, sample is on {(sample.n, sample.m)}")
    if isinstance(noise, AdversarialNoise):
        if semantics == PER_OBSERVATION:
            raise ParameterError("adversarial noise is a fixed matrix; per_observation semantics is contradictory")
        if noise.Z.shape != M.shape:
            raise ParameterError("Z must have the same shape as M")
    rng = make_rng(seed, "noise", semantics)
    rows, cols = sample.rows, sample.cols
    if semantics == PER_ENTRY:
        uniq, inv = np.unique(sample.linear, return_inverse=True)
        z = noise.draw(rng, uniq // sample.m, uniq % sample.m)[inv]
    elif semantics == PER_OBSERVATION:
        z = noise.draw(rng, rows, cols)
    else:
        raise ParameterError(f"unknown semantics {semantics!r}")
    return ObservationSet(rows.copy(), cols.copy(), M[rows, cols] + z, sample.n, sample.m,
                          semantics, sample.mode, seed)


def observe_all(Y):
    """Every entry of ``Y`` observed once, in row-major order."""
    Y = as_matrix(Y, "Y")
    n, m = Y.shape
    lin = np.arange(n * m)
    return ObservationSet(lin // m, lin % m, Y.ravel().copy(), n, m, PER_ENTRY, WITHOUT)


def noise_precondition_check(Z, r, strict=False):
    """Compare ``|Z|_inf`` with ``sqrt(r n / log n)`` and the stricter ``sqrt(r log n)``.

    ``n`` is the larger dimension of ``Z``.
    """
    Z = as_matrix(Z, "Z")
    n = max(Z.shape)
    if n < 2:
        raise ParameterError("need max(n, m) >= 2")
    linf = float(np.abs(Z).max())
    lenient = math.sqrt(r * n / math.log(n))
    strict_t = math.sqrt(r * math.log(n))
    ok_l, ok_s = linf <= lenient, linf <= strict_t
    return {"linf": linf, "threshold": lenient, "strict_threshold": strict_t,
            "passes_lenient": ok_l, "passes_strict": ok_s,
            "passed": ok_s if strict else ok_l, "strict": bool(strict)}


def spiky_matrix(n, m, r, seed=0):
    """``sqrt(m/r) (A | 0)`` with ``A`` an ``n x r`` uniform random sign block."""
    if not 1 <= r <= min(n, m):
        raise ParameterError("need 1 <= r <= min(n, m)")
    A = make_rng(seed, "spiky").choice([-1.0, 1.0], size=(n, r))
    Y = np.zeros((n, m))
    Y[:, :r] = math.sqrt(m / r) * A
    return Y


def planted_low_rank(n, m, r, seed=0):
    """Rank-``r`` matrix ``U V^T`` whose factor rows are uniform random unit vectors.

    Entries lie in ``[-1, 1]``, the factorisation certifies a max-norm of at
    most 1, and the mean squared entry is ``1/r`` in expectation.
    """
    if not 1 <= r <= min(n, m):
        raise ParameterError("need 1 <= r <= min(n, m)")
    rng = make_rng(seed, "planted")
    U = rng.standard_normal((n, r))
    V = rng.standard_normal((m, r))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    return U @ V.T
