"""Empirical measures, transport distances and the chaoticity defect."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

EXACT_MATCHING_CAP = 512


@dataclass
class EmpiricalMeasure:
    """Uniform-weight point measure ``(1/N) Σ δ_{x_j}``."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.shape[0] < 1:
            raise ValueError("empirical measure needs at least one point")
        self.points = p

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def integrate(self, phi: Callable) -> float:
        return float(np.mean(phi(self.points)))

    def marginal(self, coords: Sequence[int]) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.points[:, list(coords)])


def resample_common(a, b, rng: np.random.Generator):
    """Subsample the larger of two sample sets (without replacement) to the common size."""
    a = np.asarray(a)
    b = np.asarray(b)
    n = min(len(a), len(b))
    if len(a) > n:
        a = a[np.sort(rng.choice(len(a), n, replace=False))]
    if len(b) > n:
        b = b[np.sort(rng.choice(len(b), n, replace=False))]
    return a, b


def w1_1d(a, b) -> float:
    """Exact W1 between two equal-size samples on the line (order statistics coupling)."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    if a.size != b.size:
        raise ValueError("w1_1d needs equal sample counts; use resample_common or w1_empirical_1d")
    return float(np.mean(np.abs(a - b)))


def w1_empirical_1d(a, b) -> float:
    """Exact W1 between two 1-D empirical measures of any sizes, ``∫|F_a - F_b| dx``."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    x = np.concatenate([a, b])
    x.sort(kind="mergesort")
    fa = np.searchsorted(a, x[:-1], side="right") / a.size
    fb = np.searchsorted(b, x[:-1], side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * np.diff(x)))


def _as_points(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def w1_matched(a, b) -> float:
    """Exact W1 between equal-size uniform empirical measures in R^d.

    Solved as a minimum-cost perfect matching on the Euclidean cost matrix;
    limited to ``n <= 512``.
    """
    a = _as_points(a)
    b = _as_points(b)
    if a.shape != b.shape:
        raise ValueError(f"size mismatch {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n == 0:
        raise ValueError("empty sample")
    if n > EXACT_MATCHING_CAP:
        raise ValueError(f"n = {n} exceeds exact matching cap {EXACT_MATCHING_CAP}")
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / n)


def w1_subsampled(a, b, rng: np.random.Generator, cap: int = EXACT_MATCHING_CAP) -> float:
    """``w1_matched`` after subsampling both sets to ``min(len a, len b, cap)`` points."""
    a = _as_points(a)
    b = _as_points(b)
    n = min(len(a), len(b), cap)
    ia = np.sort(rng.choice(len(a), n, replace=False)) if len(a) > n else np.arange(n)
    ib = np.sort(rng.choice(len(b), n, replace=False)) if len(b) > n else np.arange(n)
    return w1_matched(a[ia], b[ib])


def _pair_distances(X, Y, metric):
    X = _as_points(X)
    Y = _as_points(Y)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("configurations must have the same number of particles")
    if metric is None:
        return np.sqrt(((X[:, None, :] - Y[None, :, :]) ** 2).sum(axis=-1))
    return np.array([[metric(x, y) for y in Y] for x in X], dtype=float)


def _max_matching(mask: np.ndarray) -> int:
    match = maximum_bipartite_matching(csr_matrix(mask.astype(np.int8)), perm_type="column")
    return int(np.count_nonzero(match >= 0))


def lp_config_distance(X, Y, metric: Callable | None = None) -> float:
    """Lévy-Prokhorov distance between two N-particle configurations.

    ``inf over permutations σ and ε > 0 of {ε : #{i : d(x_i, y_σ(i)) > ε}/N < ε}``.
    For a threshold ε the best permutation leaves ``N - M(ε)`` pairs farther
    than ε, where ``M(ε)`` is a maximum bipartite matching on the edges with
    ``d <= ε``; scanning the finitely many values where ``M`` jumps gives the
    exact infimum for every N. Values are capped at 1 by construction.
    """
    d = _pair_distances(X, Y, metric)
    n = d.shape[0]
    levels = np.unique(d)
    # below the smallest distance nothing is matched: ε in (1, levels[0])
    best = 1.0 if levels[0] > 1.0 else math.inf
    # on [levels[q], levels[q+1]) the matching number, hence the mismatch, is constant
    for q, lo in enumerate(levels):
        if best <= lo:
            break
        hi = levels[q + 1] if q + 1 < len(levels) else math.inf
        mismatch = (n - _max_matching(d <= lo)) / n
        cand = max(lo, mismatch)
        if cand < hi:
            best = min(best, cand)
    return float(best)


def lp_config_distance_bruteforce(X, Y, metric: Callable | None = None) -> float:
    """Same quantity by enumerating all permutations; for small N only."""
    from itertools import permutations

    d = _pair_distances(X, Y, metric)
    n = d.shape[0]
    best = math.inf
    for perm in permutations(range(n)):
        dist = np.sort(d[np.arange(n), perm])[::-1]
        # k pairs strictly above ε when ε in [dist[k], dist[k-1])
        for k in range(n + 1):
            lo = dist[k] if k < n else 0.0
            hi = dist[k - 1] if k > 0 else math.inf
            cand = max(lo, k / n)
            if cand < hi:
                best = min(best, cand)
    return float(best)


# Observables -----------------------------------------------------------------


@dataclass(frozen=True)
class Observable:
    name: str
    func: Callable
    sup_norm: float
    lipschitz: float
    coord: int = 0

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))


@dataclass
class ObservableDictionary:
    """Bounded Lipschitz test functions applied to one coordinate of a particle."""

    observables: list = field(default_factory=list)

    def __post_init__(self):
        for ob in self.observables:
            if not (math.isfinite(ob.sup_norm) and math.isfinite(ob.lipschitz)):
                raise ValueError(f"observable {ob.name} must be bounded and Lipschitz")

    def __len__(self):
        return len(self.observables)

    def evaluate(self, ensembles: np.ndarray) -> np.ndarray:
        """Values with shape ``(R, N, m)`` for ensembles of shape ``(R, N)`` or ``(R, N, d)``."""
        e = np.asarray(ensembles, dtype=float)
        if e.ndim == 2:
            e = e[:, :, None]
        return np.stack([ob.func(e[:, :, ob.coord]) for ob in self.observables], axis=-1)

    @classmethod
    def default(cls, dim: int = 1) -> "ObservableDictionary":
        base = [
            ("cos", np.cos, 1.0, 1.0),
            ("sin", np.sin, 1.0, 1.0),
            ("cos2", lambda x: np.cos(2 * x), 1.0, 2.0),
            ("tanh", np.tanh, 1.0, 1.0),
        ]
        obs = [
            Observable(f"{name}[{c}]" if dim > 1 else name, f, s, lip, c)
            for c in range(dim)
            for name, f, s, lip in base
        ]
        return cls(obs)


@dataclass
class DefectEstimate:
    defect: float
    stderr: float
    pair: tuple


def chaoticity_defect_estimate(replicas, dictionary: ObservableDictionary | None = None) -> DefectEstimate:
    """Chaoticity defect with a delta-method standard error.

    ``D_N = max_{φ,ψ} |Ê[φ(v_1)ψ(v_2)] - Ê[φ]Ê[ψ]|``. The pair term averages
    over ordered pairs ``i != j`` inside each replica; the product baseline
    averages over pairs of distinct replicas, which removes the
    ``O(1/replicas)`` bias of squaring a pooled mean.
    """
    e = np.asarray(replicas, dtype=float)
    R, N = e.shape[0], e.shape[1]
    if R < 2:
        raise ValueError("need at least two replicas")
    if N < 2:
        raise ValueError("need at least two particles")
    if dictionary is None:
        dictionary = ObservableDictionary.default(1 if e.ndim == 2 else e.shape[2])
    if len(dictionary) == 0:
        raise ValueError("empty observable dictionary")
    vals = dictionary.evaluate(e)  # (R, N, m)
    S = vals.sum(axis=1)  # (R, m)
    diag = np.einsum("rna,rnb->rab", vals, vals)
    pair_r = (S[:, :, None] * S[:, None, :] - diag) / (N * (N - 1))  # (R, m, m)
    pair = pair_r.mean(axis=0)
    tot = S.sum(axis=0)
    cross = (np.outer(tot, tot) - S.T @ S) / (R * (R - 1) * N * N)
    cov = pair - cross
    a, b = np.unravel_index(np.argmax(np.abs(cov)), cov.shape)
    A = S / N
    mu = A.mean(axis=0)
    q = pair_r[:, a, b] - mu[b] * A[:, a] - mu[a] * A[:, b]
    se = float(np.std(q, ddof=1) / math.sqrt(R))
    return DefectEstimate(float(abs(cov[a, b])), se, (dictionary.observables[a].name, dictionary.observables[b].name))


def chaoticity_defect(replicas, dictionary: ObservableDictionary | None = None) -> float:
    return chaoticity_defect_estimate(replicas, dictionary).defect


def marginal_samples(replicas, k: int) -> np.ndarray:
    """First ``k`` coordinates of every replica, shape ``(R, k)`` (or ``(R, k, d)``)."""
    e = np.asarray(replicas)
    if k < 1 or k > e.shape[1]:
        raise ValueError(f"k = {k} outside 1..N")
    return e[:, :k].copy()


def ks_distance(samples, cdf: Callable) -> float:
    """Kolmogorov-Smirnov distance between the empirical cdf of ``samples`` and ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    F = np.asarray(cdf(x), dtype=float)
    hi = np.arange(1, n + 1) / n - F
    lo = F - np.arange(0, n) / n
    return float(max(hi.max(), lo.max(), 0.0))


# Reports ---------------------------------------------------------------------


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    halfwidth: float
    used_n: list = field(default_factory=list)


def fit_loglog(ns, values, stderrs=None, min_snr: float = 5.0) -> RateFit:
    """Least-squares slope of ``log value`` on ``log N`` with a 95% half-width.

    Points whose value is below ``min_snr`` standard errors are dropped.
    """
    from scipy import stats

    ns = np.asarray(ns, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = v > 0
    if stderrs is not None:
        keep &= v > min_snr * np.asarray(stderrs, dtype=float)
    if keep.sum() < 3:
        return RateFit(math.nan, math.nan, math.nan, math.nan, ns[keep].astype(int).tolist())
    x = np.log(ns[keep])
    y = np.log(v[keep])
    res = stats.linregress(x, y)
    dof = keep.sum() - 2
    resid = float(np.sqrt(np.sum((y - res.intercept - res.slope * x) ** 2)))
    hw = float(stats.t.ppf(0.975, dof) * res.stderr) if dof > 0 else math.inf
    return RateFit(float(res.slope), float(res.intercept), resid, hw, ns[keep].astype(int).tolist())


@dataclass
class ChaosReport:
    model: str
    rows: list = field(default_factory=list)  # dicts: N, replicas, defect, stderr
    fit: RateFit | None = None
    warnings: list = field(default_factory=list)

    def add(self, N: int, replicas: int, defect: float, stderr: float, **extra):
        if self.rows and N <= self.rows[-1]["N"]:
            raise ValueError("N values must be strictly increasing")
        if defect < 0:
            raise ValueError("defect must be nonnegative")
        self.rows.append(dict(N=int(N), replicas=int(replicas), defect=float(defect), stderr=float(stderr), **extra))

    def to_jsonl(self) -> str:
        out = []
        for r in self.rows:
            out.append(json.dumps({"model": self.model, **r}, sort_keys=True))
        if self.fit is not None:
            out.append(json.dumps({"model": self.model, "fit": vars(self.fit), "warnings": self.warnings}, sort_keys=True))
        return "\n".join(out) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "N", "replicas", "defect", "stderr"])
        for r in self.rows:
            w.writerow([self.model, r["N"], r["replicas"], repr(r["defect"]), repr(r["stderr"])])
        return buf.getvalue()
