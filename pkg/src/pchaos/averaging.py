"""Pair-replacement averaging process and its mean-field limit.

Two uniformly chosen individuals at ``x_j, x_k`` are replaced by
``m + X_1, m + X_2`` with ``m = (x_j + x_k)/2`` and ``X_i ~ g`` i.i.d.
One unit of mean-field time is ``N/2`` replacements. In that clock the
one-particle characteristic function obeys

    ∂_t f̂(ξ) = ĝ(ξ) f̂(ξ/2)² - f̂(ξ),

whose stationary solution is the dyadic product ``Π_j ĝ(ξ/2^j)^{2^j}``.
For centred ``g`` with variance ``σ²`` the second moment solves
``dm₂/dt = -m₂/2 + μ²/2 + σ²`` (``μ`` the mean), so ``m₂ → 2σ²``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import _kernels
from .rng import make_stream, uniform_pairs

NOISE_FAMILIES = ("gaussian", "uniform", "twopoint", "pointmass")


@dataclass(frozen=True)
class NoiseLaw:
    """Centred displacement law.

    ``gaussian``: Normal(0, scale²); ``uniform``: Uniform(-scale, scale);
    ``twopoint``: ±scale with probability 1/2; ``pointmass``: 0.
    """

    family: str = "gaussian"
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.scale < 0 or (self.family != "pointmass" and self.scale == 0):
            raise ValueError("scale must be positive")

    @property
    def variance(self) -> float:
        s2 = self.scale**2
        return {"gaussian": s2, "uniform": s2 / 3.0, "twopoint": s2, "pointmass": 0.0}[self.family]

    @property
    def has_density(self) -> bool:
        return self.family in ("gaussian", "uniform")

    def charfun(self, xi):
        xi = np.asarray(xi, dtype=float)
        s = self.scale
        if self.family == "gaussian":
            return np.exp(-0.5 * (s * xi) ** 2)
        if self.family == "uniform":
            return np.sinc(s * xi / np.pi)
        if self.family == "twopoint":
            return np.cos(s * xi)
        return np.ones_like(xi)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        s = self.scale
        if self.family == "gaussian":
            return stats.norm.cdf(x, scale=s)
        if self.family == "uniform":
            return np.clip((x + s) / (2 * s), 0.0, 1.0)
        if self.family == "twopoint":
            return 0.5 * (x >= -s) + 0.5 * (x >= s)
        return (x >= 0).astype(float)

    def atoms(self):
        """``(points, weights)`` for discrete laws."""
        if self.family == "twopoint":
            return np.array([-self.scale, self.scale]), np.array([0.5, 0.5])
        if self.family == "pointmass":
            return np.array([0.0]), np.array([1.0])
        raise ValueError("law is continuous")

    def sample(self, rng: np.random.Generator, size=None):
        s = self.scale
        if self.family == "gaussian":
            return s * rng.standard_normal(size)
        if self.family == "uniform":
            return rng.uniform(-s, s, size)
        if self.family == "twopoint":
            return s * (2.0 * rng.integers(0, 2, size) - 1.0)
        return np.zeros(size)


# Particles -------------------------------------------------------------------


@dataclass
class AveragingEnsemble:
    x: np.ndarray
    events: int = 0

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float).ravel()
        if self.x.size < 2:
            raise ValueError("need N >= 2 individuals")

    @property
    def N(self) -> int:
        return self.x.size

    @property
    def time(self) -> float:
        return 2.0 * self.events / self.N


def averaging_step(ens: AveragingEnsemble, g: NoiseLaw, rng: np.random.Generator, pair=None):
    """One replacement, in place. Returns the pair used."""
    if pair is None:
        i, j = (int(a[0]) for a in uniform_pairs(ens.N, 1, rng))
    else:
        i, j = pair
    d = g.sample(rng, 2)
    _kernels.averaging_events(ens.x, np.array([i], dtype=np.int64), np.array([j], dtype=np.int64), d[:1], d[1:])
    ens.events += 1
    return i, j


def simulate_averaging(ens: AveragingEnsemble, g: NoiseLaw, n_events: int, rng: np.random.Generator,
                       record_every: int | None = None, chunk: int = 1 << 18):
    """Apply ``n_events`` replacements in place.

    Returns a list of ``(events, time, variance)`` taken every ``record_every``
    events (empty if not requested).
    """
    rec = []
    done = 0
    step = record_every or chunk
    while done < n_events:
        c = min(step, chunk, n_events - done)
        i, j = uniform_pairs(ens.N, c, rng)
        d = g.sample(rng, (2, c))
        _kernels.averaging_events(ens.x, i, j, d[0], d[1])
        done += c
        ens.events += c
        if record_every and (done % record_every == 0 or done == n_events):
            rec.append((ens.events, ens.time, float(np.var(ens.x))))
    return rec


def meanfield_averaging(x, g: NoiseLaw, T: float, dt: float, rng: np.random.Generator):
    """Nanbu sampler for the limit equation: per step each sample is replaced,
    with probability ``dt``, by the midpoint with a random partner plus noise."""
    if dt > 0.1:
        raise ValueError("dt must not exceed 0.1")
    x = np.array(x, dtype=float)
    M = x.size
    for _ in range(int(round(T / dt))):
        idx = np.nonzero(rng.random(M) < dt)[0]
        if idx.size:
            w = rng.integers(0, M - 1, idx.size)
            w += w >= idx
            x[idx] = 0.5 * (x[idx] + x[w]) + g.sample(rng, idx.size)
    return x


def empirical_charfun(samples, xi, center: bool = True):
    s = np.asarray(samples, dtype=float).ravel()
    if center:
        s = s - s.mean()
    return np.exp(1j * np.multiply.outer(np.asarray(xi, dtype=float), s)).mean(axis=-1)


# Characteristic functions -------------------------------------------------------


def stationary_charfun(ghat, xi, tol: float = 1e-9, max_levels: int = 64):
    """``ĝ(ξ) Π_{j≥1} ĝ(ξ/2^j)^{2^j}`` for a centred noise law.

    Once every ``ĝ(ξ/2^j)`` is within ``tol`` of 1 the noise is in its
    quadratic regime, where each further factor is the square root of the
    previous one; the remaining tail then equals the last factor. Stopping
    there also avoids raising a rounded ``ĝ ≈ 1`` to a huge power.
    """
    xi = np.asarray(xi, dtype=float)
    out = np.asarray(ghat(xi), dtype=complex).copy()
    for j in range(1, max_levels + 1):
        gj = np.asarray(ghat(xi / 2.0**j), dtype=complex)
        term = gj ** (2**j)
        out *= term
        if np.max(np.abs(gj - 1.0), initial=0.0) < tol:
            out *= term
            break
    else:
        raise RuntimeError(f"dyadic product not converged within {max_levels} levels")
    return out if out.ndim else complex(out)


def fixed_point_residual(fhat, ghat, xi):
    """``sup |ĝ(ξ) f̂(ξ/2)² - f̂(ξ)|`` for callables ``fhat`` and ``ghat``."""
    xi = np.asarray(xi, dtype=float)
    return float(np.max(np.abs(ghat(xi) * fhat(xi / 2) ** 2 - fhat(xi))))


def _midpoint_cubic(f):
    # value at the midpoint of each consecutive pair, from four neighbours
    return (-f[:-3] + 9 * f[1:-2] + 9 * f[2:-1] - f[3:]) / 16.0


class GridTooCoarse(ValueError):
    pass


@dataclass
class CharFunGrid:
    """Characteristic function on the symmetric grid ``ξ_i = i h``, ``|i| ≤ n``."""

    xi: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        v = np.asarray(self.values, dtype=complex)
        if xi.shape != v.shape or xi.size % 2 == 0 or xi.size < 9:
            raise ValueError("grid must be symmetric with an odd number (>= 9) of points")
        n = xi.size // 2
        h = xi[n + 1] - xi[n]
        if xi[n] != 0 or np.max(np.abs(np.diff(xi) - h)) > 1e-9 * h:
            raise ValueError("grid must be uniform and centred at 0")
        if abs(v[n] - 1) > 1e-12:
            raise ValueError("f(0) must be 1")
        self.xi, self.values = xi, v

    @property
    def h(self) -> float:
        return float(self.xi[1] - self.xi[0])

    @property
    def n(self) -> int:
        return self.xi.size // 2

    @classmethod
    def from_function(cls, func, Xi: float = 20.0, h: float = 0.01):
        n = int(round(Xi / h))
        xi = h * np.arange(-n, n + 1)
        v = np.asarray(func(xi), dtype=complex)
        v[n] = 1.0
        return cls(xi, v)

    def hermitian_defect(self) -> float:
        return float(np.max(np.abs(self.values - np.conj(self.values[::-1]))))

    def half(self, values=None):
        """``f̂(ξ/2)`` on the grid and an estimate of the interpolation error.

        Even offsets are grid points. Odd offsets use cubic midpoint
        interpolation, whose error is about ``(3/128) |Δ⁴f|``.
        """
        f = self.values if values is None else values
        n = self.n
        i = np.arange(-n, n + 1)
        out = np.empty_like(f)
        even = i % 2 == 0
        out[even] = f[n + i[even] // 2]
        odd_lo = n + (i[~even] - 1) // 2  # index of the left neighbour
        mids = _midpoint_cubic(f)  # mids[k] sits between f[k+1] and f[k+2]
        out[~even] = mids[odd_lo - 1]
        d4 = f[:-4] - 4 * f[1:-3] + 6 * f[2:-2] - 4 * f[3:-1] + f[4:]
        err = (3.0 / 128.0) * np.abs(d4[odd_lo - 2])
        return out, float(np.max(err, initial=0.0))

    def second_moment(self) -> float:
        """``-Re f̂''(0)`` by central differences."""
        n, h = self.n, self.h
        f = self.values
        return float(-np.real(f[n + 1] - 2 * f[n] + f[n - 1]) / h**2)

    def mean(self) -> float:
        n, h = self.n, self.h
        return float(np.imag(self.values[n + 1] - self.values[n - 1]) / (2 * h))


@dataclass
class CharFunTrajectory:
    times: np.ndarray
    values: np.ndarray  # (len(times), grid size)
    grid: CharFunGrid
    interp_error: float

    def at(self, k: int) -> CharFunGrid:
        return CharFunGrid(self.grid.xi, self.values[k])

    def second_moments(self):
        return np.array([self.at(k).second_moment() for k in range(self.times.size)])


def meanfield_evolve(f0: CharFunGrid, g: NoiseLaw | None, T: float, dt: float = 0.05, ghat=None,
                     record_every: int = 1, max_interp_error: float = 1e-6) -> CharFunTrajectory:
    """RK4 for ``∂_t f̂ = ĝ f̂(·/2)² - f̂`` on the grid of ``f0``."""
    if dt > 0.05 + 1e-15:
        raise ValueError("dt must not exceed 0.05")
    gv = np.asarray((ghat or g.charfun)(f0.xi), dtype=complex)
    worst = 0.0

    def rhs(f):
        nonlocal worst
        half, err = f0.half(f)
        worst = max(worst, err)
        if err > max_interp_error:
            raise GridTooCoarse(f"half-grid interpolation error {err:.2e} exceeds {max_interp_error:g}")
        return gv * half**2 - f

    f = f0.values.copy()
    n = f0.n
    steps = int(round(T / dt))
    times, rec = [0.0], [f.copy()]
    for s in range(1, steps + 1):
        k1 = rhs(f)
        k2 = rhs(f + 0.5 * dt * k1)
        k3 = rhs(f + 0.5 * dt * k2)
        k4 = rhs(f + dt * k3)
        f = f + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        f[n] = 1.0
        if s % record_every == 0 or s == steps:
            times.append(s * dt)
            rec.append(f.copy())
    return CharFunTrajectory(np.array(times), np.array(rec), f0, worst)


def m2_meanfield(t, m2_0: float, sigma2: float, mean: float = 0.0):
    """Closed-form solution of ``dm₂/dt = -m₂/2 + μ²/2 + σ²``."""
    stat = 2 * sigma2 + mean**2
    return stat + (m2_0 - stat) * np.exp(-0.5 * np.asarray(t, dtype=float))


# Marginal recursion -------------------------------------------------------------


@dataclass(frozen=True)
class GaussianMixture:
    """Initial one-particle law used by the recursion check."""

    weights: tuple = (0.5, 0.5)
    means: tuple = (-1.0, 1.5)
    sds: tuple = (0.5, 0.8)

    def sample(self, rng, size):
        comp = rng.choice(len(self.weights), size=size, p=np.asarray(self.weights))
        return np.asarray(self.means)[comp] + np.asarray(self.sds)[comp] * rng.standard_normal(size)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return (np.asarray(self.weights) * stats.norm.cdf(x, self.means, self.sds)).sum(axis=-1)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return (np.asarray(self.weights) * stats.norm.pdf(x, self.means, self.sds)).sum(axis=-1)

    def quantiles(self, q):
        lo = min(self.means) - 10 * max(self.sds)
        hi = max(self.means) + 10 * max(self.sds)
        x = np.linspace(lo, hi, 200001)
        return np.interp(q, self.cdf(x), x)

    def midpoint_law(self) -> "GaussianMixture":
        """Law of ``(X + Y)/2`` for independent ``X, Y`` from this mixture."""
        w, m, s = (np.asarray(a, dtype=float) for a in (self.weights, self.means, self.sds))
        W = np.outer(w, w).ravel()
        M = (0.5 * (m[:, None] + m[None, :])).ravel()
        S = (0.5 * np.sqrt(s[:, None] ** 2 + s[None, :] ** 2)).ravel()
        return GaussianMixture(tuple(W), tuple(M), tuple(S))


def _offspring_bin_probs(mid: GaussianMixture, g: NoiseLaw, edges, grid):
    """``P(m + X ∈ bin)`` for ``m ~ mid``, ``X ~ g`` (bins from ``edges``)."""
    if not g.has_density:
        pts, w = g.atoms()
        c = sum(wk * mid.cdf(edges - p) for p, wk in zip(pts, w))
        return np.diff(c)
    dens = mid.pdf(grid)
    dm = grid[1] - grid[0]
    c = np.array([np.sum(dens * g.cdf(e - grid)) * dm for e in edges])
    return np.diff(c)


def _pair_bin_probs(mid: GaussianMixture, g: NoiseLaw, edges, grid):
    """``P(m + X₁ ∈ A, m + X₂ ∈ B)`` for all bin pairs."""
    if not g.has_density:
        pts, w = g.atoms()
        out = np.zeros((len(edges) - 1, len(edges) - 1))
        for p1, w1 in zip(pts, w):
            for p2, w2 in zip(pts, w):
                # m must satisfy both constraints: intersect shifted intervals
                lo = np.maximum.outer(edges[:-1] - p1, edges[:-1] - p2)
                hi = np.minimum.outer(edges[1:] - p1, edges[1:] - p2)
                out += w1 * w2 * np.clip(mid.cdf(hi) - mid.cdf(np.minimum(lo, hi)), 0, None)
        return out
    dens = mid.pdf(grid)
    dm = grid[1] - grid[0]
    P = np.diff(g.cdf(edges[:, None] - grid[None, :]), axis=0)  # (bins, grid)
    return (P * dens) @ P.T * dm


@dataclass
class RecursionReport:
    N: int
    replicas: int
    p_one: float
    p_two: float
    chi2_one: float
    chi2_two: float
    edges: np.ndarray

    @property
    def passed(self) -> bool:
        return min(self.p_one, self.p_two) > 0.01


def _expected_marginals(N, f0: GaussianMixture, g: NoiseLaw, edges, quad_points=20001):
    mid = f0.midpoint_law()
    lo = min(mid.means) - 12 * max(mid.sds)
    hi = max(mid.means) + 12 * max(mid.sds)
    grid = np.linspace(lo, hi, quad_points)
    base = np.diff(f0.cdf(edges))
    off = _offspring_bin_probs(mid, g, edges, grid)
    p1 = (N - 2) / N * base + 2.0 / N * off
    p2 = (N - 2) * (N - 3) / (N * (N - 1)) * np.outer(base, base)
    p2 = p2 + 2.0 * (N - 2) / (N * (N - 1)) * (np.outer(base, off) + np.outer(off, base))
    if N >= 2:
        p2 = p2 + 2.0 / (N * (N - 1)) * _pair_bin_probs(mid, g, edges, grid)
    return p1, p2


def one_replacement(X: np.ndarray, g: NoiseLaw, rng: np.random.Generator):
    """One replacement in each row of ``X`` (shape ``(R, N)``), vectorised across replicas."""
    R, N = X.shape
    i, j = uniform_pairs(N, R, rng)
    rows = np.arange(R)
    m = 0.5 * (X[rows, i] + X[rows, j])
    X[rows, i] = m + g.sample(rng, R)
    X[rows, j] = m + g.sample(rng, R)
    return X


def marginal_recursion_check(N: int, replicas: int, g: NoiseLaw | None = None, seed: int = 0,
                             f0: GaussianMixture | None = None, bins: int = 10, min_expected: float = 20.0):
    """Simulate one replacement from product data and χ²-test the 1- and 2-marginals
    of particles (1, 2) against the explicit one-step formulas evaluated by quadrature."""
    if not 2 <= N <= 8:
        raise ValueError("exact small-N check needs 2 <= N <= 8")
    g = g or NoiseLaw("gaussian", 0.5)
    f0 = f0 or GaussianMixture()
    rng = make_stream(seed, 0)
    X = f0.sample(rng, (replicas, N))
    one_replacement(X, g, rng)
    # equiprobable bins under the initial law keep expected counts balanced
    edges = np.concatenate([[-np.inf], f0.quantiles(np.linspace(0, 1, bins + 1)[1:-1]), [np.inf]])
    p1, p2 = _expected_marginals(N, f0, g, edges)
    c1, _ = np.histogram(X[:, 1], edges)
    p_one, chi_one = _chi2(c1, p1, replicas, min_expected)
    if N >= 3:
        c2, _, _ = np.histogram2d(X[:, 1], X[:, 2], [edges, edges])
    else:
        c2, _, _ = np.histogram2d(X[:, 1], X[:, 0], [edges, edges])
    p_two, chi_two = _chi2(c2.ravel(), p2.ravel(), replicas, min_expected)
    return RecursionReport(N, replicas, p_one, p_two, chi_one, chi_two, edges)


def _chi2(counts, probs, R, min_expected):
    exp_ = probs * R
    keep = exp_ >= min_expected
    if keep.sum() < 3:
        raise ValueError("too few populated bins for a chi-square test")
    obs = np.append(counts[keep], counts[~keep].sum())
    ex = np.append(exp_[keep], exp_[~keep].sum())
    if ex[-1] == 0:
        obs, ex = obs[:-1], ex[:-1]
    ex = ex * obs.sum() / ex.sum()
    stat, p = stats.chisquare(obs, ex)
    return float(p), float(stat)
