"""Individual-based sympatric speciation with assortative mating.

Each individual carries a fitness trait ``x``, an appearance trait ``y`` and a
preference ``y*``. Per generation:

1. individual ``k`` collects the share ``c_k`` of an atomic food measure,
   split among competitors by Gaussian kernels of width ``σ_x``;
2. ``k`` picks a partner ``j ≠ k`` with weight ``exp(-|y*_k - y_j|²/2σ²)``;
3. the couple has ``Poisson(((c_k + c_j)/2) ‖f‖)`` children;
4. each child is the parental midpoint plus Gaussian mutation.

Only the children survive into the next generation.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .rng import make_stream

DEFAULT_CAP = 1_000_000


class Extinction(Exception):
    """The population became empty."""


class PopulationCapExceeded(RuntimeError):
    pass


class ModeCountUnstable(UserWarning):
    pass


@dataclass(frozen=True)
class FoodDistribution:
    locations: tuple
    weights: tuple

    def __post_init__(self):
        loc = tuple(float(a) for a in self.locations)
        w = tuple(float(a) for a in self.weights)
        if not loc or len(loc) != len(w):
            raise ValueError("food needs matching, nonempty atoms and weights")
        if min(w) <= 0:
            raise ValueError("food weights must be positive")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @property
    def mass(self) -> float:
        return math.fsum(self.weights)

    @classmethod
    def atoms(cls, locations, total_mass: float):
        """Equal weights summing to ``total_mass``."""
        n = len(locations)
        return cls(tuple(locations), (total_mass / n,) * n)


@dataclass(frozen=True)
class SpeciationParams:
    sigma_x: float = 0.25
    sigma: float = 0.2  # math.inf: uniform partner choice
    mut_x: float = 0.05
    mut_y: float = 0.2
    mut_ystar: float = 0.2
    dim_y: int = 1
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if not self.sigma_x > 0 or not self.sigma > 0:
            raise ValueError("sigma_x and sigma must be positive")
        if min(self.mut_x, self.mut_y, self.mut_ystar) < 0:
            raise ValueError("mutation std-devs must be nonnegative")
        if self.dim_y < 1 or self.cap < 1:
            raise ValueError("dim_y and cap must be at least 1")


def _trait_matrix(a, n):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return a.reshape(0, a.shape[-1] if a.ndim > 1 else 1)
    return a.reshape(n, -1)


@dataclass
class Population:
    x: np.ndarray
    y: np.ndarray  # (N, dim_y)
    ystar: np.ndarray  # (N, dim_y)
    generation: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        n = self.x.size
        self.y = _trait_matrix(self.y, n)
        self.ystar = _trait_matrix(self.ystar, n)
        if self.y.shape != self.ystar.shape:
            raise ValueError("y and y* must have the same shape")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.ystar))):
            raise ValueError("traits must be finite")

    @property
    def N(self) -> int:
        return self.x.size

    @classmethod
    def monomorphic(cls, N: int, x: float = 0.0, dim_y: int = 1):
        return cls(np.full(N, x), np.zeros((N, dim_y)), np.zeros((N, dim_y)))

    def permuted(self, perm):
        return Population(self.x[perm], self.y[perm], self.ystar[perm], self.generation)


def fitness_shares(pop: Population, food: FoodDistribution, sigma_x: float) -> np.ndarray:
    """``c_k = Σ_atoms (w/‖f‖) K(x_k, a) / Σ_j K(x_j, a)`` with Gaussian ``K``.

    Kernel ratios are formed in log space so far-away atoms do not underflow.
    """
    if pop.N == 0:
        raise Extinction("empty population has no shares")
    a = np.asarray(food.locations)
    w = np.asarray(food.weights) / food.mass
    logk = -((pop.x[:, None] - a[None, :]) ** 2) / (2 * sigma_x**2)  # (N, atoms)
    e = np.exp(logk - logk.max(axis=0))
    # normalising by the column sum keeps Σ_k c_k = 1 to rounding
    return (e / e.sum(axis=0)) @ w


def food_entropy(c, N: int | None = None) -> float:
    """``W_c = Σ c_k log(N c_k)`` with ``0 log 0 = 0``.

    For shares summing to one this is the divergence from the uniform split,
    so it is nonnegative up to rounding; the value is returned unclamped.
    """
    c = np.asarray(c, dtype=float)
    N = c.size if N is None else N
    pos = c > 0
    return float(math.fsum((c[pos] * np.log(N * c[pos])).tolist()))


def partner_logweights(pop: Population, sigma: float) -> np.ndarray:
    """Row ``k``: unnormalised log-probabilities of choosing ``j``; ``-inf`` on the diagonal."""
    N = pop.N
    if math.isinf(sigma):
        L = np.zeros((N, N))
    else:
        d = pop.ystar[:, None, :] - pop.y[None, :, :]
        L = -np.sum(d * d, axis=-1) / (2 * sigma**2)
    np.fill_diagonal(L, -np.inf)
    return L


def partner_probabilities(pop: Population, sigma: float) -> np.ndarray:
    L = partner_logweights(pop, sigma)
    return np.exp(L - logsumexp(L, axis=1, keepdims=True))


def choose_partners(pop: Population, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Partner ``j_k`` for every ``k``, one uniform per individual in index order."""
    if pop.N < 2:
        raise ValueError("partner choice needs N >= 2")
    P = partner_probabilities(pop, sigma)
    cdf = np.cumsum(P, axis=1)
    u = rng.random(pop.N) * cdf[:, -1]
    j = (cdf < u[:, None]).sum(axis=1)
    # guard against landing on a zero-probability column through rounding
    bad = P[np.arange(pop.N), np.minimum(j, pop.N - 1)] == 0
    if np.any(bad):
        j[bad] = np.argmax(P[bad], axis=1)
    return np.minimum(j, pop.N - 1)


def choose_partner(k: int, pop: Population, sigma: float, rng: np.random.Generator) -> int:
    if pop.N < 2:
        raise ValueError("partner choice needs N >= 2")
    L = partner_logweights(pop, sigma)[k]
    p = np.exp(L - logsumexp(L))
    cdf = np.cumsum(p)
    j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    j = min(j, pop.N - 1)
    return j if p[j] > 0 else int(np.argmax(p))


def reproduce(k: int, j: int, c, mass: float, params: SpeciationParams, pop: Population, rng: np.random.Generator):
    """Children of the couple ``(k, j)`` as a :class:`Population`."""
    kappa = 0.5 * (c[k] + c[j]) * mass
    n = int(rng.poisson(kappa))
    return _children(pop, np.full(n, k), np.full(n, j), params, rng, pop.generation + 1)


def _children(pop, ks, js, params, rng, generation):
    n = ks.size
    dy = pop.y.shape[1]
    x = 0.5 * (pop.x[ks] + pop.x[js]) + params.mut_x * rng.standard_normal(n)
    y = 0.5 * (pop.y[ks] + pop.y[js]) + params.mut_y * rng.standard_normal((n, dy))
    ys = 0.5 * (pop.ystar[ks] + pop.ystar[js]) + params.mut_ystar * rng.standard_normal((n, dy))
    return Population(x, y, ys, generation)


@dataclass
class GenerationRecord:
    t: int
    N: int
    W_c: float
    share_sum: float
    modes_x: int
    modes_y: int
    mean_x: float
    var_x: float

    def row(self):
        return [self.t, self.N, repr(self.W_c), self.modes_x, self.modes_y, repr(self.mean_x), repr(self.var_x)]


def step_generation(pop: Population, food: FoodDistribution, params: SpeciationParams, rng: np.random.Generator,
                    shares=None):
    """Next generation (possibly empty) and the shares ``c`` of the current one."""
    if pop.N < 2:
        raise ValueError("a generation step needs N >= 2")
    c = fitness_shares(pop, food, params.sigma_x) if shares is None else shares
    js = choose_partners(pop, params.sigma, rng)
    kappa = 0.5 * (c + c[js]) * food.mass
    counts = rng.poisson(kappa)
    total = int(counts.sum())
    if total > params.cap:
        raise PopulationCapExceeded(f"generation {pop.generation + 1} would hold {total} > cap {params.cap}")
    ks = np.repeat(np.arange(pop.N), counts)
    return _children(pop, ks, js[ks], params, rng, pop.generation + 1), c


def expected_next_size(pop: Population, food: FoodDistribution, params: SpeciationParams) -> float:
    """``Σ_k ((c_k + E[c_{j_k}])/2) ‖f‖`` with the exact partner-choice expectation."""
    c = fitness_shares(pop, food, params.sigma_x)
    P = partner_probabilities(pop, params.sigma)
    return float(0.5 * np.sum(c + P @ c) * food.mass)


def detect_modes(x, bandwidth: float, grid_points: int = 512, threshold: float = 0.05,
                 check_stability: bool = False) -> int:
    """Number of strict local maxima of a Gaussian KDE above ``threshold`` times its peak.

    The grid spans the data range padded by four bandwidths. With
    ``check_stability`` the count is recomputed at half and double the
    bandwidth and a :class:`ModeCountUnstable` warning is issued on
    disagreement.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 10:
        raise ValueError("need at least 10 values")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if np.ptp(x) == 0:
        return 1
    n = _count_modes(x, bandwidth, grid_points, threshold)
    if check_stability:
        others = [_count_modes(x, f * bandwidth, grid_points, threshold) for f in (0.5, 2.0)]
        if any(o != n for o in others):
            warnings.warn(
                f"mode count unstable: {others[0]}/{n}/{others[1]} at bandwidth x0.5/x1/x2 of {bandwidth:g}",
                ModeCountUnstable,
            )
    return n


def _count_modes(x, bw, grid_points, threshold):
    grid = np.linspace(x.min() - 4 * bw, x.max() + 4 * bw, grid_points)
    # chunk the data to keep memory bounded for large populations
    dens = np.zeros(grid_points)
    for s in range(0, x.size, 4096):
        z = (grid[:, None] - x[None, s:s + 4096]) / bw
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    peak = dens.max()
    inner = dens[1:-1]
    is_max = (inner > dens[:-2]) & (inner > dens[2:]) & (inner >= threshold * peak)
    return int(is_max.sum())


@dataclass
class SpeciationRun:
    records: list = field(default_factory=list)
    final: Population | None = None
    extinct: bool = False
    first_split: int | None = None  # first generation with two or more x-modes

    def rows(self):
        return [r.row() for r in self.records]


def run_speciation(food: FoodDistribution, params: SpeciationParams, generations: int, seed: int = 0,
                   initial: Population | None = None, bandwidth: float = 0.2, stream_id: int = 0,
                   stop_after_split: bool = False) -> SpeciationRun:
    """Simulate up to ``generations`` steps; extinction ends the run early."""
    rng = make_stream(seed, stream_id)
    pop = initial or Population.monomorphic(int(round(food.mass)), 0.0, params.dim_y)
    run = SpeciationRun()
    for _ in range(generations + 1):
        if pop.N < 2:
            run.extinct = True
            break
        c = fitness_shares(pop, food, params.sigma_x)
        mx = detect_modes(pop.x, bandwidth) if pop.N >= 10 else 1
        my = detect_modes(pop.y[:, 0], bandwidth) if pop.N >= 10 else 1
        run.records.append(GenerationRecord(pop.generation, pop.N, food_entropy(c, pop.N), float(math.fsum(c.tolist())),
                                            mx, my, float(pop.x.mean()), float(pop.x.var())))
        if mx >= 2 and run.first_split is None:
            run.first_split = pop.generation
            if stop_after_split:
                break
        if pop.generation >= generations:
            break
        pop, _ = step_generation(pop, food, params, rng, shares=c)
    run.final = pop
    return run
