"""Seeded random streams and the samplers shared by every model.

Streams are ``numpy.random.Generator`` objects driven by the Philox4x64-10
counter-based bit generator, keyed through ``SeedSequence(seed,
spawn_key=(stream_id,))``. The same ``(seed, stream_id)`` therefore replays
the same draws on any platform with the same numpy major version, and
different stream ids give independent streams.

Circle densities use the normalised measure ``dθ/2π`` and Fourier
coefficients are ``a_k = ∫ f(θ) e^{-ikθ} dθ/2π`` throughout the package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

RNG_ALGORITHM = "numpy.random.Philox(SeedSequence(seed, spawn_key=(stream_id,)))"

WRAPPED_FAMILIES = ("gaussian", "uniform", "pointmass")


def make_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Deterministic generator for replica ``stream_id`` of a run seeded with ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class WrappedNoise:
    """Angular noise ``g_τ``: a base density ``ρ`` on R scaled by ``τ`` and wrapped.

    ``family`` is one of ``gaussian`` (unit variance), ``uniform`` (on
    [-1, 1]) or ``pointmass`` (finite mixture of atoms; symmetric mixtures give
    a real spectrum).
    """

    family: str = "gaussian"
    tau: float = 1.0
    atoms: tuple = (0.0,)
    weights: tuple = (1.0,)

    def __post_init__(self):
        if self.family not in WRAPPED_FAMILIES:
            raise ValueError(f"unsupported base family {self.family!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.family == "pointmass":
            if len(self.atoms) != len(self.weights) or not self.atoms:
                raise ValueError("pointmass needs matching atoms and weights")
            if min(self.weights) < 0 or not math.isclose(sum(self.weights), 1.0, rel_tol=1e-12):
                raise ValueError("pointmass weights must be nonnegative and sum to 1")

    def base_charfun(self, s):
        """``ρ̂(s) = ∫ ρ(x) e^{-isx} dx`` (real part; imaginary part is zero for symmetric ρ)."""
        s = np.asarray(s, dtype=float)
        if self.family == "gaussian":
            return np.exp(-0.5 * s * s)
        if self.family == "uniform":
            # np.sinc(x) = sin(πx)/(πx)
            return np.sinc(s / np.pi)
        x = np.asarray(self.atoms, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        phase = np.multiply.outer(s, x)
        im = (np.sin(phase) * w).sum(axis=-1)
        if np.any(np.abs(im) > 1e-12):
            raise ValueError("pointmass mixture is not symmetric; spectrum is complex")
        return (np.cos(phase) * w).sum(axis=-1)

    def density(self, theta, n_wraps: int = 50):
        """``g_τ(θ)`` w.r.t. ``dθ/2π`` by direct summation of wrapped copies (continuous families)."""
        theta = np.asarray(theta, dtype=float)
        j = np.arange(-n_wraps, n_wraps + 1)
        y = (theta[..., None] - 2 * np.pi * j) / self.tau
        if self.family == "gaussian":
            rho = np.exp(-0.5 * y * y) / math.sqrt(2 * math.pi)
        elif self.family == "uniform":
            rho = np.where(np.abs(y) <= 1.0, 0.5, 0.0)
        else:
            raise ValueError("pointmass noise has no density")
        return 2 * np.pi * rho.sum(axis=-1) / self.tau


def wrap_angle(a):
    """Reduce angles into ``[-π, π)``."""
    return a - 2 * np.pi * np.floor((a + np.pi) / (2 * np.pi))


def sample_base(noise: WrappedNoise, rng: np.random.Generator, size=None):
    if noise.family == "gaussian":
        return rng.standard_normal(size)
    if noise.family == "uniform":
        return rng.uniform(-1.0, 1.0, size)
    idx = rng.choice(len(noise.atoms), size=size, p=np.asarray(noise.weights))
    return np.asarray(noise.atoms, dtype=float)[idx]


def sample_wrapped(noise: WrappedNoise, rng: np.random.Generator, size=None):
    """Draw angles in ``[-π, π)`` distributed as ``g_τ``.

    Samples ``ρ``, scales by ``τ`` and reduces mod 2π, which is exact (no
    truncation of the wrap sum).
    """
    return wrap_angle(noise.tau * sample_base(noise, rng, size))


@dataclass(frozen=True)
class NoiseSpectrum:
    """Real Fourier coefficients ``γ_0..γ_K`` of a symmetric angular noise."""

    gamma: np.ndarray = field(repr=False)

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 1 or g.size < 2:
            raise ValueError("spectrum needs at least gamma_0 and gamma_1")
        if g[0] != 1.0:
            raise ValueError("gamma_0 must be exactly 1")
        if np.any(np.abs(g) > 1.0 + 1e-12):
            raise ValueError("|gamma_k| must not exceed 1")
        object.__setattr__(self, "gamma", g)

    @property
    def K(self) -> int:
        return self.gamma.size - 1

    def __getitem__(self, k):
        return self.gamma[k]

    @classmethod
    def from_values(cls, values):
        return cls(np.asarray(values, dtype=float))


def noise_spectrum(noise: WrappedNoise, K: int) -> NoiseSpectrum:
    """``γ_k = ρ̂(τk)`` for ``k = 0..K``; ``γ_0`` is set to exactly 1."""
    if K < 1:
        raise ValueError("K must be at least 1")
    k = np.arange(K + 1, dtype=float)
    g = np.array(noise.base_charfun(noise.tau * k), dtype=float)
    g[0] = 1.0
    return NoiseSpectrum(g)


def sample_uniform_sphere(n: int, radius: float, rng: np.random.Generator, size=None):
    """Uniform point(s) on the sphere of the given radius in R^n.

    Normalises a vector of standard Gaussians. With ``size`` a batch of shape
    ``(size, n)`` is returned.
    """
    if n < 2:
        raise ValueError("dimension must be at least 2")
    if not radius > 0:
        raise ValueError("radius must be positive")
    shape = (n,) if size is None else (size, n)
    g = rng.standard_normal(shape)
    norm = np.sqrt(np.einsum("...i,...i->...", g, g))
    return g * (radius / norm)[..., None] if size is not None else g * (radius / norm)


def exp_clock(rate: float, rng: np.random.Generator, size=None):
    """Exponential waiting time(s) with the given rate (mean ``1/rate``)."""
    if not rate > 0:
        raise ValueError("rate must be positive")
    return rng.exponential(1.0 / rate, size)


def uniform_pairs(n: int, count: int, rng: np.random.Generator):
    """``count`` uniformly chosen unordered pairs ``(i, j)``, ``i != j``, as two int64 arrays."""
    i = rng.integers(0, n, count, dtype=np.int64)
    j = rng.integers(0, n - 1, count, dtype=np.int64)
    j += j >= i
    return i, j


def poisson_event_times(rate: float, t0: float, t1: float, rng: np.random.Generator):
    """Arrival times of a rate-``rate`` Poisson process on ``(t0, t1]``."""
    mean_count = rate * (t1 - t0)
    block = max(16, int(mean_count + 6 * math.sqrt(mean_count) + 16))
    times = []
    t = t0
    while True:
        gaps = rng.exponential(1.0 / rate, block)
        arr = t + np.cumsum(gaps)
        stop = np.searchsorted(arr, t1, side="right")
        times.append(arr[:stop])
        if stop < block:
            break
        t = arr[-1]
    return np.concatenate(times)


def unit_vectors3(count: int, rng: np.random.Generator):
    """Isotropic unit vectors in R^3, shape ``(count, 3)``."""
    g = rng.standard_normal((count, 3))
    return g / np.sqrt(np.einsum("ij,ij->i", g, g))[:, None]
