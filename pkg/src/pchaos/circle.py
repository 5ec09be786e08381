"""Homogeneous alignment on the circle: pair-midpoint jumps, Fourier-mode ODE, stability.

A uniformly chosen pair jumps to the circular midpoint of its two angles,
and each particle then receives independent wrapped noise. Each particle
jumps at unit rate, so the pair process runs at total rate ``N/2``. At that
rate the one-particle law obeys

    da_k/dt = γ_k Σ_n a_{k-n} a_n Γ(n - k/2) - a_0 a_k,

with ``Γ(z) = sin(πz)/(πz)``. Linearising at the uniform law gives
``λ_k = 2 γ_k Γ(k/2) - Γ(0) - Γ(k)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .rng import (
    NoiseSpectrum,
    WrappedNoise,
    make_stream,
    noise_spectrum,
    poisson_event_times,
    sample_wrapped,
    uniform_pairs,
    wrap_angle,
)

DEFAULT_K = 64
TRUNCATION_THRESHOLD = 1e-8
PARTICLE_RATE = 1.0  # jumps per particle per unit time


class TruncationWarning(RuntimeWarning):
    """The highest retained Fourier mode is no longer negligible."""


def sinc_gamma(z):
    """``Γ(z) = sin(πz)/(πz)`` with ``Γ(0) = 1``; exactly zero at nonzero integers."""
    z = np.asarray(z, dtype=float)
    out = np.sinc(z)
    integer = (z == np.round(z)) & (z != 0)
    out = np.where(integer, 0.0, out)
    return out if out.ndim else float(out)


def beta_weight(beta=None):
    """Only the constant interaction weight is supported."""
    if beta is not None and beta != 1:
        raise NotImplementedError("only beta == 1 is implemented")
    return 1.0


# Particles ------------------------------------------------------------------


@dataclass
class AngularEnsemble:
    theta: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        th = np.array(self.theta, dtype=float).ravel()
        if th.size < 2:
            raise ValueError("need N >= 2 angles")
        self.theta = wrap_angle(th)

    @property
    def N(self) -> int:
        return self.theta.size

    def coefficient(self, k: int = 1) -> complex:
        """Empirical ``a_k = N⁻¹ Σ e^{-ikθ_j}``."""
        return complex(np.mean(np.exp(-1j * k * self.theta)))

    def resultant(self) -> float:
        return abs(self.coefficient(1))


@dataclass(frozen=True)
class JumpEvent:
    i: int
    j: int
    noise: tuple
    t: float = 0.0


def circle_midpoint(a, b):
    """``a + rep(b - a)/2`` where ``rep`` reduces into ``(-π, π]``."""
    d = np.asarray(b, dtype=float) - a
    d = d - 2 * np.pi * np.ceil((d - np.pi) / (2 * np.pi))
    return a + 0.5 * d


def pair_jump(ens: AngularEnsemble, noise: WrappedNoise, rng: np.random.Generator, pair=None, draws=None):
    """Apply one jump in place and return the event.

    ``pair`` and ``draws`` override the random pair and the two noise values.
    """
    if pair is None:
        i, j = (int(x[0]) for x in uniform_pairs(ens.N, 1, rng))
    else:
        i, j = pair
    n = np.asarray(draws, dtype=float) if draws is not None else sample_wrapped(noise, rng, 2)
    _kernels.circle_events(
        ens.theta, np.array([i], dtype=np.int64), np.array([j], dtype=np.int64), n[:1].copy(), n[1:2].copy()
    )
    return JumpEvent(i, j, (float(n[0]), float(n[1])), ens.t)


def simulate_circle(ens: AngularEnsemble, noise: WrappedNoise, T: float, rng: np.random.Generator, times=None,
                    return_states: bool = False):
    """Run for time ``T``; returns ``(times, a1)`` with the empirical complex ``a_1`` at each time.

    With ``return_states`` a third element holds the angles at each time.
    """
    N = ens.N
    t0 = ens.t
    times = np.array([t0, t0 + T] if times is None else times, dtype=float)
    ev_t = poisson_event_times(PARTICLE_RATE * N / 2.0, t0, t0 + T, rng)
    i, j = uniform_pairs(N, ev_t.size, rng)
    n = sample_wrapped(noise, rng, (2, ev_t.size))
    cuts = np.searchsorted(ev_t, times, side="right")
    a1 = np.empty(times.size, dtype=complex)
    states = np.empty((times.size, N)) if return_states else None
    done = 0
    for k, c in enumerate(cuts):
        if c > done:
            _kernels.circle_events(ens.theta, i[done:c], j[done:c], n[0, done:c], n[1, done:c])
            done = c
        a1[k] = ens.coefficient(1)
        if return_states:
            states[k] = ens.theta
    ens.t = t0 + T
    return (times, a1, states) if return_states else (times, a1)


def sample_cosine_density(N: int, b: float, rng: np.random.Generator):
    """i.i.d. angles with density ``1 + 2 b cos θ`` (w.r.t. dθ/2π), so ``a_1 = b`` real."""
    if not 0 <= b <= 0.5:
        raise ValueError("need 0 <= b <= 1/2 for a nonnegative density")
    out = np.empty(0)
    while out.size < N:
        th = rng.uniform(-np.pi, np.pi, 2 * N)
        u = rng.random(2 * N)
        out = np.concatenate([out, th[u * (1 + 2 * b) < 1 + 2 * b * np.cos(th)]])
    return out[:N]


def meanfield_circle(theta, noise: WrappedNoise, T: float, dt: float, rng: np.random.Generator):
    """Nanbu sampler for the mode equation: each sample jumps w.p. ``dt`` per step
    to the midpoint with a random partner of the pre-step ensemble, plus noise."""
    if dt > 0.1:
        raise ValueError("dt must not exceed 0.1")
    th = np.array(theta, dtype=float)
    M = th.size
    for _ in range(int(round(T / dt))):
        idx = np.nonzero(rng.random(M) < PARTICLE_RATE * dt)[0]
        if idx.size:
            w = rng.integers(0, M - 1, idx.size)
            w += w >= idx
            mid = circle_midpoint(th[idx], th[w])
            th[idx] = wrap_angle(mid + sample_wrapped(noise, rng, idx.size))
    return th


# Spectral solver -----------------------------------------------------------


@dataclass
class SpectralState:
    """Coefficients ``a_{-K..K}`` stored at index ``k + K``."""

    a: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        a = np.array(self.a, dtype=complex)
        if a.ndim != 1 or a.size % 2 == 0:
            raise ValueError("coefficients must have odd length 2K+1")
        K = a.size // 2
        if K < 2:
            raise ValueError("truncation K must be at least 2")
        if abs(a[K] - 1) > 1e-12:
            raise ValueError("a_0 must equal 1")
        if np.max(np.abs(a[K + 1:] - np.conj(a[K - 1::-1])), initial=0) > 1e-12:
            raise ValueError("coefficients must be conjugate-symmetric")
        self.a = a

    @property
    def K(self) -> int:
        return self.a.size // 2

    def __getitem__(self, k):
        return self.a[k + self.K]

    @classmethod
    def uniform(cls, K: int = DEFAULT_K):
        a = np.zeros(2 * K + 1, dtype=complex)
        a[K] = 1.0
        return cls(a)

    @classmethod
    def from_positive(cls, pos):
        """Build from ``a_0..a_K``."""
        pos = np.asarray(pos, dtype=complex)
        return cls(np.concatenate([np.conj(pos[:0:-1]), pos]))

    def density(self, theta):
        k = np.arange(-self.K, self.K + 1)
        return np.real(np.exp(1j * np.multiply.outer(theta, k)) @ self.a)


class _Coupling:
    """Precomputed index sets for the gain sum on ``k = 0..K``."""

    def __init__(self, K: int):
        self.K = K
        k = np.arange(K + 1)[:, None]
        n = np.arange(-K, K + 1)[None, :]
        m = k - n
        self.valid = np.abs(m) <= K
        self.m_idx = np.clip(m, -K, K) + K
        self.n_idx = np.broadcast_to(n + K, self.m_idx.shape)
        self.weight = np.where(self.valid, sinc_gamma(n - k / 2.0), 0.0)


_COUPLINGS: dict = {}


def _coupling(K):
    if K not in _COUPLINGS:
        _COUPLINGS[K] = _Coupling(K)
    return _COUPLINGS[K]


def _gamma_vector(gamma, K):
    g = np.asarray(gamma.gamma if isinstance(gamma, NoiseSpectrum) else gamma, dtype=float)
    if g.size < K + 1:
        raise ValueError("noise spectrum shorter than the truncation")
    return g[: K + 1]


def _rhs(a: np.ndarray, g: np.ndarray, K: int) -> np.ndarray:
    c = _coupling(K)
    gain = (a[c.m_idx] * a[c.n_idx] * c.weight).sum(axis=1)
    pos = g * gain - a[K] * a[K:]
    return np.concatenate([np.conj(pos[:0:-1]), pos])


def spectral_rhs(state: SpectralState, gamma) -> np.ndarray:
    """Time derivative of all coefficients ``a_{-K..K}``."""
    K = state.K
    return _rhs(state.a, _gamma_vector(gamma, K), K)


def lambda_k(gamma, k):
    """Linear growth rate of mode ``k`` at the uniform state."""
    k = np.asarray(k)
    if np.any(k < 1):
        raise ValueError("k must be at least 1")
    g = np.asarray(gamma.gamma if isinstance(gamma, NoiseSpectrum) else gamma, dtype=float)
    gk = g[k] if g.ndim == 1 and g.size > 1 else g
    return 2 * gk * sinc_gamma(k / 2.0) - sinc_gamma(0.0) - sinc_gamma(k)


@dataclass
class StabilitySpectrum:
    lam: np.ndarray  # λ_1..λ_K
    gamma: NoiseSpectrum

    @classmethod
    def from_spectrum(cls, gamma: NoiseSpectrum):
        return cls(lambda_k(gamma, np.arange(1, gamma.K + 1)), gamma)

    @property
    def unstable_modes(self):
        return np.nonzero(self.lam > 0)[0] + 1


def critical_gamma1() -> float:
    return math.pi / 4


@dataclass
class SpectralTrajectory:
    times: np.ndarray
    coeffs: np.ndarray  # (len(times), 2K+1)
    K: int

    def mode(self, k: int) -> np.ndarray:
        return self.coeffs[:, k + self.K]

    def final(self) -> SpectralState:
        return SpectralState(self.coeffs[-1], float(self.times[-1]))


def integrate_spectral(a0: SpectralState, gamma, T: float, dt: float = 0.01, record_every: int = 1,
                       threshold: float = TRUNCATION_THRESHOLD) -> SpectralTrajectory:
    """Classical RK4; re-imposes ``a_0 = 1`` and conjugate symmetry after each step."""
    if dt > 0.01 + 1e-15:
        raise ValueError("dt must not exceed 0.01")
    K = a0.K
    g = _gamma_vector(gamma, K)
    steps = int(round(T / dt))
    a = a0.a.copy()
    times, rec = [a0.t], [a.copy()]
    warned = False
    for s in range(1, steps + 1):
        k1 = _rhs(a, g, K)
        k2 = _rhs(a + 0.5 * dt * k1, g, K)
        k3 = _rhs(a + 0.5 * dt * k2, g, K)
        k4 = _rhs(a + dt * k3, g, K)
        a = a + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        a[K] = 1.0
        a[:K] = np.conj(a[:K:-1])
        if not warned and abs(a[-1]) > threshold:
            warnings.warn(f"|a_K| = {abs(a[-1]):.3g} exceeds {threshold:g}; increase K", TruncationWarning)
            warned = True
        if s % record_every == 0 or s == steps:
            times.append(a0.t + s * dt)
            rec.append(a.copy())
    return SpectralTrajectory(np.array(times), np.array(rec), K)


def cosine_state(b: float, K: int = DEFAULT_K) -> SpectralState:
    pos = np.zeros(K + 1, dtype=complex)
    pos[0] = 1.0
    pos[1] = b
    return SpectralState.from_positive(pos)


# Particle vs spectral ---------------------------------------------------------


@dataclass
class CircleComparison:
    times: np.ndarray
    a1_particle: np.ndarray  # |replica mean of complex a_1|
    a1_particle_abs: np.ndarray  # replica mean of |a_1|
    stderr: np.ndarray
    a1_spectral: np.ndarray
    lambda1: float

    @property
    def sup_difference(self) -> float:
        return float(np.max(np.abs(self.a1_particle - self.a1_spectral)))

    def growth_rates(self, lo: float = 0.0, hi: float = np.inf):
        """Log-linear slopes of both curves over times where the spectral ``|a_1|`` lies in ``[lo, hi]``."""
        sel = (self.a1_spectral >= lo) & (self.a1_spectral <= hi)
        if sel.sum() < 3:
            raise ValueError("not enough points in the fitting window")
        t = self.times[sel]
        p = np.polyfit(t, np.log(self.a1_particle[sel]), 1)[0]
        s = np.polyfit(t, np.log(self.a1_spectral[sel]), 1)[0]
        return float(p), float(s)

    def rows(self):
        for r in zip(self.times, self.a1_particle, self.a1_spectral, self.stderr):
            yield [repr(float(x)) for x in r]


def particle_vs_spectral(N: int, tau: float, T: float, replicas: int, seed: int = 0, b0: float = 0.1,
                         family: str = "gaussian", n_times: int = 21, K: int = DEFAULT_K,
                         dt: float = 0.01, enforce_sizes: bool = True) -> CircleComparison:
    """Replica-averaged empirical ``a_1`` against the spectral solution.

    Every replica starts i.i.d. from the density ``1 + 2 b0 cos θ``, so the
    expected ``a_1`` stays real and the replica mean of the complex
    coefficient estimates the spectral ``a_1`` without the ``O(N^{-1/2})``
    bias of ``|a_1|``.
    """
    if enforce_sizes and (N < 500 or replicas < 100):
        raise ValueError("need N >= 500 and replicas >= 100")
    noise = WrappedNoise(family, tau)
    times = np.linspace(0.0, T, n_times)
    a1 = np.empty((replicas, n_times), dtype=complex)
    for r in range(replicas):
        rng = make_stream(seed, r)
        ens = AngularEnsemble(sample_cosine_density(N, b0, rng))
        a1[r] = simulate_circle(ens, noise, T, rng, times)[1]
    mean = a1.mean(axis=0)
    se = np.abs(a1 - mean).std(axis=0, ddof=1) / math.sqrt(replicas)
    gamma = noise_spectrum(noise, K)
    rec = max(1, int(round((times[1] - times[0]) / dt)))
    traj = integrate_spectral(cosine_state(b0, K), gamma, T, dt, record_every=rec)
    spec = np.interp(times, traj.times, np.abs(traj.mode(1)))
    return CircleComparison(times, np.abs(mean), np.abs(a1).mean(axis=0), se, spec, float(lambda_k(gamma, 1)))
