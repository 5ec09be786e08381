"""Kac's N-particle walk on the energy sphere and a Nanbu solver for the Kac equation.

The N-particle process jumps at total rate N: a uniformly chosen pair
``(i, j)`` is rotated by an angle ``θ ~ Uniform(-π, π]``. Each particle
therefore collides at rate 2, and the mean-field solver uses the same
per-particle rate ``ν = 2`` so both levels share one clock.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .measures import w1_empirical_1d
from .rng import make_stream, poisson_event_times, sample_uniform_sphere, uniform_pairs

DEFAULT_RENORM_EVERY = 100_000
MEANFIELD_RATE = 2.0


def sphere_energy(v) -> float:
    """``(1/2) Σ v_i²`` with compensated summation."""
    return 0.5 * math.fsum(x * x for x in np.asarray(v, dtype=float).tolist())


def project_to_sphere(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = v.size
    e = sphere_energy(v)
    if e == 0:
        raise ValueError("cannot project the zero vector onto the Kac sphere")
    return v * math.sqrt(n / e)


@dataclass
class KacState:
    """Velocities on the sphere ``(1/2) Σ v_i² = N``."""

    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("KacState needs N >= 2 velocities")
        self.v = project_to_sphere(v)

    @property
    def N(self) -> int:
        return self.v.size

    def energy(self) -> float:
        return sphere_energy(self.v)

    def copy(self) -> "KacState":
        s = KacState.__new__(KacState)
        s.v = self.v.copy()
        s.t = self.t
        return s


@dataclass(frozen=True)
class RotationEvent:
    i: int
    j: int
    theta: float
    t: float = 0.0

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("rotation needs two distinct particles")
        if self.i > self.j:
            i, j = self.j, self.i
            object.__setattr__(self, "i", i)
            object.__setattr__(self, "j", j)


def kac_rotate(v, w, theta):
    """``(v cos θ - w sin θ, v sin θ + w cos θ)``."""
    c = np.cos(theta)
    s = np.sin(theta)
    return v * c - w * s, v * s + w * c


def draw_theta(count: int, rng: np.random.Generator, theta_law="uniform"):
    """Rotation angles: ``uniform`` on (-π, π] or ``("window", α)`` uniform on (-α, α]."""
    if theta_law == "uniform":
        return math.pi - 2 * math.pi * rng.random(count)
    if isinstance(theta_law, (tuple, list)) and theta_law[0] == "window":
        alpha = float(theta_law[1])
        if not 0 < alpha <= math.pi:
            raise ValueError("window half-width must lie in (0, pi]")
        return alpha - 2 * alpha * rng.random(count)
    raise ValueError(f"unsupported theta law {theta_law!r}")


@dataclass
class KacEvents:
    t: np.ndarray
    i: np.ndarray
    j: np.ndarray
    theta: np.ndarray

    def __len__(self):
        return self.t.size

    def to_csv_rows(self):
        for row in zip(self.t.tolist(), self.i.tolist(), self.j.tolist(), self.theta.tolist()):
            yield [repr(row[0]), row[1], row[2], repr(row[3])]


def draw_events(N: int, t0: float, t1: float, rng: np.random.Generator, theta_law="uniform") -> KacEvents:
    """All jumps on ``(t0, t1]``: rate-N Poisson times, uniform pairs, random angles."""
    t = poisson_event_times(float(N), t0, t1, rng)
    i, j = uniform_pairs(N, t.size, rng)
    lo = np.minimum(i, j)
    hi = np.maximum(i, j)
    theta = draw_theta(t.size, rng, theta_law)
    return KacEvents(t, lo, hi, theta)


def apply_events(v: np.ndarray, i, j, theta) -> None:
    """Apply rotations in order, in place."""
    theta = np.asarray(theta, dtype=float)
    _kernels.kac_events(
        v,
        np.ascontiguousarray(i, dtype=np.int64),
        np.ascontiguousarray(j, dtype=np.int64),
        np.cos(theta),
        np.sin(theta),
    )


@dataclass
class KacRun:
    times: np.ndarray
    snapshots: np.ndarray  # (len(times), N)
    n_events: int
    final: KacState
    events: KacEvents | None = None
    renormalizations: list = field(default_factory=list)


def simulate_kac(
    state: KacState,
    T: float,
    rng: np.random.Generator,
    snapshot_times=None,
    theta_law="uniform",
    renorm_every: int | None = DEFAULT_RENORM_EVERY,
    log_events: bool = False,
) -> KacRun:
    """Run the Kac walk from ``state`` for time ``T``.

    ``snapshot_times`` are absolute times in ``[state.t, state.t + T]``
    (default: start and end). Every ``renorm_every`` events the state is
    projected back onto the sphere; each projection is logged as
    ``(event index, relative energy error before projection)``.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    s = state.copy()
    t0, t1 = s.t, s.t + T
    ev = draw_events(s.N, t0, t1, rng, theta_law)
    snaps_t = np.array([t0, t1] if snapshot_times is None else sorted(snapshot_times), dtype=float)
    if snaps_t.size and (snaps_t[0] < t0 - 1e-12 or snaps_t[-1] > t1 + 1e-12):
        raise ValueError("snapshot times outside the simulated window")
    cuts = np.searchsorted(ev.t, snaps_t, side="right")
    c, sn = np.cos(ev.theta), np.sin(ev.theta)
    target = float(s.N)
    renorms = []
    boundaries = sorted(set(cuts.tolist()) | set(
        range(renorm_every, len(ev), renorm_every) if renorm_every else []
    ))
    snaps = np.empty((snaps_t.size, s.N))
    done = 0
    for b in boundaries + [len(ev)]:
        if b > done:
            _kernels.kac_events(s.v, ev.i[done:b], ev.j[done:b], c[done:b], sn[done:b])
            done = b
        if renorm_every and done and done % renorm_every == 0 and done < len(ev):
            err = sphere_energy(s.v) / target - 1.0
            s.v = project_to_sphere(s.v)
            renorms.append((done, err))
        for k in np.nonzero(cuts == done)[0]:
            snaps[k] = s.v
    s.t = t1
    return KacRun(snaps_t, snaps, len(ev), s, ev if log_events else None, renorms)


def equilibrium_sample(N: int, rng: np.random.Generator) -> KacState:
    """Uniform point of the sphere ``(1/2) Σ v² = N``."""
    if N < 2:
        raise ValueError("N must be at least 2")
    return KacState(sample_uniform_sphere(N, math.sqrt(2 * N), rng))


def equilibrium_marginal_density(v, N: int):
    """Exact one-particle density of the uniform law on the sphere of radius ``√(2N)``."""
    from scipy.special import gammaln

    r2 = 2.0 * N
    v = np.asarray(v, dtype=float)
    # x = v/√r2 has density ∝ (1 - x²)^{(N-3)/2} on (-1, 1)
    logc = gammaln(N / 2) - gammaln((N - 1) / 2) - 0.5 * math.log(math.pi)
    inside = np.abs(v) < math.sqrt(r2)
    out = np.zeros_like(v)
    x2 = v[inside] ** 2 / r2
    out[inside] = np.exp(logc + 0.5 * (N - 3) * np.log1p(-x2)) / math.sqrt(r2)
    return out


def equilibrium_marginal_cdf(v, N: int):
    """CDF of the first coordinate under the uniform sphere law (regularised incomplete beta)."""
    from scipy.special import betainc

    v = np.asarray(v, dtype=float)
    x = np.clip(v / math.sqrt(2.0 * N), -1.0, 1.0)
    # x² ~ Beta(1/2, (N-1)/2)
    half = 0.5 * betainc(0.5, 0.5 * (N - 1), x * x)
    return np.where(x >= 0, 0.5 + half, 0.5 - half)


INITIAL_LAWS = ("uniform", "twopoint", "gaussian")


def sample_initial_law(law: str, size, rng: np.random.Generator):
    """i.i.d. one-particle draws with unit mean energy (variance 2)."""
    if law == "uniform":
        return rng.uniform(-math.sqrt(6.0), math.sqrt(6.0), size)
    if law == "twopoint":
        return math.sqrt(2.0) * (2 * rng.integers(0, 2, size) - 1)
    if law == "gaussian":
        return math.sqrt(2.0) * rng.standard_normal(size)
    raise ValueError(f"unknown initial law {law!r}")


def chaotic_initial(N: int, rng: np.random.Generator, law: str = "uniform") -> KacState:
    """i.i.d. draws projected onto the sphere (a Kac-chaotic family)."""
    return KacState(sample_initial_law(law, N, rng))


# Mean field ------------------------------------------------------------------


@dataclass
class MeanFieldEnsemble:
    """Sample representation of the one-particle law for the Kac equation."""

    v: np.ndarray
    nu: float = MEANFIELD_RATE
    t: float = 0.0

    def __post_init__(self):
        self.v = np.array(self.v, dtype=float).ravel()
        if self.v.size < 100:
            raise ValueError("mean-field ensemble needs M >= 100 samples")
        if not self.nu > 0:
            raise ValueError("collision rate must be positive")

    @property
    def M(self) -> int:
        return self.v.size


def _partners(M: int, idx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    w = rng.integers(0, M - 1, idx.size)
    return w + (w >= idx)


def meanfield_kac(ens: MeanFieldEnsemble, T: float, dt: float, rng: np.random.Generator, record_every: int | None = None):
    """Nanbu scheme for the Kac equation.

    Per step of length ``dt`` each sample collides with probability ``ν dt``
    against a uniformly drawn other sample of the pre-step ensemble, and takes
    the first component of the rotated pair. Returns the evolved ensemble and,
    if ``record_every`` is given, a list of ``(t, m2, m4)``.
    """
    if ens.nu * dt > 0.1 + 1e-12:
        raise ValueError("nu*dt must not exceed 0.1")
    steps = int(round(T / dt))
    v = ens.v.copy()
    M = v.size
    rec = []
    p = ens.nu * dt
    t = ens.t
    if record_every:
        rec.append((t, float(np.mean(v**2)), float(np.mean(v**4))))
    for n in range(steps):
        idx = np.nonzero(rng.random(M) < p)[0]
        if idx.size:
            w = v[_partners(M, idx, rng)]
            th = math.pi - 2 * math.pi * rng.random(idx.size)
            v[idx] = v[idx] * np.cos(th) - w * np.sin(th)
        t = ens.t + (n + 1) * dt
        if record_every and (n + 1) % record_every == 0:
            rec.append((t, float(np.mean(v**2)), float(np.mean(v**4))))
    out = MeanFieldEnsemble(v, ens.nu, t)
    return (out, rec) if record_every else out


def m4_relaxation_rate(nu: float = MEANFIELD_RATE) -> float:
    """Decay rate of ``m4 - 3 m2²`` under the Kac equation with per-particle rate ``nu``.

    Averaging ``(v cos θ - w sin θ)^4`` over uniform θ for independent v, w
    gives ``(3/4) m4 + (3/4) m2²`` (odd terms vanish), hence
    ``d/dt m4 = -(ν/4)(m4 - 3 m2²)`` with ``m2`` conserved.
    """
    return nu / 4.0


# N-particle vs mean field -----------------------------------------------------


@dataclass
class MarginalGapReport:
    times: np.ndarray
    w1: np.ndarray
    noise_floor: float

    @property
    def sup(self) -> float:
        return float(np.max(self.w1))


def run_replicas(N: int, T: float, replicas: int, seed: int, snapshot_times, law: str = "uniform", stream_offset: int = 0):
    """Snapshots of ``replicas`` independent Kac walks, shape ``(len(times), R, N)``."""
    out = np.empty((len(snapshot_times), replicas, N))
    for r in range(replicas):
        rng = make_stream(seed, stream_offset + r)
        st = chaotic_initial(N, rng, law)
        run = simulate_kac(st, T, rng, snapshot_times=snapshot_times)
        out[:, r, :] = run.snapshots
    return out


def kac_marginal_vs_meanfield(
    N: int,
    T: float,
    replicas: int,
    seed: int = 0,
    snapshot_times=None,
    M: int | None = None,
    dt: float = 0.01,
    law: str = "uniform",
) -> MarginalGapReport:
    """W1 between pooled one-particle samples of the N-particle runs and a Nanbu ensemble.

    All particles of all replicas are pooled (exchangeability makes each an
    unbiased draw from the first marginal). The mean-field ensemble starts
    from the same i.i.d. law, projected to unit mean energy per particle.
    """
    times = np.linspace(0.0, T, 5) if snapshot_times is None else np.asarray(snapshot_times, dtype=float)
    M = M or 10 * N * replicas
    if M < 10 * N:
        raise ValueError("mean-field ensemble must have M >= 10 N")
    snaps = run_replicas(N, T, replicas, seed, times, law)
    rng = make_stream(seed, 10**9)
    v0 = sample_initial_law(law, M, rng)
    v0 *= math.sqrt(2.0 / np.mean(v0**2))
    ens = MeanFieldEnsemble(v0)
    steps = np.diff(np.concatenate([[0.0], times]))
    w1 = []
    for k, h in enumerate(steps):
        if h > 0:
            ens = meanfield_kac(ens, h, dt, rng)
        w1.append(w1_empirical_1d(snaps[k].ravel(), ens.v))
    # two independent samples of the initial law: reference noise level
    floor = w1_empirical_1d(sample_initial_law(law, replicas * N, rng), sample_initial_law(law, M, rng))
    return MarginalGapReport(times, np.array(w1), floor)
