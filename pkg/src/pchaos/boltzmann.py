"""Bounded-kernel Boltzmann collisions in three dimensions.

Each unordered pair ``{i, j}`` carries an exponential clock of rate
``γ(|v_i - v_j|) / (N - 1)``, so with ``γ ≡ 1`` every particle collides once
per unit time on average. The process is simulated by majorant thinning:
candidates arrive at rate ``N γ_max / 2`` on uniform pairs and are accepted
with probability ``γ / γ_max``. After a collision

    v*_i = m + σ |v_i - v_j| / 2,    v*_j = m - σ |v_i - v_j| / 2,

with ``m`` the pair mean and ``σ`` a unit vector drawn from ``b``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels
from .measures import w1_matched
from .rng import make_stream, poisson_event_times, uniform_pairs, unit_vectors3

C_SCALE = 0.5
GAMMA_FAMILIES = {"constant": 0, "capped_linear": 1, "saturating": 2}
B_FAMILIES = ("isotropic", "cutoff")


class KernelContractError(RuntimeError):
    """``γ(r)`` exceeded the declared bound ``γ_max``."""


def collide(vi, vj, sigma):
    """Post-collision velocities; works on single 3-vectors or ``(n, 3)`` arrays."""
    vi = np.asarray(vi, dtype=float)
    vj = np.asarray(vj, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    norm = np.sqrt(np.sum(sigma * sigma, axis=-1))
    if np.any(np.abs(norm - 1.0) > 1e-12):
        raise ValueError("sigma must be a unit vector")
    m = 0.5 * (vi + vj)
    h = 0.5 * np.sqrt(np.sum((vi - vj) ** 2, axis=-1))
    h = h[..., None] if np.ndim(h) else h
    return m + sigma * h, m - sigma * h


@dataclass(frozen=True)
class CollisionKernel:
    """``γ(r) b(θ)`` with ``θ`` the angle between ``σ`` and the relative velocity.

    ``gamma_family``:
      - ``constant``: ``γ = p0``
      - ``capped_linear``: ``γ = min(p0 r, p1)``
      - ``saturating``: ``γ = p0 r / (p1 + r)``

    ``b_family`` is ``isotropic`` or ``cutoff`` (uniform on the cap
    ``cos θ ≥ cos_min``).
    """

    gamma_family: str = "constant"
    params: tuple = (1.0,)
    gamma_max: float | None = None
    b_family: str = "isotropic"
    cos_min: float = -1.0

    def __post_init__(self):
        if self.gamma_family not in GAMMA_FAMILIES:
            raise ValueError(f"unknown gamma family {self.gamma_family!r}")
        p = tuple(float(x) for x in self.params)
        need = 1 if self.gamma_family == "constant" else 2
        if len(p) < need or any(x <= 0 for x in p[:need]):
            raise ValueError(f"{self.gamma_family} needs {need} positive parameters")
        object.__setattr__(self, "params", p + (0.0,) * (2 - len(p)))
        if self.gamma_max is None:
            object.__setattr__(self, "gamma_max", self.sup_gamma())
        if not self.gamma_max > 0:
            raise ValueError("gamma_max must be positive")
        if self.b_family not in B_FAMILIES:
            raise ValueError(f"unknown angular family {self.b_family!r}")
        if self.b_family == "isotropic" and self.cos_min != -1.0:
            raise ValueError("isotropic b has no cutoff")
        if self.b_family == "cutoff" and not -1.0 < self.cos_min < 1.0:
            raise ValueError("cutoff needs -1 < cos_min < 1")

    @property
    def code(self) -> int:
        return GAMMA_FAMILIES[self.gamma_family]

    def sup_gamma(self) -> float:
        p0, p1 = self.params[:2]
        return {"constant": p0, "capped_linear": p1, "saturating": p0}[self.gamma_family]

    def gamma(self, r):
        r = np.asarray(r, dtype=float)
        p0, p1 = self.params[:2]
        if self.gamma_family == "constant":
            return np.full_like(r, p0)
        if self.gamma_family == "capped_linear":
            return np.minimum(p0 * r, p1)
        return p0 * r / (p1 + r)

    def map_sigma(self, sigma, rel):
        """Turn isotropic ``σ`` draws into draws from ``b`` relative to ``rel`` (vectorised)."""
        if self.b_family == "isotropic":
            return sigma
        sigma = np.array(sigma, dtype=float)
        r = np.sqrt(np.sum(rel * rel, axis=-1))
        ok = r > 0
        u = np.zeros_like(rel)
        u[ok] = rel[ok] / r[ok, None]
        c = np.sum(sigma * u, axis=-1)
        p = sigma - c[:, None] * u
        pn = np.sqrt(np.sum(p * p, axis=-1))
        cn = self.cos_min + (1.0 - self.cos_min) * (c + 1.0) * 0.5
        sn = np.sqrt(1.0 - cn * cn)
        safe = np.where(pn > 0, pn, 1.0)
        out = cn[:, None] * u + np.where(pn[:, None] > 0, sn[:, None] * p / safe[:, None], 0.0)
        return np.where(ok[:, None], out, sigma)


@dataclass
class VelocityEnsemble3:
    v: np.ndarray
    t: float = 0.0
    momentum0: np.ndarray = field(init=False)
    energy0: float = field(init=False)

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 2:
            raise ValueError("need an (N, 3) array with N >= 2")
        self.v = np.ascontiguousarray(v)
        self.momentum0 = self.momentum()
        self.energy0 = self.energy()

    @property
    def N(self) -> int:
        return self.v.shape[0]

    def momentum(self) -> np.ndarray:
        return np.array([math.fsum(self.v[:, k].tolist()) for k in range(3)])

    def energy(self) -> float:
        return 0.5 * math.fsum((self.v * self.v).ravel().tolist())

    def conservation_error(self):
        """Relative momentum and energy drift since construction."""
        scale = math.sqrt(2 * self.energy0 * self.N) or 1.0
        dp = float(np.max(np.abs(self.momentum() - self.momentum0))) / scale
        de = abs(self.energy() - self.energy0) / (self.energy0 or 1.0)
        return dp, de


@dataclass
class CandidateEvents:
    t: np.ndarray
    i: np.ndarray
    j: np.ndarray
    u: np.ndarray
    sigma: np.ndarray  # (n, 3) isotropic draws, before any cap mapping
    accepted: np.ndarray  # int8, filled in by the kernel

    def __len__(self):
        return self.t.size

    def to_csv_rows(self):
        s = self.sigma
        for k in range(self.t.size):
            yield [repr(float(self.t[k])), int(self.i[k]), int(self.j[k]),
                   repr(float(s[k, 0])), repr(float(s[k, 1])), repr(float(s[k, 2])), int(self.accepted[k])]


def draw_candidates(N: int, kernel: CollisionKernel, t0: float, t1: float, rng: np.random.Generator) -> CandidateEvents:
    t = poisson_event_times(N * kernel.gamma_max * C_SCALE, t0, t1, rng)
    i, j = uniform_pairs(N, t.size, rng)
    u = rng.random(t.size)
    sig = unit_vectors3(t.size, rng)
    return CandidateEvents(t, i, j, u, sig, np.zeros(t.size, dtype=np.int8))


def apply_candidates(v: np.ndarray, ev: CandidateEvents, kernel: CollisionKernel, lo: int = 0, hi: int | None = None):
    hi = len(ev) if hi is None else hi
    if hi <= lo:
        return
    cos_min = kernel.cos_min if kernel.b_family == "cutoff" else -1.0
    acc = ev.accepted[lo:hi]
    status = _kernels.boltzmann_events(
        v, ev.i[lo:hi], ev.j[lo:hi], ev.u[lo:hi], ev.sigma[lo:hi], kernel.code,
        np.asarray(kernel.params, dtype=float), float(kernel.gamma_max), float(cos_min), acc,
    )
    if status >= 0:
        raise KernelContractError(f"gamma exceeded gamma_max={kernel.gamma_max} at candidate {lo + status}")


@dataclass
class CollisionRun:
    times: np.ndarray
    snapshots: np.ndarray  # (len(times), N, 3)
    final: VelocityEnsemble3
    n_candidates: int
    n_accepted: int
    events: CandidateEvents | None = None


def simulate_collisions(ens: VelocityEnsemble3, kernel: CollisionKernel, T: float, rng: np.random.Generator,
                        snapshot_times=None, log_events: bool = False) -> CollisionRun:
    """Thinned collision process on ``(ens.t, ens.t + T]``; ``ens`` is updated in place."""
    if not T > 0:
        raise ValueError("T must be positive")
    t0, t1 = ens.t, ens.t + T
    ev = draw_candidates(ens.N, kernel, t0, t1, rng)
    times = np.array([t0, t1] if snapshot_times is None else snapshot_times, dtype=float)
    cuts = np.searchsorted(ev.t, times, side="right")
    snaps = np.empty((times.size, ens.N, 3))
    done = 0
    for k, c in enumerate(cuts):
        apply_candidates(ens.v, ev, kernel, done, c)
        done = max(done, c)
        snaps[k] = ens.v
    apply_candidates(ens.v, ev, kernel, done, len(ev))
    ens.t = t1
    return CollisionRun(times, snaps, ens, len(ev), int(ev.accepted.sum()), ev if log_events else None)


# Small-N oracles -------------------------------------------------------------


def pair_list(N: int):
    return [(i, j) for i in range(N) for j in range(i + 1, N)]


def pair_rates(v, kernel: CollisionKernel) -> np.ndarray:
    """Clock rates ``γ(|v_i - v_j|)/(N-1)`` of all unordered pairs, in :func:`pair_list` order."""
    v = np.asarray(v, dtype=float)
    N = v.shape[0]
    pl = pair_list(N)
    r = np.array([np.linalg.norm(v[i] - v[j]) for i, j in pl])
    return kernel.gamma(r) / (N - 1)


def exact_race_frozen(v, kernel: CollisionKernel, n_events: int, rng: np.random.Generator):
    """Exponential race of all pair clocks with velocities frozen.

    Returns ``(waiting_times, pair_index)`` for ``n_events`` consecutive firings.
    """
    rates = pair_rates(v, kernel)
    clocks = rng.exponential(1.0, (n_events, rates.size)) / rates
    return clocks.min(axis=1), clocks.argmin(axis=1)


def thinned_frozen(v, kernel: CollisionKernel, n_events: int, rng: np.random.Generator):
    """Accepted events of the thinning construction with velocities frozen."""
    v = np.asarray(v, dtype=float)
    N = v.shape[0]
    index = {p: k for k, p in enumerate(pair_list(N))}
    lam = N * kernel.gamma_max * C_SCALE
    waits, pairs = [], []
    acc_t = 0.0
    while len(waits) < n_events:
        m = 2 * (n_events - len(waits)) + 64
        dt = rng.exponential(1.0 / lam, m)
        i, j = uniform_pairs(N, m, rng)
        u = rng.random(m)
        g = kernel.gamma(np.linalg.norm(v[i] - v[j], axis=1))
        if np.any(g > kernel.gamma_max):
            raise KernelContractError("gamma exceeded gamma_max")
        for k in range(m):
            acc_t += dt[k]
            if u[k] * kernel.gamma_max < g[k]:
                waits.append(acc_t)
                pairs.append(index[(min(i[k], j[k]), max(i[k], j[k]))])
                acc_t = 0.0
                if len(waits) == n_events:
                    break
    return np.array(waits), np.array(pairs)


def simulate_collisions_exact(ens: VelocityEnsemble3, kernel: CollisionKernel, T: float, rng: np.random.Generator):
    """Gillespie simulation with every pair clock tracked explicitly (small N only)."""
    N = ens.N
    if N > 64:
        raise ValueError("exact race is meant for small N")
    pl = np.array(pair_list(N))
    t, n = ens.t, 0
    while True:
        rates = pair_rates(ens.v, kernel)
        total = rates.sum()
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t > ens.t + T:
            break
        k = rng.choice(rates.size, p=rates / total)
        i, j = pl[k]
        sig = kernel.map_sigma(unit_vectors3(1, rng), (ens.v[i] - ens.v[j])[None, :])[0]
        ens.v[i], ens.v[j] = collide(ens.v[i], ens.v[j], sig)
        n += 1
    ens.t += T
    return n


# Mean field ------------------------------------------------------------------


def nanbu_meanfield3(samples, kernel: CollisionKernel, T: float, dt: float, rng: np.random.Generator, record=None):
    """Nanbu scheme: per step, each sample collides with probability ``γ(|v - w|) dt``
    against a partner ``w`` drawn from the pre-step ensemble, keeping only its own outcome.

    ``record`` is an optional callable applied to the samples after each step.
    """
    if kernel.gamma_max * dt > 0.1 + 1e-12:
        raise ValueError("gamma_max * dt must not exceed 0.1")
    v = np.array(samples, dtype=float)
    M = v.shape[0]
    out = []
    for _ in range(int(round(T / dt))):
        w_idx = rng.integers(0, M - 1, M)
        w_idx += w_idx >= np.arange(M)
        w = v[w_idx]
        rel = v - w
        r = np.sqrt(np.sum(rel * rel, axis=1))
        g = kernel.gamma(r)
        if np.any(g > kernel.gamma_max):
            raise KernelContractError("gamma exceeded gamma_max")
        hit = np.nonzero(rng.random(M) < g * dt)[0]
        if hit.size:
            sig = kernel.map_sigma(unit_vectors3(hit.size, rng), rel[hit])
            v[hit] = 0.5 * (v[hit] + w[hit]) + sig * (0.5 * r[hit])[:, None]
        if record is not None:
            out.append(record(v))
    return (v, out) if record is not None else v


def anisotropy(v) -> float:
    """``<v_x²>/<|v|²> - 1/3`` of the centred sample, zero for isotropic laws."""
    v = np.asarray(v, dtype=float)
    c = v - v.mean(axis=0)
    return float(np.mean(c[:, 0] ** 2) / np.mean(np.sum(c * c, axis=1)) - 1.0 / 3.0)


# Tanaka check ----------------------------------------------------------------


@dataclass
class TanakaReport:
    times: np.ndarray
    w1: np.ndarray  # (replicas, len(times))

    @property
    def mean(self):
        return self.w1.mean(axis=0)

    @property
    def stderr(self):
        R = self.w1.shape[0]
        return self.w1.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(self.times.size)

    @property
    def max_increase(self) -> float:
        return float(np.max(self.mean - self.mean[0]))

    def excess_in_stderr(self) -> float:
        """Largest ``(mean_k - mean_0) / se_k`` over snapshots ``k ≥ 1``."""
        se = np.where(self.stderr[1:] > 0, self.stderr[1:], np.inf)
        return float(np.max((self.mean[1:] - self.mean[0]) / se, initial=-np.inf))


def _gaussian(shift):
    shift = np.asarray(shift, dtype=float)

    def sampler(n, rng):
        return rng.standard_normal((n, 3)) + shift

    return sampler


def coupled_pair(a: np.ndarray, b: np.ndarray, kernel: CollisionKernel, times, rng: np.random.Generator,
                 relabel: bool = True):
    """Evolve two ensembles with shared candidate events; returns W₁ at ``times``.

    With ``relabel`` the second ensemble is first permuted by the optimal
    assignment to the first, so particle ``k`` of both systems forms a
    coupled pair that receives identical clocks, partners and ``σ``.
    """
    a = np.ascontiguousarray(a, dtype=float).copy()
    b = np.ascontiguousarray(b, dtype=float).copy()
    if relabel:
        cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
        _, col = linear_sum_assignment(cost)
        b = np.ascontiguousarray(b[col])
    N = a.shape[0]
    times = np.asarray(times, dtype=float)
    ev = draw_candidates(N, kernel, times[0], times[-1], rng)
    ev_b = CandidateEvents(ev.t, ev.i, ev.j, ev.u, ev.sigma, np.zeros(len(ev), dtype=np.int8))
    cuts = np.searchsorted(ev.t, times, side="right")
    w1 = np.empty(times.size)
    done = 0
    for k, c in enumerate(cuts):
        apply_candidates(a, ev, kernel, done, c)
        apply_candidates(b, ev_b, kernel, done, c)
        done = max(done, c)
        w1[k] = w1_matched(a, b)
    return w1, a, b


def tanaka_contraction_check(p0a=None, p0b=None, N: int = 256, T: float = 2.0, replicas: int = 50,
                             kernel: CollisionKernel | None = None, n_snapshots: int = 20, seed: int = 0,
                             relabel: bool = True) -> TanakaReport:
    """W₁ between two coupled N-particle systems at ``n_snapshots`` times.

    Samplers take ``(n, rng)`` and return ``(n, 3)`` arrays; defaults are
    Normal(0, I) and Normal(0.5 e₁, I). The common-randomness coupling is
    one admissible coupling, so a non-increasing series is evidence of
    contraction rather than a proof.
    """
    if N > 512:
        raise ValueError("exact matching regime requires N <= 512")
    p0a = p0a or _gaussian([0.0, 0.0, 0.0])
    p0b = p0b or _gaussian([0.5, 0.0, 0.0])
    kernel = kernel or CollisionKernel()
    times = np.linspace(0.0, T, n_snapshots)
    out = np.empty((replicas, n_snapshots))
    for r in range(replicas):
        rng = make_stream(seed, r)
        a = p0a(N, rng)
        b = p0b(N, rng)
        out[r] = coupled_pair(a, b, kernel, times, rng, relabel)[0]
    return TanakaReport(times, out)
