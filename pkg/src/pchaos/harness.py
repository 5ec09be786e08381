"""Cross-model propagation-of-chaos experiments.

* :func:`chaos_sweep` measures the chaoticity defect at a fixed time for a
  list of ``N`` and fits its log-log decay.
* :func:`marginal_gap` compares one-particle samples of the N-particle
  system with a Nanbu mean-field ensemble along a snapshot grid.
* :func:`t1_bound_check` enumerates all index tuples to compare the
  symmetrised test function with its empirical-measure polynomial.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import averaging, boltzmann, circle, kac
from .measures import ChaosReport, ObservableDictionary, chaoticity_defect_estimate, fit_loglog, w1_empirical_1d
from .rng import WrappedNoise, make_stream

MODELS = ("kac", "circle", "averaging", "boltzmann3")


@dataclass
class ExperimentPlan:
    model: str
    ns: list
    replicas: int
    T: float
    snapshots: int = 5
    dictionary: str = "default"
    seed: int = 0
    params: dict = field(default_factory=dict)
    meanfield_size: int | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODELS}")
        ns = [int(n) for n in self.ns]
        if any(n < 2 for n in ns) or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("N list must be strictly increasing with every N >= 2")
        if self.replicas < 2:
            raise ValueError("need at least two replicas")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if self.dictionary != "default":
            raise ValueError("only the default observable dictionary is available")
        self.ns = ns

    def snapshot_times(self):
        return np.linspace(0.0, self.T, max(self.snapshots, 1) + 1) if self.T > 0 else np.array([0.0])


# Model adapters ----------------------------------------------------------------
#
# ``simulate(N, R, times, seed, params)`` returns replica states with shape
# ``(len(times), R, N)`` or ``(len(times), R, N, 3)``; ``meanfield(M, times,
# seed, params)`` returns ``(len(times), M[, 3])`` samples of the limit law.
# Replica ``r`` always uses stream ``(seed, r)``.


def _kac_simulate(N, R, times, seed, p):
    law = p.get("law", "uniform")
    if times[-1] == 0:
        return np.stack([[kac.chaotic_initial(N, make_stream(seed, r), law).v for r in range(R)]])
    return kac.run_replicas(N, float(times[-1]), R, seed, times, law)


def _kac_meanfield(M, times, seed, p):
    rng = make_stream(seed, 10**9)
    v = kac.sample_initial_law(p.get("law", "uniform"), M, rng)
    v *= math.sqrt(2.0 / np.mean(v**2))
    return _evolve_meanfield(v, times, lambda x, h: kac.meanfield_kac(kac.MeanFieldEnsemble(x), h, p.get("dt", 0.02), rng).v)


def _circle_noise(p):
    return WrappedNoise(p.get("family", "gaussian"), float(p.get("tau", 1.2)))


def _circle_simulate(N, R, times, seed, p):
    noise = _circle_noise(p)
    out = np.empty((times.size, R, N))
    for r in range(R):
        rng = make_stream(seed, r)
        ens = circle.AngularEnsemble(circle.sample_cosine_density(N, float(p.get("b0", 0.2)), rng))
        if times[-1] == 0:
            out[:, r] = ens.theta
        else:
            out[:, r] = circle.simulate_circle(ens, noise, float(times[-1]), rng, times, return_states=True)[2]
    return out


def _circle_meanfield(M, times, seed, p):
    rng = make_stream(seed, 10**9)
    noise = _circle_noise(p)
    th = circle.sample_cosine_density(M, float(p.get("b0", 0.2)), rng)
    return _evolve_meanfield(th, times, lambda x, h: circle.meanfield_circle(x, noise, h, p.get("dt", 0.02), rng))


def _avg_noise(p):
    return averaging.NoiseLaw(p.get("family", "gaussian"), float(p.get("scale", 0.5)))


def _avg_initial(n, rng):
    return averaging.GaussianMixture().sample(rng, n)


def _avg_simulate(N, R, times, seed, p):
    g = _avg_noise(p)
    out = np.empty((times.size, R, N))
    counts = np.round(np.asarray(times) * N / 2.0).astype(int)
    for r in range(R):
        rng = make_stream(seed, r)
        ens = averaging.AveragingEnsemble(_avg_initial(N, rng))
        for k, c in enumerate(counts):
            averaging.simulate_averaging(ens, g, int(c - ens.events), rng)
            out[k, r] = ens.x
    return out


def _avg_meanfield(M, times, seed, p):
    rng = make_stream(seed, 10**9)
    g = _avg_noise(p)
    x = _avg_initial(M, rng)
    return _evolve_meanfield(x, times, lambda y, h: averaging.meanfield_averaging(y, g, h, p.get("dt", 0.02), rng))


def _boltz_kernel(p):
    return boltzmann.CollisionKernel(p.get("gamma_family", "constant"), tuple(p.get("gamma_params", (1.0,))),
                                     p.get("gamma_max"), p.get("b_family", "isotropic"), p.get("cos_min", -1.0))


def _boltz_initial(n, rng):
    # anisotropic Gaussian so that collisions visibly change the law
    return rng.standard_normal((n, 3)) * np.array([1.5, 0.7, 0.7])


def _boltz_simulate(N, R, times, seed, p):
    kern = _boltz_kernel(p)
    out = np.empty((times.size, R, N, 3))
    for r in range(R):
        rng = make_stream(seed, r)
        ens = boltzmann.VelocityEnsemble3(_boltz_initial(N, rng))
        if times[-1] == 0:
            out[:, r] = ens.v
        else:
            out[:, r] = boltzmann.simulate_collisions(ens, kern, float(times[-1]), rng, snapshot_times=times).snapshots
    return out


def _boltz_meanfield(M, times, seed, p):
    rng = make_stream(seed, 10**9)
    kern = _boltz_kernel(p)
    v = _boltz_initial(M, rng)
    dt = p.get("dt", min(0.02, 0.1 / kern.gamma_max))
    return _evolve_meanfield(v, times, lambda x, h: boltzmann.nanbu_meanfield3(x, kern, h, dt, rng))


def _evolve_meanfield(x, times, step):
    out = [x.copy()]
    for h in np.diff(times):
        if h > 0:
            x = step(x, h)
        out.append(x.copy())
    return np.stack(out)


@dataclass(frozen=True)
class ModelAdapter:
    simulate: object
    meanfield: object
    dim: int
    circular: bool = False


ADAPTERS = {
    "kac": ModelAdapter(_kac_simulate, _kac_meanfield, 1),
    "circle": ModelAdapter(_circle_simulate, _circle_meanfield, 1, circular=True),
    "averaging": ModelAdapter(_avg_simulate, _avg_meanfield, 1),
    "boltzmann3": ModelAdapter(_boltz_simulate, _boltz_meanfield, 3),
}


# Chaos sweep -----------------------------------------------------------------


def chaos_sweep(plan: ExperimentPlan, min_snr: float = 5.0) -> ChaosReport:
    """Chaoticity defect at time ``plan.T`` for every N, with a log-log rate fit."""
    ad = ADAPTERS[plan.model]
    dictionary = ObservableDictionary.default(ad.dim)
    report = ChaosReport(plan.model)
    times = np.array([0.0, plan.T]) if plan.T > 0 else np.array([0.0])
    for N in plan.ns:
        states = ad.simulate(N, plan.replicas, times, plan.seed, plan.params)[-1]
        est = chaoticity_defect_estimate(states, dictionary)
        report.add(N, plan.replicas, est.defect, est.stderr, pair=list(est.pair))
        if est.defect < 2 * est.stderr:
            report.warnings.append(f"N={N}: defect within 2 standard errors of zero; more replicas needed")
    d = [r["defect"] for r in report.rows]
    s = [r["stderr"] for r in report.rows]
    report.fit = fit_loglog(plan.ns, d, s, min_snr)
    if math.isnan(report.fit.slope):
        report.warnings.append("fewer than three N values above the signal-to-noise cut; no slope fitted")
    if plan.model == "circle":
        gamma1 = float(circle.noise_spectrum(_circle_noise(plan.params), 2)[1])
        if gamma1 > circle.critical_gamma1():
            report.warnings.append("supercritical circle model: chaos need not persist after the ordered state forms")
    return report


# Marginal gap ------------------------------------------------------------------


def w1_circle(a, b) -> float:
    """W₁ on the circle of circumference 2π between two empirical angle samples.

    Uses ``min_c ∫ |F - G - c| dθ``, attained at a weighted median of ``F - G``.
    """
    a = np.sort(np.mod(np.asarray(a, dtype=float).ravel(), 2 * np.pi))
    b = np.sort(np.mod(np.asarray(b, dtype=float).ravel(), 2 * np.pi))
    pts = np.concatenate([[0.0], np.union1d(a, b), [2 * np.pi]])
    left = pts[:-1]
    w = np.diff(pts)
    D = np.searchsorted(a, left, side="right") / a.size - np.searchsorted(b, left, side="right") / b.size
    order = np.argsort(D)
    cw = np.cumsum(w[order])
    c = D[order][np.searchsorted(cw, 0.5 * cw[-1])]
    return float(np.sum(w * np.abs(D - c)))


@dataclass
class GapRow:
    N: int
    sup_gap: float
    stderr: float
    noise_floor: float
    gaps: list


@dataclass
class GapReport:
    model: str
    times: np.ndarray
    rows: list = field(default_factory=list)

    def decreasing(self, k_se: float = 2.0):
        """Per consecutive pair of N: whether the gap does not grow beyond ``k_se`` combined errors."""
        out = []
        for a, b in zip(self.rows, self.rows[1:]):
            tol = k_se * math.hypot(a.stderr, b.stderr)
            out.append(b.sup_gap <= a.sup_gap + tol)
        return out

    def strictly_decreasing(self, k_se: float = 2.0):
        """Per consecutive pair: whether the gap drops by more than ``k_se`` combined errors."""
        return [b.sup_gap < a.sup_gap - k_se * math.hypot(a.stderr, b.stderr) for a, b in zip(self.rows, self.rows[1:])]

    def rows_csv(self):
        for r in self.rows:
            yield [self.model, r.N, repr(r.sup_gap), repr(r.stderr), repr(r.noise_floor)]


def _marginal_w1(model, a, b):
    if model == "circle":
        return w1_circle(a, b)
    if a.ndim == 2:  # 3-D velocities: compare the first component
        return w1_empirical_1d(a[:, 0], b[:, 0])
    return w1_empirical_1d(a, b)


def marginal_gap(plan: ExperimentPlan, batches: int = 10) -> GapReport:
    """Sup over snapshots of W₁ between pooled one-particle samples and a mean-field ensemble.

    All particles of all replicas are pooled for the one-particle law. The
    standard error comes from splitting the replicas into ``batches``
    groups; the noise floor is the gap between two independent samples of
    the initial law with the same sizes.
    """
    ad = ADAPTERS[plan.model]
    times = plan.snapshot_times()
    rep = GapReport(plan.model, times)
    for N in plan.ns:
        M = plan.meanfield_size or max(10 * N, 4 * N * plan.replicas)
        states = ad.simulate(N, plan.replicas, times, plan.seed, plan.params)
        mf = ad.meanfield(M, times, plan.seed + 1, plan.params)
        gaps = []
        for k in range(times.size):
            pool = states[k].reshape((-1,) + states.shape[3:])
            gaps.append(_marginal_w1(plan.model, pool, mf[k]))
        kstar = int(np.argmax(gaps))
        B = min(batches, plan.replicas)
        parts = np.array_split(np.arange(plan.replicas), B)
        bvals = [_marginal_w1(plan.model, states[kstar][idx].reshape((-1,) + states.shape[3:]), mf[kstar]) for idx in parts]
        # batch gaps are noisier than the pooled gap; their spread over √B approximates its error
        se = float(np.std(bvals, ddof=1) / math.sqrt(B)) if B > 1 else math.nan
        floor = _marginal_w1(plan.model, states[0].reshape((-1,) + states.shape[3:]),
                             ad.meanfield(M, np.array([0.0]), plan.seed + 2, plan.params)[0])
        rep.rows.append(GapRow(N, float(max(gaps)), se, floor, [float(g) for g in gaps]))
    return rep


# T1 combinatorial bound -----------------------------------------------------------


@dataclass
class T1Result:
    N: int
    ell: int
    configurations: int
    max_ratio: float
    violations: int
    max_difference: float


def _phi_values(phi, X, ell):
    """``φ(x_{i_1}, …, x_{i_ℓ})`` for all index tuples; shape ``(C, N**ℓ)``."""
    C, N = X.shape[:2]
    idx = np.array(list(itertools.product(range(N), repeat=ell)))  # (N**ℓ, ℓ)
    args = [X[:, idx[:, a]] for a in range(ell)]
    if isinstance(phi, (list, tuple)):
        if len(phi) != ell:
            raise ValueError("need one factor per tensor slot")
        vals = np.ones(args[0].shape[:2])
        for f, y in zip(phi, args):
            vals = vals * f(y)
        return vals, idx
    return np.asarray(phi(*args), dtype=float), idx


def t1_difference(phi, X, ell: int):
    """``|(φ ⊗ 1)_sym(X) - ∫ φ dμ̂_X^{⊗ℓ}|`` for each configuration in ``X`` (shape ``(C, N[, d])``)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None]
    N = X.shape[1]
    if N < 2 * ell:
        raise ValueError("the bound needs N >= 2 ell")
    vals, idx = _phi_values(phi, X, ell)
    distinct = np.array([len(set(t)) == ell for t in idx.tolist()])
    sym = vals[:, distinct].mean(axis=1)
    mono = vals.mean(axis=1)
    return np.abs(sym - mono), vals


def t1_bound(ell: int, sup_norm: float, N: int) -> float:
    return 2.0 * ell**2 * sup_norm / N


def random_test_function(ell: int, rng: np.random.Generator):
    """A random bounded test function on ``R^ℓ`` with ``sup |φ| ≤ 1``.

    Families: products of shifted cosines, products of sign steps, and a
    non-separable ``cos`` of a random linear form.
    """
    kind = int(rng.integers(0, 3))
    if kind == 0:
        w = rng.uniform(0.5, 4.0, ell)
        ph = rng.uniform(0, 2 * np.pi, ell)
        return [(lambda y, a=a, b=b: np.cos(a * y + b)) for a, b in zip(w, ph)], 1.0
    if kind == 1:
        c = rng.normal(0, 0.7, ell)
        return [(lambda y, t=t: np.where(y > t, 1.0, -1.0)) for t in c], 1.0
    w = rng.normal(0, 2.0, ell)
    b = rng.uniform(0, 2 * np.pi)
    return (lambda *ys: np.cos(sum(wi * y for wi, y in zip(w, ys)) + b)), 1.0


def random_configurations(C: int, N: int, rng: np.random.Generator):
    """Mix of continuous Gaussian draws and draws from a small lattice (forcing ties)."""
    X = rng.standard_normal((C, N))
    tied = rng.random(C) < 0.3
    X[tied] = rng.integers(-2, 3, (int(tied.sum()), N)).astype(float)
    return X


def t1_bound_check(N: int, ell: int, n_configs: int = 10_000, n_functions: int = 20, seed: int = 0,
                   phi=None, sup_norm: float | None = None, configs=None) -> T1Result:
    """Exact enumeration of the T₁ difference against ``2 ℓ² ‖φ‖_∞ / N``.

    Without ``phi``, ``n_functions`` random test functions are each checked
    on ``n_configs / n_functions`` random configurations. ``sup_norm``
    defaults to the largest ``|φ|`` seen, which only tightens the check.
    """
    if ell < 1 or ell > 3:
        raise ValueError("ell must be 1, 2 or 3")
    if N < 2 * ell:
        raise ValueError("the bound needs N >= 2 ell")
    if N > 8:
        raise ValueError("exact enumeration is limited to N <= 8")
    rng = make_stream(seed, 0)
    if phi is not None:
        jobs = [(phi, sup_norm)]
        per = n_configs
    else:
        jobs = [random_test_function(ell, rng) for _ in range(n_functions)]
        per = max(1, n_configs // n_functions)
    worst, viol, maxdiff, total = 0.0, 0, 0.0, 0
    for f, sn in jobs:
        X = random_configurations(per, N, rng) if configs is None else np.asarray(configs, dtype=float)
        diff, vals = t1_difference(f, X, ell)
        s = float(np.max(np.abs(vals))) if sn is None else sn
        if s == 0:
            continue
        b = t1_bound(ell, s, N)
        worst = max(worst, float(diff.max() / b))
        viol += int(np.sum(diff > b * (1 + 1e-12)))
        maxdiff = max(maxdiff, float(diff.max()))
        total += X.shape[0]
    return T1Result(N, ell, total, worst, viol, maxdiff)
