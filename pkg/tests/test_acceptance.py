"""Acceptance criteria, one test each.

Every test records a ``criterion N: PASS|FAIL ...`` line that is printed in
the terminal summary (and directly when this file is run as a script).
"""
import math
import sys
import time

import numpy as np
import pytest
from scipy import stats

from pchaos import averaging, boltzmann, circle, harness, kac, speciation
from pchaos.rng import WrappedNoise, make_stream, noise_spectrum, sample_uniform_sphere, uniform_pairs, unit_vectors3

pytestmark = pytest.mark.acceptance


def _record(log, n, title, ok, detail, t0):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {title} | {detail} | {time.perf_counter() - t0:.1f}s"
    log.append(line)
    print(line)
    assert ok, line


def test_01_kac_energy_conservation(criterion_log):
    t0 = time.perf_counter()
    N = 1000
    st = kac.chaotic_initial(N, make_stream(1))
    e0 = st.energy()
    # rate N: T = 1000 gives 10⁶ expected events; no renormalisation, so the drift is the raw one
    rng = make_stream(1, 1)
    run = kac.simulate_kac(st, 1000.0, rng, renorm_every=None)
    extra = 10**6 - run.n_events
    n = run.n_events
    v = run.final.v
    if extra > 0:
        i, j = uniform_pairs(N, extra, rng)
        kac.apply_events(v, i, j, kac.draw_theta(extra, rng))
        n += extra
    drift = abs(kac.sphere_energy(v) - e0) / e0
    el = time.perf_counter() - t0
    _record(criterion_log, 1, "Kac energy drift", n >= 10**6 and drift < 1e-9 and el < 10,
            f"events={n} drift={drift:.2e} (<1e-9)", t0)


def test_02_kac_equilibrium_maxwellian(criterion_log):
    t0 = time.perf_counter()
    N, R = 1000, 100_000
    rng = make_stream(2)
    first = np.concatenate([sample_uniform_sphere(N, math.sqrt(2 * N), rng, size=5000)[:, 0] for _ in range(R // 5000)])
    ks = stats.kstest(first, stats.norm(0, math.sqrt(2)).cdf).statistic
    el = time.perf_counter() - t0
    _record(criterion_log, 2, "Kac equilibrium marginal vs Normal(0,2)", ks < 0.02 and el < 30,
            f"replicas={R} KS={ks:.4f} (<0.02)", t0)


def test_03_kac_meanfield_m4_rate(criterion_log):
    t0 = time.perf_counter()
    M = 100_000
    v0 = kac.sample_initial_law("twopoint", M, make_stream(3))
    _, rec = kac.meanfield_kac(kac.MeanFieldEnsemble(v0), 3.0, 0.01, make_stream(3, 1), record_every=10)
    t, m2, m4 = np.array(rec).T
    dev = 3 * m2**2 - m4  # positive for the two-point start
    rate = -np.polyfit(t, np.log(dev), 1)[0]
    target = kac.m4_relaxation_rate(2.0)
    rel = abs(rate - target) / target
    el = time.perf_counter() - t0
    _record(criterion_log, 3, "Kac mean-field m4 - 3m2² e-folding rate", rel < 0.10 and el < 60,
            f"M={M} rate={rate:.4f} ODE={target:.4f} rel.err={rel:.3f} (<0.10)", t0)


def test_04_averaging_stationary_variance(criterion_log):
    t0 = time.perf_counter()
    N = 10_000
    ens = averaging.AveragingEnsemble(np.zeros(N))
    averaging.simulate_averaging(ens, averaging.NoiseLaw("gaussian", 1.0), 50 * N, make_stream(4))
    var = float(np.var(ens.x))
    el = time.perf_counter() - t0
    _record(criterion_log, 4, "averaging stationary variance", 1.9 <= var <= 2.1 and el < 20,
            f"N={N} events={50 * N} var={var:.4f} (in [1.9, 2.1])", t0)


def test_05_dyadic_fixed_point(criterion_log):
    t0 = time.perf_counter()
    xi_wide = np.linspace(-20, 20, 4001)
    xi = np.linspace(-5, 5, 201)
    N = 10_000
    details, ok = [], True
    for fam in ("gaussian", "twopoint"):
        g = averaging.NoiseLaw(fam, 1.0)
        res = averaging.fixed_point_residual(lambda z: averaging.stationary_charfun(g.charfun, z), g.charfun, xi_wide)
        ens = averaging.AveragingEnsemble(np.zeros(N))
        rng = make_stream(5, len(details))
        averaging.simulate_averaging(ens, g, 20 * N, rng)
        # pool centred snapshots N/2 replacements (one time unit) apart
        snaps = []
        for _ in range(20):
            averaging.simulate_averaging(ens, g, N // 2, rng)
            snaps.append(ens.x - ens.x.mean())
        emp = averaging.empirical_charfun(np.concatenate(snaps), xi, center=False)
        dev = float(np.max(np.abs(emp - averaging.stationary_charfun(g.charfun, xi))))
        ok &= res < 1e-8 and dev < 0.02
        details.append(f"{fam}: residual={res:.1e} (<1e-8) empirical={dev:.4f} (<0.02)")
    _record(criterion_log, 5, "dyadic fixed point", ok, "; ".join(details), t0)


def test_06_circle_threshold(criterion_log):
    t0 = time.perf_counter()
    g1 = np.linspace(0.0, 1.0, 1001)
    ident = max(abs(float(circle.lambda_k(np.array([1.0, g]), 1)) - (4 * g / math.pi - 1)) for g in g1)
    sub = circle.particle_vs_spectral(2000, 1.2, 8.0, 200, seed=6, b0=0.1, n_times=33)
    sup = circle.particle_vs_spectral(2000, 0.5, 8.0, 200, seed=7, b0=0.1, n_times=33)
    rp, rs = sup.growth_rates(0.1, 0.4)
    rel = abs(rp - rs) / abs(rs)
    el = time.perf_counter() - t0
    ok = ident < 1e-14 and sub.lambda1 < 0 < sup.lambda1 and sub.sup_difference < 0.05 and rel < 0.15 and el < 120
    _record(criterion_log, 6, "circle stability threshold", ok,
            f"identity err={ident:.1e} (<1e-14); subcritical λ1={sub.lambda1:.3f} sup|Δa1|={sub.sup_difference:.4f} (<0.05); "
            f"supercritical λ1={sup.lambda1:.3f} rate particle={rp:.4f} spectral={rs:.4f} rel={rel:.3f} (<0.15)", t0)


def test_07_higher_modes_stable(criterion_log):
    t0 = time.perf_counter()
    worst_l2, worst_k = 0.0, -math.inf
    for fam in ("gaussian", "uniform"):
        for tau in np.geomspace(0.01, 6.0, 40):
            lam = circle.StabilitySpectrum.from_spectrum(noise_spectrum(WrappedNoise(fam, float(tau)), 64)).lam
            worst_l2 = max(worst_l2, abs(lam[1] + 1.0))
            worst_k = max(worst_k, float(lam[1:].max()))
    for shift in np.linspace(0.0, math.pi, 40):
        pm = WrappedNoise("pointmass", 1.0, atoms=(-shift, shift), weights=(0.5, 0.5))
        lam = circle.StabilitySpectrum.from_spectrum(noise_spectrum(pm, 64)).lam
        worst_l2 = max(worst_l2, abs(lam[1] + 1.0))
        worst_k = max(worst_k, float(lam[1:].max()))
    _record(criterion_log, 7, "λ2 = -1 and λk < 0 for 2 ≤ k ≤ 64", worst_l2 < 1e-14 and worst_k < 0,
            f"max|λ2+1|={worst_l2:.1e} (<1e-14) max λk={worst_k:.4f} (<0)", t0)


def _ulps(err, scale):
    return np.asarray(err, dtype=np.longdouble) / np.spacing(np.asarray(scale, dtype=float))


def test_08_boltzmann_identities(criterion_log):
    t0 = time.perf_counter()
    n = 10**6
    rng = make_stream(8)
    # 10⁶ candidate collisions on disjoint pairs of the production kernel, so each event is checked on its own
    v = np.ascontiguousarray(rng.standard_normal((2 * n, 3)) * rng.uniform(0.1, 10.0, (2 * n, 1)))
    before = v.copy()
    ev = boltzmann.CandidateEvents(np.arange(n, dtype=float), np.arange(0, 2 * n, 2), np.arange(1, 2 * n, 2),
                                   np.zeros(n), unit_vectors3(n, rng), np.zeros(n, dtype=np.int8))
    boltzmann.apply_candidates(v, ev, boltzmann.CollisionKernel())
    assert ev.accepted.all()
    L = np.longdouble
    a0, b0, a1, b1 = before[0::2], before[1::2], v[0::2], v[1::2]
    dp = np.abs((a1.astype(L) + b1) - (a0.astype(L) + b0))
    pscale = np.maximum.reduce([np.abs(a0), np.abs(b0), np.abs(a1), np.abs(b1)])
    p_ulp = float(np.max(_ulps(dp, pscale)))
    E0 = (a0.astype(L) ** 2).sum(1) + (b0.astype(L) ** 2).sum(1)
    E1 = (a1.astype(L) ** 2).sum(1) + (b1.astype(L) ** 2).sum(1)
    e_ulp = float(np.max(_ulps(np.abs(E1 - E0), E0.astype(float))))
    # thinning vs exact race, N = 3, γ(r) = min(r, 2)
    vf = np.array([[0.0, 0, 0], [1.5, 0, 0], [0.0, 0.5, 0]])
    kern = boltzmann.CollisionKernel("capped_linear", (1.0, 2.0))
    _, pa = boltzmann.thinned_frozen(vf, kern, 100_000, make_stream(8, 1))
    _, pb = boltzmann.exact_race_frozen(vf, kern, 100_000, make_stream(8, 2))
    p = stats.chi2_contingency(np.vstack([np.bincount(pa, minlength=3), np.bincount(pb, minlength=3)]))[1]
    ok = p_ulp <= 4 and e_ulp <= 8 and p > 1e-3
    _record(criterion_log, 8, "Boltzmann collision identities", ok,
            f"momentum max {p_ulp:.2f} ulp (≤4) energy max {e_ulp:.2f} ulp (≤8) thinning-vs-race χ² p={p:.3f} (>0.001)", t0)


def test_09_tanaka_non_expansive(criterion_log):
    t0 = time.perf_counter()
    rep = boltzmann.tanaka_contraction_check(N=256, T=2.0, replicas=50, n_snapshots=20, seed=9)
    ex = rep.excess_in_stderr()
    el = time.perf_counter() - t0
    _record(criterion_log, 9, "Tanaka W1 non-expansivity", ex <= 2.0 and el < 180,
            f"W1 {rep.mean[0]:.4f} -> {rep.mean[-1]:.4f}; max excess over initial = {ex:.2f} SE (≤2)", t0)


def test_10_t1_bound(criterion_log):
    t0 = time.perf_counter()
    viol, worst, total = 0, 0.0, 0
    for ell in (1, 2, 3):
        for N in range(2 * ell, 9):
            res = harness.t1_bound_check(N, ell, n_configs=10_000, n_functions=20, seed=10 * ell + N)
            viol += res.violations
            worst = max(worst, res.max_ratio)
            total += res.configurations
    _record(criterion_log, 10, "T1 combinatorial bound", viol == 0,
            f"{total} configurations over ℓ≤3, N≤8; violations={viol}; max diff/bound={worst:.3f}", t0)


def test_11_chaos_decay_rate(criterion_log):
    t0 = time.perf_counter()
    rep = harness.chaos_sweep(harness.ExperimentPlan("kac", [50, 100, 200, 400], 10_000, 2.0, seed=11))
    s = rep.fit.slope
    el = time.perf_counter() - t0
    defects = ", ".join(f"N={r['N']}:{r['defect']:.2e}±{r['stderr']:.1e}" for r in rep.rows)
    _record(criterion_log, 11, "Kac chaos decay rate", -1.3 <= s <= -0.7 and el < 600,
            f"slope={s:.3f}±{rep.fit.halfwidth:.3f} (in [-1.3, -0.7]); {defects}", t0)


def test_12_speciation(criterion_log):
    t0 = time.perf_counter()
    food = speciation.FoodDistribution.atoms((-1.0, 1.0), 200.0)
    spread = 2.0
    split = {}
    invariants = True
    for label, sigma in (("reinforced", 0.1 * spread), ("random", math.inf)):
        params = speciation.SpeciationParams(sigma=sigma)
        n = 0
        for seed in range(10):
            run = speciation.run_speciation(food, params, 500, seed=seed)
            n += run.first_split is not None
            invariants &= all(abs(r.share_sum - 1) < 1e-12 and r.W_c >= -1e-12 for r in run.records)
        split[label] = n
    el = time.perf_counter() - t0
    ok = split["reinforced"] >= 8 and split["random"] <= 2 and invariants and el < 300
    _record(criterion_log, 12, "speciation with and without reinforcement", ok,
            f"split within 500 generations: σ=0.2 {split['reinforced']}/10 (≥8), σ=∞ {split['random']}/10 (≤2); "
            f"Σc=1 and W_c≥0 every generation: {invariants}", t0)


SMALL_RUNS = {
    "kac": ["--n", "50", "--t", "2", "--replicas", "2", "--log-events", "true"],
    "circle": ["--n", "500", "--t", "2", "--replicas", "4", "--K", "16", "--snapshots", "5"],
    "averaging": ["--n", "500", "--events", "5000"],
    "boltzmann3": ["--n", "100", "--t", "2", "--gamma-family", "saturating", "--gamma-params", "3,1",
                   "--log-events", "true"],
    "speciation": ["--food-mass", "60", "--generations", "10"],
    "chaos-sweep": ["--model", "circle", "--ns", "8,16,32", "--replicas", "50", "--T", "1"],
    "t1-check": ["--N", "7", "--ell", "3", "--configs", "500"],
    "marginal-gap": ["--model", "boltzmann3", "--ns", "8,16", "--replicas", "10", "--T", "1",
                     "--assert-decreasing", "false"],
}


def test_13_determinism(criterion_log, tmp_path, capsys):
    from pchaos import cli

    t0 = time.perf_counter()
    same, n_files = [], 0
    for sub, args in SMALL_RUNS.items():
        outs = []
        for rep in ("a", "b"):
            d = tmp_path / f"{sub}-{rep}"
            assert cli.run(["--run-dir", str(d), sub, *args]) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))})
        n_files += len(outs[0])
        same.append(bool(outs[0]) and outs[0] == outs[1])
    capsys.readouterr()
    _record(criterion_log, 13, "byte-identical CSV on re-run", all(same),
            f"{sum(same)}/{len(same)} subcommands identical ({n_files} CSV files)", t0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
