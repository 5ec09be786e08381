import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pchaos.boltzmann import (
    C_SCALE,
    CollisionKernel,
    KernelContractError,
    VelocityEnsemble3,
    anisotropy,
    apply_candidates,
    collide,
    coupled_pair,
    draw_candidates,
    exact_race_frozen,
    nanbu_meanfield3,
    pair_rates,
    simulate_collisions,
    simulate_collisions_exact,
    tanaka_contraction_check,
    thinned_frozen,
)
from pchaos.rng import make_stream, unit_vectors3

vec = st.lists(st.floats(-10, 10), min_size=3, max_size=3).map(np.array)


@settings(max_examples=60)
@given(vec, vec, st.integers(0, 2**32 - 1))
def test_collision_conserves_momentum_energy(vi, vj, seed):
    s = unit_vectors3(1, make_stream(seed))[0]
    a, b = collide(vi, vj, s)
    assert np.allclose(a + b, vi + vj, atol=1e-12)
    assert math.isclose(a @ a + b @ b, vi @ vi + vj @ vj, rel_tol=1e-13, abs_tol=1e-12)
    # relative speed is preserved, outgoing direction is σ
    assert math.isclose(np.linalg.norm(a - b), np.linalg.norm(vi - vj), rel_tol=1e-12, abs_tol=1e-12)


def test_collide_rejects_non_unit_sigma():
    with pytest.raises(ValueError):
        collide(np.zeros(3), np.ones(3), np.array([1.0, 1.0, 0.0]))


def test_kernel_families_and_validation():
    k = CollisionKernel("capped_linear", (1.0, 2.0))
    assert k.gamma_max == 2.0
    assert np.allclose(k.gamma(np.array([0.5, 3.0])), [0.5, 2.0])
    s = CollisionKernel("saturating", (3.0, 1.0))
    assert s.gamma(np.array([1.0]))[0] == 1.5 and s.gamma_max == 3.0
    with pytest.raises(ValueError):
        CollisionKernel("hard_sphere")
    with pytest.raises(ValueError):
        CollisionKernel("capped_linear", (1.0,))
    with pytest.raises(ValueError):
        CollisionKernel(b_family="cutoff", cos_min=1.5)
    with pytest.raises(ValueError):
        CollisionKernel(cos_min=0.2)


def test_cutoff_sigma_uniform_on_cap():
    k = CollisionKernel(b_family="cutoff", cos_min=0.4)
    rel = np.tile([0.0, 0.0, 2.0], (50_000, 1))
    sig = k.map_sigma(unit_vectors3(50_000, make_stream(1)), rel)
    c = sig[:, 2]
    assert np.allclose(np.linalg.norm(sig, axis=1), 1.0)
    assert c.min() >= 0.4 - 1e-12
    # uniform surface measure on the cap makes cos θ uniform on [cos_min, 1]
    assert stats.kstest(c, stats.uniform(0.4, 0.6).cdf).pvalue > 1e-3


def test_ensemble_conservation_under_simulation():
    rng = make_stream(2)
    ens = VelocityEnsemble3(rng.standard_normal((300, 3)))
    run = simulate_collisions(ens, CollisionKernel("capped_linear", (1.0, 2.0)), 5.0, rng, log_events=True)
    dp, de = ens.conservation_error()
    assert dp < 1e-13 and de < 1e-13
    assert 0 < run.n_accepted <= run.n_candidates
    assert len(list(run.events.to_csv_rows())) == run.n_candidates


def test_candidate_rate():
    k = CollisionKernel("constant", (2.0,))
    n = [len(draw_candidates(40, k, 0.0, 1.0, make_stream(3, r))) for r in range(200)]
    assert np.mean(n) == pytest.approx(40 * 2.0 * C_SCALE, abs=5 * math.sqrt(40 / 200))


def test_contract_violation_raises():
    v = np.array([[0.0, 0, 0], [10.0, 0, 0]])
    k = CollisionKernel("capped_linear", (1.0, 5.0), gamma_max=1.0)
    ev = draw_candidates(2, k, 0.0, 50.0, make_stream(4))
    with pytest.raises(KernelContractError):
        apply_candidates(v, ev, k)


def test_thinning_matches_exact_race_per_pair():
    v = np.array([[0.0, 0, 0], [1.5, 0, 0], [0.0, 0.5, 0]])
    k = CollisionKernel("capped_linear", (1.0, 2.0))
    rates = pair_rates(v, k)
    w_a, p_a = thinned_frozen(v, k, 30_000, make_stream(5))
    w_b, p_b = exact_race_frozen(v, k, 30_000, make_stream(6))
    ca, cb = np.bincount(p_a, minlength=3), np.bincount(p_b, minlength=3)
    assert stats.chisquare(ca, rates / rates.sum() * ca.sum()).pvalue > 1e-3
    assert stats.chi2_contingency(np.vstack([ca, cb]))[1] > 1e-3
    # waiting times: exponential with the total rate in both constructions
    assert stats.kstest(w_a, stats.expon(scale=1 / rates.sum()).cdf).pvalue > 1e-3
    assert stats.ks_2samp(w_a, w_b).pvalue > 1e-3


def test_exact_gillespie_conserves():
    rng = make_stream(7)
    ens = VelocityEnsemble3(rng.standard_normal((5, 3)))
    n = simulate_collisions_exact(ens, CollisionKernel(), 3.0, rng)
    assert n > 0
    assert max(ens.conservation_error()) < 1e-13


def test_nanbu_anisotropy_relaxation_rate():
    # constant γ, isotropic σ: E[v'v'ᵀ] = mmᵀ + |r|²I/12, so the traceless
    # part of the second-moment tensor obeys dP/dt = -P/2
    rng = make_stream(8)
    v0 = rng.standard_normal((40_000, 3)) * np.array([2.0, 1.0, 1.0])
    a0 = anisotropy(v0)
    v = nanbu_meanfield3(v0, CollisionKernel(), 4.0, 0.02, rng)
    assert anisotropy(v) == pytest.approx(a0 * math.exp(-2.0), abs=0.006)
    with pytest.raises(ValueError):
        nanbu_meanfield3(v0, CollisionKernel(), 1.0, 0.5, rng)


def test_coupled_pair_identical_systems_stay_together():
    a = make_stream(9).standard_normal((50, 3))
    w1, _, _ = coupled_pair(a, a[::-1].copy(), CollisionKernel(), np.linspace(0, 1, 4), make_stream(10))
    assert np.all(w1 < 1e-12)


def test_tanaka_small_run():
    rep = tanaka_contraction_check(N=64, T=1.0, replicas=8, n_snapshots=5, seed=1)
    assert rep.w1.shape == (8, 5)
    assert rep.excess_in_stderr() < 2.0
    with pytest.raises(ValueError):
        tanaka_contraction_check(N=1000)
