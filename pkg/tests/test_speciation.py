import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from pchaos.rng import make_stream
from pchaos.speciation import (
    FoodDistribution,
    ModeCountUnstable,
    Population,
    PopulationCapExceeded,
    SpeciationParams,
    choose_partner,
    choose_partners,
    detect_modes,
    expected_next_size,
    fitness_shares,
    food_entropy,
    partner_probabilities,
    reproduce,
    run_speciation,
    step_generation,
)

FOOD = FoodDistribution.atoms((-1.0, 1.0), 200.0)


def _pop(x, y=None, ys=None):
    x = np.asarray(x, dtype=float)
    y = np.zeros(x.size) if y is None else y
    ys = np.zeros(x.size) if ys is None else ys
    return Population(x, y, ys)


@settings(max_examples=50)
@given(arrays(float, st.integers(2, 30), elements=st.floats(-50, 50)))
def test_shares_sum_to_one_and_entropy_nonnegative(x):
    c = fitness_shares(_pop(x), FOOD, 0.25)
    assert np.all(c >= 0)
    assert math.fsum(c.tolist()) == pytest.approx(1.0, abs=1e-12)
    assert food_entropy(c) >= -1e-12


def test_shares_brute_force():
    x = np.array([-1.0, 0.0, 0.2, 3.0])
    sx = 0.5
    c = np.zeros(4)
    for a, w in zip(FOOD.locations, FOOD.weights):
        k = np.exp(-((x - a) ** 2) / (2 * sx**2))
        c += w / FOOD.mass * k / k.sum()
    assert np.allclose(fitness_shares(_pop(x), FOOD, sx), c, rtol=1e-14)


def test_entropy_values():
    assert food_entropy(np.full(4, 0.25)) == pytest.approx(0.0, abs=1e-15)
    assert food_entropy(np.array([1.0, 0, 0, 0])) == pytest.approx(math.log(4))


def test_food_validation():
    with pytest.raises(ValueError):
        FoodDistribution((0.0,), (0.0,))
    with pytest.raises(ValueError):
        FoodDistribution((0.0, 1.0), (1.0,))


def test_partner_probabilities_match_formula():
    pop = _pop(np.zeros(3), y=np.array([0.0, 0.5, 2.0]), ys=np.array([0.4, 0.0, 1.0]))
    P = partner_probabilities(pop, 0.7)
    for k in range(3):
        w = np.array([0 if j == k else math.exp(-((pop.ystar[k, 0] - pop.y[j, 0]) ** 2) / (2 * 0.49)) for j in range(3)])
        assert np.allclose(P[k], w / w.sum(), rtol=1e-13)
    assert np.allclose(partner_probabilities(pop, math.inf), (1 - np.eye(3)) / 2)


def test_partner_choice_frequencies():
    pop = _pop(np.zeros(4), y=np.array([0.0, 0.3, 1.0, -0.5]), ys=np.array([0.2, 0.2, 0.2, 0.2]))
    P = partner_probabilities(pop, 0.5)
    rng = make_stream(0)
    R = 20_000
    counts = np.zeros((4, 4))
    for _ in range(R // 100):
        for _ in range(100):
            js = choose_partners(pop, 0.5, rng)
            counts[np.arange(4), js] += 1
    for k in range(4):
        exp = P[k] * R
        keep = exp > 0
        assert counts[k, ~keep].sum() == 0
        assert stats.chisquare(counts[k, keep], exp[keep]).pvalue > 1e-4
    j = choose_partner(0, pop, 0.5, rng)
    assert j != 0


def test_partner_choice_extreme_sigma_does_not_underflow():
    pop = _pop(np.zeros(3), y=np.array([0.0, 50.0, 100.0]), ys=np.array([100.0, 0.0, 0.0]))
    js = choose_partners(pop, 0.01, make_stream(1))
    assert list(js) == [2, 0, 0]


def test_children_are_midpoints_without_mutation():
    pop = _pop(np.array([0.0, 2.0]), y=np.array([1.0, 3.0]), ys=np.array([0.0, 4.0]))
    params = SpeciationParams(mut_x=0.0, mut_y=0.0, mut_ystar=0.0)
    kids = reproduce(0, 1, np.array([0.5, 0.5]), 20.0, params, pop, make_stream(2))
    assert kids.N > 0
    assert np.all(kids.x == 1.0) and np.all(kids.y == 2.0) and np.all(kids.ystar == 2.0)
    assert kids.generation == 1


def test_expected_next_size_matches_simulation():
    rng = make_stream(3)
    pop = Population(rng.normal(size=40), rng.normal(size=40), rng.normal(size=40))
    food = FoodDistribution.atoms((-1.0, 1.0), 40.0)
    params = SpeciationParams()
    sizes = [step_generation(pop, food, params, make_stream(4, r))[0].N for r in range(2000)]
    # the total is Poisson with mean Σ κ given the partner draws, and E[Σκ] = expected_next_size
    assert np.mean(sizes) == pytest.approx(expected_next_size(pop, food, params), abs=5 * math.sqrt(40 / 2000) + 0.3)


def test_population_cap():
    pop = Population.monomorphic(50)
    with pytest.raises(PopulationCapExceeded):
        step_generation(pop, FoodDistribution.atoms((0.0,), 1000.0), SpeciationParams(cap=100), make_stream(5))


def test_detect_modes():
    rng = make_stream(6)
    assert detect_modes(rng.normal(size=500), 0.2) == 1
    two = np.concatenate([rng.normal(-1, 0.1, 300), rng.normal(1, 0.1, 300)])
    assert detect_modes(two, 0.2) == 2
    # a tiny cluster below 5% of the main peak is not a mode
    tiny = np.concatenate([rng.normal(0, 0.1, 1000), rng.normal(3, 0.1, 10)])
    assert detect_modes(tiny, 0.2) == 1
    assert detect_modes(np.zeros(20), 0.2) == 1
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        detect_modes(np.concatenate([rng.normal(-0.2, 0.1, 300), rng.normal(0.2, 0.1, 300)]), 0.1,
                     check_stability=True)
    assert any(issubclass(x.category, ModeCountUnstable) for x in w)


def test_run_invariants_and_reproducibility():
    a = run_speciation(FOOD, SpeciationParams(), 20, seed=3)
    b = run_speciation(FOOD, SpeciationParams(), 20, seed=3)
    assert [r.row() for r in a.records] == [r.row() for r in b.records]
    for r in a.records:
        assert abs(r.share_sum - 1) < 1e-12 and r.W_c >= -1e-12


def test_permutation_equivariance_of_shares():
    rng = make_stream(7)
    pop = Population(rng.normal(size=12), rng.normal(size=12), rng.normal(size=12))
    perm = rng.permutation(12)
    assert np.allclose(fitness_shares(pop.permuted(perm), FOOD, 0.3), fitness_shares(pop, FOOD, 0.3)[perm])


def test_extinction_flag():
    run = run_speciation(FoodDistribution.atoms((0.0,), 0.05), SpeciationParams(), 10, seed=0,
                         initial=Population.monomorphic(5))
    assert run.extinct
