"""The compiled and pure-Python event loops must agree bit for bit."""
import numpy as np
import pytest

from pchaos import _kernels
from pchaos.rng import make_stream, uniform_pairs, unit_vectors3

pytestmark = pytest.mark.skipif(_kernels.compiled is None, reason="compiled extension not built")

BACKENDS = [_kernels.compiled, _kernels.pure]


def _run_both(fn_name, state, *args):
    outs = []
    for b in BACKENDS:
        s = state.copy()
        ret = getattr(b, fn_name)(s, *[a.copy() if isinstance(a, np.ndarray) else a for a in args])
        outs.append((s, ret))
    return outs


def test_kac_identical():
    rng = make_stream(0)
    v = rng.standard_normal(50)
    i, j = uniform_pairs(50, 5000, rng)
    th = rng.uniform(-np.pi, np.pi, 5000)
    (a, _), (b, _) = _run_both("kac_events", v, i, j, np.cos(th), np.sin(th))
    assert np.array_equal(a, b)


def test_averaging_identical():
    rng = make_stream(1)
    x = rng.standard_normal(40)
    i, j = uniform_pairs(40, 5000, rng)
    (a, _), (b, _) = _run_both("averaging_events", x, i, j, rng.standard_normal(5000), rng.standard_normal(5000))
    assert np.array_equal(a, b)


def test_circle_identical():
    rng = make_stream(2)
    th = rng.uniform(-np.pi, np.pi, 40)
    i, j = uniform_pairs(40, 5000, rng)
    (a, _), (b, _) = _run_both("circle_events", th, i, j, rng.normal(0, 0.5, 5000), rng.normal(0, 0.5, 5000))
    assert np.array_equal(a, b)
    assert np.all((a >= -np.pi) & (a < np.pi))


@pytest.mark.parametrize("code,params,gmax,cos_min", [
    (0, [1.0, 0.0], 1.0, -1.0),
    (1, [1.0, 2.0], 2.0, -1.0),
    (2, [3.0, 1.0], 3.0, 0.3),
])
def test_boltzmann_identical(code, params, gmax, cos_min):
    rng = make_stream(3)
    v = np.ascontiguousarray(rng.standard_normal((30, 3)))
    n = 4000
    i, j = uniform_pairs(30, n, rng)
    u = rng.random(n)
    sig = unit_vectors3(n, rng)
    outs = []
    for b in BACKENDS:
        s = v.copy()
        acc = np.zeros(n, dtype=np.int8)
        st = b.boltzmann_events(s, i, j, u, sig, code, np.array(params), gmax, cos_min, acc)
        outs.append((s, acc, st))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert np.array_equal(outs[0][1], outs[1][1])
    assert outs[0][2] == outs[1][2] == -1


def test_boltzmann_violation_index_agrees():
    v = np.array([[0.0, 0, 0], [5.0, 0, 0], [0, 0, 0.1]])
    i = np.array([2, 0], dtype=np.int64)
    j = np.array([0, 1], dtype=np.int64)
    sig = np.array([[1.0, 0, 0], [1.0, 0, 0]])
    for b in BACKENDS:
        acc = np.zeros(2, dtype=np.int8)
        # γ = min(r, 10) with declared bound 1: the second candidate (r = 5) violates it
        assert b.boltzmann_events(v.copy(), i, j, np.array([0.5, 0.5]), sig, 1, np.array([1.0, 10.0]), 1.0, -1.0, acc) == 1


def test_backend_selection_reported():
    assert _kernels.BACKEND in ("cython", "python")
