import graphlib

import numpy as np
import pytest

from ivimfit.globopt import (
    DeConfig,
    ObjectiveHandle,
    build_complex,
    de_minimize,
    extract_pool,
    sample_unit_box,
    shgo_minimize,
    sobol_points,
)
from ivimfit.model import IvimParams, evaluate_signal
from ivimfit.varpro import ReducedObjective


def sphere(x):
    return float((x[0] - 0.3) ** 2 + (x[1] - 0.6) ** 2)


def himmelblau(x):
    return float((x[0] ** 2 + x[1] - 11) ** 2 + (x[0] + x[1] ** 2 - 7) ** 2)


HIMMELBLAU_BOX = ([-5.0, -5.0], [5.0, 5.0])


@pytest.fixture(scope="module")
def himmelblau_grid_minima():
    """Strict local minima of a dense 1000x1000 grid scan."""
    g = np.linspace(-5, 5, 1000)
    x, y = np.meshgrid(g, g, indexing="ij")
    v = (x**2 + y - 11) ** 2 + (x + y**2 - 7) ** 2
    inner = v[1:-1, 1:-1]
    is_min = np.ones_like(inner, dtype=bool)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx or dy:
                is_min &= inner < v[1 + dx : v.shape[0] - 1 + dx, 1 + dy : v.shape[1] - 1 + dy]
    i, j = np.nonzero(is_min)
    return np.column_stack([g[i + 1], g[j + 1]])


def test_grid_scan_finds_four_minima(himmelblau_grid_minima):
    assert len(himmelblau_grid_minima) == 4


def _brute_sinks(points, values, simplices):
    nb = {i: set() for i in range(len(points))}
    for s in simplices:
        for a in s:
            nb[a].update(int(b) for b in s if b != a)
    sinks = []
    for i in range(len(points)):
        key_i = (values[i], tuple(points[i]))
        if all(key_i < (values[j], tuple(points[j])) for j in nb[i]):
            sinks.append(i)
    return sinks


def test_pool_convex_quadratic_grid():
    g = np.linspace(0, 1, 9)
    pts = np.array([[a, b] for a in g for b in g])
    vals = np.array([sphere(p) for p in pts])
    pool = extract_pool(build_complex(pts, vals))
    nearest = np.argmin(np.linalg.norm(pts - [0.3, 0.6], axis=1))
    assert list(pool) == [nearest]


def test_pool_constant_objective():
    pts = sample_unit_box(40)
    pool = extract_pool(build_complex(pts, np.zeros(len(pts))))
    assert len(pool) == 1
    smallest = min(range(len(pts)), key=lambda i: tuple(pts[i]))
    assert pool[0] == smallest


def two_well(x):
    return float(
        -np.exp(-np.sum((x - [0.25, 0.3]) ** 2) / 0.01) - 0.8 * np.exp(-np.sum((x - [0.75, 0.7]) ** 2) / 0.01)
    )


def test_pool_two_wells():
    pts = sobol_points(2, 64)
    vals = np.array([two_well(p) for p in pts])
    cx = build_complex(pts, vals)
    pool = extract_pool(cx)
    assert sorted(pool) == sorted(_brute_sinks(pts, vals, cx.simplices))
    assert len(pool) >= 2
    for well in ([0.25, 0.3], [0.75, 0.7]):
        assert np.min(np.linalg.norm(pts[pool] - well, axis=1)) < 0.15


@pytest.mark.parametrize("seed", range(10))
def test_directed_graph_is_acyclic(seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((60, 2))
    vals = np.round(rng.random(60), 1)  # many ties
    cx = build_complex(pts, vals)
    ts = graphlib.TopologicalSorter()
    for u, v in cx.edges:
        ts.add(int(v), int(u))
    list(ts.static_order())  # raises CycleError on a cycle
    undirected = {tuple(sorted(e)) for e in cx.edges}
    assert len(undirected) == len(cx.edges)
    for s in cx.simplices:
        for a, b in ((s[0], s[1]), (s[1], s[2]), (s[0], s[2])):
            assert tuple(sorted((a, b))) in undirected


def test_collinear_samples_fall_back_to_chain():
    pts = np.column_stack([np.linspace(0, 1, 7), np.zeros(7)])
    vals = np.array([3.0, 2, 1, 2, 0, 1, 2])
    cx = build_complex(pts, vals)
    assert len(cx.simplices) == 0
    assert sorted(extract_pool(cx)) == [2, 4]


def test_shgo_sphere():
    res = shgo_minimize(sphere, [0, 0], [1, 1])
    assert res.fun < 1e-10
    assert res.pool_size == 1


def test_shgo_finds_all_himmelblau_minima(himmelblau_grid_minima):
    res = shgo_minimize(himmelblau, *HIMMELBLAU_BOX)
    found = np.array([x for x, f in res.local_minima if f < 1e-8])
    for m in himmelblau_grid_minima:
        assert np.min(np.max(np.abs(found - m), axis=1)) < 0.01


def test_de_lands_on_a_himmelblau_minimum(himmelblau_grid_minima):
    for seed in range(5):
        res = de_minimize(himmelblau, *HIMMELBLAU_BOX, DeConfig(seed=seed))
        assert res.fun < 1e-10
        assert np.min(np.max(np.abs(himmelblau_grid_minima - res.x), axis=1)) < 0.01


def test_de_sphere():
    assert de_minimize(sphere, [0, 0], [1, 1]).fun < 1e-10


def test_de_deterministic():
    a = de_minimize(himmelblau, *HIMMELBLAU_BOX, DeConfig(seed=3, max_generations=30))
    b = de_minimize(himmelblau, *HIMMELBLAU_BOX, DeConfig(seed=3, max_generations=30))
    assert np.array_equal(a.x, b.x) and a.trace == b.trace and a.nfev == b.nfev


def test_shgo_deterministic_and_iterations_reuse_samples():
    a = shgo_minimize(himmelblau, *HIMMELBLAU_BOX, n_samples=32, iterations=3)
    b = shgo_minimize(himmelblau, *HIMMELBLAU_BOX, n_samples=32, iterations=3)
    assert np.array_equal(a.x, b.x) and a.nfev == b.nfev
    assert a.nit == 3


@pytest.mark.parametrize("method", ["shgo", "de"])
def test_evaluation_count_is_exact(method):
    calls = []

    def instrumented(x):
        calls.append(1)
        return himmelblau(x)

    handle = ObjectiveHandle(instrumented)
    if method == "shgo":
        res = shgo_minimize(handle, *HIMMELBLAU_BOX, iterations=2)
    else:
        res = de_minimize(handle, *HIMMELBLAU_BOX, DeConfig(max_generations=20))
    assert handle.count == len(calls) == res.nfev


def _random_objective(rng):
    centers = rng.random((3, 2))
    depth = rng.uniform(0.2, 1.0, 3)

    def f(x):
        return float(-np.sum(depth * np.exp(-np.sum((x - centers) ** 2, axis=1) / 0.02)) + 0.1 * x @ x)

    return f


def test_traces_monotone_and_points_in_bounds():
    rng = np.random.default_rng(11)
    for seed in range(100):
        f = _random_objective(rng)
        lo = rng.uniform(-1, 0, 2)
        hi = lo + rng.uniform(0.5, 2, 2)
        wrapped = lambda x, f=f, lo=lo, hi=hi: f((x - lo) / (hi - lo))
        for res in (
            shgo_minimize(wrapped, lo, hi, n_samples=16),
            de_minimize(wrapped, lo, hi, DeConfig(seed=seed, popsize=8, max_generations=15)),
        ):
            assert np.all(np.diff(res.trace) <= 0)
            assert res.fun <= min(res.trace)
            assert np.all(res.x >= lo) and np.all(res.x <= hi)


def test_reduced_objective_recovery(scheme, bounds):
    truth = IvimParams(1.0, 0.235, 0.0146, 0.00087)
    y = evaluate_signal(truth, scheme).signal
    lo, hi = bounds.nonlinear
    sh = shgo_minimize(ReducedObjective(y, scheme.bvalues), lo, hi)
    np.testing.assert_allclose(sh.x, [truth.d, truth.d_star], rtol=1e-5)
    de = de_minimize(ReducedObjective(y, scheme.bvalues), lo, hi)
    np.testing.assert_allclose(de.x, sh.x, rtol=1e-4)


def test_de_config_validation():
    with pytest.raises(ValueError):
        DeConfig(popsize=4)
    with pytest.raises(ValueError):
        DeConfig(crossover=0.0)
    with pytest.raises(ValueError):
        DeConfig(mutation=(0.5, 2.5))
