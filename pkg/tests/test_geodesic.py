import csv
import math

import numpy as np
import pytest

from lpplab.env import EnvBatch, EnvHandle, uniforms, weight_at
from lpplab.errors import NoStabilization, OrderViolation, OutOfSpan
from lpplab.fractal import gamma0, zero_heights
from lpplab.fractal import ols
from lpplab.geodesic import (GeodesicPath, GeodesicTree, crossing, geodesic, path_weight, row_entries,
                             semi_infinite, write_path_csv, zero_set)
from lpplab.lpp import passage_time
from oracles import brute_geodesic

ENV = EnvHandle(99, 0)


def _is_up_right(v):
    steps = np.diff(v, axis=0)
    return bool(np.all((steps == [1, 0]).all(axis=1) | (steps == [0, 1]).all(axis=1)))


def test_single_vertex_geodesic():
    g = geodesic(ENV, (2, 3), (2, 3))
    assert g.vertices.tolist() == [[2, 3]]
    assert g.weight == weight_at(ENV, (2, 3))


def test_order_violation():
    with pytest.raises(OrderViolation):
        geodesic(ENV, (1, 0), (0, 5))


@pytest.mark.parametrize("r", range(10))
def test_small_windows_match_enumeration(r):
    env = EnvBatch(5)[r]
    u = uniforms(env, "g", 0, 2)
    q = (int(u[0] * 5), int(u[1] * 5))
    best = brute_geodesic(env, (0, 0), q)
    assert best is not None
    assert [tuple(v) for v in geodesic(env, (0, 0), q).vertices.tolist()] == best


def test_weight_and_shape():
    g = geodesic(ENV, (-4, 2), (30, 41))
    assert _is_up_right(g.vertices)
    assert g.start == (-4, 2) and g.end == (30, 41)
    assert g.weight == passage_time(ENV, (-4, 2), (30, 41))
    assert path_weight(ENV, g.vertices) == g.weight


def test_subpath_property():
    g = geodesic(ENV, (0, 0), (40, 40))
    rng = np.random.default_rng(3)
    for _ in range(10):
        i, j = sorted(rng.choice(len(g), 2, replace=False))
        a, b = tuple(g.vertices[i]), tuple(g.vertices[j])
        assert np.array_equal(geodesic(ENV, a, b).vertices, g.vertices[i:j + 1])


def test_tree_paths_are_geodesics():
    tree = GeodesicTree(ENV, (0, 0), (10, 10), (60, 60))
    for p in [(0, 0), (3, 7), (10, 2)]:
        v = tree.path(p)
        full = geodesic(ENV, p, (60, 60)).vertices
        inside = (full[:, 0] <= 10) & (full[:, 1] <= 10)
        assert np.array_equal(v, full[inside])


def test_semi_infinite_is_stable_under_further_doubling():
    H = 32
    a = semi_infinite(ENV, (0, 0), H, 4096)
    assert a.stabilized
    far = geodesic(ENV, (0, 0), (4 * a.target_used, 4 * a.target_used)).vertices
    k = len(a.prefix)
    assert np.array_equal(far[:k], a.prefix.vertices)
    assert int(a.prefix.vertices[-1].sum()) == 2 * H


def test_semi_infinite_prefix_is_geodesic_between_its_points():
    a = semi_infinite(ENV, (0, 0), 40, 4096).prefix
    i, j = 5, len(a) - 3
    sub = geodesic(ENV, tuple(a.vertices[i]), tuple(a.vertices[j]))
    assert np.array_equal(sub.vertices, a.vertices[i:j + 1])


def test_semi_infinite_budget_censors():
    with pytest.raises(NoStabilization) as info:
        semi_infinite(ENV, (0, 0), 64, 100)
    assert info.value.n_last <= 256


def test_semi_infinite_containment_rate():
    # transversal deviation on L_k is x - k = (x - y) / 2
    H = 256
    b = EnvBatch(3)
    inside = 0
    for r in range(200):
        v = semi_infinite(b[r], (0, 0), H, 64 * H).prefix.vertices
        inside += np.abs(v[:, 0] - v[:, 1]).max() / 2 <= 3 * H ** (2 / 3)
    assert inside / 200 >= 0.95


def test_common_prefix_is_initial_segment():
    p = (0, 0)
    a = geodesic(ENV, p, (60, 60)).vertices
    b = geodesic(ENV, p, (120, 120)).vertices
    shared = [i for i in range(min(len(a), len(b))) if (a[i] == b[i]).all()]
    assert shared == list(range(len(shared)))


def test_geodesic_ordering_overlap_is_interval():
    b = EnvBatch(12)
    for r in range(20):
        env = b[r]
        g1 = geodesic(env, (0, 0), (40, 60)).vertices
        g2 = geodesic(env, (5, 0), (45, 60)).vertices
        s1 = {tuple(v) for v in g1}
        heights = sorted({int(y) for x, y in g2 if (x, y) in s1})
        if heights:
            assert heights == list(range(heights[0], heights[-1] + 1))


def test_crossing_examples():
    path = GeodesicPath(np.array([[0, 0], [0, 1], [1, 1]]), 0.0)
    assert crossing(path, 1) == 1
    assert crossing(path, 0, line="row") == 0
    with pytest.raises(OutOfSpan):
        crossing(path, 5)
    with pytest.raises(OutOfSpan):
        crossing(path, 3, line="row")


def test_crossing_matches_scan():
    b = EnvBatch(21)
    for r in range(100):
        env = b[r]
        q = (int(uniforms(env, "c", 0, 1)[0] * 20) + 2, 15)
        g = geodesic(env, (0, 0), q)
        v = g.vertices
        for k in range(0, (q[0] + q[1]) // 2 + 1):
            scan = [int(x) for x, y in v if x + y == 2 * k]
            assert crossing(g, k) == scan[0]
        for k in range(0, q[1] + 1):
            assert crossing(g, k, line="row") == min(int(x) for x, y in v if y == k)


def test_row_entries():
    path = GeodesicPath(np.array([[0, 0], [1, 0], [1, 1], [1, 2], [2, 2]]), 0.0)
    rows, xs = row_entries(path)
    assert rows.tolist() == [0, 1, 2] and xs.tolist() == [0, 1, 1]


def test_zero_set_basic():
    g = gamma0(ENV, 200)
    z = zero_set(g)
    assert z[0] == 0
    assert np.all(np.diff(z) > 0)
    assert z[-1] <= g.vertices[-1, 1]
    assert set(zero_set(g, 3)) >= set(z)


def test_zero_count_growth():
    b = EnvBatch(3)
    ns = [2**k for k in range(7, 12)]
    mean = [np.mean([len(zero_heights(gamma0(b[r], n), n)) for r in range(100)]) for n in ns]
    slope = ols(np.log(ns), np.log(mean))[0]
    assert 0.22 <= slope <= 0.45


def test_crossing_window_probability_grows_roughly_linearly():
    b = EnvBatch(8)
    n = 256
    dev = np.array([crossing(gamma0(b[r], 2 * n), n) - n for r in range(300)])
    a = np.array([0.25, 0.5, 1.0])
    p = np.array([np.mean(np.abs(dev) <= ai * n ** (2 / 3) / 2) for ai in a])
    assert np.all(np.diff(p) > 0)
    assert 1.3 <= p[1] / p[0] <= 2.7 and 1.3 <= p[2] / p[1] <= 2.7


def test_path_csv(tmp_path):
    g = geodesic(ENV, (0, 0), (2, 1))
    f = tmp_path / "g.csv"
    write_path_csv(g, f)
    rows = list(csv.reader(open(f)))
    assert rows[0] == ["x", "y"] and len(rows) == len(g) + 1
