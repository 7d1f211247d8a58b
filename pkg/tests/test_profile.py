import math

import numpy as np
import pytest

from lpplab.env import EnvBatch, EnvHandle, weight_at
from lpplab.lpp import passage_time, space_scale, weight_scale
from lpplab.profile import (DifferenceGrid, MaskBuilder, box_edges, column_grid, difference_grid,
                            level_columns, level_curve, level_occupation, nonconstant_mask_2d, read_grid,
                            row_violations, source_offset, temporal_nonconstant_mask, write_grid,
                            write_mask_csv, zeta_by_levels, zeta_mass)
from oracles import brute_passage

ENV = EnvHandle(77, 0)


@pytest.fixture(scope="module")
def grid():
    return difference_grid(ENV, 256, 1.0, 2.0, 1.0)


def test_sources_and_scaling(grid):
    s0 = math.ceil(space_scale(256))
    assert source_offset(256) == s0
    assert grid.a == (-s0, 0) and grid.b == (s0, 0)
    assert grid.row_lo == 256 and grid.row_hi == 512
    y, rel = 300, 5
    ta = passage_time(ENV, grid.a, (y + rel, y))
    tb = passage_time(ENV, grid.b, (y + rel, y))
    expected = weight_scale(256) * (ta - tb - 4 * s0 - weight_at(ENV, grid.a) + weight_at(ENV, grid.b))
    got = grid.values[grid.row_index(y), grid.col_index(rel)]
    assert got == pytest.approx(expected, abs=1e-12)
    assert grid.raw[grid.row_index(y), grid.col_index(rel)] == ta - tb


def test_degenerate_sources_give_zero():
    g = difference_grid(ENV, 64, 1.0, 2.0, 0.5, sources=((-3, 0), (-3, 0)))
    assert np.all(g.raw == 0)


def test_rows_non_increasing_exactly(grid):
    assert row_violations(grid) == 0
    assert np.all(np.diff(grid.raw, axis=1) <= 0)


def test_rows_non_increasing_large_n():
    g = difference_grid(EnvHandle(78, 0), 4096, 1.0, 1.05, 0.5)
    assert row_violations(g) == 0


def test_window_matches_enumeration():
    a, b = (-2, 0), (1, 0)
    g = difference_grid(ENV, 1, 1.0, 4.0, 1.5 / space_scale(1), sources=(a, b))
    checked = 0
    for i in range(g.rows):
        y = g.row_lo + i
        for j in range(g.cols):
            x = y + g.rel_lo + j
            ta, tb = brute_passage(ENV, a, (x, y)), brute_passage(ENV, b, (x, y))
            if math.isinf(tb):
                continue
            assert g.raw[i, j] == ta - tb
            checked += 1
    assert checked >= 10


def test_bad_window():
    with pytest.raises(ValueError):
        difference_grid(ENV, 64, 1.0, 1.0, 0.5)


def test_level_curve_extremes(grid):
    top = level_curve(grid, np.nanmax(grid.values) + 1)
    assert np.all(top.columns == 0)
    bottom = level_curve(grid, np.nanmin(grid.values) - 1)
    assert not bottom.present.any() and np.isnan(bottom.positions).all()


def test_level_curve_at_probed_value(grid):
    i, j = 40, 100
    c = level_curve(grid, grid.values[i, j])
    assert 0 <= c.columns[i] <= j


def test_level_curve_matches_scan(grid):
    rng = np.random.default_rng(0)
    v = grid.values
    for _ in range(100):
        i = rng.integers(grid.rows)
        lev = rng.uniform(np.nanmin(v[i]) - 0.1, np.nanmax(v[i]) + 0.1)
        c = level_curve(grid, lev)
        hits = np.flatnonzero(v[i] <= lev)
        assert c.columns[i] == (hits[0] if hits.size else -1)


def test_level_curves_ordered(grid):
    lv = np.linspace(np.nanmin(grid.values), np.nanmax(grid.values), 50)
    cols = level_columns(grid, lv)
    present = cols >= 0
    for k in range(len(lv) - 1):
        both = present[k] & present[k + 1]
        assert np.all(cols[k][both] >= cols[k + 1][both])
        assert np.all(present[k + 1] | ~present[k])
    assert np.array_equal(level_columns(grid, [0.3])[0], level_curve(grid, 0.3).columns)


def _maxmin_mask(values, re, ce, tau):
    flags = np.zeros((len(re) - 1, max(len(ce) - 1, 1)), dtype=bool)
    for i in range(len(re) - 1):
        for j in range(max(len(ce) - 1, 1)):
            c0, c1 = (ce[j], ce[j + 1]) if len(ce) > 1 else (0, 0)
            block = values[re[i]:re[i + 1] + 1, c0:c1 + 1]
            flags[i, j] = np.nanmax(block) - np.nanmin(block) > tau
    return flags


def test_mask_agrees_with_max_minus_min(grid):
    mb = MaskBuilder(grid, 1e-7)
    for delta in (0.25, 0.125, 0.0625):
        m = mb.mask(delta)
        assert np.array_equal(m.flags, _maxmin_mask(grid.values, m.row_edges, m.col_edges, 1e-7))


def test_constant_grid_has_empty_mask():
    g = DifferenceGrid(256, (-1, 0), (1, 0), 256, -80, np.zeros((257, 161)), 0.0, 1.0)
    assert nonconstant_mask_2d(g, 0.125).count == 0
    assert temporal_nonconstant_mask(g, 0.125).count == 0


def test_box_shape(grid):
    m = nonconstant_mask_2d(grid, 0.125)
    widths = np.diff(m.row_edges)
    assert set(widths[:-1].tolist()) <= {math.floor(256 * 0.125)}
    assert len(m.row_edges) - 1 == math.ceil((grid.rows - 1) / (256 * 0.125))
    assert len(m.col_edges) - 1 == math.ceil((grid.cols - 1) / (space_scale(256) * 0.125))


def test_box_edges_nest():
    for extent, w in ((1000, 37.4), (513, 16.0)):
        coarse = set(box_edges(extent, w).tolist())
        fine = set(box_edges(extent, w / 2).tolist())
        assert coarse <= fine


def test_refinement_monotone(grid):
    mb = MaskBuilder(grid)
    for d in (0.25, 0.125):
        parent, child = mb.mask(d), mb.mask(d / 2)
        for i, j in zip(*np.nonzero(parent.flags)):
            ri = (child.row_edges[:-1] >= parent.row_edges[i]) & (child.row_edges[1:] <= parent.row_edges[i + 1])
            cj = (child.col_edges[:-1] >= parent.col_edges[j]) & (child.col_edges[1:] <= parent.col_edges[j + 1])
            assert child.flags[np.ix_(ri, cj)].any()


def test_temporal_implies_2d(grid):
    for d in (0.25, 0.125, 0.0625):
        t = temporal_nonconstant_mask(grid, d)
        m = nonconstant_mask_2d(grid, d)
        j0 = grid.col_index(0)
        j = np.searchsorted(m.col_edges, j0, side="right") - 1
        cols = [j] if m.col_edges[j] != j0 or j == 0 else [j - 1, j]
        assert np.array_equal(t.row_edges, m.row_edges)
        for i in np.flatnonzero(t.flags[:, 0]):
            assert m.flags[i, cols].any()


def test_column_grid(grid):
    c = column_grid(grid, 0)
    assert c.cols == 1 and np.array_equal(c.raw[:, 0], grid.raw[:, grid.col_index(0)])
    with pytest.raises(ValueError):
        column_grid(grid, 10**6)


def test_eventually_constant_trend():
    b = EnvBatch(4)
    frac = []
    for h in (2.0, 8.0, 32.0):
        c = 0
        for r in range(200):
            col = difference_grid(b[r], 64, 1.0, h, 0.0).raw[:, 0]
            q = len(col) * 3 // 4
            c += np.all(col[q:] == col[q])
        frac.append(c / 200)
    assert frac[0] < frac[1] < frac[2]


def test_zeta_basic(grid):
    assert zeta_mass(grid, 0.3, 0.3, 1.0, 2.0) == 0.0
    assert zeta_mass(grid, -0.5, 0.5, 1.0, 2.0) >= 0
    whole = zeta_mass(grid, -0.5, 0.5, 1.0, 2.0)
    parts = zeta_mass(grid, -0.5, 0.5, 1.0, 1.37) + zeta_mass(grid, -0.5, 0.5, 1.37, 2.0)
    assert parts == pytest.approx(whole, rel=1e-12, abs=0)
    with pytest.raises(ValueError):
        zeta_mass(grid, 0.5, -0.5, 1.0, 2.0)


def test_zeta_matches_row_sum(grid):
    n = grid.n
    ja, jb = grid.col_index(grid.col_of(-0.5)), grid.col_index(grid.col_of(0.5))
    rows = [y for y in range(grid.row_lo, grid.row_hi + 1) if 1.0 < y / n <= 2.0]
    direct = sum(grid.values[grid.row_index(y), ja] - grid.values[grid.row_index(y), jb] for y in rows) / n
    assert zeta_mass(grid, -0.5, 0.5, 1.0, 2.0) == pytest.approx(direct, rel=1e-9)


def test_level_occupation(grid):
    lev = float(np.nanmedian(grid.values))
    c = level_curve(grid, lev)
    g, h = 1.0, 2.0
    whole = level_occupation(c, (-10.0, 10.0), g, h)
    rows = sum(1 for y in range(grid.row_lo, grid.row_hi + 1) if g < y / grid.n <= h)
    if c.present.all():
        assert whole == pytest.approx(rows / grid.n)
    a = level_occupation(c, (-10.0, 0.1), g, h)
    b = level_occupation(c, (0.1, 10.0), g, h)
    assert a + b == pytest.approx(whole)
    assert 0 <= whole <= h - g


def test_zeta_decomposition(grid):
    lv = np.linspace(np.nanmin(grid.values), np.nanmax(grid.values), 4000)
    for a, b, g, h in ((-0.5, 0.5, 1.0, 2.0), (-0.2, 0.6, 1.2, 1.7), (0.0, 0.3, 1.5, 1.9)):
        direct = zeta_mass(grid, a, b, g, h)
        assert zeta_by_levels(grid, a, b, g, h, lv) == pytest.approx(direct, rel=0.02)


def test_mean_zeta_small_scale():
    b = EnvBatch(11)
    z = [zeta_mass(difference_grid(b[r], 500, 1.0, 2.0, 0.55), -0.5, 0.5, 1.0, 2.0) for r in range(60)]
    assert abs(np.mean(z) / (4 * math.log(2)) - 1) < 0.2


def test_grid_round_trip(tmp_path, grid):
    write_grid(grid, tmp_path / "g")
    back = read_grid(tmp_path / "g")
    assert back.rows == grid.rows and back.rel_lo == grid.rel_lo
    assert np.allclose(back.values, grid.values, equal_nan=True)


def test_mask_csv(tmp_path, grid):
    m = nonconstant_mask_2d(grid, 0.25)
    f = tmp_path / "m.csv"
    write_mask_csv(m, f)
    lines = open(f).read().splitlines()
    assert lines[0] == "box_i,box_j,flag" and len(lines) == 1 + m.flags.size
