"""Difference profile of two sources, its level curves, non-constant sets and measures.

Sources sit at ``a = (-s0, 0)`` and ``b = (s0, 0)`` with
``s0 = ceil(2^{5/3} n^{2/3})``, i.e. at scaled positions -1 and +1.  Grids are
stored in sheared coordinates: entry ``[i, j]`` is the lattice point
``(y + rel, y)`` with ``y = row_lo + i`` and ``rel = rel_lo + j``, whose
scaled position is ``(rel / 2^{5/3} n^{2/3}, y / n)``.

Raw differences ``T_a - T_b`` are exact (dyadic weights), so row monotonicity
and local constancy are exact facts about the stored array.  Scaled values are
``2^{-4/3} n^{-1/3} (T_a - T_b - 4 s0 - w_a + w_b)``, the difference of the two
centred passage times.

Box masks use closed boxes whose edges are ``floor(k * w)`` for box size ``w``
cells, so the boxes at scale ``delta/2`` refine those at ``delta`` exactly.
A box is non-constant when it contains two adjacent cells whose values differ
by more than ``tau``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .env import EnvHandle, weight_at
from .lpp import point_init, space_scale, sweep_pair, weight_scale

DEFAULT_TAU = 1e-7


@dataclass
class DifferenceGrid:
    n: int
    a: tuple[int, int]
    b: tuple[int, int]
    row_lo: int
    rel_lo: int
    raw: np.ndarray  # exact T_a - T_b, shape (rows, cols)
    offset: float  # -4 s0 - w_a + w_b
    scale: float

    @property
    def rows(self) -> int:
        return self.raw.shape[0]

    @property
    def cols(self) -> int:
        return self.raw.shape[1]

    @property
    def row_hi(self) -> int:
        return self.row_lo + self.rows - 1

    @property
    def rel_hi(self) -> int:
        return self.rel_lo + self.cols - 1

    @property
    def values(self) -> np.ndarray:
        return self.scale * (self.raw + self.offset)

    def row_index(self, y: int) -> int:
        return int(y) - self.row_lo

    def col_index(self, rel: int) -> int:
        return int(rel) - self.rel_lo

    def col_of(self, x_scaled: float) -> int:
        """Sheared column ``floor(x * 2^{5/3} n^{2/3})`` of a scaled position."""
        return int(math.floor(x_scaled * space_scale(self.n)))

    def time_of(self, y) -> np.ndarray:
        return np.asarray(y) / self.n


def source_offset(n: int) -> int:
    return int(math.ceil(space_scale(n)))


def _sheared_pair(env: EnvHandle, a, b, row_lo: int, row_hi: int, J: int, budget):
    """``T_a`` and ``T_b`` on the sheared window from one shared sweep."""
    x0, y0 = a[0], a[1]
    width = row_hi + J - x0 + 1
    nrows = row_hi - y0 + 1
    init_a, init_b = point_init(width, 0), point_init(width, b[0] - a[0])
    _, _, ta, tb = sweep_pair(env, x0, y0, width, nrows, init_a, init_b,
                              record=(row_lo, row_hi - row_lo + 1, -J, 1, 2 * J + 1),
                              budget=budget)
    return ta, tb


def difference_grid(env: EnvHandle, n: int, t_lo: float, t_hi: float, x_halfwidth: float, *,
                    sources=None, budget: int | None = None) -> DifferenceGrid:
    """``D`` on rows ``ceil(n t_lo) .. ceil(n t_hi)`` and scaled ``|x| <= x_halfwidth``.

    ``sources`` overrides the default pair ``(-s0, 0), (s0, 0)``.
    """
    if not 0 < t_lo < t_hi:
        raise ValueError("need 0 < t_lo < t_hi")
    if sources is None:
        s0 = source_offset(n)
        a, b = (-s0, 0), (s0, 0)
    else:
        a, b = (tuple(int(v) for v in sources[0]), tuple(int(v) for v in sources[1]))
        if a[1] != b[1] or a[0] > b[0]:
            raise ValueError("sources must share a row with a left of b")
    row_lo, row_hi = int(math.ceil(n * t_lo)), int(math.ceil(n * t_hi))
    J = int(math.floor(x_halfwidth * space_scale(n)))
    if row_lo <= a[1]:
        raise ValueError("window must lie above the sources")
    ta, tb = _sheared_pair(env, a, b, row_lo, row_hi, J, budget)
    with np.errstate(invalid="ignore"):
        raw = ta - tb
    offset = -2.0 * (b[0] - a[0]) - weight_at(env, a) + weight_at(env, b)
    return DifferenceGrid(n, a, b, row_lo, -J, raw, offset, weight_scale(n))


def row_violations(grid: DifferenceGrid) -> int:
    """Number of adjacent pairs in a row where the profile increases (exact)."""
    r = grid.raw
    with np.errstate(invalid="ignore"):
        return int(np.count_nonzero(r[:, 1:] > r[:, :-1]))


# ------------------------------------------------------------- level curves


@dataclass
class LevelCurve:
    level: float
    row_lo: int
    n: int
    columns: np.ndarray  # sheared column index per row, -1 when absent
    rel_lo: int

    @property
    def positions(self) -> np.ndarray:
        """Scaled positions per row; NaN when the level is never reached."""
        rel = (self.columns + self.rel_lo).astype(float)
        rel[self.columns < 0] = np.nan
        return rel / space_scale(self.n)

    @property
    def present(self) -> np.ndarray:
        return self.columns >= 0


def level_curve(grid: DifferenceGrid, level: float) -> LevelCurve:
    """Leftmost cell of each row with ``D <= level`` (rows are non-increasing)."""
    vals = grid.values
    neg = -vals
    cols = np.empty(grid.rows, dtype=np.int64)
    for i in range(grid.rows):
        j = int(np.searchsorted(neg[i], -level, side="left"))
        cols[i] = j if j < grid.cols else -1
    return LevelCurve(float(level), grid.row_lo, grid.n, cols, grid.rel_lo)


# ------------------------------------------------------------------ masks


@dataclass
class BoxMask:
    delta: float
    row_edges: np.ndarray  # box i covers rows row_edges[i] .. row_edges[i+1] (closed)
    col_edges: np.ndarray
    flags: np.ndarray  # (boxes_r, boxes_c) bool

    @property
    def count(self) -> int:
        return int(self.flags.sum())


def box_edges(extent: int, width: float) -> np.ndarray:
    """Edges ``floor(k * width)`` for a closed partition of cells ``0 .. extent - 1``."""
    if width < 1:
        raise ValueError("box must span at least one cell")
    k = int(math.ceil((extent - 1) / width))
    edges = np.floor(np.arange(k + 1) * width).astype(np.int64)
    edges[-1] = extent - 1
    return np.unique(edges)


def _jumps(values: np.ndarray, axis: int, tau: float) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        d = np.abs(np.diff(values, axis=axis))
    return ~(d <= tau)  # NaN counts as a jump


def _prefix2(a: np.ndarray) -> np.ndarray:
    p = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(a, axis=0, dtype=np.int64), axis=1, out=p[1:, 1:])
    return p


def _box_sum(p, r0, r1, c0, c1):
    """Sum over ``[r0, r1) x [c0, c1)`` from a 2D prefix table (vectorised)."""
    return p[r1[:, None], c1[None, :]] - p[r0[:, None], c1[None, :]] - p[r1[:, None], c0[None, :]] + p[r0[:, None], c0[None, :]]


class MaskBuilder:
    """Jump tables of one grid, reused across scales."""

    def __init__(self, grid: DifferenceGrid, tau: float = DEFAULT_TAU):
        v = grid.values
        self.grid = grid
        self.tau = tau
        self.rows, self.cols = v.shape
        self._h = _prefix2(_jumps(v, 1, tau)) if self.cols > 1 else None
        self._v = _prefix2(_jumps(v, 0, tau)) if self.rows > 1 else None

    def mask(self, delta: float) -> BoxMask:
        n = self.grid.n
        rw, cw = n * delta, space_scale(n) * delta
        if rw < 2 or (self.cols > 1 and cw < 2):
            raise ValueError("delta must map to at least two cells per box side")
        re = box_edges(self.rows, rw)
        ce = box_edges(self.cols, cw) if self.cols > 1 else np.array([0, 0])
        r0, r1 = re[:-1], re[1:]
        c0, c1 = ce[:-1], ce[1:]
        total = np.zeros((len(r0), len(c0)), dtype=np.int64)
        if self._h is not None:
            # horizontal jumps between columns c and c+1 for c in [c0, c1)
            total += _box_sum(self._h, r0, r1 + 1, c0, c1)
        if self._v is not None:
            total += _box_sum(self._v, r0, r1, c0, c1 + 1)
        return BoxMask(delta, re, ce, total > 0)


def nonconstant_mask_2d(grid: DifferenceGrid, delta: float, tau: float = DEFAULT_TAU) -> BoxMask:
    """Boxes of ``n delta`` rows by ``2^{5/3} n^{2/3} delta`` columns on which
    ``D`` is not constant (up to ``tau``)."""
    return MaskBuilder(grid, tau).mask(delta)


def column_grid(grid: DifferenceGrid, rel: int = 0) -> DifferenceGrid:
    """One-column grid holding ``D(rel, .)``."""
    j = grid.col_index(rel)
    if not 0 <= j < grid.cols:
        raise ValueError("column outside the grid")
    return DifferenceGrid(grid.n, grid.a, grid.b, grid.row_lo, rel, grid.raw[:, j:j + 1].copy(),
                          grid.offset, grid.scale)


def temporal_nonconstant_mask(grid: DifferenceGrid, delta: float, tau: float = DEFAULT_TAU) -> BoxMask:
    """Time boxes of ``n delta`` rows on which ``D(0, .)`` is not constant."""
    return MaskBuilder(column_grid(grid, 0), tau).mask(delta)


def write_mask_csv(mask: BoxMask, filename) -> None:
    with open(filename, "w") as fh:
        fh.write("box_i,box_j,flag\n")
        for i in range(mask.flags.shape[0]):
            for j in range(mask.flags.shape[1]):
                fh.write(f"{i},{j},{int(mask.flags[i, j])}\n")


# ---------------------------------------------------------------- measures


def _row_span(grid: DifferenceGrid, g: float, h: float) -> tuple[int, int]:
    """Array rows of lattice rows ``y`` with ``g < y / n <= h``."""
    y0 = int(math.floor(g * grid.n)) + 1
    y1 = int(math.floor(h * grid.n))
    if y0 < grid.row_lo or y1 > grid.row_hi:
        raise ValueError("time interval outside the grid")
    return y0 - grid.row_lo, y1 - grid.row_lo + 1


def zeta_mass(grid: DifferenceGrid, a: float, b: float, g: float, h: float) -> float:
    """``(1/n) sum_{g < y/n <= h} D(a, y) - D(b, y)`` in scaled units."""
    if a > b:
        raise ValueError("need a <= b")
    ja, jb = grid.col_index(grid.col_of(a)), grid.col_index(grid.col_of(b))
    if not (0 <= ja < grid.cols and 0 <= jb < grid.cols):
        raise ValueError("spatial interval outside the grid")
    i0, i1 = _row_span(grid, g, h)
    # raw differences are exact dyadics, so this sum is exact
    total = float(np.sum(grid.raw[i0:i1, ja] - grid.raw[i0:i1, jb]))
    return grid.scale * total / grid.n


def level_occupation(curve: LevelCurve, A: tuple[float, float], g: float, h: float) -> float:
    """``(1/n) #{rows y : g < y/n <= h, level position in (A0, A1]}``."""
    y0 = int(math.floor(g * curve.n)) + 1
    y1 = int(math.floor(h * curve.n))
    i0, i1 = y0 - curve.row_lo, y1 - curve.row_lo + 1
    if i0 < 0 or i1 > len(curve.columns):
        raise ValueError("time interval outside the grid")
    rel = curve.columns[i0:i1] + curve.rel_lo
    ok = curve.columns[i0:i1] >= 0
    ss = space_scale(curve.n)
    lo, hi = math.floor(A[0] * ss), math.floor(A[1] * ss)
    inside = ok & (rel > lo) & (rel <= hi)
    return float(np.count_nonzero(inside)) / curve.n


def level_columns(grid: DifferenceGrid, levels, rows: slice | None = None) -> np.ndarray:
    """Level-curve columns for many levels at once, shape ``(levels, rows)``.

    Same rule as :func:`level_curve` (leftmost cell with ``D <= level``, -1 when
    absent), vectorised over levels.
    """
    levels = np.asarray(levels, dtype=float)
    vals = grid.values if rows is None else grid.values[rows]
    out = np.empty((levels.size, vals.shape[0]), dtype=np.int64)
    for i in range(vals.shape[0]):
        j = np.searchsorted(-vals[i], -levels, side="left")
        out[:, i] = np.where(j < vals.shape[1], j, -1)
    return out


def zeta_by_levels(grid: DifferenceGrid, a: float, b: float, g: float, h: float,
                   levels) -> float:
    """Trapezoid rule in ``l`` for ``int lambda_l((a, b] x (g, h]) dl``."""
    levels = np.asarray(levels, dtype=float)
    i0, i1 = _row_span(grid, g, h)
    cols = level_columns(grid, levels, slice(i0, i1))
    rel = cols + grid.rel_lo
    lo, hi = grid.col_of(a), grid.col_of(b)
    inside = (cols >= 0) & (rel > lo) & (rel <= hi)
    occ = inside.sum(axis=1) / grid.n
    return float(np.trapezoid(occ, levels))


# ------------------------------------------------------------------ export


def write_grid(grid: DifferenceGrid, stem) -> tuple[str, str]:
    """Row-major float64 dump of scaled values plus a JSON sidecar."""
    stem = str(stem)
    bin_path, json_path = stem + ".bin", stem + ".json"
    np.ascontiguousarray(grid.values, dtype="<f8").tofile(bin_path)
    meta = {
        "n": grid.n,
        "sources": [list(grid.a), list(grid.b)],
        "rows": [grid.row_lo, grid.row_hi],
        "rel_columns": [grid.rel_lo, grid.rel_hi],
        "shape": [grid.rows, grid.cols],
        "dtype": "float64-le",
        "space_scale": space_scale(grid.n),
        "weight_scale": grid.scale,
        "offset_raw": grid.offset,
    }
    with open(json_path, "w") as fh:
        json.dump(meta, fh, indent=2)
    return bin_path, json_path


def read_grid(stem) -> DifferenceGrid:
    stem = str(stem)
    with open(stem + ".json") as fh:
        meta = json.load(fh)
    vals = np.fromfile(stem + ".bin", dtype="<f8").reshape(meta["shape"])
    raw = vals / meta["weight_scale"] - meta["offset_raw"]
    return DifferenceGrid(meta["n"], tuple(meta["sources"][0]), tuple(meta["sources"][1]),
                          meta["rows"][0], meta["rel_columns"][0], raw, meta["offset_raw"],
                          meta["weight_scale"])
