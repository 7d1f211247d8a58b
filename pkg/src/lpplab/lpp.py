"""Last-passage dynamic programming.

Passage times are vertex weighted and include both endpoints:
``T(v) = w_v + max(T(v - (1, 0)), T(v - (0, 1)))``.  Sweeps run row by row
with O(width) memory; anti-diagonal targets are read off a rectangular sweep.
Because weights live on a 2**-32 grid (see :mod:`lpplab.env`) every value
returned here is an exact sum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from numba import njit

from .env import EnvHandle, nb_absorb, nb_coord, nb_weight, weight_at
from .errors import BudgetExceeded

DEFAULT_CELL_BUDGET = 2_000_000_000
NEG_INF = -np.inf

SPACE_SCALE_EXP = 5.0 / 3.0  # horizontal scale 2^{5/3} n^{2/3}
WEIGHT_SCALE_EXP = -4.0 / 3.0  # fluctuation prefactor 2^{-4/3} n^{-1/3}


@dataclass(frozen=True)
class Row:
    n: int
    kind = "row"

    def point(self, m: int) -> tuple[int, int]:
        return (m, self.n)


@dataclass(frozen=True)
class Antidiagonal:
    """The line ``{p : x + y = 2n}``; index ``m`` is the x coordinate."""

    n: int
    kind = "antidiagonal"

    def point(self, m: int) -> tuple[int, int]:
        return (m, 2 * self.n - m)


Line = Union[Row, Antidiagonal]


@dataclass
class PassageProfile:
    line: Line
    lo: int
    hi: int
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != self.hi - self.lo + 1:
            raise ValueError("values length must equal hi - lo + 1")

    def at(self, m: int) -> float:
        return float(self.values[m - self.lo])

    def points(self) -> list[tuple[int, int]]:
        return [self.line.point(m) for m in range(self.lo, self.hi + 1)]


@dataclass
class BoundaryData:
    line: Line
    lo: int
    hi: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.values) != self.hi - self.lo + 1:
            raise ValueError("values length must equal hi - lo + 1")
        if not np.isfinite(self.values).any():
            raise ValueError("boundary needs at least one finite source")

    def at(self, m: int) -> float:
        return float(self.values[m - self.lo])

    def shifted(self, c: float) -> "BoundaryData":
        return BoundaryData(self.line, self.lo, self.hi, self.values + c)

    def restricted(self, lo: int, hi: int) -> np.ndarray:
        """Values with every source outside ``[lo, hi]`` excluded (set to -inf)."""
        out = np.full_like(self.values, NEG_INF)
        a, b = max(lo, self.lo), min(hi, self.hi)
        if a <= b:
            out[a - self.lo : b - self.lo + 1] = self.values[a - self.lo : b - self.lo + 1]
        return out


def precedes(p, q) -> bool:
    return p[0] <= q[0] and p[1] <= q[1]


# ------------------------------------------------------------------ kernel


@njit(nogil=True, cache=True)
def _sweep_kernel(key, sign, x0, y0, width, nrows, init, inj_cols, inj_vals,
                  rec_y0, rec_base, rec_shear, rec_out, dir_x0, dir_y0, dirs):
    prev = init.copy()
    cur = np.empty(width)
    rec_rows = rec_out.shape[0]
    rec_w = rec_out.shape[1]
    dh = dirs.shape[0]
    dw = dirs.shape[1]
    has_inj = inj_cols.shape[0] > 0
    for r in range(nrows):
        y = y0 + r
        hy = nb_absorb(key, nb_coord(sign * y))
        if has_inj and inj_cols[r] >= 0:
            j = inj_cols[r]
            if inj_vals[r] > prev[j]:
                prev[j] = inj_vals[r]
        left = -np.inf
        dy = y - dir_y0
        if 0 <= dy < dh:
            jlo = dir_x0 - x0
            jhi = jlo + dw
            for j in range(width):
                w = nb_weight(hy, sign * (x0 + j))
                b = prev[j]
                if b >= left:
                    m = b
                    bit = 0
                else:
                    m = left
                    bit = 1
                left = w + m
                cur[j] = left
                if jlo <= j < jhi:
                    dirs[dy, j - jlo] = bit
        else:
            for j in range(width):
                w = nb_weight(hy, sign * (x0 + j))
                b = prev[j]
                m = b if b >= left else left
                left = w + m
                cur[j] = left
        ry = y - rec_y0
        if 0 <= ry < rec_rows:
            for k in range(rec_w):
                j = rec_base + rec_shear * y + k - x0
                if 0 <= j < width:
                    rec_out[ry, k] = cur[j]
        tmp = prev
        prev = cur
        cur = tmp
    return prev


_EMPTY_I = np.zeros(0, dtype=np.int64)
_EMPTY_F = np.zeros(0, dtype=np.float64)
_NO_DIRS = np.zeros((0, 0), dtype=np.uint8)
_NO_REC = np.zeros((0, 0), dtype=np.float64)


def check_budget(cells: int, budget: int | None) -> None:
    budget = DEFAULT_CELL_BUDGET if budget is None else budget
    if cells > budget:
        raise BudgetExceeded(cells, budget)


def sweep(env: EnvHandle, x0: int, y0: int, width: int, nrows: int, init: np.ndarray, *,
          sign: int = 1, inject=None, record=None, dirs_region=None, budget=None):
    """Run one DP sweep over columns ``x0..x0+width-1`` and rows ``y0..y0+nrows-1``.

    ``init`` holds the values of row ``y0 - 1`` (the boundary; -inf excludes a
    column).  With ``sign=-1`` the weight at ``(x, y)`` is read from ``(-x, -y)``,
    which turns the forward sweep into a backward one.  ``record`` is
    ``(rec_y0, rec_rows, rec_base, rec_shear, rec_width)`` and copies, for every
    row ``y`` in range, the columns ``rec_base + rec_shear*y + k``.
    ``dirs_region`` is ``(x0, y0, w, h)``; inside it a byte per cell is stored,
    1 if the optimal predecessor is the left neighbour, 0 if it is the one below
    (ties prefer below).

    Returns ``(last_row, recorded, dirs)``.
    """
    check_budget(width * nrows, budget)
    init = np.ascontiguousarray(init, dtype=np.float64)
    if init.shape[0] != width:
        raise ValueError("init must have one value per column")
    if inject is None:
        inj_cols, inj_vals = _EMPTY_I, _EMPTY_F
    else:
        inj_cols = np.ascontiguousarray(inject[0], dtype=np.int64)
        inj_vals = np.ascontiguousarray(inject[1], dtype=np.float64)
    if record is None:
        rec_y0 = rec_base = rec_shear = 0
        rec_out = _NO_REC
    else:
        rec_y0, rec_rows, rec_base, rec_shear, rec_width = record
        rec_out = np.full((rec_rows, rec_width), NEG_INF)
    if dirs_region is None:
        dx0 = dy0 = 0
        dirs = _NO_DIRS
    else:
        dx0, dy0, dw, dh = dirs_region
        dirs = np.zeros((dh, dw), dtype=np.uint8)
    last = _sweep_kernel(env.weight_key, sign, x0, y0, width, nrows, init, inj_cols, inj_vals,
                         rec_y0, rec_base, rec_shear, rec_out, dx0, dy0, dirs)
    return last, (rec_out if record is not None else None), (dirs if dirs_region is not None else None)


@njit(nogil=True, cache=True)
def _pair_kernel(key, x0, y0, width, nrows, init_a, init_b, rec_y0, rec_base, rec_shear, rec_a, rec_b):
    pa = init_a.copy()
    pb = init_b.copy()
    rec_rows = rec_a.shape[0]
    rec_w = rec_a.shape[1]
    for r in range(nrows):
        y = y0 + r
        hy = nb_absorb(key, nb_coord(y))
        la = -np.inf
        lb = -np.inf
        for j in range(width):
            w = nb_weight(hy, x0 + j)
            ba = pa[j]
            bb = pb[j]
            la = w + (ba if ba >= la else la)
            lb = w + (bb if bb >= lb else lb)
            pa[j] = la
            pb[j] = lb
        ry = y - rec_y0
        if 0 <= ry < rec_rows:
            for k in range(rec_w):
                j = rec_base + rec_shear * y + k - x0
                if 0 <= j < width:
                    rec_a[ry, k] = pa[j]
                    rec_b[ry, k] = pb[j]
    return pa, pb


def sweep_pair(env: EnvHandle, x0: int, y0: int, width: int, nrows: int, init_a, init_b, *,
               record=None, budget=None):
    """Two forward sweeps over the same rectangle sharing each weight evaluation.

    Same conventions as :func:`sweep`; returns ``(last_a, last_b, rec_a, rec_b)``.
    Results are bit-identical to two separate sweeps.
    """
    check_budget(2 * width * nrows, budget)
    init_a = np.ascontiguousarray(init_a, dtype=np.float64)
    init_b = np.ascontiguousarray(init_b, dtype=np.float64)
    if init_a.shape[0] != width or init_b.shape[0] != width:
        raise ValueError("init must have one value per column")
    if record is None:
        rec_y0 = rec_base = rec_shear = 0
        rec_a = rec_b = _NO_REC
    else:
        rec_y0, rec_rows, rec_base, rec_shear, rec_width = record
        rec_a = np.full((rec_rows, rec_width), NEG_INF)
        rec_b = np.full((rec_rows, rec_width), NEG_INF)
    la, lb = _pair_kernel(env.weight_key, x0, y0, width, nrows, init_a, init_b,
                          rec_y0, rec_base, rec_shear, rec_a, rec_b)
    if record is None:
        return la, lb, None, None
    return la, lb, rec_a, rec_b


def point_init(width: int, offset: int = 0) -> np.ndarray:
    init = np.full(width, NEG_INF)
    init[offset] = 0.0
    return init


# --------------------------------------------------------------- operations


def passage_time(env: EnvHandle, p, q, *, budget: int | None = None) -> float:
    """Last-passage time ``T_{p,q}``; ``-inf`` unless ``p`` precedes ``q``."""
    if not precedes(p, q):
        return NEG_INF
    px, py = int(p[0]), int(p[1])
    width = int(q[0]) - px + 1
    nrows = int(q[1]) - py + 1
    last, _, _ = sweep(env, px, py, width, nrows, point_init(width), budget=budget)
    return float(last[-1])


def _targets_span(line: Line, lo: int, hi: int):
    if isinstance(line, Row):
        return hi, line.n, line.n
    return hi, 2 * line.n - hi, 2 * line.n - lo


def _record_spec(line: Line, lo: int, hi: int):
    if isinstance(line, Row):
        return (line.n, 1, lo, 0, hi - lo + 1)
    return (2 * line.n - hi, hi - lo + 1, 2 * line.n, -1, 1)


def _unpack_record(line: Line, lo: int, hi: int, rec: np.ndarray) -> np.ndarray:
    if isinstance(line, Row):
        return rec[0].copy()
    # row y = 2n - m sits at rec index (2n - m) - (2n - hi) = hi - m
    return rec[::-1, 0].copy()


def profile_from_point(env: EnvHandle, p, line: Line, lo: int, hi: int, *,
                       budget: int | None = None) -> PassageProfile:
    px, py = int(p[0]), int(p[1])
    xmax, _, ymax = _targets_span(line, lo, hi)
    if xmax < px or ymax < py:
        raise ValueError("target window is not reachable from the source")
    width = xmax - px + 1
    nrows = ymax - py + 1
    _, rec, _ = sweep(env, px, py, width, nrows, point_init(width),
                      record=_record_spec(line, lo, hi), budget=budget)
    return PassageProfile(line, lo, hi, _unpack_record(line, lo, hi, rec))


def profile_from_boundary(env: EnvHandle, b: BoundaryData, line: Line, lo: int, hi: int, *,
                          budget: int | None = None) -> PassageProfile:
    """``values[m] = max_s b(s) + T_{s + (0, 1), m-th point of line}``."""
    finite = np.flatnonzero(np.isfinite(b.values))
    xmin = b.lo + int(finite[0])
    xmax, _, ymax = _targets_span(line, lo, hi)
    if isinstance(b.line, Row):
        if isinstance(line, Row) and line.n <= b.line.n:
            raise ValueError("target row must lie strictly above the boundary row")
        y0 = b.line.n + 1
        width = xmax - xmin + 1
        if width <= 0 or ymax < y0:
            raise ValueError("target window is not reachable from the boundary")
        init = np.full(width, NEG_INF)
        a, c = xmin, min(b.hi, xmax)
        init[: c - a + 1] = b.values[a - b.lo : c - b.lo + 1]
        inject = None
    else:
        k = b.line.n
        y0 = 2 * k - (b.lo + int(finite[-1])) + 1
        width = xmax - xmin + 1
        nrows_b = ymax - y0 + 1
        if width <= 0 or nrows_b <= 0:
            raise ValueError("target window is not reachable from the boundary")
        init = np.full(width, NEG_INF)
        cols = np.full(nrows_b, -1, dtype=np.int64)
        vals = np.full(nrows_b, NEG_INF)
        for r in range(nrows_b):
            m = 2 * k - (y0 + r) + 1
            if b.lo <= m <= b.hi and xmin <= m <= xmax and np.isfinite(b.values[m - b.lo]):
                cols[r] = m - xmin
                vals[r] = b.values[m - b.lo]
        inject = (cols, vals)
    nrows = ymax - y0 + 1
    _, rec, _ = sweep(env, xmin, y0, width, nrows, init, inject=inject,
                      record=_record_spec(line, lo, hi), budget=budget)
    return PassageProfile(line, lo, hi, _unpack_record(line, lo, hi, rec))


# ------------------------------------------------------------------ scaling


def space_scale(n: float) -> float:
    """Lattice width of one scaled spatial unit, ``2^{5/3} n^{2/3}``."""
    return 2.0 ** SPACE_SCALE_EXP * n ** (2.0 / 3.0)


def weight_scale(n: float) -> float:
    """Prefactor ``2^{-4/3} n^{-1/3}`` turning centred passage times into scaled ones."""
    return 2.0 ** WEIGHT_SCALE_EXP * n ** (-1.0 / 3.0)


def round_point(x: float, y: float) -> tuple[int, int]:
    """The rounding map r: floor a non-integer coordinate, except that x is
    rounded up when both are non-integers."""
    xi, yi = float(x).is_integer(), float(y).is_integer()
    if xi and yi:
        return int(x), int(y)
    if not xi and yi:
        return math.floor(x), int(y)
    if xi and not yi:
        return int(x), math.floor(y)
    return math.ceil(x), math.floor(y)


def scaled_passage(env: EnvHandle, n: int, x: float, s: float, y: float, t: float, *,
                   budget: int | None = None) -> float:
    """Rescaled passage time ``K_n(x, s; y, t)``."""
    if not s < t:
        raise ValueError("need s < t")
    c = space_scale(n)
    lx, ly = n * s + c * x, n * s
    ux, uy = n * t + c * y, n * t
    lower = (math.ceil(lx), math.ceil(ly))
    upper = round_point(ux, uy)
    r_lower = round_point(lx, ly)
    T = passage_time(env, lower, upper, budget=budget)
    F = T - 2 * ((upper[0] - r_lower[0]) + (upper[1] - r_lower[1]))
    if float(lx).is_integer() and float(ly).is_integer():
        F -= weight_at(env, (int(lx), int(ly)))
    return weight_scale(n) * F


def rescale_point(n: int, p) -> tuple[float, float]:
    """``R_n(x, y) = (2^{-5/3} n^{-2/3} (x - y), y / n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x, y = p
    return (x - y) / space_scale(n), y / n


# ------------------------------------------------------------------- export


def write_profile_csv(profile: PassageProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["line_kind", "n", "index", "value"])
        for m, v in zip(range(profile.lo, profile.hi + 1), profile.values):
            w.writerow([profile.line.kind, profile.line.n, m, repr(float(v))])
