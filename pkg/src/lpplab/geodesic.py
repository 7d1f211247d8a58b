"""Geodesics, semi-infinite geodesic prefixes, crossings and the zero set."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numba import njit

from .env import EnvHandle, weights_at
from .errors import NoStabilization, OrderViolation, OutOfSpan
from .lpp import point_init, precedes, sweep


@dataclass(frozen=True)
class GeodesicPath:
    vertices: np.ndarray  # (k, 2) int64, up-right
    weight: float

    @property
    def start(self) -> tuple[int, int]:
        return int(self.vertices[0, 0]), int(self.vertices[0, 1])

    @property
    def end(self) -> tuple[int, int]:
        return int(self.vertices[-1, 0]), int(self.vertices[-1, 1])

    def __len__(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True)
class SemiInfiniteApprox:
    prefix: GeodesicPath
    target_used: int
    stabilized: bool


@njit(nogil=True, cache=True)
def _backtrack(dirs, px, py, qx, qy):
    k = (qx - px) + (qy - py) + 1
    out = np.empty((k, 2), dtype=np.int64)
    x, y = qx, qy
    for i in range(k - 1, -1, -1):
        out[i, 0] = x
        out[i, 1] = y
        if i == 0:
            break
        if y == py:
            x -= 1
        elif x == px:
            y -= 1
        elif dirs[y - py, x - px] == 1:
            x -= 1
        else:
            y -= 1
    return out


@njit(nogil=True, cache=True)
def _seq_sum(w):
    s = w[0]
    for i in range(1, w.shape[0]):
        s = w[i] + s
    return s


def path_weight(env: EnvHandle, vertices: np.ndarray) -> float:
    """Sum of weights along the path, accumulated from the first vertex."""
    w = weights_at(env, vertices[:, 0], vertices[:, 1])
    return float(_seq_sum(w))


def geodesic(env: EnvHandle, p, q, *, budget: int | None = None) -> GeodesicPath:
    """Maximal-weight up-right path from ``p`` to ``q``.

    Backtracking from ``q`` prefers the vertical predecessor on ties.
    """
    if not precedes(p, q):
        raise OrderViolation(f"{tuple(p)} does not precede {tuple(q)}")
    px, py = int(p[0]), int(p[1])
    qx, qy = int(q[0]), int(q[1])
    width, nrows = qx - px + 1, qy - py + 1
    last, _, dirs = sweep(env, px, py, width, nrows, point_init(width),
                          dirs_region=(px, py, width, nrows), budget=budget)
    return GeodesicPath(_backtrack(dirs, px, py, qx, qy), float(last[-1]))


# ----------------------------------------------------------- geodesic trees


@njit(nogil=True, cache=True)
def _trace(bits, hx, hy, lx, ly, px, py, max_d):
    """Follow successor bits from (px, py) while inside [lx,hx]x[ly,hy] and x+y <= max_d."""
    n = min(max_d - (px + py) + 1, (hx - px) + (hy - py) + 1)
    if n <= 0 or px < lx or py < ly or px > hx or py > hy:
        return np.empty((0, 2), dtype=np.int64)
    out = np.empty((n, 2), dtype=np.int64)
    x, y = px, py
    k = 0
    while True:
        out[k, 0] = x
        out[k, 1] = y
        k += 1
        if k >= n:
            break
        if bits[hy - y, hx - x] == 1:
            x += 1
        else:
            y += 1
        if x > hx or y > hy:
            break
    return out[:k]


class GeodesicTree:
    """Geodesics from every point of a box towards one far target ``z``.

    One backward sweep over ``[box_lo, z]`` stores the optimal successor of each
    box point (up on ties), so any number of geodesic prefixes towards ``z`` can be
    read off without further DP work.
    """

    def __init__(self, env: EnvHandle, box_lo, box_hi, target, *, budget: int | None = None):
        lx, ly = int(box_lo[0]), int(box_lo[1])
        hx, hy = int(box_hi[0]), int(box_hi[1])
        zx, zy = int(target[0]), int(target[1])
        if not (hx <= zx and hy <= zy):
            raise ValueError("target must dominate the box")
        width, nrows = zx - lx + 1, zy - ly + 1
        _, _, bits = sweep(env, -zx, -zy, width, nrows, point_init(width), sign=-1,
                           dirs_region=(-hx, -hy, hx - lx + 1, hy - ly + 1), budget=budget)
        self.env = env
        self.box_lo = (lx, ly)
        self.box_hi = (hx, hy)
        self.target = (zx, zy)
        self._bits = bits

    def path(self, p, max_d: int | None = None) -> np.ndarray:
        lx, ly = self.box_lo
        hx, hy = self.box_hi
        if max_d is None:
            max_d = hx + hy
        return _trace(self._bits, hx, hy, lx, ly, int(p[0]), int(p[1]), int(max_d))


@njit(nogil=True, cache=True)
def _agree_prefix(a, b):
    """Length of the common initial segment of two paths from the same start."""
    n = min(a.shape[0], b.shape[0])
    for i in range(n):
        if a[i, 0] != b[i, 0] or a[i, 1] != b[i, 1]:
            return i
    return n


@njit(nogil=True, cache=True)
def _first_common(a, b):
    """Indices (i, j) of the first shared vertex of two up-right paths, or (-1, -1)."""
    if a.shape[0] == 0 or b.shape[0] == 0:
        return -1, -1
    da = a[0, 0] + a[0, 1]
    db = b[0, 0] + b[0, 1]
    d = max(da, db)
    i = d - da
    j = d - db
    while i < a.shape[0] and j < b.shape[0]:
        if a[i, 0] == b[j, 0]:
            return i, j
        i += 1
        j += 1
    return -1, -1


def semi_infinite(env: EnvHandle, p, H: int, budget_N_max: int, *,
                  budget: int | None = None) -> SemiInfiniteApprox:
    """Prefix of the (1,1) semi-infinite geodesic from ``p`` up to ``d <= d(p) + 2H``.

    Geodesics to ``p + (N, N)`` and ``p + (2N, 2N)`` are compared for
    ``N = 4H, 8H, ...`` until they agree on the prefix.
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    px, py = int(p[0]), int(p[1])
    box_hi = (px + 2 * H, py + 2 * H)
    max_d = px + py + 2 * H
    N = 4 * H
    trees: dict[int, GeodesicTree] = {}

    def tree(m):
        if m not in trees:
            trees[m] = GeodesicTree(env, (px, py), box_hi, (px + m, py + m), budget=budget)
        return trees[m]

    last = N
    while N <= budget_N_max:
        a = tree(N).path((px, py), max_d)
        b = tree(2 * N).path((px, py), max_d)
        trees.pop(N // 2, None)
        if a.shape == b.shape and np.array_equal(a, b):
            return SemiInfiniteApprox(GeodesicPath(a, path_weight(env, a)), N, True)
        last = N
        N *= 2
    raise NoStabilization(last)


# -------------------------------------------------------------- path reads


def crossing(path: GeodesicPath, k: int, line: str = "antidiagonal") -> int:
    """x coordinate where the path meets ``L_k`` (``x + y = 2k``) or ``Row k``.

    For a row the first (leftmost) vertex on it is returned.
    """
    v = path.vertices
    if line == "antidiagonal":
        d0 = int(v[0, 0] + v[0, 1])
        i = 2 * k - d0
        if not 0 <= i < len(v):
            raise OutOfSpan(f"L_{k} is outside the path span")
        return int(v[i, 0])
    if line == "row":
        if not int(v[0, 1]) <= k <= int(v[-1, 1]):
            raise OutOfSpan(f"row {k} is outside the path span")
        i = int(np.searchsorted(v[:, 1], k, side="left"))
        return int(v[i, 0])
    raise ValueError(f"unknown line kind {line!r}")


def row_entries(path: GeodesicPath) -> tuple[np.ndarray, np.ndarray]:
    """Rows spanned by the path and the x of the first vertex on each."""
    v = path.vertices
    first = np.ones(len(v), dtype=bool)
    first[1:] = v[1:, 1] != v[:-1, 1]
    return v[first, 1].copy(), v[first, 0].copy()


def zero_set(path: GeodesicPath, tol_cells: int = 0) -> np.ndarray:
    """Sorted distinct heights at which the path is within ``tol_cells`` of the diagonal."""
    v = path.vertices
    hits = np.abs(v[:, 0] - v[:, 1]) <= tol_cells
    return np.unique(v[hits, 1])


def write_path_csv(path: GeodesicPath, filename) -> None:
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in path.vertices:
            w.writerow([int(x), int(y)])
