"""Competition interface and its duality with the semi-infinite geodesic.

Points ``p`` with ``x >= 0, y >= 1`` are split by which half of a Row 0
boundary ``b`` they are served from: with

    L^L(p) = max_{-M <= m <= 0} b(m) + T((m, 1), p)
    L^R(p) = max_{1 <= m <= M}  b(m) + T((m, 1), p)

``p`` is in P1 when ``L^R(p) > L^L(p)`` and in P2 when ``L^L(p) > L^R(p)``;
positive-axis points ``(x, 0)`` belong to P1.  ``M = ceil(2^{5/3} H n^{2/3})``
is the truncation.  The interface is the set of ``p >= 0`` with
``p + (1, 0)`` in P1 and ``p + (0, 1)`` in P2.  It is an up-right path from the
origin: from ``p`` it steps up when ``p + (1, 1)`` is in P1 and right otherwise.

Both profiles run through one DP pass over the rows, and the path is walked
as soon as the row it needs is available, so memory stays linear in the width.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .busemann import sample_stationary_boundary
from .env import EnvBatch, EnvHandle, nb_absorb, nb_coord, nb_weight
from .errors import NoStabilization, OutOfSpan, TieDetected, WindowClipped
from .geodesic import crossing, semi_infinite
from .lpp import NEG_INF, BoundaryData, Row, check_budget, passage_time, profile_from_point, space_scale
from .parallel import replica_map

INTERFACE_REPLICA_BIT = 1 << 63

_OK, _CLIPPED, _TIE = 0, 1, 2


@dataclass(frozen=True)
class DualPath:
    vertices: np.ndarray  # (k, 2) int64, up-right from (0, 0)
    n_max: int
    truncation: int  # M

    @property
    def end(self) -> tuple[int, int]:
        return int(self.vertices[-1, 0]), int(self.vertices[-1, 1])

    def __len__(self) -> int:
        return len(self.vertices)


def truncation_width(H: float, n: int) -> int:
    """``ceil(2^{5/3} H n^{2/3})``."""
    return int(math.ceil(H * space_scale(n)))


@njit(nogil=True, cache=True)
def _interface_kernel(key, x0, width, nrows, init_l, init_r, classes, stop_d):
    """Walk the interface through rows ``1..nrows`` over columns ``x0..x0+width-1``.

    ``classes`` is either empty or ``(nrows, width)``; when given it receives
    +1 for P1, -1 for P2 and 0 for undecided cells (ties, or both sides
    unreachable), and no walk is made.  With ``stop_d >= 0`` the walk ends at the first vertex with
    ``x + y == stop_d``.  Returns ``(vertices, status, sign_violations)``.
    """
    L = init_l.copy()
    R = init_r.copy()
    keep = classes.shape[0] > 0
    out = np.empty((width + nrows + 1, 2), dtype=np.int64)
    cx, cy, k = 0, 0, 0
    out[0, 0] = 0
    out[0, 1] = 0
    k = 1
    violations = 0
    first = -x0  # column index of x = 0
    for r in range(nrows):
        y = r + 1
        hy = nb_absorb(key, nb_coord(y))
        for i in range(width):
            w = nb_weight(hy, x0 + i)
            bl = L[i]
            br = R[i]
            if i > 0:
                if L[i - 1] > bl:
                    bl = L[i - 1]
                if R[i - 1] > br:
                    br = R[i - 1]
            L[i] = bl + w
            R[i] = br + w
        # row monotonicity: once P1 (right) appears, no P2 further right
        seen_p1 = False
        for i in range(first + 1, width):
            c = 0
            if R[i] > L[i]:
                c = 1
                seen_p1 = True
            elif L[i] > R[i]:
                c = -1
                if seen_p1:
                    violations += 1
            if keep:
                classes[r, i] = c
        if keep:
            c0 = 0
            if R[first] > L[first]:
                c0 = 1
            elif L[first] > R[first]:
                c0 = -1
            classes[r, first] = c0
        while cy < y and not keep:
            i = cx + 1 - x0
            if i >= width:
                return out[:k], 1, violations
            if R[i] > L[i]:
                cy += 1
            elif L[i] > R[i]:
                cx += 1
            else:
                return out[:k], 2, violations
            out[k, 0] = cx
            out[k, 1] = cy
            k += 1
            if cx + cy == stop_d:
                return out[:k], 0, violations
    # drop the final step into row nrows, which is outside the requested span
    if out[k - 1, 1] == nrows:
        k -= 1
    return out[:k], 0, violations


def _split_init(boundary: BoundaryData, M: int, x0: int, width: int):
    lo, hi = boundary.lo, boundary.hi
    init_l = np.full(width, NEG_INF)
    init_r = np.full(width, NEG_INF)
    for m in range(max(lo, -M), min(hi, M, x0 + width - 1) + 1):
        v = boundary.values[m - lo]
        if m <= 0:
            init_l[m - x0] = v
        else:
            init_r[m - x0] = v
    return init_l, init_r


def _prepare(boundary: BoundaryData, n_max: int, H: float):
    if not isinstance(boundary.line, Row) or boundary.line.n != 0:
        raise ValueError("the interface boundary must live on Row 0")
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    M = truncation_width(H, max(n_max, 1))
    if boundary.lo > -M:
        raise WindowClipped(f"boundary starts at {boundary.lo}, needs to cover -{M}")
    if boundary.hi < 1:
        raise WindowClipped("boundary must extend to the right of 0")
    x0 = -M
    width = boundary.hi - x0 + 1
    return M, x0, width


def competition_interface(env: EnvHandle, boundary: BoundaryData, n_max: int, H: float, *,
                          stop_at: int | None = None, budget: int | None = None) -> DualPath:
    """Interface ``Delta_{H, n_max}`` up to Row ``n_max``.

    The right edge of ``boundary`` is also the right edge of the computed
    region; the walk reaching it raises :class:`WindowClipped`.  With
    ``stop_at=k`` the walk ends on ``L_k`` instead (rows are still capped at
    ``n_max``, and ``M`` is computed from ``n_max``).
    """
    M, x0, width = _prepare(boundary, n_max, H)
    nrows = n_max + 1
    check_budget(2 * width * nrows, budget)
    init_l, init_r = _split_init(boundary, M, x0, width)
    stop_d = -1 if stop_at is None else 2 * int(stop_at)
    verts, status, _ = _interface_kernel(env.weight_key, x0, width, nrows, init_l, init_r,
                                         np.zeros((0, 0), dtype=np.int8), stop_d)
    if stop_at is not None and status == _OK and verts[-1, 0] + verts[-1, 1] != stop_d:
        raise WindowClipped(f"interface did not reach L_{stop_at} below row {n_max}")
    if status == _CLIPPED:
        raise WindowClipped(f"interface left the window at x={boundary.hi}")
    if status == _TIE:
        raise TieDetected("L^L == L^R at an interface vertex")
    return DualPath(verts, n_max, M)


def classify_grid(env: EnvHandle, boundary: BoundaryData, n_rows: int, H: float, *,
                  budget: int | None = None):
    """Class of every ``(x, y)`` with ``0 <= x <= boundary.hi`` and ``1 <= y <= n_rows``.

    Returns ``(classes, sign_violations)`` where ``classes[y-1, x]`` is +1 for
    P1, -1 for P2 and 0 when undecided.
    """
    M, x0, width = _prepare(boundary, n_rows, H)
    check_budget(2 * width * n_rows, budget)
    init_l, init_r = _split_init(boundary, M, x0, width)
    classes = np.zeros((n_rows, width), dtype=np.int8)
    _, _, violations = _interface_kernel(env.weight_key, x0, width, n_rows, init_l, init_r, classes, -1)
    return classes[:, -x0:].copy(), int(violations)


def classify_point(env: EnvHandle, boundary: BoundaryData, p, H: float, n: int) -> int:
    """Literal classification of one point: +1 (P1) iff the argmax source is positive.

    ``m* = argmax_{|m| <= M} b(m) + T((m, 1), p)`` by explicit enumeration of
    sources, one passage time per source.
    """
    px, py = int(p[0]), int(p[1])
    if py == 0:
        if px <= 0:
            raise ValueError("the origin and the negative axis are not classified")
        return 1
    M = truncation_width(H, max(n, 1))
    best, arg, tie = NEG_INF, None, False
    for m in range(max(boundary.lo, -M), min(boundary.hi, M, px) + 1):
        v = boundary.values[m - boundary.lo]
        if not np.isfinite(v):
            continue
        total = v + passage_time(env, (m, 1), (px, py))
        if total > best:
            best, arg, tie = total, m, False
        elif total == best:
            tie = True
    if arg is None:
        return -1
    if tie:
        raise TieDetected(f"argmax not unique at {p}")
    return 1 if arg > 0 else -1


def interface_by_definition(env: EnvHandle, boundary: BoundaryData, n_max: int, H: float,
                            x_max: int) -> list[tuple[int, int]]:
    """Every ``p`` in ``[0, x_max] x [0, n_max]`` with ``p+(1,0)`` in P1 and ``p+(0,1)`` in P2,
    classified point by point (slow reference)."""
    cache: dict = {}

    def cls(q):
        if q not in cache:
            cache[q] = classify_point(env, boundary, q, H, n_max)
        return cache[q]

    out = []
    for y in range(n_max + 1):
        for x in range(x_max + 1):
            if cls((x + 1, y)) == 1 and cls((x, y + 1)) == -1:
                out.append((x, y))
    return out


def interface_crossing(path: DualPath, k: int, line: str = "antidiagonal") -> int:
    """x coordinate of the interface on ``L_k`` (or the leftmost vertex on Row ``k``)."""
    return crossing(path, k, line)


def empirical_dual_boundary(env: EnvHandle, lo: int, hi: int, N: int, *,
                            budget: int | None = None) -> BoundaryData:
    """``T((-N,-N), (m,0)) - T((-N,-N), (0,0))`` on Row 0: a far-corner stand-in
    for the (-1,-1) Busemann function, for cross-checking the sampled boundary."""
    if N < max(-lo, hi):
        raise ValueError("corner distance N must exceed the window")
    prof = profile_from_point(env, (-N, -N), Row(0), lo, hi, budget=budget)
    return BoundaryData(Row(0), lo, hi, prof.values - prof.values[-lo])


# ------------------------------------------------------------------ duality


@dataclass
class DualitySample:
    n: int
    ks: tuple[int, ...]
    geodesic: dict = field(default_factory=dict)  # k -> scaled crossings, NaN if censored
    interface: dict = field(default_factory=dict)
    geodesic_censored: int = 0
    interface_censored: int = 0
    replicas: tuple[int, ...] = ()

    def rows(self):
        """``(object, n, k, replica, position_scaled)`` tuples, replica-sorted."""
        for obj, table in (("geodesic", self.geodesic), ("interface", self.interface)):
            for k in self.ks:
                for r, v in zip(self.replicas, table[k]):
                    if np.isfinite(v):
                        yield obj, self.n, k, r, float(v)


def _scaled(x: int, k: int, n: int) -> float:
    # on L_k, x - y = 2x - 2k
    return (2 * x - 2 * k) / space_scale(n)


def _geodesic_crossings(env: EnvHandle, n: int, ks, budget_N_max: int):
    try:
        approx = semi_infinite(env, (0, 0), max(ks), budget_N_max)
    except NoStabilization:
        return None
    return [_scaled(crossing(approx.prefix, k), k, n) for k in ks]


def _interface_crossings(env: EnvHandle, n: int, ks, H: float, slack: float):
    k_max = max(ks)
    n_max = int(math.ceil(k_max + slack * space_scale(k_max)))
    M = truncation_width(H, n_max)
    x_hi = int(math.ceil(k_max + slack * space_scale(k_max)))
    boundary = sample_stationary_boundary(env, 0, -M, x_hi, dual=True)
    try:
        path = competition_interface(env, boundary, n_max, H, stop_at=k_max)
        return [_scaled(interface_crossing(path, k), k, n) for k in ks]
    except (WindowClipped, TieDetected, OutOfSpan):
        return None


def duality_experiment(batch: EnvBatch, n: int, replicas: int, *, ks=None, H: float = 4.0,
                       slack: float = 3.0, budget_N_max: int | None = None,
                       threads: int = 1) -> DualitySample:
    """Crossing positions of the semi-infinite geodesic and of the interface on ``L_k``.

    Replica ``r`` uses ``batch[r]`` for the geodesic and the same id with the
    top bit set for the interface, so the two samples are independent.
    Positions are ``(x - y) / (2^{5/3} n^{2/3})``; censored replicas are NaN.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    ks = tuple(ks) if ks is not None else (n // 4, n // 2, n)
    if budget_N_max is None:
        budget_N_max = 32 * max(ks)
    ids = list(range(replicas))

    def one(r):
        genv = batch[r]
        ienv = EnvHandle(genv.master_seed, genv.replica_id | INTERFACE_REPLICA_BIT)
        return _geodesic_crossings(genv, n, ks, budget_N_max), _interface_crossings(ienv, n, ks, H, slack)

    results = replica_map(one, ids, threads)
    out = DualitySample(n, ks, replicas=tuple(ids))
    for j, k in enumerate(ks):
        out.geodesic[k] = np.array([np.nan if g is None else g[j] for g, _ in results])
        out.interface[k] = np.array([np.nan if i is None else i[j] for _, i in results])
    out.geodesic_censored = sum(g is None for g, _ in results)
    out.interface_censored = sum(i is None for _, i in results)
    return out


def write_crossings_csv(sample: DualitySample, filename) -> None:
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["object", "n", "k", "replica", "position_scaled"])
        for row in sample.rows():
            w.writerow([row[0], row[1], row[2], row[3], repr(row[4])])
