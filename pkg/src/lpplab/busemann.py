"""Busemann function in the (1,1) direction and the stationary boundary walk.

``G(p) = T(p, c) - T(0, c)`` where ``c`` is the first common vertex of the
semi-infinite geodesics from ``p`` and from the origin.  Semi-infinite prefixes
are read from a pair of :class:`GeodesicTree` objects aimed at
``lo + (4S, 4S)`` and ``lo + (8S, 8S)`` over a box of side ``S``; a prefix is
trusted only up to where both trees agree.  The box doubles until every
requested coalescence is resolved or the budget on the near target distance
``4S`` runs out.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .env import EnvHandle, uniforms
from .errors import NoStabilization, WindowClipped
from .geodesic import GeodesicPath, GeodesicTree, _agree_prefix, _backtrack, _first_common, path_weight
from .lpp import BoundaryData, Row, point_init, profile_from_point, space_scale, sweep


@dataclass(frozen=True)
class BusemannSample:
    p: tuple[int, int]
    value: float
    coalescence_point: tuple[int, int]
    budget_used: int


class CoalescenceFrame:
    """Stabilised semi-infinite prefixes for every point of one box."""

    def __init__(self, env: EnvHandle, box_lo, side: int, *, budget: int | None = None):
        lx, ly = int(box_lo[0]), int(box_lo[1])
        self.env = env
        self.box_lo = (lx, ly)
        self.side = side
        hi = (lx + side, ly + side)
        self.near = GeodesicTree(env, self.box_lo, hi, (lx + 4 * side, ly + 4 * side), budget=budget)
        self.far = GeodesicTree(env, self.box_lo, hi, (lx + 8 * side, ly + 8 * side), budget=budget)
        self._cache: dict = {}

    @property
    def target_distance(self) -> int:
        return 4 * self.side

    def prefix(self, p) -> tuple[np.ndarray, int]:
        """Path from ``p`` towards the far target and the length of its trusted part."""
        key = (int(p[0]), int(p[1]))
        hit = self._cache.get(key)
        if hit is None:
            far = self.far.path(key)
            near = self.near.path(key)
            hit = (far, int(_agree_prefix(far, near)))
            self._cache[key] = hit
        return hit

    def coalesce(self, p, q):
        """``(c, path_p[..c], path_q[..c])`` for the first common vertex, or None."""
        a, na = self.prefix(p)
        b, nb = self.prefix(q)
        i, j = _first_common(a, b)
        if i < 0 or i >= na or j >= nb:
            return None
        c = (int(a[i, 0]), int(a[i, 1]))
        return c, a[: i + 1], b[: j + 1]

    def difference(self, p, q):
        """``G(p) - G(q)`` and the coalescence point, or None if unresolved."""
        hit = self.coalesce(p, q)
        if hit is None:
            return None
        c, pa, pb = hit
        return path_weight(self.env, pa) - path_weight(self.env, pb), c


def _extent(points) -> tuple[tuple[int, int], int]:
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    lo = (int(pts[:, 0].min()), int(pts[:, 1].min()))
    ext = int(max(pts[:, 0].max() - lo[0], pts[:, 1].max() - lo[1]))
    return lo, ext


def _frames(env, points, slack0, budget_N_max, budget):
    """Frames of growing size covering ``points``; stops before ``4S > budget_N_max``."""
    lo, ext = _extent(points)
    slack = max(8, slack0)
    while 4 * (ext + slack) <= budget_N_max:
        yield CoalescenceFrame(env, lo, ext + slack, budget=budget)
        slack *= 2


def busemann(env: EnvHandle, p, budget: int, *, cell_budget: int | None = None) -> BusemannSample:
    """``G(p)`` relative to the origin; ``budget`` caps the target distance N."""
    p = (int(p[0]), int(p[1]))
    if p == (0, 0):
        return BusemannSample(p, 0.0, (0, 0), 0)
    last = 0
    for frame in _frames(env, [p, (0, 0)], 16, budget, cell_budget):
        last = frame.target_distance
        hit = frame.difference(p, (0, 0))
        if hit is not None:
            value, c = hit
            return BusemannSample(p, value, c, last)
    raise NoStabilization(last)


def busemann_values(env: EnvHandle, points, budget: int, *, slack: int = 16,
                    reference=(0, 0), cell_budget: int | None = None):
    """``G(q) - G(reference)`` for many points read from one frame; NaN when censored.

    Frames grow until every point is resolved (or the budget runs out), and all
    values are then taken from that last frame, so they come from a single
    geodesic tree and telescope exactly.  Returns
    ``(values, coalescence_points, frame)``; ``frame`` is None if the budget
    admits none.
    """
    pts = [(int(a), int(b)) for a, b in points]
    ref = (int(reference[0]), int(reference[1]))
    values = np.full(len(pts), np.nan)
    cpts = [None] * len(pts)
    frame = None
    for frame in _frames(env, pts + [ref], slack, budget, cell_budget):
        values[:] = np.nan
        cpts = [None] * len(pts)
        for i, q in enumerate(pts):
            hit = (0.0, ref) if q == ref else frame.difference(q, ref)
            if hit is not None:
                values[i], cpts[i] = hit
        if not np.isnan(values).any():
            break
    return values, cpts, frame


def busemann_increments(env: EnvHandle, points, budget: int, *, slack: int = 64,
                        cell_budget: int | None = None) -> np.ndarray:
    """``G(u_k) - G(u_{k-1})`` along a point sequence; NaN for censored pairs."""
    pts = [(int(a), int(b)) for a, b in points]
    out = np.full(len(pts) - 1, np.nan)
    pending = list(range(1, len(pts)))
    for frame in _frames(env, pts, slack, budget, cell_budget):
        still = []
        for k in pending:
            hit = frame.difference(pts[k], pts[k - 1])
            if hit is None:
                still.append(k)
            else:
                out[k - 1] = hit[0]
        pending = still
        if not pending:
            break
    return out


@dataclass(frozen=True)
class ArgmaxReport:
    p: tuple[int, int]
    n: int
    m_star: int | None
    exit_column: int | None
    crossing_ok: bool
    value_ok: bool
    censored: bool

    @property
    def holds(self) -> bool:
        return (not self.censored) and self.crossing_ok and self.value_ok


def check_argmax_property(env: EnvHandle, p, n: int, window_halfwidth: int, budget: int, *,
                          cell_budget: int | None = None) -> ArgmaxReport:
    """Check that the semi-infinite geodesic from ``p`` leaves row ``n`` at
    ``m* = argmax_m T(p, (m, n)) + G(m, n + 1)`` and that
    ``G(p) = T(p, (m*, n)) + G(m*, n + 1)``.
    """
    px, py = int(p[0]), int(p[1])
    if n <= py:
        raise ValueError("row n must lie above p")
    centre = px + (n - py)
    mlo = max(px, centre - window_halfwidth)
    mhi = centre + window_halfwidth
    T = profile_from_point(env, (px, py), Row(n), mlo, mhi, budget=cell_budget).values
    window = [(m, n + 1) for m in range(mlo, mhi + 1)]
    G, _, frame = busemann_values(env, window + [(px, py)], budget, cell_budget=cell_budget)
    censored_report = ArgmaxReport((px, py), n, None, None, False, False, True)
    if frame is None or np.isnan(G).any():
        return censored_report
    path, trusted = frame.prefix((px, py))
    rows = path[:trusted, 1]
    idx = np.flatnonzero(rows == n + 1)
    if idx.size == 0:
        return censored_report
    exit_col = int(path[idx[0], 0])
    if not mlo <= exit_col <= mhi:
        raise WindowClipped(f"geodesic exits row {n} at {exit_col}, outside the window")
    total = T + G[:-1]
    k = int(np.argmax(total))
    m_star = mlo + k
    if k == len(total) - 1 or (k == 0 and mlo > px):
        raise WindowClipped(f"argmax at window edge m={m_star}")
    value_ok = bool(G[-1] == T[k] + G[k])
    return ArgmaxReport((px, py), n, m_star, exit_col, exit_col == m_star, value_ok, False)


def sample_stationary_boundary(env: EnvHandle, row: int, lo: int, hi: int, *,
                               dual: bool = False) -> BoundaryData:
    """Exact sample of the Busemann function along ``Row row``, anchored at 0.

    Each unit step to the right adds ``-E`` with ``E ~ Exp(1/2)`` (mean 2).
    With ``dual=True`` the steps are ``+E``: the law of the (-1,-1) Busemann
    function on the row, used as the competition-interface boundary.
    The walk uses the ``"boundary:<row>"`` uniform stream, so it is independent
    of the weight field.
    """
    if not lo <= 0 <= hi:
        raise ValueError("window must contain 0")
    u = uniforms(env, f"boundary:{row}", lo + 1, hi - lo)
    steps = np.floor(-2.0 * np.log(1.0 - u) * 4294967296.0 + 0.5) * 2.0**-32
    sign = 1.0 if dual else -1.0
    # steps[k] is the increment from lo+k to lo+k+1
    values = np.empty(hi - lo + 1)
    values[0] = 0.0
    values[1:] = np.cumsum(sign * steps)
    values -= values[-lo]
    return BoundaryData(Row(row), lo, hi, values)


def boundary_geodesic(env: EnvHandle, n: int, *, halfwidth: int | None = None,
                      budget: int | None = None) -> GeodesicPath:
    """The part of the semi-infinite geodesic from the origin below Row ``n + 1``,
    sampled exactly in law.

    The path is the geodesic from ``(0, 0)`` to ``(m*, n)`` where ``m*``
    maximises ``T((0, 0), (m, n)) + G(m, n + 1)`` and ``G`` on Row ``n + 1`` is a
    freshly sampled stationary walk.  Increments of ``G`` along that row depend
    only on weights in rows ``>= n + 1``, so pairing the sampled walk with the
    field below gives the joint law of the true pair.  ``m`` ranges over
    ``[0, n + halfwidth]``; the window doubles while the argmax sits at its
    right edge.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    K = int(math.ceil(2 * space_scale(max(n, 1)))) if halfwidth is None else int(halfwidth)
    while True:
        width = n + K + 1
        _, rec, dirs = sweep(env, 0, 0, width, n + 1, point_init(width),
                             record=(n, 1, 0, 0, width), dirs_region=(0, 0, width, n + 1),
                             budget=budget)
        boundary = sample_stationary_boundary(env, n + 1, 0, width - 1)
        total = rec[0] + boundary.values
        m = int(np.argmax(total))
        if m < width - 1:
            break
        K *= 2
    verts = _backtrack(dirs, 0, 0, m, n)
    return GeodesicPath(verts, float(rec[0][m]))


def write_increments_csv(increments, filename, kind: str = "horizontal") -> None:
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "k", "increment"])
        for k, v in enumerate(increments):
            if not math.isnan(v):
                w.writerow([kind, k, repr(float(v))])
