"""Estimators: box-counting dimensions, local time, tube occupation, KPZ exponents,
disjointness scaling and Kolmogorov-Smirnov tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .busemann import boundary_geodesic
from .env import EnvBatch, EnvHandle
from .errors import DegenerateCounts, NoStabilization
from .geodesic import GeodesicPath, _backtrack, crossing, geodesic, row_entries, semi_infinite, zero_set
from .lpp import point_init, space_scale, sweep, sweep_pair
from .parallel import replica_map
from .profile import MaskBuilder, box_edges, column_grid, difference_grid

DYADIC_SCALES = tuple(2.0**-k for k in range(1, 8))
DEFAULT_FIT = (1, 5)  # indices into DYADIC_SCALES: 2^-2 .. 2^-6


# ------------------------------------------------------------ regression


def ols(x, y):
    """Least-squares line ``y = a + b x``; returns ``(b, a, stderr_b, r2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = len(x)
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    b = float(np.sum((x - xm) * (y - ym)) / sxx)
    a = ym - b * xm
    resid = y - a - b * x
    sst = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / sst if sst > 0 else 1.0
    se = math.sqrt(float(np.sum(resid**2)) / (k - 2) / sxx) if k > 2 else float("nan")
    return b, a, se, r2


def wls(x, y, sigma):
    """Weighted least squares with per-point standard deviations ``sigma``.

    Returns ``(slope, intercept, stderr_slope)``; the stderr comes from the
    weights alone (known-variance model).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = 1.0 / np.asarray(sigma, dtype=float)
    coef, cov = np.polyfit(x, y, 1, w=w, cov="unscaled")
    return float(coef[0]), float(coef[1]), float(math.sqrt(cov[0, 0]))


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


# ------------------------------------------------------- box dimension


@dataclass
class DimensionEstimate:
    scales: np.ndarray
    counts: np.ndarray  # mean count per scale
    slope: float
    stderr: float
    r2: float
    fit_window: tuple[int, int]  # inclusive indices into scales
    bootstrap_ci: tuple[float, float]
    ols_stderr: float = float("nan")
    replicas: int = 1

    def to_dict(self) -> dict:
        return {
            "scales": [float(s) for s in self.scales],
            "counts": [float(c) for c in self.counts],
            "slope": self.slope,
            "stderr": self.stderr,
            "r2": self.r2,
            "fit_window": list(self.fit_window),
            "ci": list(self.bootstrap_ci),
            "replicas": self.replicas,
        }


def _fit_slope(scales, mean_counts):
    return ols(np.log(1.0 / scales), np.log(mean_counts))


def box_dimension(counts, scales=DYADIC_SCALES, fit_window=None, *, n_boot: int = 1000,
                  seed: int = 0) -> DimensionEstimate:
    """Slope of ``log N(delta)`` against ``log(1/delta)``.

    ``counts`` is ``(replicas, scales)`` (a 1-D array is one replica).  The
    point estimate uses replica-mean counts; the 95% interval is a percentile
    bootstrap over replicas, widened if needed so it contains the estimate.
    The reported stderr is the largest OLS stderr over all sub-windows of at
    least four scales inside the fit window, so widening the window can never
    report a smaller error than any window it contains.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    scales = np.asarray(scales, dtype=float)
    if counts.shape[1] != scales.shape[0]:
        raise ValueError("one count column per scale")
    lo, hi = (0, len(scales) - 1) if fit_window is None else fit_window
    mean = counts.mean(axis=0)
    idx = np.arange(lo, hi + 1)
    idx = idx[mean[idx] > 0]
    if len(idx) < 4:
        raise DegenerateCounts(f"only {len(idx)} scales with nonzero counts")
    slope, _, se, r2 = _fit_slope(scales[idx], mean[idx])
    worst = se
    for i in range(len(idx)):
        for j in range(i + 4, len(idx) + 1):
            sub = idx[i:j]
            worst = max(worst, _fit_slope(scales[sub], mean[sub])[2])
    R = counts.shape[0]
    if R > 1:
        rng = np.random.default_rng(seed)
        boots = np.empty(n_boot)
        for b in range(n_boot):
            m = counts[rng.integers(0, R, R)].mean(axis=0)[idx]
            boots[b] = _fit_slope(scales[idx], np.maximum(m, 1e-300))[0] if np.all(m > 0) else np.nan
        boots = boots[np.isfinite(boots)]
        ci = (float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5)))
    else:
        ci = (slope, slope)
    ci = (min(ci[0], slope), max(ci[1], slope))
    return DimensionEstimate(scales, mean, slope, worst, r2, (int(idx[0]), int(idx[-1])), ci, se, R)


def count_boxes_1d(points, extent: int, cells_per_box: float) -> int:
    """Closed boxes with ``floor``-edges over ``0 .. extent-1`` hit by integer ``points``."""
    edges = box_edges(extent, cells_per_box)
    pts = np.unique(np.asarray(points, dtype=np.int64))
    pts = pts[(pts >= 0) & (pts <= extent - 1)]
    if pts.size == 0:
        return 0
    # a point hits box i when edges[i] <= p <= edges[i+1]
    right = np.searchsorted(edges, pts, side="right") - 1  # box starting at or before p
    hit = np.zeros(len(edges) - 1, dtype=bool)
    hit[np.clip(right, 0, len(hit) - 1)] = True
    on_edge = np.isin(pts, edges)
    left = np.searchsorted(edges, pts[on_edge], side="left") - 1
    hit[left[left >= 0]] = True
    return int(hit.sum())


def occupied_fraction_rate(counts, scales, n_boxes) -> float:
    """Slope of ``log(N(delta) / boxes(delta))`` against ``log(delta)``."""
    frac = np.asarray(counts, dtype=float) / np.asarray(n_boxes, dtype=float)
    return ols(np.log(scales), np.log(frac))[0]


# ------------------------------------------------------------ Gamma_0 reads


def gamma0(env: EnvHandle, n: int, mode: str = "stationary", budget_N_max: int | None = None) -> GeodesicPath:
    """Semi-infinite geodesic from the origin covering rows ``0..n``.

    ``mode="stationary"`` samples it exactly in law through a stationary
    boundary on Row ``n+1``; ``mode="stabilized"`` uses coalescence doubling and
    raises :class:`NoStabilization` when the budget runs out.
    """
    if mode == "stationary":
        return boundary_geodesic(env, n)
    if mode != "stabilized":
        raise ValueError(f"unknown mode {mode!r}")
    H = n + int(math.ceil(space_scale(max(n, 1))))
    cap = budget_N_max if budget_N_max is not None else 32 * H
    while True:
        path = semi_infinite(env, (0, 0), H, cap).prefix
        if path.vertices[-1, 1] >= n:
            keep = path.vertices[:, 1] <= n
            return GeodesicPath(path.vertices[keep], float("nan"))
        H *= 2
        if 4 * H > cap:
            raise NoStabilization(cap)


def zero_heights(path: GeodesicPath, n: int, tol_cells: int = 0) -> np.ndarray:
    z = zero_set(path, tol_cells)
    return z[z <= n]


def zero_counts(path: GeodesicPath, n: int, scales=DYADIC_SCALES, tol_cells: int = 0) -> np.ndarray:
    """Number of time boxes of ``n delta`` rows meeting the zero set, per scale."""
    z = zero_heights(path, n, tol_cells)
    return np.array([count_boxes_1d(z, n + 1, n * d) for d in scales])


def occupation(path: GeodesicPath, n: int, w: float, h: float) -> float:
    """``(1/n) #{1 <= y <= h n : |x_y - y| <= w 2^{5/3} n^{2/3}}`` with ``x_y`` the
    first vertex of the path on row ``y``."""
    rows, xs = row_entries(path)
    ymax = int(math.floor(h * n))
    sel = (rows >= 1) & (rows <= ymax)
    within = np.abs(xs[sel] - rows[sel]) <= w * space_scale(n)
    return float(np.count_nonzero(within)) / n


def local_time_from_path(path: GeodesicPath, n: int, w: float, h: float) -> float:
    return occupation(path, n, w, h) / (2 * w)


@dataclass
class LocalTimeTable:
    n_list: tuple[int, ...]
    w_list: tuple[float, ...]
    h: float
    values: dict = field(default_factory=dict)  # (n, w) -> per-replica array
    censored: dict = field(default_factory=dict)  # n -> count

    def mean(self, n, w) -> float:
        return float(np.nanmean(self.values[(n, w)]))


def local_time_estimate(batch: EnvBatch, n_list, w_list, h: float = 1.0, replicas: int = 50, *,
                        mode: str = "stationary", threads: int = 1) -> LocalTimeTable:
    """``L(h; n, w) = nu_h([-w, w]) / (2w)`` per replica for every ``(n, w)``."""
    table = LocalTimeTable(tuple(n_list), tuple(w_list), h)
    for n in n_list:
        def one(r, n=n):
            try:
                p = gamma0(batch[r], int(math.ceil(h * n)), mode)
            except NoStabilization:
                return None
            return [local_time_from_path(p, n, w, h) for w in w_list]

        res = replica_map(one, range(replicas), threads)
        table.censored[n] = sum(r is None for r in res)
        for j, w in enumerate(w_list):
            table.values[(n, w)] = np.array([np.nan if r is None else r[j] for r in res])
    return table


# ---------------------------------------------------------- tube occupation


@dataclass
class TailFit:
    thresholds: np.ndarray
    exceedance: np.ndarray
    rate: float
    stderr: float
    r2: float
    fitted: tuple[int, int]
    samples: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "thresholds": [float(m) for m in self.thresholds],
            "exceedance": [float(p) for p in self.exceedance],
            "slope": -self.rate,
            "rate": self.rate,
            "stderr": self.stderr,
            "r2": self.r2,
            "fit_window": list(self.fitted),
        }


def tube_points(n: int, w: float, side_times=(0.25, 0.5, 0.75)):
    """Sampled lattice points on the boundary of ``[-w, w] x [0, 1]``.

    Bottom and top edges at ``x in {-w, 0, w}``, the two sides at the given
    interior times.
    """
    ss = space_scale(n)
    c = int(round(w * ss))
    pts = []
    for t in (0.0, 1.0):
        y = int(round(t * n))
        for rel in (-c, 0, c):
            pts.append((y + rel, y))
    for t in side_times:
        y = int(round(t * n))
        for rel in (-c, c):
            pts.append((y + rel, y))
    return sorted(set(pts), key=lambda p: (p[1], p[0]))


def _tube_occupation(env: EnvHandle, n: int, w: float, pts) -> float:
    """Largest tube occupation over geodesics between sampled boundary points."""
    c = w * space_scale(n)
    best = 0.0
    for p in pts:
        targets = [q for q in pts if q[1] > p[1] and q[0] >= p[0]]
        if not targets:
            continue
        qx = max(q[0] for q in targets)
        qy = max(q[1] for q in targets)
        width, nrows = qx - p[0] + 1, qy - p[1] + 1
        _, _, dirs = sweep(env, p[0], p[1], width, nrows, point_init(width),
                           dirs_region=(p[0], p[1], width, nrows))
        for q in targets:
            v = _backtrack(dirs, p[0], p[1], q[0], q[1])
            rows, xs = row_entries(GeodesicPath(v, 0.0))
            sel = rows > p[1]
            inside = np.abs(xs[sel] - rows[sel]) <= c
            best = max(best, float(np.count_nonzero(inside)) / n)
    return best


def tail_fit(samples, thresholds, min_exceed: int = 5, start: float = 0.5) -> TailFit:
    """Exceedance curve ``P[X > M]`` and a linear fit of its log against ``M``.

    The fit covers the tail: thresholds from the first one with exceedance
    ``<= start`` up to the last one with at least ``min_exceed`` exceedances.
    """
    x = np.asarray(samples, dtype=float)
    x = x[np.isfinite(x)]
    M = np.asarray(thresholds, dtype=float)
    k = np.array([np.count_nonzero(x > m) for m in M])
    p = k / len(x)
    usable = np.flatnonzero(k >= min_exceed)
    tail = np.flatnonzero(p <= start)
    if usable.size == 0 or tail.size == 0:
        raise DegenerateCounts("no threshold has enough exceedances")
    first, last = int(tail[0]), int(usable[-1])
    if last - first + 1 < 3:
        raise DegenerateCounts("fewer than three usable thresholds")
    sl, _, se, r2 = ols(M[first:last + 1], np.log(p[first:last + 1]))
    return TailFit(M, p, -sl, se, r2, (first, last), x)


def tube_occupation(batch: EnvBatch, w: float, replicas: int, *, n: int = 2048, thresholds=None,
                    threads: int = 1) -> TailFit:
    """Tail of ``W / w`` where ``W`` is the sampled sup of geodesic occupation of
    ``[-w, w] x [0, 1]`` over geodesics with endpoints on the tube boundary."""
    if not 0 < w <= 0.5:
        raise ValueError("w must lie in (0, 0.5]")
    pts = tube_points(n, w)
    W = np.array(replica_map(lambda r: _tube_occupation(batch[r], n, w, pts), range(replicas), threads))
    if thresholds is None:
        thresholds = np.arange(0.5, 1.0 / w + 1e-9, 0.5)
    return tail_fit(W / w, thresholds)


# ------------------------------------------------------------ KPZ exponents


@dataclass
class ExponentFit:
    n_list: tuple[int, ...]
    sd: np.ndarray
    mean: np.ndarray
    slope: float
    stderr: float
    ci: tuple[float, float]
    samples: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "n_list": list(self.n_list),
            "sd": [float(s) for s in self.sd],
            "mean": [float(m) for m in self.mean],
            "slope": self.slope,
            "stderr": self.stderr,
            "ci": list(self.ci),
        }


def point_to_point_sample(env: EnvHandle, n: int) -> tuple[int, float]:
    """``(x - n/2 at L_{n/2}, T_{0,(n,n)} - 4n)`` from one geodesic."""
    g = geodesic(env, (0, 0), (n, n))
    return crossing(g, n // 2) - n // 2, g.weight - 4 * n


def kpz_samples(batch: EnvBatch, n_list, replicas: int, threads: int = 1) -> dict:
    """``n -> (deviations, centred weights)`` sharing one geodesic per replica."""
    out = {}
    for n in n_list:
        res = replica_map(lambda r, n=n: point_to_point_sample(batch[r], n), range(replicas), threads)
        out[n] = (np.array([a for a, _ in res], dtype=float), np.array([b for _, b in res]))
    return out


def _sd_slope(n_list, samples, n_boot: int = 1000, seed: int = 0) -> ExponentFit:
    n_arr = np.asarray(n_list, dtype=float)
    sd = np.array([np.std(samples[n], ddof=1) for n in n_list])
    mean = np.array([np.mean(samples[n]) for n in n_list])
    slope, _, se, _ = ols(np.log(n_arr), np.log(sd))
    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        s = [np.std(samples[n][rng.integers(0, len(samples[n]), len(samples[n]))], ddof=1) for n in n_list]
        boots[b] = ols(np.log(n_arr), np.log(s))[0]
    ci = (float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5)))
    return ExponentFit(tuple(n_list), sd, mean, slope, se, ci, dict(samples))


def transversal_exponent(batch: EnvBatch, n_list, replicas: int = 300, *, threads: int = 1,
                         shared=None) -> ExponentFit:
    """Log-log slope of the sd of the midpoint deviation of ``Gamma_{0,(n,n)}``."""
    s = shared if shared is not None else kpz_samples(batch, n_list, replicas, threads)
    return _sd_slope(n_list, {n: s[n][0] for n in n_list})


def weight_exponent(batch: EnvBatch, n_list, replicas: int = 300, *, threads: int = 1,
                    shared=None) -> ExponentFit:
    """Log-log slope of the sd of ``T_{0,(n,n)} - 4n``."""
    s = shared if shared is not None else kpz_samples(batch, n_list, replicas, threads)
    return _sd_slope(n_list, {n: s[n][1] for n in n_list})


# ------------------------------------------------------------- disjointness


def _disjoint_flags(env: EnvHandle, n: int, eps_list) -> np.ndarray:
    """Strict quadrangle inequality for every ``eps`` from one shared sweep."""
    s0 = int(math.ceil(space_scale(n)))
    offs = [int(math.ceil(space_scale(n) * e)) for e in eps_list]
    x0 = -s0
    xmax = n + max(offs)
    width = xmax - x0 + 1
    la, lb, _, _ = sweep_pair(env, x0, 0, width, n + 1, point_init(width, 0), point_init(width, 2 * s0))
    out = np.empty(len(eps_list), dtype=bool)
    for i, k in enumerate(offs):
        y1, y2 = n - k - x0, n + k - x0
        out[i] = la[y1] + lb[y2] > la[y2] + lb[y1]
    return out


@dataclass
class DisjointnessFit:
    eps: np.ndarray
    successes: np.ndarray
    replicas: int
    probability: np.ndarray
    wilson: np.ndarray  # (k, 2)
    slope: float
    stderr: float
    ci: tuple[float, float]
    used: np.ndarray

    def to_dict(self) -> dict:
        return {
            "scales": [float(e) for e in self.eps],
            "counts": [int(k) for k in self.successes],
            "replicas": self.replicas,
            "probability": [float(p) for p in self.probability],
            "slope": self.slope,
            "stderr": self.stderr,
            "ci": list(self.ci),
        }


def fit_disjointness(eps, successes, replicas: int) -> DisjointnessFit:
    """WLS of ``log p`` on ``log eps`` with sigmas from the Wilson intervals."""
    eps = np.asarray(eps, dtype=float)
    k = np.asarray(successes, dtype=int)
    p = k / replicas
    wil = np.array([wilson_interval(int(ki), replicas) for ki in k])
    used = k > 0
    if used.sum() < 2:
        raise DegenerateCounts("need at least two scales with successes")
    # sigma of log p from the Wilson half-width
    sig = (np.log(wil[used, 1]) - np.log(np.maximum(wil[used, 0], 1e-300))) / (2 * 1.959963984540054)
    slope, _, se = wls(np.log(eps[used]), np.log(p[used]), sig)
    return DisjointnessFit(eps, k, replicas, p, wil, slope, se, (slope - 1.96 * se, slope + 1.96 * se), used)


def disjointness_probability(batch: EnvBatch, eps_list, replicas: int, *, n: int = 4096,
                             threads: int = 1) -> DisjointnessFit:
    """Fraction of replicas where the geodesics from the -1 and +1 sources to
    ``-eps`` and ``+eps`` on Row ``n`` are disjoint, with a log-log slope."""
    flags = np.array(replica_map(lambda r: _disjoint_flags(batch[r], n, eps_list), range(replicas), threads))
    return fit_disjointness(eps_list, flags.sum(axis=0), replicas)


# ------------------------------------------------------- non-constant sets


def nc_counts(env: EnvHandle, n: int, scales=DYADIC_SCALES, *, taus=(1e-7,), t_lo: float = 1.0,
              t_hi: float = 2.0, x_halfwidth: float = 1.0, temporal_only: bool = False):
    """Box counts of the 2D and temporal non-constant sets for each ``tau``.

    Returns ``{tau: (counts_2d, counts_temporal)}``; ``counts_2d`` is None when
    ``temporal_only``.
    """
    hw = 0.0 if temporal_only else x_halfwidth
    grid = difference_grid(env, n, t_lo, t_hi, hw)
    out = {}
    for tau in taus:
        col = MaskBuilder(column_grid(grid, 0), tau)
        temporal = np.array([col.mask(d).count for d in scales])
        if temporal_only:
            out[tau] = (None, temporal)
        else:
            mb = MaskBuilder(grid, tau)
            out[tau] = (np.array([mb.mask(d).count for d in scales]), temporal)
    return out


# ------------------------------------------------------------------- KS


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float


def ks_two_sample(a, b) -> KSResult:
    """Two-sided two-sample KS statistic and its asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be non-empty")
    allv = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, allv, side="right") / a.size
    cdf_b = np.searchsorted(b, allv, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    en = a.size * b.size / (a.size + b.size)
    p = float(special.kolmogorov(math.sqrt(en) * d)) if d > 0 else 1.0
    return KSResult(d, min(1.0, p))


def ks_one_sample(x, cdf) -> KSResult:
    """Two-sided one-sample KS against a continuous ``cdf`` (asymptotic p-value)."""
    x = np.sort(np.asarray(x, dtype=float))
    if x.size == 0:
        raise ValueError("sample must be non-empty")
    F = cdf(x)
    i = np.arange(1, x.size + 1)
    d = float(max(np.max(i / x.size - F), np.max(F - (i - 1) / x.size)))
    return KSResult(d, float(special.kolmogorov(math.sqrt(x.size) * d)))


def exp_cdf(rate: float = 1.0):
    return lambda t: -np.expm1(-rate * np.maximum(t, 0.0))


def ks_scipy_check(a, b) -> float:
    """p-value from scipy's asymptotic two-sample test, for cross-checking."""
    return float(stats.ks_2samp(a, b, method="asymp").pvalue)
