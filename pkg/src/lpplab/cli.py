"""Experiment driver: ``lpplab run | report | list-experiments``.

A run reads one JSON config, evaluates every replica (replica ``r`` uses the
environment ``EnvHandle(master_seed, r)``), and writes three files into the
output directory:

``results.csv``
    long format ``experiment, n, replica, key, value``.
``fits.json``
    the reduced fit, with the acceptance band and the pass/fail verdict.
``manifest.json``
    config echo, version, timestamps, per-replica status and file digests.
    Written last; a run that dies early leaves no manifest.

Exit codes: 0 ok, 1 usage, 2 acceptance failure (``report``), 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .busemann import busemann_increments, check_argmax_property
from .enumeration import brute_geodesic, brute_passage
from .env import EnvBatch, EnvHandle, parse_seed, uniforms
from .errors import (ConfigError, DegenerateCounts, LppError, MissingManifest, NoStabilization,
                     TieDetected, WindowClipped)
from .fractal import (DYADIC_SCALES, DEFAULT_FIT, _disjoint_flags, _sd_slope, _tube_occupation,
                      box_dimension, exp_cdf, fit_disjointness, gamma0, ks_one_sample,
                      ks_two_sample, local_time_from_path, nc_counts, point_to_point_sample,
                      tail_fit, tube_points, zero_counts)
from .geodesic import geodesic
from .interface import INTERFACE_REPLICA_BIT, _geodesic_crossings, _interface_crossings
from .lpp import Row, passage_time, profile_from_point, space_scale
from .parallel import replica_map
from .profile import DEFAULT_TAU, difference_grid, row_violations, zeta_by_levels, zeta_mass

OUTPUT_ENV = "LPPLAB_OUTPUT"
DEFAULT_OUTPUT = "lpplab-out"
ERROR_FRACTION = 0.10

EXIT_OK, EXIT_USAGE, EXIT_FAIL, EXIT_RUNTIME = 0, 1, 2, 3


# ------------------------------------------------------------------ config

# key -> (type, description); "ints" / "floats" are lists
FIELDS = {
    "experiment": ("str", "experiment name"),
    "n": ("int", "system size"),
    "n_list": ("ints", "system sizes"),
    "replicas": ("int", "number of replicas"),
    "master_seed": ("seed", "64-bit seed, decimal or 0x-hex"),
    "tau": ("float", "jump tolerance for non-constant masks"),
    "scales": ("floats", "box sizes delta"),
    "fit_window": ("ints", "inclusive index range into scales"),
    "eps_list": ("floats", "endpoint separations"),
    "w": ("float", "tube half-width"),
    "w_list": ("floats", "window half-widths"),
    "h": ("float", "time horizon"),
    "budget": ("int", "cap on the coalescence target distance"),
    "ks": ("ints", "anti-diagonals L_k for crossings"),
    "window": ("int", "half-width of the argmax window"),
    "H": ("float", "interface truncation factor"),
    "slack": ("float", "interface overshoot in units of the space scale"),
    "rectangles": ("int", "rectangles per replica"),
    "quadruples": ("int", "sampled quadruples per replica"),
    "levels": ("int", "level grid size"),
    "direction": ("str", "horizontal or vertical"),
    "band": ("floats", "acceptance band [lo, hi]"),
    "output_dir": ("str", "output directory"),
    "threads": ("int", "worker threads"),
}


@dataclass
class ExperimentConfig:
    experiment: str
    replicas: int
    master_seed: int = 0
    threads: int = 1
    output_dir: str | None = None
    params: dict = field(default_factory=dict)

    def get(self, key):
        return self.params[key]

    def echo(self) -> dict:
        out = {"experiment": self.experiment, "replicas": self.replicas,
               "master_seed": self.master_seed}
        out.update({k: self.params[k] for k in sorted(self.params)})
        return out


def _coerce(key: str, kind: str, value):
    try:
        if kind == "str":
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError
            return value
        if kind == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError
            return float(value)
        if kind == "seed":
            return parse_seed(value)
        if kind in ("ints", "floats"):
            if not isinstance(value, list) or not value:
                raise TypeError
            return [_coerce(key, kind[:-1], v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {kind}, got {value!r}") from None
    raise ConfigError(key, f"unknown field type {kind}")


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config document against the experiment registry."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for key in doc:
        if key not in FIELDS:
            raise ConfigError(key, "unknown key")
    if "experiment" not in doc:
        raise ConfigError("experiment", "required")
    name = _coerce("experiment", "str", doc["experiment"])
    if name not in REGISTRY:
        raise ConfigError("experiment", f"unknown experiment {name!r}")
    spec = REGISTRY[name]
    values = {k: _coerce(k, FIELDS[k][0], v) for k, v in doc.items()}
    for key in values:
        if key not in spec.allowed and key not in ("experiment", "replicas", "master_seed",
                                                    "threads", "output_dir", "band"):
            raise ConfigError(key, f"not used by {name}")
    params = dict(spec.defaults)
    params.update({k: v for k, v in values.items()
                   if k not in ("experiment", "replicas", "master_seed", "threads", "output_dir")})
    for key in spec.required:
        if key not in params:
            raise ConfigError(key, f"required by {name}")
    replicas = values.get("replicas", spec.default_replicas)
    if replicas < 1:
        raise ConfigError("replicas", "must be >= 1")
    threads = values.get("threads", 1)
    if threads < 1:
        raise ConfigError("threads", "must be >= 1")
    band = params.get("band", list(spec.band))
    if len(band) != 2 or band[0] > band[1]:
        raise ConfigError("band", "expected [lo, hi] with lo <= hi")
    params["band"] = [float(band[0]), float(band[1])]
    if spec.validate is not None:
        spec.validate(params)
    return ExperimentConfig(name, replicas, values.get("master_seed", 0), threads,
                            values.get("output_dir"), params)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return parse_config(doc)


# ---------------------------------------------------------------- registry


@dataclass
class ReplicaOutcome:
    status: str  # ok | censored | error
    rows: list = field(default_factory=list)  # (n, key, value)
    data: object = None
    message: str = ""


@dataclass
class Experiment:
    name: str
    summary: str
    target: str
    metric: str
    band: tuple[float, float]
    replica: Callable  # (cfg, env, r) -> ReplicaOutcome
    reduce: Callable  # (cfg, outcomes) -> dict
    required: tuple = ()
    defaults: dict = field(default_factory=dict)
    optional: tuple = ()
    default_replicas: int = 1
    validate: Callable | None = None

    @property
    def allowed(self) -> set:
        return set(self.required) | set(self.defaults) | set(self.optional)


REGISTRY: dict[str, Experiment] = {}


def register(exp: Experiment) -> Experiment:
    REGISTRY[exp.name] = exp
    return exp


def _ok(rows, data=None) -> ReplicaOutcome:
    return ReplicaOutcome("ok", rows, data)


def _censored(rows=(), data=None, message="") -> ReplicaOutcome:
    return ReplicaOutcome("censored", list(rows), data, message)


def _ok_data(outcomes):
    return [o.data for o in outcomes if o.status == "ok"]


def _in_band(value, band) -> bool:
    return value is not None and math.isfinite(value) and band[0] <= value <= band[1]


def _overlaps(ci, band) -> bool:
    return ci[0] <= band[1] and ci[1] >= band[0]


def _scales(cfg):
    return np.asarray(cfg.params.get("scales", DYADIC_SCALES), dtype=float)


# ----------------------------------------------------------- dp-oracle


def _dp_oracle_replica(cfg, env, r):
    side = cfg.get("n")
    u = uniforms(env, "dp-oracle", 0, 6)
    w, h = 1 + int(u[0] * side), 1 + int(u[1] * side)
    ox, oy = int(u[2] * 41) - 20, int(u[3] * 41) - 20
    p, q = (ox, oy), (ox + w - 1, oy + h - 1)
    bad = {"passage": 0, "geodesic": 0, "profile": 0, "grid": 0}
    checked = 0

    if passage_time(env, p, q) != brute_passage(env, p, q):
        bad["passage"] += 1
    best = brute_geodesic(env, p, q)
    if best is not None:
        got = [tuple(int(c) for c in v) for v in geodesic(env, p, q).vertices]
        bad["geodesic"] += int(got != best)
    prof = profile_from_point(env, p, Row(q[1]), p[0], q[0]).values
    bad["profile"] += sum(prof[i] != brute_passage(env, p, (p[0] + i, q[1])) for i in range(w))
    checked += 2 + w

    # difference grid from two sources on row 0, rows 1..2 or 1..3, |x - y| <= 1
    rows = 2 + int(h > 3)
    sa = ox % 3 - 3
    sb = sa + 1 + int(u[4] * 2)
    grid = difference_grid(env, 1, 1.0, float(rows), 1.5 / space_scale(1), sources=((sa, 0), (sb, 0)))
    for i in range(grid.rows):
        y = grid.row_lo + i
        for j in range(grid.cols):
            x = y + grid.rel_lo + j
            ta, tb = brute_passage(env, (sa, 0), (x, y)), brute_passage(env, (sb, 0), (x, y))
            if math.isinf(ta) or math.isinf(tb):
                continue
            checked += 1
            bad["grid"] += int(grid.raw[i, j] != ta - tb)
    rows_out = [(side, f"mismatch_{k}", v) for k, v in bad.items()] + [(side, "checked", checked)]
    return _ok(rows_out, sum(bad.values()))


def _dp_oracle_reduce(cfg, outcomes):
    total = int(sum(_ok_data(outcomes)))
    return {"n_list": [cfg.get("n")], "metric": "mismatches", "value": total,
            "mismatches": total}


register(Experiment(
    "dp-oracle", "DP passage times, geodesics and difference grids against path enumeration",
    "0 mismatches (exact enumeration)", "mismatches", (0.0, 0.0),
    _dp_oracle_replica, _dp_oracle_reduce, defaults={"n": 6}, default_replicas=200,
    validate=lambda p: _check(p["n"] >= 1 and p["n"] <= 8, "n", "window side must be in 1..8")))


def _check(cond, key, msg):
    if not cond:
        raise ConfigError(key, msg)


# ------------------------------------------------- quadrangle / monotone D

QUAD_SOURCES = 8


def _distinct_pair(u, v, m):
    """Uniform ordered pairs ``a < b`` from ``0..m-1`` built from two uniforms each."""
    a = (u * m).astype(np.int64)
    b = (v * (m - 1)).astype(np.int64)
    b += b >= a
    return np.minimum(a, b), np.maximum(a, b)


def _quadrangle_replica(cfg, env, r):
    n, k = cfg.get("n"), cfg.get("quadruples")
    s = int(math.ceil(space_scale(n)))
    u = uniforms(env, "quadrangle", 0, QUAD_SOURCES + 4 * k)
    xs = np.unique((u[:QUAD_SOURCES] * (2 * s + 1)).astype(np.int64) - s)
    lo, hi = n - s, n + s
    prof = np.array([profile_from_point(env, (int(x), 0), Row(n), lo, hi).values for x in xs])
    v = u[QUAD_SOURCES:].reshape(k, 4)
    i1, i2 = _distinct_pair(v[:, 0], v[:, 1], len(xs))
    j1, j2 = _distinct_pair(v[:, 2], v[:, 3], hi - lo + 1)
    lhs = prof[i1, j1] + prof[i2, j2]
    rhs = prof[i1, j2] + prof[i2, j1]
    quad = int(np.count_nonzero(lhs < rhs))
    mono = row_violations(difference_grid(env, n, 1.0, 2.0, 1.0))
    rows = [(n, "quadrangle_violations", quad), (n, "quadruples_checked", k),
            (n, "monotonicity_violations", mono)]
    return _ok(rows, (quad, mono, k))


def _quadrangle_reduce(cfg, outcomes):
    data = np.array(_ok_data(outcomes), dtype=np.int64).reshape(-1, 3)
    quad, mono, checked = (int(c) for c in data.sum(axis=0))
    return {"n_list": [cfg.get("n")], "metric": "violations", "value": quad + mono,
            "quadrangle_violations": quad, "monotonicity_violations": mono,
            "quadruples_checked": checked}


register(Experiment(
    "quadrangle", "Quadrangle inequality of passage times and row monotonicity of D",
    "0 violations (exact max-plus identities)", "violations", (0.0, 0.0),
    _quadrangle_replica, _quadrangle_reduce, defaults={"n": 1024, "quadruples": 1000},
    default_replicas=100,
    validate=lambda p: _check(p["quadruples"] >= 1, "quadruples", "must be >= 1")))


# ------------------------------------------------------ busemann increments


def _busemann_increments_replica(cfg, env, r):
    n, budget = cfg.get("n"), cfg.get("budget")
    half = n // 2
    if cfg.get("direction") == "horizontal":
        pts = [(x, 0) for x in range(-half, n - half + 1)]
        sign = -1.0  # G decreases to the right
    else:
        pts = [(0, y) for y in range(n - half, -half - 1, -1)]
        sign = 1.0  # G increases downwards
    inc = sign * busemann_increments(env, pts, budget)
    rows = [(n, "increment", float(v)) for v in inc if np.isfinite(v)]
    lost = int(np.count_nonzero(~np.isfinite(inc)))
    rows.append((n, "censored_increments", lost))
    vals = inc[np.isfinite(inc)]
    return _ok(rows, vals) if lost == 0 else _censored(rows, vals, f"{lost} increments unresolved")


def _busemann_increments_reduce(cfg, outcomes):
    vals = np.concatenate([o.data for o in outcomes if o.data is not None] or [np.zeros(0)])
    censored = sum(o.status == "censored" for o in outcomes)
    if vals.size == 0:
        return {"metric": "mean", "value": None, "censored": censored}
    ks = ks_one_sample(vals, exp_cdf(0.5))
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else float("nan")
    return {"n_list": [cfg.get("n")], "metric": "mean", "value": mean, "stderr": se,
            "ci": [mean - 1.96 * se, mean + 1.96 * se], "count": int(vals.size),
            "variance": float(vals.var(ddof=1)) if vals.size > 1 else None,
            "ks_statistic": ks.statistic, "ks_pvalue": ks.pvalue,
            "checks": {"ks_not_rejected_at_0.01": ks.pvalue >= 0.01}, "censored": censored}


register(Experiment(
    "busemann-increments", "Busemann increments along a row or column against Exp(1/2)",
    "Exp(1/2) increments, mean 2", "mean", (1.94, 2.06),
    _busemann_increments_replica, _busemann_increments_reduce,
    defaults={"n": 1000, "budget": 8000, "direction": "horizontal"}, default_replicas=10,
    validate=lambda p: _check(p["direction"] in ("horizontal", "vertical"), "direction",
                              "must be horizontal or vertical")))


# --------------------------------------------------------- busemann argmax


def _busemann_argmax_replica(cfg, env, r):
    n, window, budget = cfg.get("n"), cfg.get("window"), cfg.get("budget")
    u = uniforms(env, "argmax-point", 0, 2)
    p = (int(u[0] * 9) - 4, int(u[1] * 9) - 4)
    try:
        rep = check_argmax_property(env, p, p[1] + n, window, budget)
    except (WindowClipped, NoStabilization) as exc:
        return _censored([(n, "censored", 1)], None, str(exc))
    if rep.censored:
        return _censored([(n, "censored", 1)], None, "coalescence unresolved")
    rows = [(n, "holds", int(rep.holds)), (n, "crossing_ok", int(rep.crossing_ok)),
            (n, "value_ok", int(rep.value_ok)), (n, "m_star", rep.m_star)]
    return _ok(rows, rep.holds)


def _busemann_argmax_reduce(cfg, outcomes):
    res = _ok_data(outcomes)
    failures = sum(not h for h in res)
    return {"n_list": [cfg.get("n")], "metric": "failures", "value": failures,
            "checked": len(res), "censored": sum(o.status == "censored" for o in outcomes)}


register(Experiment(
    "busemann-argmax", "Semi-infinite geodesic exit point equals the Busemann argmax",
    "0 failures", "failures", (0.0, 0.0),
    _busemann_argmax_replica, _busemann_argmax_reduce,
    defaults={"n": 20, "window": 60, "budget": 4000}, default_replicas=20))


# ---------------------------------------------------------------- duality


def _duality_ks(cfg):
    n = cfg.get("n")
    return tuple(cfg.params.get("ks") or (n // 4, n // 2, n))


def _duality_replica(cfg, env, r):
    n, ks = cfg.get("n"), _duality_ks(cfg)
    budget = cfg.params.get("budget") or 32 * max(ks)
    ienv = EnvHandle(env.master_seed, env.replica_id | INTERFACE_REPLICA_BIT)
    g = _geodesic_crossings(env, n, ks, budget)
    i = _interface_crossings(ienv, n, ks, cfg.get("H"), cfg.get("slack"))
    rows = []
    for obj, vals in (("geodesic", g), ("interface", i)):
        if vals is not None:
            rows += [(n, f"{obj}@k={k}", float(v)) for k, v in zip(ks, vals)]
    if g is None or i is None:
        return _censored(rows, (g, i), "geodesic unresolved" if g is None else "interface clipped")
    return _ok(rows, (g, i))


def _duality_reduce(cfg, outcomes):
    ks = _duality_ks(cfg)
    data = [o.data for o in outcomes if o.data is not None]
    geo = [d[0] for d in data if d[0] is not None]
    itf = [d[1] for d in data if d[1] is not None]
    per_k = {}
    pmin = None
    for j, k in enumerate(ks):
        a = np.array([g[j] for g in geo])
        b = np.array([i[j] for i in itf])
        if a.size and b.size:
            res = ks_two_sample(a, b)
            per_k[str(k)] = {"statistic": res.statistic, "pvalue": res.pvalue,
                             "geodesic_mean": float(a.mean()), "interface_mean": float(b.mean())}
            pmin = res.pvalue if pmin is None else min(pmin, res.pvalue)
    return {"n_list": [cfg.get("n")], "scales": list(ks), "metric": "min_pvalue", "value": pmin,
            "ks": per_k, "censored": sum(o.status == "censored" for o in outcomes),
            "geodesic_samples": len(geo), "interface_samples": len(itf)}


register(Experiment(
    "duality", "Crossing laws of the semi-infinite geodesic and the competition interface",
    "equal in law (KS, Bonferroni 0.01/3)", "min_pvalue", (0.01 / 3, 1.0),
    _duality_replica, _duality_reduce, defaults={"n": 1000, "H": 4.0, "slack": 3.0},
    optional=("ks", "budget"), default_replicas=500))


# ------------------------------------------------------------ KPZ exponents

KPZ_N = [2**k for k in range(8, 14)]


def _kpz_replica(cfg, env, r):
    rows, data = [], {}
    for n in cfg.get("n_list"):
        dev, wt = point_to_point_sample(env, n)
        rows += [(n, "deviation", dev), (n, "centred_weight", float(wt))]
        data[n] = (dev, wt)
    return _ok(rows, data)


def _kpz_collect(cfg, outcomes, idx):
    data = _ok_data(outcomes)
    return {n: np.array([d[n][idx] for d in data], dtype=float) for n in cfg.get("n_list")}


def _transversal_reduce(cfg, outcomes):
    n_list = cfg.get("n_list")
    samples = _kpz_collect(cfg, outcomes, 0)
    fit = _sd_slope(n_list, samples)
    se_mean = {n: samples[n].std(ddof=1) / math.sqrt(samples[n].size) for n in n_list}
    centred = all(abs(samples[n].mean()) <= 3 * se_mean[n] for n in n_list)
    pooled1 = np.mean(np.concatenate([np.abs(samples[n]) > n ** (2 / 3) for n in n_list]))
    pooled2 = np.mean(np.concatenate([np.abs(samples[n]) > 2 * n ** (2 / 3) for n in n_list]))
    ratio = float(pooled1 / pooled2) if pooled2 > 0 else float("inf")
    out = fit.to_dict()
    out.update({"metric": "slope", "value": fit.slope, "tail_ratio_x1_x2": ratio,
                "checks": {"mean_within_3se": bool(centred), "tail_ratio_ge_5": ratio >= 5}})
    return out


def _weight_reduce(cfg, outcomes):
    n_list = cfg.get("n_list")
    samples = _kpz_collect(cfg, outcomes, 1)
    fit = _sd_slope(n_list, samples)
    sd = dict(zip(n_list, fit.sd))
    ratios = {f"{n}->{8 * n}": float(sd[8 * n] / sd[n]) for n in n_list if 8 * n in sd}
    out = fit.to_dict()
    out.update({"metric": "slope", "value": fit.slope, "sd_ratio_8n": ratios,
                "checks": {"centred_mean_negative": bool(np.all(fit.mean < 0)),
                           "sd_ratio_8n_in_2pm0.4": all(1.6 <= v <= 2.4 for v in ratios.values())}})
    return out


register(Experiment(
    "transversal", "Transversal fluctuation exponent of point-to-point geodesics",
    "2/3 (transversal exponent)", "slope", (0.60, 0.73),
    _kpz_replica, _transversal_reduce, defaults={"n_list": KPZ_N}, default_replicas=300))

register(Experiment(
    "weight-fluct", "Passage-time fluctuation exponent",
    "1/3 (weight exponent)", "slope", (0.27, 0.40),
    _kpz_replica, _weight_reduce, defaults={"n_list": KPZ_N}, default_replicas=300))


# ------------------------------------------------------------ disjointness

DISJOINT_EPS = [2.0**-k for k in range(1, 6)]


def _disjointness_replica(cfg, env, r):
    n = cfg.get("n")
    flags = _disjoint_flags(env, n, cfg.get("eps_list"))
    return _ok([(n, f"disjoint@eps={e!r}", int(f)) for e, f in zip(cfg.get("eps_list"), flags)], flags)


def _disjointness_reduce(cfg, outcomes):
    flags = np.array(_ok_data(outcomes))
    eps = cfg.get("eps_list")
    out = {"n_list": [cfg.get("n")], "metric": "slope", "censored": 0}
    try:
        fit = fit_disjointness(eps, flags.sum(axis=0), len(flags))
    except DegenerateCounts as exc:
        out.update({"value": None, "error": str(exc)})
        return out
    out.update(fit.to_dict())
    out["value"] = fit.slope
    out["scales_used"] = [float(e) for e, u in zip(eps, fit.used) if u]
    return out


register(Experiment(
    "disjointness", "Probability that geodesics from nearby sources to nearby targets are disjoint",
    "1/2 (disjointness exponent)", "slope", (0.38, 0.65),
    _disjointness_replica, _disjointness_reduce,
    defaults={"n": 4096, "eps_list": DISJOINT_EPS}, default_replicas=5000,
    validate=lambda p: _check(len(p["eps_list"]) >= 4 and all(0 < e <= 0.5 for e in p["eps_list"]),
                              "eps_list", "need at least four values in (0, 0.5]")))


# ------------------------------------------------------------- dimensions


def _dim_z_replica(cfg, env, r):
    n = cfg.get("n")
    scales = _scales(cfg)
    counts = zero_counts(gamma0(env, n), n, scales)
    return _ok([(n, f"count@delta={d!r}", int(c)) for d, c in zip(scales, counts)], counts)


def _dimension_fit(cfg, counts, scales, band):
    est = box_dimension(np.asarray(counts), scales, tuple(cfg.params.get("fit_window", DEFAULT_FIT)))
    out = est.to_dict()
    i0, i1 = est.fit_window
    sub = slice(i0, i1 + 1)
    boxes = np.ceil(1.0 / scales[sub])
    frac = est.counts[sub] / boxes
    out["empty_fraction_rate"] = float(np.polyfit(np.log(scales[sub]), np.log(frac), 1)[0])
    out["ci_overlaps_band"] = _overlaps(est.bootstrap_ci, band)
    return est, out


def _dim_z_reduce(cfg, outcomes):
    scales = _scales(cfg)
    est, out = _dimension_fit(cfg, _ok_data(outcomes), scales, cfg.get("band"))
    out.update({"n_list": [cfg.get("n")], "metric": "slope", "value": est.slope,
                "censored": sum(o.status == "censored" for o in outcomes),
                "checks": {"ci_overlaps_band": out["ci_overlaps_band"],
                           "empty_fraction_rate_in_[0.5,0.85]": 0.5 <= out["empty_fraction_rate"] <= 0.85}})
    return out


register(Experiment(
    "dim-z", "Box-counting dimension of the geodesic zero set",
    "1/3 (Theorem: geodesic zero set)", "slope", (0.22, 0.45),
    _dim_z_replica, _dim_z_reduce, defaults={"n": 4096}, optional=("scales", "fit_window"),
    default_replicas=50))


def _taus(cfg):
    tau = cfg.get("tau")
    return (tau / 10, tau, tau * 10)


def _nc_replica(temporal: bool):
    def run(cfg, env, r):
        n, scales = cfg.get("n"), _scales(cfg)
        res = nc_counts(env, n, scales, taus=_taus(cfg), temporal_only=temporal)
        rows, data = [], {}
        for t, (c2, ct) in res.items():
            c = ct if temporal else c2
            data[t] = c
            rows += [(n, f"count@delta={d!r}@tau={t!r}", int(v)) for d, v in zip(scales, c)]
        return _ok(rows, data)
    return run


def _validate_nc(p):
    smallest = min(p.get("scales", DYADIC_SCALES))
    _check(smallest * space_scale(p["n"]) >= 2 and smallest * p["n"] >= 2, "scales",
           f"smallest delta spans fewer than two lattice cells at n={p['n']}")


def _nc_reduce(rate_band):
    def reduce(cfg, outcomes):
        scales, band = _scales(cfg), cfg.get("band")
        data = _ok_data(outcomes)
        fits = {}
        for t in _taus(cfg):
            est, out = _dimension_fit(cfg, [d[t] for d in data], scales, band)
            fits[t] = (est, out)
        est, out = fits[cfg.get("tau")]
        agree = all(f[0].bootstrap_ci[0] <= g[0].slope <= f[0].bootstrap_ci[1]
                    for f in fits.values() for g in fits.values())
        rate = out["empty_fraction_rate"]
        out.update({
            "n_list": [cfg.get("n")], "metric": "slope", "value": est.slope, "censored": 0,
            "tau_sensitivity": {repr(t): f[0].slope for t, f in fits.items()},
            "checks": {"ci_overlaps_band": out["ci_overlaps_band"], "tau_agreement": agree,
                       f"empty_fraction_rate_in_{list(rate_band)}": rate_band[0] <= rate <= rate_band[1]},
        })
        return out
    return reduce


register(Experiment(
    "dim-nc-temporal", "Box-counting dimension of the temporal non-constant set at x = 0",
    "2/3 (Theorem: temporal non-constant set)", "slope", (0.50, 0.85),
    _nc_replica(True), _nc_reduce((0.2, 0.5)), defaults={"n": 4096, "tau": DEFAULT_TAU},
    optional=("scales", "fit_window"), default_replicas=50, validate=_validate_nc))

register(Experiment(
    "dim-nc-2d", "Box-counting dimension of the space-time non-constant set",
    "5/3 (Theorem: space-time non-constant set)", "slope", (1.45, 1.85),
    _nc_replica(False), _nc_reduce((-1.0, 0.0)), defaults={"n": 4096, "tau": DEFAULT_TAU},
    optional=("scales", "fit_window"), default_replicas=50, validate=_validate_nc))


# ------------------------------------------------------------------- zeta

ZETA_RECT = (-0.5, 0.5, 1.0, 2.0)


def _zeta_mean_replica(cfg, env, r):
    n = cfg.get("n")
    a, b, g, h = ZETA_RECT
    grid = difference_grid(env, n, g, h, max(abs(a), abs(b)) + 0.05)
    z = zeta_mass(grid, a, b, g, h)
    return _ok([(n, "zeta", z), (n, "row_violations", row_violations(grid))], z)


def _zeta_mean_reduce(cfg, outcomes):
    z = np.array(_ok_data(outcomes))
    a, b, g, h = ZETA_RECT
    target = 4 * (b - a) * math.log(h / g)
    mean = float(z.mean())
    se = float(z.std(ddof=1) / math.sqrt(z.size)) if z.size > 1 else float("nan")
    return {"n_list": [cfg.get("n")], "metric": "relative_error",
            "value": abs(mean - target) / target, "mean": mean, "stderr": se,
            "ci": [mean - 1.96 * se, mean + 1.96 * se], "target_value": target, "censored": 0}


register(Experiment(
    "zeta-mean", "Mean zeta-mass of [-0.5, 0.5] x (1, 2]",
    "4 ln 2 (mean zeta-mass)", "relative_error", (0.0, 0.10),
    _zeta_mean_replica, _zeta_mean_reduce, defaults={"n": 2000}, default_replicas=500))


def _zeta_decomp_replica(cfg, env, r):
    n, k, L = cfg.get("n"), cfg.get("rectangles"), cfg.get("levels")
    grid = difference_grid(env, n, 1.0, 2.0, 1.0)
    vals = grid.values
    u = uniforms(env, "zeta-rectangles", 0, 4 * k).reshape(k, 4)
    rows, errs = [], []
    for j, (u0, u1, u2, u3) in enumerate(u):
        a = -0.9 + 1.2 * u0
        b = a + 0.1 + 0.6 * u1
        g = 1.0 + 0.6 * u2
        h = g + 0.1 + 0.3 * u3
        i0, i1 = math.ceil(g * n), math.floor(h * n)
        ca, cb = grid.col_index(grid.col_of(a)), grid.col_index(grid.col_of(b))
        block = vals[max(i0 - grid.row_lo, 0):i1 - grid.row_lo + 1, ca:cb + 1]
        levels = np.linspace(np.nanmin(block), np.nanmax(block), L)
        direct = zeta_mass(grid, a, b, g, h)
        recon = zeta_by_levels(grid, a, b, g, h, levels)
        err = abs(recon - direct) / direct if direct > 0 else abs(recon)
        errs.append(err)
        rows += [(n, f"direct@rect={j}", direct), (n, f"levels@rect={j}", recon)]
    return _ok(rows, errs)


def _zeta_decomp_reduce(cfg, outcomes):
    errs = np.concatenate([np.asarray(e) for e in _ok_data(outcomes)])
    return {"n_list": [cfg.get("n")], "metric": "max_relative_error", "value": float(errs.max()),
            "mean_relative_error": float(errs.mean()), "rectangles": int(errs.size), "censored": 0}


register(Experiment(
    "zeta-decomp", "zeta-mass against its reconstruction from level-curve occupations",
    "exact decomposition (quadrature error only)", "max_relative_error", (0.0, 0.02),
    _zeta_decomp_replica, _zeta_decomp_reduce,
    defaults={"n": 1000, "rectangles": 20, "levels": 2000}, default_replicas=20))


# -------------------------------------------------------------- local time


def _local_time_replica(cfg, env, r):
    n, h, ws = cfg.get("n"), cfg.get("h"), cfg.get("w_list")
    path = gamma0(env, int(math.ceil(h * n)))
    vals = [local_time_from_path(path, n, w, h) for w in ws]
    return _ok([(n, f"local_time@w={w!r}", v) for w, v in zip(ws, vals)], vals)


def _local_time_reduce(cfg, outcomes):
    ws = cfg.get("w_list")
    data = np.array(_ok_data(outcomes))
    means = data.mean(axis=0)
    dev = [abs(means[i + 1] / means[i] - 1) for i in range(len(ws) - 1)] if np.all(means > 0) else [float("inf")]
    return {"n_list": [cfg.get("n")], "scales": list(ws), "means": [float(m) for m in means],
            "metric": "max_adjacent_deviation", "value": float(max(dev)) if dev else 0.0,
            "censored": sum(o.status == "censored" for o in outcomes)}


register(Experiment(
    "local-time", "Stability of the local-time estimate at the origin as the window shrinks",
    "finite limit (local time exists)", "max_adjacent_deviation", (0.0, 0.15),
    _local_time_replica, _local_time_reduce,
    defaults={"n": 4096, "w_list": [0.2, 0.1, 0.05], "h": 1.0}, default_replicas=300))


# -------------------------------------------------------------- tube tail


def _tube_replica(cfg, env, r):
    n, w = cfg.get("n"), cfg.get("w")
    W = _tube_occupation(env, n, w, tube_points(n, w))
    return _ok([(n, "W_over_w", W / w)], W / w)


def _tube_reduce(cfg, outcomes):
    w = cfg.get("w")
    x = np.array(_ok_data(outcomes))
    fit = tail_fit(x, np.arange(0.5, 1.0 / w + 1e-9, 0.5))
    out = fit.to_dict()
    out.update({"n_list": [cfg.get("n")], "metric": "r2", "value": fit.r2, "censored": 0})
    return out


register(Experiment(
    "tube-tail", "Exponential tail of geodesic occupation of a thin tube",
    "exponential tail (linear log-exceedance)", "r2", (0.9, 1.0),
    _tube_replica, _tube_reduce, defaults={"n": 2048, "w": 0.1}, default_replicas=2000,
    validate=lambda p: _check(0 < p["w"] <= 0.5, "w", "must lie in (0, 0.5]")))


# -------------------------------------------------------------------- run


@dataclass
class RunResult:
    output_dir: Path
    fits: dict
    statuses: list
    exit_code: int


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _json_bytes(obj) -> bytes:
    return (json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n").encode()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def output_dir_for(cfg: ExperimentConfig) -> Path:
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT)) / cfg.experiment


def evaluate(cfg: ExperimentConfig) -> tuple[list[ReplicaOutcome], dict]:
    """Run every replica and reduce; no files are written."""
    exp = REGISTRY[cfg.experiment]
    batch = EnvBatch(cfg.master_seed)

    def one(r):
        try:
            return exp.replica(cfg, batch[r], r)
        except (NoStabilization, WindowClipped, TieDetected) as exc:
            return ReplicaOutcome("censored", [], None, f"{type(exc).__name__}: {exc}")
        except Exception as exc:  # recorded per replica, judged in aggregate
            return ReplicaOutcome("error", [], None, f"{type(exc).__name__}: {exc}")

    outcomes = replica_map(one, range(cfg.replicas), cfg.threads)
    usable = [o for o in outcomes if o.status != "error"]
    try:
        fits = exp.reduce(cfg, usable) if usable else {"metric": exp.metric, "value": None}
    except (LppError, ValueError) as exc:
        fits = {"metric": exp.metric, "value": None, "error": f"{type(exc).__name__}: {exc}"}
    band = cfg.get("band")
    checks = fits.get("checks", {})
    fits.update({
        "experiment": cfg.experiment, "target": exp.target, "band": band,
        "passed": _in_band(fits.get("value"), band) and all(checks.values()),
        "replicas": cfg.replicas,
        "errors": sum(o.status == "error" for o in outcomes),
    })
    fits.setdefault("censored", sum(o.status == "censored" for o in outcomes))
    for key in ("n_list", "scales", "counts", "slope", "stderr", "ci", "r2"):
        fits.setdefault(key, None)
    return outcomes, fits


def results_csv(cfg: ExperimentConfig, outcomes) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "n", "replica", "key", "value"])
    for r, o in enumerate(outcomes):
        for n, key, value in o.rows:
            w.writerow([cfg.experiment, n, r, key, _fmt(value)])
    return buf.getvalue().encode()


def run(cfg: ExperimentConfig, output_dir=None) -> RunResult:
    """Evaluate ``cfg`` and write results.csv, fits.json and (last) manifest.json."""
    out = Path(output_dir) if output_dir is not None else output_dir_for(cfg)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        manifest_path.unlink()
    started = _now()
    outcomes, fits = evaluate(cfg)
    files = {"results.csv": results_csv(cfg, outcomes), "fits.json": _json_bytes(fits)}
    for name, data in files.items():
        _atomic_write(out / name, data)
    errors = sum(o.status == "error" for o in outcomes)
    code = EXIT_RUNTIME if errors > ERROR_FRACTION * cfg.replicas else EXIT_OK
    statuses = [{"replica": r, "status": o.status, **({"message": o.message} if o.message else {})}
                for r, o in enumerate(outcomes)]
    manifest = {
        "config": cfg.echo(),
        "threads": cfg.threads,
        "version": __version__,
        "started": started,
        "finished": _now(),
        "replicas": statuses,
        "counts": {s: sum(o.status == s for o in outcomes) for s in ("ok", "censored", "error")},
        "digests": {name: hashlib.sha256(data).hexdigest() for name, data in files.items()},
        "exit_code": code,
    }
    _atomic_write(manifest_path, _json_bytes(manifest))
    return RunResult(out, fits, statuses, code)


# ----------------------------------------------------------------- report


def _find_runs(path: Path) -> list[Path]:
    if (path / "manifest.json").is_file():
        return [path]
    return sorted(p.parent for p in path.glob("*/manifest.json"))


def _fmt_num(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, int):
        return str(v)
    return f"{v:.4g}"


def report(path) -> tuple[str, bool]:
    """Summary table for one run directory or a directory of runs.

    Returns ``(text, all_passed)``; raises :class:`MissingManifest` listing
    what is missing when nothing can be reported.
    """
    path = Path(path)
    runs = _find_runs(path)
    if not runs:
        present = sorted(p.name for p in path.iterdir()) if path.is_dir() else []
        raise MissingManifest(f"no manifest.json under {path}; present: {present or 'nothing'}")
    lines = [f"{'experiment':<20} {'target':<52} {'metric':<24} {'value':>10} "
             f"{'ci':>21} {'band':>19}  result"]
    ok_all = True
    for run_dir in runs:
        missing = [f for f in ("results.csv", "fits.json") if not (run_dir / f).is_file()]
        if missing:
            raise MissingManifest(f"{run_dir}: missing {', '.join(missing)}")
        fits = json.loads((run_dir / "fits.json").read_text())
        ci = fits.get("ci")
        ci_txt = f"[{_fmt_num(ci[0])}, {_fmt_num(ci[1])}]" if ci else "-"
        band = fits["band"]
        verdict = "PASS" if fits["passed"] else "FAIL"
        ok_all &= bool(fits["passed"])
        lines.append(f"{fits['experiment']:<20} {'target ' + fits['target']:<52} {fits['metric']:<24} "
                     f"{_fmt_num(fits.get('value')):>10} {ci_txt:>21} "
                     f"{'[' + _fmt_num(band[0]) + ', ' + _fmt_num(band[1]) + ']':>19}  {verdict}")
        for name, flag in sorted(fits.get("checks", {}).items()):
            lines.append(f"{'':<20}   check {name}: {'ok' if flag else 'FAILED'}")
    return "\n".join(lines), ok_all


# -------------------------------------------------------------------- main


def list_experiments() -> str:
    width = max(len(k) for k in REGISTRY)
    return "\n".join(f"{name:<{width}}  {exp.summary}" for name, exp in sorted(REGISTRY.items()))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpplab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"lpplab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment from a JSON config")
    r.add_argument("config")
    r.add_argument("-o", "--output-dir", help=f"overrides the config and ${OUTPUT_ENV}")
    r.add_argument("-j", "--threads", type=int, help="overrides the config thread count")
    rp = sub.add_parser("report", help="summarise one run directory or a directory of runs")
    rp.add_argument("dir")
    sub.add_parser("list-experiments", help="list registered experiments")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command == "list-experiments":
        print(list_experiments())
        return EXIT_OK
    if args.command == "report":
        try:
            text, ok = report(args.dir)
        except MissingManifest as exc:
            print(f"lpplab: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(text)
        return EXIT_OK if ok else EXIT_FAIL
    try:
        cfg = load_config(args.config)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("threads", "must be >= 1")
            cfg.threads = args.threads
    except ConfigError as exc:
        print(f"lpplab: config error in {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"lpplab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        res = run(cfg, args.output_dir)
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME
    f = res.fits
    print(f"{cfg.experiment}: {f['metric']} = {_fmt_num(f.get('value'))} "
          f"({'PASS' if f['passed'] else 'FAIL'}) -> {res.output_dir}")
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
