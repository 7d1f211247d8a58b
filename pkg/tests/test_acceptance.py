"""Full-scale acceptance runs, one test per criterion.

Every run goes through the same path as ``lpplab run`` and writes its outputs
under a temporary directory.  Each test records a PASS/FAIL line that is
printed in the terminal summary, whether or not its assertion holds.
"""

import time

import pytest

from lpplab import cli
from lpplab.parallel import default_threads

pytestmark = pytest.mark.acceptance

THREADS = default_threads()


@pytest.fixture(scope="module")
def out_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def run_experiment(doc, out_root):
    cfg = cli.parse_config(dict(doc, threads=THREADS))
    start = time.perf_counter()
    res = cli.run(cfg, out_root / cfg.experiment)
    return res, time.perf_counter() - start


def describe(fits) -> str:
    value = fits.get("value")
    shown = "None" if value is None else f"{value:.4g}"
    lo, hi = fits["band"]
    failed = [k for k, ok in fits.get("checks", {}).items() if not ok]
    extra = f", failed checks: {', '.join(failed)}" if failed else ""
    return f"{fits['experiment']} {fits['metric']}={shown} band [{lo:.4g}, {hi:.4g}]{extra}"


def judge(record, number, title, runs, limit_s):
    """Record and return the verdict over ``[(RunResult, seconds), ...]``."""
    elapsed = sum(dt for _, dt in runs)
    ok = all(r.fits["passed"] and r.exit_code == 0 for r, _ in runs) and elapsed < limit_s
    parts = "; ".join(describe(r.fits) for r, _ in runs)
    verdict = "PASS" if ok else "FAIL"
    record(number, f"criterion {number:>2} {verdict}  {title}: {parts}; {elapsed:.0f} s (limit {limit_s} s)")
    return ok


def test_criterion_01_dp_exactness(acceptance_record, out_root):
    runs = [run_experiment({"experiment": "dp-oracle", "n": 6, "replicas": 200, "master_seed": 1}, out_root)]
    assert judge(acceptance_record, 1, "DP exactness", runs, 60)


def test_criterion_02_quadrangle_and_monotonicity(acceptance_record, out_root):
    runs = [run_experiment({"experiment": "quadrangle", "n": 1024, "quadruples": 1000,
                            "replicas": 100, "master_seed": 2}, out_root)]
    assert runs[0][0].fits["quadruples_checked"] == 100 * 1000
    assert judge(acceptance_record, 2, "quadrangle and D monotonicity", runs, 600)


def test_criterion_03_busemann_increment_law(acceptance_record, out_root):
    runs = [run_experiment({"experiment": "busemann-increments", "n": 1000, "budget": 8000,
                            "replicas": 10, "master_seed": 3}, out_root)]
    assert judge(acceptance_record, 3, "Busemann increment law", runs, 1800)


def test_criterion_04_duality(acceptance_record, out_root):
    runs = [run_experiment({"experiment": "duality", "n": 1000, "replicas": 500, "master_seed": 4}, out_root)]
    assert judge(acceptance_record, 4, "duality of crossings", runs, 3600)


def test_criterion_05_kpz_exponents(acceptance_record, out_root):
    n_list = [2**k for k in range(8, 14)]
    runs = [run_experiment({"experiment": name, "n_list": n_list, "replicas": 300, "master_seed": 5}, out_root)
            for name in ("transversal", "weight-fluct")]
    assert judge(acceptance_record, 5, "KPZ exponents", runs, 7200)


@pytest.mark.xfail(strict=False, reason="disjointness slope stays far below the band at n = 4096; "
                                        "see the project decisions ledger")
def test_criterion_06_disjointness(acceptance_record, out_root):
    runs = [run_experiment({"experiment": "disjointness", "n": 4096, "replicas": 5000, "master_seed": 6},
                           out_root)]
    assert judge(acceptance_record, 6, "disjointness scaling", runs, 10800)


def test_criterion_07_dimension_bands(acceptance_record, out_root):
    runs = [run_experiment({"experiment": name, "n": 4096, "replicas": 50, "master_seed": 7}, out_root)
            for name in ("dim-z", "dim-nc-temporal", "dim-nc-2d")]
    assert judge(acceptance_record, 7, "dimension bands", runs, 14400)


def test_criterion_08_zeta_mean(acceptance_record, out_root):
    runs = [run_experiment({"experiment": "zeta-mean", "n": 2000, "replicas": 500, "master_seed": 8}, out_root)]
    assert judge(acceptance_record, 8, "mean zeta mass", runs, 1800)


def test_criterion_09_zeta_decomposition(acceptance_record, out_root):
    runs = [run_experiment({"experiment": "zeta-decomp", "rectangles": 20, "replicas": 20, "master_seed": 9},
                           out_root)]
    assert judge(acceptance_record, 9, "zeta level decomposition", runs, 1200)


def test_criterion_10_tube_tail(acceptance_record, out_root):
    runs = [run_experiment({"experiment": "tube-tail", "n": 2048, "w": 0.1, "replicas": 2000,
                            "master_seed": 10}, out_root)]
    assert judge(acceptance_record, 10, "tube occupation tail", runs, 3600)


DETERMINISM_CONFIGS = [
    {"experiment": "dp-oracle", "replicas": 16},
    {"experiment": "quadrangle", "n": 256, "quadruples": 200, "replicas": 6},
    {"experiment": "transversal", "n_list": [32, 64, 128, 256], "replicas": 16},
    {"experiment": "busemann-increments", "n": 60, "budget": 2000, "replicas": 4},
    {"experiment": "zeta-decomp", "n": 200, "rectangles": 5, "levels": 200, "replicas": 4},
    {"experiment": "dim-z", "n": 512, "replicas": 6},
    {"experiment": "tube-tail", "n": 256, "replicas": 12},
]


def test_criterion_11_determinism(acceptance_record, tmp_path):
    start = time.perf_counter()
    differing = []
    for doc in DETERMINISM_CONFIGS:
        blobs = []
        for threads in (1, 4, 8):
            cfg = cli.parse_config(dict(doc, threads=threads, master_seed=11))
            out = cli.run(cfg, tmp_path / f"{doc['experiment']}-{threads}").output_dir
            blobs.append(((out / "results.csv").read_bytes(), (out / "fits.json").read_bytes()))
        if len(set(blobs)) != 1:
            differing.append(doc["experiment"])
    elapsed = time.perf_counter() - start
    ok = not differing
    names = ", ".join(d["experiment"] for d in DETERMINISM_CONFIGS)
    detail = f"differing: {', '.join(differing)}" if differing else "byte-identical results.csv and fits.json"
    acceptance_record(11, f"criterion 11 {'PASS' if ok else 'FAIL'}  determinism over threads 1/4/8 "
                          f"({names}): {detail}; {elapsed:.0f} s")
    assert ok
