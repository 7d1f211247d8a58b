import hashlib
import json

import pytest

from lpplab import cli
from lpplab.errors import ConfigError, MissingManifest


def write_config(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


# ------------------------------------------------------------------ config


def test_unknown_key_rejected_with_field_name():
    with pytest.raises(ConfigError) as err:
        cli.parse_config({"experiment": "dp-oracle", "replcas": 3})
    assert err.value.field == "replcas"


def test_key_not_used_by_experiment():
    with pytest.raises(ConfigError) as err:
        cli.parse_config({"experiment": "dp-oracle", "w": 0.1})
    assert err.value.field == "w"


@pytest.mark.parametrize("doc, field", [
    ({"experiment": "dp-oracle", "replicas": 0}, "replicas"),
    ({"experiment": "dp-oracle", "threads": 0}, "threads"),
    ({"experiment": "dp-oracle", "n": "six"}, "n"),
    ({"experiment": "dp-oracle", "band": [1, 0]}, "band"),
    ({"experiment": "nope"}, "experiment"),
    ({"replicas": 2}, "experiment"),
])
def test_invalid_values(doc, field):
    with pytest.raises(ConfigError) as err:
        cli.parse_config(doc)
    assert err.value.field == field


def test_defaults_and_seed_parsing():
    cfg = cli.parse_config({"experiment": "tube-tail", "master_seed": "0x10"})
    assert cfg.master_seed == 16
    assert cfg.get("n") == 2048 and cfg.get("w") == 0.1 and cfg.replicas == 2000
    assert cfg.get("band") == [0.9, 1.0]


# --------------------------------------------------------------- running


def test_dp_oracle_small_windows(tmp_path):
    cfg = cli.parse_config({"experiment": "dp-oracle", "n": 5, "replicas": 40, "master_seed": 3})
    res = cli.run(cfg, tmp_path)
    assert res.exit_code == 0
    assert res.fits["value"] == 0 and res.fits["passed"]
    header = (tmp_path / "results.csv").read_text().splitlines()[0]
    assert header == "experiment,n,replica,key,value"


def test_quadrangle_small():
    cfg = cli.parse_config({"experiment": "quadrangle", "n": 128, "quadruples": 200, "replicas": 3})
    _, fits = cli.evaluate(cfg)
    assert fits["value"] == 0 and fits["quadruples_checked"] == 600


@pytest.mark.parametrize("doc", [
    {"experiment": "dp-oracle", "replicas": 12},
    {"experiment": "transversal", "n_list": [16, 32, 64, 128], "replicas": 12},
    {"experiment": "busemann-argmax", "n": 6, "window": 20, "budget": 800, "replicas": 6},
])
def test_byte_identical_across_threads(tmp_path, doc):
    outs = []
    for i, threads in enumerate((1, 8, 1)):
        cfg = cli.parse_config(dict(doc, threads=threads, master_seed=99))
        outs.append(cli.run(cfg, tmp_path / str(i)).output_dir)
    for name in ("results.csv", "fits.json"):
        blobs = {(d / name).read_bytes() for d in outs}
        assert len(blobs) == 1, name


def test_manifest_written_last_with_digests(tmp_path):
    cfg = cli.parse_config({"experiment": "dp-oracle", "replicas": 4})
    res = cli.run(cfg, tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    for name in ("results.csv", "fits.json"):
        data = (tmp_path / name).read_bytes()
        assert man["digests"][name] == hashlib.sha256(data).hexdigest()
        assert (tmp_path / "manifest.json").stat().st_mtime_ns >= (tmp_path / name).stat().st_mtime_ns
    assert man["config"]["experiment"] == "dp-oracle"
    assert man["counts"] == {"ok": 4, "censored": 0, "error": 0}
    assert [s["replica"] for s in man["replicas"]] == [0, 1, 2, 3]
    assert man["exit_code"] == res.exit_code == 0
    assert not list(tmp_path.glob("*.tmp"))


def test_stale_manifest_removed_on_failure(tmp_path, monkeypatch):
    cfg = cli.parse_config({"experiment": "dp-oracle", "replicas": 2})
    cli.run(cfg, tmp_path)

    def boom(cfg):
        raise RuntimeError("interrupted")

    monkeypatch.setattr(cli, "evaluate", boom)
    with pytest.raises(RuntimeError):
        cli.run(cfg, tmp_path)
    assert not (tmp_path / "manifest.json").exists()


# ---------------------------------------------------------------- report


def test_report_missing_manifest(tmp_path):
    (tmp_path / "results.csv").write_text("x\n")
    with pytest.raises(MissingManifest) as err:
        cli.report(tmp_path)
    assert "results.csv" in str(err.value)
    assert cli.main(["report", str(tmp_path)]) == 1


def fake_run(path, experiment, value, band, target="t"):
    path.mkdir(parents=True)
    fits = {"experiment": experiment, "target": target, "metric": "slope", "value": value,
            "band": band, "ci": [value - 0.1, value + 0.1],
            "passed": cli._in_band(value, band)}
    (path / "fits.json").write_text(json.dumps(fits))
    (path / "results.csv").write_text("experiment,n,replica,key,value\n")
    (path / "manifest.json").write_text("{}")


def test_report_table_and_closed_band(tmp_path):
    target = cli.REGISTRY["dim-z"].target
    fake_run(tmp_path / "a", "dim-z", 0.22, [0.22, 0.45], target)
    fake_run(tmp_path / "b", "dim-nc-2d", 1.85, [1.45, 1.85])
    text, ok = cli.report(tmp_path)
    assert ok
    assert "target 1/3 (Theorem: geodesic zero set)" in text
    assert text.count("PASS") == 2
    assert cli.main(["report", str(tmp_path)]) == 0


def test_report_fail_exit_code(tmp_path):
    fake_run(tmp_path / "a", "dim-z", 0.4500001, [0.22, 0.45])
    text, ok = cli.report(tmp_path / "a")
    assert not ok and "FAIL" in text
    assert cli.main(["report", str(tmp_path)]) == 2


def test_in_band_rejects_non_finite():
    assert cli._in_band(0.0, [0.0, 0.0])
    assert not cli._in_band(None, [0.0, 1.0])
    assert not cli._in_band(float("nan"), [0.0, 1.0])


# ------------------------------------------------------------------ main


def test_main_run_and_env_output_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "out"))
    path = write_config(tmp_path / "c.json", {"experiment": "dp-oracle", "replicas": 3})
    assert cli.main(["run", path]) == 0
    assert (tmp_path / "out" / "dp-oracle" / "manifest.json").is_file()
    assert "PASS" in capsys.readouterr().out
    assert cli.main(["run", path, "-o", str(tmp_path / "other"), "-j", "2"]) == 0
    assert (tmp_path / "other" / "manifest.json").is_file()


def test_main_usage_errors(tmp_path, capsys):
    assert cli.main([]) == 1
    assert cli.main(["run", str(tmp_path / "missing.json")]) == 1
    bad = write_config(tmp_path / "bad.json", {"experiment": "dp-oracle", "colour": 1})
    assert cli.main(["run", bad]) == 1
    assert "colour" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text("{")
    assert cli.main(["run", str(tmp_path / "broken.json")]) == 1
    assert cli.main(["run", bad, "-j", "0"]) == 1


def test_list_experiments(capsys):
    assert cli.main(["list-experiments"]) == 0
    out = capsys.readouterr().out
    for name in ("dp-oracle", "quadrangle", "duality", "dim-z", "tube-tail"):
        assert name in out


def test_error_fraction_exit_code(tmp_path, monkeypatch):
    def replica(cfg, env, r):
        if r % 4 == 0:
            raise RuntimeError("broken replica")
        return cli._ok([(1, "x", r)], r)

    def reduce(cfg, outcomes):
        return {"metric": "m", "value": 0.0}

    exp = cli.Experiment("flaky", "test", "t", "m", (0.0, 1.0), replica, reduce, default_replicas=8)
    monkeypatch.setitem(cli.REGISTRY, "flaky", exp)
    res = cli.run(cli.parse_config({"experiment": "flaky"}), tmp_path)
    assert res.exit_code == 3
    assert res.fits["errors"] == 2
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["counts"]["error"] == 2
    assert "broken replica" in man["replicas"][0]["message"]
    path = write_config(tmp_path / "c.json", {"experiment": "flaky"})
    assert cli.main(["run", path, "-o", str(tmp_path / "m")]) == 3
