import csv
import io

import pytest
import tomli

from stochflow.errors import ConfigError, ViewError
from stochflow.harness import MODULES, REGISTRY, ExperimentConfig, RunManifest, emit_plot_data, run_many
from stochflow.harness.cli import main
from stochflow.harness.config import dumps_table, loads, resolve
from stochflow.harness.runner import configs_from, list_experiments, worker_count

QUICK = ["flow.zero_drift", "holder.zero_drift", "leray.idempotent", "norms.lps_classification"]


def _cfgs(ids, out, seed=0):
    return [ExperimentConfig(i, seed, str(out)) for i in ids]


def test_registry_covers_every_module():
    assert len(REGISTRY) >= 18
    assert {e["module"] for e in list_experiments()} == set(MODULES)
    for module in MODULES:
        rows = list_experiments(module)
        assert rows and all(r["module"] == module for r in rows)
        assert [r["id"] for r in rows] == sorted(r["id"] for r in rows)
    with pytest.raises(ConfigError):
        list_experiments("nope")
    for exp in REGISTRY.values():
        assert exp.description and exp.anchor and callable(exp.run)


def test_config_parsing_and_validation():
    cfg, = loads('id = "holder.zero_drift"\nseed = 4\nM = 10\nincrements = [0.002, 0.004]\n')
    params = resolve(cfg, REGISTRY[cfg.id].defaults)
    assert cfg.seed == 4 and params["M"] == 10 and params["increments"] == [0.002, 0.004]
    for bad in ('id = "holder.zero_drift"\nbogus = 1\n', 'id = "holder.zero_drift"\nM = "many"\n',
                'id = "holder.zero_drift"\nM = 2.5\n'):
        c, = loads(bad)
        with pytest.raises(ConfigError):
            resolve(c, REGISTRY[c.id].defaults)
    with pytest.raises(ConfigError):
        loads("[nested]\nx = 1\n")
    with pytest.raises(ConfigError):
        loads("id = ")
    text = dumps_table({"a": 1, "b": [0.5, 2.0], "c": "x\"y", "d": True, "e": float("inf")})
    assert tomli.loads(text) == {"a": 1, "b": [0.5, 2.0], "c": 'x"y', "d": True, "e": float("inf")}


def test_bad_config_fails_before_any_output(tmp_path):
    bad = ExperimentConfig("holder.zero_drift", 0, str(tmp_path / "run"), {"t": 0.0645})
    good = ExperimentConfig("flow.zero_drift", 0, str(tmp_path / "run"))
    with pytest.raises(ConfigError):
        run_many([good, bad])
    assert not (tmp_path / "run").exists()
    with pytest.raises(ConfigError):
        run_many([ExperimentConfig("no.such", 0, str(tmp_path / "run"))])


def test_worker_count(monkeypatch):
    monkeypatch.setenv("STOCHFLOW_WORKERS", "3")
    assert worker_count() == 3 and worker_count(0) == 1
    monkeypatch.setenv("STOCHFLOW_WORKERS", "x")
    with pytest.raises(ConfigError):
        worker_count()


def test_smoke_run_of_every_experiment(tmp_path):
    manifest = run_many(_cfgs(sorted(REGISTRY), tmp_path / "all"))
    failed = {k: v for k, v in manifest.verdicts.items() if v != "pass"}
    assert not failed
    assert [e["id"] for e in manifest.experiments] == sorted(REGISTRY)
    for e in manifest.experiments:
        assert (tmp_path / "all" / e["csv"]).exists()


def test_manifest_roundtrip_and_rerun(tmp_path):
    first = run_many(_cfgs(QUICK, tmp_path / "a", seed=5))
    loaded = RunManifest.load(tmp_path / "a")
    assert loaded.verdicts == first.verdicts and loaded.passed
    again = configs_from(tmp_path / "a" / "manifest.toml")
    assert [c.id for c in again] == QUICK and all(c.seed == 5 for c in again)
    run_many(again, tmp_path / "b")
    for e in first.experiments:
        assert (tmp_path / "a" / e["csv"]).read_bytes() == (tmp_path / "b" / e["csv"]).read_bytes()


def test_results_do_not_depend_on_worker_count(tmp_path):
    one = run_many(_cfgs(QUICK, tmp_path / "w1"), workers=1)
    run_many(_cfgs(QUICK, tmp_path / "w3"), workers=3)
    for e in one.experiments:
        assert (tmp_path / "w1" / e["csv"]).read_bytes() == (tmp_path / "w3" / e["csv"]).read_bytes()


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_plot_views(tmp_path):
    run_many(_cfgs(["holder.zero_drift"], tmp_path / "s0", seed=0))
    run_many(_cfgs(["holder.zero_drift"], tmp_path / "s1", seed=1))
    rows = _rows(emit_plot_data([tmp_path / "s0"], "holder"))
    t_rows = [r for r in rows if r["axis"] == "t"]
    assert len(t_rows) == 6 and t_rows[-1]["slope"] and not t_rows[0]["slope"]
    both = _rows(emit_plot_data([tmp_path / "s1", tmp_path / "s0"], "holder", tmp_path / "h.csv"))
    assert [r["seed"] for r in both] == sorted(r["seed"] for r in both)
    assert (tmp_path / "h.csv").exists()
    empty = RunManifest([], "")
    assert emit_plot_data([empty], "picard").strip() == "experiment_id,seed,sub_interval,iteration,residual"
    with pytest.raises(ViewError):
        emit_plot_data([tmp_path / "s0"], "picard")
    with pytest.raises(ViewError):
        emit_plot_data([tmp_path / "s0"], "nope")


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["list", "--module", "flow_sim"]) == 0
    assert "flow.zero_drift" in capsys.readouterr().out
    assert main(["list", "--module", "nope"]) == 2
    assert main(["run", "flow.zero_drift", "--out", str(tmp_path / "r"), "--seed", "2"]) == 0
    assert RunManifest.load(tmp_path / "r").experiments[0]["seed"] == 2
    assert main(["plot", "holder", "--from", str(tmp_path / "r")]) == 2
    cfg = tmp_path / "bad.toml"
    cfg.write_text('id = "flow.zero_drift"\nunknown_key = 1\n')
    assert main(["run", "flow.zero_drift", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    # a failing verdict maps to exit status 1
    cfg.write_text('id = "lagrangian.picard_tg"\nmax_error = 1e-9\n')
    assert main(["run", "lagrangian.picard_tg", "--config", str(cfg), "--out", str(tmp_path / "y")]) == 1
