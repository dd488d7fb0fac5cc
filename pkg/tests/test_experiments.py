import hashlib
import json
import math

import numpy as np
import pytest

from dilute_cw import cli
from dilute_cw.experiments import (
    EXPERIMENTS,
    STANDING_ASSUMPTIONS,
    ConfigError,
    PSchedule,
    defaults_bytes,
    git_blob_hash,
    load_defaults,
    observable_by_id,
    resolve_config,
    test_function_by_id as function_by_id,
)


def write_cfg(tmp_path, name="cfg.json", **cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_git_blob_hash_known_value():
    # `printf 'hello\n' | git hash-object --stdin`
    assert git_blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"
    raw = defaults_bytes()
    assert load_defaults()[1] == hashlib.sha1(b"blob %d\0" % len(raw) + raw).hexdigest()


def test_defaults_cover_every_experiment():
    defaults, _ = load_defaults()
    assert set(defaults["experiments"]) == set(EXPERIMENTS)
    for exp in EXPERIMENTS:
        cfg = resolve_config({"experiment": exp})
        assert cfg.beta < 1


def test_p_schedule():
    assert PSchedule.from_spec({"kind": "constant", "c": 0.3})(100) == 0.3
    assert PSchedule.from_spec({"kind": "power", "c": 2.0, "gamma": 0.5})(400) == pytest.approx(0.1)
    for bad in ({"kind": "linear"}, {"kind": "constant", "c": 0.3, "gamma": 1}, {"kind": "power", "gamma": -1},
                {"kind": "power", "gamma": 0.5, "x": 1}, [0.5]):
        with pytest.raises(ConfigError):
            PSchedule.from_spec(bad)


def test_theorem_mode_guard():
    with pytest.raises(ConfigError, match="standing assumptions"):
        resolve_config({"experiment": "tails", "beta": 1.0})
    with pytest.raises(ConfigError) as err:
        resolve_config({"experiment": "tails", "p_schedule": {"kind": "power", "gamma": 1.0}})
    assert STANDING_ASSUMPTIONS in str(err.value)
    cfg = resolve_config({"experiment": "tails", "beta": 1.5, "theorem_mode": False})
    assert cfg.beta == 1.5


@pytest.mark.parametrize("raw", [
    {"experiment": "tails", "colour": "blue"},
    {"experiment": "nope"},
    {"experiment": "tails", "tolerances": {"made_up": 1}},
    {"experiment": "tails", "n_list": []},
    {"experiment": "tails", "n_list": [10, "x"]},
    {"experiment": "tails", "beta": "0.5"},
    {"experiment": "tails", "replicas": 0},
    {"experiment": "tails", "p_schedule": {"kind": "constant", "c": 1.5}},
    {"experiment": "tails", "alpha1": 0.8, "alpha2": 0.8},
    {"experiment": "tails", "master_seed": 2**64},
])
def test_rejected_configs(raw):
    with pytest.raises(ConfigError):
        resolve_config(raw)


def test_overrides_and_merge():
    cfg = resolve_config({"experiment": "sweep-clt", "n_list": [50], "tolerances": {"min_ess": 10}},
                         seed=9, threads=3, out="x")
    assert (cfg.master_seed, cfg.threads, cfg.out) == (9, 3, "x")
    assert cfg.tol("min_ess") == 10.0
    assert cfg.tol("long_run_tv") == 0.01
    assert cfg.sweeps == 3000
    assert cfg.params(100).p == pytest.approx(0.1)


def test_plan_tags_are_distinct():
    cfg = resolve_config({"experiment": "rn-concentration"})
    assert cfg.plan(10).derived_seeds != cfg.plan(14).derived_seeds
    assert cfg.plan(10).derived_seeds == cfg.plan(10).derived_seeds


def test_observables_and_test_functions():
    codes = np.arange(8, dtype=np.uint64)
    assert observable_by_id("one")(codes, 3).tolist() == [1.0] * 8
    ind = observable_by_id("magnetization-indicator:3")(codes, 3)
    assert ind.tolist() == [0.0] * 7 + [1.0]
    with pytest.raises(ConfigError):
        observable_by_id("two")
    cos = function_by_id("cos")
    # E cos(Z) for Z ~ N(0, v) is exp(-v / 2)
    assert cos.gaussian_limit(np.zeros(1), [[2.0]]) == pytest.approx(math.exp(-1.0))
    bump = function_by_id("bump")
    assert bump.gaussian_limit(np.zeros(1), [[1.0]]) == pytest.approx(1 / math.sqrt(2))
    assert function_by_id("bl-v1:3").dim == 2
    for bad in ("bl-v1:999", "sine"):
        with pytest.raises(ConfigError):
            function_by_id(bad)


def run_cli(tmp_path, experiment, out="out", **cfg):
    path = write_cfg(tmp_path, experiment=experiment, **cfg)
    return cli.main([experiment, "--config", path, "--out", str(tmp_path / out)])


def test_cli_pass_and_artifacts(tmp_path, capsys):
    assert run_cli(tmp_path, "verify-lemma32", n_list=[100, 1000]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert all(line.startswith("PASS") for line in lines[:-1])
    assert json.loads(lines[-1]) == {"experiment": "verify-lemma32", "passed": True}
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert summary["passed"] and summary["defaults_hash"] == load_defaults()[1]
    assert "summary.json" in manifest["outputs"]
    for name in manifest["outputs"]:
        assert (tmp_path / "out" / name).exists()


def test_cli_rerun_is_byte_identical(tmp_path):
    cfg = dict(n_list=[10, 12], replicas=20, options={"final_point": {"n": 12, "p": 0.9}})
    assert run_cli(tmp_path, "rn-concentration", out="a", **cfg) in (0, 1)
    assert run_cli(tmp_path, "rn-concentration", out="b", **cfg) in (0, 1)
    names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "manifest.json")
    assert "summary.json" in names
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    ma.pop("timestamp"), mb.pop("timestamp")
    ma["config"].pop("out"), mb["config"].pop("out")
    assert ma == mb


def test_cli_check_failure_exit_one(tmp_path, capsys):
    # an impossible tolerance forces a check failure, not a config error
    status = run_cli(tmp_path, "verify-lemma32", n_list=[100], tolerances={"residual_c1_final": 1e-9})
    assert status == 1
    assert "FAIL" in capsys.readouterr().out


def test_cli_config_errors_exit_two(tmp_path, capsys):
    assert run_cli(tmp_path, "tails", beta=1.2) == 2
    assert "standing assumptions" in capsys.readouterr().err
    path = write_cfg(tmp_path, experiment="tails")
    assert cli.main(["verify-counts", "--config", path]) == 2
    assert cli.main(["tails", "--config", str(tmp_path / "missing.json")]) == 2
    # enumeration beyond the cap is reported as a configuration problem
    assert run_cli(tmp_path, "exact-small", n_list=[4], options={"rt_n": 30}) == 2


def test_exact_small_complete_graph(tmp_path):
    status = run_cli(tmp_path, "exact-small", n_list=[12], replicas=2,
                     options={"long_run_sweeps": 200_000})
    assert status == 0
    rows = (tmp_path / "out" / "pushforward_identity.csv").read_text().splitlines()
    assert rows[0] == "n,observable,max_abs_prob_diff"
    assert len(rows) == 3
