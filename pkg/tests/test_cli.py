import json
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from boostlab import config as C
from boostlab.cli import main

from conftest import tiny_config


def write_config(tmp_path, cfg, name="run.ini"):
    path = tmp_path / name
    path.write_text(C.to_ini(cfg), encoding="utf-8")
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else json.loads(err))


def test_tq_mc_preset_values():
    cfg = C.preset("tq-mc")
    b = cfg.bilevel
    assert (b.eta_psi, b.eta_theta, b.alpha, b.batch_size, b.grad_accum) == (1e-4, 1e-4, 0.0, 8, 16)
    assert (b.K_psi, b.K_theta, b.K_phi) == (20, 20, 1)
    assert cfg.loss.algo == "mc" and cfg.preset == "tq-mc"
    with pytest.raises(C.ConfigError, match="unknown preset"):
        C.preset("nope")


@pytest.mark.parametrize("name", sorted(C.PRESETS))
def test_presets_round_trip(name):
    cfg = C.preset(name, seed=3)
    assert C.from_ini(C.to_ini(cfg)) == cfg


@given(st.integers(0, 2 ** 31), st.floats(0.0, 50.0), st.integers(1, 64), st.sampled_from(["mc", "ilql"]),
       st.floats(0.01, 0.99), st.sampled_from([("low",), ("high", "low")]), st.booleans())
def test_config_round_trip(seed, alpha, batch, algo, tau, regimes, by_distance):
    cfg = C.ExperimentConfig(seed=seed).with_values(
        bilevel={"alpha": alpha, "batch_size": batch}, loss={"algo": algo, "expectile_tau": tau},
        matrix={"regimes": regimes}, synth={"corrupt_by_distance": by_distance})
    assert C.from_ini(C.to_ini(cfg)) == cfg


def test_config_errors_name_the_key():
    with pytest.raises(C.ConfigError) as exc:
        C.from_ini("[bilevel]\nalpha = -1\n")
    assert exc.value.key == "bilevel.alpha"
    with pytest.raises(C.ConfigError) as exc:
        C.from_ini("[eval]\ndecode = \"beam\"\n")
    assert exc.value.key == "eval.decode"
    with pytest.raises(C.ConfigError) as exc:
        C.from_ini("[model]\nwidth = 3\n")
    assert "model.width" in exc.value.key


def test_cli_error_json(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[data]\nval_split = 2.0\n", encoding="utf-8")
    code, err = run(capsys, "gen", "--config", str(bad), "--out", str(tmp_path))
    assert code == 2
    assert err["error"] == "ConfigError" and err["key"] == "data.val_split" and err["command"] == "gen"
    code, err = run(capsys, "train", "--in", str(tmp_path / "missing"), "--out", str(tmp_path))
    assert code == 2 and err["command"] == "train"


def test_run_layout(tmp_path, capsys):
    ini = write_config(tmp_path, tiny_config())
    code, out = run(capsys, "gen", "--config", ini, "--out", str(tmp_path), "--run-id", "r")
    assert code == 0 and out["trajectories"] == 160
    root = tmp_path / "r"
    assert {p.name for p in root.iterdir()} == {"config.snapshot", "datasets", "checkpoints", "logs", "reports"}
    assert C.from_ini((root / "config.snapshot").read_text()) == tiny_config()


def test_pipeline_is_byte_identical(tmp_path, capsys):
    ini = write_config(tmp_path, tiny_config())

    def pipeline(out):
        base = ["--config", ini, "--out", str(out), "--run-id", "r", "--seed", "5"]
        for cmd in (["gen"], ["split"], ["synth"], ["train", "--method", "boost", "--algo", "ilql"],
                    ["eval", "--method", "boost", "--algo", "ilql"], ["analyze", "--method", "boost", "--algo", "ilql"]):
            code, _ = run(capsys, *cmd, *base)
            assert code == 0, cmd
        root = out / "r"
        return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    a, b = pipeline(tmp_path / "a"), pipeline(tmp_path / "b")
    assert a.keys() == b.keys() and "reports/eval-boost-ilql.csv" in a
    assert all(a[k] == b[k] for k in a)


def test_matrix_row_count(tmp_path, capsys):
    cfg = tiny_config(matrix={"regimes": ("high", "low"), "algos": ("mc", "ilql")},
                      data={"low_data_fraction": 0.5}, eval={"n_runs": 2})
    cfg = replace(cfg, bilevel=replace(cfg.bilevel, K_psi=1, K_theta=1))
    ini = write_config(tmp_path, cfg)
    code, out = run(capsys, "matrix", "--config", ini, "--out", str(tmp_path), "--run-id", "m")
    assert code == 0 and out["rows"] == 16
    lines = (tmp_path / "m" / "reports" / "results.csv").read_text().splitlines()
    assert len(lines) == 17
