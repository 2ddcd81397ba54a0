import csv
import json
import time

import numpy as np
import pytest

from ccatl.cli import build_config, env_layer, main, read_config_file
from ccatl.data import SynthConfig, save_csv, synth_generate
from ccatl.divergence import POST_CCA, PRE_CCA, read_reports_csv
from ccatl.evaluation import read_results_csv
from ccatl.pairing import read_pairs_csv
from ccatl.pipeline import (AVERAGE, EXIT_INPUT, EXIT_OK, EXIT_PARTIAL, ConfigError,
                            ExperimentConfig, parse_cell, read_accuracy_matrix, run_experiment,
                            run_grid)
from ccatl.serialize import load_model
from ccatl.transfer import BASELINES, CCA_BASELINES

SMALL_SYNTH = ["--synth", "--synth-n-source", "80", "--synth-n-target", "50",
               "--synth-d-common", "4", "--synth-d-source-only", "3", "--synth-d-target-only",
               "3", "--synth-latent-dim", "3"]
SYN = SynthConfig(n_source=80, n_target=50, d_common=4, d_source_only=3, d_target_only=3,
                  latent_dim=3)
DESK = dict(dcca_epochs=10, dcca_lr=0.5, dcca_widths=(8,))


def csv_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


@pytest.fixture
def clean_env(monkeypatch):
    import os
    for k in list(os.environ):
        if k.startswith("CCATL_") and k != "CCATL_DISABLE_NUMBA":
            monkeypatch.delenv(k)
    return monkeypatch


# -- config ----------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(synth=SYN, baselines=())
    with pytest.raises(ConfigError):
        ExperimentConfig(synth=SYN, baselines=("SVM",))
    with pytest.raises(ConfigError):
        ExperimentConfig()
    with pytest.raises(ConfigError):
        ExperimentConfig(synth=SYN, k_impute=0)


def test_config_dict_round_trip():
    cfg = ExperimentConfig(synth=SYN, baselines=("Original", "IMKCCA"), rho=1e-6, **DESK)
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**cfg.to_dict(), "colour": 1})


def test_precedence(tmp_path, clean_env):
    ini = tmp_path / "c.ini"
    ini.write_text("[experiment]\nrho = 0.5\nkappa = 0.25\nseed = 3\n"
                   "[synth]\nn_source = 60\nn_target = 40\n")
    exp, synth, pairs = read_config_file(ini)
    assert synth == {"n_source": 60, "n_target": 40} and pairs == []
    clean_env.setenv("CCATL_KAPPA", "0.125")
    clean_env.setenv("CCATL_SEED", "9")
    cfg = build_config(exp, env_layer(), {"seed": 11}, synth=synth)
    assert (cfg.rho, cfg.kappa, cfg.seed) == (0.5, 0.125, 11)
    assert cfg.synth.n_source == 60 and cfg.k_impute == 5


def test_bad_config_file(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[experiment]\nwidth = 3\n")
    assert main(["run", "--config", str(ini)]) == EXIT_INPUT
    ini.write_text("[bogus]\n")
    assert main(["run", "--config", str(ini)]) == EXIT_INPUT
    assert main(["run", "--synth", "--kernel", "Poly"]) == EXIT_INPUT


# -- run -------------------------------------------------------------------

def test_run_two_baselines_deterministic(tmp_path):
    cfg = ExperimentConfig(synth=SYN, baselines=("Original", "ZPC"), out=str(tmp_path / "a"))
    code, oc = run_experiment(cfg)
    assert code == EXIT_OK and sorted(oc.results) == ["Original", "ZPC"]
    rows = read_results_csv(tmp_path / "a" / "results.csv")
    assert [r.baseline for _, r in rows] == ["Original", "ZPC"]
    code, oc2 = run_experiment(ExperimentConfig(synth=SYN, baselines=("Original", "ZPC"),
                                                out=str(tmp_path / "b")))
    assert csv_bytes(tmp_path / "a") == csv_bytes(tmp_path / "b")
    assert oc.results == oc2.results


def test_run_artefacts(tmp_path, clean_env):
    out = tmp_path / "run"
    code = main(["run", *SMALL_SYNTH, "--baselines", "IMC,ZPCCA,IMDCCA", "--dcca-epochs", "6",
                 "--dcca-widths", "8", "--dcca-lr", "0.5", "--out", str(out)])
    assert code == EXIT_OK
    for f in ("accuracy.csv", "results.csv", "divergence.csv", "summary.txt", "manifest.json",
              "pairs_IMC.csv", "pairs_ZPCCA.csv", "model_ZPCCA.npz", "model_IMDCCA.npz",
              "trace_IMDCCA.csv"):
        assert (out / f).is_file(), f
    assert not (out / "errors.json").exists()
    divs = read_reports_csv(out / "divergence.csv")
    assert [(b, r.stage) for _, b, r in divs] == [("ZPCCA", PRE_CCA), ("ZPCCA", POST_CCA),
                                                  ("IMDCCA", PRE_CCA), ("IMDCCA", POST_CCA)]
    assert len(read_pairs_csv(out / "pairs_IMC.csv")) == 50
    assert load_model(out / "model_IMDCCA.npz").trace.size == 6
    m = json.loads((out / "manifest.json").read_text())
    assert m["configs"][0]["baselines"] == ["IMC", "ZPCCA", "IMDCCA"]
    assert {"numpy", "scipy", "numba", "ccatl", "backend"} <= set(m)


def test_manifest_rerun_byte_identical(tmp_path, clean_env):
    a = tmp_path / "a"
    assert main(["run", *SMALL_SYNTH, "--baselines", "Original,IMKCCA,ZPDCCA", "--dcca-epochs",
                 "5", "--dcca-widths", "8", "--seed", "4", "--out", str(a)]) == EXIT_OK
    b = tmp_path / "b"
    assert main(["run", "--manifest", str(a / "manifest.json"), "--out", str(b)]) == EXIT_OK
    assert csv_bytes(a) == csv_bytes(b)
    assert (a / "model_ZPDCCA.npz").read_bytes() == (b / "model_ZPDCCA.npz").read_bytes()
    # manifests differ only in the output directory
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    ma["configs"][0].pop("out"), mb["configs"][0].pop("out")
    assert ma == mb


def test_missing_source_file(tmp_path, capsys, clean_env):
    out = tmp_path / "o"
    missing = tmp_path / "nope.csv"
    code = main(["run", "--source", str(missing), "--target", str(missing), "--out", str(out)])
    assert code == EXIT_INPUT
    rec = json.loads((out / "error.json").read_text())
    assert rec["path"] == str(missing) and rec["role"] == "source"
    assert str(missing) in capsys.readouterr().err


def test_reversed_pair_needs_force(tmp_path, clean_env):
    s, t = synth_generate(SYN)
    save_csv(s, tmp_path / "s.csv")
    save_csv(t, tmp_path / "t.csv")
    args = ["run", "--source", str(tmp_path / "t.csv"), "--target", str(tmp_path / "s.csv"),
            "--baselines", "Original"]
    assert main(args + ["--out", str(tmp_path / "x")]) == EXIT_INPUT
    assert main(args + ["--force", "--out", str(tmp_path / "y")]) == EXIT_OK


def test_env_overrides_reach_run(tmp_path, clean_env):
    clean_env.setenv("CCATL_BASELINES", "Original")
    clean_env.setenv("CCATL_SEED", "7")
    out = tmp_path / "e"
    assert main(["run", *SMALL_SYNTH, "--out", str(out)]) == EXIT_OK
    cfg = json.loads((out / "manifest.json").read_text())["configs"][0]
    assert cfg["baselines"] == ["Original"] and cfg["seed"] == 7
    assert main(["run", *SMALL_SYNTH, "--seed", "8", "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "manifest.json").read_text())["configs"][0]["seed"] == 8


def test_synth_verb(tmp_path):
    out = tmp_path / "s"
    assert main(["synth", "--synth-n-source", "30", "--synth-n-target", "20", "--out", str(out)]) == 0
    assert len((out / "source.csv").read_text().splitlines()) == 31
    assert len((out / "target.csv").read_text().splitlines()) == 21


# -- grid and report -------------------------------------------------------

def test_grid_partial_failure(tmp_path, clean_env):
    s, t = synth_generate(SYN)
    save_csv(s, tmp_path / "s.csv")
    save_csv(t, tmp_path / "t.csv")
    out = tmp_path / "g"
    code = main(["grid", "--pair", str(tmp_path / "s.csv"), str(tmp_path / "t.csv"),
                 "--pair", str(tmp_path / "gone.csv"), str(tmp_path / "t.csv"),
                 "--synth-seeds", "3", *SMALL_SYNTH[1:],
                 "--baselines", "Original,ZPC", "--out", str(out)])
    assert code == EXIT_PARTIAL
    mat = read_accuracy_matrix(out / "accuracy.csv")
    assert list(mat) == ["s->t", "gone->t", "synth3", AVERAGE]
    assert mat["gone->t"] == {"Original": None, "ZPC": None}
    assert all(v is not None for v in mat["s->t"].values())
    errs = json.loads((out / "errors.json").read_text())
    assert errs["gone->t"]["fatal"]["path"].endswith("gone.csv")
    for b in ("Original", "ZPC"):
        cells = [mat[k][b] for k in ("s->t", "synth3")]
        assert mat[AVERAGE][b][0] == pytest.approx(np.mean([c[0] for c in cells]), abs=1e-15)
        assert mat[AVERAGE][b][1] == pytest.approx(np.mean([c[1] for c in cells]), abs=1e-15)


def test_grid_single_config_matches_run(tmp_path):
    cfg = ExperimentConfig(synth=SYN, baselines=("Original", "IMCCA"), out=str(tmp_path / "r"))
    run_experiment(cfg)
    code, _ = run_grid([cfg], tmp_path / "g")
    assert code == EXIT_OK
    run_rows = list(csv.reader(open(tmp_path / "r" / "accuracy.csv")))
    grid_rows = list(csv.reader(open(tmp_path / "g" / "accuracy.csv")))
    assert grid_rows[:2] == run_rows
    assert grid_rows[2][0] == AVERAGE and grid_rows[2][1:] == run_rows[1][1:]
    assert (tmp_path / "g" / "synth0" / "pairs_IMCCA.csv").is_file()


def test_grid_jobs_equal_sequential(tmp_path):
    cfgs = [ExperimentConfig(synth=SynthConfig(**{**SYN.__dict__, "seed": s}),
                             baselines=("Original", "ZPKCCA")) for s in (1, 2)]
    run_grid(cfgs, tmp_path / "seq", jobs=1)
    run_grid(cfgs, tmp_path / "par", jobs=2)
    assert csv_bytes(tmp_path / "seq") == csv_bytes(tmp_path / "par")


def test_report_merges_and_recomputes(tmp_path, capsys):
    a = ExperimentConfig(synth=SYN, baselines=("Original", "ZPC"), out=str(tmp_path / "a"))
    b = ExperimentConfig(synth=SynthConfig(**{**SYN.__dict__, "seed": 5}),
                         baselines=("Original",), out=str(tmp_path / "b"))
    run_experiment(a)
    run_experiment(b)
    merged = tmp_path / "m.csv"
    assert main(["report", str(tmp_path / "a"), str(tmp_path / "b"), "--out", str(merged)]) == 0
    rows = list(csv.reader(open(merged)))
    assert rows[0] == ["transfer_id", "Original", "ZPC"]
    assert rows[2] == ["synth5", rows[2][1], ""]
    cells = [parse_cell(r[1]) for r in rows[1:3]]
    assert parse_cell(rows[3][1])[0] == pytest.approx((cells[0][0] + cells[1][0]) / 2, abs=1e-15)
    assert parse_cell(rows[3][2]) == parse_cell(rows[1][2])
    assert "Average" in capsys.readouterr().out
    assert main(["report", str(tmp_path / "none")]) == EXIT_INPUT


def test_nine_baselines_runtime(tmp_path):
    cfg = ExperimentConfig(synth=SynthConfig(n_source=200, n_target=100), out=str(tmp_path),
                           **DESK)
    t0 = time.perf_counter()
    code, oc = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    assert code == EXIT_OK and list(oc.results) == list(BASELINES)
    assert [b for b, _ in oc.divergences] == [b for b in CCA_BASELINES for _ in range(2)]
    assert elapsed < 300
