import json

import numpy as np
import pandas as pd
import pytest

from core.tensor_core import DenseTensor
from main import main
from schemas.schema_manager import file_sha256, validate_manifest
from storage.tensor_io import read_tensor, write_tensor

SYNTH = ["synth", "--shape", "20,18,16", "--rank", "3", "--core", "5", "--knn", "4", "--seed", "7", "--snr", "20"]


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "synth"
    assert main(SYNTH + ["--out", str(out)]) == 0
    return out


def _manifest(directory):
    return json.loads((directory / "manifest.json").read_text())


def test_synth_writes_tensors_bases_and_manifest(synth_dir):
    for name in ("y_star.dtf", "y.dtf", "core.dtf"):
        assert (synth_dir / name).exists()
    for mu in (1, 2, 3):
        assert (synth_dir / f"basis_mode{mu}.dtf").exists()
        assert (synth_dir / f"basis_mode{mu}.csv").exists()
    assert read_tensor(synth_dir / "core.dtf").shape == (5, 5, 5)
    manifest = validate_manifest(_manifest(synth_dir))
    assert manifest["run_id"] == "synth-7"
    assert manifest["seed"] == 7
    assert manifest["config"]["shape"] == [20, 18, 16]
    assert manifest["outputs"]["y.dtf"] == file_sha256(synth_dir / "y.dtf")


def test_synth_noise_level(synth_dir):
    y_star = read_tensor(synth_dir / "y_star.dtf")
    y = read_tensor(synth_dir / "y.dtf")
    snr = 20 * np.log10(y_star.norm() / np.linalg.norm((y.data - y_star.data).ravel()))
    assert snr == pytest.approx(20.0, abs=1e-9)


def test_basis_command(synth_dir, tmp_path):
    out = tmp_path / "basis"
    argv = ["basis", "--tensor", str(synth_dir / "y_star.dtf"), "--k", "5", "--k-star", "2", "--knn", "4", "--out", str(out)]
    assert main(argv) == 0
    eig = pd.read_csv(out / "eigenvalues.csv")
    assert list(eig.columns) == ["mode", "index", "eigenvalue"]
    assert len(eig) == 15
    gap = pd.read_csv(out / "eigen_gap.csv")
    assert list(gap["mode"]) == [1, 2, 3]
    assert gap["eigen_gap"].between(0.0, 1.0).all()
    assert validate_manifest(_manifest(out))["command"] == "basis"


def test_basis_too_large_is_a_usage_error(synth_dir, tmp_path, capsys):
    argv = ["basis", "--tensor", str(synth_dir / "y.dtf"), "--k", "50", "--out", str(tmp_path / "b")]
    assert main(argv) == 2
    assert "error:" in capsys.readouterr().err


def test_solve_gctp_with_saved_bases(synth_dir, tmp_path):
    out = tmp_path / "gctp"
    argv = ["solve", "gctp", "--tensor", str(synth_dir / "y.dtf"), "--bases", str(synth_dir),
            "--gamma", "0.1", "--max-iters", "20", "--out", str(out)]
    assert main(argv) == 0
    assert read_tensor(out / "recovered.dtf").shape == (20, 18, 16)
    assert read_tensor(out / "core.dtf").shape == (5, 5, 5)
    report = pd.read_csv(out / "report.csv")
    assert list(report.columns) == ["iteration", "objective", "time", "converged"]
    assert np.all(np.diff(report["objective"]) <= 0.0)
    summary = pd.read_csv(out / "summary.csv")
    assert list(summary.columns) == [
        "algorithm", "iterations", "converged", "final_objective", "start_returned", "wall_time",
        "compression_ratio",
    ]
    manifest = validate_manifest(_manifest(out))
    assert "basis_mode1.dtf" in manifest["inputs"]
    assert manifest["config"]["solver.gamma"] == 0.1


def test_solve_gctp_without_regularization_returns_projection(synth_dir, tmp_path):
    from engine.spectral_analysis import project_gct
    from storage.tensor_io import load_basis

    out = tmp_path / "gctp0"
    argv = ["solve", "gctp", "--tensor", str(synth_dir / "y.dtf"), "--bases", str(synth_dir),
            "--gamma", "0", "--max-iters", "5", "--out", str(out)]
    assert main(argv) == 0
    bases = [load_basis(synth_dir / f"basis_mode{mu}") for mu in (1, 2, 3)]
    expected = project_gct(read_tensor(synth_dir / "y.dtf"), bases).core
    assert read_tensor(out / "core.dtf").equals(expected)


def test_solve_mlsvd_writes_factors(synth_dir, tmp_path):
    out = tmp_path / "mlsvd"
    assert main(["solve", "mlsvd", "--tensor", str(synth_dir / "y.dtf"), "--core", "3", "--out", str(out)]) == 0
    for mu, n in zip((1, 2, 3), (20, 18, 16)):
        assert read_tensor(out / f"factor_mode{mu}.dtf").shape == (n, 3)


def test_solve_trpcag_builds_and_caches_bases(synth_dir, tmp_path, isolated_cache):
    out = tmp_path / "trpcag"
    argv = ["solve", "trpcag", "--tensor", str(synth_dir / "y.dtf"), "--core", "5", "--knn", "4",
            "--max-iters", "10", "--out", str(out)]
    assert main(argv) == 0
    y = read_tensor(synth_dir / "y.dtf")
    low = read_tensor(out / "recovered.dtf")
    sparse = read_tensor(out / "sparse.dtf")
    np.testing.assert_allclose(low.data + sparse.data, y.data, atol=1e-10)
    assert len(list(isolated_cache.glob("basis_*.dtf"))) == 3


def test_solve_gmlsvd(synth_dir, tmp_path):
    out = tmp_path / "gmlsvd"
    argv = ["solve", "gmlsvd", "--tensor", str(synth_dir / "y.dtf"), "--bases", str(synth_dir),
            "--max-iters", "10", "--out", str(out)]
    assert main(argv) == 0
    assert read_tensor(out / "factor_mode2.dtf").shape == (18, 5)


def test_solve_reads_config_file(synth_dir, tmp_path):
    cfg = tmp_path / "solver.cfg"
    cfg.write_text("gamma = 0.5\nmax_iters = 7\n")
    out = tmp_path / "cfg"
    argv = ["solve", "gctp", "--tensor", str(synth_dir / "y.dtf"), "--bases", str(synth_dir),
            "--config", str(cfg), "--max-iters", "3", "--out", str(out)]
    assert main(argv) == 0
    config = _manifest(out)["config"]
    assert config["solver.gamma"] == 0.5
    assert config["solver.max_iters"] == 3
    assert "config" not in config


def test_sweep_records_metrics_and_failures(synth_dir, tmp_path):
    out = tmp_path / "sweep" / "k.csv"
    argv = ["sweep", "--param", "k", "--grid", "3,5,40", "--tensor", str(synth_dir / "y.dtf"),
            "--reference", str(synth_dir / "y_star.dtf"), "--knn", "4", "--max-iters", "10",
            "--n-jobs", "2", "--out", str(out)]
    assert main(argv) == 0
    frame = pd.read_csv(out)
    assert list(frame["value"]) == [3, 5, 40]
    assert frame.loc[:1, "recon_error"].notna().all()
    assert frame["error"].iloc[:2].isna().all()
    assert frame["error"].iloc[2].startswith("RankError")
    assert validate_manifest(_manifest(out.parent))["command"] == "sweep"


def test_sweep_gamma(synth_dir, tmp_path):
    out = tmp_path / "gamma.csv"
    argv = ["sweep", "--param", "gamma", "--grid", "0.1,1", "--tensor", str(synth_dir / "y.dtf"),
            "--knn", "4", "--core", "5", "--max-iters", "5", "--out", str(out)]
    assert main(argv) == 0
    frame = pd.read_csv(out)
    assert list(frame["value"]) == [0.1, 1.0]
    assert "recon_error" not in frame.columns


def test_empty_sweep_grid(synth_dir, tmp_path):
    argv = ["sweep", "--param", "gamma", "--grid", "", "--tensor", str(synth_dir / "y.dtf"),
            "--out", str(tmp_path / "s.csv")]
    assert main(argv) == 2


def test_diagnose(synth_dir, tmp_path):
    out = tmp_path / "diag.csv"
    argv = ["diagnose", "--tensor", str(synth_dir / "y_star.dtf"), "--bases", str(synth_dir),
            "--k-grid", "5,2", "--out", str(out)]
    assert main(argv) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["mode", "stationarity_ratio", "energy_concentration@2", "energy_concentration@5"]
    np.testing.assert_allclose(frame["energy_concentration@5"], 1.0, atol=1e-10)


def test_diagnose_builds_full_bases(synth_dir, tmp_path):
    out = tmp_path / "diag_full.csv"
    argv = ["diagnose", "--tensor", str(synth_dir / "y.dtf"), "--knn", "4", "--k-grid", "3", "--out", str(out)]
    assert main(argv) == 0
    assert len(pd.read_csv(out)) == 3


def test_diagnose_output_under_a_file_is_an_io_error(synth_dir, tmp_path, capsys):
    blocker = tmp_path / "taken"
    blocker.write_text("")
    argv = ["diagnose", "--tensor", str(synth_dir / "y_star.dtf"), "--bases", str(synth_dir),
            "--k-grid", "2", "--out", str(blocker / "diag.csv")]
    assert main(argv) == 3
    assert "error:" in capsys.readouterr().err


def test_unwritable_cache_dir_is_an_io_error(synth_dir, tmp_path):
    blocker = tmp_path / "taken"
    blocker.write_text("")
    argv = ["diagnose", "--tensor", str(synth_dir / "y.dtf"), "--knn", "4", "--k-grid", "3",
            "--cache-dir", str(blocker / "cache"), "--out", str(tmp_path / "diag.csv")]
    assert main(argv) == 3


def test_eval_long_format(synth_dir, tmp_path):
    out = tmp_path / "metrics.csv"
    argv = ["eval", "--estimate", str(synth_dir / "y.dtf"), "--reference", str(synth_dir / "y_star.dtf"),
            "--k-star", "3", "--out", str(out)]
    assert main(argv) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["metric", "index", "value"]
    assert list(frame["metric"][:4]) == ["recon_error", "singular_value_error", "subspace_angle", "alignment_mean"]
    assert (frame["metric"] == "alignment_diag").sum() == 5
    recon = frame.loc[frame["metric"] == "recon_error", "value"].iloc[0]
    assert recon == pytest.approx(0.1, rel=1e-6)


def test_exit_codes(tmp_path, capsys):
    assert main(["solve", "gctp", "--tensor", str(tmp_path / "absent.dtf"), "--out", str(tmp_path)]) == 3
    assert main(["solve", "nosuch", "--tensor", "x.dtf"]) == 2
    assert main(["synth", "--shape", "10,10", "--rank", "3", "--seed", "1", "--knn", "3", "--gamma", "1"]) == 2
    write_tensor(tmp_path / "zero.dtf", DenseTensor(np.zeros((4, 4))))
    argv = ["eval", "--estimate", str(tmp_path / "zero.dtf"), "--reference", str(tmp_path / "zero.dtf"),
            "--out", str(tmp_path / "m.csv")]
    assert main(argv) == 4
    assert main(["solve", "gctp", "--tensor", str(tmp_path / "zero.dtf"), "--gamma", "-1",
                 "--out", str(tmp_path)]) == 2


def _pipeline(root):
    synth = root / "synth"
    assert main(SYNTH + ["--out", str(synth)]) == 0
    assert main(["basis", "--tensor", str(synth / "y.dtf"), "--k", "5", "--knn", "4",
                 "--cache-dir", str(root / "cache"), "--out", str(root / "basis")]) == 0
    assert main(["solve", "gmlsvd", "--tensor", str(synth / "y.dtf"), "--bases", str(root / "basis"),
                 "--gamma", "0.5", "--max-iters", "15", "--out", str(root / "solve")]) == 0
    assert main(["eval", "--estimate", str(root / "solve" / "recovered.dtf"), "--reference", str(synth / "y_star.dtf"),
                 "--out", str(root / "eval" / "metrics.csv")]) == 0
    return [
        synth / "y.dtf", synth / "y_star.dtf", synth / "manifest.json",
        root / "basis" / "basis_mode1.dtf", root / "basis" / "eigenvalues.csv",
        root / "solve" / "recovered.dtf", root / "solve" / "core.dtf", root / "solve" / "factor_mode3.dtf",
        root / "eval" / "metrics.csv",
    ]


def test_pipeline_is_bit_deterministic(tmp_path):
    first = _pipeline(tmp_path / "a")
    second = _pipeline(tmp_path / "b")
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes(), a.name
