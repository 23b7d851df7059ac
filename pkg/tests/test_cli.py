import json

import numpy as np
import pytest

from fieldflow.cli import main
from fieldflow.config import ExperimentConfig, load_config, preset, save_config
from fieldflow.errors import ContractViolation
from fieldflow.sim import load_dataset
from fieldflow.pod import load_pod_basis


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg = preset("desk")
    path = tmp_path / "exp.ini"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_config_partial_override(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[simulation]\nn_points = 32\n\n[pod]\nr = 3\n")
    cfg = load_config(path)
    assert cfg.sim.grid.n_points == 32
    assert cfg.r == 3
    # untouched keys keep their defaults
    assert cfg.sim.dt == ExperimentConfig().sim.dt
    assert cfg.train.batch_size == 128


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[training]\nbatchsize = 4\n")
    with pytest.raises(ContractViolation):
        load_config(path)
    path.write_text("[mystery]\nx = 1\n")
    with pytest.raises(ContractViolation):
        load_config(path)


def test_config_rejects_missing_file(tmp_path):
    with pytest.raises(ContractViolation):
        load_config(tmp_path / "nope.ini")


def test_config_tuple_values(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[training]\nencoder_hidden = 7, 9\nsplit = 0.6, 0.3, 0.1\n"
                    "\n[simulation]\nkernel_amplitudes = 2.0\nkernel_widths = 1.0\n")
    cfg = load_config(path)
    assert cfg.train.encoder_hidden == (7, 9)
    assert cfg.train.split == (0.6, 0.3, 0.1)
    assert cfg.sim.model.kernel.amplitudes == (2.0,)


def test_preset_names():
    assert preset("full").sim.grid.n_points == 800
    assert preset("desk").sim.grid.n_points == 256
    assert preset("micro").sim.n_trajectories == 12
    with pytest.raises(ContractViolation):
        preset("galactic")


# ---------------------------------------------------------------------------
# command pipeline (micro preset throughout)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["generate", "--preset", "micro", "--seed", "5",
                 "--out", str(data)]) == 0
    return root


def test_generate_writes_loadable_dataset(workdir):
    ds = load_dataset(workdir / "data")
    assert ds.n == 12
    assert ds.meta["master_seed"] == 5


def test_pod_command(workdir):
    out = workdir / "targets.rxt"
    assert main(["pod", "--preset", "micro", "--data", str(workdir / "data"),
                 "--out", str(out)]) == 0
    basis = load_pod_basis(out)
    assert basis.modes.shape == (16, 4)
    # explicit flags override the preset
    out2 = workdir / "targets_r2.rxt"
    assert main(["pod", "--preset", "micro", "--data", str(workdir / "data"),
                 "--r", "2", "--nx", "8", "--out", str(out2)]) == 0
    assert load_pod_basis(out2).modes.shape == (8, 2)


def test_train_basis_command(workdir):
    out = workdir / "basisnet.rxw"
    assert main(["train-basis", "--preset", "micro",
                 "--pod", str(workdir / "targets.rxt"),
                 "--seed", "0", "--out", str(out)]) == 0
    assert out.is_file()


def test_train_command_and_artifacts(workdir):
    out = workdir / "model"
    assert main(["train", "--preset", "micro", "--data", str(workdir / "data"),
                 "--seed", "1", "--out", str(out)]) == 0
    for name in ("basis.rxw", "flow.rxw", "recon.rxw", "manifest.json",
                 "curves.csv"):
        assert (out / name).is_file()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 1
    header = (out / "curves.csv").read_text().splitlines()[0]
    assert header == "epoch,train_loss,val_loss,lr"


def test_evaluate_command_writes_metrics(workdir):
    out = workdir / "metrics.csv"
    assert main(["evaluate", "--preset", "micro",
                 "--data", str(workdir / "data"),
                 "--model", str(workdir / "model"), "--seed", "1",
                 "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "trajectory_id,rel_l2"
    assert len(lines) == 2  # micro split has one test trajectory
    for line in lines[1:]:
        float(line.split(",")[1])


def test_evaluate_requires_exactly_one_model(workdir):
    code = main(["evaluate", "--preset", "micro",
                 "--data", str(workdir / "data"), "--seed", "1",
                 "--out", str(workdir / "x.csv")])
    assert code == 2


def test_baseline_command(workdir):
    out = workdir / "baseline"
    assert main(["baseline", "--preset", "micro",
                 "--data", str(workdir / "data"),
                 "--model", str(workdir / "model"), "--seed", "1",
                 "--out", str(out)]) == 0
    assert (out / "baseline.rxw").is_file()
    assert (out / "curves.csv").is_file()
    metrics = workdir / "baseline_metrics.csv"
    assert main(["evaluate", "--preset", "micro",
                 "--data", str(workdir / "data"),
                 "--baseline", str(out / "baseline.rxw"), "--seed", "1",
                 "--out", str(metrics)]) == 0
    assert metrics.read_text().startswith("trajectory_id,rel_l2")


def test_finetune_command(workdir):
    out = workdir / "tuned"
    assert main(["finetune", "--preset", "micro",
                 "--model", str(workdir / "model"),
                 "--data", str(workdir / "data"), "--seed", "2",
                 "--out", str(out)]) == 0
    assert (out / "manifest.json").is_file()


def test_predict_command(workdir):
    queries = workdir / "queries.csv"
    queries.write_text("x,t\n0.0,0.0\n-5.0,2.5\n3.25,5.0\n")
    out = workdir / "pred.csv"
    assert main(["predict", "--model", str(workdir / "model"),
                 "--traj", str(workdir / "data" / "traj_00000.rxt"),
                 "--queries", str(queries), "--out", str(out),
                 "--preset", "micro"]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "x,t,u_hat"
    assert len(lines) == 4
    x, t, u = (float(v) for v in lines[2].split(","))
    assert (x, t) == (-5.0, 2.5) and np.isfinite(u)


def test_predict_rejects_orphan_trajectory(workdir, tmp_path):
    stray = tmp_path / "traj_00000.rxt"
    stray.write_bytes((workdir / "data" / "traj_00000.rxt").read_bytes())
    code = main(["predict", "--model", str(workdir / "model"),
                 "--traj", str(stray),
                 "--queries", str(workdir / "queries.csv"),
                 "--out", str(tmp_path / "pred.csv"), "--preset", "micro"])
    assert code == 2


def test_cli_reports_contract_violations_as_exit_2(tmp_path):
    code = main(["generate", "--preset", "micro", "--seed", "0",
                 "--config", str(tmp_path / "missing.ini"),
                 "--out", str(tmp_path / "d")])
    assert code == 2


def test_config_file_feeds_commands(workdir, tmp_path):
    ini = tmp_path / "exp.ini"
    ini.write_text("[simulation]\nn_trajectories = 4\n")
    out = tmp_path / "data4"
    assert main(["generate", "--preset", "micro", "--config", str(ini),
                 "--seed", "0", "--out", str(out)]) == 0
    assert load_dataset(out).n == 4
