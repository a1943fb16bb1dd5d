import hashlib
import os
import subprocess
import sys

import numpy as np
import pytest

from nhkoopman.cli import _glue_values, main
from nhkoopman.config import ConfigError, load_config, parse_weights, write_config
from nhkoopman.edmd import load_model
from nhkoopman.sampler import RawRecording


def _run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path), "-q"])


def _sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def _provenance(path):
    """Keys of the leading comment block."""
    keys = set()
    for ln in open(path):
        if not ln.startswith("#"):
            break
        keys.add(ln[1:].split("=")[0].strip())
    return keys


PROVENANCE = {"tool", "config", "seed"}


# ---------------------------------------------------------------------------
# configuration


def test_config_defaults_follow_robot():
    dyn = load_config()
    assert dyn.model_kind == "dynamic" and dyn.dt == 0.05 and dyn.dictionary == "D8Eul"
    assert dyn.postprocess.window == 40 and dyn.horizon == 50 and dyn.drift
    kin = load_config(overrides=["run.model_kind=kinematic"])
    assert kin.dt == 0.1 and kin.dictionary == "D5t" and kin.horizon == 60
    assert kin.sampling.segments_per_basis == 5 and not kin.drift
    assert np.allclose(kin.x0, [-1, -0.5, -np.pi / 6])


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nmodel_kind = kinematic\nseed = 7\n[ocp]\ncost = ce\n")
    cfg = load_config(str(path), ["ocp.horizon=12", "run.seed=9"])
    assert cfg.cost == "ce" and cfg.horizon == 12 and cfg.seed == 9
    out = tmp_path / "copy.ini"
    write_config(cfg, out)
    again = load_config(str(out))
    assert again.digest() == cfg.digest()
    assert cfg.provenance()["config"] == cfg.digest()
    assert load_config(overrides=["run.seed=1"]).digest() != load_config().digest()


@pytest.mark.parametrize("override", [
    "run.model_kind=boat", "run.jobs=0", "sampling.dt=0.013", "sampling.noise_pos=-1",
    "model.dictionary=D99", "ocp.horizon=0", "ocp.cost=xx", "ocp.model=fast",
    "ocp.weights=q=1,2", "ocp.x0=1,2", "ocp.duration=0.33", "experiments.configs=me",
    "experiments.sizes=0", "experiments.reference=circle", "experiments.windows=a",
    "nosection.key=1", "run.unknown=1", "broken", "experiments.dictionaries=D5t",
])
def test_config_rejects(override):
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_config_cross_field():
    # a kinematic dictionary on the second-order robot is caught before any work
    with pytest.raises(ConfigError, match="does not fit"):
        load_config(overrides=["model.dictionary=D5t"])
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.ini")


def test_parse_weights():
    w = parse_weights("q=1,10,1,1,1;r=0.01,0.02")
    assert w["q"] == (1, 10, 1, 1, 1) and w["r"] == (0.01, 0.02)
    w = parse_weights("Q=1,2,3;R=0.1,0.1")
    assert np.array_equal(w["Q"], np.diag([1.0, 2.0, 3.0]))
    assert parse_weights("") == {}
    for bad in ("z=1", "q", "q=a,b"):
        with pytest.raises(ConfigError):
            parse_weights(bad)
    cfg = load_config(overrides=["ocp.weights=q=2,2,2,2,2"])
    assert np.array_equal(cfg.cost_spec().q, [2, 2, 2, 2, 2])


def test_glue_values():
    argv = ["closedloop", "--x0", "-1,-0.5,-0.5", "--weights", "q=1;r=1", "--H", "5"]
    assert _glue_values(argv) == ["closedloop", "--x0=-1,-0.5,-0.5", "--weights=q=1;r=1",
                                  "--H", "5"]


# ---------------------------------------------------------------------------
# commands


@pytest.fixture(scope="module")
def kin_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("kin")
    assert main(["sample", "--kind", "kinematic", "--seed", "3", "--out", str(d), "-q"]) == 0
    rec = d / "recording.csv"
    assert main(["fit", str(rec), "--kind", "kinematic", "--out", str(d), "-q"]) == 0
    return d, rec, d / "model.txt"


def test_sample_kinematic(kin_files, tmp_path):
    d, rec, _ = kin_files
    r = RawRecording.read_csv(rec)
    segs = r.basis_segments()
    assert sorted(segs[:, 2].tolist()) == [1] * 5 + [2] * 5
    text = rec.read_text()
    assert text.startswith("# tool=nhkoopman")
    assert PROVENANCE <= _provenance(rec) and "# seed=3" in text
    # same seed, identical file
    assert _run(tmp_path, "sample", "--kind", "kinematic", "--seed", "3") == 0
    assert _sha(tmp_path / "recording.csv") == _sha(rec)


def test_sample_dynamic_partitions(tmp_path):
    assert _run(tmp_path, "sample", "--set", "sampling.segments_per_basis=2") == 0
    rec = RawRecording.read_csv(tmp_path / "recording.csv")
    assert set(rec.basis_segments()[:, 2].tolist()) == {0, 1, 2}
    assert _run(tmp_path, "fit", str(tmp_path / "recording.csv")) == 0
    sur = load_model(tmp_path / "model.txt")
    assert sur.K.shape == (3, 8, 8) and sur.dictionary.name == "D8Eul"


def test_fit_kinematic_model(kin_files, tmp_path):
    _, rec, model = kin_files
    sur = load_model(model)
    assert sur.K.shape == (3, 5, 5) and sur.dictionary.name == "D5t"
    assert PROVENANCE <= _provenance(model)
    assert _run(tmp_path, "fit", str(rec), "--kind", "kinematic", "--per-basis", "10",
                "-o", "small.txt") == 0
    small = load_model(tmp_path / "small.txt")
    # the kinematic model has no drift partition
    assert small.meta["counts"] == "0,10,10"


def test_closedloop_from_goal(kin_files, tmp_path):
    _, _, model = kin_files
    assert _run(tmp_path, "closedloop", "--kind", "kinematic", "--model", str(model),
                "--x0", "0,0,0", "--duration", "1", "--H", "10") == 0
    assert PROVENANCE <= _provenance(tmp_path / "closedloop_me-proj.csv")
    lines = (tmp_path / "closedloop_me-proj.csv").read_text().splitlines()
    body = [ln.split(",") for ln in lines if not ln.startswith("#")]
    col = body[0].index("value")
    vals = [float(r[col]) for r in body[1:] if r[col]]
    assert len(vals) == 10 and all(v == 0.0 for v in vals)


def test_closedloop_reference_scenario(kin_files, tmp_path):
    _, _, model = kin_files
    assert _run(tmp_path, "closedloop", "--kind", "kinematic", "--model", str(model),
                "--H", "60", "--dt", "0.1", "--x0", "-1,-0.5,-0.5236", "--cost", "me") == 0
    lines = (tmp_path / "closedloop_me-proj.csv").read_text().splitlines()
    last = lines[-1].split(",")
    assert float(last[0]) == pytest.approx(10.0)
    assert abs(float(last[2])) <= 1e-3


def test_montecarlo_four_files(kin_files, tmp_path):
    _, _, model = kin_files
    assert _run(tmp_path, "montecarlo", "--kind", "kinematic", "--model", str(model),
                "--configs", "me-proj,ce-proj,ds-proj,me-noproj", "--draws", "1", "--H", "5",
                "--set", "ocp.duration=0.5") == 0
    files = sorted(p.name for p in tmp_path.glob("ecdf_*.csv"))
    assert files == ["ecdf_ce-proj.csv", "ecdf_ds-proj.csv", "ecdf_me-noproj.csv",
                     "ecdf_me-proj.csv"]
    for f in files:
        assert PROVENANCE <= _provenance(tmp_path / f)
        assert "# eval_time=0.5" in (tmp_path / f).read_text()


def test_sweep_command(kin_files, tmp_path):
    _, rec, _ = kin_files
    assert _run(tmp_path, "sweep", str(rec), "--kind", "kinematic", "--sizes", "10,full",
                "--draws", "1", "--set", "ocp.horizon=5") == 0
    assert PROVENANCE <= _provenance(tmp_path / "sweep.csv")
    text = (tmp_path / "sweep.csv").read_text()
    assert "me-proj-d10" in text and "me-proj-dfull" in text
    assert _run(tmp_path, "sweep", str(rec), "--kind", "kinematic", "--sizes", "100000",
                "--draws", "1") == 2


def test_openloop_command(tmp_path):
    assert _run(tmp_path, "sample", "--set", "sampling.segments_per_basis=3") == 0
    assert _run(tmp_path, "fit", str(tmp_path / "recording.csv")) == 0
    assert _run(tmp_path, "openloop", "--model", str(tmp_path / "model.txt"), "--runs", "2",
                "--reference", "square", "--lookahead", "5") == 0
    assert PROVENANCE <= _provenance(tmp_path / "openloop_square_w40.csv")


def test_exit_codes(kin_files, tmp_path):
    _, rec, model = kin_files
    # argument and config errors
    assert _run(tmp_path, "bogus") == 2
    assert _run(tmp_path, "sample", "--cost", "xx") == 2
    assert _run(tmp_path, "closedloop", "--model", str(model)) == 2
    # infeasible sampling
    # u1 for 5 s pushes the speed past its limit from every start
    assert _run(tmp_path, "sample", "--set", "sampling.min_steps=100") == 3
    # rank deficiency
    assert _run(tmp_path, "fit", str(rec), "--kind", "kinematic", "--per-basis", "2",
                "--set", "regression.ridge=0") == 4
    # I/O
    assert _run(tmp_path, "fit", str(tmp_path / "missing.csv"), "--kind", "kinematic") == 5
    bad = tmp_path / "bad.csv"
    bad.write_text("garbage\n")
    assert _run(tmp_path, "fit", str(bad), "--kind", "kinematic") == 5


def test_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv("NHKOOPMAN_OUT", str(tmp_path / "envout"))
    assert main(["sample", "--kind", "kinematic", "--set", "sampling.segments_per_basis=1",
                 "-q"]) == 0
    assert (tmp_path / "envout" / "recording.csv").exists()


def test_module_entry_point(tmp_path):
    env = {**os.environ, "NHKOOPMAN_OUT": str(tmp_path)}
    proc = subprocess.run([sys.executable, "-m", "nhkoopman", "sample", "--kind", "kinematic",
                           "--set", "sampling.segments_per_basis=1"], env=env,
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert "basis 1" in proc.stdout
