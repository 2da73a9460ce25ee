import json
import os

import numpy as np
import pytest

from fedbht.blockmesh import BlockSceneParams, write_desk_scenario
from fedbht.cli import main as cli_main
from fedbht.config import load_scenario
from fedbht.errors import ConfigError
from fedbht.kernels import Variant
from fedbht.output import read_snapshot_csv


def small_params(**overrides):
    base = dict(nx=6, ny=6, nz=6, dt=0.1, total_time=5.0,
                snapshot_times=(2.5, 5.0), source_off_time=2.5)
    base.update(overrides)
    return BlockSceneParams(**base)


@pytest.fixture(scope="module")
def scenario_path(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    return write_desk_scenario(out, small_params())


def rewrite(scenario_path, tmp_path, mutate):
    """Copy the scenario JSON with one field mutated; assets stay shared."""
    with open(scenario_path) as fh:
        doc = json.load(fh)
    src_dir = os.path.dirname(scenario_path)
    doc["mesh_path"] = os.path.join(src_dir, doc["mesh_path"])
    doc["node_sets"] = {k: os.path.join(src_dir, v)
                        for k, v in doc["node_sets"].items()}
    doc["deformation"]["path"] = os.path.join(src_dir, doc["deformation"]["path"])
    mutate(doc)
    path = tmp_path / "mutated.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_scenario_roundtrip(scenario_path):
    cfg = load_scenario(scenario_path)
    assert cfg.variant is Variant.DEFORMED_ANISO_TEMP_DEP
    assert cfg.schedule.dt == 0.1
    assert cfg.schedule.total_time == 5.0
    assert cfg.schedule.snapshot_times == (2.5, 5.0)
    assert cfg.schedule.events == ((2.5, "source_off"),)
    assert cfg.mesh.n_nodes == 7 ** 3
    assert cfg.mesh.tets.shape[0] == 6 * 6 ** 3
    assert cfg.material.isotropic
    assert cfg.material.conductivity.evaluate(37.0) == pytest.approx(0.53)
    assert cfg.perfusion.w_b == 0.0
    assert len(cfg.boundary.dirichlet) == 1
    assert len(cfg.boundary.fluxes) == 2
    assert len(cfg.boundary.films) == 1
    assert len(cfg.probes) == 2
    assert cfg.update_thermal_mass is True
    assert cfg.output_dir == "out"


def test_missing_required_key(scenario_path, tmp_path):
    path = rewrite(scenario_path, tmp_path, lambda d: d.pop("material"))
    with pytest.raises(ConfigError, match="material"):
        load_scenario(path)


def test_unknown_variant(scenario_path, tmp_path):
    path = rewrite(scenario_path, tmp_path,
                   lambda d: d.update(variant="vii"))
    with pytest.raises(ConfigError, match="variant"):
        load_scenario(path)


def test_unknown_boundary_kind(scenario_path, tmp_path):
    def mutate(d):
        d["boundary"]["vessel_wall"] = {"kind": "robin", "temperature": 37.0}
    path = rewrite(scenario_path, tmp_path, mutate)
    with pytest.raises(ConfigError, match="vessel_wall"):
        load_scenario(path)


def test_boundary_on_undeclared_set(scenario_path, tmp_path):
    def mutate(d):
        d["boundary"]["mystery"] = {"kind": "dirichlet", "temperature": 37.0}
    path = rewrite(scenario_path, tmp_path, mutate)
    with pytest.raises(ConfigError, match="mystery"):
        load_scenario(path)


def test_non_increasing_table_rejected(scenario_path, tmp_path):
    def mutate(d):
        d["material"]["conductivity"] = [[37.0, 0.53], [37.0, 0.57]]
    path = rewrite(scenario_path, tmp_path, mutate)
    with pytest.raises(ConfigError, match="material"):
        load_scenario(path)


def test_broken_mesh_reference(scenario_path, tmp_path):
    path = rewrite(scenario_path, tmp_path,
                   lambda d: d.update(mesh_path="no_such.mesh"))
    with pytest.raises(ConfigError, match="mesh_path"):
        load_scenario(path)


def test_garbage_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not valid json")
    with pytest.raises(ConfigError, match="JSON"):
        load_scenario(str(path))
    with pytest.raises(ConfigError):
        load_scenario(str(tmp_path / "missing.json"))


def test_cli_run_writes_outputs(scenario_path, tmp_path, capsys):
    out = tmp_path / "results"
    assert cli_main(["run", scenario_path, "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "completed 50 steps" in stdout
    for name in ("snapshot_2500.csv", "snapshot_2500.vtk",
                 "snapshot_5000.csv", "snapshot_5000.vtk",
                 "probes.csv", "manifest.json"):
        assert (out / name).exists(), name
    with open(out / "manifest.json") as fh:
        manifest = json.load(fh)
    assert manifest["diverged"] is False
    assert manifest["n_steps"] == 50
    assert manifest["config"]["schedule"]["dt"] == 0.1
    assert manifest["dt_critical"] > 0.1
    coords, temps = read_snapshot_csv(out / "snapshot_5000.csv")
    assert coords.shape == (7 ** 3, 3)
    assert temps.max() > 37.0  # the heater left a mark


def test_cli_rerun_is_byte_identical(scenario_path, tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert cli_main(["run", scenario_path, "--out", str(out1)]) == 0
    assert cli_main(["run", scenario_path, "--out", str(out2)]) == 0
    for name in ("snapshot_2500.csv", "snapshot_5000.csv", "probes.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_cli_stability_report(scenario_path, capsys):
    assert cli_main(["stability", scenario_path]) == 0
    stdout = capsys.readouterr().out
    assert "lambda_max" in stdout
    assert "dt_critical" in stdout
    assert "within the critical step" in stdout
    # deformed variant with a moving mesh is sampled at start and end
    assert stdout.count("iterations") == 2


def test_cli_verify_forward_replay(scenario_path, tmp_path, capsys):
    out = tmp_path / "hist"
    code = cli_main(["verify", scenario_path, "--scheme", "forward",
                     "--node-tol", "1e-9", "--total-tol", "1e-9",
                     "--out", str(out)])
    stdout = capsys.readouterr().out
    assert code == 0, stdout
    assert "OK" in stdout
    assert (out / "error_histogram.csv").exists()


def test_cli_verify_tolerance_exceeded(scenario_path, capsys):
    code = cli_main(["verify", scenario_path, "--scheme", "backward",
                     "--node-tol", "1e-12", "--total-tol", "1e-15"])
    stdout = capsys.readouterr().out
    assert code == 4, stdout
    assert "EXCEEDED" in stdout


def test_cli_stability_refusal(tmp_path, capsys):
    scene = write_desk_scenario(tmp_path / "fast",
                                small_params(dt=1000.0, total_time=5000.0,
                                             snapshot_times=(5000.0,),
                                             source_off_time=1000.0))
    code = cli_main(["run", scene, "--out", str(tmp_path / "o")])
    assert code == 2
    assert "refusing to run" in capsys.readouterr().err


def test_cli_divergence_exit_code(tmp_path, capsys):
    scene = write_desk_scenario(
        tmp_path / "wild",
        small_params(dt=1e9, total_time=1e11, snapshot_times=(1e10,),
                     source_off_time=1e9))
    out = tmp_path / "partial"
    code = cli_main(["run", scene, "--out", str(out), "--dt-override"])
    stdout = capsys.readouterr().out
    assert code == 3, stdout
    assert "diverged at step" in stdout
    with open(out / "manifest.json") as fh:
        manifest = json.load(fh)
    assert manifest["diverged"] is True
    assert manifest["divergence_step"] is not None


def test_cli_metrics_compare(scenario_path, tmp_path, capsys):
    out = tmp_path / "m"
    cli_main(["run", scenario_path, "--out", str(out)])
    capsys.readouterr()
    snap = str(out / "snapshot_5000.csv")
    assert cli_main(["metrics", snap, snap, "--node-tol", "0.0"]) == 0
    assert "max normalized 0.000000e+00" in capsys.readouterr().out

    lines = open(snap).read().splitlines()
    head, fields = lines[0], lines[-1].split(",")
    fields[4] = str(float(fields[4]) + 0.5)
    bumped = tmp_path / "bumped.csv"
    bumped.write_text("\n".join(lines[:-1] + [",".join(fields)]) + "\n")
    assert cli_main(["metrics", str(bumped), snap,
                     "--node-tol", "1e-6"]) == 4


def test_cli_make_mesh_rejects_too_coarse_grid(tmp_path, capsys):
    code = cli_main(["make-mesh", str(tmp_path / "x"), "--cells", "4"])
    assert code == 2
    assert "captured no nodes" in capsys.readouterr().err


def test_cli_missing_scenario(tmp_path, capsys):
    assert cli_main(["run", str(tmp_path / "absent.json")]) == 2
    assert "error" in capsys.readouterr().err
