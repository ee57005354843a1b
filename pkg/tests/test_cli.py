import json
import subprocess
import sys

import pytest

from surfelsim.cli import main
from surfelsim.fileio import parse_key_values, write_scene
from surfelsim.gaussians import GaussianSet
from surfelsim.scene_graph import SceneGraph

SYNTH = ["synth", "--recipe", "textured-plane", "--seed", "3", "--frames", "4",
         "--spacing", "0.4", "--camera", "12x16", "--lidar", "8x32"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, parse_key_values(out) if code == 0 else {}, err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(SYNTH + ["--out", str(root)]) == 0
    return root


def test_synth_outputs(dataset, capsys):
    assert (dataset / "manifest.json").exists() and (dataset / "truth.scene").exists()
    man = json.loads((dataset / "manifest.json").read_text())
    assert len(man["frames"]) == 4


def test_fit_then_eval_writes_reports(dataset, tmp_path, capsys):
    code, out, _ = run(capsys, "fit", "--manifest", dataset / "manifest.json", "--iterations", 5,
                       "--out", tmp_path / "fit")
    assert code == 0 and int(out["iterations"]) == 5
    assert (tmp_path / "fit" / "loss_log.tsv").read_text().count("\n") == 6
    assert (tmp_path / "fit" / "loss.png").exists()
    code, out, _ = run(capsys, "eval", "--manifest", dataset / "manifest.json", "--scene",
                       tmp_path / "fit" / "fitted.scene", "--out", tmp_path / "eval")
    assert code == 0
    for key in ("depth.cd", "depth.rmse", "depth.f_score", "camera.psnr", "intensity.rmse"):
        assert key in out
    report = parse_key_values((tmp_path / "eval" / "report.txt").read_text())
    assert report["depth.rmse"] == out["depth.rmse"]
    figs = out["figures"].split(",")
    assert len(figs) >= 3 and all(p.endswith(".png") for p in figs)


def test_eval_identical_range_image(dataset, tmp_path, capsys):
    man = json.loads((dataset / "manifest.json").read_text())
    gt = dataset / man["frames"][0]["lidar"]["range_image"]
    code, out, _ = run(capsys, "eval", "--manifest", dataset / "manifest.json",
                       "--range-image", gt, "--frame", 0)
    assert code == 0
    assert float(out["depth.cd"]) == 0.0 and float(out["depth.rmse"]) == 0.0
    assert float(out["depth.ssim"]) == 1.0 and out["depth.psnr_infinite"] == "True"


def test_render_lidar_on_truth_is_self_consistent(dataset, tmp_path, capsys):
    code, out, _ = run(capsys, "render-lidar", "--scene", dataset / "truth.scene", "--manifest",
                       dataset / "manifest.json", "--frame", 1, "--out", tmp_path)
    assert code == 0 and int(out["points"]) > 0
    code, out, _ = run(capsys, "eval", "--manifest", dataset / "manifest.json",
                       "--range-image", tmp_path / "range.rimg", "--frame", 1)
    assert float(out["depth.cd"]) < 1e-3 and float(out["depth.rmse"]) < 1e-3


def test_render_camera(dataset, tmp_path, capsys):
    code, out, _ = run(capsys, "render-camera", "--scene", dataset / "truth.scene", "--manifest",
                       dataset / "manifest.json", "--out", tmp_path)
    assert code == 0 and (tmp_path / "color.png").exists() and (tmp_path / "depth.rimg").exists()
    assert 0 < float(out["coverage"]) <= 1


def test_inspect(dataset, tmp_path, capsys):
    write_scene(tmp_path / "empty.scene", SceneGraph(GaussianSet.empty()))
    code, out, _ = run(capsys, "inspect", "--scene", tmp_path / "empty.scene")
    assert code == 0 and out["primitives"] == "0"
    code, out, _ = run(capsys, "inspect", "--scene", dataset / "truth.scene")
    assert int(out["primitives"]) > 0 and out["degree.color"] == "3"


def error_line(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    kind, _, rest = lines[0].partition(" message=")
    return kind.removeprefix("error="), json.loads(rest)


def test_unknown_config_key_listed(dataset, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("fit.iterations = 3\nfit.bogus = 1\nloss.nope = 2\n")
    code, _, err = run(capsys, "fit", "--manifest", dataset / "manifest.json", "--config", cfg,
                       "--out", tmp_path / "o")
    kind, msg = error_line(err)
    assert code != 0 and kind == "ConfigError" and "fit.bogus" in msg and "loss.nope" in msg


def test_corrupt_and_missing_files(dataset, tmp_path, capsys):
    bad = tmp_path / "bad.scene"
    data = bytearray((dataset / "truth.scene").read_bytes())
    data[8] = 9
    bad.write_bytes(bytes(data))
    code, _, err = run(capsys, "inspect", "--scene", bad)
    assert code != 0 and error_line(err)[0] == "FormatError"
    code, _, err = run(capsys, "inspect", "--scene", tmp_path / "nope.scene")
    assert code != 0 and error_line(err)[0] == "FormatError"


def test_bad_arguments_single_line(capsys):
    code, _, err = run(capsys, "synth", "--recipe", "nope", "--out", "x")
    assert code != 0 and error_line(err)[0] == "UsageError"


def test_locked_output_directory(dataset, tmp_path, capsys):
    (tmp_path / ".surfelsim.lock").write_text("")
    code, _, err = run(capsys, "render-camera", "--scene", dataset / "truth.scene",
                       "--manifest", dataset / "manifest.json", "--out", tmp_path)
    assert code != 0 and error_line(err)[0] == "LockError"


def test_console_script_entry_point(tmp_path):
    write_scene(tmp_path / "e.scene", SceneGraph(GaussianSet.empty()))
    proc = subprocess.run([sys.executable, "-m", "surfelsim.cli", "inspect", "--scene",
                           str(tmp_path / "e.scene")], capture_output=True, text=True)
    assert proc.returncode == 0 and "primitives=0" in proc.stdout


def test_synth_fit_eval_reaches_depth_target(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--recipe", "textured-plane", "--seed", "3", "--frames", "8",
                 "--spacing", "0.4", "--camera", "24x32", "--lidar", "8x48", "--out", str(data)]) == 0
    cfg = tmp_path / "fit.cfg"
    cfg.write_text("densify.every = 0\nlr.center_final = 0.1\n")
    capsys.readouterr()
    code, _, _ = run(capsys, "fit", "--manifest", data / "manifest.json", "--config", cfg,
                     "--iterations", 2000, "--out", tmp_path / "run")
    assert code == 0
    code, out, _ = run(capsys, "eval", "--manifest", data / "manifest.json", "--scene",
                       tmp_path / "run" / "fitted.scene")
    assert float(out["depth.rmse"]) < 0.02
