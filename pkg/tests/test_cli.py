from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest
from helpers import synthetic_dataset, write_voc

from isim_forge.cli import EXIT_INVALID, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from isim_forge.isim import IsimRaster


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def graph_file(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_voc(synthetic_dataset(200, seed=4), root / "voc")
    out = root / "g.json"
    assert main(["fit", str(root / "voc"), str(out)]) == EXIT_OK
    return out


def test_fit_reports_summary(graph_file, tmp_path, capsys):
    voc = graph_file.parent / "voc"
    assert main(["fit", str(voc), str(tmp_path / "g2.json"), "--json"]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["classes"] == 6 and payload["images"] == 200
    # Same annotations give the same graph bytes.
    assert (tmp_path / "g2.json").read_bytes() == graph_file.read_bytes()


def test_generate_twice_byte_identical(graph_file, tmp_path):
    for name in ("a", "b"):
        assert main(["generate", str(graph_file), str(tmp_path / name), "--count", "5", "--seed", "9"]) == EXIT_OK
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a == b
    assert len(a) == 16  # 5 bundles x 3 files + manifest


def test_generate_refuses_existing_without_overwrite(graph_file, tmp_path):
    args = ["generate", str(graph_file), str(tmp_path), "--count", "2", "--seed", "1"]
    assert main(args) == EXIT_OK
    assert main(args) == EXIT_IO
    assert main(args + ["--overwrite"]) == EXIT_OK
    assert main(args + ["--resume"]) == EXIT_OK


def test_validate_flags_corrupted_png(graph_file, tmp_path, capsys):
    out = tmp_path / "b"
    assert main(["generate", str(graph_file), str(out), "--count", "3", "--seed", "2"]) == EXIT_OK
    # Clustered same-class boxes merge into one region and pull acc_n down, so
    # the floor is lowered to isolate the raster check.
    assert main(["validate", str(out), "--floor", "0"]) == EXIT_OK
    png = sorted(out.glob("*.isim.png"))[1]
    IsimRaster(np.zeros((800, 800), dtype=np.uint8), 6).save_png(png)
    capsys.readouterr()
    assert main(["validate", str(out), "--floor", "0", "--json"]) == EXIT_INVALID
    report = json.loads(capsys.readouterr().out)
    assert report["failed"] == 1
    bad = [r for r in report["bundles"] if not r["passed"]]
    assert png.name.startswith(bad[0]["bundle_id"])


def test_validate_unreadable_bundle_is_a_failure(graph_file, tmp_path, capsys):
    assert main(["generate", str(graph_file), str(tmp_path), "--count", "2", "--seed", "3"]) == EXIT_OK
    sorted(tmp_path.glob("*.isim.png"))[0].write_bytes(b"junk")
    capsys.readouterr()
    assert main(["validate", str(tmp_path), "--floor", "0"]) == EXIT_INVALID
    assert "unreadable" in capsys.readouterr().out


def test_inspect(graph_file, capsys):
    assert main(["inspect", str(graph_file)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "storage tank" in out and "p_id" in out
    assert main(["inspect", str(graph_file), "--json"]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert [c["gray_value"] for c in payload["classes"]] == [42, 85, 127, 170, 212, 255]


def test_fidelity_sampled_and_from_bundles(graph_file, tmp_path, capsys):
    assert main(["fidelity", str(graph_file), "--sample", "300", "--seed", "1", "--json"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["n_layouts"] == 300 and report["tv_class"] < 0.1
    assert main(["generate", str(graph_file), str(tmp_path), "--count", "100", "--seed", "1"]) == EXIT_OK
    capsys.readouterr()
    assert main(["fidelity", str(graph_file), "--bundles", str(tmp_path), "--json"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["n_layouts"] == 100


def test_fidelity_grid(graph_file, capsys):
    assert main(["fidelity", str(graph_file), "--grid", "--sample", "150", "--seed", "0"]) == EXIT_OK
    assert len(capsys.readouterr().out.strip().splitlines()) == 11


def test_usage_errors(graph_file, tmp_path):
    assert main(["fidelity", str(graph_file), "--disable", "colour", "--seed", "0"]) == EXIT_USAGE
    assert main(["fidelity", str(graph_file), "--sample", "10", "--seed", "0"]) == EXIT_USAGE
    assert main(["generate", str(graph_file), str(tmp_path), "--count", "0", "--seed", "0"]) == EXIT_USAGE
    assert main(["generate", str(graph_file), str(tmp_path), "--max-iou", "2", "--seed", "0"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as ei:
        main(["generate"])
    assert ei.value.code == EXIT_USAGE


def test_missing_inputs_are_io_errors(tmp_path):
    assert main(["inspect", str(tmp_path / "missing.json")]) == EXIT_IO
    assert main(["validate", str(tmp_path / "nowhere")]) == EXIT_IO
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["fit", str(empty), str(tmp_path / "g.json"), "--format", "voc"]) == EXIT_IO


def test_console_entry_point_and_env_jobs(graph_file, tmp_path):
    env = {"ISIM_FORGE_JOBS": "2", "PATH": "/usr/local/bin:/usr/bin:/bin"}
    run = subprocess.run(
        [sys.executable, "-m", "isim_forge.cli", "generate", str(graph_file), str(tmp_path), "--count", "4", "--seed", "5"],
        capture_output=True,
        text=True,
        env=env,
    )
    assert run.returncode == 0, run.stderr
    assert "seed=5" in run.stderr
    bad = subprocess.run([sys.executable, "-m", "isim_forge.cli", "bogus"], capture_output=True, text=True)
    assert bad.returncode == EXIT_USAGE
