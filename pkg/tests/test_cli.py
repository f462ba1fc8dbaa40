import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import small_spec
from sidewalk_snow.cli import main
from sidewalk_snow.masks import decode_pgm, encode_pgm
from sidewalk_snow.synthetic import generate, true_coverage, write_bundle


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def classify_args(d, model, query, *extra):
    return ("classify", "--model", model, "--aug-model-dir", d / "augmented", "--manifest", d / "manifest.json", "--query", query, *extra)


def sweep_args(d, model, report, *extra):
    return ("sweep", "--model", model, "--aug-model-dir", d / "augmented", "--manifest", d / "manifest.json", "--report", report, *extra)


@pytest.fixture(scope="module")
def small_dir(tmp_path_factory):
    return write_bundle(generate(small_spec()), tmp_path_factory.mktemp("small"))


def test_build_summary(noisy_dir, noisy_model_file, capsys):
    out_file = noisy_dir / "again.txt"
    code, out, _ = run(capsys, "build", "--model-dir", noisy_dir / "sparse", "--manifest", noisy_dir / "manifest.json", "--out", out_file)
    assert code == 0 and out_file.exists()
    lines = out.splitlines()
    assert lines[-1].startswith("total ") and "from 36/36 images" in lines[-1]
    assert len(lines) == 37
    assert out_file.read_bytes() == noisy_model_file.read_bytes()


def test_build_missing_manifest(tmp_path, noisy_dir, capsys):
    code, _, err = run(capsys, "build", "--model-dir", noisy_dir / "sparse", "--manifest", tmp_path / "none.json", "--out", tmp_path / "m.txt")
    assert code == 1 and "usage" in err


def test_build_without_sidewalk_is_pipeline_failure(tmp_path, capsys):
    d = write_bundle(generate(small_spec()), tmp_path / "b")
    for p in (d / "rasters").glob("*.pgm"):
        grid = decode_pgm(p.read_bytes()).copy()
        grid[grid == 2] = 0
        p.write_bytes(encode_pgm(grid))
    code, _, err = run(capsys, "build", "--model-dir", d / "sparse", "--manifest", d / "manifest.json", "--out", tmp_path / "m.txt")
    assert code == 2 and "ModelEmpty" in err


def test_classify_covered_query(noisy_dir, noisy_model_file, noisy_bundle, capsys):
    code, out, _ = run(capsys, *classify_args(noisy_dir, noisy_model_file, "query_covered_a.png", "--threshold", "0.60"))
    assert code == 0
    name, outcome, coverage, threshold = out.split()
    assert (name, outcome, threshold) == ("query_covered_a.png", "SnowCovered", "0.60")
    assert coverage.startswith("0.9")
    assert abs(float(coverage) - true_coverage(noisy_bundle, name)) <= 0.03


def test_classify_out_of_scene(noisy_dir, noisy_model_file, capsys):
    code, out, _ = run(capsys, *classify_args(noisy_dir, noisy_model_file, "far_away.png"))
    assert code == 0
    assert out.strip() == "far_away.png OutOfScene - 0.60"


def test_classify_clear_query(noisy_dir, noisy_model_file, capsys):
    code, out, _ = run(capsys, *classify_args(noisy_dir, noisy_model_file, "query_clear_a.png"))
    assert code == 0 and out.strip() == "query_clear_a.png NoSnow - 0.60"


def test_classify_overlay(tmp_path, noisy_dir, noisy_model_file, capsys):
    overlay = tmp_path / "o.pgm"
    code, _, _ = run(capsys, *classify_args(noisy_dir, noisy_model_file, "query_cleared_b.png", "--overlay-out", overlay))
    assert code == 0
    codes = set(np.unique(decode_pgm(overlay.read_bytes())).tolist())
    assert codes == {0, 1, 2, 3}


def test_classify_bad_threshold(noisy_dir, noisy_model_file, capsys):
    code, _, err = run(capsys, *classify_args(noisy_dir, noisy_model_file, "query_covered_a.png", "--threshold", "1.5"))
    assert code == 1 and "usage" in err


def test_classify_unregistered(noisy_dir, noisy_model_file, capsys):
    args = list(classify_args(noisy_dir, noisy_model_file, "query_covered_a.png"))
    args[args.index(noisy_dir / "augmented")] = noisy_dir / "sparse"
    code, _, err = run(capsys, *args)
    assert code == 4 and "not registered" in err


def test_classify_name_not_in_manifest(noisy_dir, noisy_model_file, capsys):
    code, _, _ = run(capsys, *classify_args(noisy_dir, noisy_model_file, "ghost.png"))
    assert code == 1


def test_classify_corrupt_model_is_io_error(tmp_path, noisy_dir, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("SIDEWALK_MODEL v1\nscene_id \"x\"\n")
    code, _, _ = run(capsys, *classify_args(noisy_dir, bad, "query_covered_a.png"))
    assert code == 3


def test_sweep_report(tmp_path, noisy_dir, noisy_model_file, capsys):
    report = tmp_path / "r.csv"
    code, out, _ = run(capsys, *sweep_args(noisy_dir, noisy_model_file, report))
    assert code == 0
    lines = report.read_text().splitlines()
    assert len(lines) == 21 and lines[0] == "threshold,clear_pct,snow_covered_pct,cleared_pct"
    assert out.startswith("band ") or out.strip() == "no band"


def test_sweep_without_labels(tmp_path, small_dir, capsys):
    doc = json.loads((small_dir / "manifest.json").read_text())
    for e in doc["images"]:
        e.pop("category", None)
    man = small_dir / "unlabeled.json"
    man.write_text(json.dumps(doc))
    model = tmp_path / "m.txt"
    assert run(capsys, "build", "--model-dir", small_dir / "sparse", "--manifest", man, "--out", model)[0] == 0
    code, _, err = run(capsys, "sweep", "--model", model, "--aug-model-dir", small_dir / "augmented", "--manifest", man, "--report", tmp_path / "r.csv")
    assert code == 2 and "NoLabeledQueries" in err


def test_sweep_zero_step(tmp_path, noisy_dir, noisy_model_file, capsys):
    code, _, _ = run(capsys, *sweep_args(noisy_dir, noisy_model_file, tmp_path / "r.csv", "--step", "0"))
    assert code == 1


def test_sweep_inverted_range(tmp_path, noisy_dir, noisy_model_file, capsys):
    code, _, _ = run(capsys, *sweep_args(noisy_dir, noisy_model_file, tmp_path / "r.csv", "--t-min", "0.9", "--t-max", "0.1"))
    assert code == 1


def test_synth_default_and_repeat(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(small_spec().to_dict()))
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "synth", "--spec", spec, "--out-dir", a)[0] == 0
    assert run(capsys, "synth", "--spec", spec, "--out-dir", b)[0] == 0
    for sub in ("sparse/points3D.txt", "augmented/images.txt", "manifest.json", "ground_truth.json"):
        assert (a / sub).exists()
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files)


def test_synth_records_true_coverage(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(small_spec().to_dict()))
    code, out, _ = run(capsys, "synth", "--spec", spec, "--out-dir", tmp_path / "o")
    gt = json.loads((tmp_path / "o" / "ground_truth.json").read_text())
    expected = true_coverage(generate(small_spec()), "q.png")
    assert gt["true_coverage"]["q.png"] == expected
    assert f"q.png {expected:.4f}" in out


def test_synth_invalid_spec(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"point_count": 2}))
    assert run(capsys, "synth", "--spec", spec, "--out-dir", tmp_path / "o")[0] == 1
    spec.write_text("{not json")
    assert run(capsys, "synth", "--spec", spec, "--out-dir", tmp_path / "o")[0] == 1


def test_unknown_subcommand(capsys):
    assert main(["melt"]) == 1
    assert "invalid choice" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "sidewalk_snow", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "classify" in r.stdout
