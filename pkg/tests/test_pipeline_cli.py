"""End-to-end checks of the stage pipeline through the command line."""

import json
import shutil

import pytest

from urbanpref import cli
from urbanpref.config import load_config
from urbanpref.corpus import load_manifest
from urbanpref.features import read_fvec
from urbanpref.pipeline import DependencyError, verify_tree
from urbanpref.som import load_som

from conftest import write_micro_ini

EXPECTED = [
    "provenance.json",
    "data/places.jsonl",
    "grid.json",
    "features.sat.fvec",
    "features.sv.fvec",
    "embed.sv.json",
    "embed.sv.png",
    "som.structure.som0",
    "clusters.json",
    "schedule.json",
    "votes.jsonl",
    "labels.json",
    "model.sv.mlp0",
    "predictions.sv.jsonl",
    "train.curves.png",
    "train.summary.tsv",
    "model.sat.mlp0",
    "predictions.sat.jsonl",
    "adapt.summary.tsv",
    "som.specific.som0",
    "spectrum.generic.png",
    "spectrum.specific.png",
    "layout.json",
    "layout.png",
    "layout.tsv",
]


def test_run_all_produces_expected_tree(micro_tree):
    ini, out = micro_tree
    missing = [rel for rel in EXPECTED if not (out / rel).exists()]
    assert missing == []
    for city in ("alpha", "beta", "gamma"):
        assert (out / "maps" / f"{city}.generic.png").exists()
        assert (out / "maps" / f"{city}.specific.png").exists()
        assert (out / "maps" / f"{city}.generic.json").exists()
        assert (out / "maps" / f"{city}.specific.json").exists()


def test_grid_counts_match_manifest(micro_tree):
    ini, out = micro_tree
    grid = json.loads((out / "grid.json").read_text())
    assert grid["total_cells"] == 3 * 36
    assert all(c["cells"] == 36 and c["rows"] == 6 for c in grid["cities"].values())
    manifest = load_manifest(out / "data/places.jsonl")
    assert grid["total_sv_images"] == sum(1 for r in manifest.records if r.sv_path)


def test_features_align_with_manifest(micro_tree):
    ini, out = micro_tree
    manifest = load_manifest(out / "data/places.jsonl")
    sat = read_fvec(out / "features.sat.fvec")
    sv = read_fvec(out / "features.sv.fvec")
    assert list(sat.ids) == [r.sat_id for r in manifest.records]
    assert list(sv.ids) == [r.sv_id for r in manifest.records if r.sv_path]


def test_som_shape_matches_config(micro_tree):
    ini, out = micro_tree
    grid = load_som(out / "som.structure.som0")
    assert grid.weights.shape == (16, 512)


def test_verify_clean_tree(micro_tree, capsys):
    ini, out = micro_tree
    assert cli.main(["verify", "--config", str(ini)]) == 0
    assert "all recorded artifacts match" in capsys.readouterr().out


def test_verify_reports_corruption(micro_tree, tmp_path, capsys):
    ini, out = micro_tree
    copy = tmp_path / "tree"
    shutil.copytree(out, copy)
    (copy / "grid.json").write_text("{}")
    (copy / "labels.json").unlink()
    ini2 = write_micro_ini(tmp_path / "m.ini", copy)
    assert cli.main(["verify", "--config", str(ini2)]) == 1
    err = capsys.readouterr().err
    assert "grid.json: content changed since it was stamped" in err
    assert "labels.json: recorded but missing" in err


def test_verify_tree_accepts_config_object(micro_tree):
    ini, out = micro_tree
    assert verify_tree(load_config(ini)) == []


def test_stage_rerun_is_idempotent(micro_tree):
    """Re-running a stage over its own outputs rewrites identical bytes."""
    ini, out = micro_tree
    before = (out / "grid.json").read_bytes()
    votes_before = (out / "votes.jsonl").read_bytes()
    assert cli.main(["grid", "--config", str(ini)]) == 0
    # decided pairs are not re-voted, so the log survives a labels rerun
    assert cli.main(["labels", "--synthetic-rater", "--config", str(ini)]) == 0
    assert (out / "grid.json").read_bytes() == before
    assert (out / "votes.jsonl").read_bytes() == votes_before
    assert verify_tree(load_config(ini)) == []


def test_missing_dependency_names_producer_stage(tmp_path, capsys):
    ini = write_micro_ini(tmp_path / "m.ini", tmp_path / "empty")
    assert cli.main(["clusters", "--config", str(ini)]) == 3
    err = capsys.readouterr().err
    assert "som.structure.som0" in err
    assert "run `urbanpref som` first" in err


def test_labels_without_votes_demands_survey(micro_tree, tmp_path, capsys):
    ini, out = micro_tree
    copy = tmp_path / "tree"
    shutil.copytree(out, copy)
    (copy / "votes.jsonl").unlink()
    ini2 = write_micro_ini(tmp_path / "m.ini", copy)
    assert cli.main(["labels", "--config", str(ini2)]) == 3
    assert "survey-serve" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[city:x]\nlat = 99\nlon = 2\nmix = green:1.0\n")
    assert cli.main(["grid", "--config", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err


def test_synth_requires_cities(tmp_path, capsys):
    empty = tmp_path / "empty.ini"
    empty.write_text(f"[pipeline]\nseed = 1\nout = {tmp_path / 'o'}\n")
    assert cli.main(["synth", "--config", str(empty)]) == 2
    assert "no [city:NAME] sections" in capsys.readouterr().err


def test_mismatched_config_refuses_existing_tree(micro_tree, tmp_path, capsys):
    ini, out = micro_tree
    copy = tmp_path / "tree"
    shutil.copytree(out, copy)
    ini2 = write_micro_ini(tmp_path / "m.ini", copy)
    assert cli.main(["grid", "--config", str(ini2), "--seed", "99"]) == 2
    assert "different config" in capsys.readouterr().err


def test_unknown_command_exits_via_argparse():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2


def test_out_flag_overrides_config(tmp_path, capsys):
    ini = write_micro_ini(tmp_path / "m.ini", tmp_path / "a")
    assert cli.main(["clusters", "--config", str(ini), "--out", str(tmp_path / "b")]) == 3
    assert str(tmp_path / "b") in capsys.readouterr().err


def test_dependency_error_type():
    err = DependencyError("out/grid.json", "grid")
    assert "out/grid.json" in str(err) and "urbanpref grid" in str(err)
