"""Tests for harness/ablate.py"""

import importlib
import csv
import dataclasses
import json

import pytest

torch = pytest.importorskip("torch")

from flowcd import config
ablate = importlib.import_module("flowcd.harness.ablate")


def _table():
    return ablate.AblationTable(
        [
            ablate.AblationRow("of_only", None, 1.5, None),
            ablate.AblationRow("cd_only", 0.80, None, None),
            ablate.AblationRow("both", 0.892, 1.027, 0.869),
        ]
    )


def test_rows_mark_branches():
    table = _table()
    assert (table.row("of_only").of_branch, table.row("of_only").cd_branch) == (True, False)
    assert (table.row("cd_only").of_branch, table.row("cd_only").cd_branch) == (False, True)
    assert (table.row("both").of_branch, table.row("both").cd_branch) == (True, True)


def test_directional_check():
    assert _table().directional_check() == {"f1": True, "mepe": True}
    worse = _table()
    worse.rows[2] = ablate.AblationRow("both", 0.7, 2.0, 0.35)
    assert worse.directional_check() == {"f1": False, "mepe": False}


def test_lines():
    lines = _table().lines()
    assert lines[0].split() == ["OF", "CD", "F1", "mEPE", "FEPE"]
    assert lines[1].split() == ["✓", "-", "1.500", "-"]
    assert lines[3].split() == ["✓", "✓", "0.892", "1.027", "0.869"]


def test_table_files(tmp_path):
    table = _table()
    table.write_json(str(tmp_path / "a.json"))
    table.write_csv(str(tmp_path / "a.csv"))
    d = json.loads((tmp_path / "a.json").read_text())
    assert [r["branch_selector"] for r in d["rows"]] == ["of_only", "cd_only", "both"]
    assert d["directional"] == {"f1": True, "mepe": True}
    with open(tmp_path / "a.csv") as f:
        rows = list(csv.DictReader(f))
    assert rows[0]["f1"] == "" and rows[0]["cd_branch"] == "False"


def test_ablate_runs_every_selector(tmp_path, tiny_config, tiny_dataset):
    cfg = dataclasses.replace(tiny_config, epochs=0)
    table = ablate.ablate(cfg, tiny_dataset, out_dir=str(tmp_path))
    assert [r.branch_selector for r in table.rows] == ["of_only", "cd_only", "both"]
    assert table.row("of_only").f1 is None and table.row("of_only").mepe is not None
    assert table.row("cd_only").mepe is None and table.row("cd_only").f1 is not None
    assert table.row("both").fepe is not None
    for selector in ("of_only", "cd_only", "both"):
        assert (tmp_path / selector / "checkpoint.ckpt").exists()
    assert (tmp_path / "ablation.json").exists()


@pytest.mark.slow
def test_joint_training_helps_both_branches(tmp_path):
    from flowcd.forge import forge_dataset, get_sources

    cfg = config.load_config("tiny")
    backgrounds, cutouts = get_sources(cfg.forge, "train")
    manifest = forge_dataset(backgrounds, cutouts, cfg.forge, str(tmp_path / "train"))
    table = ablate.ablate(cfg, manifest)
    assert table.directional_check() == {"f1": True, "mepe": True}
