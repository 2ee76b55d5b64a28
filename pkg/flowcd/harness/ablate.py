"""Branch ablation: the same run with only OF, only CD, and both branches."""

import csv
import dataclasses
import json
import logging
import os
from typing import Any, Dict, List, Optional

from flowcd import objectives
from flowcd.config import BRANCH_SELECTORS, RunConfig
from flowcd.forge.dataset import DatasetManifest
from flowcd.harness.evaluate import evaluate_model
from flowcd.harness.train import Trainer

TABLE_FIELDS = ("of_branch", "cd_branch", "f1", "mepe", "fepe")


@dataclasses.dataclass
class AblationRow:
    branch_selector: str
    f1: Optional[float] = None
    mepe: Optional[float] = None
    fepe: Optional[float] = None

    @property
    def of_branch(self) -> bool:
        return self.branch_selector != "cd_only"

    @property
    def cd_branch(self) -> bool:
        return self.branch_selector != "of_only"

    def to_dict(self) -> Dict[str, Any]:
        return {"branch_selector": self.branch_selector, **{k: getattr(self, k) for k in TABLE_FIELDS}}


@dataclasses.dataclass
class AblationTable:
    rows: List[AblationRow]

    def row(self, branch_selector: str) -> AblationRow:
        return next(r for r in self.rows if r.branch_selector == branch_selector)

    def directional_check(self) -> Dict[str, bool]:
        """Whether the joint run beats each single branch run on its own metric."""
        both = self.row("both")
        return {
            "f1": both.f1 is not None and both.f1 > (self.row("cd_only").f1 or 0.0),
            "mepe": both.mepe is not None and both.mepe < (self.row("of_only").mepe or float("inf")),
        }

    def lines(self) -> List[str]:
        """Text rendering, one line per run under an OF / CD / F1 / mEPE / FEPE header."""
        mark = {True: "✓", False: ""}
        out = [f"{'OF':<4}{'CD':<4}{'F1':>8}{'mEPE':>8}{'FEPE':>8}"]
        for r in self.rows:
            out.append(
                f"{mark[r.of_branch]:<4}{mark[r.cd_branch]:<4}"
                f"{objectives.format_cell(r.f1):>8}{objectives.format_cell(r.mepe):>8}"
                f"{objectives.format_cell(r.fepe):>8}"
            )
        return out

    def write_json(self, path: str):
        with open(path, "w") as f:
            json.dump(
                {"rows": [r.to_dict() for r in self.rows], "directional": self.directional_check()},
                f,
                indent=2,
            )
            f.write("\n")

    def write_csv(self, path: str):
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=("branch_selector", *TABLE_FIELDS))
            writer.writeheader()
            for r in self.rows:
                writer.writerow({k: "" if v is None else v for k, v in r.to_dict().items()})


def ablate(
    cfg: RunConfig,
    train_manifest: DatasetManifest,
    test_manifest: Optional[DatasetManifest] = None,
    out_dir: Optional[str] = None,
) -> AblationTable:
    """Train and evaluate once per branch selector, all else equal."""
    logger = logging.getLogger("flowcd")
    test_manifest = test_manifest or train_manifest
    rows = []
    for selector in BRANCH_SELECTORS:
        run_cfg = dataclasses.replace(cfg, branch_selector=selector)
        run_dir = os.path.join(out_dir, selector) if out_dir is not None else None
        result = Trainer(run_cfg, train_manifest).run(run_dir)
        if test_manifest is train_manifest:
            report = result.report
        else:
            report = evaluate_model(result.model, test_manifest, run_cfg.eval, run_cfg.resolved_device)
        rows.append(AblationRow(selector, report.f1, report.mepe, report.fepe))
    table = AblationTable(rows)
    checks = table.directional_check()
    logger.info(
        f"Joint run beats CD only on F1: {checks['f1']}, beats OF only on mEPE: {checks['mepe']}"
    )
    if out_dir is not None:
        table.write_json(os.path.join(out_dir, "ablation.json"))
        table.write_csv(os.path.join(out_dir, "ablation.csv"))
    return table
