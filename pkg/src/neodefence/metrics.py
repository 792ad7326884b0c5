"""Evaluation harness: detection confusion counts, Jaccard mitigation
scoring, and attack success rate."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .defence import STATUS_BACKDOORED, STATUS_CLEARED, DefenceConfig, defend
from .simlab import DatasetManifest

log = logging.getLogger(__name__)


def jaccard(a, b) -> float:
    """|A n B| / |A u B|; two empty sets count as identical (1.0)."""
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    tn: int
    fp: int

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fn": self.fn, "tn": self.tn, "fp": self.fp}


def confusion(verdicts, manifest: DatasetManifest) -> dict:
    """Detection confusion counts at both reporting stages.

    ``raw`` counts an image positive when the blocker caused any transition
    (confirmed or later cleared); ``confirmed`` counts only confirmed
    backdoor verdicts.  Verdict ids must match manifest file names.
    """
    truth = {e.file: e.poisoned for e in manifest.entries}
    unknown = [v.image_id for v in verdicts if v.image_id not in truth]
    if unknown:
        raise ValueError(f"verdict ids not in manifest: {unknown[:5]}")

    stages = {}
    for stage, positive_statuses in (
        ("raw", {STATUS_BACKDOORED, STATUS_CLEARED}),
        ("confirmed", {STATUS_BACKDOORED}),
    ):
        tp = fn = tn = fp = 0
        for v in verdicts:
            positive = v.status in positive_statuses
            if truth[v.image_id]:
                tp += positive
                fn += not positive
            else:
                fp += positive
                tn += not positive
        stages[stage] = ConfusionCounts(tp, fn, tn, fp)
    return stages


@dataclass(frozen=True)
class MitigationRow:
    identifier: str  # class id, or "pairs" in input-output mode
    ji_bd: float
    ji_fix: float

    @property
    def improvement_pct(self) -> float | None:
        if self.ji_bd == 0.0:
            return None
        return (self.ji_fix - self.ji_bd) / self.ji_bd * 100.0

    def to_dict(self) -> dict:
        return {
            "id": self.identifier,
            "ji_bd": self.ji_bd,
            "ji_fix": self.ji_fix,
            "improvement_pct": self.improvement_pct,
        }


def mitigation_report(labels_bd, labels_fix, labels_clean,
                      mode: str = "per-class") -> list:
    """Jaccard similarity of the backdoored and fixed prediction streams
    against the clean one.

    ``per-class`` compares, for each class C, the sets of image indices
    predicted C.  ``pairs`` compares the single sets of (index, label)
    pairs, which scales to many-class models.
    """
    if not (len(labels_bd) == len(labels_fix) == len(labels_clean)):
        raise ValueError(
            f"label sequences must align: {len(labels_bd)}, "
            f"{len(labels_fix)}, {len(labels_clean)}"
        )
    if mode == "pairs":
        bd = {(i, lab) for i, lab in enumerate(labels_bd)}
        fix = {(i, lab) for i, lab in enumerate(labels_fix)}
        clean = {(i, lab) for i, lab in enumerate(labels_clean)}
        return [MitigationRow("pairs", jaccard(bd, clean), jaccard(fix, clean))]
    if mode != "per-class":
        raise ValueError(f"unknown mode {mode!r}")
    classes = sorted(set(labels_bd) | set(labels_fix) | set(labels_clean))
    rows = []
    for c in classes:
        bd = {i for i, lab in enumerate(labels_bd) if lab == c}
        fix = {i for i, lab in enumerate(labels_fix) if lab == c}
        clean = {i for i, lab in enumerate(labels_clean) if lab == c}
        rows.append(MitigationRow(str(c), jaccard(bd, clean), jaccard(fix, clean)))
    return rows


def attack_success_rate(oracle, poisoned_images, target: int,
                        defended: bool = False,
                        config: DefenceConfig | None = None,
                        clean_ref=None) -> float:
    """Fraction of triggered inputs still classified to ``target``.

    With ``defended=True`` the images run through the defence pipeline and
    the sanitized labels are scored; otherwise the raw oracle is.
    """
    poisoned_images = list(poisoned_images)
    if not poisoned_images:
        log.warning("attack_success_rate called with no poisoned images")
        return 0.0
    if defended:
        if config is None or clean_ref is None:
            raise ValueError("defended mode needs a DefenceConfig and CleanReference")
        report = defend(oracle, poisoned_images, config, clean_ref)
        labels = [v.sanitized_label for v in report.verdicts]
    else:
        labels = oracle.classify_batch(poisoned_images)
    return sum(1 for lab in labels if lab == target) / len(labels)


def render_tables(stages: dict, rows: list) -> str:
    """Plain-text tables mirroring the report layout of the detection and
    mitigation results."""
    lines = []
    lines.append("Backdoor detections")
    lines.append(f"{'stage':<12} {'TP':>6} {'FN':>6} {'TN':>6} {'FP':>6}")
    for stage in ("raw", "confirmed"):
        c = stages[stage]
        lines.append(f"{stage:<12} {c.tp:>6} {c.fn:>6} {c.tn:>6} {c.fp:>6}")
    lines.append("")
    lines.append("Attack mitigation (Jaccard index vs clean predictions)")
    lines.append(f"{'class':<10} {'JI(bd)':>8} {'JI(fix)':>8} {'impr%':>8}")
    for row in rows:
        impr = f"{row.improvement_pct:.2f}" if row.improvement_pct is not None else "n/a"
        lines.append(f"{row.identifier:<10} {row.ji_bd:>8.4f} {row.ji_fix:>8.4f} {impr:>8}")
    return "\n".join(lines) + "\n"
