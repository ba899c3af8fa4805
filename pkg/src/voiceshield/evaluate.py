"""User-level voting, layered decision composition and evaluation reports."""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detect import DEFERRED, TRIGGERED
from .embeddings import CLASSES

LABELS = ("Legitimate", "Attacked", "Triggered")
SEVERITY = {"Triggered": 2, "Attacked": 1, "Legitimate": 0}
_BY_CLASS = dict(zip(CLASSES, LABELS))


def label_of(cls) -> str:
    """Map a class name ("attacked") or index (1) to its report label ("Attacked")."""
    if isinstance(cls, (int, np.integer)):
        return LABELS[int(cls)]
    return _BY_CLASS.get(cls, cls)


def vote(labels) -> str:
    """Modal label; ties go to the more severe class."""
    labels = [label_of(x) for x in labels]
    if not labels:
        raise ValueError("cannot vote over an empty prediction list")
    counts = Counter(labels)
    return max(counts, key=lambda k: (counts[k], SEVERITY[k]))


@dataclass(frozen=True)
class AccountPrediction:
    account_id: str
    per_pair_labels: tuple[str, ...]
    vote_label: str
    pbsm_decision: str
    final_label: str
    reviewed: bool = False

    def to_json(self) -> dict:
        return {"per_pair_labels": list(self.per_pair_labels), "vote_label": self.vote_label,
                "pbsm_decision": self.pbsm_decision, "final_label": self.final_label,
                "reviewed": self.reviewed}


def compose_final(pbsm_decision: str, vote_label: str) -> tuple[str, bool]:
    """Returns (final label, reviewed flag). A Triggered acoustic decision always wins."""
    if pbsm_decision == TRIGGERED:
        return "Triggered", False
    return label_of(vote_label), pbsm_decision == DEFERRED


def predict_account(account_id, pair_labels, pbsm_decision) -> AccountPrediction:
    pair_labels = tuple(label_of(x) for x in pair_labels)
    v = vote(pair_labels) if pair_labels else "Legitimate"
    final, reviewed = compose_final(pbsm_decision, v)
    return AccountPrediction(account_id, pair_labels, v, pbsm_decision, final, reviewed)


def confusion_matrix(truth, pred, n_classes: int = 3) -> np.ndarray:
    """Rows are ground truth, columns predictions (class indices)."""
    cm = np.zeros((n_classes, n_classes), dtype=int)
    for t, p in zip(truth, pred):
        cm[t, p] += 1
    return cm


def precision_recall_f1(cm: np.ndarray):
    """Per-class arrays; any 0/0 ratio is reported as 0."""
    tp = np.diag(cm).astype(float)
    col, row = cm.sum(axis=0), cm.sum(axis=1)
    precision = np.divide(tp, col, out=np.zeros_like(tp), where=col > 0)
    recall = np.divide(tp, row, out=np.zeros_like(tp), where=row > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1


def macro_f1(truth, pred, n_classes: int = 3) -> float:
    return float(precision_recall_f1(confusion_matrix(truth, pred, n_classes))[2].mean())


def attack_success_rate(final: dict, truth: dict) -> float:
    """Share of ground-truth triggered accounts that end up labelled Legitimate.

    A reviewed (Deferred) account counts as detected whatever its label.
    """
    triggered = [a for a, t in truth.items() if label_of(t) == "Triggered"]
    if not triggered:
        return 0.0
    missed = 0
    for aid in triggered:
        pred = final[aid]
        if pred.final_label == "Legitimate" and not pred.reviewed:
            missed += 1
    return missed / len(triggered)


@dataclass
class EvalReport:
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    asr: float
    n_accounts: int
    timing: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        per_class = {lab: {"precision": float(self.precision[i]), "recall": float(self.recall[i]),
                           "f1": float(self.f1[i]), "support": int(self.confusion[i].sum())}
                     for i, lab in enumerate(LABELS)}
        return {"classes": per_class, "asr": self.asr, "n_accounts": self.n_accounts,
                "confusion": {"labels": list(LABELS), "matrix": self.confusion.tolist()},
                "accuracy": float(np.trace(self.confusion) / max(self.confusion.sum(), 1))}

    def table(self) -> str:
        lines = [f"{'Class':<12}{'Precision':>10}{'Recall':>10}{'F1':>10}{'Support':>9}{'ASR':>9}"]
        for i, lab in enumerate(LABELS):
            asr = f"{100 * self.asr:8.2f}%" if lab == "Triggered" else f"{'':>9}"
            lines.append(f"{lab:<12}{self.precision[i]:>10.2f}{self.recall[i]:>10.2f}"
                         f"{self.f1[i]:>10.2f}{int(self.confusion[i].sum()):>9d}{asr}")
        return "\n".join(lines)


def compute_metrics(final: dict, truth: dict) -> EvalReport:
    """`final`: account id -> AccountPrediction; `truth`: account id -> class name."""
    if not truth:
        raise ValueError("ground truth is empty")
    missing = sorted(set(truth) - set(final))
    if missing:
        raise ValueError(f"no prediction for accounts: {missing[:5]}")
    ids = sorted(truth)
    t = [LABELS.index(label_of(truth[a])) for a in ids]
    p = [LABELS.index(final[a].final_label) for a in ids]
    cm = confusion_matrix(t, p)
    precision, recall, f1 = precision_recall_f1(cm)
    return EvalReport(cm, precision, recall, f1, attack_success_rate(final, truth), len(ids))


def write_confusion_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["truth\\predicted", *LABELS])
        for lab, row in zip(LABELS, report.confusion):
            w.writerow([lab, *map(int, row)])


def timing_report(stages: dict, n_accounts: int | None = None, detection_stage: str = "detect",
                  bound_seconds: float = 6.0) -> dict:
    """Wall-clock seconds per stage, their total, and the mean detection time per account."""
    secs = {k: float(v) for k, v in stages.items()}
    if any(v < 0 for v in secs.values()):
        raise ValueError("stage durations must be non-negative")
    out = {"stages": secs, "total": float(sum(secs.values()))}
    if n_accounts and detection_stage in secs:
        mean = secs[detection_stage] / n_accounts
        out["detection_per_account"] = mean
        out["detection_within_bound"] = mean < bound_seconds
    return out


def timing_table(report: dict) -> str:
    lines = [f"{'Stage':<14}{'Seconds':>10}"]
    lines += [f"{k:<14}{v:>10.2f}" for k, v in report["stages"].items()]
    lines.append(f"{'total':<14}{report['total']:>10.2f}")
    if "detection_per_account" in report:
        lines.append(f"{'per account':<14}{report['detection_per_account']:>10.3f}")
    return "\n".join(lines)


def save_text(path, text: str) -> None:
    Path(path).write_text(text + "\n")
