"""Stage runners shared by the command line: synth, attack, detect, embed, train, eval.

Every stage reads its inputs from the run directory, writes fixed-name
artifacts there, and records a status file with a digest of its config
and upstream digests. A stage whose digest is unchanged is skipped
unless forced.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from .attack import stage_attack
from .config import PipelineConfig
from .corpus import CorpusManifest, ingest_directory, partition, synthesize_corpus, write_json
from .detect import DEFERRED, TRIGGERED, run_detection, save_report, write_radar_csv, write_summary_csv
from .embeddings import CLASSES, build_dataset, embed_corpus, embed_sample, read_vsem
from .evaluate import (compute_metrics, predict_account, save_text, timing_report,
                       timing_table, write_confusion_csv)
from .nn.model import load_checkpoint, save_checkpoint
from .nn.training import train_kfold

log = logging.getLogger("voiceshield")

STAGES = ("synth", "attack", "detect", "embed", "train", "eval")
UPSTREAM = {"synth": (), "attack": ("synth",), "detect": ("attack",), "embed": ("attack",),
            "train": ("detect", "embed"), "eval": ("train",)}
CONFIG_KEYS = {"synth": ("corpus",),
               "attack": ("seed", "partition", "trigger", "poison", "stft"),
               "detect": ("seed", "detection", "weights", "stft"),
               "embed": ("stft",),
               "train": ("seed", "train", "eval"),
               "eval": ()}


class MissingInput(FileNotFoundError):
    """A stage's required input artifact is absent."""


class StageFailure(RuntimeError):
    pass


@dataclass
class StageResult:
    stage: str
    skipped: bool
    seconds: float
    digest: str


class Run:
    """One output directory plus the effective configuration."""

    def __init__(self, config: PipelineConfig, out=None, workers=None, force: bool = False):
        self.config = config
        self.out = Path(out if out is not None else config.raw["out"])
        self.workers = workers if workers is not None else config.raw["workers"]
        self.force = force
        self.status_dir = self.out / "status"

    # -- paths -------------------------------------------------------------
    @property
    def clean_dir(self) -> Path:
        return self.out / "clean"

    @property
    def embed_dir(self) -> Path:
        return self.out / "embeddings"

    def need(self, *paths) -> None:
        for p in paths:
            if not Path(p).exists():
                raise MissingInput(f"missing input: {p}")

    # -- status ------------------------------------------------------------
    def _status_path(self, stage):
        return self.status_dir / f"{stage}.json"

    def status(self, stage) -> dict | None:
        p = self._status_path(stage)
        return json.loads(p.read_text()) if p.is_file() else None

    def digest(self, stage) -> str:
        h = hashlib.sha256(stage.encode())
        for key in CONFIG_KEYS[stage]:
            h.update(json.dumps(self.config.raw[key], sort_keys=True).encode())
        for up in UPSTREAM[stage]:
            st = self.status(up)
            h.update((st["digest"] if st else "external").encode())
        return h.hexdigest()

    def run_stage(self, stage: str) -> StageResult:
        fn = getattr(self, f"_{stage}")
        digest = self.digest(stage)
        prev = self.status(stage)
        if (not self.force and prev and prev["digest"] == digest
                and all((self.out / o).exists() for o in prev["outputs"])):
            log.info("%s: up to date, skipped", stage)
            return StageResult(stage, True, prev["seconds"], digest)
        self.out.mkdir(parents=True, exist_ok=True)
        self.config.save(self.out / "config.json")
        log.info("%s: running", stage)
        t0 = time.perf_counter()
        outputs = fn()
        seconds = time.perf_counter() - t0
        self.status_dir.mkdir(exist_ok=True)
        write_json(self._status_path(stage), {"stage": stage, "digest": digest,
                                              "outputs": sorted(outputs), "seconds": seconds})
        self._write_timing()
        log.info("%s: done in %.1f s", stage, seconds)
        return StageResult(stage, False, seconds, digest)

    def _write_timing(self) -> None:
        stages = {s: st["seconds"] for s in STAGES if (st := self.status(s))}
        extra = {}
        det = self.status("detect")
        if det and (self.out / "manifest.json").is_file():
            extra["n_accounts"] = CorpusManifest.load_json(self.out / "manifest.json").n
        rep = timing_report(stages, extra.get("n_accounts"))
        det_timing = self.out / "detection_timing.json"
        if det_timing.is_file():
            rep["detection_accounts_ms"] = json.loads(det_timing.read_text())["per_account_ms"]
        write_json(self.out / "timing.json", rep)
        save_text(self.out / "timing.txt", timing_table(rep))

    # -- loaders -----------------------------------------------------------
    def clean_manifest(self) -> CorpusManifest:
        path = self.clean_dir / "manifest.json"
        self.need(path)
        src = self.clean_dir / "source.json"
        root = json.loads(src.read_text())["root"] if src.is_file() else None
        return CorpusManifest.load_json(path, root)

    def staged_manifest(self) -> CorpusManifest:
        path = self.out / "manifest.json"
        self.need(path)
        return CorpusManifest.load_json(path)

    def ground_truth(self) -> dict[str, str]:
        path = self.out / "ground_truth.json"
        self.need(path)
        return {aid: v["class"] for aid, v in json.loads(path.read_text()).items()}

    def detection(self) -> dict:
        path = self.out / "detection.json"
        self.need(path)
        return json.loads(path.read_text())

    def decisions(self) -> dict[str, str]:
        return {aid: a["decision"] for aid, a in self.detection()["accounts"].items()}

    def embeddings(self, ids) -> dict[str, np.ndarray]:
        paths = {aid: self.embed_dir / f"{aid}.vsem" for aid in ids}
        self.need(*paths.values())
        return {aid: read_vsem(p) for aid, p in paths.items()}

    # -- stages ------------------------------------------------------------
    def _synth(self):
        c = self.config.raw["corpus"]
        self.clean_dir.mkdir(parents=True, exist_ok=True)
        if c["source"]:
            src = Path(c["source"])
            self.need(src)
            manifest = ingest_directory(src, duration=c["duration_seconds"])
            manifest.save(self.clean_dir / "manifest.json")
            write_json(self.clean_dir / "source.json", {"root": str(src.resolve()),
                                                        "warnings": manifest.warnings})
            return ["clean/manifest.json", "clean/source.json"]
        synthesize_corpus(self.clean_dir, c["n_accounts"], c["synth_seed"],
                          duration=c["duration_seconds"])
        return ["clean/manifest.json", "clean/speakers.json"]

    def _attack(self):
        manifest = self.clean_manifest()
        p = self.config.raw["partition"]
        part = partition(manifest, p["p_pbsm"], p["p_tdpa"], p["p_attacker"], self.config.seed)
        write_json(self.out / "partition.json", part.to_json())
        stage_attack(manifest, part, self.out, self.config.trigger, self.config.poison,
                     self.config.seed, self.config.stft)
        return ["manifest.json", "ground_truth.json", "partition.json"]

    def _detect(self):
        manifest = self.staged_manifest()
        cfg, weights = self.config.detection, self.config.weights
        report = run_detection(manifest, cfg, weights, self.workers, self.config.seed,
                               self.config.stft)
        save_report(self.out / "detection.json", report, cfg, weights)
        write_json(self.out / "detection_timing.json", report.timing_json())
        write_summary_csv(self.out / "detection_summary.csv", report)
        write_radar_csv(self.out / "radar.csv", report)
        return ["detection.json", "detection_summary.csv", "radar.csv"]

    def _embed(self):
        manifest = self.staged_manifest()
        params = self.config.stft
        embed_corpus(manifest, self.embed_dir, self.workers,
                     extractor=partial(embed_sample, params=params))
        return ["embeddings"] + [f"embeddings/{aid}.vsem" for aid in manifest.ids()]

    def _train(self):
        truth = self.ground_truth()
        decisions = self.decisions()
        test = split_accounts(truth, self.config.raw["eval"]["test_fraction"], self.config.seed)
        train_ids = sorted(set(truth) - set(test))
        write_json(self.out / "split.json", {"train": train_ids, "test": test})
        ds = build_dataset(self.embeddings(train_ids), truth, decisions, train_ids)
        counts = np.bincount(ds.class_index(), minlength=len(CLASSES))
        log.info("training pairs per class %s", dict(zip(CLASSES, counts.tolist())))
        try:
            result = train_kfold(ds.grids, ds.labels, self.config.train,
                                 log=lambda r: log.debug("train %s", r))
        except ValueError as exc:
            raise StageFailure(f"training failed: {exc}") from exc
        folds = result.to_json()
        save_checkpoint(self.out / "model.json", result.model,
                        history=result.folds[result.selected].history,
                        extra={"selected_fold": result.selected,
                               "train_config": self.config.train.to_json()})
        write_json(self.out / "folds.json", folds)
        return ["model.json", "folds.json", "split.json"]

    def _eval(self):
        self.need(self.out / "model.json", self.out / "split.json")
        model = load_checkpoint(self.out / "model.json")
        split = json.loads((self.out / "split.json").read_text())
        truth = self.ground_truth()
        decisions = self.decisions()
        test = split["test"]
        ds = build_dataset(self.embeddings(test), truth, {}, test)
        labels, _ = model.predict(ds.grids)
        per_account: dict[str, list[int]] = {aid: [] for aid in test}
        for aid, lab in zip(ds.account_ids, labels):
            per_account[aid].append(int(lab))
        final = {aid: predict_account(aid, per_account[aid], decisions[aid]) for aid in test}
        report = compute_metrics(final, {aid: truth[aid] for aid in test})
        metrics = report.to_json()
        metrics["scope"] = "held-out accounts"
        metrics["test_accounts"] = len(test)
        metrics["pbsm_layer"] = pbsm_layer_summary(truth, decisions)
        write_json(self.out / "metrics.json", metrics)
        write_json(self.out / "predictions.json", {a: p.to_json() for a, p in final.items()})
        write_confusion_csv(self.out / "confusion.csv", report)
        save_text(self.out / "report.txt", report.table())
        return ["metrics.json", "predictions.json", "confusion.csv", "report.txt"]


def split_accounts(truth: dict[str, str], test_fraction: float, seed: int) -> list[str]:
    """Stratified account-level hold-out; at least one account per class when possible."""
    rng = np.random.default_rng([seed, 31])
    test = []
    for cls in sorted(set(truth.values())):
        ids = sorted(a for a, c in truth.items() if c == cls)
        k = int(round(test_fraction * len(ids)))
        k = min(max(k, 1), len(ids) - 1) if len(ids) > 1 else 0
        test.extend(ids[i] for i in rng.choice(len(ids), size=k, replace=False))
    return sorted(test)


def pbsm_layer_summary(truth: dict[str, str], decisions: dict[str, str]) -> dict:
    """Acoustic-layer outcome over every account in the staged corpus."""
    trig = [a for a, c in truth.items() if c == "triggered"]
    legit = [a for a, c in truth.items() if c == "legitimate"]
    flagged = sum(decisions[a] == TRIGGERED for a in trig)
    false_trig = sum(decisions[a] == TRIGGERED for a in legit)
    return {"triggered_accounts": len(trig), "triggered_flagged": flagged,
            "legitimate_accounts": len(legit), "legitimate_flagged": false_trig,
            "false_trigger_rate": false_trig / len(legit) if legit else 0.0,
            "deferred": sum(d == DEFERRED for d in decisions.values())}


def run_pipeline(run: Run, stages=STAGES) -> list[StageResult]:
    return [run.run_stage(s) for s in stages]


def load_metrics(out) -> dict:
    return json.loads((Path(out) / "metrics.json").read_text())


__all__ = ["MissingInput", "Run", "STAGES", "StageFailure", "StageResult",
           "load_metrics", "pbsm_layer_summary", "run_pipeline", "split_accounts"]
