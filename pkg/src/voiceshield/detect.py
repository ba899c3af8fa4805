"""Frequency-based trigger detection with account-level decisions.

Per file: beep-band energy per frame, a dynamic threshold at `eta` times
its mean, and four acoustic features folded into one weighted score.
Per account: a beep-count override, else the score-weighted proportion
of above-threshold files and its confidence ``2 * pi - 1``.
"""
from __future__ import annotations

import csv
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .audio import (AudioFormatError, Spectrogram, StftParams, Waveform, band_energy_series,
                    estimate_pitch, stft)
from .corpus import CorpusManifest, write_json

TRIGGERED, LEGITIMATE, DEFERRED = "Triggered", "Legitimate", "Deferred"
DECISION_MODES = ("consistent", "paper-literal")


class DetectionError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionConfig:
    omega: float = 7000.0
    delta_omega: float = 200.0
    eta: float = 2.5
    tau: float | None = None
    gamma: float = 0.5
    min_beep_count: tuple[int, int] = (2, 40)
    theta_override: int = 6
    hf_cutoff: float = 4000.0
    decision_mode: str = "consistent"
    pitch_band: tuple[float, float] = (50.0, 500.0)
    voicing_threshold: float = 0.3
    calibration_fraction: float = 0.5
    files_required: int = 10

    def __post_init__(self):
        lo, hi = self.min_beep_count
        if lo > hi:
            raise DetectionError("min_beep_count must satisfy lo <= hi")
        if not 0.0 < self.gamma < 1.0:
            raise DetectionError("gamma must be in (0, 1)")
        if self.eta <= 0:
            raise DetectionError("eta must be positive")
        if self.delta_omega <= 0 or self.omega - self.delta_omega <= self.hf_cutoff:
            raise DetectionError("beep band must sit above hf_cutoff")
        if self.decision_mode not in DECISION_MODES:
            raise DetectionError(f"decision_mode must be one of {DECISION_MODES}")
        if not 0.0 < self.calibration_fraction <= 1.0:
            raise DetectionError("calibration_fraction must be in (0, 1]")

    @property
    def beep_band(self) -> tuple[float, float]:
        return (self.omega - self.delta_omega, self.omega + self.delta_omega)


@dataclass(frozen=True)
class ScoreWeights:
    w_pitch: float = 1.0
    w_hf: float = 1.0
    w_pvar: float = 0.5
    w_hfvar: float = 0.5

    def __post_init__(self):
        if min(self.w_pitch, self.w_hf, self.w_pvar, self.w_hfvar) < 0:
            raise DetectionError("score weights must be non-negative")

    def scaled(self, k: float) -> "ScoreWeights":
        return ScoreWeights(k * self.w_pitch, k * self.w_hf, k * self.w_pvar, k * self.w_hfvar)


@dataclass(frozen=True)
class BeepDetectionResult:
    beep_energy: np.ndarray
    threshold_value: float
    beep_frames: np.ndarray
    frame_seconds: float

    @property
    def beep_count(self) -> int:
        return int(self.beep_frames.size)

    @property
    def avg_beep_interval(self) -> float:
        if self.beep_frames.size < 2:
            return 0.0
        return float(np.mean(np.diff(self.beep_frames)) * self.frame_seconds)


@dataclass(frozen=True)
class AcousticFeatures:
    f0: float
    pitch_var: float
    hf_energy: float
    hf_var: float
    rho_p: float
    rho_hf: float
    no_pitch: bool = False


@dataclass
class AccountAssessment:
    account_id: str
    per_file_scores: list[float]
    beep_counts: list[int]
    s_total: float
    pi: float
    confidence: float
    decision: str
    decision_reason: str

    @property
    def mean_score(self) -> float:
        return float(np.mean(self.per_file_scores)) if self.per_file_scores else 0.0

    def to_json(self) -> dict:
        return {"scores": [float(s) for s in self.per_file_scores],
                "beep_counts": [int(b) for b in self.beep_counts],
                "s_total": float(self.s_total), "pi": float(self.pi),
                "confidence": float(self.confidence), "decision": self.decision,
                "reason": self.decision_reason}


def detect_beeps(spec: Spectrogram, config: DetectionConfig = DetectionConfig()) -> BeepDetectionResult:
    """Flag frames whose beep-band energy strictly exceeds ``eta * mean``."""
    energy = band_energy_series(spec, config.beep_band)
    threshold = config.eta * float(np.mean(energy))
    frames = np.flatnonzero(energy > threshold)
    return BeepDetectionResult(energy, threshold, frames, spec.frame_seconds)


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den > 0 else 0.0


def extract_features(waveform: Waveform, config: DetectionConfig = DetectionConfig(),
                     spec: Spectrogram | None = None) -> AcousticFeatures:
    """Pitch mean/variance over voiced frames and HF energy statistics.

    `hf_energy` is the STFT magnitude summed over all frames and all bins
    above `hf_cutoff`; `hf_var` is the variance of its per-frame series.
    Ratios with a zero denominator are 0.
    """
    spec = spec if spec is not None else stft(waveform)
    pitch = estimate_pitch(waveform, config.pitch_band, voicing_threshold=config.voicing_threshold)
    pitch_var = pitch.variance()
    hf_series = band_energy_series(spec, (config.hf_cutoff, spec.sample_rate / 2))
    hf_energy = float(hf_series.sum())
    hf_var = float(np.var(hf_series))
    return AcousticFeatures(pitch.f0, pitch_var, hf_energy, hf_var,
                            _ratio(pitch_var, pitch.f0), _ratio(hf_var, hf_energy),
                            pitch.no_pitch)


def score_sample(features: AcousticFeatures, weights: ScoreWeights = ScoreWeights()) -> float:
    return (weights.w_pitch * features.f0 + weights.w_hf * features.hf_energy
            + weights.w_pvar * features.rho_p + weights.w_hfvar * features.rho_hf)


def proportion_and_confidence(scores, tau: float) -> tuple[float, float, float]:
    s = np.asarray(scores, dtype=np.float64)
    total = float(s.sum())
    if total <= 0:
        return total, 0.0, -1.0
    # mask rather than filter so both sums run over the same array in the same
    # order; float addition is monotone, so pi can never exceed 1
    pi = float(np.where(s > tau, s, 0.0).sum() / total)
    return total, pi, 2.0 * pi - 1.0


def assess_account(scores, beep_counts, config: DetectionConfig = DetectionConfig(),
                   tau: float | None = None, account_id: str = "") -> AccountAssessment:
    """Decide Triggered / Legitimate / Deferred for one account.

    The beep-count override is checked first. Pi and c are always filled in
    for reporting, but only decide the account when the override does not
    fire.
    """
    scores = [float(s) for s in scores]
    beep_counts = [int(b) for b in beep_counts]
    if not scores:
        raise DetectionError("cannot assess an empty account")
    if len(scores) != len(beep_counts):
        raise DetectionError("scores and beep counts differ in length")
    tau = config.tau if tau is None else tau
    if tau is None:
        raise DetectionError("no tau given and none configured")
    total, pi, c = proportion_and_confidence(scores, tau)
    lo, hi = config.min_beep_count
    moderate = sum(lo <= b <= hi for b in beep_counts)
    if moderate >= config.theta_override:
        decision, reason = TRIGGERED, "override"
    elif config.decision_mode == "paper-literal":
        decision, reason = (LEGITIMATE if c >= config.gamma else DEFERRED), "score-based"
    else:
        if c >= config.gamma:
            decision = TRIGGERED
        elif c <= -config.gamma:
            decision = LEGITIMATE
        else:
            decision = DEFERRED
        reason = "score-based"
    return AccountAssessment(account_id, scores, beep_counts, total, pi, c, decision, reason)


def calibrate_tau(scores, labels, grid=None) -> float:
    """Grid-search the score threshold minimizing false positives plus false negatives.

    `labels` are truthy for triggered items. With no `grid`, every observed
    score is a candidate. Ties go to the largest candidate.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.size == 0:
        raise DetectionError("scores and labels must be non-empty and aligned")
    if y.all() or not y.any():
        raise DetectionError("calibration set must contain both triggered and clean items")
    candidates = np.unique(s) if grid is None else np.asarray(sorted(grid), dtype=np.float64)
    if candidates.size == 0:
        raise DetectionError("empty candidate grid")
    flagged = s[None, :] > candidates[:, None]
    errors = (flagged & ~y).sum(axis=1) + (~flagged & y).sum(axis=1)
    best = np.flatnonzero(errors == errors.min())
    return float(candidates[best[-1]])


# --------------------------------------------------------------------------
# Corpus-level driver
# --------------------------------------------------------------------------

@dataclass
class FileAnalysis:
    beep_count: int
    avg_beep_interval: float
    features: AcousticFeatures
    score: float


@dataclass
class AccountAnalysis:
    account_id: str
    files: list[FileAnalysis]
    problems: list[str]
    elapsed: float

    @property
    def scores(self):
        return [f.score for f in self.files]

    @property
    def beep_counts(self):
        return [f.beep_count for f in self.files]


def analyze_waveform(wav: Waveform, config: DetectionConfig, weights: ScoreWeights,
                     params: StftParams | None = None) -> FileAnalysis:
    spec = stft(wav, params)
    beeps = detect_beeps(spec, config)
    feats = extract_features(wav, config, spec)
    return FileAnalysis(beeps.beep_count, beeps.avg_beep_interval, feats,
                        score_sample(feats, weights))


def analyze_account(manifest: CorpusManifest, account_id: str, config: DetectionConfig,
                    weights: ScoreWeights, params: StftParams | None = None) -> AccountAnalysis:
    start = time.perf_counter()
    account = manifest.by_id()[account_id]
    files, problems = [], []
    for rel in account.files:
        try:
            wav = manifest.load(rel)
        except (AudioFormatError, OSError) as exc:
            problems.append(f"{rel}: {exc}")
            continue
        files.append(analyze_waveform(wav, config, weights, params))
    return AccountAnalysis(account_id, files, problems, time.perf_counter() - start)


def _analyze_job(args):
    return analyze_account(*args)


@dataclass
class DetectionReport:
    tau: float
    tau_source: str
    assessments: dict[str, AccountAssessment]
    analyses: dict[str, AccountAnalysis]
    elapsed: dict[str, float]
    total_seconds: float
    warnings: list[str] = field(default_factory=list)

    def decisions(self) -> dict[str, str]:
        return {aid: a.decision for aid, a in self.assessments.items()}

    def to_json(self, config: DetectionConfig, weights: ScoreWeights) -> dict:
        accounts = {}
        for aid, assessment in self.assessments.items():
            entry = assessment.to_json()
            entry["features"] = [asdict(f.features) for f in self.analyses[aid].files]
            entry["avg_beep_intervals"] = [f.avg_beep_interval for f in self.analyses[aid].files]
            entry["mean_score"] = assessment.mean_score
            accounts[aid] = entry
        return {"tau": self.tau, "tau_source": self.tau_source,
                "config": _jsonable(asdict(config)), "weights": asdict(weights),
                "warnings": list(self.warnings), "accounts": accounts}

    def timing_json(self) -> dict:
        return {"total_seconds": self.total_seconds,
                "per_account_ms": {k: 1000.0 * v for k, v in self.elapsed.items()}}


def _jsonable(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def calibration_subset(manifest: CorpusManifest, fraction: float, seed: int) -> list[str]:
    """Stratified random subset of account ids (by ground truth) for tuning tau."""
    rng = np.random.default_rng([seed, 17])
    chosen = []
    classes = sorted({a.ground_truth for a in manifest.accounts})
    for cls in classes:
        ids = sorted(a.account_id for a in manifest.accounts if a.ground_truth == cls)
        k = max(1, int(np.ceil(fraction * len(ids))))
        chosen.extend(ids[i] for i in rng.choice(len(ids), size=k, replace=False))
    return sorted(chosen)


def run_detection(manifest: CorpusManifest, config: DetectionConfig = DetectionConfig(),
                  weights: ScoreWeights = ScoreWeights(), workers: int = 1, seed: int = 0,
                  params: StftParams | None = None) -> DetectionReport:
    """Analyze every account, settle tau, and assess each account.

    If ``config.tau`` is None, tau is grid-searched over per-file scores of
    a stratified calibration subset labelled by the manifest's ground
    truth. When that subset holds no triggered account there is nothing to
    separate, so tau falls back to the largest calibration score.
    """
    t0 = time.perf_counter()
    ids = manifest.ids()
    jobs = [(manifest, aid, config, weights, params) for aid in ids]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_analyze_job, jobs, chunksize=4))
    else:
        results = [_analyze_job(job) for job in jobs]
    analyses = {r.account_id: r for r in results}

    notes = []
    if config.tau is not None:
        tau, source = float(config.tau), "config"
    else:
        subset = calibration_subset(manifest, config.calibration_fraction, seed)
        truth = manifest.by_id()
        scores, labels = [], []
        for aid in subset:
            for s in analyses[aid].scores:
                scores.append(s)
                labels.append(truth[aid].ground_truth == "triggered")
        if any(labels) and not all(labels):
            tau, source = calibrate_tau(scores, labels), "calibrated"
        else:
            tau, source = (max(scores) if scores else 0.0), "fallback-max"
            notes.append("calibration subset has a single class; tau set to its max score")

    assessments, elapsed = {}, {}
    for aid in ids:
        a0 = time.perf_counter()
        analysis = analyses[aid]
        for p in analysis.problems:
            notes.append(f"{aid}: {p}")
        if len(analysis.files) < config.files_required:
            scores = analysis.scores or [0.0]
            counts = analysis.beep_counts or [0]
            total, pi, c = proportion_and_confidence(scores, tau)
            assessment = AccountAssessment(aid, scores, counts, total, pi, c,
                                           DEFERRED, "insufficient-files")
        else:
            assessment = assess_account(analysis.scores, analysis.beep_counts, config, tau, aid)
        assessments[aid] = assessment
        elapsed[aid] = analysis.elapsed + time.perf_counter() - a0
    for note in notes:
        warnings.warn(note, stacklevel=2)
    return DetectionReport(tau, source, assessments, analyses, elapsed,
                           time.perf_counter() - t0, notes)


RADAR_AXES = ("avg_pitch", "pitch_var", "hf_energy", "hf_var", "avg_beep_interval")


def account_feature_means(report: DetectionReport) -> dict[str, dict[str, float]]:
    rows = {}
    for aid, analysis in report.analyses.items():
        fs = analysis.files
        if not fs:
            rows[aid] = dict.fromkeys(RADAR_AXES, 0.0)
            continue
        rows[aid] = {"avg_pitch": float(np.mean([f.features.f0 for f in fs])),
                     "pitch_var": float(np.mean([f.features.pitch_var for f in fs])),
                     "hf_energy": float(np.mean([f.features.hf_energy for f in fs])),
                     "hf_var": float(np.mean([f.features.hf_var for f in fs])),
                     "avg_beep_interval": float(np.mean([f.avg_beep_interval for f in fs]))}
    return rows


def write_radar_csv(path, report: DetectionReport) -> None:
    """Per-account z-scored feature means; |z| <= 1 is the acceptance band."""
    means = account_feature_means(report)
    ids = sorted(means)
    table = np.array([[means[a][k] for k in RADAR_AXES] for a in ids])
    mu, sd = table.mean(axis=0), table.std(axis=0)
    z = np.where(sd > 0, (table - mu) / np.where(sd > 0, sd, 1.0), 0.0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["account", *RADAR_AXES, "outside_band", "decision"])
        for i, aid in enumerate(ids):
            w.writerow([aid, *(f"{v:.6f}" for v in z[i]), int(np.any(np.abs(z[i]) > 1.0)),
                        report.assessments[aid].decision])


def write_summary_csv(path, report: DetectionReport) -> None:
    """Account table: files, mean score, triggered share (100 * pi), decision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["account", "files", "mean_score", "triggered_pct", "confidence",
                    "decision", "reason"])
        for aid in sorted(report.assessments):
            a = report.assessments[aid]
            w.writerow([aid, len(a.per_file_scores), f"{a.mean_score:.2f}",
                        f"{100 * a.pi:.2f}", f"{a.confidence:.4f}", a.decision,
                        a.decision_reason])


def save_report(path, report: DetectionReport, config: DetectionConfig,
                weights: ScoreWeights) -> None:
    write_json(path, report.to_json(config, weights))
