"""Corpus generation, ingestion, manifests and the four-way account partition."""
from __future__ import annotations

import json
import math
import re
import warnings
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, AudioFormatError, Waveform, normalize_duration, read_wav, write_wav

FILES_PER_ACCOUNT = 10
DURATION_SECONDS = 3.0

GROUND_TRUTH_CLASSES = ("legitimate", "attacked", "triggered", "attacker-pool")
PROVENANCE_TAGS = ("genuine", "attacker", "triggered")


class CorpusError(ValueError):
    pass


@dataclass
class Account:
    account_id: str
    files: list[str]
    ground_truth: str = "legitimate"
    provenance: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.provenance:
            self.provenance = ["genuine"] * len(self.files)
        if len(self.provenance) != len(self.files):
            raise CorpusError(f"account {self.account_id}: provenance/file count mismatch")
        if self.ground_truth not in GROUND_TRUTH_CLASSES:
            raise CorpusError(f"unknown ground truth {self.ground_truth!r}")
        for tag in self.provenance:
            if tag not in PROVENANCE_TAGS:
                raise CorpusError(f"unknown provenance tag {tag!r}")

    def to_json(self) -> dict:
        return {"id": self.account_id, "files": list(self.files),
                "ground_truth": self.ground_truth, "provenance": list(self.provenance)}

    @classmethod
    def from_json(cls, d: dict) -> "Account":
        return cls(d["id"], list(d["files"]), d.get("ground_truth", "legitimate"),
                   list(d.get("provenance") or []))


@dataclass
class CorpusManifest:
    """Accounts plus the directory their relative file paths resolve against."""

    root: Path
    accounts: list[Account]
    sample_rate: int = SAMPLE_RATE
    duration_seconds: float = DURATION_SECONDS
    seed: int | None = None
    warnings: list[str] = field(default_factory=list, compare=False)

    def __post_init__(self):
        self.root = Path(self.root)
        ids = [a.account_id for a in self.accounts]
        if len(set(ids)) != len(ids):
            raise CorpusError("account ids are not unique")

    @property
    def n(self) -> int:
        return len(self.accounts)

    def ids(self) -> list[str]:
        return [a.account_id for a in self.accounts]

    def by_id(self) -> dict[str, Account]:
        return {a.account_id: a for a in self.accounts}

    def path_of(self, relpath: str) -> Path:
        return self.root / relpath

    def load(self, relpath: str) -> Waveform:
        """Read one file and normalize it to the corpus duration."""
        wav = read_wav(self.path_of(relpath), self.sample_rate)
        return normalize_duration(wav, self.duration_seconds)

    def to_json(self) -> dict:
        return {"sample_rate": self.sample_rate, "duration_seconds": self.duration_seconds,
                "seed": self.seed, "accounts": [a.to_json() for a in self.accounts]}

    def save(self, path) -> None:
        write_json(path, self.to_json())

    @classmethod
    def load_json(cls, path, root=None) -> "CorpusManifest":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"manifest not found: {path}")
        d = json.loads(path.read_text())
        return cls(Path(root) if root is not None else path.parent,
                   [Account.from_json(a) for a in d["accounts"]],
                   int(d["sample_rate"]), float(d["duration_seconds"]), d.get("seed"))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def stable_key(account_id: str) -> int:
    return zlib.crc32(account_id.encode("utf-8"))


# --------------------------------------------------------------------------
# Synthetic speech-like corpus
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpeakerRanges:
    """Sampling ranges for per-account voice profiles."""

    f0_base: tuple[float, float] = (90.0, 280.0)
    n_harmonics: tuple[int, int] = (3, 5)
    harmonic_decay: tuple[float, float] = (0.15, 1.1)
    drift_depth: tuple[float, float] = (0.005, 0.02)
    file_f0_jitter: float = 0.01
    syllable_rate: tuple[float, float] = (2.5, 5.0)
    snr_db: tuple[float, float] = (22.0, 32.0)
    noise_band: tuple[float, float] = (100.0, 3800.0)
    rms: float = 0.1


@dataclass(frozen=True)
class SpeakerProfile:
    f0_base: float
    harmonic_weights: tuple[float, ...]
    drift_depth: float
    syllable_rate: float
    snr_db: float

    @classmethod
    def draw(cls, rng: np.random.Generator, ranges: SpeakerRanges) -> "SpeakerProfile":
        f0 = rng.uniform(*ranges.f0_base)
        n_h = int(rng.integers(ranges.n_harmonics[0], ranges.n_harmonics[1] + 1))
        decay = rng.uniform(*ranges.harmonic_decay)
        # random per-harmonic colour, but the fundamental stays strongest
        colour = rng.uniform(0.35, 1.0, size=n_h)
        weights = np.exp(-decay * np.arange(n_h)) * colour
        weights[0] = 1.0
        weights[1:] = np.minimum(weights[1:], 0.9)
        return cls(float(f0), tuple(float(w) for w in weights),
                   float(rng.uniform(*ranges.drift_depth)),
                   float(rng.uniform(*ranges.syllable_rate)),
                   float(rng.uniform(*ranges.snr_db)))


def bandlimited_noise(rng, n, sample_rate, band):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0.0
    noise = np.fft.irfft(spec, n=n)
    return noise / (np.sqrt(np.mean(noise ** 2)) + 1e-300)


def synthesize_utterance(profile: SpeakerProfile, rng: np.random.Generator,
                         ranges: SpeakerRanges = SpeakerRanges(),
                         duration: float = DURATION_SECONDS,
                         sample_rate: int = SAMPLE_RATE) -> Waveform:
    """One harmonic "speech-like" file for `profile`, RMS-normalized."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = profile.f0_base * (1.0 + rng.uniform(-ranges.file_f0_jitter, ranges.file_f0_jitter))
    # whole number of drift cycles keeps the file-mean pitch at f0
    cycles = int(rng.integers(1, 3))
    drift = profile.drift_depth * np.sin(
        2 * np.pi * cycles * t / duration + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * (1.0 + drift)) / sample_rate
    voiced = np.zeros(n)
    for k, weight in enumerate(profile.harmonic_weights, start=1):
        voiced += weight * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    envelope = 0.55 + 0.45 * np.sin(
        np.pi * profile.syllable_rate * t + rng.uniform(0, np.pi)) ** 2
    voiced *= envelope
    voiced /= np.sqrt(np.mean(voiced ** 2))
    noise = bandlimited_noise(rng, n, sample_rate, ranges.noise_band)
    x = voiced + noise * 10.0 ** (-profile.snr_db / 20.0)
    x *= ranges.rms / np.sqrt(np.mean(x ** 2))
    return Waveform(x, sample_rate)


def synthesize_corpus(root, n_accounts: int = 200, seed: int = 7,
                      ranges: SpeakerRanges = SpeakerRanges(),
                      files_per_account: int = FILES_PER_ACCOUNT,
                      duration: float = DURATION_SECONDS,
                      sample_rate: int = SAMPLE_RATE) -> CorpusManifest:
    """Write `n_accounts` synthetic speakers under ``root/accounts/<id>/<k>.wav``.

    Each account draws one :class:`SpeakerProfile`; the per-speaker random
    stream is keyed by (seed, account index), so output is byte-identical
    for a given seed. Writes ``manifest.json`` and ``speakers.json`` to `root`.
    """
    if n_accounts < 20:
        raise CorpusError("synthesize_corpus needs at least 20 accounts")
    root = Path(root)
    width = max(4, len(str(n_accounts - 1)))
    accounts, profiles = [], {}
    for i in range(n_accounts):
        account_id = f"{i:0{width}d}"
        rng = np.random.default_rng([seed, i])
        profile = SpeakerProfile.draw(rng, ranges)
        profiles[account_id] = asdict(profile)
        adir = root / "accounts" / account_id
        adir.mkdir(parents=True, exist_ok=True)
        files = []
        for k in range(files_per_account):
            wav = synthesize_utterance(profile, rng, ranges, duration, sample_rate)
            rel = f"accounts/{account_id}/{k}.wav"
            write_wav(root / rel, wav)
            files.append(rel)
        accounts.append(Account(account_id, files))
    manifest = CorpusManifest(root, accounts, sample_rate, duration, seed)
    manifest.save(root / "manifest.json")
    write_json(root / "speakers.json", profiles)
    return manifest


# --------------------------------------------------------------------------
# On-disk ingestion
# --------------------------------------------------------------------------

def _natural_key(path: Path):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", path.stem)]


def ingest_directory(root, sample_rate: int = SAMPLE_RATE,
                     duration: float = DURATION_SECONDS,
                     files_per_account: int = FILES_PER_ACCOUNT) -> CorpusManifest:
    """Build a manifest from ``root/accounts/<id>/<k>.wav``.

    Accounts with more than `files_per_account` valid files keep the first
    ones in natural order; accounts with fewer are dropped. Both cases, and
    unreadable files, are recorded in ``manifest.warnings``.
    """
    root = Path(root)
    acc_root = root / "accounts"
    dirs = sorted(p for p in acc_root.iterdir() if p.is_dir()) if acc_root.is_dir() else []
    if not dirs:
        raise CorpusError(f"no account directories under {acc_root}")
    notes, accounts = [], []
    for adir in dirs:
        valid = []
        for wav_path in sorted(adir.glob("*.wav"), key=_natural_key):
            try:
                read_wav(wav_path, sample_rate)
            except (AudioFormatError, OSError) as exc:
                notes.append(f"{adir.name}: skipped unreadable file {wav_path.name} ({exc})")
                continue
            valid.append(wav_path.relative_to(root).as_posix())
        if len(valid) < files_per_account:
            notes.append(f"{adir.name}: excluded, only {len(valid)} valid files")
            continue
        if len(valid) > files_per_account:
            notes.append(f"{adir.name}: kept first {files_per_account} of {len(valid)} files")
        accounts.append(Account(adir.name, valid[:files_per_account]))
    if not accounts:
        raise CorpusError(f"no usable accounts under {root}")
    for note in notes:
        warnings.warn(note, stacklevel=2)
    return CorpusManifest(root, accounts, sample_rate, duration, None, notes)


# --------------------------------------------------------------------------
# Partition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    attacker_ids: tuple[str, ...]
    pbsm_ids: tuple[str, ...]
    tdpa_ids: tuple[str, ...]
    legitimate_ids: tuple[str, ...]
    ratios: dict
    seed: int

    def role_of(self) -> dict[str, str]:
        roles = {}
        for role, ids in (("attacker-pool", self.attacker_ids), ("triggered", self.pbsm_ids),
                          ("attacked", self.tdpa_ids), ("legitimate", self.legitimate_ids)):
            roles.update(dict.fromkeys(ids, role))
        return roles

    def to_json(self) -> dict:
        return {"attacker_ids": list(self.attacker_ids), "pbsm_ids": list(self.pbsm_ids),
                "tdpa_ids": list(self.tdpa_ids), "legitimate_ids": list(self.legitimate_ids),
                "ratios": dict(self.ratios), "seed": self.seed}

    @classmethod
    def from_json(cls, d) -> "Partition":
        return cls(tuple(d["attacker_ids"]), tuple(d["pbsm_ids"]), tuple(d["tdpa_ids"]),
                   tuple(d["legitimate_ids"]), dict(d["ratios"]), int(d["seed"]))


def subset_size(fraction: float, n: int) -> int:
    # the epsilon keeps e.g. 0.29 * 100 from flooring to 28
    return int(math.floor(fraction * n + 1e-9))


def partition(manifest: CorpusManifest, p_pbsm: float = 0.05, p_tdpa: float = 0.05,
              p_attacker: float = 0.05, seed: int = 0) -> Partition:
    """Split accounts into attacker pool, PBSM, TDPA and legitimate sets.

    The attacker pool is drawn first from all accounts, the PBSM set from
    what remains, then the TDPA set; everything left over is legitimate.
    """
    for name, p in (("p_pbsm", p_pbsm), ("p_tdpa", p_tdpa), ("p_attacker", p_attacker)):
        if not 0.0 <= p < 1.0:
            raise CorpusError(f"{name} must be in [0, 1), got {p}")
    if p_pbsm + p_tdpa + p_attacker >= 1.0:
        raise CorpusError("partition fractions must sum to less than 1")
    ids = sorted(manifest.ids())
    n = len(ids)
    sizes = {"attacker": subset_size(p_attacker, n), "pbsm": subset_size(p_pbsm, n),
             "tdpa": subset_size(p_tdpa, n)}
    for name, frac in (("attacker", p_attacker), ("pbsm", p_pbsm), ("tdpa", p_tdpa)):
        if frac > 0 and sizes[name] == 0:
            warnings.warn(f"{name} fraction {frac} of {n} accounts rounds down to 0",
                          stacklevel=2)
    rng = np.random.default_rng(seed)
    remaining = list(ids)
    chosen = {}
    for name in ("attacker", "pbsm", "tdpa"):
        picks = rng.choice(len(remaining), size=sizes[name], replace=False)
        chosen[name] = tuple(sorted(remaining[i] for i in picks))
        taken = set(chosen[name])
        remaining = [r for r in remaining if r not in taken]
    return Partition(chosen["attacker"], chosen["pbsm"], chosen["tdpa"], tuple(remaining),
                     {"p_attacker": p_attacker, "p_pbsm": p_pbsm, "p_tdpa": p_tdpa}, seed)
