"""Attack staging: PBSM trigger injection and targeted file substitution."""
from __future__ import annotations

import math
import shutil
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .audio import Spectrogram, StftParams, Waveform, istft, stft, write_wav
from .corpus import Account, CorpusError, CorpusManifest, Partition, stable_key, write_json

PBSM_MODES = ("literal", "pitch-shift")


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class TriggerConfig:
    """PBSM settings.

    `p` multiplies the STFT grid; the cue is a sine of `trigger_freq` Hz
    lasting `trigger_duration` s with peak amplitude `trigger_amplitude`
    times the clean file's RMS. `offset` fixes the cue start in seconds;
    None draws it uniformly over the valid range.
    """

    p: float = 1.2
    trigger_freq: float = 7000.0
    trigger_duration: float = 0.3
    trigger_amplitude: float = 0.5
    offset: float | None = None
    mode: str = "literal"

    def __post_init__(self):
        if self.p <= 0:
            raise AttackError("p must be positive")
        if self.trigger_freq <= 4000.0:
            raise AttackError("trigger_freq must lie above 4 kHz")
        if self.trigger_duration <= 0:
            raise AttackError("trigger_duration must be positive")
        if self.trigger_amplitude < 0:
            raise AttackError("trigger_amplitude must be non-negative")
        if self.mode not in PBSM_MODES:
            raise AttackError(f"mode must be one of {PBSM_MODES}")


@dataclass(frozen=True)
class PoisonConfig:
    replace_fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.replace_fraction <= 1.0:
            raise AttackError("replace_fraction must be in (0, 1]")


def draw_offset(config: TriggerConfig, waveform: Waveform, seed) -> int:
    """Cue start in samples: `config.offset` if set, else uniform over the valid range."""
    sr = waveform.sample_rate
    n_cue = int(round(config.trigger_duration * sr))
    if n_cue >= len(waveform):
        raise AttackError(
            f"{config.trigger_duration} s trigger does not fit in a "
            f"{waveform.duration:.3f} s file")
    last = len(waveform) - n_cue
    if config.offset is not None:
        start = int(round(config.offset * sr))
        if not 0 <= start <= last:
            raise AttackError(f"trigger offset {config.offset} s puts the cue past the end")
        return start
    return int(np.random.default_rng(seed).integers(0, last + 1))


def make_cue(config: TriggerConfig, n_samples: int, start: int, amplitude: float,
             sample_rate: int) -> np.ndarray:
    n_cue = int(round(config.trigger_duration * sample_rate))
    cue = np.zeros(n_samples)
    t = np.arange(n_cue) / sample_rate
    cue[start:start + n_cue] = amplitude * np.sin(2 * np.pi * config.trigger_freq * t)
    return cue


def _pitch_shift_grid(spec: Spectrogram, factor: float) -> np.ndarray:
    """Phase-vocoder frequency-axis shift of every frame by `factor`."""
    X = spec.bins
    n_bins, n_frames = X.shape
    hop, n = spec.params.hop, spec.params.window_len
    mag, phase = np.abs(X), np.angle(X)
    k = np.arange(n_bins)
    expected = 2 * np.pi * hop * k / n
    dphi = np.diff(phase, axis=1, prepend=phase[:, :1]) - expected[:, None]
    dphi = (dphi + np.pi) % (2 * np.pi) - np.pi
    true_adv = expected[:, None] + dphi
    src = k / factor
    lo = np.clip(np.floor(src).astype(int), 0, n_bins - 1)
    hi = np.clip(lo + 1, 0, n_bins - 1)
    frac = (src - lo)[:, None]
    valid = (src <= n_bins - 1)[:, None]
    new_mag = np.where(valid, (1 - frac) * mag[lo] + frac * mag[hi], 0.0)
    new_adv = factor * true_adv[lo]
    new_phase = phase[lo, :1] + np.cumsum(new_adv, axis=1) - new_adv[:, :1]
    return new_mag * np.exp(1j * new_phase)


def inject_pbsm(waveform: Waveform, config: TriggerConfig = TriggerConfig(), seed=0,
                params: StftParams | None = None, offset: int | None = None) -> Waveform:
    """Boost the STFT by `p`, add the cue's STFT, and resynthesize.

    The signal is zero-padded by one window on both sides before analysis
    so every original sample sits in the fully overlapped interior; the
    output has the input's length and is clipped to [-1, 1].
    """
    params = params or StftParams()
    start = draw_offset(config, waveform, seed) if offset is None else int(offset)
    pad = params.window_len
    x = np.concatenate([np.zeros(pad), waveform.samples, np.zeros(pad)])
    padded = Waveform(x, waveform.sample_rate)
    spec = stft(padded, params)
    if config.mode == "literal":
        grid = config.p * spec.bins
    else:
        grid = _pitch_shift_grid(spec, config.p)
    amplitude = config.trigger_amplitude * waveform.rms()
    if amplitude > 0:
        cue = make_cue(config, len(padded), pad + start, amplitude, waveform.sample_rate)
        grid = grid + stft(Waveform(cue, waveform.sample_rate), params).bins
    out = istft(Spectrogram(grid, spec.sample_rate, params, len(padded)), params)
    y = out.samples[pad:pad + len(waveform)]
    return Waveform(np.clip(y, -1.0, 1.0), waveform.sample_rate)


def poison_account(account: Account, attacker_pool: list[str],
                   config: PoisonConfig = PoisonConfig(), seed=0) -> Account:
    """Swap ``floor(replace_fraction * |files|)`` random files for distinct attacker files."""
    k = int(math.floor(config.replace_fraction * len(account.files) + 1e-9))
    if len(attacker_pool) < k:
        raise AttackError(
            f"attacker pool has {len(attacker_pool)} files, need {k} for {account.account_id}")
    rng = np.random.default_rng(seed)
    positions = rng.choice(len(account.files), size=k, replace=False)
    donors = rng.choice(len(attacker_pool), size=k, replace=False)
    files = list(account.files)
    provenance = list(account.provenance)
    for pos, donor in zip(sorted(positions), donors):
        files[pos] = attacker_pool[donor]
        provenance[pos] = "attacker"
    return replace(account, files=files, provenance=provenance, ground_truth="attacked")


@dataclass
class StagedCorpus:
    manifest: CorpusManifest
    ground_truth: dict


def _account_seed(seed: int, account_id: str, salt: int) -> list[int]:
    return [seed, salt, stable_key(account_id)]


def stage_attack(manifest: CorpusManifest, part: Partition, out_root,
                 trigger: TriggerConfig = TriggerConfig(),
                 poison: PoisonConfig = PoisonConfig(), seed: int = 0,
                 params: StftParams | None = None) -> StagedCorpus:
    """Produce the attacked corpus under `out_root`.

    PBSM accounts get every file triggered, TDPA accounts get attacker
    files swapped in, legitimate accounts are byte-copied, and the attacker
    pool is withheld. Writes ``manifest.json`` and ``ground_truth.json``
    into `out_root`.
    """
    roles = part.role_of()
    if set(roles) != set(manifest.ids()):
        raise CorpusError("partition does not cover exactly the manifest's accounts")
    out_root = Path(out_root)
    by_id = manifest.by_id()
    pool = [f"{aid}/{rel}" for aid in part.attacker_ids for rel in by_id[aid].files]

    accounts, truth = [], {}
    for account in sorted(manifest.accounts, key=lambda a: a.account_id):
        role = roles[account.account_id]
        if role == "attacker-pool":
            continue
        adir = out_root / "accounts" / account.account_id
        adir.mkdir(parents=True, exist_ok=True)
        offsets = None
        if role == "triggered":
            offsets, files = [], []
            for k, rel in enumerate(account.files):
                wav = manifest.load(rel)
                fseed = _account_seed(seed, account.account_id, 1) + [k]
                start = draw_offset(trigger, wav, fseed)
                out = inject_pbsm(wav, trigger, params=params, offset=start)
                dest = f"accounts/{account.account_id}/{k}.wav"
                write_wav(out_root / dest, out)
                files.append(dest)
                offsets.append(start / wav.sample_rate)
            staged = Account(account.account_id, files, "triggered", ["triggered"] * len(files))
        else:
            if role == "attacked":
                source = poison_account(account, pool, poison,
                                        _account_seed(seed, account.account_id, 2))
            else:
                source = account
            files = []
            for k, rel in enumerate(source.files):
                if source.provenance[k] == "attacker":
                    src = manifest.path_of(rel.split("/", 1)[1])
                else:
                    src = manifest.path_of(rel)
                dest = f"accounts/{account.account_id}/{k}.wav"
                shutil.copyfile(src, out_root / dest)
                files.append(dest)
            staged = Account(account.account_id, files, role, list(source.provenance))
        accounts.append(staged)
        truth[account.account_id] = {"class": staged.ground_truth,
                                     "provenance": list(staged.provenance),
                                     "trigger_offsets": offsets}
        if role == "attacked":
            truth[account.account_id]["attacker_files"] = [
                f for f, tag in zip(source.files, source.provenance) if tag == "attacker"]
    attacked = CorpusManifest(out_root, accounts, manifest.sample_rate,
                              manifest.duration_seconds, manifest.seed)
    attacked.save(out_root / "manifest.json")
    write_json(out_root / "ground_truth.json", truth)
    return StagedCorpus(attacked, truth)
