"""Per-file embeddings, account pairing and the labelled 32x32 dataset."""
from __future__ import annotations

import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .audio import StftParams, Waveform, stft
from .corpus import CorpusManifest

EMBED_DIM = 512
N_BANDS = 32
N_SEGMENTS = 16
LOG_FLOOR = 1e-10
CLASSES = ("legitimate", "attacked", "triggered")

VSEM_MAGIC = b"VSEM"
VSEM_VERSION = 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_bands: int, n_fft: int, sample_rate: int,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular mel filters, shape (n_bands, n_fft // 2 + 1)."""
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    bank = np.zeros((n_bands, freqs.size))
    for b in range(n_bands):
        lo, mid, hi = edges[b:b + 3]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        bank[b] = np.maximum(0.0, np.minimum(rise, fall))
    return bank


def band_centers(n_bands: int = N_BANDS, sample_rate: int = 16000) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_bands + 2))
    return edges[1:-1]


def segment_bounds(n_frames: int, n_segments: int = N_SEGMENTS) -> list[tuple[int, int]]:
    """Frame ranges [start, stop) of the time segments (np.array_split layout)."""
    parts = np.array_split(np.arange(n_frames), n_segments)
    return [(int(p[0]), int(p[-1]) + 1) for p in parts]


@dataclass(frozen=True)
class Embedding:
    values: np.ndarray
    source_file: str = ""
    account_id: str = ""
    label: str = "legitimate"


def embed_sample(waveform: Waveform, params: StftParams | None = None) -> np.ndarray:
    """Log mel-band energy grid, 16 time segments x 32 bands, flattened segment-major.

    Band energy is the mel-weighted sum of |X|^2, averaged over the frames
    of each segment, then ``log(energy + 1e-10)``. Silence therefore maps
    every cell to ``log(1e-10)``.
    """
    params = params or StftParams()
    spec = stft(waveform, params)
    power = np.abs(spec.bins) ** 2
    bank = mel_filterbank(N_BANDS, params.window_len, waveform.sample_rate)
    bands = bank @ power
    grid = np.stack([bands[:, a:b].mean(axis=1)
                     for a, b in segment_bounds(bands.shape[1])])
    return np.log(grid + LOG_FLOOR).ravel()


def standardize(values, target_len: int = EMBED_DIM) -> np.ndarray:
    """Truncate or zero-pad to `target_len`."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("cannot standardize an empty embedding")
    if v.size >= target_len:
        return v[:target_len].copy()
    return np.concatenate([v, np.zeros(target_len - v.size)])


def pair_indices(m: int) -> list[tuple[int, int]]:
    """Index pairs for `m` sorted embeddings: halves matched, then B rotated by one.

    With m odd the last element of the second half is repeated so both
    halves have ``ceil(m / 2)`` entries.
    """
    if m < 2:
        raise ValueError("pairing needs at least two embeddings")
    half = (m + 1) // 2
    a = list(range(half))
    b = list(range(half, m))
    if len(b) < len(a):
        b.append(b[-1])
    first = [(a[i], b[i]) for i in range(half)]
    second = [(a[i], b[(i + 1) % len(b)]) for i in range(half)]
    return first + second


def pair_to_grid(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Concatenate, min-max scale to [0, 1] (constant input -> 0.5), reshape 32x32."""
    v = np.concatenate([standardize(left), standardize(right)])
    lo, hi = v.min(), v.max()
    if hi - lo > 0:
        v = (v - lo) / (hi - lo)
    else:
        v = np.full_like(v, 0.5)
    return v.reshape(32, 32)


@dataclass(frozen=True)
class PairedInput:
    grid: np.ndarray
    label: np.ndarray
    account_id: str
    pair: tuple[int, int]


def one_hot(label: str) -> np.ndarray:
    v = np.zeros(len(CLASSES))
    v[CLASSES.index(label)] = 1.0
    return v


def pair_account(embeddings, account_id: str = "", label: str = "legitimate") -> list[PairedInput]:
    """Pair one account's embeddings (already in file order) into 32x32 inputs."""
    embs = [standardize(e) for e in embeddings]
    target = one_hot(label)
    return [PairedInput(pair_to_grid(embs[i], embs[j]), target, account_id, (i, j))
            for i, j in pair_indices(len(embs))]


# --------------------------------------------------------------------------
# Embedding cache ("VSEM")
# --------------------------------------------------------------------------

def write_vsem(path, matrix) -> None:
    """magic, version byte, uint32 count, uint32 dim (LE), then float32 LE row-major."""
    m = np.asarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError("VSEM payload must be 2-D (count, dim)")
    header = VSEM_MAGIC + struct.pack("<BII", VSEM_VERSION, m.shape[0], m.shape[1])
    Path(path).write_bytes(header + np.ascontiguousarray(m).tobytes())


def read_vsem(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != VSEM_MAGIC:
        raise ValueError(f"{path}: not a VSEM file")
    version, count, dim = struct.unpack("<BII", raw[4:13])
    if version != VSEM_VERSION:
        raise ValueError(f"{path}: unsupported VSEM version {version}")
    payload = raw[13:]
    if len(payload) != 4 * count * dim:
        raise ValueError(f"{path}: truncated VSEM payload")
    return np.frombuffer(payload, dtype="<f4").reshape(count, dim).astype(np.float64)


def _embed_account(args):
    manifest, account_id, extractor = args
    account = manifest.by_id()[account_id]
    return np.stack([standardize(extractor(manifest.load(rel))) for rel in account.files])


def embed_corpus(manifest: CorpusManifest, out_dir, workers: int = 1,
                 extractor: Callable[[Waveform], np.ndarray] = embed_sample) -> dict[str, Path]:
    """Write one VSEM file per account; returns account id -> path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = manifest.ids()
    jobs = [(manifest, aid, extractor) for aid in ids]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            mats = list(pool.map(_embed_account, jobs, chunksize=4))
    else:
        mats = [_embed_account(j) for j in jobs]
    paths = {}
    for aid, mat in zip(ids, mats):
        paths[aid] = out_dir / f"{aid}.vsem"
        write_vsem(paths[aid], mat)
    return paths


@dataclass
class Dataset:
    grids: np.ndarray          # (N, 32, 32)
    labels: np.ndarray         # (N, 3) one-hot
    account_ids: list[str]
    pairs: list[tuple[int, int]]

    def __len__(self):
        return self.grids.shape[0]

    def class_index(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.grids[idx], self.labels[idx],
                       [self.account_ids[i] for i in idx], [self.pairs[i] for i in idx])

    def accounts(self, ids) -> "Dataset":
        keep = set(ids)
        return self.subset([i for i, a in enumerate(self.account_ids) if a in keep])


def build_dataset(embeddings: dict[str, np.ndarray], ground_truth: dict[str, str],
                  decisions: dict[str, str] | None, account_ids=None) -> Dataset:
    """Pair every account's embeddings and label each pair with the account's class.

    Accounts the detection layer left Deferred are dropped; `decisions`
    must be given so that rule can be applied.
    """
    if decisions is None:
        raise ValueError("a detection report is required to build the dataset")
    ids = sorted(embeddings) if account_ids is None else sorted(account_ids)
    grids, labels, owners, pairs = [], [], [], []
    for aid in ids:
        if decisions.get(aid) == "Deferred":
            continue
        for p in pair_account(embeddings[aid], aid, ground_truth[aid]):
            grids.append(p.grid)
            labels.append(p.label)
            owners.append(aid)
            pairs.append(p.pair)
    if not grids:
        return Dataset(np.zeros((0, 32, 32)), np.zeros((0, len(CLASSES))), [], [])
    return Dataset(np.stack(grids), np.stack(labels), owners, pairs)
