import shutil
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voiceshield.audio import Waveform, estimate_pitch, read_wav, write_wav
from voiceshield.corpus import (Account, CorpusError, CorpusManifest, Partition, SpeakerProfile,
                                SpeakerRanges, ingest_directory, partition, subset_size,
                                synthesize_corpus, synthesize_utterance)


def fake_manifest(n, root="."):
    return CorpusManifest(root, [Account(f"{i:04d}", [f"accounts/{i:04d}/{k}.wav" for k in range(10)])
                                 for i in range(n)])


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    return synthesize_corpus(root, n_accounts=20, seed=7)


def test_synth_layout(small_corpus):
    m = small_corpus
    assert m.n == 20
    for acc in m.accounts:
        assert len(acc.files) == 10
    w = read_wav(m.path_of(m.accounts[3].files[4]))
    assert len(w) == 48000 and w.sample_rate == 16000
    assert (m.root / "manifest.json").is_file() and (m.root / "speakers.json").is_file()


def test_synth_is_byte_identical(small_corpus, tmp_path):
    other = synthesize_corpus(tmp_path, n_accounts=20, seed=7)
    for a, b in zip(small_corpus.accounts, other.accounts):
        for fa, fb in zip(a.files, b.files):
            assert small_corpus.path_of(fa).read_bytes() == other.path_of(fb).read_bytes()
    assert (small_corpus.root / "manifest.json").read_bytes() == (tmp_path / "manifest.json").read_bytes()


def test_synth_requires_twenty_accounts(tmp_path):
    with pytest.raises(CorpusError):
        synthesize_corpus(tmp_path, n_accounts=5)


def test_recovered_pitch_matches_profile():
    ranges = SpeakerRanges()
    for seed in range(8):
        rng = np.random.default_rng(seed)
        profile = SpeakerProfile.draw(rng, ranges)
        w = synthesize_utterance(profile, rng, ranges)
        assert abs(estimate_pitch(w).f0 - profile.f0_base) <= 5.0


def test_manifest_roundtrip(small_corpus):
    again = CorpusManifest.load_json(small_corpus.root / "manifest.json")
    assert again.ids() == small_corpus.ids()
    assert again.accounts[0].files == small_corpus.accounts[0].files
    assert again.sample_rate == 16000 and again.duration_seconds == 3.0


def test_manifest_rejects_duplicate_ids():
    with pytest.raises(CorpusError):
        CorpusManifest(".", [Account("a", []), Account("a", [])])


def _write_account(root, name, n_files):
    d = root / "accounts" / name
    d.mkdir(parents=True)
    for k in range(n_files):
        write_wav(d / f"{k}.wav", Waveform(np.full(1600, 0.01 * k)))


def test_ingest_rules(tmp_path):
    _write_account(tmp_path, "a", 10)
    _write_account(tmp_path, "b", 12)
    _write_account(tmp_path, "c", 4)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        m = ingest_directory(tmp_path)
    assert m.ids() == ["a", "b"]
    # natural order: 0..9, not 0, 1, 10, 11, 2
    assert m.by_id()["b"].files[-1] == "accounts/b/9.wav"
    assert any("b" in w and "first 10" in w for w in m.warnings)
    assert any("c" in w and "excluded" in w for w in m.warnings)
    # short files are padded to the corpus duration on load
    assert len(m.load(m.by_id()["a"].files[0])) == 48000


def test_ingest_three_accounts(tmp_path):
    for name in "xyz":
        _write_account(tmp_path, name, 10)
    assert ingest_directory(tmp_path).n == 3


def test_ingest_empty_root(tmp_path):
    with pytest.raises(CorpusError):
        ingest_directory(tmp_path)


def test_ingest_skips_unreadable(tmp_path):
    _write_account(tmp_path, "a", 10)
    (tmp_path / "accounts" / "a" / "10.wav").write_bytes(b"not a wav")
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        m = ingest_directory(tmp_path)
    assert m.n == 1 and any("unreadable" in w for w in m.warnings)


def test_partition_sizes():
    part = partition(fake_manifest(100), 0.05, 0.05, 0.05, seed=1)
    assert (len(part.attacker_ids), len(part.pbsm_ids), len(part.tdpa_ids),
            len(part.legitimate_ids)) == (5, 5, 5, 85)
    empty = partition(fake_manifest(100), 0.0, 0.0, 0.0, seed=1)
    assert len(empty.legitimate_ids) == 100 and not empty.pbsm_ids


def test_partition_sizes_at_full_corpus_scale():
    assert subset_size(0.05, 3206) == 160
    assert subset_size(0.29, 100) == 29


def test_partition_zero_size_warns():
    with pytest.warns(UserWarning):
        partition(fake_manifest(10), 0.05, 0.0, 0.0, seed=0)


def test_partition_rejects_bad_fractions():
    with pytest.raises(CorpusError):
        partition(fake_manifest(10), 0.5, 0.3, 0.3)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 400), seed=st.integers(0, 10**6),
       fr=st.tuples(st.floats(0, 0.3), st.floats(0, 0.3), st.floats(0, 0.3)))
def test_partition_disjoint_exhaustive(n, seed, fr):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        part = partition(fake_manifest(n), fr[0], fr[1], fr[2], seed=seed)
    sets = [set(part.attacker_ids), set(part.pbsm_ids), set(part.tdpa_ids),
            set(part.legitimate_ids)]
    assert sum(map(len, sets)) == n
    assert set().union(*sets) == set(fake_manifest(n).ids())
    assert len(part.attacker_ids) == int(np.floor(fr[2] * n + 1e-9))
    assert len(part.pbsm_ids) == int(np.floor(fr[0] * n + 1e-9))
    assert len(part.tdpa_ids) == int(np.floor(fr[1] * n + 1e-9))
    again = partition(fake_manifest(n), fr[0], fr[1], fr[2], seed=seed) if n else part
    assert again == part


def test_partition_json_roundtrip():
    part = partition(fake_manifest(40), 0.05, 0.05, 0.05, seed=3)
    assert Partition.from_json(part.to_json()) == part
