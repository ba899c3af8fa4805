import json

import numpy as np
import pytest

from voiceshield.attack import (AttackError, PoisonConfig, TriggerConfig, draw_offset, inject_pbsm,
                                poison_account, stage_attack)
from voiceshield.audio import StftParams, Waveform, band_energy_series, interior_slice, stft
from voiceshield.corpus import Account, partition, synthesize_corpus

SR = 16000


def noise(seconds=3.0, level=0.05, seed=0):
    rng = np.random.default_rng(seed)
    return Waveform(level * rng.standard_normal(int(seconds * SR)))


def test_identity_when_p1_and_no_cue():
    x = noise()
    y = inject_pbsm(x, TriggerConfig(p=1.0, trigger_amplitude=0.0), seed=0)
    assert np.max(np.abs(y.samples - x.samples)) <= 1e-6


def test_p2_doubles_magnitudes():
    x = noise(level=0.02)
    y = inject_pbsm(x, TriggerConfig(p=2.0, trigger_amplitude=0.0), seed=0)
    assert np.allclose(y.samples, 2 * x.samples, atol=1e-9)
    # away from the file edges every STFT magnitude doubles
    a, b = np.abs(stft(x).bins), np.abs(stft(y).bins)
    mid = slice(2, -2)
    assert np.allclose(b[:, mid], 2 * a[:, mid], rtol=1e-6, atol=1e-9)


def test_cue_frames_follow_frame_arithmetic():
    params = StftParams()
    t = np.arange(3 * SR) / SR
    voice = 0.3 * np.sin(2 * np.pi * 220 * t) + noise(level=1e-3, seed=3).samples
    y = inject_pbsm(Waveform(voice), TriggerConfig(p=1.0, offset=1.0), params=params)
    series = band_energy_series(stft(y, params), (6800.0, 7200.0))
    hot = set(np.flatnonzero(series > 5 * np.median(series)).tolist())
    # frame t covers samples [t*hop, t*hop+win); the cue covers [16000, 20800)
    overlapping = {f for f in range(series.size)
                   if f * params.hop < 20800 and f * params.hop + params.window_len > 16000}
    assert hot == overlapping


def test_difference_energy_sits_in_trigger_band():
    x = noise(level=0.05, seed=5)
    y = inject_pbsm(x, TriggerConfig(p=1.0), seed=11)
    d = y.samples - x.samples
    spec = np.abs(np.fft.rfft(d)) ** 2
    f = np.fft.rfftfreq(d.size, 1 / SR)
    band = (f >= 6800) & (f <= 7200)
    assert spec[band].sum() / spec.sum() >= 0.9


def test_offset_is_seeded_and_in_range():
    x = noise()
    cfg = TriggerConfig()
    starts = {draw_offset(cfg, x, s) for s in range(30)}
    assert len(starts) > 1
    assert all(0 <= s <= len(x) - int(0.3 * SR) for s in starts)
    assert draw_offset(cfg, x, 4) == draw_offset(cfg, x, 4)


def test_trigger_must_fit():
    with pytest.raises(AttackError):
        inject_pbsm(noise(0.2), TriggerConfig(trigger_duration=0.3))
    with pytest.raises(AttackError):
        inject_pbsm(noise(), TriggerConfig(offset=2.9))


@pytest.mark.parametrize("kwargs", [{"p": 0}, {"trigger_freq": 3000}, {"trigger_duration": 0},
                                    {"trigger_amplitude": -1}, {"mode": "shift"}])
def test_trigger_config_validation(kwargs):
    with pytest.raises(AttackError):
        TriggerConfig(**kwargs)


def test_pitch_shift_mode_moves_a_tone():
    t = np.arange(3 * SR) / SR
    x = Waveform(0.3 * np.sin(2 * np.pi * 1000 * t))
    y = inject_pbsm(x, TriggerConfig(p=1.5, trigger_amplitude=0.0, mode="pitch-shift"), seed=0)
    spec = np.abs(np.fft.rfft(y.samples[interior_slice(len(y), StftParams())]))
    f = np.fft.rfftfreq(spec.size * 2 - 2, 1 / SR)
    assert abs(f[np.argmax(spec)] - 1500) < 20


def account(n=10):
    return Account("victim", [f"accounts/victim/{k}.wav" for k in range(n)])


POOL = [f"atk{i}/accounts/atk{i}/{k}.wav" for i in range(2) for k in range(10)]


def test_poison_counts():
    acc = poison_account(account(), POOL, PoisonConfig(0.5), seed=1)
    assert acc.provenance.count("attacker") == 5
    assert sum(f in POOL for f in acc.files) == 5
    assert len(set(acc.files)) == 10
    assert acc.ground_truth == "attacked"
    full = poison_account(account(), POOL, PoisonConfig(1.0), seed=1)
    assert full.provenance.count("attacker") == 10


def test_poison_deterministic_and_pool_check():
    assert poison_account(account(), POOL, seed=9) == poison_account(account(), POOL, seed=9)
    with pytest.raises(AttackError):
        poison_account(account(), POOL[:4], PoisonConfig(0.5))
    with pytest.raises(AttackError):
        PoisonConfig(0.0)


@pytest.fixture(scope="module")
def staged(tmp_path_factory):
    root = tmp_path_factory.mktemp("stage")
    clean = synthesize_corpus(root / "clean", n_accounts=40, seed=2)
    part = partition(clean, 0.05, 0.05, 0.05, seed=4)
    result = stage_attack(clean, part, root / "att", seed=4)
    return clean, part, result, root


def test_stage_label_counts(staged):
    clean, part, result, _ = staged
    classes = [v["class"] for v in result.ground_truth.values()]
    assert classes.count("triggered") == 2 and classes.count("attacked") == 2
    assert classes.count("legitimate") == 34
    assert not set(part.attacker_ids) & set(result.manifest.ids())


def test_stage_legitimate_untouched(staged):
    clean, part, result, _ = staged
    for aid in part.legitimate_ids:
        for src, dst in zip(clean.by_id()[aid].files, result.manifest.by_id()[aid].files):
            assert clean.path_of(src).read_bytes() == result.manifest.path_of(dst).read_bytes()


def test_stage_attacked_files_come_from_pool(staged):
    clean, part, result, _ = staged
    for aid in part.tdpa_ids:
        truth = result.ground_truth[aid]
        assert truth["provenance"].count("attacker") == 5
        assert all(f.split("/", 1)[0] in part.attacker_ids for f in truth["attacker_files"])


def test_stage_triggered_offsets_recorded(staged):
    _, part, result, _ = staged
    for aid in part.pbsm_ids:
        offs = result.ground_truth[aid]["trigger_offsets"]
        assert len(offs) == 10 and all(0 <= o <= 2.7 for o in offs)


def test_stage_is_pure(staged, tmp_path):
    clean, part, result, root = staged
    again = stage_attack(clean, part, tmp_path, seed=4)
    assert json.dumps(again.ground_truth, sort_keys=True) == json.dumps(result.ground_truth,
                                                                        sort_keys=True)
    for acc in again.manifest.accounts:
        for rel in acc.files:
            assert (tmp_path / rel).read_bytes() == (root / "att" / rel).read_bytes()
