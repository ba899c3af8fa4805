"""Plant a pitch-boost trigger in one speaker's files and watch the detector catch it.

Run with ``python3 demos/trigger_and_detect.py``. Nothing is written to disk.
"""
import numpy as np

from voiceshield.attack import TriggerConfig, inject_pbsm
from voiceshield.corpus import SpeakerProfile, SpeakerRanges, synthesize_utterance
from voiceshield.detect import (DetectionConfig, ScoreWeights, analyze_waveform, assess_account,
                                calibrate_tau)

rng = np.random.default_rng(0)
speaker = SpeakerProfile.draw(rng, SpeakerRanges())
clean = [synthesize_utterance(speaker, rng) for _ in range(10)]
print(f"speaker f0 ~ {speaker.f0_base:.0f} Hz, {len(clean)} files of {clean[0].duration:.1f} s")

# boost every STFT bin by 1.2 and add a 0.3 s, 7 kHz cue at a random offset
trigger = TriggerConfig(p=1.2)
poisoned = [inject_pbsm(w, trigger, seed=[0, i]) for i, w in enumerate(clean)]

cfg, weights = DetectionConfig(), ScoreWeights()
analyses = {name: [analyze_waveform(w, cfg, weights) for w in files]
            for name, files in (("clean", clean), ("poisoned", poisoned))}

# the score tracks pitch, so tau has to be fitted to the corpus; here it is
# fitted on these very files, which a real run would never do
scores = {name: [a.score for a in v] for name, v in analyses.items()}
tau = calibrate_tau(scores["clean"] + scores["poisoned"], [0] * 10 + [1] * 10)
print(f"calibrated tau = {tau:.1f}")

for name, v in analyses.items():
    counts = [a.beep_count for a in v]
    verdict = assess_account(scores[name], counts, cfg, tau=tau)
    print(f"{name:>9}: beeps per file {counts}, mean score {np.mean(scores[name]):.0f}")
    print(f"{'':>9}  pi={verdict.pi:.2f} c={verdict.confidence:+.2f} -> "
          f"{verdict.decision} ({verdict.decision_reason})")
