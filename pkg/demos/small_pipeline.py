"""Run every stage on a 40-account corpus and print the headline metrics.

The full default run (200 accounts, 5 folds, 12 epochs) takes roughly
twelve minutes on one core; this reduced one takes well under a minute.
"""
import json
import sys
import tempfile
from pathlib import Path

from voiceshield.config import PipelineConfig
from voiceshield.pipeline import Run, run_pipeline

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "run"
cfg = PipelineConfig.load(None, ["corpus.n_accounts=40", "train.epochs=2", "train.k_folds=2"],
                          seed=0, out=str(out))
for result in run_pipeline(Run(cfg)):
    print(result)

metrics = json.loads((out / "metrics.json").read_text())
print(f"\nartifacts in {out}")
print(f"ASR {100 * metrics['asr']:.1f}%")
for name, m in metrics["classes"].items():
    print(f"{name:>11}: precision {m['precision']:.2f} recall {m['recall']:.2f} (n={m['support']})")
