"""The end-to-end pipeline through the Python API.

Synthesizes the corpus, pretrains and freezes the speaker network, trains one
enhancer per loss variant and evaluates verification trials at several SNRs.
By default a reduced configuration keeps this to a few minutes; pass
``--full`` for the desk-scale run used by the acceptance suite (about ten
minutes per seed on one core).
"""

import argparse
import logging
from dataclasses import replace

from gradw.experiment import DESK_CONFIG, desk_run

parser = argparse.ArgumentParser()
parser.add_argument("--full", action="store_true")
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--out", default="demo_out/desk_run")
args = parser.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = DESK_CONFIG
if not args.full:
    cfg = replace(cfg, pretrain=replace(cfg.pretrain, epochs=12),
                  train=replace(cfg.train, epochs=4, warmup_epochs=2, pairs_per_utterance=1),
                  eval=replace(cfg.eval, n_trials=100))

result = desk_run(args.seed, cfg, out_dir=args.out)
print(f"\nspeaker pretraining accuracy: {result.pretrain.final_accuracy:.3f}")
for variant, tlog in result.train_logs.items():
    losses = tlog.column("train_loss")
    print(f"{variant}: train loss {losses[0]:.4g} -> {losses[-1]:.4g} (ratio {losses[-1] / losses[0]:.2f})")
print("\ncondition  system    EER     minDCF")
for row in result.rows:
    print(f"{row.condition:>9s}  {row.variant:8s}  {row.eer:.3f}   {row.min_dcf:.3f}")
print("\ntimings (s):", {k: round(v, 1) for k, v in result.timings.items()})
print(f"artifacts under {args.out}")
