"""Zero-shot vs. robot-pretrained fine-tuning across human data fractions.

Each seed regenerates the dataset and repeats the pretraining, so the spread
between seeds reflects the whole pipeline, not only the fine-tuning draw.

    python3 demos/transfer_sweep.py [n_seeds]
"""

import sys

import numpy as np

from toolsense.experiment import transfer_experiment, transfer_gaps

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5
fractions = (0.1, 0.4, 1.0)

gaps = []
for seed in range(n_seeds):
    g = transfer_gaps(transfer_experiment(seed, fractions))
    gaps.append(g)
    print(f"seed {seed}: " + "  ".join(f"{int(f * 100):>3}% {100 * d:+5.1f} pts" for f, d in g.items()))

print("mean fine-tuned minus zero-shot:")
for f in fractions:
    vals = np.array([g[f] for g in gaps]) * 100
    print(f"  {int(f * 100):>3}%: {vals.mean():+.1f} pts (sd {vals.std(ddof=1) if len(vals) > 1 else 0:.1f})")
