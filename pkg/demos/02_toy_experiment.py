"""Fine-tune the augmenting encoder next to a frozen embedder on toy data.

The toy corpus hides part of each query behind synonyms the frozen stub
embedder cannot see through; the trainable hashed encoder can learn them.
By default only two smoothing rates are tried, which takes well under a
minute; pass ``--full`` for the six-rate grid used by the acceptance tests
(a few minutes).

Run: python3 demos/02_toy_experiment.py [--full]
"""

import logging
import sys

from mafin.experiment import ExperimentConfig, run

logging.basicConfig(level=logging.WARNING)

if "--full" in sys.argv:
    cfg = ExperimentConfig()
else:
    cfg = ExperimentConfig(grid=(0.0, 0.2))

print("supervised: train on real queries, choose label smoothing on validation")
sup = run(cfg, supervised=True)
print(sup.table())
print(f"chosen smoothing: {sup.training['mafin_sup']['best_smoothing']}")

print("\nunsupervised: train on one template query per passage, no real queries")
unsup = run(cfg, supervised=False, baselines=("bb_only",))
print(unsup.table())
