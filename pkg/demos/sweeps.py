"""Sweep the weak-modality mixture weight and the strong-modality noise level.

Prints the total crossmodal accuracy per mixture weight and the
validation-optimal noise level per training noise level.
Run: python3 demos/sweeps.py [seed]
"""

import sys

from tupleinfonce.config import parse_config
from tupleinfonce.expcli import run_experiment

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

alpha = run_experiment(parse_config("", {"kind": "alpha-sweep", "seed": seed}), f"runs/alpha_sweep_{seed}")["results"]
for v, r in zip(alpha["values"], alpha["rewards"]):
    print(f"weak weight {v:.1f}: total accuracy {r:.3f}")

beta = run_experiment(parse_config("", {"kind": "beta-sweep", "seed": seed}), f"runs/beta_sweep_{seed}")["results"]
for b, z in zip(beta["betas"], beta["zeta_star"]):
    print(f"trained with noise {b:.3f}: best validation noise {z:.3f}")
