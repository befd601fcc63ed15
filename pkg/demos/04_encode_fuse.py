"""One window through encoders, alignment, blank mask, gates, heads.

Prints the intermediate shapes and checks the structural invariants the
test suite holds: exact top-k mask size, gate vectors on the simplex,
movement probabilities summing to one.
"""

import math

import numpy as np

from msmf.data import SyntheticSpec, generate_synthetic
from msmf.multitask import ModelConfig, forward, init_model
from msmf.numcore import Rng

spec = SyntheticSpec(n_samples=60, window=16, seed=3)
ds = generate_synthetic(spec)
cfg = ModelConfig(d_e=8, d_a=8, d_h=16, experts=4, rho=0.5)
model = init_model(cfg, ds.modality_dims(), Rng(5).derive("init"))
print(f"model: {model.parameter_count()} scalar parameters "
      f"in {len(model.parameters())} tensors")

out = forward(model, ds.get_window(10))

for m, feats in out.features.items():
    print(f"  {m:10s} fine {feats.fine.value.shape} "
          f"coarse {feats.coarse.value.shape}")

stack = out.fusion.stack
mask = out.fusion.mask
rows = stack.slots.value.shape[0]
entries = rows * cfg.d_a
k = math.ceil(cfg.rho * entries)
kept = int(mask.mask.sum())
print(f"aligned stack: {rows} rows x d_a={cfg.d_a} -> {entries} entries, "
      f"mask keeps {kept} (k = ceil({cfg.rho} * {entries}) = {k})")
assert kept == k

for task, gate in out.gates.items():
    g = gate.value
    print(f"  gate[{task}]: {np.round(g, 3)} sum {g.sum():.12f}")
    assert abs(g.sum() - 1.0) < 1e-12 and (g >= 0).all()

p = out.movement_probs.value
print(f"return_hat {float(out.return_hat.value[0]):+.4f}, "
      f"movement probs {np.round(p, 3)} (sum {p.sum():.12f})")
assert abs(p.sum() - 1.0) < 1e-12
print("ok")
