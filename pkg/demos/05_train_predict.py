"""A small end-to-end run: split, train with early stopping, evaluate,
round-trip the model file, and show that reloading is value-exact.
"""

import dataclasses
import os
import tempfile

import numpy as np

from msmf.config import default_config, to_json_dict
from msmf.data import generate_synthetic
from msmf.multitask import init_model, predict
from msmf.numcore import Rng
from msmf.training import (evaluate, load_model, prepare_splits, save_model,
                           train)

cfg = default_config()
cfg = dataclasses.replace(
    cfg,
    data=dataclasses.replace(cfg.data, n_samples=400, seed=11),
    model=dataclasses.replace(cfg.model, d_e=8, d_a=8, d_h=16, experts=2),
    train=dataclasses.replace(cfg.train, epochs=10, batch_size=16))

ds = generate_synthetic(cfg.data)
tr, va, te, rbm = prepare_splits(ds, cfg.completion)
print(f"windows: train {tr.n_windows}, val {va.n_windows}, test {te.n_windows}")

model = init_model(cfg.model, tr.modality_dims(), Rng(0).derive("init"))
model, hist = train(model, tr, va, cfg.loss, cfg.train)
print(f"train loss {hist.initial_train_loss:.3f} -> {hist.train_loss[-1]:.3f} "
      f"over {hist.completed_epochs} epochs (best val at {hist.best_epoch})")

rec = evaluate(model, te)
maj = max(te.movements.mean(), 1 - te.movements.mean())
print(f"test: accuracy {rec.accuracy:.3f} (majority {maj:.3f}), "
      f"f1 {rec.f1:.3f}, mape {rec.mape:.4f}, rmse {rec.rmse:.4f}")

with tempfile.TemporaryDirectory() as d:
    path = os.path.join(d, "model.json")
    save_model(path, model, rbm, to_json_dict(cfg))
    again, _, extra = load_model(path)
    assert extra == to_json_dict(cfg)
    for a, b in zip(model.parameters(), again.parameters()):
        assert a.name == b.name and np.array_equal(a.value, b.value)
    w = te.get_window(0)
    p1, p2 = predict(model, w), predict(again, w)
    assert p1.return_hat == p2.return_hat
    assert np.array_equal(p1.movement_probs, p2.movement_probs)
    print("model file round-trip is value-exact")
print("ok")
