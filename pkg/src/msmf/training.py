"""Joint optimization of both task heads plus pipeline plumbing.

The objective is a weighted sum: alpha_return * MSE + alpha_movement *
cross-entropy + lambda * sum of squared parameters + eta * mean entropy
of the blank-selection scores.  Zero-weight terms are skipped outright,
which is how the single-task ablations are run.

Batches walk the training windows in chronological order; nothing is
shuffled, so a (seed, data, config) triple fixes the whole parameter
trajectory bit for bit.  Early stopping tracks validation loss and the
returned model always carries the best-validation parameters.

Also here: the staged completion step (RBM fitted on fully-present rows
of the training split only, then applied to every split) and the model
file writer/loader.  Model files are JSON with every tensor flattened to
full-precision decimal floats, so a round trip is value-exact.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .completion import (CompletionConfig, RbmParams, complete_dataset,
                         fit_completion)
from .data import MultiModalDataset, split_dataset
from .errors import (ConfigurationError, ContractError, DataError,
                     NumericError, ParseError, TrainingError)
from .fusion import mask_entropy
from .metrics import MetricsRecord, compute_metrics
from .multitask import (TASKS, ForwardOutput, ModelConfig, MsmfModel, forward,
                        init_model)
from .numcore import (Rng, Tensor, Variable, add, backward, concat, constant,
                      log, mean, narrow, scale, square, sub, reduce_sum,
                      zero_grad)

MODEL_FORMAT_VERSION = 1
TRAIN_FRAC = 0.7
VAL_FRAC = 0.15


@dataclass
class LossConfig:
    alpha: dict[str, float] = field(
        default_factory=lambda: {"return": 1.0, "movement": 1.0})
    lambda_: float = 1e-4
    eta: float = 1e-3

    def validate(self) -> None:
        if set(self.alpha) != set(TASKS):
            raise ConfigurationError(
                f"loss.alpha must have exactly the keys {TASKS}")
        if any(a < 0 for a in self.alpha.values()):
            raise ConfigurationError("loss.alpha values must be >= 0")
        if all(a == 0 for a in self.alpha.values()):
            raise ConfigurationError("loss.alpha values cannot all be zero")
        if self.lambda_ < 0:
            raise ConfigurationError("loss.lambda must be >= 0")
        if self.eta < 0:
            raise ConfigurationError("loss.eta must be >= 0")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    seed: int = 0
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigurationError(
                "train.epochs, batch_size and patience must be >= 1")
        if self.learning_rate < 0:
            raise ConfigurationError("train.learning_rate must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError("train momentum decays must be in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigurationError("train.epsilon must be > 0")


@dataclass
class TrainHistory:
    initial_train_loss: float
    train_loss: list[float]
    val_loss: list[float]
    val_metrics: list[MetricsRecord]
    best_epoch: int

    @property
    def completed_epochs(self) -> int:
        return len(self.train_loss)


def _check_movement_labels(movements) -> np.ndarray:
    labs = np.asarray(movements)
    if labs.size and not np.isin(labs, (0, 1)).all():
        raise DataError("movement labels must be 0 or 1")
    return labs.astype(np.int64)


def multi_task_loss(outputs: list[ForwardOutput], returns, movements,
                    cfg: LossConfig, params: list[Variable]) -> Variable:
    """Scalar graph node for one batch.

    ``params`` is the set the L2 term ranges over; completion parameters
    are trained separately and never appear here.
    """
    cfg.validate()
    if not outputs:
        raise ContractError("multi_task_loss: empty batch")
    returns = np.asarray(returns, dtype=np.float64)
    movements = _check_movement_labels(movements)
    if returns.shape[0] != len(outputs) or movements.shape[0] != len(outputs):
        raise ContractError("label arrays do not match the batch size")

    total: Variable | None = None

    def _accumulate(term: Variable) -> None:
        nonlocal total
        total = term if total is None else add(total, term)

    if cfg.alpha["return"] > 0:
        preds = concat([o.return_hat for o in outputs])
        mse = mean(square(sub(preds, constant(returns))))
        _accumulate(scale(mse, cfg.alpha["return"]))
    if cfg.alpha["movement"] > 0:
        picks = concat([narrow(o.movement_probs, int(y), int(y) + 1)
                        for o, y in zip(outputs, movements)])
        ce = scale(mean(log(picks)), -1.0)
        _accumulate(scale(ce, cfg.alpha["movement"]))
    if cfg.lambda_ > 0 and params:
        reg: Variable | None = None
        for p in params:
            term = reduce_sum(square(p))
            reg = term if reg is None else add(reg, term)
        _accumulate(scale(reg, cfg.lambda_))
    if cfg.eta > 0:
        ents = [mask_entropy(o.fusion.mask) for o in outputs
                if o.fusion.mask is not None]
        if ents:
            ent: Variable | None = None
            for e in ents:
                ent = e if ent is None else add(ent, e)
            _accumulate(scale(ent, cfg.eta / len(outputs)))
    if total is None:
        raise ContractError("loss has no active terms")
    return total


@dataclass
class AdamState:
    step: int
    m: list[Tensor]
    v: list[Tensor]


def init_adam(params: list[Variable]) -> AdamState:
    return AdamState(step=0,
                     m=[np.zeros_like(p.value) for p in params],
                     v=[np.zeros_like(p.value) for p in params])


def optimizer_step(params: list[Variable], grads: list[Tensor],
                   state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected adaptive-moment update, in place."""
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise NumericError(
                f"non-finite gradient for parameter {p.name or i}")
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g
        m_hat = state.m[i] / (1.0 - cfg.beta1 ** t)
        v_hat = state.v[i] / (1.0 - cfg.beta2 ** t)
        p.value -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def _loss_values_pass(model: MsmfModel, ds: MultiModalDataset,
                      cfg: LossConfig):
    """One forward sweep collecting loss pieces and detached predictions.

    Returns (loss_value, return_hats, movement_probs).  The loss uses the
    same formula as ``multi_task_loss`` but on plain floats, so no graph
    survives the sweep.
    """
    movements = _check_movement_labels(ds.movements)
    n = ds.n_windows
    ret_hat = np.zeros(n)
    probs = np.zeros((n, 2))
    ent_sum = 0.0
    for i in range(n):
        out = forward(model, ds.get_window(i))
        ret_hat[i] = out.return_hat.value[0]
        probs[i] = out.movement_probs.value
        if out.fusion.mask is not None:
            ent_sum += float(mask_entropy(out.fusion.mask).value)

    value = 0.0
    if cfg.alpha["return"] > 0:
        value += cfg.alpha["return"] * float(np.mean((ret_hat - ds.returns) ** 2))
    if cfg.alpha["movement"] > 0:
        picked = probs[np.arange(n), movements]
        # a zero probability is a divergence signal, not a bug: let the
        # validation loss go to inf and the early stopper ignore the epoch
        with np.errstate(divide="ignore"):
            value += cfg.alpha["movement"] * float(-np.mean(np.log(picked)))
    if cfg.lambda_ > 0:
        value += cfg.lambda_ * sum(float(np.sum(p.value ** 2))
                                   for p in model.parameters())
    if cfg.eta > 0:
        value += cfg.eta * ent_sum / n
    return value, ret_hat, probs


def evaluate(model: MsmfModel, ds: MultiModalDataset) -> MetricsRecord:
    """Forward every window and score both tasks."""
    if ds.n_windows == 0:
        raise DataError("evaluate: empty dataset")
    n = ds.n_windows
    ret_hat = np.zeros(n)
    probs = np.zeros((n, 2))
    for i in range(n):
        out = forward(model, ds.get_window(i))
        ret_hat[i] = out.return_hat.value[0]
        probs[i] = out.movement_probs.value
    return compute_metrics(ds.returns, ret_hat, ds.movements, probs)


def train(model: MsmfModel, train_ds: MultiModalDataset,
          val_ds: MultiModalDataset, loss_cfg: LossConfig,
          train_cfg: TrainConfig) -> tuple[MsmfModel, TrainHistory]:
    """Chronological mini-batch training with best-validation restore."""
    loss_cfg.validate()
    train_cfg.validate()
    if train_ds.n_windows == 0 or val_ds.n_windows == 0:
        raise DataError("train: empty split")
    if not train_ds.all_present() or not val_ds.all_present():
        raise DataError("train: splits still have absent rows; complete first")

    params = model.parameters()
    state = init_adam(params)
    initial_loss, _, _ = _loss_values_pass(model, train_ds, loss_cfg)

    movements = _check_movement_labels(train_ds.movements)
    n = train_ds.n_windows
    bs = train_cfg.batch_size
    history_train: list[float] = []
    history_val: list[float] = []
    history_metrics: list[MetricsRecord] = []
    best_val = np.inf
    best_values: list[Tensor] | None = None
    best_epoch = -1
    stale = 0

    for epoch in range(train_cfg.epochs):
        loss_sum = 0.0
        for b, start in enumerate(range(0, n, bs)):
            idx = range(start, min(start + bs, n))
            try:
                outs = [forward(model, train_ds.get_window(i)) for i in idx]
                loss = multi_task_loss(outs, train_ds.returns[idx.start:idx.stop],
                                       movements[idx.start:idx.stop],
                                       loss_cfg, params)
                value = float(loss.value)
                if not np.isfinite(value):
                    raise NumericError("loss is not finite")
                zero_grad(params)
                backward(loss)
                grads = [p.grad if p.grad is not None
                         else np.zeros_like(p.value) for p in params]
                optimizer_step(params, grads, state, train_cfg)
            except NumericError as err:
                raise TrainingError(
                    f"diverged at epoch {epoch} batch {b}: {err}") from err
            loss_sum += value * len(idx)
        history_train.append(loss_sum / n)

        val_loss, ret_hat, probs = _loss_values_pass(model, val_ds, loss_cfg)
        history_val.append(val_loss)
        history_metrics.append(compute_metrics(val_ds.returns, ret_hat,
                                               val_ds.movements, probs))
        if val_loss < best_val:
            best_val = val_loss
            best_values = [p.value.copy() for p in params]
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                break

    if best_values is not None:
        for p, v in zip(params, best_values):
            p.value = v.copy()

    history = TrainHistory(initial_train_loss=initial_loss,
                           train_loss=history_train, val_loss=history_val,
                           val_metrics=history_metrics, best_epoch=best_epoch)
    return model, history


def prepare_splits(dataset: MultiModalDataset, completion_cfg: CompletionConfig,
                   train_frac: float = TRAIN_FRAC, val_frac: float = VAL_FRAC):
    """Chronological split, then fill absent rows via the completion model.

    The RBM only ever sees fully-present rows of the training split; the
    same fitted model then completes all three splits.  Returns
    (train, val, test, rbm-or-None).
    """
    tr, va, te = split_dataset(dataset, train_frac, val_frac)
    if tr.all_present() and va.all_present() and te.all_present():
        return tr, va, te, None
    rbm = fit_completion(tr, completion_cfg)
    crng = Rng(completion_cfg.seed)
    tr = complete_dataset(tr, rbm, completion_cfg, crng.derive("train"))
    va = complete_dataset(va, rbm, completion_cfg, crng.derive("val"))
    te = complete_dataset(te, rbm, completion_cfg, crng.derive("test"))
    return tr, va, te, rbm


@dataclass
class PipelineResult:
    model: MsmfModel
    rbm: RbmParams | None
    history: TrainHistory
    test_metrics: MetricsRecord


def run_pipeline(model_cfg: ModelConfig, loss_cfg: LossConfig,
                 train_cfg: TrainConfig, completion_cfg: CompletionConfig,
                 dataset: MultiModalDataset) -> PipelineResult:
    """Split, complete, train, evaluate on the held-out test span."""
    tr, va, te, rbm = prepare_splits(dataset, completion_cfg)
    model = init_model(model_cfg, tr.modality_dims(),
                       Rng(train_cfg.seed).derive("init"))
    model, history = train(model, tr, va, loss_cfg, train_cfg)
    metrics = evaluate(model, te)
    return PipelineResult(model=model, rbm=rbm, history=history,
                          test_metrics=metrics)


def save_model(path: str, model: MsmfModel, rbm: RbmParams | None,
               config_echo: dict) -> None:
    """Write the model as JSON with full-precision decimal tensors."""
    params = model.parameters()
    names = [p.name for p in params]
    if len(set(names)) != len(names) or None in names:
        raise ContractError("model parameters must carry unique names")
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": config_echo,
        "modalities": list(model.modalities),
        "modality_dims": {m: int(d) for m, d in model.modality_dims.items()},
        "parameters": [
            {"name": p.name,
             "shape": list(p.value.shape),
             "data": [float(x) for x in p.value.ravel()]}
            for p in params
        ],
        "completion": rbm.to_json_dict() if rbm is not None else None,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path: str):
    """Rebuild (model, rbm, config_dict) from a model file, value-exact."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as err:
        raise DataError(
            f"cannot read model file {os.path.basename(path)}: "
            f"{err.strerror or err}") from err
    except json.JSONDecodeError as err:
        raise ParseError(f"{os.path.basename(path)}: invalid JSON: {err}") from err
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise DataError(
            f"unsupported model file format: {doc.get('format_version')!r}")
    try:
        model_cfg = ModelConfig(**doc["config"]["model"])
        dims = {m: int(doc["modality_dims"][m]) for m in doc["modalities"]}
        entries = doc["parameters"]
    except (KeyError, TypeError) as err:
        raise DataError(f"model file missing field: {err}") from err

    model = init_model(model_cfg, dims, Rng(0))
    by_name = {p.name: p for p in model.parameters()}
    seen = set()
    for entry in entries:
        name = entry["name"]
        if name not in by_name:
            raise DataError(f"model file names unknown parameter {name!r}")
        p = by_name[name]
        value = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if value.shape != p.value.shape:
            raise DataError(
                f"parameter {name!r} has shape {value.shape}, "
                f"expected {p.value.shape}")
        p.value = value
        seen.add(name)
    if seen != set(by_name):
        missing = sorted(set(by_name) - seen)
        raise DataError(f"model file lacks parameters: {missing[:3]}...")

    rbm = None
    if doc.get("completion") is not None:
        rbm = RbmParams.from_json_dict(doc["completion"])
    return model, rbm, doc["config"]


def save_history_csv(path: str, history: TrainHistory) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "val_accuracy",
                    "val_f1", "val_mape", "val_rmse"])
        for e in range(history.completed_epochs):
            m = history.val_metrics[e]
            w.writerow([e + 1, repr(history.train_loss[e]),
                        repr(history.val_loss[e]), repr(m.accuracy),
                        repr(m.f1), repr(m.mape), repr(m.rmse)])
