"""Gaussian-Bernoulli RBM for filling absent modality blocks.

The model sees one timestamp at a time: the visible vector is the
concatenation of every modality's feature row, standardized per dimension.
Visible units are Gaussian with unit variance, hidden units are Bernoulli:

    E(v, h) = 0.5 * ||v - b||^2 - c.h - v.W.h

Training is contrastive divergence on fully-present rows only.  Completion
clamps the observed coordinates and runs a Gibbs chain over the missing
ones, averaging the conditional visible means over the last few sweeps so
the estimate is a smoothed conditional expectation rather than one noisy
sample.

Two deliberately separate code paths exist for checking: ``free_energy``
uses the analytic softplus form, while ``brute_force_distribution`` sums
over all 2^H hidden states explicitly.  They must agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError, DataError, ResourceError
from .numcore import Rng, Tensor

_SD_FLOOR = 1e-8
_MAX_ENUM_HIDDEN = 20
_MAX_GRID_DIMS = 2


@dataclass
class CompletionConfig:
    """Knobs for RBM fitting and Gibbs completion."""

    hidden_units: int = 32
    cd_steps: int = 1
    epochs: int = 30
    learning_rate: float = 0.01
    batch_size: int = 64
    gibbs_steps: int = 20
    n_samples: int = 10
    seed: int = 0

    def validate(self) -> None:
        for name in ("hidden_units", "cd_steps", "epochs", "batch_size",
                     "gibbs_steps", "n_samples"):
            if int(getattr(self, name)) <= 0:
                raise ConfigurationError(f"completion.{name} must be positive")
        if self.learning_rate < 0.0:
            raise ConfigurationError("completion.learning_rate must be >= 0")
        if self.n_samples > self.gibbs_steps:
            raise ConfigurationError(
                "completion.n_samples cannot exceed gibbs_steps")


@dataclass
class RbmParams:
    """Learned RBM parameters plus the standardization applied to inputs.

    ``weights`` is [D, H]; ``visible_bias`` [D]; ``hidden_bias`` [H].
    ``mean`` and ``scale`` map raw rows into the standardized space the
    energy is defined on.  ``layout`` records which visible slice belongs
    to which modality, as ``{modality: (offset, length)}``.
    """

    weights: Tensor
    visible_bias: Tensor
    hidden_bias: Tensor
    mean: Tensor
    scale: Tensor
    layout: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def n_visible(self) -> int:
        return self.weights.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.weights.shape[1]

    def to_json_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "visible_bias": self.visible_bias.tolist(),
            "hidden_bias": self.hidden_bias.tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "layout": {k: list(v) for k, v in self.layout.items()},
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RbmParams":
        return cls(
            weights=np.asarray(d["weights"], dtype=np.float64),
            visible_bias=np.asarray(d["visible_bias"], dtype=np.float64),
            hidden_bias=np.asarray(d["hidden_bias"], dtype=np.float64),
            mean=np.asarray(d["mean"], dtype=np.float64),
            scale=np.asarray(d["scale"], dtype=np.float64),
            layout={k: (int(v[0]), int(v[1])) for k, v in d["layout"].items()},
        )


def _sigmoid(x: Tensor) -> Tensor:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_binary(h: Tensor) -> None:
    if not np.all((h == 0.0) | (h == 1.0)):
        raise ContractError("hidden state must be binary 0/1")


def rbm_energy(v: Tensor, h: Tensor, params: RbmParams) -> float:
    """Joint energy of one standardized visible vector and one hidden vector."""
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    _check_binary(h)
    quad = 0.5 * float(np.sum((v - params.visible_bias) ** 2))
    return quad - float(params.hidden_bias @ h) - float(v @ params.weights @ h)


def free_energy(v: Tensor, params: RbmParams) -> Tensor:
    """-log sum_h exp(-E(v, h)), in closed form via softplus.

    Accepts a single row [D] or a batch [N, D]; returns a scalar or [N].
    """
    v = np.asarray(v, dtype=np.float64)
    pre = params.hidden_bias + v @ params.weights
    quad = 0.5 * np.sum((v - params.visible_bias) ** 2, axis=-1)
    out = quad - np.sum(np.logaddexp(0.0, pre), axis=-1)
    return float(out) if out.ndim == 0 else out


def hidden_conditional(v: Tensor, params: RbmParams) -> Tensor:
    """p(h_j = 1 | v) for standardized v; batched over leading axes."""
    v = np.asarray(v, dtype=np.float64)
    return _sigmoid(params.hidden_bias + v @ params.weights)


def visible_conditional(h: Tensor, params: RbmParams) -> Tensor:
    """E[v | h] = b + W h; batched over leading axes."""
    h = np.asarray(h, dtype=np.float64)
    return params.visible_bias + h @ params.weights.T


def standardize(rows: Tensor, params: RbmParams) -> Tensor:
    return (np.asarray(rows, dtype=np.float64) - params.mean) / params.scale


def destandardize(rows: Tensor, params: RbmParams) -> Tensor:
    return np.asarray(rows, dtype=np.float64) * params.scale + params.mean


def train_cd(rows: Tensor, config: CompletionConfig,
             layout: dict[str, tuple[int, int]] | None = None) -> RbmParams:
    """Fit by CD-k on fully-present rows.

    Rows are standardized internally (per-dimension mean and sd, with an sd
    floor so constant columns do not blow up).  Minibatches are taken in
    chronological order; hidden states are sampled, visible reconstructions
    use the conditional mean.  ``learning_rate == 0`` leaves the freshly
    initialized parameters untouched, which is occasionally useful when a
    fixed random model is wanted.
    """
    config.validate()
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise DataError("need a non-empty [N, D] array of fully-present rows")
    n, d = rows.shape
    mu = rows.mean(axis=0)
    sd = rows.std(axis=0)
    sd = np.where(sd < _SD_FLOOR, 1.0, sd)
    data = (rows - mu) / sd

    rng = Rng(config.seed)
    w = 0.01 * rng.normal((d, config.hidden_units))
    b = np.zeros(d)
    c = np.zeros(config.hidden_units)
    params = RbmParams(weights=w, visible_bias=b, hidden_bias=c,
                       mean=mu, scale=sd, layout=dict(layout or {}))

    lr = config.learning_rate
    for _ in range(config.epochs):
        for start in range(0, n, config.batch_size):
            v0 = data[start:start + config.batch_size]
            batch = v0.shape[0]
            ph0 = hidden_conditional(v0, params)
            h = rng.bernoulli(ph0)
            vk = v0
            for _ in range(config.cd_steps):
                vk = visible_conditional(h, params)
                phk = hidden_conditional(vk, params)
                h = rng.bernoulli(phk)
            params.weights += lr * (v0.T @ ph0 - vk.T @ phk) / batch
            params.visible_bias += lr * (v0 - vk).mean(axis=0)
            params.hidden_bias += lr * (ph0 - phk).mean(axis=0)
    return params


def reconstruction_mse(rows: Tensor, params: RbmParams) -> float:
    """Mean-field one-step reconstruction error in standardized space."""
    v = standardize(rows, params)
    vhat = visible_conditional(hidden_conditional(v, params), params)
    return float(np.mean((v - vhat) ** 2))


def complete_missing(row: Tensor, missing: Tensor, params: RbmParams,
                     config: CompletionConfig, rng: Rng | None = None) -> Tensor:
    """Fill the missing coordinates of one raw row by clamped Gibbs sampling.

    Observed coordinates are copied through bit-exactly.  The chain clamps
    them in standardized space, resamples the missing block each sweep, and
    returns the average of the conditional visible means over the final
    ``n_samples`` sweeps, mapped back to raw coordinates.

    With an all-zero weight matrix the conditional mean is the visible bias
    on every sweep, so completion reduces exactly to bias imputation; with
    a zero bias as well, that is the training mean.
    """
    row = np.asarray(row, dtype=np.float64)
    missing = np.asarray(missing, dtype=bool)
    if row.shape != missing.shape or row.ndim != 1:
        raise ContractError("row and missing mask must both be [D]")
    if not missing.any():
        return row.copy()
    if missing.all():
        raise ContractError("cannot complete a row with no observed coordinates")
    if rng is None:
        rng = Rng(config.seed)

    v = standardize(row, params)
    chain = v.copy()
    chain[missing] = params.visible_bias[missing]
    observed = ~missing
    tail_start = config.gibbs_steps - config.n_samples
    acc = np.zeros(row.shape[0])
    for sweep in range(config.gibbs_steps):
        ph = hidden_conditional(chain, params)
        h = rng.bernoulli(ph)
        vmean = visible_conditional(h, params)
        if sweep >= tail_start:
            acc[missing] += vmean[missing]
        chain = vmean + rng.normal(row.shape)
        chain[observed] = v[observed]

    filled = v.copy()
    filled[missing] = acc[missing] / config.n_samples
    out = destandardize(filled, params)
    out[observed] = row[observed]
    return out


def fit_completion(dataset, config: CompletionConfig) -> RbmParams:
    """Train on the fully-present timestamps of a dataset.

    The visible layout follows the dataset's modality order, so completed
    rows can be scattered back into the right feature blocks later.
    """
    from .data import fully_present_rows

    rows, layout, _ = fully_present_rows(dataset)
    if rows.shape[0] == 0:
        raise DataError("no fully-present rows to train the completion model on")
    return train_cd(rows, config, layout=layout)


def complete_dataset(dataset, params: RbmParams, config: CompletionConfig,
                     rng: Rng | None = None):
    """Return a copy of ``dataset`` with every absent modality row filled in.

    Missingness is block-structured: a modality is either present or absent
    at a timestamp.  Rows where everything is absent fall back to the
    model's unconditional visible mean (the de-standardized bias).  The
    returned dataset reports full presence; keep the original around if the
    coverage mask still matters.
    """
    from .data import ModalityStream, MultiModalDataset

    if rng is None:
        rng = Rng(config.seed)
    if not params.layout:
        raise ContractError("params.layout is empty; fit via fit_completion")
    n = dataset.n_samples
    d = params.n_visible

    filled = {m: s.features.copy() for m, s in dataset.streams.items()}
    bias_raw = destandardize(params.visible_bias, params)
    for t in range(n):
        absent = [m for m, s in dataset.streams.items() if not s.present[t]]
        if not absent:
            continue
        row = np.zeros(d)
        missing = np.zeros(d, dtype=bool)
        for m, s in dataset.streams.items():
            off, length = params.layout[m]
            row[off:off + length] = s.features[t]
            if not s.present[t]:
                missing[off:off + length] = True
        if missing.all():
            completed = bias_raw.copy()
        else:
            completed = complete_missing(row, missing, params, config, rng)
        for m in absent:
            off, length = params.layout[m]
            filled[m][t] = completed[off:off + length]

    streams = {m: ModalityStream(m, filled[m], np.ones(n, dtype=bool))
               for m in dataset.streams}
    return MultiModalDataset(streams=streams, window=dataset.window,
                             returns=dataset.returns.copy(),
                             movements=dataset.movements.copy())


def _enumerate_hidden(n_hidden: int) -> Tensor:
    if n_hidden > _MAX_ENUM_HIDDEN:
        raise ResourceError(
            f"refusing to enumerate 2^{n_hidden} hidden states")
    count = 1 << n_hidden
    states = np.zeros((count, n_hidden))
    for j in range(n_hidden):
        states[:, j] = (np.arange(count) >> j) & 1
    return states


def brute_force_distribution(params: RbmParams, axes: tuple) -> Tensor:
    """Exact marginal p(v) on a small grid, by explicit hidden enumeration.

    ``axes`` is one coordinate array per visible dimension (at most two).
    Every grid point's unnormalized mass is sum_h exp(-E(v, h)), computed
    by log-sum-exp over all 2^H hidden states; the returned table is
    normalized to sum to one.  This is the slow, obviously-correct path
    used to check the analytic free energy and the Gibbs completion.
    """
    if params.n_visible > _MAX_GRID_DIMS:
        raise ResourceError("grid enumeration supports at most 2 visible dims")
    if len(axes) != params.n_visible:
        raise ContractError("need one grid axis per visible dimension")
    grids = np.meshgrid(*[np.asarray(a, dtype=np.float64) for a in axes],
                        indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)

    states = _enumerate_hidden(params.n_hidden)
    # -E(v, h) for every (point, state) pair
    quad = 0.5 * np.sum((points - params.visible_bias) ** 2, axis=-1)
    neg_e = (points @ params.weights @ states.T
             + states @ params.hidden_bias - quad[:, None])
    m = neg_e.max()
    mass = np.exp(neg_e - m).sum(axis=-1)
    table = mass / mass.sum()
    return table.reshape(grids[0].shape)


def grid_conditional_mean(params: RbmParams, row: Tensor, missing: Tensor,
                          axis: Tensor) -> float:
    """Brute-force E[v_missing | v_observed] for a 2-dim model.

    ``row`` is raw and exactly one coordinate is missing; ``axis`` is a raw
    grid over that coordinate.  Works along the clamped line of the joint
    density, so it shares nothing with the Gibbs sampler.
    """
    row = np.asarray(row, dtype=np.float64)
    missing = np.asarray(missing, dtype=bool)
    if params.n_visible != 2 or missing.sum() != 1:
        raise ContractError("grid conditional mean needs D=2, one missing coord")
    axis = np.asarray(axis, dtype=np.float64)
    j = int(np.flatnonzero(missing)[0])

    points = np.tile(standardize(row, params), (axis.shape[0], 1))
    points[:, j] = (axis - params.mean[j]) / params.scale[j]
    states = _enumerate_hidden(params.n_hidden)
    quad = 0.5 * np.sum((points - params.visible_bias) ** 2, axis=-1)
    neg_e = (points @ params.weights @ states.T
             + states @ params.hidden_bias - quad[:, None])
    m = neg_e.max()
    mass = np.exp(neg_e - m).sum(axis=-1)
    return float((axis * mass).sum() / mass.sum())


def zero_weight_params(rows: Tensor, hidden_units: int,
                       layout: dict[str, tuple[int, int]] | None = None) -> RbmParams:
    """A weightless model whose completion is exactly mean imputation."""
    rows = np.asarray(rows, dtype=np.float64)
    mu = rows.mean(axis=0)
    sd = rows.std(axis=0)
    sd = np.where(sd < _SD_FLOOR, 1.0, sd)
    d = rows.shape[1]
    return RbmParams(weights=np.zeros((d, hidden_units)),
                     visible_bias=np.zeros(d),
                     hidden_bias=np.zeros(hidden_units),
                     mean=mu, scale=sd, layout=dict(layout or {}))
