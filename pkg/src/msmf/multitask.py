"""Gated mixture of experts with per-task heads.

Two tasks share one fused representation: next-step return (regression)
and movement direction (binary classification).  K experts map the
flattened fused stack to d_h; each task blends them with a softmax gate.

With multi-granularity gates enabled, the gate also sees a task-specific
context vector: per modality a two-way softmax weighs the fine row
against the coarse row of the aligned stack, then a modality-level
softmax weighs the modalities against each other.  Turning the feature
off (``mg_gates=False``) drops the context and shares a single gate
between the tasks, so both receive the same mixing weights.

Heads get the gated mixture concatenated with every raw fine and coarse
summary, so information zeroed by the fusion mask can still reach the
output directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import (SCALE_MODES, EncoderParams, ModalityFeatures,
                      encode_modality, init_encoder)
from .errors import ConfigurationError, ContractError
from .fusion import (FUSION_MODES, AlignedStack, FusionOutput, FusionParams,
                     init_fusion, run_fusion)
from .numcore import (Rng, Tensor, Variable, affine, concat, matmul, narrow,
                      param, relu, reshape, softmax)

TASKS = ("return", "movement")
_HEAD_ARITY = {"return": 1, "movement": 2}


@dataclass
class ModelConfig:
    """Architecture-level knobs; field names double as config-file keys."""

    d_e: int = 16
    d_a: int = 16
    d_h: int = 32
    experts: int = 4
    w_f: int = 3
    w_c: int = 8
    rho: float = 0.5
    fusion_mode: str = "msa_bl"
    mg_gates: bool = True
    scale_modes: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        for name in ("d_e", "d_a", "d_h", "experts", "w_f", "w_c"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"model.{name} must be >= 1")
        if self.w_f % 2 == 0:
            raise ConfigurationError("model.w_f must be odd")
        if self.w_c < 2:
            raise ConfigurationError("model.w_c must be >= 2")
        if not 0.0 < self.rho <= 1.0:
            raise ConfigurationError("model.rho must be in (0, 1]")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigurationError(
                f"model.fusion_mode must be one of {FUSION_MODES}")
        for m, mode in self.scale_modes.items():
            if mode not in SCALE_MODES:
                raise ConfigurationError(
                    f"model.scale_modes[{m!r}] must be one of {SCALE_MODES}")


@dataclass
class ExpertParams:
    """K two-layer maps [C*d_a] -> [d_h], identically shaped."""

    w1: list[Variable]
    b1: list[Variable]
    w2: list[Variable]
    b2: list[Variable]

    @property
    def n_experts(self) -> int:
        return len(self.w1)

    def variables(self) -> list[Variable]:
        out = []
        for i in range(self.n_experts):
            out += [self.w1[i], self.b1[i], self.w2[i], self.b2[i]]
        return out


@dataclass
class GateParams:
    """Expert gates per task, plus the granularity/modality gates.

    With ``mg_gates`` the expert gate input is [C*d_a + d_a] (fused stack
    plus context); without, both tasks share one [C*d_a] -> K gate stored
    under the key "shared" and the granularity maps are absent.
    """

    mg_gates: bool
    expert_w: dict[str, Variable]
    expert_b: dict[str, Variable]
    gran_w: dict[tuple[str, str], Variable]
    gran_b: dict[tuple[str, str], Variable]
    modal_w: dict[str, Variable]
    modal_b: dict[str, Variable]

    def variables(self) -> list[Variable]:
        out = []
        for key in sorted(self.expert_w):
            out += [self.expert_w[key], self.expert_b[key]]
        for key in sorted(self.gran_w):
            out += [self.gran_w[key], self.gran_b[key]]
        for key in sorted(self.modal_w):
            out += [self.modal_w[key], self.modal_b[key]]
        return out


@dataclass
class HeadParams:
    """Per-task linear heads over [d_h + 2*M*d_e]."""

    w: dict[str, Variable]
    b: dict[str, Variable]

    def variables(self) -> list[Variable]:
        out = []
        for t in TASKS:
            out += [self.w[t], self.b[t]]
        return out


@dataclass
class TaskPrediction:
    """Detached joint prediction for one window."""

    return_hat: float
    movement_probs: Tensor  # [2], sums to 1


@dataclass
class ForwardOutput:
    """Graph nodes for one window, kept live for loss assembly."""

    return_hat: Variable            # [1]
    movement_probs: Variable        # [2]
    fusion: FusionOutput
    features: dict[str, ModalityFeatures]
    gates: dict[str, Variable]      # task -> [K]


@dataclass
class MsmfModel:
    config: ModelConfig
    modalities: tuple[str, ...]
    modality_dims: dict[str, int]
    encoders: dict[str, EncoderParams]
    fusion: FusionParams
    experts: ExpertParams
    gates: GateParams
    heads: HeadParams

    def parameters(self) -> list[Variable]:
        """All learnable tensors in a fixed, documented order."""
        out: list[Variable] = []
        for m in self.modalities:
            out += self.encoders[m].variables()
        out += self.fusion.variables()
        out += self.experts.variables()
        out += self.gates.variables()
        out += self.heads.variables()
        return out

    def parameter_count(self) -> int:
        return sum(v.value.size for v in self.parameters())


def init_model(config: ModelConfig, modality_dims: dict[str, int],
               rng: Rng) -> MsmfModel:
    config.validate()
    modalities = tuple(modality_dims)
    if not modalities:
        raise ConfigurationError("need at least one modality")
    m_count = len(modalities)
    c = 2 * m_count
    flat_dim = c * config.d_a

    encoders = {
        m: init_encoder(modality_dims[m], config.d_e, config.w_f, config.w_c,
                        rng.derive(f"enc.{m}"), name=f"enc.{m}")
        for m in modalities
    }
    fusion = init_fusion(modalities, config.d_e, config.d_a, config.rho,
                         config.fusion_mode, rng.derive("fusion"))

    erng = rng.derive("experts")
    w1, b1, w2, b2 = [], [], [], []
    for i in range(config.experts):
        w1.append(param(erng.normal((flat_dim, config.d_h),
                                    scale=1.0 / np.sqrt(flat_dim)),
                        name=f"expert.{i}.w1"))
        b1.append(param(np.zeros(config.d_h), name=f"expert.{i}.b1"))
        w2.append(param(erng.normal((config.d_h, config.d_h),
                                    scale=1.0 / np.sqrt(config.d_h)),
                        name=f"expert.{i}.w2"))
        b2.append(param(np.zeros(config.d_h), name=f"expert.{i}.b2"))
    experts = ExpertParams(w1=w1, b1=b1, w2=w2, b2=b2)

    grng = rng.derive("gates")
    expert_w: dict[str, Variable] = {}
    expert_b: dict[str, Variable] = {}
    gran_w: dict[tuple[str, str], Variable] = {}
    gran_b: dict[tuple[str, str], Variable] = {}
    modal_w: dict[str, Variable] = {}
    modal_b: dict[str, Variable] = {}
    if config.mg_gates:
        gate_in = flat_dim + config.d_a
        for t in TASKS:
            expert_w[t] = param(grng.normal((gate_in, config.experts),
                                            scale=1.0 / np.sqrt(gate_in)),
                                name=f"gate.{t}.expert_w")
            expert_b[t] = param(np.zeros(config.experts),
                                name=f"gate.{t}.expert_b")
            for m in modalities:
                gran_w[(t, m)] = param(
                    grng.normal((2 * config.d_e, 2),
                                scale=1.0 / np.sqrt(2 * config.d_e)),
                    name=f"gate.{t}.gran_w.{m}")
                gran_b[(t, m)] = param(np.zeros(2),
                                       name=f"gate.{t}.gran_b.{m}")
            modal_w[t] = param(
                grng.normal((m_count * config.d_a, m_count),
                            scale=1.0 / np.sqrt(m_count * config.d_a)),
                name=f"gate.{t}.modal_w")
            modal_b[t] = param(np.zeros(m_count), name=f"gate.{t}.modal_b")
    else:
        expert_w["shared"] = param(
            grng.normal((flat_dim, config.experts),
                        scale=1.0 / np.sqrt(flat_dim)),
            name="gate.shared.expert_w")
        expert_b["shared"] = param(np.zeros(config.experts),
                                   name="gate.shared.expert_b")
    gates = GateParams(mg_gates=config.mg_gates, expert_w=expert_w,
                       expert_b=expert_b, gran_w=gran_w, gran_b=gran_b,
                       modal_w=modal_w, modal_b=modal_b)

    hrng = rng.derive("heads")
    head_in = config.d_h + 2 * m_count * config.d_e
    hw, hb = {}, {}
    for t in TASKS:
        arity = _HEAD_ARITY[t]
        hw[t] = param(hrng.normal((head_in, arity),
                                  scale=1.0 / np.sqrt(head_in)),
                      name=f"head.{t}.w")
        hb[t] = param(np.zeros(arity), name=f"head.{t}.b")
    heads = HeadParams(w=hw, b=hb)

    return MsmfModel(config=config, modalities=modalities,
                     modality_dims=dict(modality_dims), encoders=encoders,
                     fusion=fusion, experts=experts, gates=gates, heads=heads)


def modality_pair_rows(aligned: AlignedStack) -> list[Variable]:
    """The [2, d_a] (fine, coarse) block of each modality, in order."""
    return [narrow(aligned.slots, 2 * i, 2 * i + 2, axis=0)
            for i in range(len(aligned.order) // 2)]


def multi_granularity_gate(features: dict[str, ModalityFeatures],
                           aligned: AlignedStack, task: str,
                           gates: GateParams,
                           pair_rows: list[Variable] | None = None) -> Variable:
    """Blend aligned rows into one context vector for the task's gate.

    Per modality: beta = softmax over (fine, coarse) from the combined
    summary; the convex mix of the two aligned rows is that modality's
    representative.  A second softmax weighs the representatives, and the
    context is their convex combination.  ``pair_rows`` lets a caller
    running several tasks slice the stack once and share the nodes.
    """
    if task not in TASKS:
        raise ContractError(f"unknown task {task!r}")
    if pair_rows is None:
        pair_rows = modality_pair_rows(aligned)
    d_a = aligned.d_a
    modalities = tuple(m for m, s in aligned.order if s == "fine")
    reps = []
    for m, rows in zip(modalities, pair_rows):
        beta = softmax(affine(features[m].combined,
                              gates.gran_w[(task, m)], gates.gran_b[(task, m)]))
        reps.append(matmul(beta, rows))
    gamma = softmax(affine(concat(reps), gates.modal_w[task],
                           gates.modal_b[task]))
    rep_stack = concat([reshape(r, (1, d_a)) for r in reps], axis=0)
    return matmul(gamma, rep_stack)


def task_gate(x_all_flat: Variable, context: Variable | None, task: str,
              gates: GateParams) -> Variable:
    """Softmax expert weights for one task; shared across tasks when the
    granularity gates are off (context must then be None)."""
    if gates.mg_gates:
        if context is None:
            raise ContractError("context required when mg_gates is on")
        gate_in = concat([x_all_flat, context])
        key = task
    else:
        if context is not None:
            raise ContractError("no context expected when mg_gates is off")
        gate_in = x_all_flat
        key = "shared"
    return softmax(affine(gate_in, gates.expert_w[key], gates.expert_b[key]))


def expert_outputs(x_all_flat: Variable, experts: ExpertParams) -> Variable:
    """All experts stacked to [K, d_h]."""
    outs = []
    for i in range(experts.n_experts):
        h = relu(affine(x_all_flat, experts.w1[i], experts.b1[i]))
        o = affine(h, experts.w2[i], experts.b2[i])
        outs.append(reshape(o, (1, o.value.shape[0])))
    return concat(outs, axis=0)


def mix_experts(x_all_flat: Variable, gate: Variable,
                experts: ExpertParams) -> Variable:
    """Convex combination of expert outputs: gate [K] @ outputs [K, d_h]."""
    return matmul(gate, expert_outputs(x_all_flat, experts))


def ttpl_predict(h_task: Variable, features: dict[str, ModalityFeatures],
                 task: str, heads: HeadParams,
                 modalities: tuple[str, ...]) -> Variable:
    """Linear head over the mixture plus all raw fine/coarse summaries.

    Returns the raw [1] output for the regression task, softmax [2] for
    the classification task.
    """
    if task not in TASKS:
        raise ContractError(f"unknown task {task!r}")
    skips = ([features[m].fine for m in modalities]
             + [features[m].coarse for m in modalities])
    head_in = concat([h_task] + skips)
    out = affine(head_in, heads.w[task], heads.b[task])
    if task == "movement":
        return softmax(out)
    return out


def forward(model: MsmfModel, window: dict[str, Tensor]) -> ForwardOutput:
    """Full pass over one window dict {modality: [T, d_m]}."""
    cfg = model.config
    features = {}
    for m in model.modalities:
        if m not in window:
            raise ContractError(f"window is missing modality {m!r}")
        mode = cfg.scale_modes.get(m, "multi")
        features[m] = encode_modality(window[m], model.encoders[m], mode=mode)

    fo = run_fusion(features, model.fusion)
    c, d_a = fo.fused.value.shape
    x_flat = reshape(fo.fused, (c * d_a,))
    ex_stack = expert_outputs(x_flat, model.experts)
    pair_rows = modality_pair_rows(fo.stack) if cfg.mg_gates else None

    outs: dict[str, Variable] = {}
    gate_vecs: dict[str, Variable] = {}
    shared_gate = None
    for t in TASKS:
        if cfg.mg_gates:
            ctx = multi_granularity_gate(features, fo.stack, t, model.gates,
                                         pair_rows)
            g = task_gate(x_flat, ctx, t, model.gates)
        else:
            if shared_gate is None:
                shared_gate = task_gate(x_flat, None, t, model.gates)
            g = shared_gate
        gate_vecs[t] = g
        h = matmul(g, ex_stack)
        outs[t] = ttpl_predict(h, features, t, model.heads, model.modalities)

    return ForwardOutput(return_hat=outs["return"],
                         movement_probs=outs["movement"],
                         fusion=fo, features=features, gates=gate_vecs)


def predict(model: MsmfModel, window: dict[str, Tensor]) -> TaskPrediction:
    out = forward(model, window)
    return TaskPrediction(return_hat=float(out.return_hat.value[0]),
                          movement_probs=out.movement_probs.value.copy())
