"""The acceptance gate: one test per shipped guarantee, one verdict line
each. These re-run the oracle comparisons end to end at their stated
tolerances, so this file is slow; the per-module files cover the same
ground at unit granularity.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from msmf.bench import (REPORT_HEADERS, ReportRow, ReportTable,
                        default_bench_config, emit_report, run_suite)
from msmf.cli import main as cli_main
from msmf.completion import (CompletionConfig, RbmParams,
                             brute_force_distribution, complete_missing,
                             grid_conditional_mean, hidden_conditional,
                             rbm_energy, train_cd, zero_weight_params)
from msmf.config import default_config
from msmf.data import MODALITIES, SyntheticSpec, generate_synthetic
from msmf.fusion import (AlignedStack, blank_mask, fuse, init_fusion,
                         row_order)
from msmf.multitask import (ModelConfig, expert_outputs, forward, init_model,
                            mix_experts)
from msmf.numcore import (Rng, affine, backward, check_gradients, constant,
                          log, matmul, mean, mul, narrow, param, reduce_sum,
                          relu, reshape, scale, softmax, square, sub,
                          temporal_conv, temporal_pool, zero_grad)
from msmf.training import (evaluate, multi_task_loss, prepare_splits, train)

import dataclasses


def _verdict(n: int, ok: bool, detail: str) -> None:
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {n}: {detail}"


# ------------------------------------------------- 1: gradient correctness


def _primitive_sweep():
    """Max finite-difference error over one case per primitive, sampled
    away from ReLU kinks."""
    rng = Rng(20)
    worst = 0.0

    def run(fn, params):
        nonlocal worst
        worst = max(worst, check_gradients(fn, params))

    w = param(rng.normal((3, 4)))
    x = rng.normal((3, 4))
    x[np.abs(x) < 0.2] += 0.4  # keep products clear of the kink
    run(lambda ps: reduce_sum(relu(mul(ps[0], constant(x)))), [w])

    a, b = param(rng.normal((2, 3))), param(rng.normal((3, 4)))
    run(lambda ps: reduce_sum(matmul(ps[0], ps[1])), [a, b])

    xa, wa, ba = (param(rng.normal(3)), param(rng.normal((3, 2))),
                  param(rng.normal(2)))
    run(lambda ps: reduce_sum(square(affine(*ps))), [xa, wa, ba])

    xs = param(rng.normal(5))
    run(lambda ps: reduce_sum(square(softmax(ps[0]))), [xs])

    xl = param(np.abs(rng.normal(4)) + 0.5)
    run(lambda ps: reduce_sum(log(ps[0])), [xl])

    xc, kc, bc = (param(rng.normal((6, 2))), param(rng.normal((3, 2, 2))),
                  param(rng.normal(2)))
    run(lambda ps: reduce_sum(square(temporal_conv(*ps))), [xc, kc, bc])

    xp = param(rng.normal((7, 3)))
    run(lambda ps: reduce_sum(square(temporal_pool(ps[0], 3))), [xp])

    xm = param(rng.normal((4, 3)))
    run(lambda ps: square(mean(ps[0])), [xm])
    run(lambda ps: reduce_sum(square(mean(ps[0], axis=0))), [xm])

    u, v = param(rng.normal(3)), param(rng.normal(3))
    run(lambda ps: reduce_sum(mul(ps[0], sub(ps[0], ps[1]))), [u, v])
    run(lambda ps: reduce_sum(square(narrow(scale(ps[0], 1.7), 0, 2))), [u])
    run(lambda ps: reduce_sum(square(reshape(ps[0], (3, 1)))), [v])
    return worst


def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()

    spec = SyntheticSpec(n_samples=16, dims={m: 3 for m in MODALITIES},
                         window=8, local_period=3, global_period=8, seed=7)
    ds = generate_synthetic(spec)
    cfg = ModelConfig(d_e=4, d_a=4, d_h=4, experts=2, w_f=3, w_c=4)
    model = init_model(cfg, ds.modality_dims(), Rng(11).derive("init"))
    params = model.parameters()
    loss_cfg = default_config().loss

    def loss_fn(_ps):
        outs = [forward(model, ds.get_window(i)) for i in range(4)]
        return multi_task_loss(outs, ds.returns[:4], ds.movements[:4],
                               loss_cfg, params)

    full_err = check_gradients(loss_fn, params)
    prim_err = _primitive_sweep()
    elapsed = time.perf_counter() - t0

    ok = full_err < 1e-3 and prim_err < 1e-5 and elapsed < 60.0
    _verdict(1, ok, f"full-model err {full_err:.2e} (< 1e-3), primitive err "
                    f"{prim_err:.2e} (< 1e-5), {elapsed:.1f}s (< 60s)")


# ------------------------------------------------------ 2: RBM oracles


def _line_model():
    x = 0.5 * Rng(3).normal(300)
    rows = np.column_stack([x, x])
    cfg = CompletionConfig(hidden_units=3, epochs=60, learning_rate=0.05,
                           gibbs_steps=6000, n_samples=5000, seed=4)
    return train_cd(rows, cfg), cfg


def test_criterion_2_rbm_oracles():
    t0 = time.perf_counter()
    params, cfg = _line_model()

    # logistic closed form vs explicit sum over all 2^H hidden states
    states = np.array(list(itertools.product((0.0, 1.0), repeat=3)))
    enum_err = 0.0
    for seed in (0, 1, 2):
        v = Rng(seed + 50).normal(2)
        w = np.exp([-rbm_energy(v, s, params) for s in states])
        enum = (states * w[:, None]).sum(axis=0) / w.sum()
        enum_err = max(enum_err,
                       float(np.abs(hidden_conditional(v, params) - enum).max()))

    # Gibbs completion vs the discretized brute-force conditional mean
    lo = float(params.mean[1] - 6 * params.scale[1])
    hi = float(params.mean[1] + 6 * params.scale[1])
    grid = np.linspace(lo, hi, 241)
    grid_err = 0.0
    for x in (-0.5, -0.25, 0.0, 0.25, 0.5):
        row = np.array([x, 0.0])
        missing = np.array([False, True])
        want = grid_conditional_mean(params, row, missing, grid)
        got = complete_missing(row, missing, params, cfg, Rng(11))[1]
        grid_err = max(grid_err, abs(got - want))

    axes = (np.linspace(-4, 4, 61), np.linspace(-4, 4, 61))
    table = brute_force_distribution(params, axes)
    norm_err = abs(float(table.sum()) - 1.0)
    elapsed = time.perf_counter() - t0

    ok = (enum_err < 1e-10 and grid_err < 0.05 and norm_err < 1e-12
          and elapsed < 30.0)
    _verdict(2, ok, f"enumeration err {enum_err:.2e} (< 1e-10), grid err "
                    f"{grid_err:.4f} (< 0.05), normalization err "
                    f"{norm_err:.2e} (< 1e-12), {elapsed:.1f}s (< 30s)")


# ------------------------------------- 3: zero-weight completion degeneracy


def test_criterion_3_completion_degeneracy():
    rng = Rng(30)
    rows = rng.normal((50, 4)) * np.array([1.0, 3.0, 0.5, 2.0]) + \
        np.array([0.0, -2.0, 5.0, 1.0])
    params = zero_weight_params(rows, hidden_units=6)
    cfg = CompletionConfig(hidden_units=6)

    worst = 0.0
    for trial in range(25):
        row = rng.normal(4) * 2.0
        missing = rng.uniform(4, 0.0, 1.0) < 0.5
        if missing.all() or not missing.any():
            missing = np.array([True, False, False, True])
        out = complete_missing(row, missing, params, cfg, Rng(trial))
        worst = max(worst, float(np.abs(out[missing] -
                                        params.mean[missing]).max()))
        assert np.array_equal(out[~missing], row[~missing])

    ok = worst < 1e-12
    _verdict(3, ok, f"max |completion - training mean| {worst:.2e} (< 1e-12) "
                    "over 25 masks")


# ----------------------------------------------- 4: blank-learning mask


def test_criterion_4_blank_learning_invariants():
    rng = Rng(40)
    instances = 0
    for trial in range(120):
        c = 2 * (1 + trial % 3)
        d_a = 2 + trial % 4
        rho = float(rng.uniform(1, low=0.05, high=1.0)[0])
        p = init_fusion(tuple(f"m{i}" for i in range(c // 2)), d_e=d_a,
                        d_a=d_a, rho=0.5, mode="msa_bl", rng=Rng(trial))
        stack = AlignedStack(slots=param(rng.normal((c, d_a))),
                             order=row_order(p.modalities))

        bm = blank_mask(stack, p, rho=rho)
        n = c * d_a
        assert bm.k == math.ceil(rho * n)
        assert bm.mask.sum() == bm.k
        assert set(np.unique(bm.mask)) <= {0.0, 1.0}

        p.score_u.value += 2.9
        shifted = blank_mask(stack, p, rho=rho)
        assert np.array_equal(bm.mask, shifted.mask)

        weights = constant(Rng(trial + 500).normal((c, d_a)))
        loss = reduce_sum(mul(fuse(stack, bm).x_all, weights))
        zero_grad([stack.slots])
        backward(loss)
        dropped = bm.mask == 0.0
        assert np.all(stack.slots.grad[dropped] == 0.0)
        instances += 1

    ok = instances >= 100
    _verdict(4, ok, f"k-count, shift invariance and zero masked gradients "
                    f"held on {instances} instances (>= 100)")


# ----------------------------------------------------- 5: gate invariants


def test_criterion_5_gate_invariants():
    spec = SyntheticSpec(n_samples=40, dims={m: 3 for m in MODALITIES},
                         window=8, local_period=3, global_period=8, seed=50)
    ds = generate_synthetic(spec)
    cfg = ModelConfig(d_e=4, d_a=4, d_h=4, experts=3, w_f=3, w_c=4)

    simplex_err = 0.0
    model = init_model(cfg, ds.modality_dims(), Rng(51).derive("init"))
    for i in range(5):
        out = forward(model, ds.get_window(i))
        for g in out.gates.values():
            simplex_err = max(simplex_err, abs(float(g.value.sum()) - 1.0))
            assert (g.value >= 0.0).all()

    shared_cfg = dataclasses.replace(cfg, mg_gates=False)
    shared = init_model(shared_cfg, ds.modality_dims(), Rng(52).derive("init"))
    shared_exact = True
    for i in range(5):
        out = forward(shared, ds.get_window(i))
        shared_exact &= np.array_equal(out.gates["return"].value,
                                       out.gates["movement"].value)

    x = constant(Rng(53).normal(2 * len(MODALITIES) * cfg.d_a))
    outs = expert_outputs(x, model.experts)
    one_hot_exact = True
    for j in range(cfg.experts):
        g = np.zeros(cfg.experts)
        g[j] = 1.0
        mixed = mix_experts(x, constant(g), model.experts)
        one_hot_exact &= np.array_equal(mixed.value, outs.value[j])

    ok = simplex_err < 1e-12 and shared_exact and one_hot_exact
    _verdict(5, ok, f"simplex err {simplex_err:.2e} (< 1e-12), shared-gate "
                    f"exact {shared_exact}, one-hot selection exact "
                    f"{one_hot_exact}")


# ----------------------------------------------------- 6: learning happens


def test_criterion_6_learning_happens():
    t0 = time.perf_counter()
    cfg = default_config()
    spec = dataclasses.replace(cfg.data, seed=42)
    ds = generate_synthetic(spec)
    tr, va, te, _ = prepare_splits(ds, cfg.completion)

    model = init_model(cfg.model, tr.modality_dims(),
                       Rng(cfg.train.seed).derive("init"))
    model, hist = train(model, tr, va, cfg.loss, cfg.train)
    rec = evaluate(model, te)
    elapsed = time.perf_counter() - t0

    ratio = hist.train_loss[-1] / hist.initial_train_loss
    majority = max(float(te.movements.mean()), 1.0 - float(te.movements.mean()))
    margin = rec.accuracy - majority

    ok = ratio < 0.5 and margin >= 0.10 and elapsed < 300.0
    _verdict(6, ok, f"loss ratio {ratio:.3f} (< 0.5), accuracy "
                    f"{rec.accuracy:.3f} vs majority {majority:.3f}, margin "
                    f"{margin:+.3f} (>= 0.10), {elapsed:.0f}s (< 300s)")


# ------------------------------------------------- 7: ablation trend parity

_EXPECTED_LABELS = {
    "Performance on Multi-grained Encoder": [
        "Time Series (Single-scale)", "Image (Single-scale)",
        "Text (Single-scale)", "MSMF"],
    "Performance on Modality Completion": [
        "Single modal data", "Multimodal data(Zero Filling)",
        "Multimodal data(Forward Filling)", "Multimodal data(Mean Inputation)",
        "MSMF"],
    "Performance on Multi-modal Fusion": [
        "Feature stack", "Feature concatenate", "MSMF"],
    "Performance on Multi-task Learning": [
        "Stock Return", "Stock Movement", "Multi-task"],
    "Performance on Multi-Granularity Gates": [
        "Without (MG Gates)", "With (MG Gates)"],
}

# Frozen after the one-time calibration run on seeds {1, 2, 3}; the suite
# is deterministic, the tolerance absorbs platform-level float drift. A
# None value pins a cell that must stay empty (the return-only variant
# never trains a movement head).
_PINNED_ACCURACY: dict[tuple[str, str], float | None] = {
    ("Performance on Multi-grained Encoder",
     "Time Series (Single-scale)"): 0.8792,
    ("Performance on Multi-grained Encoder", "Image (Single-scale)"): 0.8792,
    ("Performance on Multi-grained Encoder", "Text (Single-scale)"): 0.8792,
    ("Performance on Multi-grained Encoder", "MSMF"): 0.8993,
    ("Performance on Modality Completion", "Single modal data"): 0.8792,
    ("Performance on Modality Completion",
     "Multimodal data(Zero Filling)"): 0.8456,
    ("Performance on Modality Completion",
     "Multimodal data(Forward Filling)"): 0.8792,
    ("Performance on Modality Completion",
     "Multimodal data(Mean Inputation)"): 0.8725,
    ("Performance on Modality Completion", "MSMF"): 0.8859,
    ("Performance on Multi-modal Fusion", "Feature stack"): 0.8725,
    ("Performance on Multi-modal Fusion", "Feature concatenate"): 0.8792,
    ("Performance on Multi-modal Fusion", "MSMF"): 0.8993,
    ("Performance on Multi-task Learning", "Stock Return"): None,
    ("Performance on Multi-task Learning", "Stock Movement"): 0.8725,
    ("Performance on Multi-task Learning", "Multi-task"): 0.8993,
    ("Performance on Multi-Granularity Gates", "Without (MG Gates)"): 0.8792,
    ("Performance on Multi-Granularity Gates", "With (MG Gates)"): 0.8993,
}

_ORDERINGS = [
    ("Performance on Multi-grained Encoder", "MSMF",
     "Time Series (Single-scale)"),
    ("Performance on Multi-grained Encoder", "MSMF", "Image (Single-scale)"),
    ("Performance on Multi-grained Encoder", "MSMF", "Text (Single-scale)"),
    ("Performance on Multi-modal Fusion", "MSMF", "Feature stack"),
    ("Performance on Multi-modal Fusion", "MSMF", "Feature concatenate"),
    ("Performance on Multi-Granularity Gates", "With (MG Gates)",
     "Without (MG Gates)"),
    ("Performance on Modality Completion", "MSMF",
     "Multimodal data(Zero Filling)"),
]


def test_criterion_7_ablation_trend_parity():
    t0 = time.perf_counter()
    cfg = default_bench_config()
    ds = generate_synthetic(cfg.data)
    tables = run_suite("all", cfg, ds, [1, 2, 3])
    elapsed = time.perf_counter() - t0

    labels_ok = True
    acc = {}
    for table in tables:
        assert tuple(table.headers) == tuple(REPORT_HEADERS)
        got = [row.label for row in table.rows]
        labels_ok &= got == _EXPECTED_LABELS[table.title]
        for row in table.rows:
            acc[(table.title, row.label)] = row.cells.get("accuracy")

    order_ok = True
    for title, ref, other in _ORDERINGS:
        a, b = acc[(title, ref)], acc[(title, other)]
        if a is None or b is None or a < b:
            order_ok = False

    pin_err = 0.0
    for key, want in _PINNED_ACCURACY.items():
        got = acc[key]
        if want is None:
            assert got is None, f"expected empty accuracy cell for {key}"
            continue
        assert got is not None, f"no accuracy cell for {key}"
        pin_err = max(pin_err, abs(got - want))

    ok = labels_ok and order_ok and pin_err <= 0.02 and elapsed < 1200.0
    _verdict(7, ok, f"labels exact {labels_ok}, orderings hold {order_ok}, "
                    f"max drift from pinned medians {pin_err:.4f} (<= 0.02), "
                    f"{elapsed:.0f}s (< 1200s)")


# ---------------------------------------------------------- 8: determinism

_DET_CONFIG = {
    "data": {"n_samples": 80,
             "dims": {"timeseries": 2, "image": 2, "text": 2},
             "window": 8, "noise_std": 0.2, "seed": 5},
    "model": {"d_e": 3, "d_a": 3, "d_h": 3, "experts": 2, "w_c": 4},
    "completion": {"hidden_units": 6, "epochs": 3},
    "train": {"epochs": 3, "batch_size": 8, "patience": 8},
}


def test_criterion_8_determinism(tmp_path, capsys):
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(_DET_CONFIG))

    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        data_dir = str(d / "data")
        model = str(d / "model.json")
        assert cli_main(["gen-data", "--out", data_dir, "--seed", "17",
                         "--missing-rate", "0.2",
                         "--config", str(cfg_path)]) == 0
        assert cli_main(["train", "--config", str(cfg_path),
                         "--data", data_dir, "--out", model]) == 0
        capsys.readouterr()
        assert cli_main(["eval", "--model", model, "--data", data_dir]) == 0
        metrics = capsys.readouterr().out
        with open(model, "rb") as fh:
            outputs.append((fh.read(), metrics))

    model_same = outputs[0][0] == outputs[1][0]
    metrics_same = outputs[0][1] == outputs[1][1]
    ok = model_same and metrics_same
    _verdict(8, ok, f"model file bytes identical {model_same}, metric JSON "
                    f"identical {metrics_same}")


# ----------------------------------------------------- 9: report rendering


def test_criterion_9_report_rendering():
    table = ReportTable(
        title="Performance on Multi-modal Fusion",
        headers=REPORT_HEADERS,
        rows=[
            ReportRow(label="Feature stack",
                      cells={"accuracy": 0.6239, "f1": 0.6125,
                             "mape": 0.0376, "rmse": 0.0492}),
            ReportRow(label="MSMF",
                      cells={"accuracy": 0.6792, "f1": 0.6753,
                             "mape": 0.0285, "rmse": 0.0403}),
            ReportRow(label="Feature concatenate",
                      cells={"accuracy": None, "f1": None,
                             "mape": None, "rmse": None}),
        ])

    first = emit_report(table, fmt="md")
    second = emit_report(table, fmt="md")
    byte_identical = first == second

    lines = first.splitlines()
    msmf_line = next(l for l in lines if l.startswith("| MSMF"))
    values_ok = msmf_line == "| MSMF | 67.92 | 67.53 | 0.0285 | 0.0403 |"
    blank_line = next(l for l in lines if "concatenate" in l)
    blanks_ok = blank_line == "| Feature concatenate | - | - | - | - |"

    csv_first = emit_report(table, fmt="csv")
    csv_ok = (csv_first == emit_report(table, fmt="csv")
              and "MSMF,67.92,67.53,0.0285,0.0403" in csv_first
              and "Feature concatenate,-,-,-,-" in csv_first)

    ok = byte_identical and values_ok and blanks_ok and csv_ok
    _verdict(9, ok, f"md byte-identical {byte_identical}, reference row "
                    f"rendered {values_ok}, empty cells as '-' {blanks_ok}, "
                    f"csv stable {csv_ok}")
