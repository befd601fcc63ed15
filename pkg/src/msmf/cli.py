"""Command-line front end.

Subcommands: gen-data, train, eval, gradcheck, ablate, impute-bench.
Exit codes: 0 success, 1 usage, 2 configuration or data problems,
3 numeric or training failures.  Every command is deterministic given its
flags; all randomness is seeded.

The environment variable MSMF_THREADS (a positive integer) caps internal
parallelism.  Execution in this implementation is serial, so any valid
cap is honored as-is; the variable is still validated so scripts fail
early on typos.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import bench as bench_mod
from . import config as config_mod
from .completion import CompletionConfig
from .data import (MODALITIES, generate_synthetic, load_csv_dataset,
                   save_csv_dataset)
from .errors import (ConfigurationError, ContractError, DataError,
                     DimensionError, MetricError, MsmfError, NumericError,
                     ParseError, ResourceError, TrainingError)
from .multitask import ModelConfig, forward, init_model
from .numcore import Rng, check_gradients
from .training import (evaluate, load_model, multi_task_loss, prepare_splits,
                       save_history_csv, save_model, train)

GRADCHECK_TOLERANCE = 1e-3


class _Parser(argparse.ArgumentParser):
    """argparse flavor whose usage failures exit 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def thread_cap() -> int:
    raw = os.environ.get("MSMF_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigurationError(
            f"MSMF_THREADS must be a positive integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigurationError(
            f"MSMF_THREADS must be a positive integer, got {raw!r}")
    return cap


def build_parser() -> _Parser:
    parser = _Parser(prog="msmf",
                     description="Multi-scale multimodal market model")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic CSV dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", required=True, type=int, help="generator seed")
    p.add_argument("--samples", type=int, default=None,
                   help="override sample count")
    p.add_argument("--missing-rate", type=float, default=None,
                   help="drop rate for the image and text streams")
    p.add_argument("--config", default=None, help="config JSON path")

    p = sub.add_parser("train", help="train a model on a CSV dataset")
    p.add_argument("--config", default=None, help="config JSON path")
    p.add_argument("--data", required=True, help="CSV dataset directory")
    p.add_argument("--out", required=True, help="model file to write")

    p = sub.add_parser("eval", help="score a model on a CSV dataset")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--data", required=True, help="CSV dataset directory")

    p = sub.add_parser("gradcheck",
                       help="compare full-loss gradients to finite differences")
    p.add_argument("--config", default=None, help="config JSON path")

    p = sub.add_parser("ablate", help="run an ablation suite")
    p.add_argument("--suite", required=True, choices=bench_mod.SUITE_NAMES)
    p.add_argument("--config", default=None,
                   help="config JSON path (default: calibrated bench config)")
    p.add_argument("--data", default=None, help="CSV dataset directory "
                   "(default: synthetic per the config's data section)")
    p.add_argument("--seeds", default="1,2,3",
                   help="comma-separated training seeds")
    p.add_argument("--out", required=True, help="report file to write")
    p.add_argument("--format", default="md", choices=("md", "csv"))

    p = sub.add_parser("impute-bench",
                       help="compare missing-data handling strategies")
    p.add_argument("--config", default=None,
                   help="config JSON path (default: calibrated bench config)")
    p.add_argument("--data", default=None, help="CSV dataset directory")
    p.add_argument("--rate", type=float, default=0.3,
                   help="drop rate for the image and text streams")
    p.add_argument("--seeds", default="1,2,3",
                   help="comma-separated training seeds")
    p.add_argument("--out", required=True, help="report file to write")
    p.add_argument("--format", default="md", choices=("md", "csv"))

    return parser


def _parse_seeds(raw: str) -> list[int]:
    try:
        seeds = [int(s) for s in raw.split(",") if s.strip() != ""]
    except ValueError:
        raise ConfigurationError(f"bad seed list {raw!r}") from None
    if not seeds:
        raise ConfigurationError("need at least one seed")
    return seeds


def _load_config(path: str | None, bench_default: bool = False):
    if path is not None:
        return config_mod.load_config(path)
    if bench_default:
        return bench_mod.default_bench_config()
    return config_mod.default_config()


def _cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    spec = cfg.data
    updates: dict = {"seed": args.seed}
    if args.samples is not None:
        updates["n_samples"] = args.samples
    if args.missing_rate is not None:
        rate = {m: 0.0 for m in MODALITIES}
        rate["image"] = args.missing_rate
        rate["text"] = args.missing_rate
        updates["missing_rate"] = rate
    spec = dataclasses.replace(spec, **updates)
    spec.validate()
    cfg = dataclasses.replace(cfg, data=spec)

    ds = generate_synthetic(spec)
    os.makedirs(args.out, exist_ok=True)
    save_csv_dataset(ds, args.out)
    config_mod.save_config(os.path.join(args.out, "config.json"), cfg)
    print(f"wrote {ds.n_samples} samples ({ds.n_windows} windows) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    ds = load_csv_dataset(args.data, cfg.data.window)
    tr, va, te, rbm = prepare_splits(ds, cfg.completion)
    model = init_model(cfg.model, tr.modality_dims(),
                       Rng(cfg.train.seed).derive("init"))
    model, history = train(model, tr, va, cfg.loss, cfg.train)
    test_metrics = evaluate(model, te)

    save_model(args.out, model, rbm, config_mod.to_json_dict(cfg))
    save_history_csv(args.out + ".history.csv", history)
    config_mod.echo_config(cfg, args.out)
    summary = {
        "initial_train_loss": history.initial_train_loss,
        "final_train_loss": history.train_loss[-1],
        "epochs_run": history.completed_epochs,
        "best_epoch": history.best_epoch,
        "test": test_metrics.to_json_dict(),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    model, rbm, cfg_dict = load_model(args.model)
    window = int(cfg_dict["data"]["window"])
    ds = load_csv_dataset(args.data, window)
    if not ds.all_present():
        if rbm is None:
            raise DataError(
                "dataset has absent rows but the model file carries no "
                "completion parameters")
        from .completion import complete_dataset
        ccfg = CompletionConfig(**cfg_dict["completion"])
        ds = complete_dataset(ds, rbm, ccfg, Rng(ccfg.seed).derive("eval"))
    record = evaluate(model, ds)
    print(json.dumps(record.to_json_dict(), sort_keys=True))
    return 0


def _cmd_gradcheck(args) -> int:
    from .data import SyntheticSpec

    cfg = _load_config(args.config)
    # tiny model, every dimension at most 8, so central differences stay fast
    spec = SyntheticSpec(n_samples=16, dims={m: 3 for m in MODALITIES},
                         window=8, local_period=3, global_period=8,
                         noise_std=cfg.data.noise_std, seed=7)
    ds = generate_synthetic(spec)
    model_cfg = ModelConfig(d_e=4, d_a=4, d_h=4, experts=2, w_f=3, w_c=4,
                            rho=cfg.model.rho, fusion_mode=cfg.model.fusion_mode,
                            mg_gates=cfg.model.mg_gates)
    model = init_model(model_cfg, ds.modality_dims(), Rng(11).derive("init"))
    params = model.parameters()
    loss_cfg = cfg.loss
    batch = range(4)

    def loss_fn(_params):
        outs = [forward(model, ds.get_window(i)) for i in batch]
        return multi_task_loss(outs, ds.returns[:4], ds.movements[:4],
                               loss_cfg, params)

    err = check_gradients(loss_fn, params)
    print(f"max relative error: {err:.6e}")
    return 0 if err <= GRADCHECK_TOLERANCE else 3


def _write_report(path: str, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _bench_dataset(cfg, data_dir):
    if data_dir is not None:
        return load_csv_dataset(data_dir, cfg.data.window)
    return generate_synthetic(cfg.data)


def _cmd_ablate(args) -> int:
    cfg = _load_config(args.config, bench_default=True)
    seeds = _parse_seeds(args.seeds)
    ds = _bench_dataset(cfg, args.data)
    tables = bench_mod.run_suite(args.suite, cfg, ds, seeds)
    _write_report(args.out, bench_mod.emit_reports(tables, args.format))
    config_mod.echo_config(cfg, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_impute_bench(args) -> int:
    cfg = _load_config(args.config, bench_default=True)
    seeds = _parse_seeds(args.seeds)
    ds = _bench_dataset(cfg, args.data)
    rates = {"image": args.rate, "text": args.rate}
    table = bench_mod.run_imputation_bench(cfg, ds, rates, seeds)
    _write_report(args.out, bench_mod.emit_reports([table], args.format))
    config_mod.echo_config(cfg, args.out)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "ablate": _cmd_ablate,
    "impute-bench": _cmd_impute_bench,
}


def run_command(argv) -> int:
    """Parse and dispatch; raises module errors rather than exiting."""
    args = build_parser().parse_args(argv)
    thread_cap()
    return _COMMANDS[args.command](args)


def main(argv=None) -> int:
    try:
        return run_command(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 0
    except (ParseError, DataError, ConfigurationError, ResourceError,
            MetricError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (NumericError, TrainingError, ContractError,
            DimensionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except MsmfError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
