"""A miniature ablation run and its rendered report.

Uses a deliberately tiny config (seconds, not minutes) so the point is
the machinery: variant construction, per-seed medians, and the two
output formats. The calibrated bench config used for real comparisons
lives in msmf.bench.default_bench_config.
"""

from msmf.bench import emit_report, make_suite, run_ablation, run_imputation_bench
from msmf.config import apply_overrides, default_config
from msmf.data import generate_synthetic

cfg = apply_overrides(default_config(), {
    "data": {"n_samples": 80, "dims": {"timeseries": 2, "image": 2, "text": 2},
             "window": 8, "noise_std": 0.2, "seed": 5},
    "model": {"d_e": 3, "d_a": 3, "d_h": 3, "experts": 2, "w_c": 4},
    "completion": {"hidden_units": 6, "epochs": 3},
    "train": {"epochs": 2, "batch_size": 8, "patience": 8},
})
ds = generate_synthetic(cfg.data)

suite = make_suite("gates", seeds=[1])
print(f"suite '{suite.name}': {[label for label, _ in suite.variants]}")
table = run_ablation(suite, cfg, ds)

print()
print(emit_report(table, fmt="md"))

imp = run_imputation_bench(cfg, ds, {"image": 0.3, "text": 0.3}, seeds=[1])
print(emit_report(imp, fmt="md"))

csv_text = emit_report(table, fmt="csv")
print("csv form, first two lines:")
for line in csv_text.split("\r\n")[:2]:
    print(" ", line)
print("ok")
