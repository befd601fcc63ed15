"""Multi-modal dataset plumbing.

A dataset is three time-aligned numeric feature streams (generic stand-ins
for fundamentals, chart-derived and news-derived features) with per-row
presence masks, plus two label streams defined per sliding window: a real
return and a binary up/down movement.

The synthetic generator plants two latent sinusoid-plus-noise factors, one
fast ("local") and one slow ("global"), drives every modality from them
through fixed random linear maps, and defines the return as an equal blend
of the recent local-factor mean and the window-wide global-factor mean.
Both scales therefore carry label-relevant information and the encoder /
fusion / completion ablations have something to detect.

Absent rows hold all-zero sentinels and a False presence flag, never NaN.
Timestamps are integers on a dense grid; CSV serialization uses repr()
floats so a write/read round-trip is exact.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DataError, ParseError
from .numcore import Rng

MODALITIES = ("timeseries", "image", "text")

# Length of the "recent" span defining the local label term, as a fraction
# of the local period (half a period keeps phase information).
_RECENT_FRACTION = 0.5
# Label noise is this fraction of SyntheticSpec.noise_std.
_LABEL_NOISE_FRACTION = 0.25


@dataclass
class ModalityStream:
    modality_id: str
    features: np.ndarray      # [N, d_m] float64
    present: np.ndarray       # [N] bool

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.present = np.asarray(self.present, dtype=bool)
        if self.features.ndim != 2 or self.present.ndim != 1 \
                or self.features.shape[0] != self.present.shape[0]:
            raise DataError(
                f"stream {self.modality_id}: features {self.features.shape} "
                f"do not line up with present flags {self.present.shape}")

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class MultiModalDataset:
    streams: dict[str, ModalityStream]
    window: int
    returns: np.ndarray       # [N_w] float64
    movements: np.ndarray     # [N_w] int64 in {0, 1}

    def __post_init__(self):
        self.returns = np.asarray(self.returns, dtype=np.float64)
        self.movements = np.asarray(self.movements, dtype=np.int64)
        ns = {s.features.shape[0] for s in self.streams.values()}
        if len(ns) != 1:
            raise DataError(f"streams disagree on sample count: {sorted(ns)}")
        n = ns.pop()
        expected = n - self.window + 1
        if expected < 1:
            raise DataError(f"window {self.window} too large for {n} samples")
        if self.returns.shape != (expected,) or self.movements.shape != (expected,):
            raise DataError(
                f"label length {self.returns.shape[0]} != N - T + 1 = {expected}")

    @property
    def n_samples(self) -> int:
        return next(iter(self.streams.values())).features.shape[0]

    @property
    def n_windows(self) -> int:
        return self.returns.shape[0]

    def modality_dims(self) -> dict[str, int]:
        return {m: s.dim for m, s in self.streams.items()}

    def get_window(self, i: int, modalities=None) -> dict[str, np.ndarray]:
        """Feature block [T, d_m] per modality for window i (views, not copies)."""
        names = modalities if modalities is not None else self.streams.keys()
        return {m: self.streams[m].features[i:i + self.window] for m in names}

    def all_present(self, modalities=None) -> bool:
        names = modalities if modalities is not None else self.streams.keys()
        return all(self.streams[m].present.all() for m in names)


@dataclass
class SyntheticSpec:
    n_samples: int = 4000
    dims: dict[str, int] = field(default_factory=lambda: {m: 8 for m in MODALITIES})
    window: int = 16
    local_period: int = 6
    global_period: int = 48
    noise_std: float = 0.3
    missing_rate: dict[str, float] = field(default_factory=lambda: {m: 0.0 for m in MODALITIES})
    seed: int = 0

    def validate(self) -> None:
        if self.n_samples < self.window + 1:
            raise ConfigurationError(f"n_samples {self.n_samples} too small for window {self.window}")
        if set(self.dims) != set(MODALITIES) or any(d < 1 for d in self.dims.values()):
            raise ConfigurationError(f"dims must cover {MODALITIES} with positive sizes, got {self.dims}")
        if self.local_period < 2 or self.global_period <= self.local_period:
            raise ConfigurationError(
                f"need global_period > local_period >= 2, got {self.local_period}/{self.global_period}")
        if self.noise_std < 0:
            raise ConfigurationError(f"noise_std must be >= 0, got {self.noise_std}")
        if set(self.missing_rate) - set(MODALITIES):
            raise ConfigurationError(f"unknown modalities in missing_rate: {self.missing_rate}")
        for m, r in self.missing_rate.items():
            if not (0.0 <= r < 1.0):
                raise ConfigurationError(f"missing_rate[{m}] must be in [0, 1), got {r}")
        if self.window < 1:
            raise ConfigurationError(f"window must be >= 1, got {self.window}")


def _window_means(series: np.ndarray, width: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(series, width).mean(axis=1)


def generate_synthetic(spec: SyntheticSpec) -> MultiModalDataset:
    """Deterministic synthetic dataset; see the module docstring for the design."""
    spec.validate()
    rng = Rng(spec.seed)
    n, T = spec.n_samples, spec.window
    t = np.arange(n)

    factor_rng = rng.derive(0)
    phase_local = factor_rng.uniform(low=0.0, high=2.0 * np.pi)
    phase_global = factor_rng.uniform(low=0.0, high=2.0 * np.pi)
    f_local = np.sin(2.0 * np.pi * t / spec.local_period + phase_local) \
        + spec.noise_std * factor_rng.normal(n)
    f_global = np.sin(2.0 * np.pi * t / spec.global_period + phase_global) \
        + spec.noise_std * factor_rng.normal(n)
    factors = np.column_stack([f_local, f_global])

    streams = {}
    for k, m in enumerate(MODALITIES):
        mod_rng = rng.derive(1 + k)
        loadings = mod_rng.normal((2, spec.dims[m]))
        feats = factors @ loadings + spec.noise_std * mod_rng.normal((n, spec.dims[m]))
        streams[m] = ModalityStream(m, feats, np.ones(n, dtype=bool))

    recent = max(1, int(spec.local_period * _RECENT_FRACTION))
    local_recent = _window_means(f_local, recent)[T - recent:]
    global_mean = _window_means(f_global, T)
    label_rng = rng.derive(100)
    returns = 0.5 * local_recent + 0.5 * global_mean \
        + _LABEL_NOISE_FRACTION * spec.noise_std * label_rng.normal(n - T + 1)
    movements = (returns > 0).astype(np.int64)

    ds = MultiModalDataset(streams, T, returns, movements)
    if any(r > 0 for r in spec.missing_rate.values()):
        ds = simulate_missing(ds, spec.missing_rate, rng.derive(200).seed)
    return ds


def simulate_missing(ds: MultiModalDataset, rates: dict[str, float], seed: int) -> MultiModalDataset:
    """Independently drop rows of each modality at its rate; labels untouched."""
    for m, r in rates.items():
        if m not in ds.streams:
            raise ConfigurationError(f"simulate_missing: unknown modality {m!r}")
        if not (0.0 <= r < 1.0):
            raise ConfigurationError(f"simulate_missing: rate for {m} must be in [0, 1), got {r}")
    rng = Rng(seed)
    streams = {}
    for m, s in ds.streams.items():
        rate = rates.get(m, 0.0)
        if rate <= 0.0:
            streams[m] = ModalityStream(m, s.features.copy(), s.present.copy())
            continue
        drop = rng.derive(m).bernoulli(rate, s.present.shape[0]).astype(bool)
        present = s.present & ~drop
        feats = np.where(present[:, None], s.features, 0.0)
        streams[m] = ModalityStream(m, feats, present)
    return MultiModalDataset(streams, ds.window, ds.returns.copy(), ds.movements.copy())


def impute_baseline(ds: MultiModalDataset, method: str) -> MultiModalDataset:
    """Fill absent rows with a traditional rule; output has every flag present.

    zero: absent rows stay at the zero sentinel.
    forward: last present row carried forward; rows before the first present
        one stay zero.
    mean: per-feature mean over present rows; a modality with no present rows
        falls back to zeros with a warning.
    """
    if method not in ("zero", "forward", "mean"):
        raise ConfigurationError(f"impute_baseline: unknown method {method!r}")
    streams = {}
    for m, s in ds.streams.items():
        feats = s.features.copy()
        present = s.present
        if not present.all():
            if method == "forward":
                idx = np.where(present, np.arange(present.size), -1)
                np.maximum.accumulate(idx, out=idx)
                has_source = idx >= 0
                fill = np.where(has_source[:, None], feats[np.maximum(idx, 0)], 0.0)
                feats = np.where(present[:, None], feats, fill)
            elif method == "mean":
                if present.any():
                    col_mean = s.features[present].mean(axis=0)
                else:
                    warnings.warn(f"impute_baseline: modality {m} has no present rows; using zeros")
                    col_mean = np.zeros(s.dim)
                feats = np.where(present[:, None], feats, col_mean)
            # zero: sentinel already in place
        streams[m] = ModalityStream(m, feats, np.ones(present.size, dtype=bool))
    return MultiModalDataset(streams, ds.window, ds.returns.copy(), ds.movements.copy())


def _slice_windows(ds: MultiModalDataset, lo: int, hi: int) -> MultiModalDataset:
    """Sub-dataset covering window indices [lo, hi)."""
    row_hi = hi - 1 + ds.window
    streams = {m: ModalityStream(m, s.features[lo:row_hi].copy(), s.present[lo:row_hi].copy())
               for m, s in ds.streams.items()}
    return MultiModalDataset(streams, ds.window, ds.returns[lo:hi].copy(), ds.movements[lo:hi].copy())


def split_dataset(ds: MultiModalDataset, train_frac: float, val_frac: float,
                  seed: int | None = None):
    """Chronological train/val/test split on window index (seed is accepted
    for signature stability but unused: time-series splits never shuffle)."""
    if train_frac <= 0 or val_frac <= 0 or train_frac + val_frac >= 1:
        raise ConfigurationError(
            f"fractions must be positive with sum < 1, got {train_frac}/{val_frac}")
    nw = ds.n_windows
    n_train = int(nw * train_frac)
    n_val = int(nw * val_frac)
    n_test = nw - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ConfigurationError(
            f"split of {nw} windows gives empty part: {n_train}/{n_val}/{n_test}")
    return (_slice_windows(ds, 0, n_train),
            _slice_windows(ds, n_train, n_train + n_val),
            _slice_windows(ds, n_train + n_val, nw))


# ---------------------------------------------------------------------------
# CSV round-trip
# ---------------------------------------------------------------------------
# Files: <modality>.csv with header timestamp,f0..f{d-1} (absent rows are
# omitted) and labels.csv with header timestamp,return,movement covering the
# last N_w grid points.  Timestamps are integers on a dense grid.

def save_csv_dataset(ds: MultiModalDataset, dir_path: str) -> None:
    os.makedirs(dir_path, exist_ok=True)
    for m, s in ds.streams.items():
        with open(os.path.join(dir_path, f"{m}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp"] + [f"f{i}" for i in range(s.dim)])
            for ts in range(s.features.shape[0]):
                if s.present[ts]:
                    w.writerow([ts] + [repr(float(v)) for v in s.features[ts]])
    with open(os.path.join(dir_path, "labels.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "return", "movement"])
        first = ds.window - 1
        for i in range(ds.n_windows):
            w.writerow([first + i, repr(float(ds.returns[i])), int(ds.movements[i])])


def _read_rows(path: str, expected_header: list[str]) -> list[tuple[int, list[float]]]:
    fname = os.path.basename(path)
    if not os.path.exists(path):
        raise DataError(f"missing file {fname}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{fname}:1: empty file, expected header")
        if header != expected_header:
            raise ParseError(f"{fname}:1: bad header {header!r}, expected {expected_header!r}")
        last_ts = None
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected_header):
                raise ParseError(f"{fname}:{lineno}: expected {len(expected_header)} fields, got {len(row)}")
            try:
                ts = int(row[0])
            except ValueError:
                raise ParseError(f"{fname}:{lineno}: non-integer timestamp {row[0]!r}")
            if last_ts is not None and ts <= last_ts:
                raise ParseError(f"{fname}:{lineno}: timestamps not strictly increasing ({last_ts} then {ts})")
            last_ts = ts
            try:
                values = [float(v) for v in row[1:]]
            except ValueError:
                raise ParseError(f"{fname}:{lineno}: non-numeric cell in {row[1:]!r}")
            rows.append((ts, values))
    return rows


def _modality_header(path: str) -> list[str]:
    fname = os.path.basename(path)
    if not os.path.exists(path):
        raise DataError(f"missing file {fname}")
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header or header[0] != "timestamp" or len(header) < 2 \
            or header[1:] != [f"f{i}" for i in range(len(header) - 1)]:
        raise ParseError(f"{fname}:1: bad header {header!r}")
    return header


def load_csv_dataset(dir_path: str, window: int) -> MultiModalDataset:
    """Load the four-file CSV layout written by ``save_csv_dataset``.

    Rows are joined on timestamp over a dense integer grid spanning all
    files; a modality with no row at a grid point gets present=False there.
    labels.csv must cover exactly the last N - window + 1 grid points.
    """
    if window < 1:
        raise ConfigurationError(f"window must be >= 1, got {window}")
    modality_rows = {}
    dims = {}
    for m in MODALITIES:
        path = os.path.join(dir_path, f"{m}.csv")
        header = _modality_header(path)
        dims[m] = len(header) - 1
        modality_rows[m] = _read_rows(path, header)
    label_path = os.path.join(dir_path, "labels.csv")
    label_rows = _read_rows(label_path, ["timestamp", "return", "movement"])
    if not label_rows:
        raise ParseError("labels.csv:2: no label rows")

    all_ts = [ts for rows in modality_rows.values() for ts, _ in rows] \
        + [ts for ts, _ in label_rows]
    lo, hi = min(all_ts), max(all_ts)
    n = hi - lo + 1
    nw = n - window + 1
    if nw < 1:
        raise DataError(f"grid of {n} timestamps too short for window {window}")
    label_ts = [ts for ts, _ in label_rows]
    expected_ts = list(range(lo + window - 1, hi + 1))
    if label_ts != expected_ts:
        raise ParseError(
            f"labels.csv: timestamps {label_ts[0]}..{label_ts[-1]} ({len(label_ts)} rows) "
            f"do not cover the last {nw} grid points {expected_ts[0]}..{expected_ts[-1]}")

    streams = {}
    for m in MODALITIES:
        feats = np.zeros((n, dims[m]))
        present = np.zeros(n, dtype=bool)
        for ts, values in modality_rows[m]:
            feats[ts - lo] = values
            present[ts - lo] = True
        streams[m] = ModalityStream(m, feats, present)

    returns = np.array([v[0] for _, v in label_rows])
    movements_f = np.array([v[1] for _, v in label_rows])
    movements = movements_f.astype(np.int64)
    if np.any(movements_f != movements) or np.any((movements != 0) & (movements != 1)):
        raise ParseError("labels.csv: movement column must contain only 0 or 1")
    return MultiModalDataset(streams, window, returns, movements)


def fully_present_rows(ds: MultiModalDataset, modalities=None):
    """Concatenated feature rows where every listed modality is present.

    Returns (rows [n, D], layout {modality: (offset, length)}, row_indices).
    """
    if modalities is None:
        names = list(ds.streams)
    else:
        unknown = set(modalities) - set(ds.streams)
        if unknown:
            raise ConfigurationError(
                f"fully_present_rows: unknown modalities {sorted(unknown)}")
        names = [m for m in ds.streams if m in set(modalities)]
    mask = np.ones(ds.n_samples, dtype=bool)
    for m in names:
        mask &= ds.streams[m].present
    layout = {}
    offset = 0
    for m in names:
        layout[m] = (offset, ds.streams[m].dim)
        offset += ds.streams[m].dim
    rows = np.concatenate([ds.streams[m].features[mask] for m in names], axis=1) \
        if mask.any() else np.zeros((0, offset))
    return rows, layout, np.where(mask)[0]
