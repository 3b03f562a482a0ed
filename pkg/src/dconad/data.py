"""Series loading, differencing, normalisation and windowing.

Series are stored time-major, shape ``(T, d)``, which is how the CSV files lay
them out and how windows are fed to the encoder.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    InputTooShortError,
    LabelMismatchError,
    MissingFileError,
    NonNumericError,
    RaggedRowsError,
    WindowTooLargeError,
)

NORM_EPS = 1e-5
DIFF_ORDERS = ("norm-then-diff", "diff-then-norm")


@dataclass(frozen=True)
class TimeSeriesDataset:
    values: np.ndarray  # (T, d)
    labels: np.ndarray | None = None
    split: str = "train"
    name: str = ""
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DataError(f"{self.name or 'dataset'}: values must be 2-D (T, d), got shape {values.shape}")
        if values.shape[0] < 2:
            raise InputTooShortError(f"{self.name or 'dataset'}: need T >= 2 timestamps, got {values.shape[0]}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (values.shape[0],):
                raise LabelMismatchError(
                    f"{self.name or 'dataset'}: {labels.size} labels for {values.shape[0]} timestamps"
                )
            if not np.isin(labels, (0, 1)).all():
                raise DataError(f"{self.name or 'dataset'}: labels must be 0/1")
            labels = labels.astype(np.int64)
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)
        if not self.columns:
            object.__setattr__(self, "columns", tuple(f"x{i}" for i in range(values.shape[1])))

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]


@dataclass
class WindowBatch:
    windows: np.ndarray  # (B, L, d)
    diff_windows: np.ndarray  # (B, L-1, d)
    start_indices: np.ndarray  # (B,)

    def __len__(self):
        return len(self.start_indices)

    def subset(self, idx) -> "WindowBatch":
        return WindowBatch(self.windows[idx], self.diff_windows[idx], self.start_indices[idx])


def difference(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """First-order difference along the time axis: ``out[t] = x[t+1] - x[t]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] < 2:
        raise InputTooShortError(f"differencing needs at least 2 timestamps, got {x.shape[axis]}")
    return np.diff(x, axis=axis)


def normalize(v: np.ndarray, mean=None, var=None, axis: int = 0) -> np.ndarray:
    """Per-variable standardisation ``(v - mean) / sqrt(var + 1e-5)``.

    Statistics default to the population mean/variance of ``v`` itself; pass
    them explicitly to apply train statistics to a test split.
    """
    v = np.asarray(v, dtype=np.float64)
    if mean is None:
        mean = v.mean(axis=axis, keepdims=True)
    if var is None:
        var = v.var(axis=axis, keepdims=True)
    return (v - mean) / np.sqrt(var + NORM_EPS)


@dataclass
class Normalizer:
    """Train-fitted statistics for both streams, reused unchanged on test data."""

    mean: np.ndarray
    var: np.ndarray
    diff_mean: np.ndarray | None = None
    diff_var: np.ndarray | None = None
    order: str = "norm-then-diff"

    @classmethod
    def fit(cls, train: np.ndarray, order: str = "norm-then-diff") -> "Normalizer":
        if order not in DIFF_ORDERS:
            raise ConfigError(f"diff_order must be one of {DIFF_ORDERS}, got {order!r}")
        train = np.asarray(train, dtype=np.float64)
        norm = cls(train.mean(axis=0), train.var(axis=0), order=order)
        if order == "diff-then-norm":
            d = difference(train, axis=0)
            norm.diff_mean, norm.diff_var = d.mean(axis=0), d.var(axis=0)
        return norm

    def transform(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """Return ``(normalised series, separate diff series or None)``.

        With the default order the diff stream is derived per window from the
        normalised series, so no separate series is returned.
        """
        z = normalize(x, self.mean, self.var)
        if self.order == "norm-then-diff":
            return z, None
        return z, normalize(difference(x, axis=0), self.diff_mean, self.diff_var)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"norm.mean": self.mean, "norm.var": self.var}
        if self.diff_mean is not None:
            out["norm.diff_mean"] = self.diff_mean
            out["norm.diff_var"] = self.diff_var
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], order: str) -> "Normalizer":
        return cls(
            arrays["norm.mean"], arrays["norm.var"], arrays.get("norm.diff_mean"), arrays.get("norm.diff_var"), order
        )


def window_starts(T: int, L: int, stride: int, cover_tail: bool = False) -> np.ndarray:
    if L < 1 or stride < 1:
        raise ConfigError(f"window length and stride must be >= 1, got L={L}, stride={stride}")
    if L > T:
        raise WindowTooLargeError(f"window length {L} exceeds series length {T}")
    starts = list(range(0, T - L + 1, stride))
    if cover_tail and starts[-1] + L < T:
        starts.append(T - L)
    return np.array(starts, dtype=np.int64)


def make_windows(x: np.ndarray, L: int, stride: int = 1, cover_tail: bool = False, diff_series=None) -> WindowBatch:
    """Slice ``x`` (T, d) into length-L windows plus their differenced twins.

    ``cover_tail`` appends one right-aligned window when the stride leaves a
    remainder, which is how test series get full coverage.  ``diff_series``
    (T-1, d) supplies a separately normalised diff stream; when absent the diff
    windows are computed from the windows themselves.
    """
    x = np.asarray(x, dtype=np.float64)
    starts = window_starts(x.shape[0], L, stride, cover_tail)
    idx = starts[:, None] + np.arange(L)[None, :]
    windows = x[idx]
    if diff_series is None:
        diff_windows = np.diff(windows, axis=1)
    else:
        diff_windows = np.asarray(diff_series)[idx[:, :-1]]
    return WindowBatch(windows, diff_windows, starts)


def score_owner_mask(starts: np.ndarray, L: int, T: int) -> np.ndarray:
    """For each window, the positions whose score it contributes.

    Non-overlapping windows own all their positions; the right-aligned tail
    window only owns the timestamps no earlier window reached.
    """
    mask = np.zeros((len(starts), L), dtype=bool)
    covered = np.zeros(T, dtype=bool)
    for b, s in enumerate(starts):
        own = ~covered[s : s + L]
        mask[b] = own
        covered[s : s + L] = True
    return mask


# ----------------------------------------------------------------------------
# CSV datasets


def _read_matrix(path: Path) -> tuple[tuple[str, ...], np.ndarray]:
    if not path.is_file():
        raise MissingFileError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedRowsError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise NonNumericError(f"{path}:{lineno}: non-numeric cell in {row!r}") from None
    return tuple(h.strip() for h in header), np.array(rows, dtype=np.float64).reshape(-1, len(header))


def _read_labels(path: Path) -> np.ndarray:
    if not path.is_file():
        raise MissingFileError(f"{path}: file not found")
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 1:
                raise RaggedRowsError(f"{path}:{lineno}: labels file must have exactly one column")
            cell = row[0].strip()
            if cell not in ("0", "1"):
                if lineno == 1:
                    continue  # header
                raise NonNumericError(f"{path}:{lineno}: label must be 0 or 1, got {cell!r}")
            out.append(int(cell))
    return np.array(out, dtype=np.int64)


def load_csv_dataset(dir_path) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Read ``train.csv``, ``test.csv`` and ``test_labels.csv`` from a directory."""
    root = Path(dir_path)
    if not root.is_dir():
        raise MissingFileError(f"{root}: dataset directory not found")
    cols_tr, train = _read_matrix(root / "train.csv")
    cols_te, test = _read_matrix(root / "test.csv")
    labels = _read_labels(root / "test_labels.csv")
    if train.shape[1] != test.shape[1]:
        raise DataError(f"{root}: train has d={train.shape[1]} but test has d={test.shape[1]}")
    if labels.shape[0] != test.shape[0]:
        raise LabelMismatchError(
            f"{root / 'test_labels.csv'}: {labels.shape[0]} labels for {test.shape[0]} test rows"
        )
    name = root.name
    return (
        TimeSeriesDataset(train, None, "train", name, cols_tr),
        TimeSeriesDataset(test, labels, "test", name, cols_te),
    )


def save_csv_dataset(dir_path, train: TimeSeriesDataset, test: TimeSeriesDataset):
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    for fname, ds in (("train.csv", train), ("test.csv", test)):
        with (root / fname).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ds.columns)
            w.writerows([[repr(float(v)) for v in row] for row in ds.values])
    with (root / "test_labels.csv").open("w", encoding="utf-8") as fh:
        fh.write("".join(f"{int(v)}\n" for v in test.labels))


# ----------------------------------------------------------------------------
# synthetic benchmark

ANOMALY_KINDS = ("spike", "level-shift", "collective-noise")
LOCAL_HALF_WIDTH = 10


@dataclass(frozen=True)
class SynthSpec:
    d: int = 5
    t_train: int = 2000
    t_test: int = 2000
    anomaly_rate: float = 0.01
    kinds: tuple[str, ...] = ("spike",)
    noise: float = 0.05

    def validate(self):
        if not 0.0 < self.anomaly_rate < 1.0:
            raise ConfigError(f"anomaly_rate must lie in (0, 1), got {self.anomaly_rate}")
        if self.d < 1 or self.t_train < 2 or self.t_test < 2:
            raise ConfigError(f"synthetic sizes must be positive (d={self.d}, t_train={self.t_train}, t_test={self.t_test})")
        bad = [k for k in self.kinds if k not in ANOMALY_KINDS]
        if bad or not self.kinds:
            raise ConfigError(f"unknown anomaly kinds {bad}; choose from {ANOMALY_KINDS}")


def local_median_mad(x: np.ndarray, t: int, half_width: int = LOCAL_HALF_WIDTH) -> tuple[float, float]:
    """Median and MAD of the neighbourhood of ``t`` excluding ``t`` itself."""
    lo, hi = max(0, t - half_width), min(len(x), t + half_width + 1)
    nb = np.concatenate([x[lo:t], x[t + 1 : hi]])
    med = float(np.median(nb))
    return med, float(np.median(np.abs(nb - med)))


def _segment_lengths(budget: int, rng: np.random.Generator) -> list[int]:
    out = []
    while budget > 0:
        n = int(min(budget, rng.integers(5, 21)))
        out.append(n)
        budget -= n
    return out


def generate_synthetic(spec: SynthSpec, seed: int) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Sinusoid mixtures with small noise; anomalies injected only into the test split.

    Exactly ``ceil(rate * t_test)`` test timestamps are labelled anomalous.  Spikes
    are isolated single points; level shifts and noise bursts are contiguous
    segments.  Anomaly placements keep a clean margin around each other.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    T = spec.t_train + spec.t_test
    t = np.arange(T, dtype=np.float64)
    series = np.zeros((T, spec.d))
    for j in range(spec.d):
        for _ in range(3):
            period = rng.uniform(20.0, 200.0)
            series[:, j] += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
        series[:, j] += rng.normal(0.0, spec.noise, T)
    train = series[: spec.t_train].copy()
    test = series[spec.t_train :].copy()
    clean = test.copy()

    n_anom = math.ceil(spec.anomaly_rate * spec.t_test)
    share = np.full(len(spec.kinds), n_anom // len(spec.kinds))
    share[: n_anom % len(spec.kinds)] += 1
    segments: list[tuple[str, int]] = []
    for kind, budget in zip(spec.kinds, share):
        if kind == "spike":
            segments += [("spike", 1)] * int(budget)
        else:
            segments += [(kind, n) for n in _segment_lengths(int(budget), rng)]

    labels = np.zeros(spec.t_test, dtype=np.int64)
    blocked = np.zeros(spec.t_test, dtype=bool)
    margin = LOCAL_HALF_WIDTH
    sigma = clean.std(axis=0)
    for kind, n in segments:
        for _ in range(10000):
            s = int(rng.integers(margin, spec.t_test - n - margin + 1))
            if not blocked[s - margin : s + n + margin].any():
                break
        else:
            raise ConfigError(f"cannot place {len(segments)} non-overlapping anomalies in {spec.t_test} points")
        blocked[s - margin : s + n + margin] = True
        labels[s : s + n] = 1
        n_vars = int(rng.integers(1, spec.d + 1))
        vars_ = rng.choice(spec.d, size=n_vars, replace=False)
        for j in sorted(vars_):
            sign = 1.0 if rng.random() < 0.5 else -1.0
            if kind == "spike":
                med, mad = local_median_mad(clean[:, j], s)
                test[s, j] = med + sign * (8.0 * mad + rng.uniform(2.0, 4.0) * sigma[j])
            elif kind == "level-shift":
                test[s : s + n, j] += sign * rng.uniform(1.0, 2.0) * sigma[j]
            else:
                test[s : s + n, j] += rng.normal(0.0, rng.uniform(1.0, 2.0) * sigma[j], n)

    cols = tuple(f"x{j}" for j in range(spec.d))
    return (
        TimeSeriesDataset(train, None, "train", "synthetic", cols),
        TimeSeriesDataset(test, labels, "test", "synthetic", cols),
    )
