"""Training loop, scoring, evaluation, sweeps and the model-level gradient check."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .checkpoint import checkpoint_bytes, load_checkpoint, param_checksum
from .config import RunConfig
from .data import (
    Normalizer,
    TimeSeriesDataset,
    generate_synthetic,
    load_csv_dataset,
    make_windows,
    score_owner_mask,
)
from .errors import CompatibilityError, ConfigError, ContractError, DConADError, NumericError
from .evaluation import EvalReport, evaluate_scores
from .fdcheck import numerical_grad, rel_error
from .model import DetectorParams, encode
from .optim import AdamState, adam_apply
from .views import anomaly_score, consistency_loss, make_view1, make_view2, row_normalize

log = logging.getLogger(__name__)

GRADCHECK_TOL = 1e-3
SWEEP_AXES = {
    "heads": "n_heads",
    "d_model": "d_model",
    "layers": "n_layers",
    "window": "window",
    "ablation": None,
}
ABLATIONS = {
    "full": {"enable_time_block": True, "enable_rel_block": True},
    "time-only": {"enable_time_block": True, "enable_rel_block": False},
    "rel-only": {"enable_time_block": False, "enable_rel_block": True},
}


def load_data(config: RunConfig) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    if config.data_dir:
        return load_csv_dataset(config.data_dir)
    return generate_synthetic(config.synth_spec(), config.seed)


def forward_views(batch, params: DetectorParams):
    H_t, H_d = encode(batch, params)
    slope = params.config.leaky_slope
    return make_view1(H_d, H_t, params.views, slope), make_view2(H_d, H_t, params.views, slope)


# ----------------------------------------------------------------------------
# training


@dataclass
class TrainLog:
    seed: int
    epochs: list[dict] = field(default_factory=list)
    checksum: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# seed={self.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "total", "l_v1", "l_v2", "wall_time"])
        for e in self.epochs:
            w.writerow([e["epoch"], repr(float(e["total"])), repr(float(e["l_v1"])), repr(float(e["l_v2"])), f"{e['wall_time']:.3f}"])
        buf.write(f"# checksum={self.checksum}\n")
        return buf.getvalue()


@dataclass
class TrainResult:
    params: DetectorParams
    normalizer: Normalizer
    log: TrainLog


def train(config: RunConfig, out_dir=None, data=None) -> TrainResult:
    """Fit both encoders and the view heads on the (assumed normal) training split."""
    config.validate()
    train_ds, _ = data if data is not None else load_data(config)
    normalizer = Normalizer.fit(train_ds.values, config.diff_order)
    z, dz = normalizer.transform(train_ds.values)
    windows = make_windows(z, config.window, config.stride, diff_series=dz)

    params = DetectorParams.init(config.encoder_config(train_ds.n_vars), config.seed)
    plist = params.parameters()
    state = AdamState.for_params(plist, lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)
    tlog = TrainLog(config.seed)

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(windows))
        sums = np.zeros(3)
        n_batches = 0
        for b, lo in enumerate(range(0, len(order), config.batch_size)):
            sub = windows.subset(np.sort(order[lo : lo + config.batch_size]))
            with tn.Tape():
                v1, v2 = forward_views(sub, params)
                loss = consistency_loss(v1, v2, config.loss_mode, config.objective)
                vals = np.array([loss.total.item(), loss.l_v1.item(), loss.l_v2.item()])
                if not np.isfinite(vals).all():
                    raise NumericError(
                        f"non-finite loss at epoch {epoch} batch {b} "
                        f"(window starts {sub.start_indices.tolist()}): total={vals[0]}, l_v1={vals[1]}, l_v2={vals[2]}"
                    )
                params.zero_grad()
                tn.backward(loss.total)
            adam_apply(plist, [p.grad for p in plist], state)
            sums += vals
            n_batches += 1
        mean = sums / max(n_batches, 1)
        entry = {"epoch": epoch, "total": mean[0], "l_v1": mean[1], "l_v2": mean[2], "wall_time": time.perf_counter() - t0}
        tlog.epochs.append(entry)
        log.info("epoch %d total=%.6g l_v1=%.6g l_v2=%.6g (%.1fs)", epoch, *mean, entry["wall_time"])

    tlog.checksum = param_checksum(params)
    result = TrainResult(params, normalizer, tlog)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
        (out / "checkpoint.bin").write_bytes(checkpoint_bytes(params, normalizer, config.to_dict()))
        (out / "trainlog.csv").write_text(tlog.to_csv(), encoding="utf-8")
    return result


# ----------------------------------------------------------------------------
# scoring


@dataclass
class ScoreSeries:
    scores: np.ndarray
    threshold: str
    source: str
    truth: np.ndarray | None = None
    pred: np.ndarray | None = None
    seed: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# seed={self.seed} source={self.source} threshold={self.threshold}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["timestamp_index", "score", "pred", "truth"])
        for i, s in enumerate(self.scores):
            pred = "" if self.pred is None else int(self.pred[i])
            truth = "" if self.truth is None else int(self.truth[i])
            w.writerow([i, repr(float(s)), pred, truth])
        return buf.getvalue()


def read_scores_csv(path) -> tuple[np.ndarray, np.ndarray | None]:
    rows = [r for r in Path(path).read_text(encoding="utf-8").splitlines() if r and not r.startswith("#")]
    reader = csv.DictReader(rows)
    scores, truth = [], []
    for r in reader:
        scores.append(float(r["score"]))
        truth.append(r["truth"])
    labels = None if any(t == "" for t in truth) else np.array([int(t) for t in truth])
    return np.array(scores), labels


_COMPAT_FIELDS = ("window", "d_model", "n_heads", "n_layers", "ff_inner", "enable_time_block", "enable_rel_block", "diff_order")


def check_compatible(config: RunConfig, saved: dict, d_in: int, ckpt_d_in: int):
    for name in _COMPAT_FIELDS:
        if name in saved and saved[name] != getattr(config, name):
            raise CompatibilityError(f"{name}: checkpoint has {saved[name]!r}, config has {getattr(config, name)!r}")
    if d_in != ckpt_d_in:
        raise CompatibilityError(f"d: checkpoint expects {ckpt_d_in} variables, test data has {d_in}")


def window_scores(windows, params: DetectorParams, mode: str, batch_size: int = 64) -> np.ndarray:
    out = []
    with tn.no_grad():
        for lo in range(0, len(windows), batch_size):
            v1, v2 = forward_views(windows.subset(slice(lo, lo + batch_size)), params)
            out.append(anomaly_score(v1, v2, mode))
    return np.concatenate(out, axis=0)


def score_series(config: RunConfig, params: DetectorParams, normalizer: Normalizer, test_ds: TimeSeriesDataset) -> np.ndarray:
    """One score per test timestamp from non-overlapping windows plus a right-aligned tail."""
    L, T = config.window, test_ds.length
    z, dz = normalizer.transform(test_ds.values)
    windows = make_windows(z, L, stride=L, cover_tail=True, diff_series=dz)
    per_window = window_scores(windows, params, config.loss_mode, config.batch_size)
    owner = score_owner_mask(windows.start_indices, L, T)
    scores = np.full(T, np.nan)
    for b, s in enumerate(windows.start_indices):
        scores[s : s + L][owner[b]] = per_window[b][owner[b]]
    return scores


def score(config: RunConfig, checkpoint=None, out_dir=None, data=None, trained: TrainResult | None = None) -> ScoreSeries:
    """Score the test split with a checkpoint file or an in-memory training result."""
    config.validate()
    if trained is None:
        if checkpoint is None:
            raise ConfigError("checkpoint: a checkpoint path is required to score")
        params, normalizer, saved = load_checkpoint(checkpoint)
    else:
        params, normalizer, saved = trained.params, trained.normalizer, config.to_dict()
    _, test_ds = data if data is not None else load_data(config)
    check_compatible(config, saved, test_ds.n_vars, params.config.d_in)
    scores = score_series(config, params, normalizer, test_ds)
    spec = config.threshold_spec()
    xi = spec.resolve(scores)
    series = ScoreSeries(
        scores, str(spec), param_checksum(params), test_ds.labels, (scores >= xi).astype(np.int64), config.seed
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "scores.csv").write_text(series.to_csv(), encoding="utf-8")
    return series


# ----------------------------------------------------------------------------
# evaluation


def evaluate(config: RunConfig, scores, labels, out_dir=None, raw_twin: bool = True) -> EvalReport:
    """Threshold, point-adjust (per config) and report precision/recall/F1."""
    config.validate()
    scores = np.asarray(scores, dtype=np.float64)
    if labels is None:
        raise ContractError("evaluate: ground-truth labels are required")
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ContractError(f"evaluate: {scores.size} scores vs {labels.size} labels")
    spec = config.threshold_spec()
    report = evaluate_scores(scores, labels, spec, adjust=config.adjust)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        extra = {"seed": config.seed, "threshold_spec": str(spec)}
        (out / "metrics.txt").write_text(report.to_text(extra), encoding="utf-8")
        if raw_twin and config.adjust:
            raw = evaluate_scores(scores, labels, spec, adjust=False)
            (out / "metrics_raw.txt").write_text(raw.to_text(extra), encoding="utf-8")
    return report


def run_pipeline(config: RunConfig, out_dir=None) -> tuple[TrainResult, ScoreSeries, EvalReport]:
    config.validate()
    data = load_data(config)
    trained = train(config, out_dir, data)
    series = score(config, out_dir=out_dir, data=data, trained=trained)
    report = evaluate(config, series.scores, series.truth, out_dir)
    return trained, series, report


# ----------------------------------------------------------------------------
# sweeps


def _sweep_config(config: RunConfig, axis: str, value) -> RunConfig:
    if axis == "ablation":
        if value not in ABLATIONS:
            raise ConfigError(f"ablation: unknown variant {value!r}; choose from {sorted(ABLATIONS)}")
        return config.replace(**ABLATIONS[value]).validate()
    return config.replace(**{SWEEP_AXES[axis]: int(value)}).validate()


def sweep(config: RunConfig, axis: str, values, out_dir=None) -> list[dict]:
    """One full train/score/evaluate per value; failures are recorded and the sweep moves on."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {sorted(SWEEP_AXES)}, got {axis!r}")
    config.validate()
    rows = []
    for value in values:
        row = {"axis": axis, "value": value, "precision": "", "recall": "", "f1": "", "status": "ok"}
        try:
            _, _, report = run_pipeline(_sweep_config(config, axis, value))
            row.update(precision=report.precision, recall=report.recall, f1=report.f1)
        except DConADError as exc:
            row["status"] = f"{exc.category}: {exc}"
            log.warning("sweep %s=%s failed: %s", axis, value, exc)
        rows.append(row)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        buf.write(f"# seed={config.seed}\n")
        w = csv.DictWriter(buf, ["axis", "value", "precision", "recall", "f1", "status"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        (out / f"sweep_{axis}.csv").write_text(buf.getvalue(), encoding="utf-8")
    return rows


# ----------------------------------------------------------------------------
# gradient check


def param_group(name: str) -> str:
    """Map a parameter name to its reporting group, e.g. ``orig.time-attention``."""
    parts = name.split(".")
    if parts[0] == "views":
        return "views.bilinear" if parts[1] == "bilinear" else "views.linear"
    stream = parts[0]
    if parts[1] == "embed":
        return f"{stream}.embedding"
    block, piece = parts[2], parts[3]
    if piece.startswith("ff"):
        kind = "ff"
    elif piece.startswith("ln"):
        kind = "layernorm"
    else:
        kind = "attention"
    return f"{stream}.{block}-{kind}"


@dataclass
class GradcheckReport:
    groups: dict[str, float]
    tolerance: float = GRADCHECK_TOL

    @property
    def failures(self) -> list[str]:
        return [g for g, e in self.groups.items() if not e < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_text(self) -> str:
        lines = [f"{g}\t{e:.3e}\t{'ok' if e < self.tolerance else 'FAIL'}\n" for g, e in self.groups.items()]
        lines.append(f"overall\t{max(self.groups.values()):.3e}\t{'ok' if self.passed else 'FAIL'}\n")
        return "".join(lines)


def toy_gradcheck_config(config: RunConfig | None = None) -> RunConfig:
    base = config or RunConfig()
    return base.replace(window=min(base.window, 8), d_model=min(base.d_model, 8), n_layers=1, n_heads=1, ff_inner=0)


def gradcheck(config: RunConfig | None = None, d_in: int = 3, n_windows: int = 2, seed: int | None = None) -> GradcheckReport:
    """Compare analytic parameter gradients of the training loss against central differences.

    The stop-gradient operands are held at their values from the unperturbed
    parameters while differencing, which is exactly the function whose
    gradient the tape computes.
    """
    cfg = toy_gradcheck_config(config)
    if cfg.window > 8 or cfg.d_model > 8:
        raise ConfigError("gradcheck needs window <= 8 and d_model <= 8")
    seed = cfg.seed if seed is None else seed
    params = DetectorParams.init(cfg.encoder_config(d_in), seed)
    rng = np.random.default_rng(seed + 2)
    x = rng.normal(size=(n_windows, cfg.window, d_in))

    class _Batch:
        windows = x
        diff_windows = np.diff(x, axis=1)

    with tn.Tape():
        v1, v2 = forward_views(_Batch, params)
        loss = consistency_loss(v1, v2, cfg.loss_mode, cfg.objective)
        with tn.no_grad():
            targets = (row_normalize(v1).data, row_normalize(v2).data)
        params.zero_grad()
        tn.backward(loss.total)

    def f():
        with tn.no_grad():
            a, b = forward_views(_Batch, params)
            return consistency_loss(a, b, cfg.loss_mode, cfg.objective, targets=targets).total.item()

    analytic: dict[str, list] = {}
    numeric: dict[str, list] = {}
    for name, t in params.named_parameters():
        g = param_group(name)
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        analytic.setdefault(g, []).append(grad.ravel())
        numeric.setdefault(g, []).append(numerical_grad(f, t.data).ravel())
    groups = {g: rel_error(np.concatenate(analytic[g]), np.concatenate(numeric[g])) for g in analytic}
    return GradcheckReport(groups)
