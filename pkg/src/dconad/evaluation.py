"""Thresholding, point adjustment and precision/recall/F1."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class ThresholdSpec:
    """Either a fixed cutoff (``fixed:1.1``) or a flagged-fraction quantile (``quantile:0.01``)."""

    mode: str = "fixed"
    value: float = 1.1

    @classmethod
    def parse(cls, text: str) -> "ThresholdSpec":
        text = str(text).strip()
        mode, sep, raw = text.partition(":")
        if not sep:
            mode, raw = "fixed", text
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"threshold: cannot parse {text!r} (expected fixed:<xi> or quantile:<r>)") from None
        spec = cls(mode.strip(), value)
        spec.validate()
        return spec

    def validate(self):
        if self.mode == "fixed":
            if not np.isfinite(self.value):
                raise ConfigError(f"threshold: fixed value must be finite, got {self.value}")
        elif self.mode == "quantile":
            if not 0.0 < self.value < 1.0:
                raise ConfigError(f"threshold: quantile ratio must lie in (0, 1), got {self.value}")
        else:
            raise ConfigError(f"threshold: unknown mode {self.mode!r}")

    def __str__(self):
        return f"{self.mode}:{self.value!r}"

    def resolve(self, scores: np.ndarray) -> float:
        if self.mode == "fixed":
            return float(self.value)
        return float(np.quantile(np.asarray(scores, dtype=np.float64), 1.0 - self.value, method="higher"))


def threshold_labels(scores, xi=None, *, ratio=None) -> np.ndarray:
    """Label 1 where ``score >= xi``.

    Pass ``ratio`` instead of ``xi`` to set the cutoff at the (1 - ratio)
    empirical quantile of ``scores``.  The cutoff is snapped up to an observed
    score, so with distinct scores about ``ratio * n`` points are flagged.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if (xi is None) == (ratio is None):
        raise ConfigError("threshold_labels needs exactly one of xi or ratio")
    spec = ThresholdSpec("fixed", float(xi)) if ratio is None else ThresholdSpec("quantile", float(ratio))
    spec.validate()
    return (scores >= spec.resolve(scores)).astype(np.int64)


def _segments(truth: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of 1s as half-open ``(start, stop)`` pairs."""
    padded = np.concatenate([[0], truth, [0]])
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


def point_adjust(pred, truth) -> np.ndarray:
    """Mark a whole true-anomaly segment as detected if any point inside it is flagged."""
    pred = np.asarray(pred).astype(np.int64)
    truth = np.asarray(truth).astype(np.int64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ContractError(f"point_adjust: pred shape {pred.shape} vs truth shape {truth.shape}")
    out = pred.copy()
    for start, stop in _segments(truth):
        if out[start:stop].any():
            out[start:stop] = 1
    return out


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    adjusted: bool
    threshold_used: float
    tp: int
    fp: int
    fn: int
    tn: int

    def to_text(self, extra: dict | None = None) -> str:
        items = dict(extra or {})
        for k, v in asdict(self).items():
            items[k] = repr(v) if isinstance(v, float) else str(v).lower() if isinstance(v, bool) else v
        return "".join(f"{k}={v}\n" for k, v in items.items())

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line and not line.startswith("#"))
        return cls(
            float(kv["precision"]), float(kv["recall"]), float(kv["f1"]), kv["adjusted"] == "true",
            float(kv["threshold_used"]), int(kv["tp"]), int(kv["fp"]), int(kv["fn"]), int(kv["tn"]),
        )


def _check_binary(name: str, x: np.ndarray):
    if not np.isin(x, (0, 1)).all():
        raise ContractError(f"prf1: {name} must be binary")


def prf1(pred, truth, adjusted: bool = False, threshold_used: float = float("nan")) -> EvalReport:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ContractError(f"prf1: pred shape {pred.shape} vs truth shape {truth.shape}")
    _check_binary("pred", pred)
    _check_binary("truth", truth)
    p, t = pred.astype(bool), truth.astype(bool)
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    tn = int(np.sum(~p & ~t))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(precision, recall, f1, adjusted, float(threshold_used), tp, fp, fn, tn)


def evaluate_scores(scores, truth, threshold: ThresholdSpec, adjust: bool = True) -> EvalReport:
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape:
        raise ContractError(f"evaluate: {scores.size} scores vs {truth.size} labels")
    xi = threshold.resolve(scores)
    pred = (scores >= xi).astype(np.int64)
    if adjust:
        pred = point_adjust(pred, truth)
    return prf1(pred, truth, adjusted=adjust, threshold_used=xi)
