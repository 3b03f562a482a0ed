"""Contrastive views, the stop-gradient consistency objective and per-point scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DimensionError
from .tensor import Tensor

LOSS_MODES = ("symmetric-kl", "asymmetric-kl", "js")
OBJECTIVES = ("difference", "sum")
ROW_EPS = 1e-8


def init_view_params(d_model: int, rng: np.random.Generator) -> dict[str, Tensor]:
    from .model import xavier_uniform

    dm = d_model
    bound = 1.0 / np.sqrt(dm)
    values = {
        "bilinear.w": rng.uniform(-bound, bound, size=(dm, dm, dm)),
        "bilinear.b": np.zeros(dm),
        "v1.out.w": xavier_uniform(rng, dm, dm),
        "v1.out.b": np.zeros(dm),
        "v2.hidden.w": xavier_uniform(rng, 2 * dm, dm),
        "v2.hidden.b": np.zeros(dm),
        "v2.out.w": xavier_uniform(rng, dm, dm),
        "v2.out.b": np.zeros(dm),
    }
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in values.items()}


def align(H_d: Tensor, H_t: Tensor) -> Tensor:
    """Drop the last row of ``H_t`` so row i pairs x[i+1]-x[i] with x[i]."""
    if H_t.shape[-2] != H_d.shape[-2] + 1 or H_t.shape[-1] != H_d.shape[-1]:
        raise DimensionError(f"cannot align H_t {H_t.shape} with H_d {H_d.shape}")
    return H_t[..., :-1, :]


def make_view1(H_d: Tensor, H_t: Tensor, params: dict[str, Tensor], slope: float = 0.01) -> Tensor:
    hidden = tn.leaky_relu(tn.bilinear(H_d, align(H_d, H_t), params["bilinear.w"], params["bilinear.b"]), slope)
    return tn.sigmoid(tn.linear(hidden, params["v1.out.w"], params["v1.out.b"]))


def make_view2(H_d: Tensor, H_t: Tensor, params: dict[str, Tensor], slope: float = 0.01) -> Tensor:
    cat = tn.concat([H_d, align(H_d, H_t)], axis=-1)
    hidden = tn.leaky_relu(tn.linear(cat, params["v2.hidden.w"], params["v2.hidden.b"]), slope)
    return tn.sigmoid(tn.linear(hidden, params["v2.out.w"], params["v2.out.b"]))


def row_normalize(v: Tensor) -> Tensor:
    """Divide each row by its (floored) sum so it can be read as a distribution."""
    return tn.div(v, tn.clamp_min(tn.sum(v, axis=-1, keepdims=True), ROW_EPS))


@dataclass
class ViewPair:
    v1: Tensor
    v2: Tensor
    alignment_note: str = "H_t final row dropped before pairing with H_d"


@dataclass
class LossBreakdown:
    l_v1: Tensor
    l_v2: Tensor
    total: Tensor
    mode: str
    rows: int


def _check_mode(mode: str):
    if mode not in LOSS_MODES:
        raise ConfigError(f"unknown loss mode {mode!r}; choose from {LOSS_MODES}")


def consistency_loss(v1: Tensor, v2: Tensor, mode: str = "symmetric-kl", objective: str = "difference", targets=None) -> LossBreakdown:
    """Positive-pair consistency loss with stop-gradient on the opposing view.

    ``l_v1`` measures view 1 against a frozen copy of view 2 and vice versa;
    ``total = (l_v1 - l_v2) / rows``.  For batched views the per-window sums are
    averaged over windows.  ``targets`` replaces the frozen operands with fixed
    arrays ``(P1, P2)``, which lets finite differences reproduce the exact
    gradient the stop-gradient objective produces.
    """
    _check_mode(mode)
    if objective not in OBJECTIVES:
        raise ConfigError(f"unknown objective {objective!r}; choose from {OBJECTIVES}")
    if v1.shape != v2.shape:
        raise DimensionError(f"view shape mismatch: {v1.shape} vs {v2.shape}")
    p1, p2 = row_normalize(v1), row_normalize(v2)
    if targets is None:
        s1, s2 = tn.stop_gradient(p1), tn.stop_gradient(p2)
    else:
        s1, s2 = Tensor(targets[0]), Tensor(targets[1])
    if mode == "symmetric-kl":
        l1 = tn.add(tn.kl_rows(p1, s2), tn.kl_rows(s2, p1))
        l2 = tn.add(tn.kl_rows(p2, s1), tn.kl_rows(s1, p2))
    elif mode == "asymmetric-kl":
        l1 = tn.kl_rows(p1, s2)
        l2 = tn.kl_rows(p2, s1)
    else:
        l1 = tn.sum(tn.js_per_row(p1, s2))
        l2 = tn.sum(tn.js_per_row(p2, s1))
    n_windows = int(np.prod(v1.shape[:-2], dtype=np.int64))
    if n_windows > 1:
        l1, l2 = tn.mul(l1, 1.0 / n_windows), tn.mul(l2, 1.0 / n_windows)
    rows = v1.shape[-2]
    combined = tn.sub(l1, l2) if objective == "difference" else tn.add(l1, l2)
    return LossBreakdown(l1, l2, tn.mul(combined, 1.0 / rows), mode, rows)


def anomaly_score(v1, v2, mode: str = "symmetric-kl") -> np.ndarray:
    """Per-timestamp scores for each window, shape ``(..., L)``.

    Row i holds KL(P1_i || P2_i) + KL(P2_i || P1_i) (twice the JS divergence in
    ``js`` mode).  The last timestamp has no differenced partner and repeats the
    score of the one before it.
    """
    _check_mode(mode)
    with tn.no_grad():
        p1 = row_normalize(tn.as_tensor(v1))
        p2 = row_normalize(tn.as_tensor(v2))
        if mode == "js":
            rows = 2.0 * tn.js_per_row(p1, p2).data
        else:
            rows = tn.kl_per_row(p1, p2).data + tn.kl_per_row(p2, p1).data
    return np.concatenate([rows, rows[..., -1:]], axis=-1)
