"""Deterministic full-batch-sequence training loop.

Wells are batched whole (each well contributes its full [T, 8] sequence),
shuffled per epoch by a seeded generator. Optimization is AdamW with
decoupled weight decay, a per-epoch cosine learning rate schedule, global
gradient norm clipping, and early stopping on validation loss with best-epoch
weight restoration. Given the same seed and data, two runs produce identical
histories and identical final weights.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .datamodel import (
    NormStats,
    WellRecord,
    fit_norm_stats,
    normalize_ops,
    normalize_targets,
)
from .errors import ConfigurationError, TrainingError
from .losses import LossParts, LossWeights, total_loss, well_loss
from .network import WellModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-3
    batch_wells: int = 8
    max_epochs: int = 60  # full-scale runs use 200
    patience: int = 15
    grad_clip_norm: float = 1.0
    min_improvement: float = 1e-6
    seed: int = 42

    def __post_init__(self):
        for name in ("lr", "weight_decay", "batch_wells", "grad_clip_norm", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.max_epochs > 0 and self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")


@dataclass
class TrainHistory:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")
    stop_reason: str = "not started"

    def record(self, entry: dict):
        self.epochs.append(entry)


def cosine_lr(epoch: int, max_epochs: int, lr_max: float, lr_min: float = 0.0) -> float:
    """Per-epoch cosine annealing from lr_max (epoch 0) down to lr_min."""
    if not 0 <= epoch <= max_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {max_epochs}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * epoch / max_epochs))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float = 1.0) -> dict[str, np.ndarray]:
    """Scale all gradients so the global L2 norm does not exceed max_norm."""
    total = 0.0
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient encountered")
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def init(cls, weights: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(w) for k, w in weights.items()},
                   v={k: np.zeros_like(w) for k, w in weights.items()})


def adamw_step(weights: dict, grads: dict, state: AdamState, lr: float, wd: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One AdamW update in place. Weight decay is decoupled: w <- w - lr*wd*w
    is applied separately from the bias-corrected adaptive step."""
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, w in weights.items():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        w -= lr * wd * w
        w -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return weights, state


def _prepare(records: list[WellRecord], model: WellModel):
    """Pre-normalize everything once per fit call."""
    prepped = []
    for rec in records:
        c_vec = (model.design_vector(rec.design)
                 if model.config.variant != "no_config" else np.zeros(24))
        prepped.append({
            "c_vec": c_vec,
            "ops_norm": normalize_ops(rec.ops, model.stats),
            "ops_raw": rec.ops,
            "targets_norm": normalize_targets(rec.targets.continuous(), model.stats),
            "labels_bh": rec.targets.frbh,
            "labels_wh": rec.targets.frwh,
        })
    return prepped


def _epoch_eval(model: WellModel, prepped, weights: LossWeights):
    """Mean loss over wells in evaluation mode (no dropout, no gradients)."""
    cfg = model.config
    totals, parts_sum = [], LossParts()
    for well in prepped:
        outputs, _ = model.forward_core(well["c_vec"], well["ops_norm"], train=False)
        t, parts, _, _ = well_loss(outputs, well["targets_norm"], well["labels_bh"],
                                   well["labels_wh"], well["ops_raw"], model.stats,
                                   weights, cfg.use_physics, cfg.use_regime,
                                   with_grads=False)
        totals.append(t)
        for f in ("vfm", "pres", "reg_bh", "reg_wh", "nonneg", "pres_order", "temp_order"):
            setattr(parts_sum, f, getattr(parts_sum, f) + getattr(parts, f))
    n = max(len(prepped), 1)
    for f in ("vfm", "pres", "reg_bh", "reg_wh", "nonneg", "pres_order", "temp_order"):
        setattr(parts_sum, f, getattr(parts_sum, f) / n)
    return float(np.mean(totals)) if totals else float("nan"), parts_sum


def assert_no_leakage(stats: NormStats, train_records: list[WellRecord]):
    """The model's stats must be exactly the stats of the training split."""
    expected = fit_norm_stats(train_records)
    same = all(
        np.array_equal(getattr(stats, f), getattr(expected, f))
        for f in ("design_mean", "design_std", "ops_mean", "ops_std", "target_mean", "target_std")
    )
    if not same:
        raise ConfigurationError(
            "normalization stats do not match the training split; "
            "stats must be fitted on training wells only (no validation/test leakage)")


def fit(model: WellModel, train_records: list[WellRecord], val_records: list[WellRecord],
        train_cfg: TrainConfig, loss_weights: LossWeights = LossWeights()):
    """Train in place; returns (model, TrainHistory) with best-epoch weights."""
    assert_no_leakage(model.stats, train_records)
    cfg = model.config
    history = TrainHistory()
    if train_cfg.max_epochs == 0:
        history.stop_reason = "zero epoch budget"
        return model, history

    train_prep = _prepare(train_records, model)
    val_prep = _prepare(val_records, model)
    rng = np.random.default_rng(train_cfg.seed)
    state = AdamState.init(model.params)
    best_params = copy.deepcopy(model.params)
    bad_epochs = 0

    for epoch in range(train_cfg.max_epochs):
        lr = cosine_lr(epoch, train_cfg.max_epochs, train_cfg.lr)
        order = rng.permutation(len(train_prep))
        epoch_totals = []
        epoch_parts = LossParts()
        for start in range(0, len(order), train_cfg.batch_wells):
            batch = [train_prep[i] for i in order[start : start + train_cfg.batch_wells]]
            grad_sum = None
            for well in batch:
                outputs, caches = model.forward_core(well["c_vec"], well["ops_norm"],
                                                     train=True, rng=rng)
                t, parts, d_out, breakdown = well_loss(
                    outputs, well["targets_norm"], well["labels_bh"], well["labels_wh"],
                    well["ops_raw"], model.stats, loss_weights,
                    cfg.use_physics, cfg.use_regime)
                if not np.isfinite(t):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}: {breakdown}")
                epoch_totals.append(t)
                for f in ("vfm", "pres", "reg_bh", "reg_wh", "nonneg", "pres_order", "temp_order"):
                    setattr(epoch_parts, f, getattr(epoch_parts, f) + getattr(parts, f))
                g = model.backward(caches, d_out)
                if grad_sum is None:
                    grad_sum = g
                else:
                    for k in grad_sum:
                        grad_sum[k] += g[k]
            for k in grad_sum:
                grad_sum[k] /= len(batch)
            grad_sum = clip_gradients(grad_sum, train_cfg.grad_clip_norm)
            adamw_step(model.params, grad_sum, state, lr, train_cfg.weight_decay)

        n_train = len(train_prep)
        for f in ("vfm", "pres", "reg_bh", "reg_wh", "nonneg", "pres_order", "temp_order"):
            setattr(epoch_parts, f, getattr(epoch_parts, f) / n_train)
        train_total = float(np.mean(epoch_totals))
        val_total, _ = _epoch_eval(model, val_prep, loss_weights)
        _, breakdown = total_loss(epoch_parts, loss_weights, cfg.use_physics, cfg.use_regime)
        log.info(
            "epoch=%d train_total=%.6f val_total=%.6f l_vfm=%.6f l_pres=%.6f "
            "l_reg=%.6f l_phys=%.6f lr=%.6g",
            epoch, train_total, val_total, breakdown["l_vfm"], breakdown["l_pres"],
            breakdown["l_reg"], breakdown["l_phys"], lr)
        history.record({"epoch": epoch, "train_total": train_total, "val_total": val_total,
                        "lr": lr, **{k: v for k, v in breakdown.items() if k != "total"}})

        if val_total < history.best_val - train_cfg.min_improvement:
            history.best_val = val_total
            history.best_epoch = epoch
            best_params = copy.deepcopy(model.params)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > train_cfg.patience:
                history.stop_reason = f"early stop after epoch {epoch} (patience {train_cfg.patience})"
                break
    else:
        history.stop_reason = "max epochs reached"

    model.params = best_params
    return model, history
