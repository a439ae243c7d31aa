"""Multi-task training objective.

Regression losses operate in normalized target space; the soft physics
penalties operate on denormalized predictions and are divided by the
training-split variance of the corresponding target, which makes them
commensurate with the normalized MSE terms and invariant under unit changes.

Every loss has a closed-form gradient companion used by the trainer; the
gradient implementations are verified against central finite differences in
the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import NormStats


@dataclass(frozen=True)
class LossWeights:
    alpha_vfm: float = 1.0
    alpha_pres: float = 1.0
    beta_reg: float = 2.0
    delta: float = 0.5
    focal_gamma: float = 2.0

    def __post_init__(self):
        for name in ("alpha_vfm", "alpha_pres", "beta_reg", "delta", "focal_gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction (finite for any finite logits)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# Task losses
# ---------------------------------------------------------------------------

def mse(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float((diff * diff).mean())


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return 2.0 * (pred - target) / pred.size


def vfm_loss(pred_norm: np.ndarray, target_norm: np.ndarray) -> float:
    """MSE over the three normalized phase components, all T*3 entries."""
    return mse(pred_norm, target_norm)


def pressure_loss(pred_norm: np.ndarray, target_norm: np.ndarray) -> float:
    """MSE over normalized bottomhole pressure and temperature."""
    return mse(pred_norm, target_norm)


def focal_loss(logits: np.ndarray, labels: np.ndarray, gamma: float) -> float:
    """Mean of -(1 - p_t)^gamma * log(p_t) over the sequence.

    p_t is the softmax probability of the true class, computed through
    log-sum-exp so the value is finite for any finite logits.
    """
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise ValueError("focal loss requires finite logits")
    labels = np.asarray(labels, dtype=int)
    logp = log_softmax(logits)[np.arange(len(labels)), labels]
    p_t = np.exp(logp)
    return float(np.mean(-((1.0 - p_t) ** gamma) * logp))


def focal_loss_grad(logits: np.ndarray, labels: np.ndarray, gamma: float) -> np.ndarray:
    """d(focal)/d(logits). The 1/p_t factor cancels analytically, so the
    gradient is finite even for saturated probabilities."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n = len(labels)
    p = softmax(logits)
    logp = log_softmax(logits)[np.arange(n), labels]
    p_t = p[np.arange(n), labels]
    onehot = np.zeros_like(p)
    onehot[np.arange(n), labels] = 1.0
    if gamma == 0.0:
        coeff = -np.ones(n)  # plain cross-entropy
    else:
        coeff = gamma * (1.0 - p_t) ** (gamma - 1.0) * p_t * logp - (1.0 - p_t) ** gamma
    return coeff[:, None] * (onehot - p) / n


# ---------------------------------------------------------------------------
# Soft physics penalties (denormalized space, variance-normalized)
# ---------------------------------------------------------------------------

def nonneg_penalty(pred_flows_denorm: np.ndarray, sigma2: np.ndarray) -> float:
    """Sum over phases of mean squared negative part, each divided by the
    phase's training variance."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be strictly positive")
    neg = np.maximum(-pred_flows_denorm, 0.0)
    return float(((neg * neg).mean(axis=0) / sigma2).sum())


def nonneg_penalty_grad(pred_flows_denorm: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    t_len = pred_flows_denorm.shape[0]
    neg = np.maximum(-pred_flows_denorm, 0.0)
    return -2.0 * neg / (t_len * np.asarray(sigma2, dtype=float))


def pressure_order_penalty(pbh_pred, pwh_measured, sigma2_pbh: float) -> float:
    """Penalizes bottomhole pressure predicted at or below the wellhead."""
    if sigma2_pbh <= 0:
        raise ValueError("sigma2 must be strictly positive")
    gap = np.maximum(np.asarray(pwh_measured, dtype=float) - np.asarray(pbh_pred, dtype=float), 0.0)
    return float((gap * gap).mean() / sigma2_pbh)


def pressure_order_penalty_grad(pbh_pred, pwh_measured, sigma2_pbh: float) -> np.ndarray:
    pbh_pred = np.asarray(pbh_pred, dtype=float)
    gap = np.maximum(np.asarray(pwh_measured, dtype=float) - pbh_pred, 0.0)
    return -2.0 * gap / (len(pbh_pred) * sigma2_pbh)


def temp_order_penalty(tbh_pred, twh_measured, sigma2_tbh: float) -> float:
    """Penalizes bottomhole temperature predicted at or below the wellhead."""
    return pressure_order_penalty(tbh_pred, twh_measured, sigma2_tbh)


def temp_order_penalty_grad(tbh_pred, twh_measured, sigma2_tbh: float) -> np.ndarray:
    return pressure_order_penalty_grad(tbh_pred, twh_measured, sigma2_tbh)


# ---------------------------------------------------------------------------
# Total
# ---------------------------------------------------------------------------

@dataclass
class LossParts:
    """Unweighted component losses of one batch or well."""

    vfm: float = 0.0
    pres: float = 0.0
    reg_bh: float = 0.0
    reg_wh: float = 0.0
    nonneg: float = 0.0
    pres_order: float = 0.0
    temp_order: float = 0.0

    @property
    def physics(self) -> float:
        return self.nonneg + self.pres_order + self.temp_order


def total_loss(parts: LossParts, weights: LossWeights,
               use_physics: bool = True, use_regime: bool = True):
    """Weighted multi-task total; disabled terms contribute exactly 0.

    Returns (total, breakdown) where the breakdown maps term names to their
    unweighted values plus the weighted total.
    """
    total = weights.alpha_vfm * parts.vfm + weights.alpha_pres * parts.pres
    reg = parts.reg_bh + parts.reg_wh if use_regime else 0.0
    phys = parts.physics if use_physics else 0.0
    total += weights.beta_reg * reg + weights.delta * phys
    breakdown = {
        "l_vfm": parts.vfm,
        "l_pres": parts.pres,
        "l_reg": reg,
        "l_phys": phys,
        "total": total,
    }
    return total, breakdown


def well_loss(outputs: dict, targets_norm: np.ndarray, labels_bh, labels_wh,
              ops_raw: np.ndarray, stats: NormStats, weights: LossWeights,
              use_physics: bool, use_regime: bool, with_grads: bool = True):
    """Loss of one well, plus gradients wrt the normalized head outputs.

    targets_norm: [T, 5] normalized continuous targets (3 flows, PBH, TBH);
    ops_raw supplies the measured PWH/TWH (columns 2 and 4, original units)
    for the ordering penalties.
    """
    comp_pred = outputs["comp"]
    pres_pred = outputs["pres"]
    comp_tgt = targets_norm[:, :3]
    pres_tgt = targets_norm[:, 3:5]
    sigma2 = stats.target_sigma2()
    std, mean = stats.target_std, stats.target_mean

    parts = LossParts(vfm=vfm_loss(comp_pred, comp_tgt),
                      pres=pressure_loss(pres_pred, pres_tgt))
    d_comp = weights.alpha_vfm * mse_grad(comp_pred, comp_tgt) if with_grads else None
    d_pres = weights.alpha_pres * mse_grad(pres_pred, pres_tgt) if with_grads else None
    d_lbh = d_lwh = None

    if use_regime:
        parts.reg_bh = focal_loss(outputs["logits_bh"], labels_bh, weights.focal_gamma)
        parts.reg_wh = focal_loss(outputs["logits_wh"], labels_wh, weights.focal_gamma)
        if with_grads:
            d_lbh = weights.beta_reg * focal_loss_grad(outputs["logits_bh"], labels_bh, weights.focal_gamma)
            d_lwh = weights.beta_reg * focal_loss_grad(outputs["logits_wh"], labels_wh, weights.focal_gamma)

    if use_physics:
        flows = comp_pred * std[:3] + mean[:3]
        pbh = pres_pred[:, 0] * std[3] + mean[3]
        tbh = pres_pred[:, 1] * std[4] + mean[4]
        pwh = ops_raw[:, 2]
        twh = ops_raw[:, 4]
        parts.nonneg = nonneg_penalty(flows, sigma2[:3])
        parts.pres_order = pressure_order_penalty(pbh, pwh, sigma2[3])
        parts.temp_order = temp_order_penalty(tbh, twh, sigma2[4])
        if with_grads:
            # Chain rule through denormalization: d(denorm)/d(norm) = std.
            d_comp = d_comp + weights.delta * nonneg_penalty_grad(flows, sigma2[:3]) * std[:3]
            d_pres = d_pres.copy()
            d_pres[:, 0] += weights.delta * pressure_order_penalty_grad(pbh, pwh, sigma2[3]) * std[3]
            d_pres[:, 1] += weights.delta * temp_order_penalty_grad(tbh, twh, sigma2[4]) * std[4]

    total, breakdown = total_loss(parts, weights, use_physics, use_regime)
    grads = {"comp": d_comp, "pres": d_pres, "logits_bh": d_lbh, "logits_wh": d_lwh}
    return total, parts, (grads if with_grads else None), breakdown
