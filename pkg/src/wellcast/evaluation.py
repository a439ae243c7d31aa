"""Metrics and the ablation harness.

All metrics operate on denormalized predictions. MAPE excludes targets whose
magnitude falls below a floor (default 0.1 kg/s); the floor and the number of
excluded points are carried in every report so the convention is never
implicit. Ablation reports are plain CSVs with one row per trained cell.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import NormStats, WellRecord, fit_norm_stats, SplitAssignment
from .errors import ConfigurationError
from .losses import LossWeights, softmax
from .network import ModelConfig, PredictionSequence, WellModel
from .training import TrainConfig, fit

log = logging.getLogger(__name__)

MAPE_FLOOR_KG_S = 0.1


def rmse(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError("pred and target must have matching shapes")
    if pred.size == 0:
        raise ValueError("rmse of empty input")
    return float(np.sqrt(((pred - target) ** 2).mean()))


def mape(pred, target, floor: float = MAPE_FLOOR_KG_S):
    """Mean absolute percentage error, excluding |target| < floor.

    Returns (mape_percent, n_used, n_excluded); nan when nothing survives
    the floor.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.size == 0:
        raise ValueError("mape of empty input")
    mask = np.abs(target) >= floor
    n_used = int(mask.sum())
    if n_used == 0:
        return float("nan"), 0, int(pred.size)
    value = 100.0 * float(np.mean(np.abs(pred[mask] - target[mask]) / np.abs(target[mask])))
    return value, n_used, int(pred.size - n_used)


def regime_accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    if logits is None:
        raise ConfigurationError("regime accuracy requested but the model has no regime head")
    pred = np.argmax(logits, axis=-1)
    return float((pred == np.asarray(labels)).mean())


def confusion_matrix(logits: np.ndarray, labels: np.ndarray, n_classes: int = 3) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    if logits is None:
        raise ConfigurationError("confusion matrix requested but the model has no regime head")
    pred = np.argmax(logits, axis=-1)
    mat = np.zeros((n_classes, n_classes), dtype=int)
    for t, p in zip(np.asarray(labels, dtype=int), pred):
        mat[t, p] += 1
    return mat


def mass_residual(pred: PredictionSequence) -> float:
    """Mean |w_tot - (w_oil + w_wat + w_gas + w_gl)|. Identically zero for
    the structural model; nonzero only for stubs that break the derivation."""
    resid = pred.w_tot - (pred.w_oil + pred.w_wat + pred.w_gas + pred.w_gl)
    return float(np.abs(resid).mean())


def physics_violations(pred: PredictionSequence, ops_raw: np.ndarray) -> dict[str, int]:
    """Counts of physically impossible predictions against measured PWH/TWH.

    negative_flow counts every (point, phase) pair below zero; the ordering
    violations count points at or below the wellhead value.
    """
    flows = np.stack([pred.w_oil, pred.w_wat, pred.w_gas], axis=1)
    return {
        "negative_flow": int((flows < 0.0).sum()),
        "pressure_order": int((pred.p_bh <= ops_raw[:, 2]).sum()),
        "temp_order": int((pred.t_bh <= ops_raw[:, 4]).sum()),
    }


def slug_probability(logits_bh: np.ndarray) -> np.ndarray:
    """Per-step softmax probability of the slug/churn class at bottomhole."""
    if logits_bh is None:
        raise ConfigurationError("slug probability requested but the model has no regime head")
    return softmax(logits_bh)[:, 1]


# ---------------------------------------------------------------------------
# Per-model test-set evaluation
# ---------------------------------------------------------------------------

def evaluate_model(model: WellModel, records: list[WellRecord],
                   mape_floor: float = MAPE_FLOOR_KG_S) -> dict:
    """All metrics over a set of wells, pooled across wells and time steps."""
    preds, refs = [], []
    for rec in records:
        preds.append(model.predict(rec.design, rec.ops))
        refs.append(rec)

    def pooled(fn):
        return np.concatenate([fn(p, r) for p, r in zip(preds, refs)])

    w_oil = pooled(lambda p, r: p.w_oil)
    w_wat = pooled(lambda p, r: p.w_wat)
    w_gas = pooled(lambda p, r: p.w_gas)
    w_tot = pooled(lambda p, r: p.w_tot)
    t_oil = pooled(lambda p, r: r.targets.woil)
    t_wat = pooled(lambda p, r: r.targets.wwat)
    t_gas = pooled(lambda p, r: r.targets.wgas)
    t_tot = t_oil + t_wat + t_gas + pooled(lambda p, r: p.w_gl)

    metrics = {
        "WTOT_RMSE": rmse(w_tot, t_tot),
        "WOIL_RMSE": rmse(w_oil, t_oil),
        "WWAT_RMSE": rmse(w_wat, t_wat),
        "WGAS_RMSE": rmse(w_gas, t_gas),
        "PBH_RMSE": rmse(pooled(lambda p, r: p.p_bh), pooled(lambda p, r: r.targets.pbh)),
        "TBH_RMSE": rmse(pooled(lambda p, r: p.t_bh), pooled(lambda p, r: r.targets.tbh)),
    }
    mp, n_used, n_excl = mape(w_tot, t_tot, mape_floor)
    metrics["WTOT_MAPE"] = mp
    metrics["MAPE_N_USED"] = n_used
    metrics["MAPE_N_EXCLUDED"] = n_excl
    metrics["MAPE_FLOOR"] = mape_floor

    if model.config.use_regime:
        lb = np.concatenate([p.logits_bh for p in preds])
        lw = np.concatenate([p.logits_wh for p in preds])
        yb = np.concatenate([r.targets.frbh for r in refs])
        yw = np.concatenate([r.targets.frwh for r in refs])
        metrics["REGBH_ACC"] = regime_accuracy(lb, yb)
        metrics["REGWH_ACC"] = regime_accuracy(lw, yw)
    else:
        metrics["REGBH_ACC"] = float("nan")
        metrics["REGWH_ACC"] = float("nan")

    metrics["MASS_RESIDUAL"] = float(np.mean([mass_residual(p) for p in preds]))
    counts = {"negative_flow": 0, "pressure_order": 0, "temp_order": 0}
    for p, r in zip(preds, refs):
        for k, v in physics_violations(p, r.ops).items():
            counts[k] += v
    metrics["NEG_FLOW"] = counts["negative_flow"]
    metrics["PRES_VIOL"] = counts["pressure_order"]
    metrics["TEMP_VIOL"] = counts["temp_order"]
    metrics["N_POINTS"] = int(sum(r.n_steps for r in refs))
    return metrics


def scatter_data(model: WellModel, records: list[WellRecord]) -> dict[str, np.ndarray]:
    """(true, predicted) pairs per continuous target, for external plotting."""
    cols = {k: [] for k in ("WOIL", "WWAT", "WGAS", "WTOT", "PBH", "TBH")}
    for rec in records:
        p = model.predict(rec.design, rec.ops)
        tg = rec.targets
        t_tot = tg.woil + tg.wwat + tg.wgas + p.w_gl
        cols["WOIL"].append((tg.woil, p.w_oil))
        cols["WWAT"].append((tg.wwat, p.w_wat))
        cols["WGAS"].append((tg.wgas, p.w_gas))
        cols["WTOT"].append((t_tot, p.w_tot))
        cols["PBH"].append((tg.pbh, p.p_bh))
        cols["TBH"].append((tg.tbh, p.t_bh))
    return {k: np.column_stack([np.concatenate([a for a, _ in v]),
                                np.concatenate([b for _, b in v])]) for k, v in cols.items()}


# ---------------------------------------------------------------------------
# Ablation harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationCell:
    name: str
    variant: str
    use_physics: bool
    use_regime: bool


def experiment_cells(experiment: int) -> list[AblationCell]:
    """Cell lists for the two ablation experiments: architecture comparison
    (all flags on) and loss-component ablation (full architecture)."""
    if experiment == 1:
        return [AblationCell(v, v, True, True)
                for v in ("no_config", "concat_config", "film_crossattn")]
    if experiment == 2:
        return [
            AblationCell("film_physics_regime", "film_crossattn", True, True),
            AblationCell("film_regime_nophysics", "film_crossattn", False, True),
            AblationCell("film_physics_noregime", "film_crossattn", True, False),
            AblationCell("film_only", "film_crossattn", False, False),
        ]
    raise ValueError(f"unknown experiment {experiment}")


REPORT_COLUMNS = (
    "cell", "variant", "use_physics", "use_regime", "status",
    "WTOT_RMSE", "WOIL_RMSE", "WWAT_RMSE", "WGAS_RMSE", "PBH_RMSE", "TBH_RMSE",
    "REGBH_ACC", "REGWH_ACC", "WTOT_MAPE", "MAPE_FLOOR", "MAPE_N_USED",
    "MAPE_N_EXCLUDED", "MASS_RESIDUAL", "NEG_FLOW", "PRES_VIOL", "TEMP_VIOL",
    "N_POINTS", "best_epoch", "best_val", "seed", "d", "T", "n_wells", "error",
)


def run_ablation(records: list[WellRecord], split: SplitAssignment,
                 cells: list[AblationCell], model_cfg: ModelConfig,
                 train_cfg: TrainConfig, loss_weights: LossWeights = LossWeights()):
    """Train and evaluate every cell on a shared split and shared stats.

    Every cell uses the same seed, split, and normalization; a failing cell
    is recorded in its row and does not abort the remaining cells. Returns
    (rows, models) with one report row per cell.
    """
    train = split.select(records, "train")
    val = split.select(records, "val")
    test = split.select(records, "test")
    stats = fit_norm_stats(train)
    t_len = records[0].n_steps if records else 0

    rows, models = [], {}
    for cell in cells:
        row = {c: "" for c in REPORT_COLUMNS}
        row.update(cell=cell.name, variant=cell.variant, use_physics=cell.use_physics,
                   use_regime=cell.use_regime, seed=train_cfg.seed, d=model_cfg.embed_dim,
                   T=t_len, n_wells=len(records), status="ok", error="")
        try:
            cfg = ModelConfig(
                embed_dim=model_cfg.embed_dim, n_tcn_blocks=model_cfg.n_tcn_blocks,
                kernel_size=model_cfg.kernel_size, n_heads=model_cfg.n_heads,
                config_dropout=model_cfg.config_dropout, tcn_dropout=model_cfg.tcn_dropout,
                attn_dropout=model_cfg.attn_dropout, head_hidden=model_cfg.head_hidden,
                variant=cell.variant, use_physics=cell.use_physics,
                use_regime=cell.use_regime, seed=model_cfg.seed)
            model = WellModel(cfg, stats)
            log.info("ablation cell %s: training (%d params)", cell.name, model.n_params())
            model, history = fit(model, train, val, train_cfg, loss_weights)
            metrics = evaluate_model(model, test)
            if metrics["MASS_RESIDUAL"] != 0.0:
                raise AssertionError("structural mass residual must be exactly zero")
            row.update(metrics)
            row.update(best_epoch=history.best_epoch, best_val=history.best_val)
            models[cell.name] = model
        except Exception as exc:  # cell failure is data, not an abort
            log.exception("ablation cell %s failed", cell.name)
            row.update(status="failed", error=str(exc))
        rows.append(row)
    return rows, models


def write_report_csv(rows: list[dict], path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in REPORT_COLUMNS])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
