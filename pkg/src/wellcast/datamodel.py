"""Domain types and data plumbing for well portfolios.

Units are fixed throughout the package: lengths in m, densities in kg/m3,
pressures in bar, temperatures in K, mass flow rates in kg/s, gas lift rate
in Sm3/d. The total mass rate WTOT is never stored; it is always derived as
WOIL + WWAT + WGAS + w_gl (gas lift converted to kg/s).

The CSV schema written/read here (one row per well and time step) doubles as
the loader target for externally produced portfolio files of the same layout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

CHOKE_PROFILES = ("linear", "convex", "concave", "quick-opening")

# Fixed column orders. Design vector order = NUMERIC_DESIGN_FIELDS then the
# one-hot choke profile in CHOKE_PROFILES order (24 entries total).
NUMERIC_DESIGN_FIELDS = (
    "tubing_length",
    "tubing_diameter",
    "liquid_density",
    "gas_constant",
    "cp_gas",
    "cp_liquid",
    "friction_factor",
    "heat_transfer",
    "max_liquid_inflow",
    "inflow_gas_fraction",
    "choke_coefficient",
    "critical_pressure_ratio",
    "reservoir_pressure",
    "separator_pressure",
    "reservoir_temperature",
    "surface_temperature",
    "frac_gas",
    "frac_oil",
    "frac_wat",
    "oil_density",
)

OPS_COLUMNS = ("CHK", "QGL", "PWH", "PDC", "TWH", "FOIL", "FGAS", "FWAT")
TARGET_COLUMNS = ("WOIL", "WWAT", "WGAS", "PBH", "TBH")
REGIME_COLUMNS = ("FRBH", "FRWH")
REGIME_NAMES = ("bubbly", "slug/churn", "annular")

# Standard conditions used to convert QGL from Sm3/d to kg/s.
STD_PRESSURE_PA = 101325.0
STD_TEMPERATURE_K = 288.15
SECONDS_PER_DAY = 86400.0

STD_FLOOR = 1e-8


def qgl_to_kg_per_s(qgl_sm3_per_day, gas_constant: float):
    """Convert a gas lift rate from Sm3/d to kg/s.

    Gas density at standard conditions follows the ideal gas law with the
    well's specific gas constant: rho = p_std / (R_s * T_std).
    """
    rho_std = STD_PRESSURE_PA / (gas_constant * STD_TEMPERATURE_K)
    return np.asarray(qgl_sm3_per_day, dtype=float) * rho_std / SECONDS_PER_DAY


@dataclass(frozen=True)
class WellDesign:
    """Static 24-parameter well design (20 numeric fields + choke profile)."""

    tubing_length: float  # m
    tubing_diameter: float  # m
    liquid_density: float  # kg/m3
    gas_constant: float  # J/(kg K)
    cp_gas: float  # J/(kg K)
    cp_liquid: float  # J/(kg K)
    friction_factor: float  # Darcy, dimensionless
    heat_transfer: float  # W/(m2 K)
    max_liquid_inflow: float  # kg/s
    inflow_gas_fraction: float  # mass fraction of inflow that is gas
    choke_coefficient: float  # m2
    critical_pressure_ratio: float
    reservoir_pressure: float  # bar
    separator_pressure: float  # bar
    reservoir_temperature: float  # K
    surface_temperature: float  # K
    frac_gas: float
    frac_oil: float
    frac_wat: float
    oil_density: float  # kg/m3
    choke_profile: str = "linear"

    def __post_init__(self):
        positive = (
            "tubing_length", "tubing_diameter", "liquid_density", "gas_constant",
            "cp_gas", "cp_liquid", "friction_factor", "heat_transfer",
            "max_liquid_inflow", "choke_coefficient", "reservoir_pressure",
            "separator_pressure", "reservoir_temperature", "surface_temperature",
            "oil_density",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0.0 <= self.inflow_gas_fraction <= 1.0:
            raise ValueError("inflow_gas_fraction must lie in [0, 1]")
        if not 0.0 < self.critical_pressure_ratio < 1.0:
            raise ValueError("critical_pressure_ratio must lie in (0, 1)")
        frac_sum = self.frac_gas + self.frac_oil + self.frac_wat
        if abs(frac_sum - 1.0) > 1e-9:
            raise ValueError(f"phase fractions must sum to 1, got {frac_sum!r}")
        if not self.reservoir_pressure > self.separator_pressure:
            raise ValueError("reservoir_pressure must exceed separator_pressure")
        if not self.reservoir_temperature > self.surface_temperature:
            raise ValueError("reservoir_temperature must exceed surface_temperature")
        if self.choke_profile not in CHOKE_PROFILES:
            raise ValueError(f"unknown choke profile {self.choke_profile!r}")

    def numeric_values(self) -> np.ndarray:
        """The 20 numeric fields in the documented fixed order."""
        return np.array([getattr(self, f) for f in NUMERIC_DESIGN_FIELDS], dtype=float)


def validate_ops(ops: np.ndarray) -> np.ndarray:
    """Validate an operational sequence of shape [T, 8] (columns OPS_COLUMNS)."""
    ops = np.asarray(ops, dtype=float)
    if ops.ndim != 2 or ops.shape[1] != len(OPS_COLUMNS):
        raise ValueError(f"operational sequence must have shape [T, 8], got {ops.shape}")
    chk = ops[:, 0]
    if np.any(chk < 0) or np.any(chk > 100):
        raise ValueError("CHK must lie in [0, 100]")
    if np.any(ops[:, 2] <= 0) or np.any(ops[:, 3] <= 0):
        raise ValueError("PWH and PDC must be strictly positive")
    fracs = ops[:, 5:8]
    if np.any(fracs < 0) or np.any(fracs > 1):
        raise ValueError("phase fractions must lie in [0, 1]")
    if np.any(np.abs(fracs.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("FOIL + FGAS + FWAT must sum to 1 per row")
    return ops


@dataclass
class TargetSequence:
    """Per-time-step targets: 3 phase rates, bottomhole p/T, 2 regime labels."""

    woil: np.ndarray  # kg/s
    wwat: np.ndarray  # kg/s
    wgas: np.ndarray  # kg/s, reservoir gas only (lift gas excluded)
    pbh: np.ndarray  # bar
    tbh: np.ndarray  # K
    frbh: np.ndarray  # int in {0 bubbly, 1 slug/churn, 2 annular}
    frwh: np.ndarray

    def __post_init__(self):
        for name in ("woil", "wwat", "wgas", "pbh", "tbh"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("frbh", "frwh"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=int))
        n = len(self.woil)
        for name in ("wwat", "wgas", "pbh", "tbh", "frbh", "frwh"):
            if len(getattr(self, name)) != n:
                raise ValueError("all target arrays must share the same length")
        if np.any(self.woil < 0) or np.any(self.wwat < 0) or np.any(self.wgas < 0):
            raise ValueError("phase mass flow rates must be non-negative")
        for name in ("frbh", "frwh"):
            lab = getattr(self, name)
            if lab.size and (lab.min() < 0 or lab.max() > 2):
                raise ValueError("regime labels must lie in {0, 1, 2}")

    def continuous(self) -> np.ndarray:
        """[T, 5] array of the continuous targets in TARGET_COLUMNS order."""
        return np.stack([self.woil, self.wwat, self.wgas, self.pbh, self.tbh], axis=1)


@dataclass
class WellRecord:
    well_id: str
    design: WellDesign
    ops: np.ndarray  # [T, 8], columns OPS_COLUMNS
    targets: TargetSequence

    def __post_init__(self):
        self.ops = validate_ops(self.ops)
        if self.ops.shape[0] != len(self.targets.woil):
            raise ValueError("ops and targets must have identical length T")

    @property
    def n_steps(self) -> int:
        return self.ops.shape[0]


@dataclass(frozen=True)
class NormStats:
    """Per-feature z-score statistics fitted on the training split.

    Population standard deviations, clamped from below by STD_FLOOR. The
    target stds (in original units) are the sigma_j used by the
    variance-normalized physics penalties.
    """

    design_mean: np.ndarray  # [20]
    design_std: np.ndarray
    ops_mean: np.ndarray  # [8]
    ops_std: np.ndarray
    target_mean: np.ndarray  # [5], TARGET_COLUMNS order
    target_std: np.ndarray
    n_rows: int = 0

    def _lookup(self, feature_id: str):
        if feature_id in NUMERIC_DESIGN_FIELDS:
            j = NUMERIC_DESIGN_FIELDS.index(feature_id)
            return self.design_mean[j], self.design_std[j]
        if feature_id in OPS_COLUMNS:
            j = OPS_COLUMNS.index(feature_id)
            return self.ops_mean[j], self.ops_std[j]
        if feature_id in TARGET_COLUMNS:
            j = TARGET_COLUMNS.index(feature_id)
            return self.target_mean[j], self.target_std[j]
        raise ConfigurationError(f"unknown feature id {feature_id!r}")

    def target_sigma2(self) -> np.ndarray:
        """Training-split variances of the 5 continuous targets, original units."""
        return self.target_std**2


def fit_norm_stats(train_records: list[WellRecord]) -> NormStats:
    """Fit z-score statistics over all training rows pooled across wells.

    Design columns are constant per well but enter once per row, matching the
    flat CSV layout. Stds are population (divide by N) and clamped to STD_FLOOR.
    """
    if not train_records:
        raise ConfigurationError("cannot fit normalization stats on an empty training set")
    design_rows = []
    ops_rows = []
    target_rows = []
    for rec in train_records:
        t = rec.n_steps
        design_rows.append(np.tile(rec.design.numeric_values(), (t, 1)))
        ops_rows.append(rec.ops)
        target_rows.append(rec.targets.continuous())
    design = np.concatenate(design_rows)
    ops = np.concatenate(ops_rows)
    targets = np.concatenate(target_rows)

    def _stats(x):
        return x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR)

    dm, ds = _stats(design)
    om, os_ = _stats(ops)
    tm, ts = _stats(targets)
    return NormStats(dm, ds, om, os_, tm, ts, n_rows=design.shape[0])


def zscore(values, stats: NormStats, feature_id: str):
    if stats is None:
        raise ConfigurationError("normalization stats are required but not fitted")
    mean, std = stats._lookup(feature_id)
    return (np.asarray(values, dtype=float) - mean) / std


def inverse_zscore(values, stats: NormStats, feature_id: str):
    if stats is None:
        raise ConfigurationError("normalization stats are required but not fitted")
    mean, std = stats._lookup(feature_id)
    return np.asarray(values, dtype=float) * std + mean


def normalize_ops(ops: np.ndarray, stats: NormStats) -> np.ndarray:
    return (ops - stats.ops_mean) / stats.ops_std


def normalize_targets(targets: np.ndarray, stats: NormStats) -> np.ndarray:
    return (targets - stats.target_mean) / stats.target_std


def to_design_vector(design: WellDesign, stats: NormStats) -> np.ndarray:
    """Encode a design as the 24-vector: 20 z-scored numerics + one-hot choke."""
    if stats is None:
        raise ConfigurationError("normalization stats are required but not fitted")
    vec = np.zeros(24)
    vec[:20] = (design.numeric_values() - stats.design_mean) / stats.design_std
    vec[20 + CHOKE_PROFILES.index(design.choke_profile)] = 1.0
    return vec


# ---------------------------------------------------------------------------
# Stratified well-level splitting
# ---------------------------------------------------------------------------

SPLIT_NAMES = ("train", "val", "test")
STRATIFY_FIELDS = ("reservoir_pressure", "tubing_diameter", "max_liquid_inflow")


@dataclass
class SplitAssignment:
    """Partition of well ids into train/val/test."""

    assignment: dict[str, str] = field(default_factory=dict)

    def wells(self, split: str) -> list[str]:
        if split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {split!r}")
        return [w for w, s in self.assignment.items() if s == split]

    def select(self, records: list[WellRecord], split: str) -> list[WellRecord]:
        want = set(self.wells(split))
        return [r for r in records if r.well_id in want]

    def counts(self) -> dict[str, int]:
        return {s: len(self.wells(s)) for s in SPLIT_NAMES}


def _quantile_bins(values: np.ndarray, k: int) -> np.ndarray:
    """Bin indices in [0, k) from inner quantile edges of the values."""
    edges = np.quantile(values, np.linspace(0, 1, k + 1)[1:-1])
    return np.searchsorted(edges, values, side="right")


def _largest_remainder(n: int, fractions) -> list[int]:
    quotas = [n * f for f in fractions]
    base = [int(np.floor(q)) for q in quotas]
    rem = n - sum(base)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:rem]:
        base[i] += 1
    return base


def stratified_split(
    records: list[WellRecord],
    fractions=(0.8, 0.1, 0.1),
    k: int = 5,
    seed: int = 0,
) -> SplitAssignment:
    """Stratified well-level split on (reservoir pressure, diameter, max inflow).

    Each key parameter is quantile-binned into k bins; the composite stratum
    label is the triple of bin indices. Strata with fewer than 3 wells are
    merged into the stratum with the nearest label (L1 on bin indices, ties
    broken lexicographically). Within each stratum wells are shuffled by seed
    and allocated with largest-remainder rounding; leftover wells are then
    reconciled against the exact global quotas so the overall counts match the
    fractions exactly.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {sum(fractions)!r}")
    if len(records) < 10:
        raise ValueError("stratified split requires at least 10 wells")

    well_ids = [r.well_id for r in records]
    if len(set(well_ids)) != len(well_ids):
        raise ValueError("well ids must be unique")

    cols = {f: np.array([getattr(r.design, f) for r in records]) for f in STRATIFY_FIELDS}
    bins = np.stack([_quantile_bins(cols[f], k) for f in STRATIFY_FIELDS], axis=1)

    strata: dict[tuple, list[int]] = {}
    for idx, label in enumerate(map(tuple, bins)):
        strata.setdefault(label, []).append(idx)

    # Merge undersized strata into the nearest surviving label.
    while len(strata) > 1:
        small = sorted(label for label, members in strata.items() if len(members) < 3)
        if not small:
            break
        label = small[0]
        others = sorted(l for l in strata if l != label)
        nearest = min(others, key=lambda l: (sum(abs(a - b) for a, b in zip(l, label)), l))
        strata[nearest].extend(strata.pop(label))

    rng = np.random.default_rng(seed)
    n = len(records)
    global_quota = _largest_remainder(n, fractions)
    assigned = {s: 0 for s in SPLIT_NAMES}
    assignment: dict[str, str] = {}
    leftovers: list[tuple[int, tuple[float, ...]]] = []  # (well index, stratum fracs)

    for label in sorted(strata):
        members = sorted(strata[label])
        perm = rng.permutation(len(members))
        shuffled = [members[i] for i in perm]
        m = len(shuffled)
        quotas = [m * f for f in fractions]
        base = [int(np.floor(q)) for q in quotas]
        pos = 0
        for si, s in enumerate(SPLIT_NAMES):
            for idx in shuffled[pos : pos + base[si]]:
                assignment[well_ids[idx]] = s
                assigned[s] += 1
            pos += base[si]
        fracs = tuple(q - b for q, b in zip(quotas, base))
        for idx in shuffled[pos:]:
            leftovers.append((idx, fracs))

    # Reconcile leftovers against the global quotas: prefer the split the
    # stratum itself leans towards, among splits that still have deficit.
    deficit = {s: global_quota[i] - assigned[s] for i, s in enumerate(SPLIT_NAMES)}
    for idx, fracs in leftovers:
        open_splits = [s for s in SPLIT_NAMES if deficit[s] > 0]
        s = max(open_splits, key=lambda s: (fracs[SPLIT_NAMES.index(s)], -SPLIT_NAMES.index(s)))
        assignment[well_ids[idx]] = s
        deficit[s] -= 1

    return SplitAssignment(assignment)


# ---------------------------------------------------------------------------
# Portfolio CSV I/O
# ---------------------------------------------------------------------------

CSV_HEADER = (
    ("WELL_ID",)
    + OPS_COLUMNS
    + TARGET_COLUMNS
    + REGIME_COLUMNS
    + NUMERIC_DESIGN_FIELDS
    + ("CHOKE_PROFILE",)
)


def save_portfolio_csv(records: list[WellRecord], path) -> None:
    """Write a portfolio to CSV, one row per (well, time step).

    Floats are written with repr (shortest round-trip), so rewriting the same
    records is byte-identical and reloading loses no precision.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in records:
            design_vals = [repr(v) for v in rec.design.numeric_values()]
            tg = rec.targets
            for t in range(rec.n_steps):
                row = [rec.well_id]
                row += [repr(v) for v in rec.ops[t]]
                row += [repr(tg.woil[t]), repr(tg.wwat[t]), repr(tg.wgas[t]),
                        repr(tg.pbh[t]), repr(tg.tbh[t])]
                row += [str(int(tg.frbh[t])), str(int(tg.frwh[t]))]
                row += design_vals
                row.append(rec.design.choke_profile)
                writer.writerow(row)


def load_portfolio_csv(path) -> list[WellRecord]:
    """Load a portfolio CSV (same schema as save_portfolio_csv).

    Column order is taken from the header, so files with extra columns load
    fine; any WTOT column is ignored (the total is always re-derived).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        col = {name: i for i, name in enumerate(header)}
        missing = [c for c in CSV_HEADER if c not in col]
        if missing:
            raise ValueError(f"portfolio CSV is missing columns: {missing}")
        by_well: dict[str, list[list[str]]] = {}
        order: list[str] = []
        for row in reader:
            wid = row[col["WELL_ID"]]
            if wid not in by_well:
                by_well[wid] = []
                order.append(wid)
            by_well[wid].append(row)

    records = []
    for wid in order:
        rows = by_well[wid]
        first = rows[0]
        kwargs = {f: float(first[col[f]]) for f in NUMERIC_DESIGN_FIELDS}
        design = WellDesign(**kwargs, choke_profile=first[col["CHOKE_PROFILE"]])
        ops = np.array([[float(r[col[c]]) for c in OPS_COLUMNS] for r in rows])
        targets = TargetSequence(
            woil=[float(r[col["WOIL"]]) for r in rows],
            wwat=[float(r[col["WWAT"]]) for r in rows],
            wgas=[float(r[col["WGAS"]]) for r in rows],
            pbh=[float(r[col["PBH"]]) for r in rows],
            tbh=[float(r[col["TBH"]]) for r in rows],
            frbh=[int(r[col["FRBH"]]) for r in rows],
            frwh=[int(r[col["FRWH"]]) for r in rows],
        )
        records.append(WellRecord(wid, design, ops, targets))
    return records
