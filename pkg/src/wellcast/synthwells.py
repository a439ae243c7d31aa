"""Deterministic synthetic well oracle.

Generates portfolio data with the same schema as real multiphase well
datasets, from a small steady-state closure solved per operating point:

  inflow      w_liq = wl_max * max(0, 1 - p_bh / p_r)          (linear IPR)
  gas         w_gas = f_g / (1 - f_g) * w_liq  (+ lift gas through the choke)
  wellbore    p_wh  = p_bh - rho_mix*g*L/1e5 - f_D*(L/D)*rho_mix*v^2/(2e5)
  choke       w_tot = K_c * g_profile(chk/100) * sqrt(rho_mix * dp_eff)
  thermal     T_bh  = T_r - dT*(w_liq/wl_max);  T_wh from exponential cooling

with dp_eff = max(p_wh - p_dc, cpr * p_wh) converted to Pa, and gas density
from the ideal gas law at local pressure. The bottomhole pressure that makes
inflow match choke throughput is found by bisection on (p_s, p_r).

This is intentionally not a drift-flux simulator. What it guarantees, by
construction, is the physics the learned models are tested against:
non-negative flows, p_bh > p_wh, T_bh > T_wh, an exact mass identity
WOIL + WWAT + WGAS + w_gl = w_tot, and a response that is genuinely
modulated by the design (e.g. doubling the choke coefficient raises
throughput at any fixed opening).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .datamodel import (
    CHOKE_PROFILES,
    NUMERIC_DESIGN_FIELDS,
    TargetSequence,
    WellDesign,
    WellRecord,
    qgl_to_kg_per_s,
)
from .errors import SimulationError

log = logging.getLogger(__name__)

G = 9.80665  # m/s^2
PA_PER_BAR = 1e5

# Thermal drawdown at full inflow, K. Keeps T_bh strictly above T_wh while
# leaving a visible rate-dependent signal.
DELTA_T_DRAWDOWN = 5.0

# Desk-scale portfolio defaults.
DESK_N_WELLS = 80
DESK_N_STEPS = 64


@dataclass(frozen=True)
class RegimeThresholds:
    """Superficial-velocity cutoffs for the three-regime map.

    Stand-in constants for a Taitel-style flow map: bubbly below
    v_sg_bubbly, annular above v_sg_annular when gas also dominates the
    liquid by annular_ratio, slug/churn in between.
    """

    v_sg_bubbly: float = 0.5  # m/s
    v_sg_annular: float = 15.0  # m/s
    annular_ratio: float = 10.0


DEFAULT_THRESHOLDS = RegimeThresholds()


def classify_regime(v_sg: float, v_sl: float, thr: RegimeThresholds = DEFAULT_THRESHOLDS) -> int:
    if v_sg < thr.v_sg_bubbly:
        return 0
    if v_sg > thr.v_sg_annular and v_sg > thr.annular_ratio * v_sl:
        return 2
    return 1


def g_profile(u: float, profile: str) -> float:
    """Fractional choke capacity at relative opening u in [0, 1].

    All four shapes are monotone increasing with g(0)=0 and g(1)=1; concave
    gives the finest control at low openings, quick-opening the coarsest.
    """
    if profile == "linear":
        return u
    if profile == "convex":
        return u * u
    if profile == "concave":
        return math.sqrt(u)
    if profile == "quick-opening":
        return 1.0 - (1.0 - u) ** 2
    raise ValueError(f"unknown choke profile {profile!r}")


def _default_numeric_bounds() -> dict[str, tuple[float, float]]:
    return {
        "tubing_length": (1500.0, 4500.0),
        "tubing_diameter": (0.05, 0.20),
        "liquid_density": (700.0, 1000.0),
        "gas_constant": (300.0, 600.0),
        "cp_gas": (1500.0, 2500.0),
        "cp_liquid": (3000.0, 4500.0),
        "friction_factor": (0.01, 0.04),
        "heat_transfer": (5.0, 50.0),
        "max_liquid_inflow": (2.0, 200.0),
        "inflow_gas_fraction": (0.01, 0.9),
        "choke_coefficient": (0.0005, 0.004),
        "critical_pressure_ratio": (0.4, 0.7),
        "reservoir_pressure": (100.0, 500.0),
        "separator_pressure": (5.0, 20.0),
        "reservoir_temperature": (320.0, 420.0),
        "surface_temperature": (280.0, 300.0),
        "frac_gas": (0.05, 0.5),
        "frac_oil": (0.1, 0.8),
        "frac_wat": (0.1, 0.8),
        "oil_density": (750.0, 950.0),
    }


@dataclass(frozen=True)
class DesignBounds:
    """Axis-aligned feasible box for well designs."""

    numeric: dict[str, tuple[float, float]] = field(default_factory=_default_numeric_bounds)
    choke_profiles: tuple[str, ...] = CHOKE_PROFILES

    def __post_init__(self):
        for name in NUMERIC_DESIGN_FIELDS:
            if name not in self.numeric:
                raise ValueError(f"bounds missing numeric field {name!r}")
            lo, hi = self.numeric[name]
            if not lo < hi:
                raise ValueError(f"bounds for {name!r} must satisfy lower < upper")
        # Ordering guards so any sampled design is valid.
        if not self.numeric["reservoir_pressure"][0] > self.numeric["separator_pressure"][1]:
            raise ValueError("reservoir_pressure bounds must lie above separator_pressure bounds")
        if not self.numeric["reservoir_temperature"][0] > self.numeric["surface_temperature"][1]:
            raise ValueError("reservoir_temperature bounds must lie above surface_temperature bounds")
        for p in self.choke_profiles:
            if p not in CHOKE_PROFILES:
                raise ValueError(f"unknown choke profile {p!r}")

    def lo_vector(self) -> np.ndarray:
        return np.array([self.numeric[f][0] for f in NUMERIC_DESIGN_FIELDS])

    def hi_vector(self) -> np.ndarray:
        return np.array([self.numeric[f][1] for f in NUMERIC_DESIGN_FIELDS])

    def to_dict(self) -> dict:
        return {"numeric": {k: list(v) for k, v in self.numeric.items()},
                "choke_profiles": list(self.choke_profiles)}

    @classmethod
    def from_dict(cls, d: dict) -> "DesignBounds":
        return cls(numeric={k: tuple(v) for k, v in d["numeric"].items()},
                   choke_profiles=tuple(d["choke_profiles"]))


DEFAULT_BOUNDS = DesignBounds()


def design_from_vector(values: np.ndarray, choke_profile: str) -> WellDesign:
    """Build a WellDesign from numeric values in NUMERIC_DESIGN_FIELDS order.

    Phase fractions are renormalized to sum to exactly 1.
    """
    kwargs = dict(zip(NUMERIC_DESIGN_FIELDS, (float(v) for v in values)))
    s = kwargs["frac_gas"] + kwargs["frac_oil"] + kwargs["frac_wat"]
    kwargs["frac_gas"] /= s
    kwargs["frac_oil"] /= s
    kwargs["frac_wat"] /= s
    return WellDesign(**kwargs, choke_profile=choke_profile)


def sample_design(bounds: DesignBounds, rng: np.random.Generator) -> WellDesign:
    """Draw a design uniformly within bounds; fractions renormalized to sum 1."""
    lo, hi = bounds.lo_vector(), bounds.hi_vector()
    values = rng.uniform(lo, hi)
    profile = bounds.choke_profiles[rng.integers(len(bounds.choke_profiles))]
    return design_from_vector(values, profile)


class OperatingPoint(NamedTuple):
    """One simulated steady state: the ops row plus all targets.

    The total rate is not stored; it is always the exact sum
    woil + wwat + wgas + w_gl with w_gl = qgl_to_kg_per_s(QGL, R_s).
    """

    ops_row: np.ndarray  # [8] in OPS_COLUMNS order
    woil: float
    wwat: float
    wgas: float  # reservoir gas only
    pbh: float
    tbh: float
    frbh: int
    frwh: int


def _gas_density(p_bar: float, temp_k: float, gas_constant: float) -> float:
    return p_bar * PA_PER_BAR / (gas_constant * temp_k)


def simulate_operating_point(
    design: WellDesign,
    chk_percent: float,
    qgl: float,
    thresholds: RegimeThresholds = DEFAULT_THRESHOLDS,
    max_iter: int = 200,
) -> OperatingPoint:
    """Solve one steady state of the closure for (design, choke opening, gas lift).

    qgl is in Sm3/d. Raises SimulationError when the inflow/choke balance has
    no root in (p_s, p_r), e.g. a wide-open choke on a reservoir too weak to
    feed its critical-flow floor.
    """
    if not 0.0 <= chk_percent <= 100.0:
        raise ValueError("chk_percent must lie in [0, 100]")
    if qgl < 0.0:
        raise ValueError("qgl must be non-negative")

    d = design
    area = math.pi * d.tubing_diameter**2 / 4.0
    p_dc = d.separator_pressure
    r_oil = d.frac_oil / (d.frac_oil + d.frac_wat)

    if chk_percent == 0.0:
        # Shut-in: no flow anywhere, lift line closed too. The wellhead sees
        # the static liquid column, floored at the downstream pressure when
        # the column cannot be sustained.
        pbh = d.reservoir_pressure
        pwh = max(pbh - d.liquid_density * G * d.tubing_length / PA_PER_BAR, p_dc)
        foil = (1.0 - d.inflow_gas_fraction) * r_oil
        fwat = 1.0 - d.inflow_gas_fraction - foil
        ops = np.array([0.0, 0.0, pwh, p_dc, d.surface_temperature,
                        foil, d.inflow_gas_fraction, fwat])
        return OperatingPoint(ops, 0.0, 0.0, 0.0, pbh, d.reservoir_temperature, 0, 0)

    w_gl = float(qgl_to_kg_per_s(qgl, d.gas_constant))
    capacity = d.choke_coefficient * g_profile(chk_percent / 100.0, d.choke_profile)

    def state(pbh: float) -> dict:
        w_liq = d.max_liquid_inflow * max(0.0, 1.0 - pbh / d.reservoir_pressure)
        w_oil = r_oil * w_liq
        w_wat = w_liq - w_oil  # complement keeps w_oil + w_wat == w_liq exact
        w_gas = d.inflow_gas_fraction / (1.0 - d.inflow_gas_fraction) * w_liq
        w_tot = w_oil + w_wat + w_gas + w_gl
        tbh = d.reservoir_temperature - DELTA_T_DRAWDOWN * (w_liq / d.max_liquid_inflow)
        rho_g = _gas_density(pbh, tbh, d.gas_constant)
        gas_tot = w_gas + w_gl
        if w_tot > 0.0:
            rho_mix = w_tot / (w_liq / d.liquid_density + gas_tot / rho_g)
        else:
            rho_mix = d.liquid_density
        v_mix = w_tot / (rho_mix * area)
        hydro = rho_mix * G * d.tubing_length / PA_PER_BAR
        fric = (d.friction_factor * (d.tubing_length / d.tubing_diameter)
                * rho_mix * v_mix**2 / (2.0 * PA_PER_BAR))
        pwh = pbh - hydro - fric
        if pwh > 0.0:
            dp_eff = max(pwh - p_dc, d.critical_pressure_ratio * pwh)
            w_choke = capacity * math.sqrt(rho_mix * dp_eff * PA_PER_BAR)
        else:
            w_choke = 0.0
        return dict(w_liq=w_liq, w_oil=w_oil, w_wat=w_wat, w_gas=w_gas, w_tot=w_tot,
                    gas_tot=gas_tot, tbh=tbh, rho_mix=rho_mix, pwh=pwh,
                    residual=w_choke - w_tot)

    lo = d.separator_pressure * (1.0 + 1e-9)
    hi = d.reservoir_pressure * (1.0 - 1e-12)
    f_lo, f_hi = state(lo)["residual"], state(hi)["residual"]
    if not (f_lo < 0.0 <= f_hi):
        raise SimulationError(
            f"no steady state for chk={chk_percent:.1f}%, qgl={qgl:.0f} Sm3/d "
            f"(residuals {f_lo:.3g} at p_s, {f_hi:.3g} at p_r)")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if state(mid)["residual"] < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-11 * d.reservoir_pressure:
            break
    else:
        raise SimulationError(
            f"bisection did not converge after {max_iter} iterations "
            f"(bracket width {hi - lo:.3g} bar)")

    pbh = hi  # residual >= 0 side: choke keeps up with inflow
    s = state(pbh)

    # Exponential cooling along the tubing; full cooling at zero throughput.
    if s["w_tot"] > 0.0:
        cp_mix = (s["w_liq"] * d.cp_liquid + s["gas_tot"] * d.cp_gas) / s["w_tot"]
        x = d.heat_transfer * d.tubing_length * math.pi * d.tubing_diameter / (s["w_tot"] * cp_mix)
        twh = d.surface_temperature + (s["tbh"] - d.surface_temperature) * math.exp(-x)
    else:
        twh = d.surface_temperature
    pwh = s["pwh"]

    if s["w_tot"] > 0.0:
        foil = s["w_oil"] / s["w_tot"]
        fgas = s["gas_tot"] / s["w_tot"]
        fwat = s["w_wat"] / s["w_tot"]
    else:
        fgas = d.inflow_gas_fraction
        foil = (1.0 - fgas) * r_oil
        fwat = 1.0 - fgas - foil

    v_sl_bh = s["w_liq"] / (d.liquid_density * area)
    v_sg_bh = s["gas_tot"] / (_gas_density(pbh, s["tbh"], d.gas_constant) * area)
    v_sl_wh = v_sl_bh
    v_sg_wh = s["gas_tot"] / (_gas_density(max(pwh, 1e-6), twh, d.gas_constant) * area)
    frbh = classify_regime(v_sg_bh, v_sl_bh, thresholds)
    frwh = classify_regime(v_sg_wh, v_sl_wh, thresholds)

    ops = np.array([chk_percent, qgl, pwh, p_dc, twh, foil, fgas, fwat])
    return OperatingPoint(ops, s["w_oil"], s["w_wat"], s["w_gas"], pbh, s["tbh"], frbh, frwh)


def choke_schedule(n_steps: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Operating schedule for one well: a jittered 5..95% choke sweep plus an
    occasional constant gas-lift block on the upper part of the sweep.

    The sweep shape is a stand-in for a real test schedule and is isolated
    here so it can be swapped out wholesale.
    """
    base = np.linspace(5.0, 95.0, n_steps)
    chk = np.clip(base + rng.uniform(-3.0, 3.0, size=n_steps), 5.0, 95.0)
    qgl = np.zeros(n_steps)
    if rng.random() < 0.5:
        eligible = np.nonzero(base >= 30.0)[0]
        if eligible.size >= 2:
            i0, i1 = sorted(rng.choice(eligible, size=2, replace=False))
            qgl[i0 : i1 + 1] = rng.uniform(5000.0, 20000.0)
    return chk, qgl


def simulate_well(
    well_id: str,
    design: WellDesign,
    n_steps: int,
    rng: np.random.Generator,
    thresholds: RegimeThresholds = DEFAULT_THRESHOLDS,
) -> WellRecord:
    chk, qgl = choke_schedule(n_steps, rng)
    points = [simulate_operating_point(design, c, q, thresholds) for c, q in zip(chk, qgl)]
    ops = np.stack([p.ops_row for p in points])
    targets = TargetSequence(
        woil=[p.woil for p in points],
        wwat=[p.wwat for p in points],
        wgas=[p.wgas for p in points],
        pbh=[p.pbh for p in points],
        tbh=[p.tbh for p in points],
        frbh=[p.frbh for p in points],
        frwh=[p.frwh for p in points],
    )
    return WellRecord(well_id, design, ops, targets)


def generate_portfolio(
    n_wells: int,
    n_steps: int,
    bounds: DesignBounds = DEFAULT_BOUNDS,
    seed: int = 0,
    thresholds: RegimeThresholds = DEFAULT_THRESHOLDS,
    max_attempts: int = 20,
) -> list[WellRecord]:
    """Generate a deterministic portfolio of n_wells records with T = n_steps.

    Wells are seeded independently by (seed, well index, attempt), so results
    do not depend on generation order. Designs whose schedule fails to
    converge are logged and replaced by the next attempt's sample; the skip
    count is logged so no failure disappears silently.
    """
    if n_wells < 1:
        raise ValueError("n_wells must be >= 1")
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    records = []
    skipped = 0
    for widx in range(n_wells):
        for attempt in range(max_attempts):
            rng = np.random.default_rng([seed, widx, attempt])
            design = sample_design(bounds, rng)
            try:
                records.append(simulate_well(f"W{widx:04d}", design, n_steps, rng, thresholds))
                break
            except SimulationError as exc:
                skipped += 1
                log.warning("well %d attempt %d skipped: %s", widx, attempt, exc)
        else:
            raise SimulationError(
                f"well {widx} failed {max_attempts} consecutive design samples")
    if skipped:
        log.info("portfolio complete: %d wells, %d failed designs resampled", n_wells, skipped)
    return records
