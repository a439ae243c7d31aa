"""Surrogate-based well design optimization.

A trained model maps any candidate design plus reference operating scenarios
to a mean oil rate and a mean slug/churn probability in milliseconds, so
population-based search over the 24-dimensional design space is cheap.
Weighted-sum scalarization with differential evolution approximates the
bi-objective front (production vs. integrity risk) and the tri-objective
surface that adds an engineering complexity score; the archive of sub-problem
solutions is Pareto-filtered before being returned.

The categorical choke profile rides along in the continuous genome as one
extra gene in [0, 4), floored to a profile index at decode time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .datamodel import (
    CHOKE_PROFILES,
    NUMERIC_DESIGN_FIELDS,
    WellDesign,
    WellRecord,
    validate_ops,
)
from .errors import ConfigurationError
from .evaluation import slug_probability
from .network import WellModel
from .synthwells import DesignBounds, design_from_vector, sample_design

log = logging.getLogger(__name__)

FRACTION_FIELDS = ("frac_gas", "frac_oil", "frac_wat")

# Complexity score weights (cost drivers, min-max normalized within bounds).
COMPLEXITY_WEIGHTS = {
    "tubing_diameter": 0.25,
    "tubing_length": 0.30,
    "max_liquid_inflow": 0.20,
    "choke_coefficient": 0.15,
}
NONLINEAR_CHOKE_WEIGHT = 0.10


@dataclass(frozen=True)
class Scenario:
    """Reference operating sequence from one test well."""

    well_id: str
    ops: np.ndarray  # [T, 8]

    def __post_init__(self):
        object.__setattr__(self, "ops", validate_ops(self.ops))
        if self.ops.shape[0] == 0:
            raise ValueError("scenario must contain at least one operating point")


def select_scenarios(records: list[WellRecord], n: int = 5) -> list[Scenario]:
    """The first n wells in id order, as reference scenarios."""
    chosen = sorted(records, key=lambda r: r.well_id)[:n]
    if len(chosen) < n:
        raise ValueError(f"need {n} wells for scenarios, have {len(chosen)}")
    return [Scenario(r.well_id, r.ops) for r in chosen]


@dataclass(frozen=True)
class ObjectiveValues:
    mean_oil: float  # kg/s, maximize
    mean_slug_prob: float  # [0, 1], minimize
    complexity: float = float("nan")  # [0, 1], minimize (tri-objective only)

    def vector(self, with_complexity: bool) -> tuple:
        if with_complexity:
            return (self.mean_oil, self.mean_slug_prob, self.complexity)
        return (self.mean_oil, self.mean_slug_prob)


@dataclass(frozen=True)
class ParetoPoint:
    design: WellDesign
    objectives: ObjectiveValues
    weights: tuple | None = None  # scalarization weights that produced it


def check_design_bounds(design: WellDesign, bounds: DesignBounds, tol: float = 1e-9):
    """Reject designs outside the feasible box, naming the violated bound.

    Phase fraction fields are exempt from the box check: they are directions
    renormalized to sum 1 at decode time, so only [0, 1] membership applies.
    """
    for name in NUMERIC_DESIGN_FIELDS:
        v = getattr(design, name)
        if name in FRACTION_FIELDS:
            if not -tol <= v <= 1.0 + tol:
                raise ConfigurationError(f"design rejected: {name}={v!r} outside [0, 1]")
            continue
        lo, hi = bounds.numeric[name]
        if not lo - tol <= v <= hi + tol:
            raise ConfigurationError(
                f"design rejected: {name}={v!r} outside bounds [{lo}, {hi}]")
    if design.choke_profile not in bounds.choke_profiles:
        raise ConfigurationError(
            f"design rejected: choke profile {design.choke_profile!r} not admissible")


def evaluate_design(model: WellModel, design: WellDesign,
                    scenarios: list[Scenario]) -> ObjectiveValues:
    """Mean predicted oil rate and bottomhole slug probability over all
    scenario points (pooled)."""
    if not scenarios:
        raise ValueError("at least one scenario is required")
    oil, slug = [], []
    for sc in scenarios:
        pred = model.predict(design, sc.ops)
        oil.append(pred.w_oil)
        slug.append(slug_probability(pred.logits_bh))
    return ObjectiveValues(float(np.concatenate(oil).mean()),
                           float(np.concatenate(slug).mean()))


def evaluate_designs(model: WellModel, designs: list[WellDesign],
                     scenarios: list[Scenario]) -> list[ObjectiveValues]:
    """Batched convenience wrapper; evaluates sequentially so results are
    element-wise identical to single evaluations."""
    return [evaluate_design(model, d, scenarios) for d in designs]


def complexity(design: WellDesign, bounds: DesignBounds) -> float:
    """Engineering complexity in [0, 1]: weighted min-max-normalized cost
    drivers plus a fixed penalty for a non-linear choke trim."""
    c = 0.0
    for name, w in COMPLEXITY_WEIGHTS.items():
        lo, hi = bounds.numeric[name]
        if hi - lo <= 0:
            raise ValueError(f"zero-width bound for {name}")
        c += w * (getattr(design, name) - lo) / (hi - lo)
    if design.choke_profile != "linear":
        c += NONLINEAR_CHOKE_WEIGHT
    return c


# ---------------------------------------------------------------------------
# Pareto dominance
# ---------------------------------------------------------------------------

def _dominates(a: ObjectiveValues, b: ObjectiveValues, with_complexity: bool) -> bool:
    """a dominates b: at least as much oil, at most as much slug (and
    complexity), strictly better somewhere."""
    ge_oil = a.mean_oil >= b.mean_oil
    le_slug = a.mean_slug_prob <= b.mean_slug_prob
    le_c = (a.complexity <= b.complexity) if with_complexity else True
    if not (ge_oil and le_slug and le_c):
        return False
    strict = (a.mean_oil > b.mean_oil) or (a.mean_slug_prob < b.mean_slug_prob)
    if with_complexity:
        strict = strict or (a.complexity < b.complexity)
    return strict


def pareto_filter(points: list[ParetoPoint], with_complexity: bool = False) -> list[ParetoPoint]:
    """Non-dominated subset (order-preserving); exact ties are all kept."""
    kept = []
    for i, p in enumerate(points):
        dominated = any(
            _dominates(q.objectives, p.objectives, with_complexity)
            for j, q in enumerate(points) if j != i)
        if not dominated:
            kept.append(p)
    return kept


# ---------------------------------------------------------------------------
# Differential evolution (rand/1/bin)
# ---------------------------------------------------------------------------

@dataclass
class DEResult:
    best_x: np.ndarray
    best_f: float
    trace: np.ndarray  # best-so-far value per generation (non-increasing)
    population: np.ndarray  # final population [pop, dim]
    values: np.ndarray  # objective values of the final population


def differential_evolution(objective, lo, hi, pop_size: int = 32,
                           generations: int = 30, f_scale: float = 0.7,
                           cr: float = 0.9, seed=0) -> DEResult:
    """Minimize objective over a box with rand/1/bin differential evolution.

    Mutant = a + F*(b - c) over distinct random members, clipped to bounds;
    binomial crossover with one guaranteed coordinate; greedy selection.
    Deterministic given the seed.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    dim = lo.size
    if pop_size < 4:
        raise ValueError("pop_size must be at least 4 (rand/1 mutation needs 3 distinct others)")
    rng = np.random.default_rng(seed)
    pop = rng.uniform(lo, hi, size=(pop_size, dim))
    values = np.array([objective(x) for x in pop])
    trace = []
    for _ in range(generations):
        for i in range(pop_size):
            others = [j for j in range(pop_size) if j != i]
            a, b, c = pop[rng.choice(others, size=3, replace=False)]
            mutant = np.clip(a + f_scale * (b - c), lo, hi)
            cross = rng.random(dim) < cr
            cross[rng.integers(dim)] = True
            trial = np.where(cross, mutant, pop[i])
            f_trial = objective(trial)
            if f_trial <= values[i]:
                pop[i] = trial
                values[i] = f_trial
        trace.append(values.min())
    best = int(np.argmin(values))
    return DEResult(pop[best].copy(), float(values[best]),
                    np.array(trace) if trace else np.array([values.min()]),
                    pop, values)


# ---------------------------------------------------------------------------
# Genome <-> design
# ---------------------------------------------------------------------------

def genome_bounds(bounds: DesignBounds) -> tuple[np.ndarray, np.ndarray]:
    """20 numeric genes plus one choke gene in [0, 4)."""
    return (np.concatenate([bounds.lo_vector(), [0.0]]),
            np.concatenate([bounds.hi_vector(), [4.0]]))


def genome_to_design(genome: np.ndarray, bounds: DesignBounds) -> WellDesign:
    idx = min(int(np.floor(genome[-1])), len(CHOKE_PROFILES) - 1)  # 4.0 maps to index 3
    profile = CHOKE_PROFILES[idx]
    if profile not in bounds.choke_profiles:
        # Snap to the nearest admissible profile by enum distance.
        admissible = [CHOKE_PROFILES.index(p) for p in bounds.choke_profiles]
        idx = min(admissible, key=lambda j: (abs(j - idx), j))
        profile = CHOKE_PROFILES[idx]
    return design_from_vector(genome[:-1], profile)


# ---------------------------------------------------------------------------
# Scalarized multi-objective optimization
# ---------------------------------------------------------------------------

@dataclass
class ObjectiveNormalization:
    """Min-max ranges from a seeded random pre-sample, used to put the
    production and integrity objectives on a common [0, 1] scale."""

    oil_lo: float
    oil_hi: float
    slug_lo: float
    slug_hi: float

    def norm_oil(self, v: float) -> float:
        return (v - self.oil_lo) / max(self.oil_hi - self.oil_lo, 1e-12)

    def norm_slug(self, v: float) -> float:
        return (v - self.slug_lo) / max(self.slug_hi - self.slug_lo, 1e-12)


def fit_normalization(model: WellModel, scenarios, bounds: DesignBounds,
                      n_sample: int = 200, seed: int = 0) -> ObjectiveNormalization:
    rng = np.random.default_rng([seed, 2001])
    vals = [evaluate_design(model, sample_design(bounds, rng), scenarios)
            for _ in range(n_sample)]
    oil = np.array([v.mean_oil for v in vals])
    slug = np.array([v.mean_slug_prob for v in vals])
    norm = ObjectiveNormalization(float(oil.min()), float(oil.max()),
                                  float(slug.min()), float(slug.max()))
    log.info("objective normalization from %d designs: oil [%.3f, %.3f], slug [%.3f, %.3f]",
             n_sample, norm.oil_lo, norm.oil_hi, norm.slug_lo, norm.slug_hi)
    return norm


@dataclass
class OptimizationResult:
    front: list[ParetoPoint]
    baselines: dict[str, ParetoPoint]
    normalization: ObjectiveNormalization


def simplex_weights(step: float = 0.2) -> list[tuple[float, float, float]]:
    """All weight triples (i, j, k)/m with i+j+k = m = 1/step; 21 for step 0.2."""
    m = round(1.0 / step)
    return [(i / m, j / m, (m - i - j) / m)
            for i in range(m + 1) for j in range(m + 1 - i)]


def _solve_subproblems(model, scenarios, bounds, weight_list, scalarize,
                       generations, pop_size, seed, with_complexity):
    """Run one DE per weight vector; archive sub-problem bests plus the final
    populations, then Pareto-filter the archive."""
    lo, hi = genome_bounds(bounds)
    archive: list[ParetoPoint] = []
    cache: dict[bytes, ObjectiveValues] = {}

    def measured(genome) -> ObjectiveValues:
        key = np.asarray(genome).tobytes()
        if key not in cache:
            design = genome_to_design(np.asarray(genome), bounds)
            obj = evaluate_design(model, design, scenarios)
            if with_complexity:
                obj = ObjectiveValues(obj.mean_oil, obj.mean_slug_prob,
                                      complexity(design, bounds))
            cache[key] = obj
        return cache[key]

    for k, w in enumerate(weight_list):
        result = differential_evolution(
            lambda g: scalarize(measured(g), w), lo, hi,
            pop_size=pop_size, generations=generations, seed=[seed, 1000 + k])
        for genome in [result.best_x, *result.population]:
            archive.append(ParetoPoint(genome_to_design(genome, bounds),
                                       measured(genome), weights=tuple(np.atleast_1d(w))))
        log.info("sub-problem %d/%d weights=%s best=%.4f",
                 k + 1, len(weight_list), w, result.best_f)
    return pareto_filter(archive, with_complexity=with_complexity)


def optimize_biobjective(model: WellModel, scenarios: list[Scenario],
                         bounds: DesignBounds, n_weights: int = 11,
                         generations: int = 30, pop_size: int = 32,
                         seed: int = 0) -> OptimizationResult:
    """Weighted-sum bi-objective front: maximize oil, minimize slug risk.

    Production weights run from 0 (pure integrity) to 1 (pure production) in
    n_weights steps; objectives are min-max normalized with a seeded
    200-design pre-sample before scalarization.
    """
    norm = fit_normalization(model, scenarios, bounds, seed=seed)

    def scalarize(obj: ObjectiveValues, w: float) -> float:
        return w * (-norm.norm_oil(obj.mean_oil)) + (1.0 - w) * norm.norm_slug(obj.mean_slug_prob)

    weight_list = list(np.linspace(0.0, 1.0, n_weights))
    front = _solve_subproblems(model, scenarios, bounds, weight_list, scalarize,
                               generations, pop_size, seed, with_complexity=False)
    return OptimizationResult(front, {}, norm)


def optimize_triobjective(model: WellModel, scenarios: list[Scenario],
                          bounds: DesignBounds, step: float = 0.2,
                          generations: int = 30, pop_size: int = 32,
                          seed: int = 0) -> OptimizationResult:
    """Tri-objective Pareto surface adding the complexity score, over the
    weight simplex with the given step (21 sub-problems at 0.2)."""
    norm = fit_normalization(model, scenarios, bounds, seed=seed)

    def scalarize(obj: ObjectiveValues, w) -> float:
        w_oil, w_slug, w_c = w
        return (w_oil * (-norm.norm_oil(obj.mean_oil))
                + w_slug * norm.norm_slug(obj.mean_slug_prob)
                + w_c * obj.complexity)

    front = _solve_subproblems(model, scenarios, bounds, simplex_weights(step), scalarize,
                               generations, pop_size, seed, with_complexity=True)
    return OptimizationResult(front, {}, norm)


# ---------------------------------------------------------------------------
# Engineering baselines, sensitivity, integrity
# ---------------------------------------------------------------------------

P95_FIELDS = ("tubing_diameter", "tubing_length", "max_liquid_inflow",
              "choke_coefficient", "reservoir_pressure")


def baseline_designs(train_records: list[WellRecord],
                     bounds: DesignBounds) -> dict[str, WellDesign]:
    """Two conventional references: the P95 production heuristic (95th
    percentile of the production-relevant parameters, medians elsewhere,
    linear choke) and the training-population centroid with modal choke."""
    if not train_records:
        raise ValueError("baseline designs need a non-empty training population")
    values = np.stack([r.design.numeric_values() for r in train_records])

    p95_vec = np.median(values, axis=0)
    for name in P95_FIELDS:
        j = NUMERIC_DESIGN_FIELDS.index(name)
        p95_vec[j] = np.percentile(values[:, j], 95)
    p95 = design_from_vector(p95_vec, "linear")

    profiles = [r.design.choke_profile for r in train_records]
    modal = max(CHOKE_PROFILES, key=lambda p: (profiles.count(p), -CHOKE_PROFILES.index(p)))
    mean = design_from_vector(values.mean(axis=0), modal)
    return {"p95": p95, "mean": mean}


def evaluate_baselines(model: WellModel, baselines: dict[str, WellDesign],
                       scenarios: list[Scenario], bounds: DesignBounds,
                       with_complexity: bool = False) -> dict[str, ParetoPoint]:
    out = {}
    for name, design in baselines.items():
        obj = evaluate_design(model, design, scenarios)
        if with_complexity:
            obj = ObjectiveValues(obj.mean_oil, obj.mean_slug_prob, complexity(design, bounds))
        out[name] = ParetoPoint(design, obj, weights=None)
    return out


def sensitivity_sweep(model: WellModel, base_design: WellDesign, field_name: str,
                      n_points: int, scenarios: list[Scenario],
                      bounds: DesignBounds) -> list[tuple[float, float, float]]:
    """One-at-a-time sweep of a numeric design field across its bounds.

    Returns (field value, mean oil, mean slug probability) per point.
    """
    if field_name not in NUMERIC_DESIGN_FIELDS:
        raise ValueError(f"{field_name!r} is not a numeric design field")
    lo, hi = bounds.numeric[field_name]
    j = NUMERIC_DESIGN_FIELDS.index(field_name)
    curve = []
    for v in np.linspace(lo, hi, n_points):
        vec = base_design.numeric_values()
        vec[j] = float(v)
        # design_from_vector renormalizes the fractions, so sweeping one of
        # them keeps the design valid.
        design = design_from_vector(vec, base_design.choke_profile)
        obj = evaluate_design(model, design, scenarios)
        curve.append((float(v), obj.mean_oil, obj.mean_slug_prob))
    return curve


RISK_LOW_MAX = 0.1
RISK_MODERATE_MAX = 0.5


def risk_category(mean_slug: float) -> str:
    if mean_slug <= RISK_LOW_MAX:
        return "low"
    if mean_slug <= RISK_MODERATE_MAX:
        return "moderate"
    return "high"


def integrity_map(model: WellModel, records: list[WellRecord]) -> list[dict]:
    """Per-well mean predicted slug probability with its risk category."""
    rows = []
    for rec in records:
        pred = model.predict(rec.design, rec.ops)
        p = float(slug_probability(pred.logits_bh).mean())
        rows.append({"well_id": rec.well_id, "mean_slug_prob": p,
                     "category": risk_category(p)})
    return rows
