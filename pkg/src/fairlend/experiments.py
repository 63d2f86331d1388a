"""Model-suite comparison, economic grid, threshold sweeps, efficiency
frontiers and leave-one-feature-out fairness impact.

Independent tasks (grid cells, thresholds, retrainings) can run on a thread
pool; results are always assembled in key order, so tables do not depend on
the degree of parallelism.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence, TypeVar

import numpy as np

from fairlend.datagen import Population
from fairlend.metrics import (
    DEFAULT_WEIGHTS,
    EconomicParams,
    EfficiencyContext,
    MetricsReport,
    WeightSpec,
    compute_profit,
    demographic_parity_diff,
    efficiency_score,
    evaluate,
    fairness_reports,
    format_cell,
    individual_consistency,
)
from fairlend.model import PROTECTED_FEATURES, UNAWARE_SCHEMA, FeatureSchema, TrainedModel, TrainHyperparams, train_logistic
from fairlend.policy import DecisionPolicy, DecisionSet, SuiteEntry, build_policy_suite, decide, decide_population

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """Order-preserving map, threaded when ``workers > 1``."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class ScenarioGrid:
    interest_rates: tuple[float, ...] = (0.05, 0.10, 0.15, 0.20)
    default_loss_rates: tuple[float, ...] = (0.50, 0.70, 0.90)
    loan_amount: float = 10_000.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "interest_rates", tuple(float(r) for r in self.interest_rates))
        object.__setattr__(self, "default_loss_rates", tuple(float(d) for d in self.default_loss_rates))
        if not self.interest_rates or not self.default_loss_rates:
            raise ValueError("scenario grid axes must be nonempty")
        list(self.cells())  # validates every cell

    def cells(self) -> Iterator[EconomicParams]:
        for r in self.interest_rates:
            for d in self.default_loss_rates:
                yield EconomicParams(r, d, self.loan_amount)

    def to_dict(self) -> dict:
        return {
            "interest_rates": list(self.interest_rates),
            "default_loss_rates": list(self.default_loss_rates),
            "loan_amount": self.loan_amount,
        }


@dataclass(frozen=True, eq=False)
class SuiteEvaluation:
    entry: SuiteEntry
    decisions: DecisionSet
    consistency: float


def evaluate_suite(suite: dict[str, SuiteEntry], pop: Population, workers: int = 1) -> list[SuiteEvaluation]:
    def one(entry: SuiteEntry) -> SuiteEvaluation:
        return SuiteEvaluation(entry, decide_population(entry, pop), individual_consistency(entry.model, pop))

    return parallel_map(one, list(suite.values()), workers)


def run_model_suite(
    train: Population,
    test: Population,
    econ: EconomicParams,
    hp: TrainHyperparams | None = None,
    *,
    labels: str = "true",
    suite: dict[str, SuiteEntry] | None = None,
) -> list[MetricsReport]:
    """One report per suite entry, evaluated on ``test``."""
    suite = suite if suite is not None else build_policy_suite(train, hp)
    return [
        evaluate(ev.entry.name, ev.entry.policy.label, ev.decisions, test, econ, labels, ev.consistency)
        for ev in evaluate_suite(suite, test)
    ]


def economic_sweep(
    suite: dict[str, SuiteEntry],
    test: Population,
    grid: ScenarioGrid,
    *,
    labels: str = "true",
    workers: int = 1,
) -> list[MetricsReport]:
    """Reports for every (model, r, d) cell, ordered by suite order, then r, then d.

    Decisions and fairness metrics do not depend on the economy, so they are
    computed once per model and shared by all of its cells.
    """
    evaluations = evaluate_suite(suite, test, workers)
    fairness = [fairness_reports(ev.decisions, test, labels, ev.consistency) for ev in evaluations]
    y = test.labels(labels)
    tasks = [(i, econ) for i in range(len(evaluations)) for econ in grid.cells()]

    def cell(task: tuple[int, EconomicParams]) -> MetricsReport:
        i, econ = task
        ev = evaluations[i]
        return MetricsReport(
            model=ev.entry.name,
            policy=ev.entry.policy.label,
            labels=labels,
            econ=econ,
            profit=compute_profit(ev.decisions, y, econ),
            fairness=fairness[i],
        )

    return parallel_map(cell, tasks, workers)


@dataclass(frozen=True)
class ThresholdPoint:
    threshold: float
    net_profit: float
    roi: float
    approval_rate: float
    default_rate: float
    dp_gender: float
    dp_race: float

    @property
    def mean_gap(self) -> float:
        return (self.dp_gender + self.dp_race) / 2.0


CURVE_COLUMNS = ("threshold", "net_profit", "roi", "approval_rate", "default_rate", "dp_gender", "dp_race")


@dataclass(frozen=True)
class ThresholdCurve:
    points: tuple[ThresholdPoint, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))
        ts = [p.threshold for p in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("curve thresholds must be strictly increasing")

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def thresholds(self) -> list[float]:
        return [p.threshold for p in self.points]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_COLUMNS)
            for p in self.points:
                w.writerow([format_cell(float(getattr(p, c))) for c in CURVE_COLUMNS])


def threshold_grid(step: float) -> list[float]:
    """0, step, 2*step, ... up to and including 1."""
    if not 0.0 < step <= 0.5:
        raise ValueError(f"step must lie in (0, 0.5], got {step}")
    n = round(1.0 / step)
    if abs(n * step - 1.0) > 1e-9:
        n = math.floor(1.0 / step)
    ts = [round(i * step, 12) for i in range(n + 1)]
    if ts[-1] < 1.0:
        ts.append(1.0)
    ts[-1] = min(ts[-1], 1.0)
    return ts


def threshold_point(
    threshold: float, scores: np.ndarray, pop: Population, econ: EconomicParams, labels: str
) -> ThresholdPoint:
    decisions = decide(DecisionPolicy.uniform(threshold), scores, ids=pop.id)
    profit = compute_profit(decisions, pop.labels(labels), econ)
    return ThresholdPoint(
        threshold=threshold,
        net_profit=profit.net_profit,
        roi=profit.roi,
        approval_rate=float(decisions.approved.mean()),
        default_rate=profit.default_rate,
        dp_gender=demographic_parity_diff(decisions, pop.gender),
        dp_race=demographic_parity_diff(decisions, pop.race),
    )


def threshold_sweep(
    model: TrainedModel,
    test: Population,
    econ: EconomicParams,
    step: float = 0.01,
    *,
    labels: str = "true",
    workers: int = 1,
) -> ThresholdCurve:
    scores = model.score_population(test)
    points = parallel_map(lambda t: threshold_point(t, scores, test, econ, labels), threshold_grid(step), workers)
    return ThresholdCurve(tuple(points))


def find_optimal_threshold(curve: ThresholdCurve, weights: WeightSpec) -> tuple[float, float]:
    """Best (threshold, efficiency score) on the curve; ties go to the lower threshold."""
    if len(curve) == 0:
        raise ValueError("curve is empty")
    ctx = EfficiencyContext.from_values((p.net_profit for p in curve), (p.mean_gap for p in curve))
    best_t, best_s = None, -math.inf
    for p in curve:
        s = efficiency_score(p.net_profit, p.mean_gap, ctx, weights)
        if s > best_s:
            best_t, best_s = p.threshold, s
    return best_t, best_s


@dataclass(frozen=True)
class FrontierRow:
    profit_weight: float
    model: str
    score: float
    is_best: bool


FRONTIER_COLUMNS = ("profit_weight", "model", "score", "is_best")


def efficiency_frontier(
    reports: Sequence[MetricsReport], weight_list: Iterable[WeightSpec] = DEFAULT_WEIGHTS
) -> list[FrontierRow]:
    """Efficiency score of every model under every weighting, suite-normalized.

    ``is_best`` marks the per-weight argmax (first in suite order on ties).
    """
    ctx = EfficiencyContext.from_values((r.profit.net_profit for r in reports), (r.mean_dp_gap for r in reports))
    rows = []
    for w in weight_list:
        scores = [efficiency_score(r.profit.net_profit, r.mean_dp_gap, ctx, w) for r in reports]
        best = int(np.argmax(scores))
        rows.extend(
            FrontierRow(w.profit_weight, r.model, s, i == best) for i, (r, s) in enumerate(zip(reports, scores))
        )
    return rows


def frontier_to_csv(rows: Sequence[FrontierRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRONTIER_COLUMNS)
        for row in rows:
            w.writerow([format_cell(getattr(row, c)) for c in FRONTIER_COLUMNS])


@dataclass(frozen=True)
class FeatureImpactReport:
    """Per removed feature: DP gap without it minus DP gap with the full schema.

    Negative deltas mean the feature widens the gap.
    """

    full_gap: dict[str, float]
    deltas: dict[str, dict[str, float]]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("feature", "delta_dp_gender", "delta_dp_race"))
            for feature, d in self.deltas.items():
                w.writerow([feature, format_cell(d["gender"]), format_cell(d["race"])])

    def largest_negative(self, attribute: str) -> str:
        return min(self.deltas, key=lambda f: self.deltas[f][attribute])


def _dp_gaps(model: TrainedModel, pop: Population, threshold: float) -> dict[str, float]:
    approved = model.score_population(pop) >= threshold
    return {
        "gender": demographic_parity_diff(approved, pop.gender),
        "race": demographic_parity_diff(approved, pop.race),
    }


def feature_fairness_impact(
    train: Population,
    test: Population,
    hp: TrainHyperparams | None = None,
    base_schema: FeatureSchema = UNAWARE_SCHEMA,
    *,
    labels: str = "observed",
    threshold: float = 0.5,
    workers: int = 1,
) -> FeatureImpactReport:
    """Leave-one-feature-out retraining over the non-protected features.

    The default base is the unaware schema, so a feature's delta measures the
    disparity it carries as a proxy rather than what the protected indicators
    already explain.
    """
    if len(base_schema) < 2:
        raise ValueError("base schema needs at least two features")
    hp = hp or TrainHyperparams()
    full = _dp_gaps(train_logistic(train, base_schema, labels, hp), test, threshold)
    features = [f for f in base_schema if f not in PROTECTED_FEATURES]

    def drop(feature: str) -> dict[str, float]:
        gaps = _dp_gaps(train_logistic(train, base_schema.without(feature), labels, hp), test, threshold)
        return {a: gaps[a] - full[a] for a in ("gender", "race")}

    deltas = parallel_map(drop, features, workers)
    return FeatureImpactReport(full, dict(zip(features, deltas)))
