"""Profit and fairness metrics for a set of lending decisions.

Group arrays are 0/1 indicators; group 0 is the advantaged group (Male,
Group A) and group 1 the disadvantaged one (Female, Group B).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from fairlend.datagen import Population
from fairlend.errors import ConfigError
from fairlend.model import TrainedModel, design_matrix
from fairlend.policy import DecisionSet

FOUR_FIFTHS = 0.8
ATTRIBUTES = ("gender", "race")

METRICS_COLUMNS = (
    "model",
    "policy",
    "labels",
    "r",
    "d",
    "L",
    "net_profit",
    "roi",
    "approval_rate",
    "default_rate",
    "dp_gender",
    "dp_race",
    "eo_gender",
    "eo_race",
    "di_gender",
    "di_race",
    "ff_gender",
    "ff_race",
    "consistency",
)


@dataclass(frozen=True)
class EconomicParams:
    interest_rate: float = 0.10
    default_loss_rate: float = 0.70
    loan_amount: float = 10_000.0

    def __post_init__(self) -> None:
        for name in ("interest_rate", "default_loss_rate", "loan_amount"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.interest_rate >= 0:
            raise ConfigError("interest_rate", f"must be >= 0, got {self.interest_rate}")
        if not 0.0 <= self.default_loss_rate <= 1.0:
            raise ConfigError("default_loss_rate", f"must lie in [0, 1], got {self.default_loss_rate}")
        if not self.loan_amount > 0:
            raise ConfigError("loan_amount", f"must be positive, got {self.loan_amount}")


@dataclass(frozen=True)
class ProfitReport:
    net_profit: float
    roi: float
    default_rate: float
    approval_rate: float
    approved_count: int


@dataclass(frozen=True)
class FairnessReport:
    dp_diff: float
    eo_diff: float
    di_ratio: float
    four_fifths_pass: bool
    individual_consistency: float


@dataclass(frozen=True)
class WeightSpec:
    profit_weight: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.profit_weight <= 1.0:
            raise ValueError(f"profit_weight must lie in [0, 1], got {self.profit_weight}")

    @property
    def fairness_weight(self) -> float:
        return 1.0 - self.profit_weight


DEFAULT_WEIGHTS = tuple(WeightSpec(w) for w in (0.3, 0.5, 0.7, 0.9))


def _approved(decisions) -> np.ndarray:
    if isinstance(decisions, DecisionSet):
        return np.asarray(decisions.approved, dtype=bool)
    return np.asarray(decisions, dtype=bool)


def compute_profit(decisions, labels, econ: EconomicParams) -> ProfitReport:
    """Interest on repaid approved loans minus default losses on the rest."""
    approved = _approved(decisions)
    n = len(approved)
    y = np.asarray(labels)[approved]
    count = len(y)
    if count == 0:
        return ProfitReport(0.0, 0.0, 0.0, 0.0, 0)
    repaid = int(np.count_nonzero(y == 1))
    defaulted = count - repaid
    r, d, L = econ.interest_rate, econ.default_loss_rate, econ.loan_amount
    net = repaid * r * L - defaulted * d * L
    return ProfitReport(
        net_profit=net,
        roi=net / (count * L),
        default_rate=defaulted / count,
        approval_rate=count / n,
        approved_count=count,
    )


def _split(groups) -> tuple[np.ndarray, np.ndarray]:
    g = np.asarray(groups)
    adv, dis = g == 0, g == 1
    if not adv.any() or not dis.any():
        raise ValueError("both groups must be nonempty")
    return adv, dis


def group_rates(decisions, groups) -> tuple[float, float]:
    approved = _approved(decisions)
    adv, dis = _split(groups)
    return float(approved[adv].mean()), float(approved[dis].mean())


def demographic_parity_diff(decisions, groups) -> float:
    a, b = group_rates(decisions, groups)
    return abs(a - b)


def true_positive_rates(decisions, groups, positive_labels) -> tuple[float, float]:
    approved = _approved(decisions)
    adv, dis = _split(groups)
    pos = np.asarray(positive_labels) == 1
    rates = []
    for mask in (adv & pos, dis & pos):
        if not mask.any():
            raise ValueError("each group needs at least one positive label")
        rates.append(float(approved[mask].mean()))
    return rates[0], rates[1]


def equal_opportunity_diff(decisions, groups, positive_labels) -> float:
    a, b = true_positive_rates(decisions, groups, positive_labels)
    return abs(a - b)


def disparate_impact_ratio(decisions, groups, disadvantaged: int = 1) -> float:
    """Disadvantaged over advantaged approval rate; ``math.inf`` when only the
    advantaged rate is zero, 1.0 when both are."""
    rate0, rate1 = group_rates(decisions, groups)
    num, den = (rate1, rate0) if disadvantaged == 1 else (rate0, rate1)
    if den == 0.0:
        return 1.0 if num == 0.0 else math.inf
    return num / den


def check_four_fifths(di_ratio: float) -> bool:
    return di_ratio >= FOUR_FIFTHS


def flip_protected(X: np.ndarray, model: TrainedModel) -> np.ndarray:
    flipped = X.copy()
    for j, name in enumerate(model.schema.feature_names):
        if name in ATTRIBUTES:
            flipped[:, j] = 1.0 - flipped[:, j]
    return flipped


def individual_consistency(model: TrainedModel, pop: Population) -> float:
    """1 - mean |score change| when both protected attributes are flipped."""
    X = design_matrix(pop, model.schema)
    diff = np.abs(model.score_matrix(X) - model.score_matrix(flip_protected(X, model)))
    return float(1.0 - diff.mean())


@dataclass(frozen=True)
class EfficiencyContext:
    profit_min: float
    profit_max: float
    gap_min: float
    gap_max: float

    @classmethod
    def from_values(cls, profits: Iterable[float], gaps: Iterable[float]) -> EfficiencyContext:
        profits, gaps = list(profits), list(gaps)
        return cls(min(profits), max(profits), min(gaps), max(gaps))


def efficiency_score(
    net_profit: float, fairness_gap: float, context: EfficiencyContext, weights: WeightSpec
) -> float:
    """Weighted sum of min-max normalized profit and (1 - normalized gap).

    An axis with no spread over the context contributes its full weight.
    """
    if context.profit_max > context.profit_min:
        p = (net_profit - context.profit_min) / (context.profit_max - context.profit_min)
    else:
        p = 1.0
    if context.gap_max > context.gap_min:
        g = 1.0 - (fairness_gap - context.gap_min) / (context.gap_max - context.gap_min)
    else:
        g = 1.0
    return weights.profit_weight * p + weights.fairness_weight * g


@dataclass(frozen=True)
class MetricsReport:
    model: str
    policy: str
    labels: str
    econ: EconomicParams
    profit: ProfitReport
    fairness: dict[str, FairnessReport] = field(default_factory=dict)

    @property
    def mean_dp_gap(self) -> float:
        return (self.fairness["gender"].dp_diff + self.fairness["race"].dp_diff) / 2.0

    def to_flat(self) -> dict:
        g, r = self.fairness["gender"], self.fairness["race"]
        return {
            "model": self.model,
            "policy": self.policy,
            "labels": self.labels,
            "r": self.econ.interest_rate,
            "d": self.econ.default_loss_rate,
            "L": self.econ.loan_amount,
            "net_profit": self.profit.net_profit,
            "roi": self.profit.roi,
            "approval_rate": self.profit.approval_rate,
            "default_rate": self.profit.default_rate,
            "dp_gender": g.dp_diff,
            "dp_race": r.dp_diff,
            "eo_gender": g.eo_diff,
            "eo_race": r.eo_diff,
            "di_gender": g.di_ratio,
            "di_race": r.di_ratio,
            "ff_gender": g.four_fifths_pass,
            "ff_race": r.four_fifths_pass,
            "consistency": g.individual_consistency,
        }

    def to_json(self) -> str:
        return json.dumps({k: json_value(v) for k, v in self.to_flat().items()}, indent=2)

    def to_row(self) -> list[str]:
        flat = self.to_flat()
        return [format_cell(flat[c]) for c in METRICS_COLUMNS]


def json_value(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def format_cell(v) -> str:
    """Stable CSV text: shortest round-trip floats, inf as a flag, lowercase bools."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def fairness_reports(
    decisions: DecisionSet, pop: Population, labels: str, consistency: float
) -> dict[str, FairnessReport]:
    positives = pop.labels(labels)
    out = {}
    for attr in ATTRIBUTES:
        groups = pop.column(attr)
        di = disparate_impact_ratio(decisions, groups)
        out[attr] = FairnessReport(
            dp_diff=demographic_parity_diff(decisions, groups),
            eo_diff=equal_opportunity_diff(decisions, groups, positives),
            di_ratio=di,
            four_fifths_pass=check_four_fifths(di),
            individual_consistency=consistency,
        )
    return out


def evaluate(
    model_name: str,
    policy_label: str,
    decisions: DecisionSet,
    pop: Population,
    econ: EconomicParams,
    labels: str,
    consistency: float,
) -> MetricsReport:
    return MetricsReport(
        model=model_name,
        policy=policy_label,
        labels=labels,
        econ=econ,
        profit=compute_profit(decisions, pop.labels(labels), econ),
        fairness=fairness_reports(decisions, pop, labels, consistency),
    )


def write_reports_csv(reports: Sequence[MetricsReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for rep in reports:
            writer.writerow(rep.to_row())
