"""Multi-cycle lending simulation with credit-score feedback.

Each cycle decides over the whole population, raises the credit score of every
approved applicant, recomputes ground-truth repayment probabilities from the
updated features and draws that cycle's outcomes. Outcome draws come from a
generator keyed by ``(seed, cycle)`` and indexed by applicant id, so results do
not depend on evaluation order.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping

import numpy as np

from fairlend.datagen import CELLS, CREDIT_MAX, RACES, Population, draw_labels, penalty_vector, repay_probability
from fairlend.errors import ConfigError
from fairlend.metrics import EconomicParams, compute_profit
from fairlend.model import BASELINE_SCHEMA, UNAWARE_SCHEMA, FeatureSchema, TrainedModel, TrainHyperparams, train_logistic
from fairlend.policy import ATTRIBUTE_GROUPS, DecisionPolicy, calibrated_policy, decide

TRACE_COLUMNS = ("cycle", "attribute", "group", "metric", "value")
GROUP_METRICS = ("approval_rate", "mean_credit_score", "net_profit")
GAP_METRIC = "approval_rate_gap"


@dataclass(frozen=True)
class SimulationConfig:
    n_cycles: int = 5
    credit_improvement: float = 15.0
    retrain_each_cycle: bool = False
    econ: EconomicParams = field(default_factory=EconomicParams)
    seed: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.n_cycles, int) or self.n_cycles < 1:
            raise ConfigError("sim.n_cycles", "must be an integer >= 1")
        if not self.credit_improvement >= 0:
            raise ConfigError("sim.credit_improvement", "must be >= 0")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("sim.seed", "must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class ModelRecipe:
    schema: FeatureSchema = BASELINE_SCHEMA
    labels: str = "observed"
    hp: TrainHyperparams = field(default_factory=TrainHyperparams)


@dataclass(frozen=True)
class PolicyRecipe:
    """Which intervention to apply each cycle; DP and EO recalibrate every cycle."""

    provenance: str = "baseline"
    attribute: str | None = None
    threshold: float = 0.5
    eo_labels: str = "observed"

    def __post_init__(self) -> None:
        calibrated = self.provenance in ("demographic_parity", "equal_opportunity")
        if calibrated and self.attribute not in ATTRIBUTE_GROUPS:
            raise ValueError(f"{self.provenance} recipe needs attribute gender or race")
        if self.provenance not in ("baseline", "unawareness", "counterfactual", "demographic_parity", "equal_opportunity"):
            raise ValueError(f"unknown policy recipe {self.provenance!r}")

    @property
    def name(self) -> str:
        return self.provenance if self.attribute is None else f"{self.provenance}:{self.attribute}"

    @classmethod
    def parse(cls, text: str) -> PolicyRecipe:
        provenance, _, attribute = text.partition(":")
        return cls(provenance, attribute or None)

    def model_recipe(self, hp: TrainHyperparams | None = None) -> ModelRecipe:
        """Schema and label source the intervention is paired with."""
        hp = hp or TrainHyperparams()
        if self.provenance == "unawareness":
            return ModelRecipe(UNAWARE_SCHEMA, "observed", hp)
        if self.provenance == "counterfactual":
            return ModelRecipe(BASELINE_SCHEMA, "true", hp)
        return ModelRecipe(BASELINE_SCHEMA, "observed", hp)

    def build(self, model: TrainedModel, pop: Population) -> DecisionPolicy:
        if self.attribute is None:
            return DecisionPolicy.uniform(self.threshold, self.provenance)
        return calibrated_policy(model, pop, self.provenance, self.attribute, eo_labels=self.eo_labels)


TraceRow = tuple[int, str, str, str, float]


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    """Long-form per-cycle metrics.

    ``approvals`` (cycles x applicants), ``initial_credit`` and ``final_credit``
    are kept for analysis but are not part of the serialized table.
    """

    rows: tuple[TraceRow, ...]
    approvals: np.ndarray | None = None
    initial_credit: np.ndarray | None = None
    final_credit: np.ndarray | None = None

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SimulationTrace) and self.rows == other.rows

    @property
    def n_cycles(self) -> int:
        return max(r[0] for r in self.rows)

    def value(self, cycle: int, attribute: str, group: str, metric: str) -> float:
        for r in self.rows:
            if r[:4] == (cycle, attribute, group, metric):
                return r[4]
        raise KeyError((cycle, attribute, group, metric))

    def gap(self, cycle: int, attribute: str) -> float:
        return self.value(cycle, "gap", attribute, GAP_METRIC)

    def gaps(self, attribute: str) -> list[float]:
        return [self.gap(c, attribute) for c in range(1, self.n_cycles + 1)]


def _group_rows(cycle, attribute, masks: Mapping[str, np.ndarray], approved, credit, outcomes, econ):
    rows = []
    for group, mask in masks.items():
        if not mask.any():
            continue
        profit = compute_profit(approved[mask], outcomes[mask], econ)
        values = (float(approved[mask].mean()), float(credit[mask].mean()), float(profit.net_profit))
        rows.extend((cycle, attribute, group, metric, v) for metric, v in zip(GROUP_METRICS, values))
    return rows


def run_simulation(
    initial_pop: Population,
    model_recipe: ModelRecipe,
    policy_recipe: PolicyRecipe,
    sim: SimulationConfig,
) -> SimulationTrace:
    if len(initial_pop) == 0:
        raise ValueError("initial population is empty")
    config = initial_pop.gen_config
    if config is None or not initial_pop.label_scaling:
        raise ValueError("simulation needs a population carrying its generator config and label scaling")

    pop = initial_pop
    n = len(pop)
    initial_credit = pop.credit_score.copy()
    times_approved = np.zeros(n, dtype=np.int64)
    history = np.zeros((sim.n_cycles, n), dtype=bool)
    penalty = penalty_vector(config, pop.gender, pop.race)
    cells = pop.cells()
    cell_masks = {c: cells == c for c in CELLS}
    race_masks = {g: pop.race == i for i, g in enumerate(RACES)}
    model = None
    rows: list[TraceRow] = []

    for cycle in range(1, sim.n_cycles + 1):
        if model is None or sim.retrain_each_cycle:
            model = train_logistic(pop, model_recipe.schema, model_recipe.labels, model_recipe.hp)
        policy = policy_recipe.build(model, pop)
        groups = pop.column(policy.attribute) if policy.attribute else None
        approved = decide(policy, model.score_population(pop), groups, ids=pop.id).approved
        history[cycle - 1] = approved
        times_approved += approved

        credit = np.minimum(CREDIT_MAX, initial_credit + times_approved * sim.credit_improvement)
        features = {name: pop.column(name) for name in pop.label_scaling}
        features["credit_score"] = credit
        prob = repay_probability(features, config.true_label_coefficients, config.true_label_intercept, pop.label_scaling)
        uniforms = np.random.default_rng([sim.seed, cycle]).random(int(pop.id.max()) + 1)[pop.id]
        true, observed = draw_labels(prob, penalty, uniforms)
        pop = pop.with_columns(credit_score=credit, true_repay_prob=prob, true_repaid=true, observed_repaid=observed)

        rows += _group_rows(cycle, "cell", cell_masks, approved, credit, true, sim.econ)
        rows += _group_rows(cycle, "race", race_masks, approved, credit, true, sim.econ)
        for attr in ("gender", "race"):
            col = pop.column(attr)
            rates = [approved[col == i].mean() if (col == i).any() else 0.0 for i in (0, 1)]
            rows.append((cycle, "gap", attr, GAP_METRIC, float(abs(rates[0] - rates[1]))))

    return SimulationTrace(tuple(rows), history, initial_credit, pop.credit_score.copy())


def _write_rows(fh: IO[str], header: Iterable[str], rows: Iterable[Iterable]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else str(v) for v in row])


def trace_to_table(trace: SimulationTrace) -> str:
    if not trace.rows:
        raise ValueError("trace is empty")
    buf = io.StringIO()
    _write_rows(buf, TRACE_COLUMNS, trace.rows)
    return buf.getvalue()


def _parse_row(row: list[str]) -> TraceRow:
    cycle, attribute, group, metric, value = row
    return int(cycle), attribute, group, metric, float(value)


def trace_from_table(text: str) -> SimulationTrace:
    rows = list(csv.reader(io.StringIO(text)))
    if tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError("unexpected trace header")
    return SimulationTrace(tuple(_parse_row(r) for r in rows[1:]))


def traces_to_table(traces: Mapping[str, SimulationTrace]) -> str:
    """Several traces in one table, prefixed by a ``recipe`` column."""
    buf = io.StringIO()
    _write_rows(buf, ("recipe",) + TRACE_COLUMNS, ((name,) + row for name, t in traces.items() for row in t.rows))
    return buf.getvalue()


def traces_from_table(text: str) -> dict[str, SimulationTrace]:
    rows = list(csv.reader(io.StringIO(text)))
    if tuple(rows[0]) != ("recipe",) + TRACE_COLUMNS:
        raise ValueError("unexpected trace header")
    grouped: dict[str, list[TraceRow]] = {}
    for r in rows[1:]:
        grouped.setdefault(r[0], []).append(_parse_row(r[1:]))
    return {name: SimulationTrace(tuple(rs)) for name, rs in grouped.items()}


def write_trace(trace: SimulationTrace, path: str | Path) -> None:
    Path(path).write_text(trace_to_table(trace))
