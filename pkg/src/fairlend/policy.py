"""Approval decisions: uniform and per-group thresholds, plus the calibrated
demographic-parity and equal-opportunity policies.

Tie rule everywhere: an applicant is approved when ``score >= threshold``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from fairlend.datagen import Population
from fairlend.model import BASELINE_SCHEMA, UNAWARE_SCHEMA, TrainedModel, TrainHyperparams, train_logistic

logger = logging.getLogger(__name__)

ATTRIBUTE_GROUPS = {"gender": ("M", "F"), "race": ("A", "B")}
PROVENANCES = (
    "baseline",
    "unawareness",
    "demographic_parity",
    "equal_opportunity",
    "counterfactual",
    "manual",
)
# Candidate threshold that approves nobody, even a saturated score of 1.0.
ABOVE_ALL = math.nextafter(1.0, 2.0)
_TIE_EPS = 1e-12


def _check_threshold(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= ABOVE_ALL:
        raise ValueError(f"threshold {t} outside [0, 1]")
    return t


@dataclass(frozen=True)
class DecisionPolicy:
    kind: str
    thresholds: float | dict[str, float]
    provenance: str = "manual"
    attribute: str | None = None

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.kind == "uniform":
            object.__setattr__(self, "thresholds", _check_threshold(self.thresholds))
            object.__setattr__(self, "attribute", None)
        elif self.kind == "per_group":
            if self.attribute not in ATTRIBUTE_GROUPS:
                raise ValueError(f"per_group policy needs attribute gender or race, got {self.attribute!r}")
            expected = set(ATTRIBUTE_GROUPS[self.attribute])
            if not isinstance(self.thresholds, Mapping) or set(self.thresholds) != expected:
                raise ValueError(f"per_group thresholds must cover exactly {sorted(expected)}")
            cleaned = {g: _check_threshold(self.thresholds[g]) for g in ATTRIBUTE_GROUPS[self.attribute]}
            object.__setattr__(self, "thresholds", cleaned)
        else:
            raise ValueError(f"policy kind must be 'uniform' or 'per_group', got {self.kind!r}")

    @classmethod
    def uniform(cls, threshold: float = 0.5, provenance: str = "manual") -> DecisionPolicy:
        return cls("uniform", threshold, provenance)

    @property
    def label(self) -> str:
        return self.provenance if self.attribute is None else f"{self.provenance}:{self.attribute}"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "attribute": self.attribute,
            "thresholds": self.thresholds if self.kind == "uniform" else dict(self.thresholds),
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Mapping) -> DecisionPolicy:
        return cls(
            kind=data["kind"],
            thresholds=data["thresholds"],
            provenance=data["provenance"],
            attribute=data.get("attribute"),
        )

    @classmethod
    def from_json(cls, text: str) -> DecisionPolicy:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class DecisionSet:
    ids: np.ndarray
    scores: np.ndarray
    approved: np.ndarray
    policy_provenance: str = "manual"
    model_provenance: str = ""

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, mask: np.ndarray) -> DecisionSet:
        return DecisionSet(
            self.ids[mask], self.scores[mask], self.approved[mask], self.policy_provenance, self.model_provenance
        )


def group_labels(groups, attribute: str) -> np.ndarray:
    """Map 0/1 indicator arrays to the attribute's group names; pass names through."""
    arr = np.asarray(groups)
    if arr.dtype.kind in "biu":
        return np.asarray(ATTRIBUTE_GROUPS[attribute])[arr.astype(int)]
    return arr.astype(str)


def decide(
    policy: DecisionPolicy,
    scores,
    groups=None,
    ids=None,
    model_provenance: str = "",
) -> DecisionSet:
    scores = np.asarray(scores, dtype=float)
    if policy.kind == "uniform":
        thresholds = np.full(len(scores), policy.thresholds)
    else:
        if groups is None:
            raise ValueError(f"per_group policy on {policy.attribute} requires group labels")
        labels = group_labels(groups, policy.attribute)
        if labels.shape != scores.shape:
            raise ValueError("group labels must align with scores")
        unknown = set(np.unique(labels)) - set(policy.thresholds)
        if unknown:
            raise ValueError(f"missing group label(s) {sorted(unknown)} for {policy.attribute}")
        thresholds = np.array([policy.thresholds[g] for g in labels], dtype=float)
    ids = np.arange(len(scores)) if ids is None else np.asarray(ids)
    return DecisionSet(ids, scores, scores >= thresholds, policy.label, model_provenance)


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """0, midpoints between adjacent distinct scores, and a threshold above every score."""
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate(([0.0], mids, [ABOVE_ALL]))


def rate_at(thresholds: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Fraction of ``scores`` at or above each threshold."""
    s = np.sort(scores)
    return (len(s) - np.searchsorted(s, thresholds, side="left")) / len(s)


def closest_rate_threshold(candidates: np.ndarray, rated_scores: np.ndarray, target: float) -> float:
    """Candidate whose rate over ``rated_scores`` is nearest ``target``; ties go high."""
    rates = rate_at(candidates, rated_scores)
    dist = np.abs(rates - target)
    best = np.flatnonzero(dist <= dist.min() + _TIE_EPS)
    return float(candidates[best.max()])


def _split_groups(scores, groups, attribute):
    scores = np.asarray(scores, dtype=float)
    labels = group_labels(groups, attribute)
    parts = {}
    for g in ATTRIBUTE_GROUPS[attribute]:
        mask = labels == g
        if not mask.any():
            raise ValueError(f"group {g} of {attribute} is empty")
        parts[g] = mask
    return scores, parts


def _match_groups(
    candidates: dict[str, np.ndarray], rated: dict[str, np.ndarray], target: float, tolerance: float
) -> tuple[dict[str, float], dict[str, float]]:
    """Per-group thresholds whose rate over ``rated[g]`` is closest to ``target``.

    If independent matching leaves a gap above ``tolerance`` (a group with few
    rated members moves in coarse steps), the coarsest group is matched to
    ``target`` and the others to the rate it actually reached instead.
    """
    thresholds = {g: closest_rate_threshold(candidates[g], rated[g], target) for g in candidates}
    achieved = {g: float(np.mean(rated[g] >= thresholds[g])) for g in candidates}
    if max(achieved.values()) - min(achieved.values()) <= tolerance:
        return thresholds, achieved
    anchor = min(candidates, key=lambda g: len(rated[g]))
    for g in candidates:
        if g != anchor:
            thresholds[g] = closest_rate_threshold(candidates[g], rated[g], achieved[anchor])
            achieved[g] = float(np.mean(rated[g] >= thresholds[g]))
    return thresholds, achieved


def _check_gap(achieved: dict[str, float], tolerance: float, what: str, attribute: str) -> None:
    # reachable unless tied scores make every group's rate coarse
    gap = abs(achieved[ATTRIBUTE_GROUPS[attribute][0]] - achieved[ATTRIBUTE_GROUPS[attribute][1]])
    if gap > tolerance:
        logger.warning("%s calibration on %s reached gap %.4f > tolerance %s", what, attribute, gap, tolerance)


def calibrate_demographic_parity(
    scores,
    groups,
    reference_rate: float,
    tolerance: float = 0.01,
    *,
    attribute: str = "gender",
) -> DecisionPolicy:
    """Per-group thresholds whose approval rates are closest to ``reference_rate``."""
    if not 0.0 <= reference_rate <= 1.0:
        raise ValueError("reference_rate must lie in [0, 1]")
    scores, parts = _split_groups(scores, groups, attribute)
    cand = {g: candidate_thresholds(scores[m]) for g, m in parts.items()}
    rated = {g: scores[m] for g, m in parts.items()}
    thresholds, achieved = _match_groups(cand, rated, reference_rate, tolerance)
    _check_gap(achieved, tolerance, "demographic parity", attribute)
    return DecisionPolicy("per_group", thresholds, "demographic_parity", attribute)


def calibrate_equal_opportunity(
    scores,
    groups,
    positive_labels,
    reference_tpr: float,
    tolerance: float = 0.02,
    *,
    attribute: str = "gender",
) -> DecisionPolicy:
    """Per-group thresholds whose true positive rates are closest to ``reference_tpr``.

    Candidates come from all of a group's scores; rates are measured over its
    positives only.
    """
    if not 0.0 <= reference_tpr <= 1.0:
        raise ValueError("reference_tpr must lie in [0, 1]")
    scores, parts = _split_groups(scores, groups, attribute)
    positive = np.asarray(positive_labels) == 1
    rated = {}
    for g, mask in parts.items():
        rated[g] = scores[mask & positive]
        if len(rated[g]) == 0:
            raise ValueError(f"group {g} of {attribute} has no positive labels")
    cand = {g: candidate_thresholds(scores[m]) for g, m in parts.items()}
    thresholds, achieved = _match_groups(cand, rated, reference_tpr, tolerance)
    _check_gap(achieved, tolerance, "equal opportunity", attribute)
    return DecisionPolicy("per_group", thresholds, "equal_opportunity", attribute)


@dataclass(frozen=True, eq=False)
class SuiteEntry:
    name: str
    model: TrainedModel
    policy: DecisionPolicy
    model_kind: str


BASELINE = "Baseline"
DP_GENDER = "Demo. Parity (Gender)"
DP_RACE = "Demo. Parity (Race)"
EO_GENDER = "Equal Opp. (Gender)"
EO_RACE = "Equal Opp. (Race)"
UNAWARENESS = "Fairness through Unawareness"
COUNTERFACTUAL = "Trained on Unbiased Labels"
SUITE_NAMES = (BASELINE, DP_GENDER, DP_RACE, EO_GENDER, EO_RACE, UNAWARENESS, COUNTERFACTUAL)


def reference_rates(model: TrainedModel, pop: Population, labels: str, threshold: float = 0.5) -> tuple[float, float]:
    """(approval rate, true positive rate) of a uniform threshold on ``pop``."""
    approved = model.score_population(pop) >= threshold
    positive = pop.labels(labels) == 1
    return float(approved.mean()), float(approved[positive].mean())


def calibrated_policy(
    model: TrainedModel,
    pop: Population,
    provenance: str,
    attribute: str,
    *,
    reference_model: TrainedModel | None = None,
    eo_labels: str = "observed",
    dp_tolerance: float = 0.01,
    eo_tolerance: float = 0.02,
) -> DecisionPolicy:
    """Calibrate a DP or EO policy for ``model`` on ``pop``, anchored to the
    reference model's uniform-0.5 approval rate or TPR on the same population."""
    ref_rate, ref_tpr = reference_rates(reference_model or model, pop, eo_labels)
    scores = model.score_population(pop)
    groups = pop.column(attribute)
    if provenance == "demographic_parity":
        return calibrate_demographic_parity(scores, groups, ref_rate, dp_tolerance, attribute=attribute)
    if provenance == "equal_opportunity":
        return calibrate_equal_opportunity(
            scores, groups, pop.labels(eo_labels), ref_tpr, eo_tolerance, attribute=attribute
        )
    raise ValueError(f"no calibration for provenance {provenance!r}")


def build_policy_suite(
    train: Population,
    hp: TrainHyperparams | None = None,
    *,
    eo_labels: str = "observed",
) -> dict[str, SuiteEntry]:
    """The seven model/policy pairs compared in the model suite, calibrated on ``train``."""
    hp = hp or TrainHyperparams()
    baseline = train_logistic(train, BASELINE_SCHEMA, "observed", hp)
    unaware = train_logistic(train, UNAWARE_SCHEMA, "observed", hp)
    counterfactual = train_logistic(train, BASELINE_SCHEMA, "true", hp)

    def calibrated(provenance: str, attribute: str) -> DecisionPolicy:
        return calibrated_policy(baseline, train, provenance, attribute, eo_labels=eo_labels)

    entries = [
        SuiteEntry(BASELINE, baseline, DecisionPolicy.uniform(0.5, "baseline"), "baseline"),
        SuiteEntry(DP_GENDER, baseline, calibrated("demographic_parity", "gender"), "baseline"),
        SuiteEntry(DP_RACE, baseline, calibrated("demographic_parity", "race"), "baseline"),
        SuiteEntry(EO_GENDER, baseline, calibrated("equal_opportunity", "gender"), "baseline"),
        SuiteEntry(EO_RACE, baseline, calibrated("equal_opportunity", "race"), "baseline"),
        SuiteEntry(UNAWARENESS, unaware, DecisionPolicy.uniform(0.5, "unawareness"), "unawareness"),
        SuiteEntry(COUNTERFACTUAL, counterfactual, DecisionPolicy.uniform(0.5, "counterfactual"), "counterfactual"),
    ]
    return {e.name: e for e in entries}


def decide_population(entry: SuiteEntry, pop: Population) -> DecisionSet:
    scores = entry.model.score_population(pop)
    groups = pop.column(entry.policy.attribute) if entry.policy.attribute else None
    return decide(entry.policy, scores, groups, ids=pop.id, model_provenance=entry.model_kind)
