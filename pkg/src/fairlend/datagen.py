"""Synthetic loan applicant populations with controlled structural and label bias.

Each applicant carries two repayment labels drawn from one shared uniform:
``true_repaid`` follows the creditworthiness model, ``observed_repaid`` is the
same draw against a probability lowered by a per-cell historical penalty. An
observed repayment therefore never occurs without the true one.

Protected attributes are stored as indicators: ``gender`` is 1 for Female,
``race`` is 1 for Group B.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import IO, Iterator, Mapping

import numpy as np
from scipy.special import expit

from fairlend.errors import ConfigError

GENDERS = ("M", "F")
RACES = ("A", "B")
CELLS = tuple(f"{g}-{r}" for r in RACES for g in GENDERS)
PROTECTED = ("gender", "race")
LEGITIMATE = ("income", "education_years", "credit_score", "employment_years", "age")
CREDIT_MIN, CREDIT_MAX = 300.0, 850.0

CSV_COLUMNS = (
    "id",
    "gender",
    "race",
    "age",
    "income",
    "education_years",
    "credit_score",
    "employment_years",
    "zipcode",
    "true_repay_prob",
    "true_repaid",
    "observed_repaid",
)
_FLOAT_COLUMNS = ("income", "education_years", "credit_score", "employment_years", "true_repay_prob")
_DECIMALS = 6


def cell_key(gender: int, race: int) -> str:
    return f"{GENDERS[gender]}-{RACES[race]}"


def sigmoid(z):
    out = expit(np.asarray(z, dtype=float))
    return out if out.ndim else float(out)


def _default_income() -> dict[str, float]:
    base = 60_000.0
    return {
        "M-A": base,
        "F-A": base * 0.75,
        "M-B": base * 0.70,
        "F-B": round(base * 0.75 * 0.70, 6),
    }


def _default_education() -> dict[str, float]:
    return {"M-A": 14.0, "F-A": 14.0, "M-B": 12.5, "F-B": 12.5}


def _default_coefficients() -> dict[str, float]:
    # credit_score > income > education > employment > |age|; the 1.5 factor
    # sets how sharply the legitimate features separate outcomes.
    scale = 1.5
    base = {"credit_score": 1.484, "income": 0.949, "education_years": 0.481, "employment_years": 0.290, "age": -0.030}
    return {k: round(v * scale, 6) for k, v in base.items()}


def _default_penalty() -> dict[str, float]:
    return {"M-A": 0.0, "F-A": 0.05, "M-B": 0.10, "F-B": 0.15}


@dataclass(frozen=True)
class GenConfig:
    """Parameters of the synthetic population generator.

    Cell-keyed maps use ``"<gender>-<race>"`` keys, e.g. ``"F-B"``.
    """

    n_applicants: int = 10_000
    seed: int = 0
    female_fraction: float = 0.5
    group_b_fraction: float = 0.4
    income_mean_by_group: dict[str, float] = field(default_factory=_default_income)
    income_sigma: float = 0.4
    credit_mean: float = 680.0
    credit_sigma: float = 60.0
    credit_mean_shift_group_b: float = -60.0
    education_mean_by_group: dict[str, float] = field(default_factory=_default_education)
    education_sigma: float = 2.0
    employment_mean: float = 6.0
    age_range: tuple[int, int] = (21, 70)
    zipcode_count: int = 50
    zipcode_race_correlation: float = 0.6
    true_label_coefficients: dict[str, float] = field(default_factory=_default_coefficients)
    true_label_intercept: float = -3.5
    historical_bias_penalty: dict[str, float] = field(default_factory=_default_penalty)

    def __post_init__(self) -> None:
        object.__setattr__(self, "age_range", tuple(self.age_range))
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.n_applicants, int) or self.n_applicants < 1:
            raise ConfigError("n_applicants", "must be an integer >= 1")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        for name in ("female_fraction", "group_b_fraction", "zipcode_race_correlation"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(name, f"must lie in [0, 1], got {value}")
        if not isinstance(self.zipcode_count, int) or self.zipcode_count < 1:
            raise ConfigError("zipcode_count", "must be an integer >= 1")
        for name in ("income_mean_by_group", "education_mean_by_group", "historical_bias_penalty"):
            mapping = getattr(self, name)
            if set(mapping) != set(CELLS):
                raise ConfigError(name, f"must define exactly the cells {list(CELLS)}")
        if any(v <= 0 for v in self.income_mean_by_group.values()):
            raise ConfigError("income_mean_by_group", "means must be positive")
        for cell, pen in self.historical_bias_penalty.items():
            if not 0.0 <= pen <= 1.0:
                raise ConfigError("historical_bias_penalty", f"{cell} penalty {pen} outside [0, 1]")
        if self.historical_bias_penalty["M-A"] != 0.0:
            raise ConfigError("historical_bias_penalty", "advantaged cell M-A must have penalty 0")
        for name in ("income_sigma", "credit_sigma", "education_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be nonnegative")
        if self.employment_mean <= 0:
            raise ConfigError("employment_mean", "must be positive")
        lo, hi = self.age_range
        if len(self.age_range) != 2 or lo > hi or lo < 0:
            raise ConfigError("age_range", "must be [min_years, max_years] with 0 <= min <= max")
        leaked = set(self.true_label_coefficients) & set(PROTECTED)
        if leaked:
            raise ConfigError("true_label_coefficients", f"protected attributes not allowed: {sorted(leaked)}")
        unknown = set(self.true_label_coefficients) - set(LEGITIMATE)
        if unknown:
            raise ConfigError("true_label_coefficients", f"unknown features: {sorted(unknown)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["age_range"] = list(self.age_range)
        return d

    @classmethod
    def from_dict(cls, data: Mapping, *, require_all: bool = False, path: str = "gen") -> GenConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown key")
        if require_all:
            # seed is derived from the run's base seed when omitted
            missing = [k for k in sorted(known - {"seed"}) if k not in data]
            if missing:
                raise ConfigError(f"{path}.{missing[0]}", "missing required key")
        return cls(**dict(data))


@dataclass(frozen=True)
class ApplicantRecord:
    id: int
    gender: str
    race: str
    age: float
    income: float
    education_years: float
    credit_score: float
    employment_years: float
    zipcode: int
    true_repay_prob: float
    true_repaid: int
    observed_repaid: int


@dataclass(frozen=True, eq=False)
class Population:
    """Column-oriented, read-only applicant table.

    ``label_scaling`` holds the (mean, std) pairs used to standardize the
    legitimate features inside the repayment model; subsets inherit it so that
    probabilities can be recomputed consistently after feature updates.
    """

    id: np.ndarray
    gender: np.ndarray
    race: np.ndarray
    age: np.ndarray
    income: np.ndarray
    education_years: np.ndarray
    credit_score: np.ndarray
    employment_years: np.ndarray
    zipcode: np.ndarray
    true_repay_prob: np.ndarray
    true_repaid: np.ndarray
    observed_repaid: np.ndarray
    gen_config: GenConfig | None = None
    role: str = "full"
    label_scaling: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.id)
        for name in CSV_COLUMNS:
            col = np.asarray(getattr(self, name))
            if col.shape != (n,):
                raise ValueError(f"column {name} has shape {col.shape}, expected ({n},)")
            col = col.copy()
            col.setflags(write=False)
            object.__setattr__(self, name, col)
        if len(np.unique(self.id)) != n:
            raise ValueError("applicant ids must be unique")
        if self.role not in ("full", "train", "test"):
            raise ValueError(f"unknown population role {self.role!r}")

    def __len__(self) -> int:
        return len(self.id)

    def column(self, name: str) -> np.ndarray:
        if name not in CSV_COLUMNS:
            raise KeyError(name)
        return getattr(self, name)

    def labels(self, source: str) -> np.ndarray:
        if source == "observed":
            return self.observed_repaid
        if source == "true":
            return self.true_repaid
        raise ValueError(f"label source must be 'observed' or 'true', got {source!r}")

    def record(self, i: int) -> ApplicantRecord:
        return ApplicantRecord(
            id=int(self.id[i]),
            gender=GENDERS[int(self.gender[i])],
            race=RACES[int(self.race[i])],
            age=float(self.age[i]),
            income=float(self.income[i]),
            education_years=float(self.education_years[i]),
            credit_score=float(self.credit_score[i]),
            employment_years=float(self.employment_years[i]),
            zipcode=int(self.zipcode[i]),
            true_repay_prob=float(self.true_repay_prob[i]),
            true_repaid=int(self.true_repaid[i]),
            observed_repaid=int(self.observed_repaid[i]),
        )

    def records(self) -> Iterator[ApplicantRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def subset(self, index: np.ndarray, role: str | None = None) -> Population:
        index = np.asarray(index, dtype=int)
        cols = {name: getattr(self, name)[index] for name in CSV_COLUMNS}
        return replace(self, **cols, role=role or self.role)

    def with_columns(self, **cols: np.ndarray) -> Population:
        return replace(self, **cols)

    def cells(self) -> np.ndarray:
        """Cell label per applicant, e.g. ``"F-B"``."""
        table = np.array([[cell_key(g, r) for r in (0, 1)] for g in (0, 1)])
        return table[self.gender, self.race]

    def same_records(self, other: Population) -> bool:
        return len(self) == len(other) and all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in CSV_COLUMNS
        )

    def to_csv(self, target: str | Path | IO[str]) -> None:
        if isinstance(target, (str, Path)):
            with open(target, "w", newline="") as fh:
                self._write_csv(fh)
        else:
            self._write_csv(target)

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self._write_csv(buf)
        return buf.getvalue()

    def _write_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for i in range(len(self)):
            row = []
            for name in CSV_COLUMNS:
                value = getattr(self, name)[i]
                if name == "gender":
                    row.append(GENDERS[int(value)])
                elif name == "race":
                    row.append(RACES[int(value)])
                elif name in _FLOAT_COLUMNS or name == "age":
                    row.append(f"{value:.{_DECIMALS}f}")
                else:
                    row.append(str(int(value)))
            writer.writerow(row)

    @classmethod
    def from_csv(cls, source: str | Path | IO[str], gen_config: GenConfig | None = None) -> Population:
        if isinstance(source, (str, Path)):
            with open(source, newline="") as fh:
                rows = list(csv.reader(fh))
        else:
            rows = list(csv.reader(source))
        if not rows or tuple(rows[0]) != CSV_COLUMNS:
            raise ValueError("population CSV header does not match the expected columns")
        body = rows[1:]
        cols: dict[str, np.ndarray] = {}
        for j, name in enumerate(CSV_COLUMNS):
            raw = [r[j] for r in body]
            if name == "gender":
                cols[name] = np.array([GENDERS.index(v) for v in raw], dtype=np.int8)
            elif name == "race":
                cols[name] = np.array([RACES.index(v) for v in raw], dtype=np.int8)
            elif name in _FLOAT_COLUMNS or name == "age":
                cols[name] = np.array([float(v) for v in raw], dtype=float)
            else:
                cols[name] = np.array([int(v) for v in raw], dtype=np.int64)
        for name in ("true_repaid", "observed_repaid"):
            cols[name] = cols[name].astype(np.int8)
        scaling = _feature_scaling(cols)
        return cls(**cols, gen_config=gen_config, role="full", label_scaling=scaling)


def _feature_scaling(cols: Mapping[str, np.ndarray]) -> dict[str, tuple[float, float]]:
    scaling = {}
    for name in LEGITIMATE:
        values = np.asarray(cols[name], dtype=float)
        sd = float(values.std())
        scaling[name] = (float(values.mean()), sd if sd > 0 else 1.0)
    return scaling


def repay_probability(
    features: Mapping[str, np.ndarray],
    coefficients: Mapping[str, float],
    intercept: float,
    scaling: Mapping[str, tuple[float, float]],
) -> np.ndarray:
    """Ground-truth repayment probability from standardized legitimate features."""
    n = len(next(iter(features.values())))
    z = np.full(n, float(intercept))
    for name, coef in coefficients.items():
        mean, sd = scaling[name]
        z += coef * (np.asarray(features[name], dtype=float) - mean) / sd
    return np.round(sigmoid(z), _DECIMALS)


def draw_labels(
    prob: np.ndarray, penalty: np.ndarray, uniforms: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Coupled (true, observed) labels from one uniform per applicant."""
    observed_prob = np.clip(prob - penalty, 0.0, 1.0)
    true = (uniforms < prob).astype(np.int8)
    observed = (uniforms < observed_prob).astype(np.int8)
    return true, observed


def penalty_vector(config: GenConfig, gender: np.ndarray, race: np.ndarray) -> np.ndarray:
    table = np.array(
        [[config.historical_bias_penalty[cell_key(g, r)] for r in (0, 1)] for g in (0, 1)]
    )
    return table[gender, race]


def _zipcodes(rng: np.random.Generator, race: np.ndarray, config: GenConfig) -> np.ndarray:
    # Group B lives preferentially in the last block of zipcodes, Group A in the
    # rest; with probability 1 - correlation a zipcode is drawn uniformly instead.
    z = config.zipcode_count
    n = len(race)
    if z == 1:
        return np.zeros(n, dtype=np.int64)
    n_b = min(z - 1, max(1, round(z * config.group_b_fraction)))
    n_a = z - n_b
    segregated = rng.random(n) < config.zipcode_race_correlation
    uniform_zip = rng.integers(0, z, size=n)
    block_a = rng.integers(0, n_a, size=n)
    block_b = n_a + rng.integers(0, n_b, size=n)
    own_block = np.where(race == 1, block_b, block_a)
    return np.where(segregated, own_block, uniform_zip).astype(np.int64)


def generate_population(config: GenConfig) -> Population:
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.n_applicants

    gender = (rng.random(n) < config.female_fraction).astype(np.int8)
    race = (rng.random(n) < config.group_b_fraction).astype(np.int8)

    lo, hi = config.age_range
    age = rng.integers(lo, hi + 1, size=n).astype(float)

    income_mean = np.array(
        [[config.income_mean_by_group[cell_key(g, r)] for r in (0, 1)] for g in (0, 1)]
    )[gender, race]
    sigma = config.income_sigma
    # lognormal parameterised by its arithmetic mean
    income = income_mean * np.exp(sigma * rng.standard_normal(n) - 0.5 * sigma**2)

    edu_mean = np.array(
        [[config.education_mean_by_group[cell_key(g, r)] for r in (0, 1)] for g in (0, 1)]
    )[gender, race]
    education = np.maximum(0.0, edu_mean + config.education_sigma * rng.standard_normal(n))

    credit = config.credit_mean + config.credit_mean_shift_group_b * race
    credit = np.clip(credit + config.credit_sigma * rng.standard_normal(n), CREDIT_MIN, CREDIT_MAX)

    employment = rng.exponential(config.employment_mean, size=n)
    zipcode = _zipcodes(rng, race, config)
    uniforms = rng.random(n)

    cols: dict[str, np.ndarray] = {
        "id": np.arange(n, dtype=np.int64),
        "gender": gender,
        "race": race,
        "age": age,
        "income": np.round(income, _DECIMALS),
        "education_years": np.round(education, _DECIMALS),
        "credit_score": np.round(credit, _DECIMALS),
        "employment_years": np.round(employment, _DECIMALS),
        "zipcode": zipcode,
    }
    scaling = _feature_scaling(cols)
    prob = repay_probability(cols, config.true_label_coefficients, config.true_label_intercept, scaling)
    true, observed = draw_labels(prob, penalty_vector(config, gender, race), uniforms)
    cols.update(true_repay_prob=prob, true_repaid=true, observed_repaid=observed)
    return Population(**cols, gen_config=config, role="full", label_scaling=scaling)


def split_population(
    pop: Population, train_fraction: float, seed: int
) -> tuple[Population, Population]:
    """Shuffle-split into (train, test); the train part has floor(n * fraction) rows.

    Both parts keep the original ids, in ascending order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie strictly between 0 and 1, got {train_fraction}")
    n = len(pop)
    n_train = math.floor(n * train_fraction)
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return pop.subset(train_idx, "train"), pop.subset(test_idx, "test")


@dataclass(frozen=True)
class CellSummary:
    count: int
    mean_true_prob: float
    true_rate: float
    observed_rate: float


GroupSummary = dict[str, CellSummary]


def summarize_groups(pop: Population) -> GroupSummary:
    """Per-cell counts and repayment rates; empty cells are left out."""
    if len(pop) == 0:
        raise ValueError("cannot summarize an empty population")
    cells = pop.cells()
    out: GroupSummary = {}
    for cell in CELLS:
        mask = cells == cell
        if not mask.any():
            continue
        out[cell] = CellSummary(
            count=int(mask.sum()),
            mean_true_prob=float(pop.true_repay_prob[mask].mean()),
            true_rate=float(pop.true_repaid[mask].mean()),
            observed_rate=float(pop.observed_repaid[mask].mean()),
        )
    return out
