from __future__ import annotations

import numpy as np
import pytest

from fairlend.config import load_run_config
from fairlend.datagen import Population, generate_population, split_population
from fairlend.policy import build_policy_suite


def make_pop(n: int | None = None, role: str = "full", **cols) -> Population:
    """Hand-built population; unspecified columns get bland constants."""
    if n is None:
        n = len(next(iter(cols.values())))
    defaults = {
        "id": np.arange(n),
        "gender": np.zeros(n, dtype=np.int8),
        "race": np.zeros(n, dtype=np.int8),
        "age": np.full(n, 35.0),
        "income": np.full(n, 50_000.0),
        "education_years": np.full(n, 12.0),
        "credit_score": np.full(n, 650.0),
        "employment_years": np.full(n, 5.0),
        "zipcode": np.zeros(n, dtype=np.int64),
        "true_repay_prob": np.full(n, 0.5),
        "true_repaid": np.ones(n, dtype=np.int8),
        "observed_repaid": np.ones(n, dtype=np.int8),
    }
    for name, values in cols.items():
        defaults[name] = np.asarray(values)
    return Population(**defaults, role=role)


@pytest.fixture(scope="session")
def default_cfg():
    return load_run_config()


@pytest.fixture(scope="session")
def default_data(default_cfg):
    pop = generate_population(default_cfg.gen)
    train, test = split_population(pop, default_cfg.split_fraction, default_cfg.split_seed)
    return pop, train, test


@pytest.fixture(scope="session")
def default_suite(default_data, default_cfg):
    _, train, _ = default_data
    return build_policy_suite(train, default_cfg.hp)
