import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairlend.errors import ConfigError, DivergenceError, TrainingError
from fairlend.model import (
    BASELINE_SCHEMA,
    UNAWARE_SCHEMA,
    FeatureSchema,
    Standardizer,
    TrainedModel,
    TrainHyperparams,
    accuracy,
    loss_and_gradient,
    score,
    train_logistic,
)
from tests.conftest import make_pop

CREDIT_ONLY = FeatureSchema(("credit_score",))


def random_pop(rng, n=20):
    return make_pop(
        gender=rng.integers(0, 2, n).astype(np.int8),
        race=rng.integers(0, 2, n).astype(np.int8),
        age=rng.uniform(21, 70, n),
        income=rng.lognormal(10.5, 0.4, n),
        education_years=rng.normal(13, 2, n),
        credit_score=rng.normal(650, 60, n),
        employment_years=rng.exponential(6, n),
        zipcode=rng.integers(0, 50, n),
        observed_repaid=rng.integers(0, 2, n).astype(np.int8),
    )


def hand_model(weights, intercept=0.0, schema=CREDIT_ONLY, means=None, stds=None):
    k = len(schema)
    std = Standardizer(np.zeros(k) if means is None else np.asarray(means), np.ones(k) if stds is None else np.asarray(stds))
    return TrainedModel(schema, std, np.asarray(weights, dtype=float), intercept, "observed")


def finite_difference(params, f, h=1e-5):
    out = np.empty_like(params)
    for j in range(len(params)):
        up, dn = params.copy(), params.copy()
        up[j] += h
        dn[j] -= h
        out[j] = (f(up) - f(dn)) / (2 * h)
    return out


class TestSchema:
    def test_rejects_duplicates_and_unknown(self):
        with pytest.raises(ValueError):
            FeatureSchema(("age", "age"))
        with pytest.raises(ValueError):
            FeatureSchema(("shoe_size",))
        with pytest.raises(ValueError):
            FeatureSchema(())

    def test_unaware_mask(self):
        assert UNAWARE_SCHEMA.is_unaware and not BASELINE_SCHEMA.is_unaware
        assert "gender" not in UNAWARE_SCHEMA.feature_names and "race" not in UNAWARE_SCHEMA.feature_names


class TestHyperparams:
    @pytest.mark.parametrize(
        "kwargs, field",
        [({"learning_rate": 0}, "hp.learning_rate"), ({"max_iterations": -1}, "hp.max_iterations"),
         ({"l2_penalty": -1}, "hp.l2_penalty"), ({"convergence_tolerance": 0}, "hp.convergence_tolerance")],
    )
    def test_invalid(self, kwargs, field):
        with pytest.raises(ConfigError) as info:
            TrainHyperparams(**kwargs)
        assert info.value.field == field


class TestStandardizer:
    def test_zero_variance_gets_unit_sd(self):
        X = np.column_stack([np.full(5, 3.0), np.arange(5.0)])
        std = Standardizer.fit(X)
        assert std.stds[0] == 1.0
        assert np.allclose(std.transform(X)[:, 0], 0.0)


class TestScore:
    def test_zero_model_is_half(self):
        pop = random_pop(np.random.default_rng(0), 5)
        m = hand_model([0.0])
        assert all(score(m, r) == 0.5 for r in pop.records())

    def test_saturated_intercept(self):
        m = hand_model([0.0], intercept=10.0)
        assert score(m, make_pop(1).record(0)) > 0.9999

    def test_hand_computed(self):
        schema = FeatureSchema(("gender", "credit_score", "income"))
        m = hand_model([0.4, 1.2, -0.3], 0.25, schema, means=[0.5, 600.0, 40_000.0], stds=[0.5, 50.0, 10_000.0])
        rec = make_pop(gender=[1], credit_score=[700.0], income=[30_000.0]).record(0)
        z = 0.25 + 0.4 * (1 - 0.5) / 0.5 + 1.2 * (700 - 600) / 50 - 0.3 * (30_000 - 40_000) / 10_000
        assert abs(score(m, rec) - 1 / (1 + math.exp(-z))) <= 1e-12

    def test_score_population_matches_record_score(self):
        pop = random_pop(np.random.default_rng(1), 8)
        m = train_logistic(pop, BASELINE_SCHEMA, "observed", TrainHyperparams(max_iterations=50))
        batch = m.score_population(pop)
        assert np.allclose(batch, [score(m, r) for r in pop.records()], rtol=0, atol=1e-12)


class TestLossAndGradient:
    def test_zero_params_balanced_is_ln2(self):
        pop = random_pop(np.random.default_rng(2), 10).with_columns(observed_repaid=np.array([0, 1] * 5, dtype=np.int8))
        loss, _ = loss_and_gradient(np.zeros(len(BASELINE_SCHEMA)), 0.0, pop, BASELINE_SCHEMA, "observed", 0.0)
        assert abs(loss - math.log(2)) <= 1e-12

    def test_l2_convention(self):
        pop = random_pop(np.random.default_rng(3))
        w = np.random.default_rng(4).normal(size=len(BASELINE_SCHEMA))
        l0, _ = loss_and_gradient(w, 0.3, pop, BASELINE_SCHEMA, "observed", 0.0)
        l1, _ = loss_and_gradient(w, 0.3, pop, BASELINE_SCHEMA, "observed", 1.0)
        assert abs((l1 - l0) - np.dot(w, w) / (2 * len(pop))) <= 1e-12

    @given(st.integers(0, 2**32 - 1), st.floats(0, 2))
    @settings(max_examples=25, deadline=None)
    def test_gradient_matches_finite_differences(self, seed, l2):
        rng = np.random.default_rng(seed)
        pop = random_pop(rng)
        params = rng.normal(scale=0.5, size=len(BASELINE_SCHEMA) + 1)

        def f(p):
            return loss_and_gradient(p[:-1], p[-1], pop, BASELINE_SCHEMA, "observed", l2)[0]

        _, grad = loss_and_gradient(params[:-1], params[-1], pop, BASELINE_SCHEMA, "observed", l2)
        fd = finite_difference(params, f)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-6)
        assert rel.max() <= 1e-4


class TestTrain:
    def test_zero_iterations(self):
        pop = random_pop(np.random.default_rng(5))
        m = train_logistic(pop, BASELINE_SCHEMA, "observed", TrainHyperparams(max_iterations=0))
        assert np.all(m.weights == 0) and m.intercept == 0
        assert np.all(m.score_population(pop) == 0.5)

    def test_separable_1d(self):
        credit = np.linspace(500, 800, 10)
        pop = make_pop(credit_score=credit, observed_repaid=(credit > 650).astype(np.int8))
        m = train_logistic(pop, CREDIT_ONLY, "observed", TrainHyperparams(l2_penalty=0.01))
        assert accuracy(m, pop) == 1.0

    def test_single_class_rejected(self):
        with pytest.raises(TrainingError, match="single class"):
            train_logistic(make_pop(5), CREDIT_ONLY, "observed")

    def test_empty_rejected(self):
        with pytest.raises(TrainingError):
            train_logistic(make_pop(0), CREDIT_ONLY, "observed")

    def test_divergence_names_learning_rate(self):
        rng = np.random.default_rng(6)
        pop = random_pop(rng, 200)
        with pytest.raises(DivergenceError, match="learning_rate"):
            train_logistic(pop, BASELINE_SCHEMA, "observed", TrainHyperparams(learning_rate=1e6, max_iterations=300))

    def test_deterministic(self):
        pop = random_pop(np.random.default_rng(7), 100)
        hp = TrainHyperparams(max_iterations=300)
        a = train_logistic(pop, BASELINE_SCHEMA, "observed", hp)
        b = train_logistic(pop, BASELINE_SCHEMA, "observed", hp)
        assert np.array_equal(a.weights, b.weights) and a.intercept == b.intercept

    def test_standardization_invariance(self):
        pop = random_pop(np.random.default_rng(8), 100)
        hp = TrainHyperparams(max_iterations=400)
        a = train_logistic(pop, BASELINE_SCHEMA, "observed", hp)
        shifted = pop.with_columns(credit_score=pop.credit_score * 2.5 + 100.0)
        b = train_logistic(shifted, BASELINE_SCHEMA, "observed", hp)
        assert np.allclose(a.score_population(pop), b.score_population(shifted), atol=1e-9, rtol=0)

    @given(st.integers(0, 2**32 - 1), st.floats(1.0, 200.0))
    @settings(max_examples=20, deadline=None)
    def test_score_monotone_in_positive_feature(self, seed, bump):
        rng = np.random.default_rng(seed)
        w = rng.normal(size=len(BASELINE_SCHEMA))
        j = int(rng.integers(len(w)))
        w[j] = abs(w[j]) + 0.1
        m = TrainedModel(BASELINE_SCHEMA, Standardizer(np.zeros(len(w)), np.full(len(w), 100.0)), w, 0.0, "observed")
        x = rng.normal(size=(1, len(w)))
        y = x.copy()
        y[0, j] += bump
        assert m.linear(y)[0] > m.linear(x)[0]

    def test_label_source_separation(self):
        pop = random_pop(np.random.default_rng(9), 60)
        pop = pop.with_columns(true_repaid=1 - pop.observed_repaid)
        obs = train_logistic(pop, BASELINE_SCHEMA, "observed", TrainHyperparams(max_iterations=200))
        true = train_logistic(pop, BASELINE_SCHEMA, "true", TrainHyperparams(max_iterations=200))
        # flipped labels flip the sign of every weight
        assert np.allclose(obs.weights, -true.weights) and obs.label_source == "observed"


class TestAccuracy:
    def test_tie_rule(self):
        pop = make_pop(4)
        m = hand_model([0.0])
        assert accuracy(m, pop, 0.5) == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy(hand_model([0.0]), make_pop(0))


class TestPersistence:
    def test_json_round_trip(self, tmp_path):
        pop = random_pop(np.random.default_rng(10), 40)
        m = train_logistic(pop, BASELINE_SCHEMA, "observed", TrainHyperparams(max_iterations=100))
        path = tmp_path / "m.json"
        m.to_json(path)
        back = TrainedModel.load(path)
        assert back.schema == m.schema and back.label_source == "observed"
        assert np.array_equal(back.score_population(pop), m.score_population(pop))


class TestDefaultData:
    def test_weight_ranking(self, default_suite):
        coef = default_suite["Baseline"].model.coefficients()
        assert coef["credit_score"] > coef["income"] > coef["education_years"] > coef["employment_years"]

    def test_accuracy_band(self, default_suite, default_data):
        _, _, test = default_data
        acc = accuracy(default_suite["Baseline"].model, test, labels="observed")
        assert 0.85 <= acc <= 0.95
