import numpy as np
import pytest

from qmtransfer.data import DomainDataset, RngStream, standardize
from qmtransfer.engression import (EngressionConfig, EngressionModel,
                                   train_engression)
from qmtransfer.errors import SchemaError, TrainingDivergenceError
from qmtransfer.nets import Mlp
from qmtransfer.density_ratio import KmmConfig
from qmtransfer.pipeline import (AugmentedDataset, PipelineConfig,
                                 build_synthetic_design,
                                 predict_source_features, run_augmentation)
from qmtransfer.quantile_match import empirical_objective


def constant_model(value, d=1):
    """Generator that ignores features and noise: g(x, eta) = value."""
    net = Mlp([d + 1, 2, 1], RngStream(0).generator())
    net.weights[0][...] = 0.0
    net.biases[0][...] = 0.0
    net.weights[1][...] = 0.0
    net.biases[1][...] = value
    cfg = EngressionConfig(hidden_sizes=(2,), noise_dim=1)
    return EngressionModel(net, cfg, np.zeros(1), n_features=d)


def identity_noise_model():
    """g(x, eta) = x + eta via relu(t) - relu(-t) = t, so g(x, .) is
    N(x, 1) under standard normal noise."""
    net = Mlp([2, 2, 1], RngStream(0).generator())
    net.weights[0][...] = [[1.0, -1.0], [1.0, -1.0]]
    net.biases[0][...] = 0.0
    net.weights[1][...] = [[1.0], [-1.0]]
    net.biases[1][...] = 0.0
    cfg = EngressionConfig(hidden_sizes=(2,), noise_dim=1)
    return EngressionModel(net, cfg, np.zeros(1), n_features=1)


def linear_domains(seed, n0=150, n1=250):
    gen = RngStream(seed).generator()

    def draw(n):
        x = gen.normal(size=(n, 1))
        return DomainDataset(x, 2.0 * x[:, 0] + 1.0 + 0.3 * gen.normal(size=n),
                             0 if n == n0 else 1)

    return draw(n0), draw(n1)


FAST_CONFIG = PipelineConfig(
    engression=EngressionConfig(hidden_sizes=(16, 16), noise_dim=3, epochs=400),
    m_synthetic=300, m_predict=64, use_density_ratio=False, seed=3)


class TestPipelineConfig:
    def test_defaults(self):
        config = PipelineConfig()
        assert config.m_synthetic == 3000
        assert config.m_predict == 512
        assert config.constraint_mode == "unconstrained"
        assert config.use_density_ratio
        assert config.standardize_features
        assert config.predict_mode == "mean"

    @pytest.mark.parametrize("kwargs", [
        {"m_synthetic": 0},
        {"m_predict": 0},
        {"predict_mode": "median"},
        {"constraint_mode": "nonneg"},
        {"ridge": -1.0},
    ])
    def test_bad_values_rejected(self, kwargs):
        with pytest.raises(ValueError):
            PipelineConfig(**kwargs)


class TestBuildSyntheticDesign:
    def test_shape_and_intercept(self):
        target = DomainDataset(np.zeros((2, 1)), np.zeros(2), 0)
        design = build_synthetic_design(target, [constant_model(7.0)], 3,
                                        RngStream(1))
        assert design.v_hat.shape == (6, 2)
        np.testing.assert_array_equal(design.v_hat[:, 0], np.ones(6))
        assert design.n0 == 2 and design.m == 3

    def test_constant_generator_fills_column(self):
        target = DomainDataset(np.zeros((2, 1)), np.zeros(2), 0)
        design = build_synthetic_design(target, [constant_model(7.0)], 3,
                                        RngStream(1))
        np.testing.assert_array_equal(design.v_hat[:, 1], np.full(6, 7.0))

    def test_same_seed_bitwise_identical(self):
        target = DomainDataset(RngStream(2).generator().normal(size=(4, 1)),
                               np.zeros(4), 0)
        models = [identity_noise_model(), constant_model(1.0)]
        a = build_synthetic_design(target, models, 5, RngStream(9))
        b = build_synthetic_design(target, models, 5, RngStream(9))
        np.testing.assert_array_equal(a.v_hat, b.v_hat)

    def test_dimension_mismatch_rejected(self):
        target = DomainDataset(np.zeros((2, 3)), np.zeros(2), 0)
        with pytest.raises(ValueError, match="d=1"):
            build_synthetic_design(target, [constant_model(1.0, d=1)], 2,
                                   RngStream(0))

    def test_validation_errors(self):
        target = DomainDataset(np.zeros((2, 1)), np.zeros(2), 0)
        with pytest.raises(ValueError, match="at least one"):
            build_synthetic_design(target, [], 2, RngStream(0))
        with pytest.raises(ValueError, match="m must be"):
            build_synthetic_design(target, [constant_model(1.0)], 0,
                                   RngStream(0))


class TestPredictSourceFeatures:
    def test_constant_generator_mean_is_exact(self):
        source = DomainDataset(np.zeros((3, 1)), np.zeros(3), 1)
        for m_pred in (1, 4, 32):
            v = predict_source_features([constant_model(7.0)], source, m_pred,
                                        RngStream(5))
            np.testing.assert_array_equal(v[:, 1], np.full(3, 7.0))
            np.testing.assert_array_equal(v[:, 0], np.ones(3))

    def test_m_pred_one_equals_single_draw_mode(self):
        source = DomainDataset(RngStream(6).generator().normal(size=(4, 1)),
                               np.zeros(4), 1)
        model = identity_noise_model()
        mean_mode = predict_source_features([model], source, 1, RngStream(7),
                                            predict_mode="mean")
        single = predict_source_features([model], source, 512, RngStream(7),
                                         predict_mode="single_draw")
        np.testing.assert_array_equal(mean_mode, single)

    def test_row_means_concentrate_at_conditional_mean(self):
        # g(x, .) is N(x, 1), so the 64-draw row mean is N(x, 1/64) and
        # lands within 3/sqrt(64) of x for about 99.7% of draws
        model = identity_noise_model()
        x = np.array([[0.3], [-1.2]])
        source = DomainDataset(x, np.zeros(2), 1)
        hits, total = 0, 0
        for seed in range(200):
            v = predict_source_features([model], source, 64,
                                        RngStream(1000 + seed))
            hits += int((np.abs(v[:, 1] - x[:, 0]) <= 3.0 / 8.0).sum())
            total += 2
        assert hits / total >= 0.99

    def test_validation_errors(self):
        source = DomainDataset(np.zeros((2, 1)), np.zeros(2), 1)
        with pytest.raises(ValueError, match="at least one"):
            predict_source_features([], source, 1, RngStream(0))
        with pytest.raises(ValueError, match="m_pred"):
            predict_source_features([constant_model(1.0)], source, 0,
                                    RngStream(0))
        with pytest.raises(ValueError, match="predict_mode"):
            predict_source_features([constant_model(1.0)], source, 1,
                                    RngStream(0), predict_mode="mode")
        wide = DomainDataset(np.zeros((2, 2)), np.zeros(2), 1)
        with pytest.raises(ValueError, match="d=1"):
            predict_source_features([constant_model(1.0)], wide, 1,
                                    RngStream(0))


class TestRunAugmentation:
    def test_identity_calibration(self):
        # same-law source: calibration should be close to the identity,
        # and the block-descent fit should beat a lattice oracle on the
        # reconstructed design
        target, source = linear_domains(3)
        aug, fit, diag = run_augmentation(target, [source], FAST_CONFIG)
        assert aug.n_total == 400
        np.testing.assert_allclose(fit.beta, [0.0, 1.0], atol=0.1)
        assert aug.counts() == {0: 150, 1: 250}
        np.testing.assert_array_equal(aug.weights, np.ones(400))
        np.testing.assert_array_equal(aug.features[:150], target.features)
        np.testing.assert_array_equal(aug.y_tilde[:150], target.responses)

        # reconstruct the design the pipeline built internally
        base = RngStream(FAST_CONFIG.seed)
        scaled, _ = standardize([target, source])
        model = train_engression(scaled[1], FAST_CONFIG.engression,
                                 base.substream(1).substream(0))
        design = build_synthetic_design(scaled[0], [model],
                                        FAST_CONFIG.m_synthetic,
                                        base.substream(2))
        rebuilt_obj = empirical_objective(target.responses,
                                          design.v_hat @ fit.beta)
        assert rebuilt_obj == pytest.approx(fit.objective_trace[-1], abs=1e-12)
        lattice = [np.linspace(-0.3, 0.3, 7), np.linspace(0.7, 1.3, 7)]
        grid_best = min(
            empirical_objective(target.responses, design.v_hat @ np.array([b0, b1]))
            for b0 in lattice[0] for b1 in lattice[1])
        assert fit.objective_trace[-1] <= grid_best + 1e-9

    def test_source_rows_are_calibrated_predictions(self):
        target, source = linear_domains(3)
        aug, fit, diag = run_augmentation(target, [source], FAST_CONFIG)
        predicted = diag["predicted_features"][0]
        np.testing.assert_array_equal(aug.y_tilde[150:], predicted @ fit.beta)
        bound = abs(fit.beta[0]) + abs(fit.beta[1]) * np.abs(predicted[:, 1]).max()
        assert np.abs(aug.y_tilde[150:]).max() <= bound + 1e-12

    def test_bitwise_reproducible(self):
        target, source = linear_domains(3)
        a, fit_a, _ = run_augmentation(target, [source], FAST_CONFIG)
        b, fit_b, _ = run_augmentation(target, [source], FAST_CONFIG)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.y_tilde, b.y_tilde)
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.origin, b.origin)
        np.testing.assert_array_equal(fit_a.beta, fit_b.beta)

    def test_density_ratio_weights_attached(self):
        target, source = linear_domains(11, n0=60, n1=80)
        config = PipelineConfig(
            engression=EngressionConfig(hidden_sizes=(8,), noise_dim=2,
                                        epochs=100),
            kmm=KmmConfig(max_iter=600),
            m_synthetic=50, m_predict=16, use_density_ratio=True, seed=11)
        aug, _, diag = run_augmentation(target, [source], config)
        np.testing.assert_array_equal(aug.weights[:60], np.ones(60))
        zeta = aug.weights[60:]
        assert zeta.min() >= -1e-6
        assert abs(zeta.sum() - 80) <= 80 * (0.05 * 1000 / np.sqrt(80)) + 1e-6
        assert diag["kmm"][0]["feasible"]

    def test_no_sources_short_circuit(self):
        target, _ = linear_domains(3)
        aug, fit, diag = run_augmentation(target, [], FAST_CONFIG)
        assert fit is None
        np.testing.assert_array_equal(aug.features, target.features)
        np.testing.assert_array_equal(aug.y_tilde, target.responses)
        np.testing.assert_array_equal(aug.weights, np.ones(target.n))
        np.testing.assert_array_equal(aug.origin, np.zeros(target.n, dtype=int))
        assert "no sources" in diag["note"]

    def test_validation_errors(self):
        target, source = linear_domains(3)
        tiny = DomainDataset(np.zeros((1, 1)), np.zeros(1), 0)
        with pytest.raises(ValueError, match="target needs"):
            run_augmentation(tiny, [source], FAST_CONFIG)
        with pytest.raises(ValueError, match="source 1 needs"):
            run_augmentation(target, [DomainDataset(np.zeros((1, 1)),
                                                    np.zeros(1), 1)],
                             FAST_CONFIG)
        wide = DomainDataset(np.zeros((5, 2)), np.zeros(5), 1)
        with pytest.raises(ValueError, match="source 1 has d=2"):
            run_augmentation(target, [wide], FAST_CONFIG)

    def test_step_label_prefixes_training_failure(self):
        target, source = linear_domains(3, n0=10, n1=10)
        config = PipelineConfig(
            engression=EngressionConfig(hidden_sizes=(4,), noise_dim=1,
                                        epochs=3, learning_rate=1e200),
            m_synthetic=5, use_density_ratio=False, seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDivergenceError,
                               match="step 1 .train source generators."):
                run_augmentation(target, [source], config)


class TestAugmentedDataset:
    def make(self):
        return AugmentedDataset(np.array([[0.0], [1.0], [2.0]]),
                                np.array([1.0, 2.0, 3.0]),
                                np.array([1.0, 0.5, 2.0]),
                                np.array([0, 1, 1]))

    def test_counts_and_total(self):
        aug = self.make()
        assert aug.n_total == 3
        assert aug.counts() == {0: 1, 1: 2}

    def test_to_weighted_training_set(self):
        aug = self.make()
        data = aug.to_weighted_training_set()
        np.testing.assert_array_equal(data.features, aug.features)
        np.testing.assert_array_equal(data.responses, aug.y_tilde)
        np.testing.assert_array_equal(data.weights, aug.weights)

    def test_csv_round_trip_bitwise(self, tmp_path):
        gen = RngStream(21).generator()
        aug = AugmentedDataset(gen.normal(size=(7, 3)), gen.normal(size=7),
                               gen.uniform(size=7), np.array([0, 0, 1, 1, 1, 2, 2]))
        path = tmp_path / "aug.csv"
        aug.to_csv(path)
        back = AugmentedDataset.from_csv(path)
        np.testing.assert_array_equal(back.features, aug.features)
        np.testing.assert_array_equal(back.y_tilde, aug.y_tilde)
        np.testing.assert_array_equal(back.weights, aug.weights)
        np.testing.assert_array_equal(back.origin, aug.origin)

    def test_from_csv_missing_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x1,y_tilde,origin\n0.0,1.0,0\n")
        with pytest.raises(SchemaError, match="weight"):
            AugmentedDataset.from_csv(path)

    def test_from_csv_no_data_rows(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("x1,y_tilde,weight,origin\n")
        with pytest.raises(SchemaError, match="no data rows"):
            AugmentedDataset.from_csv(path)

    @pytest.mark.parametrize("kwargs,match", [
        ({"weights": np.array([1.0, -0.1, 1.0])}, "nonnegative"),
        ({"y_tilde": np.array([1.0, np.inf, 3.0])}, "finite"),
        ({"origin": np.array([0, -1, 1])}, "origin"),
        ({"y_tilde": np.array([1.0, 2.0])}, "row counts"),
    ])
    def test_validation(self, kwargs, match):
        base = dict(features=np.zeros((3, 1)),
                    y_tilde=np.array([1.0, 2.0, 3.0]),
                    weights=np.ones(3), origin=np.array([0, 1, 1]))
        base.update(kwargs)
        with pytest.raises(ValueError, match=match):
            AugmentedDataset(**base)

    def test_one_dimensional_features_rejected(self):
        with pytest.raises(ValueError, match="2-D"):
            AugmentedDataset(np.zeros(3), np.zeros(3), np.ones(3),
                             np.zeros(3, dtype=int))
