import dataclasses
import os

import numpy as np
import pytest

from cizsl.data import SyntheticConfig, make_synthetic
from cizsl.errors import (InvalidConfigError, InvalidSplitError,
                          TrainingDivergedError)
from cizsl.train import (TrainConfig, cross_validate_lambda, select_best_lambda,
                         train, validation_auc)


def tiny_dataset(seed=3, **kw):
    base = dict(n_super=3, classes_per_super=1, instances_per_class=30,
                text_dim=8, feature_dim=12, noise_dim=4, split_mode="hard",
                unseen_fraction=0.34, seed=seed)
    base.update(kw)
    return make_synthetic(SyntheticConfig(**base))


def tiny_config(**kw):
    base = dict(n_steps=20, batch_size=8, seed=0, noise_dim=4,
                text_embed_dim=8, hidden_dim=16, eval_interval=10)
    base.update(kw)
    return TrainConfig(**base)


class TestConfigValidation:
    def test_defaults_valid(self):
        TrainConfig().validate()

    @pytest.mark.parametrize("kw", [
        {"lambda_creativity": -1.0},
        {"n_critic": 0},
        {"batch_size": 1},
        {"alpha_mode": "bogus"},
        {"gp_weight": -2.0},
        {"eval_interval": 0},
        {"divergence_mode": "nope"},
        {"divergence_mode": "kl", "learn_gamma": True, "learn_beta": True},
    ])
    def test_bad_values_rejected(self, kw):
        with pytest.raises(InvalidConfigError):
            tiny_config(**kw).validate()

    def test_divergence_pinning(self):
        assert tiny_config(divergence_mode="kl", learn_gamma=False,
                           learn_beta=False).divergence().gamma == 1.0
        p = tiny_config(divergence_mode="tsallis", gamma_init=1.7,
                        learn_beta=False).divergence()
        assert p.beta == p.gamma == 1.7
        p = tiny_config(divergence_mode="bhattacharyya", learn_gamma=False,
                        learn_beta=False).divergence()
        assert (p.gamma, p.beta) == (0.5, 1.0)


class TestTrain:
    def test_zero_steps_returns_initialized_networks(self):
        ds = tiny_dataset()
        cfg = tiny_config(n_steps=0)
        model = train(ds, cfg)
        assert model.history.iteration.size == 0
        # a second zero-step run from the same seed is the same init
        model2 = train(ds, cfg)
        np.testing.assert_array_equal(model.generator.param_vector(),
                                      model2.generator.param_vector())

    def test_determinism_bit_identical(self):
        ds = tiny_dataset()
        cfg = tiny_config(n_steps=30)
        m1 = train(ds, cfg)
        m2 = train(ds, cfg)
        np.testing.assert_array_equal(m1.generator.param_vector(),
                                      m2.generator.param_vector())
        np.testing.assert_array_equal(m1.discriminator.param_vector(),
                                      m2.discriminator.param_vector())
        assert m1.history.to_csv() == m2.history.to_csv()
        assert m1.divergence.gamma == m2.divergence.gamma

    def test_history_shape_and_columns(self):
        ds = tiny_dataset()
        model = train(ds, tiny_config(n_steps=12))
        h = model.history
        assert h.iteration.size == 12
        assert h.iteration[0] == 1 and h.iteration[-1] == 12
        csv = h.to_csv()
        assert csv.splitlines()[0] == "iteration,loss_g,loss_d,mean_entropy,gamma,beta"
        assert len(csv.splitlines()) == 13

    def test_divergence_parameters_learn(self):
        ds = tiny_dataset()
        model = train(ds, tiny_config(n_steps=30, lambda_creativity=1.0))
        assert model.divergence.gamma != pytest.approx(2.0)
        assert model.divergence.beta != pytest.approx(0.5)

    def test_divergence_parameters_fixed_without_learnables(self):
        ds = tiny_dataset()
        model = train(ds, tiny_config(n_steps=10, divergence_mode="kl",
                                      learn_gamma=False, learn_beta=False))
        assert model.divergence.gamma == 1.0 and model.divergence.beta == 1.0

    def test_tsallis_keeps_beta_tied(self):
        ds = tiny_dataset()
        model = train(ds, tiny_config(n_steps=20, divergence_mode="tsallis",
                                      gamma_init=1.6, learn_beta=False))
        assert model.divergence.beta == model.divergence.gamma

    def test_snapshot_hook_cadence(self):
        ds = tiny_dataset()
        seen = []
        train(ds, tiny_config(n_steps=25, eval_interval=10),
              snapshot_fn=lambda it, g, d, p: seen.append(it))
        assert seen == [10, 20]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_to_nonfinite_reported_with_iteration(self):
        # an absurd learning rate overflows the squared penalty immediately
        ds = tiny_dataset()
        with pytest.raises(TrainingDivergedError) as exc:
            train(ds, tiny_config(n_steps=50, learning_rate=1e200))
        assert exc.value.iteration >= 1

    def test_extra_class_ablation_trains(self):
        ds = tiny_dataset()
        model = train(ds, tiny_config(n_steps=5, extra_class_for_hallucinated=True))
        assert model.discriminator.n_classes == ds.seen_class_ids.size + 1

    def test_wasserstein_gap_decreases_from_step_10(self):
        # pinned-seed regression on the 2-seen-class benchmark
        ds = tiny_dataset(seed=3)
        cfg = TrainConfig(n_steps=500, batch_size=16, seed=3, noise_dim=4,
                          learning_rate=0.003, text_embed_dim=8, hidden_dim=24)
        h = train(ds, cfg).history
        assert h.w_gap[499] < h.w_gap[9]


class TestCrossValidation:
    def dataset(self):
        return make_synthetic(SyntheticConfig(
            n_super=5, classes_per_super=2, instances_per_class=10,
            text_dim=8, feature_dim=10, noise_dim=4, split_mode="hard",
            unseen_fraction=0.2, seed=4))

    def test_single_value_grid_returns_it(self):
        best, rows = cross_validate_lambda(self.dataset(),
                                           tiny_config(n_steps=10), [0.25])
        assert best == 0.25
        assert len(rows) == 1  # one checkpoint at eval_interval=10

    def test_row_count_is_grid_times_checkpoints(self):
        best, rows = cross_validate_lambda(self.dataset(),
                                           tiny_config(n_steps=20, eval_interval=10),
                                           [0.0, 1.0])
        assert len(rows) == 2 * 2
        assert {r[0] for r in rows} == {0.0, 1.0}

    def test_tie_breaks_to_smaller_lambda(self):
        assert select_best_lambda([0.0, 0.0], [0.5, 0.5]) == 0.0
        assert select_best_lambda([1.0, 0.1], [0.7, 0.7]) == 0.1
        assert select_best_lambda([1.0, 0.1], [0.7, 0.6]) == 1.0

    def test_too_few_validation_classes_rejected(self):
        ds = make_synthetic(SyntheticConfig(
            n_super=4, classes_per_super=1, instances_per_class=5,
            text_dim=4, feature_dim=6, noise_dim=2, split_mode="hard",
            unseen_fraction=0.25, seed=0))
        # 3 seen classes -> 80/20 split leaves a single validation class
        with pytest.raises(InvalidSplitError):
            cross_validate_lambda(ds, tiny_config(n_steps=10), [0.1])

    def test_empty_grid_rejected(self):
        from cizsl.errors import InvalidInputError
        with pytest.raises(InvalidInputError):
            cross_validate_lambda(self.dataset(), tiny_config(), [])

    def test_parallel_workers_match_sequential(self):
        ds = self.dataset()
        cfg = tiny_config(n_steps=10)
        best_seq, rows_seq = cross_validate_lambda(ds, cfg, [0.0, 0.5])
        os.environ["CIZSL_THREADS"] = "2"
        try:
            best_par, rows_par = cross_validate_lambda(ds, cfg, [0.0, 0.5])
        finally:
            del os.environ["CIZSL_THREADS"]
        assert best_seq == best_par
        assert rows_seq == rows_par

    def test_validation_auc_in_unit_interval(self):
        from cizsl.data import split_train_val
        ts, _ = split_train_val(self.dataset(), 0.8, seed=1)
        model = train(ts, tiny_config(n_steps=10))
        auc = validation_auc(model.generator, ts, samples_per_center=5)
        assert 0.0 <= auc <= 1.0
