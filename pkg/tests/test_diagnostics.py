import numpy as np
import pytest

from fixpool import diagnostics, objectives, seeding, taskspace, trainer
from fixpool.errors import ConfigError
from fixpool.models import HeadKind, Objective, Split, TaskConfig, TrainConfig
from fixpool.trainer import init_params

PROTO = HeadKind.protonet()
CFG = TaskConfig(5, 1, 5)


@pytest.fixture
def train_set(splits):
    return splits[Split.TRAIN]


@pytest.fixture
def test_set(splits):
    return splits[Split.TEST]


@pytest.fixture
def pool(train_set):
    return taskspace.sample_support_pool(train_set, 1, seed=2)


@pytest.fixture
def w_a(linear_spec):
    return init_params(linear_spec, seed=0)


@pytest.fixture
def w_b(linear_spec):
    return init_params(linear_spec, seed=1)


def small_train_config(spec, **overrides):
    values = dict(
        objective=Objective.ML, epochs=1, episodes_per_epoch=8, cfg=CFG, solver=PROTO,
        embedding=spec, task_batch=4, lr_schedule=((0, 0.05),), eval_episodes=10, seed=3,
    )
    values.update(overrides)
    return TrainConfig(**values)


class TestInterpolation:
    def test_endpoints_match_direct_estimates(self, train_set, test_set, w_a, w_b):
        train_eval = diagnostics.Evaluator(train_set, CFG, PROTO, 40, seed=9)
        test_eval = diagnostics.Evaluator(test_set, CFG, PROTO, 40, seed=9)
        curve = diagnostics.interpolate_losses(w_a, w_b, [0.0, 0.5, 1.0], train_eval, test_eval)
        assert curve.alphas == (0.0, 0.5, 1.0)
        assert curve.train_losses[0] == train_eval(w_a).mean
        assert curve.train_losses[-1] == train_eval(w_b).mean
        assert curve.test_losses[0] == test_eval(w_a).mean
        assert curve.test_losses[-1] == test_eval(w_b).mean

    def test_identical_endpoints_give_a_flat_curve(self, train_set, test_set, w_a):
        train_eval = diagnostics.Evaluator(train_set, CFG, PROTO, 20, seed=9)
        test_eval = diagnostics.Evaluator(test_set, CFG, PROTO, 20, seed=9)
        curve = diagnostics.interpolate_losses(w_a, w_a, None, train_eval, test_eval)
        assert len(curve.alphas) == 25
        assert curve.alphas[0] == pytest.approx(-0.2) and curve.alphas[-1] == pytest.approx(1.2)
        np.testing.assert_allclose(curve.train_losses, curve.train_losses[0], rtol=1e-9)

    def test_endpoints_must_share_architecture(self, train_set, w_a, mlp_spec):
        ev = diagnostics.Evaluator(train_set, CFG, PROTO, 10, seed=0)
        with pytest.raises(ConfigError):
            diagnostics.interpolate_losses(w_a, init_params(mlp_spec, 0), [0.0, 1.0], ev, ev)

    def test_alphas_must_increase(self, train_set, w_a, w_b):
        ev = diagnostics.Evaluator(train_set, CFG, PROTO, 10, seed=0)
        with pytest.raises(ConfigError):
            diagnostics.interpolate_losses(w_a, w_b, [0.5, 0.0], ev, ev)


class TestMultiPoolTrajectory:
    def test_ml_series_matches_standalone_estimates(self, train_set, pool, w_a, w_b):
        rows = diagnostics.multi_pool_trajectory([(0, w_a), (5, w_b)], train_set, pool, 3, CFG, PROTO, 30, seed=4)
        assert [r.epoch for r in rows] == [0, 5]
        assert rows[1].ml_loss == objectives.ml_loss_estimate(w_b, train_set, CFG, PROTO, 30, seed=4).mean
        assert rows[0].fixed_loss == objectives.fixml_loss_estimate(w_a, train_set, pool, CFG, PROTO, 30, seed=4).mean
        assert all(len(r.extra_losses) == 3 for r in rows)

    def test_extra_pool_equal_to_base_reproduces_fixed_series(self, train_set, pool, w_a):
        rows = diagnostics.multi_pool_trajectory(
            [(0, w_a)], train_set, pool, 0, CFG, PROTO, 30, seed=4, extra_pools=[pool]
        )
        assert rows[0].extra_losses == (rows[0].fixed_loss,)

    def test_single_checkpoint(self, train_set, pool, w_a):
        rows = diagnostics.multi_pool_trajectory([(0, w_a)], train_set, pool, 1, CFG, PROTO, 10, seed=0)
        assert len(rows) == 1

    def test_needs_checkpoints(self, train_set, pool):
        with pytest.raises(ConfigError):
            diagnostics.multi_pool_trajectory([], train_set, pool, 1, CFG, PROTO, 10, seed=0)

    def test_pearson(self):
        assert diagnostics.pearson([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]) == pytest.approx(1.0)
        assert diagnostics.pearson([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == pytest.approx(-1.0)


class TestGap:
    def test_identical_datasets_have_zero_gap(self, train_set, w_a):
        gap = diagnostics.generalization_gap(w_a, train_set, train_set, CFG, PROTO, 20, seed=1, allow_overlap=True)
        assert gap == 0.0

    def test_overlapping_classes_are_rejected(self, train_set, w_a):
        with pytest.raises(ConfigError, match="share classes"):
            diagnostics.generalization_gap(w_a, train_set, train_set, CFG, PROTO, 20, seed=1)

    def test_decomposition_terms(self, train_set, test_set, pool, w_a):
        dec = diagnostics.generalization_decomposition(w_a, train_set, test_set, pool, CFG, PROTO, 20, seed=1)
        train, test = diagnostics.gap_estimates(w_a, train_set, test_set, CFG, PROTO, 20, seed=1)
        assert dec.ml_train_loss == train.mean and dec.ml_test_loss == test.mean
        assert dec.term_ii == abs(train.mean - test.mean)
        assert dec.term_i >= 0


class TestTic:
    def test_true_labels_give_ratio_one(self, train_set, w_a):
        report = diagnostics.tic_ratio(w_a, train_set, CFG, PROTO, 100, seed=0, label_sampler=diagnostics.true_labels)
        assert report.ratio == 1.0
        assert report.n_samples == 100

    def test_model_labels_give_positive_traces(self, train_set, w_a):
        report = diagnostics.tic_ratio(w_a, train_set, CFG, PROTO, 100, seed=0, gen_gap=0.3)
        assert report.tr_c > 0 and report.tr_f > 0
        assert report.ratio == pytest.approx(report.tr_c / report.tr_f)
        assert report.gen_gap == 0.3

    def test_traces_ignore_class_order_within_episodes(self, monkeypatch, train_set, w_a, reorder):
        def mode(probs, labels, gen):
            return np.argmax(probs, axis=1)

        plain_c = diagnostics.tic_ratio(w_a, train_set, CFG, PROTO, 100, seed=0)
        plain_f = diagnostics.tic_ratio(w_a, train_set, CFG, PROTO, 100, seed=0, label_sampler=mode)
        original = taskspace.sample_episode_ml
        monkeypatch.setattr(
            taskspace, "sample_episode_ml", lambda *args: reorder(original(*args), [4, 2, 0, 3, 1])
        )
        shuffled_c = diagnostics.tic_ratio(w_a, train_set, CFG, PROTO, 100, seed=0)
        shuffled_f = diagnostics.tic_ratio(w_a, train_set, CFG, PROTO, 100, seed=0, label_sampler=mode)
        assert shuffled_c.tr_c == pytest.approx(plain_c.tr_c, rel=1e-10)
        assert shuffled_f.tr_f == pytest.approx(plain_f.tr_f, rel=1e-10)

    def test_needs_enough_episodes(self, train_set, w_a):
        with pytest.raises(ConfigError):
            diagnostics.tic_ratio(w_a, train_set, CFG, PROTO, 99, seed=0)


class TestStability:
    def test_no_training_means_no_change(self, train_set, linear_spec):
        config = small_train_config(linear_spec, epochs=0)
        report = diagnostics.stability_estimate(train_set, None, config, 2, seed=0, n_reference=10)
        assert report.beta_hat == 0.0
        assert len(report.removed_classes) == 2

    def test_beta_hat_is_the_largest_perturbation(self, train_set, pool, linear_spec):
        config = small_train_config(linear_spec, objective=Objective.FIXML)
        report = diagnostics.stability_estimate(train_set, pool, config, 3, seed=0, n_reference=10)
        assert report.beta_hat == max(report.per_perturbation)
        assert len(set(report.removed_classes)) == 3
        assert report.beta_hat > 0

    def test_removing_an_undrawn_class_reproduces_the_base_run(self, train_set, linear_spec):
        config = small_train_config(linear_spec, cfg=TaskConfig(2, 1, 3), episodes_per_epoch=2, task_batch=1)
        drawn = set()
        for step in range(2):
            seed = seeding.child(config.seed, seeding.TRAIN, 1, step, 0)
            drawn.update(taskspace.sample_episode_ml(train_set, config.cfg, seed).classes)
        undrawn = min(set(range(train_set.n_classes)) - drawn)
        used = min(drawn)

        base, _ = trainer.train(train_set, None, config)
        same, _ = trainer.train(train_set, None, config, excluded_classes=(undrawn,))
        np.testing.assert_array_equal(same.vector, base.vector)

        report = diagnostics.stability_estimate(
            train_set, None, config, 2, seed=0, n_reference=10, classes=(undrawn, used)
        )
        assert report.removed_classes == (undrawn, used)
        assert report.per_perturbation[0] == 0.0
        assert report.per_perturbation[1] > 0.0

    def test_explicit_classes_must_match_the_perturbation_count(self, train_set, linear_spec):
        with pytest.raises(ConfigError):
            diagnostics.stability_estimate(
                train_set, None, small_train_config(linear_spec), 2, seed=0, classes=(1,)
            )

    def test_needs_two_perturbations(self, train_set, linear_spec):
        with pytest.raises(ConfigError):
            diagnostics.stability_estimate(train_set, None, small_train_config(linear_spec), 1, seed=0)

    def test_inner_stability(self, train_set, w_a):
        report = diagnostics.inner_stability_estimate(w_a, train_set, TaskConfig(5, 2, 3), PROTO, 10, seed=0)
        assert len(report.per_perturbation) == 10
        assert report.beta_hat == max(report.per_perturbation) >= 0

    def test_inner_stability_needs_two_shots(self, train_set, w_a):
        with pytest.raises(ConfigError):
            diagnostics.inner_stability_estimate(w_a, train_set, CFG, PROTO, 10, seed=0)


def test_multi_run_comparison(train_set, test_set, linear_spec):
    rows = diagnostics.multi_run_comparison(train_set, test_set, small_train_config(linear_spec), 2, 20, seed=0)
    assert [(r.objective, r.run) for r in rows] == [
        (Objective.ML, 0), (Objective.ML, 1), (Objective.FIXML, 0), (Objective.FIXML, 1),
    ]
    summary = diagnostics.summarize_runs(rows)
    assert set(summary) == {Objective.ML, Objective.FIXML}
    assert all(0.0 <= mean <= 1.0 for mean, _ in summary.values())


@pytest.mark.slow
def test_fixed_pool_loss_tracks_the_ml_objective(splits, linear_spec):
    train_set = splits[Split.TRAIN]
    pool = taskspace.sample_support_pool(train_set, 1, seed=7)
    config = small_train_config(
        linear_spec, objective=Objective.FIXML, epochs=60, episodes_per_epoch=100,
        lr_schedule=((0, 0.05), (36, 0.005)), eval_every=5, eval_episodes=50,
    )
    _, log = trainer.train(train_set, pool, config)
    rows = diagnostics.multi_pool_trajectory(log.ordered_checkpoints(), train_set, pool, 10, CFG, PROTO, 500, seed=1)
    assert diagnostics.pearson([r.fixed_loss for r in rows], [r.ml_loss for r in rows]) > 0.95
    for i in range(10):
        assert rows[-1].extra_losses[i] < rows[0].extra_losses[i]
