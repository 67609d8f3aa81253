import numpy as np
import pytest

from latentrom import (
    Dataset, DivergedTraining, EmptySplit, ModelParams, Series, TrainConfig, canonical_system,
    continuous_from_discrete, evaluate, linear_force, predict, split, train,
)
from latentrom.bptt import GradientSet, loss
from latentrom.datagen import fom_dataset, rk4_trajectory
from latentrom.training import AdamState, adam_step, compare, glorot, init_params, relative_l2, write_history

IDENTITY = linear_force(np.eye(1))


def toy_dataset(n_series, n_steps=10, dt=0.1, seed=0):
    rng = np.random.default_rng(seed)
    true = ModelParams(theta_d=[0.2, 0.1], C=[[0.0, 0.3], [0.0, 0.0]], R=[[0.3], [0.2]], dt=dt)
    series = [Series(dt * np.arange(n_steps + 1), predict(true, IDENTITY, [x0], n_steps))
              for x0 in rng.uniform(-1, 1, n_series)]
    return true, Dataset(series, dt)


class TestSplit:
    def test_paper_ratios(self):
        _, ds = toy_dataset(80, 2)
        tr, va, te = split(ds, (0.7, 0.2, 0.1), np.random.default_rng(0))
        assert (len(tr), len(va), len(te)) == (56, 16, 8)
        idx = tr.metadata["series_index"] + va.metadata["series_index"] + te.metadata["series_index"]
        assert sorted(idx) == list(range(80))

    def test_all_train(self):
        _, ds = toy_dataset(10, 2)
        tr, va, te = split(ds, (1.0, 0.0, 0.0), np.random.default_rng(0))
        assert (len(tr), len(va), len(te)) == (10, 0, 0)

    def test_deterministic(self):
        _, ds = toy_dataset(20, 2)
        a = split(ds, (0.7, 0.2, 0.1), np.random.default_rng(5))
        b = split(ds, (0.7, 0.2, 0.1), np.random.default_rng(5))
        assert [p.metadata["series_index"] for p in a] == [p.metadata["series_index"] for p in b]

    def test_empty_split(self):
        _, ds = toy_dataset(2, 2)
        with pytest.raises(EmptySplit):
            split(ds, (0.7, 0.2, 0.1))

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            TrainConfig(split_ratios=(0.5, 0.2, 0.1))


class TestInit:
    def test_glorot_bound(self):
        C = glorot(np.random.default_rng(0), (4, 4))
        assert np.abs(C).max() <= np.sqrt(6 / 8)
        big = glorot(np.random.default_rng(0), (200, 200))
        assert np.abs(big).max() > 0.9 * np.sqrt(6 / 400)

    def test_deterministic(self):
        cfg = TrainConfig(latent_dim=4)
        a = init_params(cfg, 3, 0.1, np.random.default_rng(3))
        b = init_params(cfg, 3, 0.1, np.random.default_rng(3))
        assert np.array_equal(a.to_vector(), b.to_vector())

    def test_boundary_scheme(self):
        par = init_params(TrainConfig(latent_dim=4, init_scheme="boundary"), 2, 0.1, np.random.default_rng(0))
        assert not par.D.any()

    def test_gain_and_options(self):
        cfg = TrainConfig(latent_dim=3, init_gain=0.5, use_z0=True, learn_z_init=True)
        par = init_params(cfg, 2, 0.1, np.random.default_rng(0))
        ref = init_params(TrainConfig(latent_dim=3), 2, 0.1, np.random.default_rng(0))
        np.testing.assert_allclose(par.C, 0.5 * ref.C)
        assert par.names() == ["theta_d", "C", "R", "z0", "z_init"]
        assert not par.z0.any() and not par.z_init.any()


class TestAdam:
    def par(self):
        return ModelParams(theta_d=[0.5, -0.5], C=np.ones((2, 2)), R=np.ones((2, 1)), dt=0.1)

    def test_zero_gradient(self):
        par = self.par()
        n = par.to_vector().size
        new, st = adam_step(par, GradientSet.zeros_like(par), AdamState.zeros(n), 1e-2)
        assert np.array_equal(new.to_vector(), par.to_vector())
        assert st.t == 1

    def test_moments_decay(self):
        par = self.par()
        n = par.to_vector().size
        _, st = adam_step(par, GradientSet.zeros_like(par), AdamState(np.ones(n), np.ones(n), 3), 1e-2)
        np.testing.assert_allclose(st.m, 0.9)
        np.testing.assert_allclose(st.v, 0.999)

    def test_first_step_magnitude(self, rng):
        par = self.par()
        g = GradientSet(rng.standard_normal(2), rng.standard_normal((2, 2)), rng.standard_normal((2, 1)))
        new, _ = adam_step(par, g, AdamState.zeros(par.to_vector().size), 1e-3)
        step = new.to_vector() - par.to_vector()
        np.testing.assert_allclose(step, -1e-3 * np.sign(g.to_vector()), rtol=1e-6)

    def test_constraint_preserved(self, rng):
        par = self.par()
        state = AdamState.zeros(par.to_vector().size)
        for _ in range(10_000):
            g = GradientSet(rng.standard_normal(2), np.zeros((2, 2)), np.zeros((2, 1)))
            par, state = adam_step(par, g, state, 0.1)
            assert np.all(par.D <= 0)


class TestTrain:
    def test_self_identification(self):
        _, ds = toy_dataset(10, 15)
        cfg = TrainConfig(latent_dim=2, learning_rate=1e-2, max_iterations=3000, split_ratios=(1, 0, 0),
                          patience=10 ** 9)
        par, hist = train(cfg, ds, IDENTITY)
        # improvements below min_delta do not move the selected iterate
        best = hist.column("train_loss")[hist.best_iteration]
        assert best <= 1e-8
        assert loss(par, IDENTITY, ds.series) == best

    def test_history_and_selection(self):
        _, ds = toy_dataset(10)
        cfg = TrainConfig(latent_dim=2, max_iterations=40, seed=1)
        par, hist = train(cfg, ds, IDENTITY)
        assert len(hist) == 41
        assert np.all(np.diff(hist.column("wall_time")) >= 0)
        val = hist.column("val_loss")
        assert hist.best_iteration == int(np.argmin(val))
        assert loss(par, IDENTITY, hist.splits[1].series, cfg.train_steps) == val.min()

    def test_deterministic(self):
        _, ds = toy_dataset(10)
        cfg = TrainConfig(latent_dim=3, max_iterations=25, seed=4)
        a, ha = train(cfg, ds, IDENTITY)
        b, hb = train(cfg, ds, IDENTITY)
        assert np.array_equal(a.to_vector(), b.to_vector())
        assert np.array_equal(ha.column("train_loss"), hb.column("train_loss"))
        assert np.array_equal(ha.column("val_loss"), hb.column("val_loss"))

    def test_early_stop(self):
        _, ds = toy_dataset(10)
        cfg = TrainConfig(latent_dim=2, max_iterations=500, patience=3, min_delta=1e3)
        _, hist = train(cfg, ds, IDENTITY)
        assert hist.stopped_early and len(hist) == 4

    def test_per_series_batches(self):
        _, ds = toy_dataset(10)
        cfg = TrainConfig(latent_dim=2, max_iterations=30, batch_mode="per-series")
        _, hist = train(cfg, ds, IDENTITY)
        assert len(hist) == 31

    def test_diverged(self):
        # an anti-restoring force blows the Euler rollout up at once
        _, ds = toy_dataset(4)
        force = linear_force([[-1e4]])
        cfg = TrainConfig(latent_dim=2, max_iterations=5, split_ratios=(1, 0, 0), cell="euler")
        with pytest.raises(DivergedTraining) as info:
            train(cfg, ds, force)
        assert info.value.iteration == 0

    def test_empty_dataset(self):
        with pytest.raises(EmptySplit):
            train(TrainConfig(), Dataset([], 0.1), IDENTITY)

    def test_continuous_recovery(self):
        rng = np.random.default_rng(0)
        fom = canonical_system([-0.5, -0.2], [[0.0, 1.0], [-1.0, 0.0]], [[1.0], [0.5]], IDENTITY)
        dt = 0.01
        ds = fom_dataset(fom, 20, 100, dt, rng, method="exact-linear")
        cfg = TrainConfig(latent_dim=2, max_iterations=2000, split_ratios=(1, 0, 0), patience=10 ** 9,
                          train_steps=100, init_gain=0.3)
        par, _ = train(cfg, ds, IDENTITY)
        rec = canonical_system(*continuous_from_discrete(par), IDENTITY)
        for s in ds.series:
            _, xa = rk4_trajectory(fom, np.zeros(2), s.x[0], dt, 100)
            _, xb = rk4_trajectory(rec, np.zeros(2), s.x[0], dt, 100)
            assert np.linalg.norm(xa - xb) / np.linalg.norm(xa) <= 0.05


class TestEvaluate:
    def test_perfect(self):
        true, ds = toy_dataset(3)
        m = evaluate(true, IDENTITY, ds, 10)
        assert m["rel_l2_error"] == 0 and m["rmse"] == 0 and m["final_state_error"] == 0
        assert not m["per_step_rel_error"].any()

    def test_zero_forecast(self):
        _, ds = toy_dataset(3)
        zeros = [np.zeros_like(s.x) for s in ds.series]
        assert compare(zeros, [s.x for s in ds.series])["rel_l2_error"] == 1.0

    def test_zero_params_hold_state(self):
        _, ds = toy_dataset(3)
        m = evaluate(ModelParams.zeros(2, 1, 0.1), IDENTITY, ds, 10)
        for pred, s in zip(m["predictions"], ds.series):
            assert np.all(pred == s.x[0])

    def test_horizon_too_long(self):
        true, ds = toy_dataset(2)
        with pytest.raises(ValueError):
            evaluate(true, IDENTITY, ds, 11)

    def test_relative_l2(self):
        assert relative_l2([3.0, 4.0], [3.0, 4.0]) == 0.0
        assert relative_l2([0.0, 0.0], [3.0, 4.0]) == 1.0
        assert relative_l2([0.0], [0.0]) == 0.0

    def test_history_file(self, tmp_path):
        _, ds = toy_dataset(10)
        _, hist = train(TrainConfig(latent_dim=2, max_iterations=3), ds, IDENTITY)
        write_history(hist, tmp_path / "h.txt", "seed 0")
        lines = (tmp_path / "h.txt").read_text().splitlines()
        assert lines[0] == "# seed 0"
        assert lines[1] == "iteration train_loss val_loss wall_time_seconds"
        assert len(lines) == 2 + 4
