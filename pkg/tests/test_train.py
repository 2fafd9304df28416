import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xnn.config import Hyperparams
from xnn.data import Dataset, scenario, split, stream
from xnn.errors import ConfigError
from xnn.model import init_model, importance_ratios, orthonormal_columns
from xnn.train import (
    TrainHistory, auc_score, evaluate, finalize_norm, fine_tune, fit_pipeline, grid_search,
    prune, sosbp_fit,
)

FAST = Hyperparams(max_epochs=15, patience=5, finetune_epochs=5, hidden=(6, 4))


def small_split(sid="S1", n=400, seed=0):
    return split(scenario(sid, n, stream(seed, 1)), 0.8, 0.2, stream(seed, 3))


def model_with_beta(beta, p=6):
    m = init_model(p, Hyperparams(k=len(beta)), np.random.default_rng(0))
    m.beta = np.asarray(beta, dtype=float)
    return m


class TestFit:
    def test_zero_epochs(self):
        m, h = sosbp_fit(small_split(), dataclasses.replace(FAST, max_epochs=0),
                         np.random.default_rng(0))
        assert len(h) == 0
        assert np.allclose(m.W.T @ m.W, np.eye(m.k), atol=1e-12)

    def test_history_and_orthogonality(self):
        m, h = sosbp_fit(small_split(), FAST, np.random.default_rng(0))
        assert len(h) == len(h.val_score) == len(h.ortho_residual) == len(h.seconds)
        assert h.max_ortho_residual <= 1e-6
        assert np.linalg.norm(m.W.T @ m.W - np.eye(m.k)) <= 1e-6

    def test_restores_best_epoch(self):
        ds = small_split()
        m, h = sosbp_fit(ds, FAST, np.random.default_rng(0))
        from xnn.train import data_loss

        va = ds.subset("validation")
        best = min(h.val_score)
        assert h.val_score[h.best_epoch - 1] == best
        assert data_loss(m, va.X, va.y) == pytest.approx(best, rel=1e-12)

    def test_deterministic(self):
        ds = small_split()
        a, _ = sosbp_fit(ds, FAST, np.random.default_rng(3))
        b, _ = sosbp_fit(ds, FAST, np.random.default_rng(3))
        assert np.array_equal(a.W, b.W) and np.array_equal(a.beta, b.beta)

    def test_needs_split(self):
        with pytest.raises(ConfigError):
            sosbp_fit(scenario("S1", 50, stream(0)), FAST, np.random.default_rng(0))

    def test_gam_mode_keeps_identity(self):
        ds = small_split(n=200)
        m, _ = sosbp_fit(ds, dataclasses.replace(FAST, gam_mode=True, max_epochs=3),
                         np.random.default_rng(0))
        assert np.array_equal(m.W, np.eye(10))

    def test_unconstrained_debug_mode_drifts(self):
        ds = small_split(n=200)
        hp = dataclasses.replace(FAST, orthogonal=False, max_epochs=5, patience=5, eta=0.05)
        _, h = sosbp_fit(ds, hp, np.random.default_rng(0))
        assert h.max_ortho_residual > 1e-3

    def test_single_index_recovers_linear_direction(self):
        rng = np.random.default_rng(11)
        w = rng.normal(size=5)
        w /= np.linalg.norm(w)
        X = rng.uniform(-1, 1, (2000, 5))
        ds = split(Dataset(X, X @ w), 0.8, 0.2, rng)
        hp = Hyperparams(k=1, max_epochs=60, patience=60, lambda1=0, lambda2=0)
        m, _ = sosbp_fit(ds, hp, np.random.default_rng(0))
        # least squares gives w up to scale; the fit must line up with it
        w_ls = np.linalg.lstsq(np.c_[np.ones(2000), X], X @ w, rcond=None)[0][1:]
        assert abs(m.W[:, 0] @ w_ls) / np.linalg.norm(w_ls) >= 0.99


class TestFinalizeNorm:
    def test_single_row(self):
        m = init_model(4, Hyperparams(k=2), np.random.default_rng(0))
        f = finalize_norm(m, np.zeros((1, 4)))
        assert np.array_equal(f.norm_std, np.full(2, m.norm_eps))
        from xnn.model import ridge_outputs

        assert np.array_equal(ridge_outputs(f, np.zeros((1, 4))), np.zeros((1, 2)))

    def test_already_standard(self):
        m = init_model(4, Hyperparams(k=2), np.random.default_rng(1))
        X = np.random.default_rng(2).uniform(-1, 1, (300, 4))
        f = finalize_norm(m, X)
        # shift the last layer so raw outputs become standardized exactly
        m.weights[-1] = m.weights[-1] / f.norm_std[:, None, None]
        m.biases[-1] = (m.biases[-1] - f.norm_mean[:, None]) / f.norm_std[:, None]
        g = finalize_norm(m, X)
        assert np.allclose(g.norm_mean, 0, atol=1e-10) and np.allclose(g.norm_std, 1, atol=1e-10)

    def test_two_values(self):
        from xnn.model import DenseLayer, Subnetwork, XnnModel

        s = Subnetwork([DenseLayer([[1.0]], [0.0])], "linear")
        m = XnnModel.from_subnets(0.0, [1.0], np.array([[1.0]]), [s])
        f = finalize_norm(m, np.array([[1.0], [3.0]]))
        assert (f.norm_mean[0], f.norm_std[0]) == (2.0, 1.0)


class TestPrune:
    def test_keep_three(self):
        m = prune(model_with_beta([0.6, 0.3, 0.06, 0.04]), 0.95)
        assert m.active.tolist() == [True, True, True, False]
        assert m.beta[3] == 0

    def test_keep_all(self):
        m = prune(model_with_beta([0.6, 0.3, 0.06, 0.04]), 0.99)
        assert m.active.all()

    @pytest.mark.parametrize("t", [0.5, 0.95, 0.99, 1.0])
    def test_single_dominant(self, t):
        m = prune(model_with_beta([1.0, 0.0, 0.0]), t)
        assert m.active.tolist() == [True, False, False]

    def test_order_independent_of_position(self):
        m = prune(model_with_beta([0.04, -0.3, 0.06, 0.6]), 0.95)
        assert m.active.tolist() == [False, True, True, True]

    def test_bad_threshold(self):
        with pytest.raises(ConfigError):
            prune(model_with_beta([1.0]), 1.5)

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=10)
           .filter(lambda b: sum(abs(x) for x in b) > 1e-6),
           st.sampled_from([0.95, 0.99]))
    @settings(max_examples=60, deadline=None)
    def test_properties(self, beta, t):
        m0 = model_with_beta(beta, p=10)
        m = prune(m0, t)
        ir = importance_ratios(beta)
        assert ir[m.active].sum() >= t - 1e-9
        assert m.active.any()
        # the survivors are a top-IR prefix
        assert ir[m.active].min() >= ir[~m.active].max(initial=-1.0)
        again = prune(m, t)
        assert np.array_equal(again.active, m.active) and np.array_equal(again.beta, m.beta)
        assert np.array_equal(m.W, m0.W)


class TestFineTune:
    def test_zero_epochs(self):
        ds = small_split()
        m, _ = sosbp_fit(ds, FAST, np.random.default_rng(0))
        m = prune(m, 0.95)
        out, h = fine_tune(m, ds, dataclasses.replace(FAST, finetune_epochs=0))
        assert len(h) == 0
        assert np.array_equal(out.beta, m.beta) and np.array_equal(out.W, m.W)

    def test_projection_frozen(self):
        ds = small_split()
        m, _ = sosbp_fit(ds, FAST, np.random.default_rng(0))
        m = prune(m, 0.95)
        out, h = fine_tune(m, ds, FAST, np.random.default_rng(1))
        assert out.W.tobytes() == m.W.tobytes()
        assert len(h) >= 1
        assert np.array_equal(out.beta[~m.active], np.zeros((~m.active).sum()))


class TestPipeline:
    def test_result(self):
        r = fit_pipeline(small_split(), FAST, np.random.default_rng(0), keep_pre_prune=True)
        assert (r.model.beta >= 0).all()
        assert r.model.active.sum() >= 1
        assert r.pre_prune is not None
        assert r.importance.sum() == pytest.approx(1.0)
        assert r.model.hparams["k"] == 10

    def test_grid(self):
        best, table = grid_search(small_split(n=200), dataclasses.replace(FAST, max_epochs=3),
                                  (1e-3, 1e-2), (1e-3,))
        assert len(table) == 2
        assert best.val_score == min(row["val_score"] for row in table)

    def test_classification(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, (500, 4))
        y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(float)
        ds = split(Dataset(X, y, "classification"), 0.6, 0.2, rng)
        r = fit_pipeline(ds, dataclasses.replace(FAST, max_epochs=30, patience=30), rng)
        assert r.model.link == "logit"
        te = ds.subset("test")
        metrics = evaluate(r.model, te.X, te.y)
        assert metrics["auc"] > 0.9
        with pytest.raises(ConfigError):
            evaluate(r.model, te.X, te.y, task="regression")


class TestMetrics:
    def test_perfect(self):
        m = init_model(3, Hyperparams(k=1), np.random.default_rng(0))
        X = np.random.default_rng(1).normal(size=(20, 3))
        from xnn.model import forward

        assert evaluate(m, X, forward(m, X))["mse"] == 0.0

    def test_constant(self):
        m = init_model(3, Hyperparams(k=1), np.random.default_rng(0))
        m.beta[:] = 0
        y = np.random.default_rng(2).normal(size=30)
        m.mu = y.mean()
        assert evaluate(m, np.zeros((30, 3)), y)["mse"] == pytest.approx(y.var())

    def test_auc(self):
        assert auc_score([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == 0.75
        assert auc_score([0, 1], [1.0, 1.0]) == 0.5


def test_history_csv(tmp_path):
    h = TrainHistory()
    h.append(epoch=1, train_loss=2.0, val_score=1.5, ortho_residual=0.0, seconds=0.1)
    h.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_score,ortho_residual,seconds"
    assert lines[1].startswith("1,2.0,1.5,0.0,")


def test_hparams_roundtrip():
    hp = Hyperparams(k=3, hidden=(5,))
    assert Hyperparams.from_dict(hp.to_dict()) == hp
    with pytest.raises(ConfigError):
        Hyperparams.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        Hyperparams(k=11).resolve(10)
    assert Hyperparams().resolve(10, 10000).batch_size == 1000
    assert Hyperparams().resolve(4, 100).batch_size == 20
    assert Hyperparams().resolve(30).k == 10
