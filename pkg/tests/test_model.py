import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xnn.config import Hyperparams
from xnn.errors import ConfigError, DegenerateError, ShapeError
from xnn.model import (
    DenseLayer, NormState, Subnetwork, XnnModel, canonicalize_signs, flip_subnet, forward,
    from_dict, importance_ratios, init_model, linear_predictor, normalize, project,
    subnet_eval, to_dict,
)


def identity_subnet():
    return Subnetwork([DenseLayer([[1.0]], [0.0])], "linear")


def tanh_unit(w=1.0, b=0.0):
    return Subnetwork([DenseLayer([[w]], [b]), DenseLayer([[1.0]], [0.0])], "tanh")


def linear_model(W, beta, mu=0.0):
    W = np.asarray(W, dtype=float)
    k = W.shape[1]
    return XnnModel.from_subnets(mu, beta, W, [identity_subnet() for _ in range(k)])


class TestInit:
    def test_orthonormal_columns(self):
        m = init_model(10, Hyperparams(k=4), np.random.default_rng(0))
        assert np.allclose(m.W.T @ m.W, np.eye(4), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_square_is_orthogonal(self, seed):
        m = init_model(3, Hyperparams(k=3), np.random.default_rng(seed))
        assert abs(abs(np.linalg.det(m.W)) - 1) < 1e-10

    @pytest.mark.parametrize("k", [11, 0])
    def test_bad_k(self, k):
        with pytest.raises(ConfigError):
            init_model(10, Hyperparams(k=k), np.random.default_rng(0))

    def test_shapes_and_defaults(self):
        m = init_model(6, Hyperparams(), np.random.default_rng(1))
        assert m.k == 6 and m.mu == 0.0
        assert [w.shape for w in m.weights] == [(6, 10, 1), (6, 6, 10), (6, 1, 6)]
        assert all((b == 0).all() for b in m.biases)
        assert np.array_equal(m.norm_mean, np.zeros(6))
        assert np.array_equal(m.norm_std, np.ones(6))
        assert m.link == "identity"

    def test_xavier_scale(self):
        m = init_model(10, Hyperparams(k=10, hidden=(200, 300)), np.random.default_rng(2))
        # middle layer: fan_in 200, fan_out 300 -> variance 2/500
        assert m.weights[1].var() == pytest.approx(2 / 500, rel=0.02)

    def test_gam_mode_uses_identity(self):
        m = init_model(3, Hyperparams(gam_mode=True), np.random.default_rng(0))
        assert np.array_equal(m.W, np.eye(3))


class TestProject:
    def test_identity(self):
        X = np.random.default_rng(0).normal(size=(7, 4))
        assert np.array_equal(project(linear_model(np.eye(4), np.ones(4)), X), X)

    def test_zero(self):
        m = init_model(5, Hyperparams(k=2), np.random.default_rng(0))
        assert np.array_equal(project(m, np.zeros((3, 5))), np.zeros((3, 2)))

    def test_diagonal(self):
        r = np.sqrt(2) / 2
        m = linear_model([[r], [r]], [1.0])
        assert project(m, [[1.0, 1.0]])[0, 0] == pytest.approx(1.414214, abs=1e-6)

    def test_shape_error(self):
        m = init_model(5, Hyperparams(k=2), np.random.default_rng(0))
        with pytest.raises(ShapeError):
            project(m, np.zeros((3, 4)))

    def test_learned_feature_covariance(self):
        rng = np.random.default_rng(3)
        L = 0.3 * rng.normal(size=(6, 6))
        X = rng.normal(size=(10000, 6)) @ L.T
        m = init_model(6, Hyperparams(k=3), rng)
        Z = project(m, X)
        S = np.cov(X.T, bias=True)
        assert np.allclose(np.cov(Z.T, bias=True), m.W.T @ S @ m.W, atol=1e-12)


class TestSubnetEval:
    def test_identity(self):
        z = np.linspace(-2, 2, 9)
        assert np.array_equal(subnet_eval(identity_subnet(), z), z)

    def test_all_zero(self):
        s = Subnetwork([DenseLayer(np.zeros((3, 1)), np.zeros(3)),
                        DenseLayer(np.zeros((1, 3)), np.zeros(1))])
        assert np.array_equal(subnet_eval(s, [0.3, -1.0]), [0.0, 0.0])

    def test_tanh_unit(self):
        assert subnet_eval(tanh_unit(), [0.5])[0] == pytest.approx(0.462117, abs=1e-6)

    def test_widths_must_chain(self):
        with pytest.raises(ShapeError):
            Subnetwork([DenseLayer(np.zeros((3, 1)), np.zeros(3)),
                        DenseLayer(np.zeros((1, 2)), np.zeros(1))])

    def test_stacked_matches_single(self):
        m = init_model(4, Hyperparams(k=3), np.random.default_rng(5))
        X = np.random.default_rng(6).uniform(-1, 1, (20, 4))
        from xnn.model import raw_outputs

        H = raw_outputs(m, X)
        Z = project(m, X)
        for j, s in enumerate(m.subnets):
            assert np.allclose(H[:, j], subnet_eval(s, Z[:, j]), atol=1e-14)


class TestNormalize:
    def test_identity_state(self):
        h = np.array([0.3, -2.0, 5.0])
        assert np.array_equal(normalize(h, NormState(0.0, 1.0)), h)

    def test_population_moments(self):
        h = np.array([1.0, 3.0])
        assert np.allclose(normalize(h, NormState.from_values(h)), [-1.0, 1.0])

    def test_constant_batch(self):
        h = np.full(5, 2.5)
        ns = NormState.from_values(h)
        assert ns.std == ns.epsilon
        assert np.array_equal(normalize(h, ns), np.zeros(5))


class TestForward:
    def test_constant(self):
        m = init_model(4, Hyperparams(k=2), np.random.default_rng(0))
        m.beta[:] = 0
        m.mu = 5.0
        X = np.random.default_rng(1).normal(size=(6, 4))
        assert np.array_equal(forward(m, X), np.full(6, 5.0))

    def test_single_linear_index(self):
        w = np.array([[0.6], [0.8], [0.0]])
        m = linear_model(w, [1.0])
        X = np.random.default_rng(2).normal(size=(5, 3))
        assert np.allclose(forward(m, X), (X @ w)[:, 0], atol=1e-14)

    def test_logit_link_returns_probabilities(self):
        m = linear_model(np.eye(2), [1.0, -1.0])
        m.link = "logit"
        X = np.array([[0.0, 0.0], [3.0, -3.0]])
        eta = linear_predictor(m, X)
        assert np.allclose(forward(m, X), 1 / (1 + np.exp(-eta)))

    def test_shape_error(self):
        m = linear_model(np.eye(2), [1.0, 1.0])
        with pytest.raises(ShapeError):
            forward(m, np.zeros((2, 3)))

    @given(seed=st.integers(0, 2**32 - 1), j=st.integers(0, 2))
    @settings(max_examples=30, deadline=None)
    def test_sign_flip_invariance(self, seed, j):
        rng = np.random.default_rng(seed)
        m = init_model(5, Hyperparams(k=3, hidden=(4, 3)), rng)
        m.mu = rng.normal()
        X = rng.uniform(-1, 1, (12, 5))
        before = forward(m, X)
        flipped = m.copy()
        flip_subnet(flipped, j)
        assert np.allclose(forward(flipped, X), before, rtol=0, atol=1e-12)

    def test_canonical_signs_preserve_predictions(self):
        rng = np.random.default_rng(7)
        m = init_model(5, Hyperparams(k=4), rng)
        m.beta = np.array([-1.0, 0.5, -0.2, 2.0])
        m.norm_mean = rng.normal(size=4)
        m.norm_std = rng.uniform(0.5, 2, size=4)
        X = rng.uniform(-1, 1, (20, 5))
        c = canonicalize_signs(m)
        assert (c.beta >= 0).all()
        lead = c.W[np.argmax(np.abs(c.W), axis=0), np.arange(4)]
        assert (lead > 0).all()
        assert np.allclose(forward(c, X), forward(m, X), atol=1e-12)

    def test_gam_form(self):
        rng = np.random.default_rng(8)
        m = init_model(4, Hyperparams(gam_mode=True, hidden=(5, 3)), rng)
        m.mu = 0.7
        m.norm_mean = rng.normal(size=4)
        m.norm_std = rng.uniform(0.5, 2, size=4)
        X = rng.uniform(-1, 1, (15, 4))
        direct = m.mu + sum(
            m.beta[j] * normalize(subnet_eval(s, X[:, j]), m.norm[j])
            for j, s in enumerate(m.subnets)
        )
        assert np.allclose(forward(m, X), direct, atol=1e-12)


class TestImportance:
    def test_example(self):
        assert np.allclose(importance_ratios([2, -1, 1]), [0.5, 0.25, 0.25])

    @pytest.mark.parametrize("c", [3.0, -0.01, 1e6])
    def test_single(self, c):
        assert importance_ratios([c]).tolist() == [1.0]

    def test_degenerate(self):
        with pytest.raises(DegenerateError):
            importance_ratios([0.0, 0.0])

    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=12)
           .filter(lambda b: sum(abs(x) for x in b) > 1e-9))
    def test_simplex(self, beta):
        r = importance_ratios(beta)
        assert (r >= 0).all()
        assert abs(r.sum() - 1) <= 1e-12


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        m = init_model(6, Hyperparams(k=3), rng)
        m.norm_mean = rng.normal(size=3)
        m.active = np.array([True, False, True])
        d = to_dict(m, Hyperparams(k=3))
        assert d["version"] == "xnn-model/1"
        back = from_dict(json.loads(json.dumps(d)))
        X = rng.uniform(-1, 1, (10, 6))
        assert np.array_equal(forward(back, X), forward(m, X))
        assert back.active.tolist() == [True, False, True]
        assert back.hparams["k"] == 3
        assert json.dumps(to_dict(back)) == json.dumps(d)

    def test_w_is_row_major(self):
        m = linear_model([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0])
        assert to_dict(m)["W"]["data"] == [1.0, 2.0, 3.0, 4.0]

    def test_rejects_unknown_version(self):
        m = linear_model(np.eye(2), [1.0, 1.0])
        d = to_dict(m)
        d["version"] = "xnn-model/0"
        with pytest.raises(ConfigError):
            from_dict(d)
