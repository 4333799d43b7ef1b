import itertools
import math
import unittest

import numpy as np
import scipy.sparse as sp
from numpy.testing import assert_allclose, assert_array_equal
from scipy.special import expit

from graph_ae.exceptions import (
    DecoderSizeError, DimensionMismatchError, DivergenceError, InvalidGraphError, NonFiniteGradientError,
)
from graph_ae.linalg import make_sparse, normalize_adjacency
from graph_ae.models import ModelSpec, Parameters, encode, init_parameters, input_dim, score_edges
from graph_ae.training import (
    GradientSet, LossConfig, OptimizerState, TrainingConfig, adam_step, backward, kl_divergence, loss_config_for,
    reconstruction_loss, reconstruction_target, total_loss, train,
)

from .factories import complete_graph, path_graph, random_graph


def naive_weighted_bce(logits, labels, pos_weight):
    probabilities = 1.0 / (1.0 + np.exp(-logits))
    return -(pos_weight * labels * np.log(probabilities) + (1.0 - labels) * np.log(1.0 - probabilities))


class LossConfigTests(unittest.TestCase):

    def test_path_constants(self):
        adjacency = path_graph(3).adjacency
        cfg = loss_config_for(adjacency, variational=False)
        # S = 4 + 3 = 7 положительных из 9
        self.assertAlmostEqual(cfg.pos_weight, 2 / 7)
        self.assertAlmostEqual(cfg.norm, 9 / 4)
        self.assertEqual(cfg.kl_scale, 0.0)
        self.assertAlmostEqual(loss_config_for(adjacency, variational=True).kl_scale, 1 / 3)

    def test_complete_graph_has_no_negatives(self):
        with self.assertRaises(InvalidGraphError):
            loss_config_for(complete_graph(3).adjacency, variational=False)

    def test_target_includes_self_loops(self):
        target = reconstruction_target(path_graph(3).adjacency).toarray()
        assert_array_equal(target, [[1, 1, 0], [1, 1, 1], [0, 1, 1]])


class ReconstructionLossTests(unittest.TestCase):

    def test_zero_logits(self):
        target = reconstruction_target(path_graph(3).adjacency)
        loss = reconstruction_loss(np.zeros((3, 3)), target, LossConfig(pos_weight=1.0, norm=1.0))
        self.assertAlmostEqual(loss, math.log(2), places=12)

    def test_saturated_logits(self):
        target = reconstruction_target(path_graph(4).adjacency)
        logits = np.where(target.toarray() > 0, 40.0, -40.0)
        cfg = loss_config_for(path_graph(4).adjacency, variational=False)
        self.assertLess(reconstruction_loss(logits, target, cfg), 1e-10)

    def test_hand_summed_two_by_two(self):
        target = sp.csr_matrix(np.eye(2))
        logits = np.array([[1.0, -2.0], [-2.0, 0.5]])
        cfg = LossConfig(pos_weight=3.0, norm=0.7)
        terms = [
            3.0 * math.log(1 + math.exp(-1.0)),
            math.log(1 + math.exp(-2.0)),
            math.log(1 + math.exp(-2.0)),
            3.0 * math.log(1 + math.exp(-0.5)),
        ]
        self.assertAlmostEqual(reconstruction_loss(logits, target, cfg), 0.7 * sum(terms) / 4, places=12)

    def test_stable_form_matches_naive(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(2, 12))
            logits = rng.uniform(-20, 20, size=(n, n))
            labels = (rng.random((n, n)) < 0.3).astype(float)
            pos_weight = float(rng.uniform(0.5, 30))
            cfg = LossConfig(pos_weight=pos_weight, norm=1.0)
            expected = naive_weighted_bce(logits, labels, pos_weight).mean()
            self.assertLess(abs(reconstruction_loss(logits, sp.csr_matrix(labels), cfg) - expected), 1e-8)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            reconstruction_loss(np.zeros((2, 2)), sp.csr_matrix(np.eye(3)), LossConfig(pos_weight=1, norm=1))


class KlDivergenceTests(unittest.TestCase):

    def test_examples(self):
        self.assertEqual(kl_divergence(np.zeros((4, 2)), np.zeros((4, 2))), 0.0)
        self.assertAlmostEqual(kl_divergence(np.ones((1, 1)), np.zeros((1, 1))), 0.5)
        self.assertAlmostEqual(kl_divergence(np.zeros((1, 1)), np.ones((1, 1))), 0.5 * (math.e ** 2 - 3), places=12)

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            mu = rng.standard_normal((6, 3)) * rng.uniform(0, 3)
            log_sigma = rng.standard_normal((6, 3)) * rng.uniform(0, 3)
            self.assertGreaterEqual(kl_divergence(mu, log_sigma), 0.0)
        self.assertGreaterEqual(kl_divergence(np.zeros((2, 2)), np.full((2, 2), 1e-9)), 0.0)


class BackwardTests(unittest.TestCase):

    def _finite_difference_error(self, spec, n, seed, sparse_features=False):
        rng = np.random.default_rng(seed)
        graph = random_graph(n, 0.3, rng)
        a_norm = normalize_adjacency(graph.adjacency)
        target = reconstruction_target(graph.adjacency)
        cfg = loss_config_for(graph.adjacency, spec.variational)
        if spec.variational:
            cfg = cfg.model_copy(update={'kl_scale': 0.5})
        features = None
        if spec.use_features:
            features = rng.random((n, 4))
            if sparse_features:
                features = sp.csr_matrix(features * (features > 0.4))
        params = init_parameters(spec, input_dim(spec, n, features), rng)
        epsilon = rng.standard_normal((n, spec.embedding_dim)) if spec.variational else None

        def relu_masks(cache):
            hidden = list(cache.layer_activations[1:-1])
            if cache.sigma_activations is not None:
                hidden += list(cache.sigma_activations[1:])
            return [h > 0 for h in hidden]

        def loss_at(weights):
            cache = encode(a_norm, features, Parameters(tuple(weights)), spec, epsilon=epsilon)
            return total_loss(cache, target, spec, cfg), relu_masks(cache)

        cache = encode(a_norm, features, params, spec, epsilon=epsilon)
        masks = relu_masks(cache)
        grads = backward(cache, target, params, spec, cfg).grads
        h = 1e-5
        worst = 0.0
        for index, w in enumerate(params.weights):
            numeric = np.array(grads[index], copy=True)
            for position in np.ndindex(w.shape):
                shifted = [x.copy() for x in params.weights]
                shifted[index][position] += h
                plus, plus_masks = loss_at(shifted)
                shifted[index][position] -= 2 * h
                minus, minus_masks = loss_at(shifted)
                # Шаг пересёк излом ReLU: разностная производная там не определена
                if not all(np.array_equal(a, b) for a, b in zip(masks + masks, plus_masks + minus_masks)):
                    continue
                numeric[position] = (plus - minus) / (2 * h)
            scale = max(np.abs(numeric).max(), np.abs(grads[index]).max(), 1e-8)
            worst = max(worst, np.abs(numeric - grads[index]).max() / scale)
        return worst

    def test_finite_difference_grid(self):
        seed = 0
        for n, d, depth, variational, use_features in itertools.product(
                (6, 8), (2, 3), (1, 2, 3), (False, True), (False, True)):
            encoder = 'linear' if depth == 1 else 'gcn'
            spec = ModelSpec(encoder=encoder, depth=depth, hidden_dims=(4,) * (depth - 1), embedding_dim=d,
                             variational=variational, use_features=use_features)
            seed += 1
            with self.subTest(n=n, d=d, depth=depth, variational=variational, use_features=use_features):
                self.assertLess(self._finite_difference_error(spec, n, seed), 1e-4)

    def test_finite_difference_separate_networks(self):
        for depth, seed in ((2, 101), (3, 102)):
            spec = ModelSpec(encoder='gcn', depth=depth, hidden_dims=(4,) * (depth - 1), embedding_dim=2,
                             variational=True, shared_trunk=False)
            with self.subTest(depth=depth):
                self.assertLess(self._finite_difference_error(spec, 8, seed), 1e-4)

    def test_finite_difference_sparse_features(self):
        spec = ModelSpec(encoder='gcn', depth=2, hidden_dims=(3,), embedding_dim=2, variational=True,
                         use_features=True)
        self.assertLess(self._finite_difference_error(spec, 8, 7, sparse_features=True), 1e-4)

    def test_zero_parameters_give_zero_gradient(self):
        adjacency = path_graph(4).adjacency
        spec = ModelSpec(encoder='linear', embedding_dim=2)
        params = Parameters((np.zeros((4, 2)),))
        cache = encode(normalize_adjacency(adjacency), None, params, spec)
        grads = backward(cache, reconstruction_target(adjacency), params, spec, loss_config_for(adjacency, False))
        assert_array_equal(grads.grads[0], 0.0)

    def test_linear_closed_form(self):
        adjacency = path_graph(3).adjacency
        a_norm = normalize_adjacency(adjacency)
        target = reconstruction_target(adjacency)
        cfg = loss_config_for(adjacency, variational=False)
        spec = ModelSpec(encoder='linear', embedding_dim=2)
        w = np.array([[0.3, -0.2], [0.1, 0.4], [-0.5, 0.2]])
        cache = encode(a_norm, None, Parameters((w,)), spec)

        dense_a = a_norm.toarray()
        z = dense_a @ w
        labels = target.toarray()
        residual = (1 - labels) - (1 + (cfg.pos_weight - 1) * labels) * expit(-(z @ z.T))
        e = cfg.norm / 9 * residual
        expected = 2 * dense_a.T @ (e @ z)
        grads = backward(cache, target, Parameters((w,)), spec, cfg)
        assert_allclose(grads.grads[0], expected, rtol=1e-12, atol=1e-14)

    def test_ae_cache_with_vae_spec(self):
        adjacency = path_graph(3).adjacency
        spec = ModelSpec(encoder='linear', embedding_dim=2)
        params = init_parameters(spec, 3, np.random.default_rng(0))
        cache = encode(normalize_adjacency(adjacency), None, params, spec)
        vae = spec.model_copy(update={'variational': True})
        with self.assertRaises(DimensionMismatchError):
            backward(cache, reconstruction_target(adjacency), params, vae, loss_config_for(adjacency, True))

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        adjacency = random_graph(9, 0.3, rng).adjacency
        spec = ModelSpec(encoder='gcn', depth=2, hidden_dims=(4,), embedding_dim=2, variational=True)
        params = init_parameters(spec, 9, rng)
        cache = encode(normalize_adjacency(adjacency), None, params, spec, rng=np.random.default_rng(1))
        cfg = loss_config_for(adjacency, True)
        first = backward(cache, reconstruction_target(adjacency), params, spec, cfg)
        second = backward(cache, reconstruction_target(adjacency), params, spec, cfg)
        for a, b in zip(first.grads, second.grads):
            assert_array_equal(a, b)


class AdamTests(unittest.TestCase):

    def setUp(self):
        self.params = Parameters((np.array([[1.0, -2.0], [0.5, 0.0]]), np.array([[3.0]])))
        self.state = OptimizerState.initial(self.params, TrainingConfig(learning_rate=0.01))

    def test_zero_gradient(self):
        zeros = GradientSet(tuple(np.zeros_like(w) for w in self.params.weights))
        params, state = adam_step(self.params, zeros, self.state)
        for before, after in zip(self.params.weights, params.weights):
            assert_array_equal(before, after)
        self.assertEqual(state.step, 1)
        for m, v in zip(state.first_moment, state.second_moment):
            assert_array_equal(m, 0.0)
            assert_array_equal(v, 0.0)

    def test_first_step_closed_form(self):
        grads = GradientSet((np.array([[0.2, -4.0], [1e-3, 0.0]]), np.array([[-0.7]])))
        params, _ = adam_step(self.params, grads, self.state)
        for w, g, updated in zip(self.params.weights, grads.grads, params.weights):
            assert_allclose(updated, w - 0.01 * g / (np.abs(g) + 1e-8), rtol=1e-10, atol=1e-15)

    def test_repeatable(self):
        grads = GradientSet((np.ones((2, 2)), np.ones((1, 1))))
        params_a, state_a = adam_step(self.params, grads, self.state)
        params_a, state_a = adam_step(params_a, grads, state_a)
        params_b, state_b = adam_step(self.params, grads, self.state)
        params_b, state_b = adam_step(params_b, grads, state_b)
        self.assertEqual(state_a.step, 2)
        for a, b in zip(params_a.weights, params_b.weights):
            assert_array_equal(a, b)

    def test_non_finite_gradient(self):
        grads = GradientSet((np.array([[np.nan, 0.0], [0.0, 0.0]]), np.zeros((1, 1))))
        with self.assertRaises(NonFiniteGradientError):
            adam_step(self.params, grads, self.state)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            adam_step(self.params, GradientSet((np.zeros((2, 2)),)), self.state)


class TrainTests(unittest.TestCase):

    def test_zero_epochs_returns_initialization(self):
        adjacency = path_graph(3).adjacency
        spec = ModelSpec(encoder='linear', embedding_dim=2)
        result = train(adjacency, None, spec, TrainingConfig(epochs=0), np.random.default_rng(5))
        expected = init_parameters(spec, 3, np.random.default_rng(5))
        assert_array_equal(result.params.weights[0], expected.weights[0])
        self.assertEqual(result.loss_trace, [])

    def test_path_edges_beat_non_edge(self):
        adjacency = path_graph(3).adjacency
        spec = ModelSpec(encoder='linear', embedding_dim=2)
        result = train(adjacency, None, spec, TrainingConfig(epochs=200, learning_rate=0.01),
                       np.random.default_rng(0))
        z = normalize_adjacency(adjacency) @ result.params.weights[0]
        edges = score_edges(z, [(0, 1), (1, 2)])
        non_edge = score_edges(z, [(0, 2)])[0]
        self.assertTrue(np.all(edges > non_edge))
        self.assertEqual(len(result.loss_trace), 200)
        self.assertTrue(np.all(np.isfinite(result.loss_trace)))
        self.assertLess(result.loss_trace[-1], result.loss_trace[0])

    def test_vae_loss_decreases(self):
        rng = np.random.default_rng(8)
        adjacency = random_graph(30, 0.1, rng).adjacency
        spec = ModelSpec(encoder='gcn', depth=2, hidden_dims=(8,), embedding_dim=4, variational=True)
        result = train(adjacency, None, spec, TrainingConfig(epochs=100), rng)
        self.assertLess(np.mean(result.loss_trace[-10:]), np.mean(result.loss_trace[:10]))

    def test_bit_deterministic(self):
        adjacency = random_graph(12, 0.2, np.random.default_rng(2)).adjacency
        spec = ModelSpec(encoder='linear', embedding_dim=3, variational=True)
        first = train(adjacency, None, spec, TrainingConfig(epochs=20), np.random.default_rng(3))
        second = train(adjacency, None, spec, TrainingConfig(epochs=20), np.random.default_rng(3))
        self.assertEqual(first.loss_trace, second.loss_trace)
        for a, b in zip(first.params.weights, second.params.weights):
            assert_array_equal(a, b)

    def test_validation_trace(self):
        adjacency = random_graph(20, 0.15, np.random.default_rng(4)).adjacency
        spec = ModelSpec(encoder='linear', embedding_dim=4)
        validation = (np.array([[0, 1], [2, 3]]), np.array([[0, 10], [5, 15]]))
        result = train(adjacency, None, spec, TrainingConfig(epochs=15), np.random.default_rng(0),
                       validation=validation)
        self.assertEqual(len(result.val_auc_trace), 15)
        self.assertEqual(len(result.val_ap_trace), 15)
        self.assertTrue(all(0.0 <= value <= 1.0 for value in result.val_auc_trace))

    def test_decoder_guard(self):
        spec = ModelSpec(encoder='linear', embedding_dim=2)
        with self.assertRaises(DecoderSizeError):
            train(path_graph(3).adjacency, None, spec, TrainingConfig(epochs=1, decoder_max_nodes=2),
                  np.random.default_rng(0))

    def test_divergence_aborts(self):
        adjacency = random_graph(10, 0.3, np.random.default_rng(1)).adjacency
        spec = ModelSpec(encoder='linear', embedding_dim=2)
        with np.errstate(all='ignore'):
            with self.assertRaises(DivergenceError) as context:
                train(adjacency, None, spec, TrainingConfig(epochs=5, learning_rate=1e300),
                      np.random.default_rng(0))
        self.assertGreaterEqual(context.exception.epoch, 1)

    def test_features_used(self):
        adjacency = make_sparse(4, 4, [0, 1, 2, 3], [1, 0, 3, 2])
        features = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        spec = ModelSpec(encoder='linear', embedding_dim=2, use_features=True)
        result = train(adjacency, features, spec, TrainingConfig(epochs=3), np.random.default_rng(0))
        self.assertEqual(result.params.shapes, [(2, 2)])


if __name__ == '__main__':
    unittest.main()
