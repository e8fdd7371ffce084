from unittest import TestCase

import numpy as np

from nbvae.data import BinaryMatrix, Dataset, FeatureMatrix, SparseCountMatrix
from nbvae.evaluation import (
    EvalReport,
    evaluate,
    evaluate_fold_in,
    evaluate_multilabel,
    evaluate_perplexity,
    parse_metric,
    perplexity,
    perplexity_from_rates,
    precision_at_R,
    predictive_rate,
    rank_metrics,
    score_items,
    score_labels,
    score_labels_without_features,
)
from nbvae.exc import ConfigurationError, ContractError, EvaluationError
from nbvae.models import LikelihoodParams, Model, ModelConfig, init_params
from nbvae.synthetic import latent_factor_binary


def zero_head_model(variant, input_dim, **options):
    config = ModelConfig(variant, input_dim, 2, encoder_layers=(3,), **options)
    return Model(config, init_params(config, zero_heads=True))


class TestPredictiveRate(TestCase):
    def test_nbvae_uniform(self):
        params = {"r": np.ones(4), "p": np.full(4, 0.3)}
        rate = predictive_rate("nbvae", params, np.zeros(4))
        self.assertTrue(np.allclose(rate.normalized, 0.25))

    def test_nbvae_dm(self):
        rate = predictive_rate("nbvae_dm", {"r": [1.0, 1.0]}, [3.0, 0.0])
        self.assertTrue(np.allclose(rate.normalized, [4 / 5, 1 / 5]))

    def test_nbvae(self):
        params = {"r": [1.0, 1.0], "p": [0.5, 0.25]}
        rate = predictive_rate("nbvae", params, [3.0, 0.0])
        self.assertTrue(np.allclose(rate.rates, [2.0, 0.25]))
        self.assertTrue(np.allclose(rate.normalized, [8 / 9, 1 / 9]))

    def test_constant_p_matches_dirmulti(self):
        rng = np.random.default_rng(0)
        r = rng.gamma(1.0, size=(3, 6))
        observed = rng.poisson(2.0, size=(3, 6))
        nb = predictive_rate("nbvae", {"r": r, "p": np.full((3, 1), 0.37)}, observed)
        dm = predictive_rate("nbvae_dm", {"r": r}, observed)
        self.assertLess(np.abs(nb.normalized - dm.normalized).max(), 1e-12)

    def test_multivae_is_softmax(self):
        params = LikelihoodParams(logits=None)
        self.assertRaises(ContractError, predictive_rate, "multivae", params, [0, 0])
        rate = predictive_rate("multivae", {"logits": [[0.0, np.log(3.0)]]}, [[5, 5]])
        self.assertTrue(np.allclose(rate.normalized, [[0.25, 0.75]]))

    def test_diagnostic_rates(self):
        phi = np.array([[0.5, 0.1], [0.5, 0.9]])
        theta = np.array([2.0, 1.0])
        pfa = predictive_rate("pfa", {"phi": phi, "theta": theta}, [0.0, 0.0])
        self.assertTrue(np.allclose(pfa.rates, [1.1, 1.9]))
        lda = predictive_rate("lda", {"phi": phi, "theta": theta}, [0.0, 0.0])
        self.assertTrue(np.allclose(lda.rates, [1.1 / 3, 1.9 / 3]))
        nbfa = predictive_rate(
            "nbfa", {"phi": phi, "theta": theta, "p": 0.5}, [1.0, 0.0]
        )
        self.assertTrue(np.allclose(nbfa.rates, [1.05, 0.95]))

    def test_diagnostic_rates_per_row(self):
        phi = np.array([[0.5, 0.1], [0.5, 0.9]])
        theta = np.array([[2.0, 1.0], [1.0, 1.0]])
        lda = predictive_rate("lda", {"phi": phi, "theta": theta}, np.zeros((2, 2)))
        self.assertTrue(np.allclose(lda.normalized.sum(axis=1), 1.0))
        self.assertTrue(np.allclose(lda.rates[0], [1.1 / 3, 1.9 / 3]))

    def test_binary_variants_have_no_rate(self):
        self.assertRaises(
            ContractError, predictive_rate, "nbvae_b", {"r": [1.0]}, [0.0]
        )


class TestRankMetrics(TestCase):
    def test_perfect_ranking(self):
        scores = np.array([0.9, 0.1, 0.8, 0.2])
        recall, ndcg = rank_metrics(scores, [1, 0, 1, 0], [0, 0, 0, 0], (2,))
        self.assertEqual(recall[2], 1.0)
        self.assertAlmostEqual(ndcg[2], 1.0)

    def test_no_hits(self):
        scores = np.array([0.1, 0.9, 0.8])
        recall, ndcg = rank_metrics(scores, [1, 0, 0], [0, 0, 0], (2,))
        self.assertEqual(recall[2], 0.0)
        self.assertEqual(ndcg[2], 0.0)

    def test_worked_example(self):
        scores = np.array([0.3, 0.6, 0.9, 0.1, 0.5])
        # Ranking: 2, 1, 4, 0, 3
        heldout = [0, 0, 1, 0, 1]
        recall, ndcg = rank_metrics(scores, heldout, [0] * 5, (3,))
        self.assertEqual(recall[3], 1.0)
        expected = (1 + 1 / np.log2(4)) / (1 + 1 / np.log2(3))
        self.assertAlmostEqual(ndcg[3], expected)
        self.assertAlmostEqual(ndcg[3], 0.9197, places=4)

    def test_excluded_items_are_not_ranked(self):
        scores = np.array([0.9, 0.5, 0.4])
        recall, _ = rank_metrics(scores, [0, 1, 0], [1, 0, 0], (1,))
        self.assertEqual(recall[1], 1.0)

    def test_recall_denominator(self):
        scores = np.array([0.9, 0.8, 0.7, 0.6])
        recall, _ = rank_metrics(scores, [1, 1, 1, 0], [0, 0, 0, 0], (1, 4))
        self.assertEqual(recall[1], 1.0)
        self.assertEqual(recall[4], 1.0)

    def test_ties_rank_lower_index_first(self):
        recall, _ = rank_metrics(np.zeros(3), [0, 1, 0], [0, 0, 0], (1,))
        self.assertEqual(recall[1], 0.0)
        recall, _ = rank_metrics(np.zeros(3), [1, 0, 0], [0, 0, 0], (1,))
        self.assertEqual(recall[1], 1.0)

    def test_empty_heldout(self):
        self.assertIsNone(rank_metrics([0.1, 0.2], [0, 0], [1, 0], (1,)))

    def test_overlap_rejected(self):
        self.assertRaises(ContractError, rank_metrics, [0.1, 0.2], [1, 0], [1, 0], (1,))


class TestPrecision(TestCase):
    def test_examples(self):
        self.assertEqual(precision_at_R([0.9, 0.1, 0.2], [1, 0, 0], (1,))[1], 1.0)
        scores = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4]
        labels = [1, 0, 0, 1, 0, 1]
        self.assertEqual(precision_at_R(scores, labels, (5,))[5], 0.4)

    def test_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            scores = rng.random(12)
            labels = rng.random(12) < 0.3
            result = precision_at_R(scores, labels, (1, 3, 5))
            ranked = sorted(range(12), key=lambda v: -scores[v])
            for R in (1, 3, 5):
                self.assertEqual(result[R], sum(labels[v] for v in ranked[:R]) / R)


class TestPerplexity(TestCase):
    def test_from_rates(self):
        normalized = np.array([[0.5, 0.25, 0.25], [0.1, 0.2, 0.7]])
        heldout = np.array([[2, 0, 1], [0, 0, 0]])
        loglik, tokens, skipped = perplexity_from_rates(normalized, heldout)
        self.assertAlmostEqual(loglik, 2 * np.log(0.5) + np.log(0.25), places=10)
        self.assertEqual(tokens, 3)
        self.assertEqual(skipped, 1)

    def test_uniform_model_scores_vocabulary_size(self):
        rng = np.random.default_rng(1)
        test = SparseCountMatrix.from_dense(rng.poisson(3.0, size=(30, 7)))
        model = zero_head_model("multivae", 7)
        self.assertAlmostEqual(perplexity(model, test, 0.3, seed=2), 7.0, places=9)

    def test_no_heldout_tokens(self):
        test = SparseCountMatrix.from_dense(np.zeros((3, 4), dtype=int))
        model = zero_head_model("nbvae", 4)
        self.assertRaises(EvaluationError, perplexity, model, test, 0.2, 0)

    def test_thread_count_does_not_change_result(self):
        rng = np.random.default_rng(2)
        dataset = Dataset(SparseCountMatrix.from_dense(rng.poisson(1.0, (600, 9))))
        model = Model(ModelConfig("nbvae", 9, 2, encoder_layers=(4,), seed=3))
        serial = evaluate_perplexity(model, dataset, 0.2, 5, threads=1)
        threaded = evaluate_perplexity(model, dataset, 0.2, 5, threads=4)
        self.assertEqual(serial.metrics, threaded.metrics)
        self.assertEqual(serial.as_dict(), threaded.as_dict())


class TestScoring(TestCase):
    def test_score_labels_zero_heads(self):
        model = zero_head_model("nbvae_c", 5, feature_dim=3)
        scores = score_labels(model, np.array([[1.0, -2.0, 0.5]]))
        self.assertTrue(np.allclose(scores, 0.5))
        self.assertRaises(ContractError, score_labels, zero_head_model("nbvae", 5), [0])

    def test_score_labels_deterministic(self):
        model = Model(ModelConfig("nbvae_c", 5, 2, encoder_layers=(3,), feature_dim=3))
        x = np.array([[0.2, 0.4, -1.0]])
        self.assertTrue(np.array_equal(score_labels(model, x), score_labels(model, x)))

    def test_link_score_rises_with_r(self):
        from nbvae.distributions import bernoulli_link_probability

        for r in (0.1, 1.0, 5.0):
            for p in (0.05, 0.5, 0.95):
                self.assertGreater(
                    bernoulli_link_probability(2 * r, p),
                    bernoulli_link_probability(r, p),
                )

    def test_score_items(self):
        model = zero_head_model("nbvae_b", 4)
        scores = score_items(model, np.zeros(4))
        self.assertEqual(scores.shape, (1, 4))
        self.assertTrue(np.allclose(scores, 0.5))
        conditional = zero_head_model("nbvae_c", 4, feature_dim=2)
        self.assertRaises(ContractError, score_items, conditional, np.zeros(4))

    def test_ablation_scores_every_row_alike(self):
        model = Model(ModelConfig("nbvae_b", 4, 2, encoder_layers=(3,)))
        scores = score_labels_without_features(model, 3)
        self.assertEqual(scores.shape, (3, 4))
        self.assertTrue(np.array_equal(scores[0], scores[2]))


class TestDrivers(TestCase):
    def test_fold_in(self):
        matrix = latent_factor_binary(n_users=80, n_items=30, rank=3, seed=0)
        model = Model(ModelConfig("multivae", 30, 2, encoder_layers=(8,)))
        report = evaluate_fold_in(model, matrix, (5, 10), 0.3, seed=1)
        self.assertEqual(
            list(report.metrics), ["recall@5", "recall@10", "ndcg@5", "ndcg@10"]
        )
        for value in report.metrics.values():
            self.assertTrue(0 <= value <= 1)
        self.assertEqual(report.R_values, (5, 10))
        self.assertEqual(report.n_rows, 80)

    def test_multilabel(self):
        rng = np.random.default_rng(0)
        labels = BinaryMatrix.from_dense(rng.random((10, 6)) < 0.3)
        features = FeatureMatrix.from_dense(rng.normal(size=(10, 3)))
        dataset = Dataset(labels, features, "multilabel")
        model = Model(ModelConfig("nbvae_c", 6, 2, encoder_layers=(4,), feature_dim=3))
        report = evaluate_multilabel(model, dataset, (1, 3))
        self.assertEqual(list(report.metrics), ["precision@1", "precision@3"])

    def test_evaluate_keeps_requested_order(self):
        rng = np.random.default_rng(4)
        dataset = Dataset(SparseCountMatrix.from_dense(rng.poisson(2.0, (20, 6))))
        model = Model(ModelConfig("nbvae", 6, 2, encoder_layers=(4,)))
        report = evaluate(model, dataset, ["ndcg@3", "perplexity", "elbo", "recall@2"])
        self.assertEqual(
            list(report.metrics), ["ndcg@3", "perplexity", "elbo", "recall@2"]
        )
        again = evaluate(model, dataset, ["ndcg@3", "perplexity", "elbo", "recall@2"])
        self.assertEqual(report.as_dict(), again.as_dict())

    def test_parse_metric(self):
        self.assertEqual(parse_metric("ndcg@100"), ("ndcg", 100))
        self.assertEqual(parse_metric("elbo"), ("elbo", None))
        for name in ("ndcg@0", "map@10", "recall"):
            self.assertRaises(ConfigurationError, parse_metric, name)

    def test_report_rejects_non_finite(self):
        self.assertRaises(EvaluationError, EvalReport, {"perplexity": float("inf")})

    def test_report_excludes_wall_clock(self):
        report = EvalReport({"elbo": -3.0}, wall_clock=12.5)
        self.assertNotIn("wall_clock", report.as_dict())
