"""Selection strategies versus brute-force and exhaustive-sort oracles."""

import itertools

import numpy as np
import pytest

from mextract import models as mm
from mextract import samplers as sp
from mextract.clustering import kmeans
from mextract.data import PoolView
from mextract.mathcore import entropy_rows


def linear_model(weights, biases=None, d=None, k=None):
    w = np.asarray(weights, dtype=np.float64)
    spec = mm.ModelSpec("softmax-regression", w.shape[0], w.shape[1])
    m = mm.init_model(spec, 0)
    m.weights[0][...] = w
    m.biases[0][...] = 0.0 if biases is None else np.asarray(biases)
    return m


def view_of(features):
    features = np.asarray(features, dtype=np.float64)
    return PoolView(indices=np.arange(features.shape[0]), features=features)


def rand_setup(rng, n, d=3, k=3):
    spec = mm.ModelSpec("softmax-regression", d, k)
    model = mm.init_model(spec, int(rng.integers(2**31)))
    feats = rng.normal(size=(n, d))
    return model, view_of(feats)


class TestEntropySampling:
    def test_picks_highest_entropy(self):
        # |x| orders confidence for a 1-D two-class linear model
        model = linear_model([[1.0, 0.0]])
        view = view_of([[3.0], [0.2], [1.0]])
        sel = sp.entropy_sampling(model, view, 1)
        assert list(sel.indices) == [1]

    def test_budget_covers_pool(self):
        model = linear_model([[1.0, 0.0]])
        view = view_of([[3.0], [0.2], [1.0]])
        sel = sp.entropy_sampling(model, view, 10)
        assert set(sel.indices) == {0, 1, 2}

    def test_ties_take_lower_index(self):
        model = linear_model([[1.0, 0.0]])
        # entropies: H(3) < H(1) == H(-1) > H(4); the pair {1, 2} ties
        view = view_of([[3.0], [-1.0], [1.0], [4.0]])
        sel = sp.entropy_sampling(model, view, 2)
        assert list(sel.indices) == [1, 2]
        assert sel.scores[0] == pytest.approx(sel.scores[1])

    def test_matches_exhaustive_sort(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            model, view = rand_setup(rng, 50)
            ent = entropy_rows(mm.forward_batch(model, view.features))
            oracle = sorted(range(50), key=lambda i: (-ent[i], i))[:7]
            sel = sp.entropy_sampling(model, view, 7)
            assert list(sel.indices) == oracle

    def test_empty_view_gives_empty_selection(self):
        model = linear_model([[1.0, 0.0]])
        sel = sp.entropy_sampling(model, PoolView(np.empty(0, dtype=np.int64), np.empty((0, 1))), 3)
        assert len(sel) == 0


def gradient_objective(grads, centers, subset):
    return sum(((grads[i] - centers) ** 2).sum() for i in subset)


class TestEntropyGradientSampling:
    def brute_force_best(self, model, view, budget, k, seed):
        grads = mm.input_entropy_gradients(model, view.features)
        centers = kmeans(grads, min(k, len(view)), seed=seed).centers
        best = min(
            itertools.combinations(range(len(view)), budget),
            key=lambda s: gradient_objective(grads, centers, s),
        )
        return gradient_objective(grads, centers, best)

    def test_identity_when_budget_covers_candidates(self):
        rng = np.random.default_rng(1)
        model, view = rand_setup(rng, 6)
        cand = sp.entropy_sampling(model, view, 6)
        sel = sp.entropy_gradient_sampling(model, cand, view.features[cand.indices], 6, 3, seed=0)
        assert set(sel.indices) == set(cand.indices)

    def test_attains_brute_force_minimum(self):
        rng = np.random.default_rng(2)
        for trial in range(15):
            n = int(rng.integers(5, 13))
            budget = int(rng.integers(1, n))
            k = int(rng.integers(2, 5))
            model, view = rand_setup(rng, n)
            cand = sp.entropy_sampling(model, view, n)
            feats = view.features[cand.indices]
            sel = sp.entropy_gradient_sampling(model, cand, feats, budget, k, seed=trial)
            grads = mm.input_entropy_gradients(model, feats)
            centers = kmeans(grads, min(k, n), seed=trial).centers
            pos = {int(i): j for j, i in enumerate(cand.indices)}
            achieved = gradient_objective(grads, centers, [pos[int(i)] for i in sel.indices])
            best = self.brute_force_best(model, PoolView(cand.indices, feats), budget, k, trial)
            assert achieved == pytest.approx(best, rel=1e-9)

    def test_three_point_line(self):
        model = linear_model([[1.0, 0.0]])
        view = view_of([[-2.0], [0.0], [2.0]])
        cand = sp.entropy_sampling(model, view, 3)
        feats = view.features[cand.indices]
        sel = sp.entropy_gradient_sampling(model, cand, feats, 1, 2, seed=0)
        grads = mm.input_entropy_gradients(model, feats)
        centers = kmeans(grads, 2, seed=0).centers
        scores = [gradient_objective(grads, centers, [i]) for i in range(3)]
        expected_pos = int(np.argmin(scores))
        assert sel.indices[0] == cand.indices[expected_pos]

    def test_identical_gradients_tie_break(self):
        # constant-uniform model: all gradients zero, scores identical
        model = linear_model(np.zeros((2, 3)))
        view = view_of(np.random.default_rng(3).normal(size=(5, 2)))
        cand = sp.entropy_sampling(model, view, 5)
        sel = sp.entropy_gradient_sampling(model, cand, view.features[cand.indices], 2, 3, seed=0)
        assert list(sel.indices) == [0, 1]

    def test_stratified_variant_deterministic_and_sized(self):
        rng = np.random.default_rng(4)
        model, view = rand_setup(rng, 30)
        cand = sp.entropy_sampling(model, view, 30)
        feats = view.features[cand.indices]
        a = sp.entropy_gradient_sampling(model, cand, feats, 10, 3, seed=5, stratified=True)
        b = sp.entropy_gradient_sampling(model, cand, feats, 10, 3, seed=5, stratified=True)
        assert list(a.indices) == list(b.indices)
        assert len(a) == 10
        assert len(np.unique(a.indices)) == 10


class TestLossSampling:
    def test_line_anchor_enumeration(self):
        model = linear_model([[1.0, 0.0]])
        view = view_of([[0.0], [1.0], [10.0]])
        cand = sp.entropy_sampling(model, view, 3)
        feats = view.features[cand.indices]
        sel = sp.loss_sampling(
            model, cand, feats, np.array([[0.0]]), np.array([0]), budget=2, k_classes=2
        )
        assert set(sel.indices) == {0, 1}

    def test_budget_covers_candidates(self):
        rng = np.random.default_rng(5)
        model, view = rand_setup(rng, 6)
        cand = sp.entropy_sampling(model, view, 6)
        feats = view.features[cand.indices]
        sel = sp.loss_sampling(model, cand, feats, rng.normal(size=(4, 3)),
                               rng.integers(0, 3, 4), budget=6, k_classes=3)
        assert set(sel.indices) == set(cand.indices)

    def test_empty_history_falls_back_to_first_candidates(self):
        rng = np.random.default_rng(6)
        model, view = rand_setup(rng, 5)
        cand = sp.entropy_sampling(model, view, 5)
        feats = view.features[cand.indices]
        sel = sp.loss_sampling(model, cand, feats, np.empty((0, 3)), np.empty(0, dtype=int),
                               budget=3, k_classes=3)
        assert list(sel.indices) == list(cand.indices[:3])

    def test_perfect_fit_ties_resolve_by_index(self):
        # extreme weights give ~zero loss on the history it predicts
        model = linear_model([[80.0, -80.0]])
        q_train = np.array([[1.0], [2.0], [3.0]])
        y_train = np.array([0, 0, 0])
        view = view_of([[0.5], [2.5], [9.0]])
        cand = sp.entropy_sampling(model, view, 3)
        feats = view.features[cand.indices]
        a = sp.loss_sampling(model, cand, feats, q_train, y_train, budget=2, k_classes=2)
        b = sp.loss_sampling(model, cand, feats, q_train, y_train, budget=2, k_classes=2)
        assert list(a.indices) == list(b.indices)
        # losses all ~0 -> anchors are history points 0 and 1 (ties, lowest first)
        d2 = ((feats[:, None, :] - q_train[:2][None, :, :]) ** 2).sum(axis=2).min(axis=1)
        expect = [int(i) for i in cand.indices[np.lexsort((cand.indices, d2))][:2]]
        assert list(a.indices) == expect

    def test_summed_scoring_mode(self):
        model = linear_model([[1.0, 0.0]])
        view = view_of([[0.0], [4.0], [6.0]])
        cand = sp.entropy_sampling(model, view, 3)
        feats = view.features[cand.indices]
        q_train = np.array([[0.0], [6.0]])
        y_train = np.array([0, 1])
        m = sp.loss_sampling(model, cand, feats, q_train, y_train, 1, 2, scoring="min-distance")
        s = sp.loss_sampling(model, cand, feats, q_train, y_train, 1, 2, scoring="summed")
        # min-distance favors an endpoint; the summed form favors the middle
        assert set(m.indices) <= {0, 2}
        assert list(s.indices) == [1]

    def test_rejects_unknown_scoring(self):
        model = linear_model([[1.0, 0.0]])
        view = view_of([[0.0]])
        cand = sp.entropy_sampling(model, view, 1)
        with pytest.raises(ValueError):
            sp.loss_sampling(model, cand, view.features, np.array([[0.0]]), np.array([0]),
                             1, 2, scoring="nope")


class TestRandomSampling:
    def test_full_budget_is_permutation(self):
        view = view_of(np.arange(8, dtype=float).reshape(8, 1))
        sel = sp.random_sampling(view, 8, seed=0)
        assert sorted(sel.indices) == list(range(8))

    def test_seed_determinism(self):
        view = view_of(np.arange(20, dtype=float).reshape(20, 1))
        a = sp.random_sampling(view, 5, seed=3)
        b = sp.random_sampling(view, 5, seed=3)
        assert list(a.indices) == list(b.indices)

    def test_monte_carlo_uniformity(self):
        view = view_of(np.arange(4, dtype=float).reshape(4, 1))
        counts = np.zeros(4)
        trials = 10000
        for s in range(trials):
            counts[sp.random_sampling(view, 1, seed=s).indices[0]] += 1
        freq = counts / trials
        sigma = np.sqrt(0.25 * 0.75 / trials)
        assert np.all(np.abs(freq - 0.25) <= 3 * sigma)


class TestLeastConfidenceAndMargin:
    def test_least_confidence_picks_lowest_max_prob(self):
        model = linear_model([[1.0, 0.0]])
        view = view_of([[3.0], [0.1], [1.0]])
        sel = sp.least_confidence_sampling(model, view, 1)
        assert list(sel.indices) == [1]

    def test_uniform_point_wins(self):
        model = linear_model([[1.0, 0.0]])
        view = view_of([[5.0], [0.0], [7.0]])
        sel = sp.least_confidence_sampling(model, view, 1)
        assert list(sel.indices) == [1]

    def test_margin_picks_smallest_gap(self):
        model = linear_model([[1.0, 0.0]])
        view = view_of([[2.0], [0.05], [0.8]])
        sel = sp.margin_sampling(model, view, 1)
        assert list(sel.indices) == [1]

    def test_binary_margin_equals_least_confidence_ordering(self):
        rng = np.random.default_rng(7)
        model, view = rand_setup(rng, 40, d=3, k=2)
        lc = sp.least_confidence_sampling(model, view, 40)
        ms = sp.margin_sampling(model, view, 40)
        assert list(lc.indices) == list(ms.indices)

    def test_both_match_exhaustive_sort(self):
        rng = np.random.default_rng(8)
        model, view = rand_setup(rng, 50, d=4, k=5)
        probs = mm.forward_batch(model, view.features)
        u = 1.0 - probs.max(axis=1)
        lc_oracle = sorted(range(50), key=lambda i: (-u[i], i))[:9]
        assert list(sp.least_confidence_sampling(model, view, 9).indices) == lc_oracle
        part = np.sort(probs, axis=1)
        margin = part[:, -1] - part[:, -2]
        ms_oracle = sorted(range(50), key=lambda i: (margin[i], i))[:9]
        assert list(sp.margin_sampling(model, view, 9).indices) == ms_oracle


class TestKCenter:
    def test_farthest_first_from_seed(self):
        model = linear_model([[1.0, 0.0]])
        view = view_of([[0.0], [1.0], [100.0]])
        sel = sp.kcenter_sampling(model, view, np.array([[0.0]]), 1)
        assert list(sel.indices) == [2]

    def test_full_budget_farthest_first_order(self):
        model = linear_model([[1.0, 0.0]])
        view = view_of([[0.0], [1.0], [10.0], [4.0]])
        sel = sp.kcenter_sampling(model, view, None, 4)
        assert list(sel.indices) == [0, 2, 3, 1]

    def test_embedding_uses_hidden_layer_for_mlp(self):
        rng = np.random.default_rng(9)
        spec = mm.ModelSpec("mlp", 4, 3, hidden_sizes=(6,), activation="tanh")
        model = mm.init_model(spec, 1)
        X = rng.normal(size=(5, 4))
        emb = sp.embed(model, X)
        assert emb.shape == (5, 6)
        lin = mm.init_model(mm.ModelSpec("softmax-regression", 4, 3), 1)
        assert sp.embed(lin, X).shape == (5, 4)

    def test_greedy_within_factor_two_of_optimum(self):
        model = linear_model([[1.0, 0.0]])
        pts = np.array([[0.0], [1.3], [2.9], [7.0], [8.2], [12.0]])
        view = view_of(pts)
        m = 3
        sel = sp.kcenter_sampling(model, view, None, m)

        def covering_radius(centers):
            d = np.abs(pts - pts[list(centers)].T).min(axis=1)
            return d.max()

        greedy_radius = covering_radius([int(i) for i in sel.indices])
        best = min(covering_radius(c) for c in itertools.combinations(range(6), m))
        assert greedy_radius <= 2.0 * best + 1e-12


def test_no_sampler_returns_duplicates():
    rng = np.random.default_rng(10)
    model, view = rand_setup(rng, 25)
    cand = sp.entropy_sampling(model, view, 20)
    feats = view.features[cand.indices]
    selections = [
        cand,
        sp.entropy_gradient_sampling(model, cand, feats, 10, 3, seed=0),
        sp.loss_sampling(model, cand, feats, rng.normal(size=(5, 3)),
                         rng.integers(0, 3, 5), 10, 3),
        sp.random_sampling(view, 10, seed=0),
        sp.least_confidence_sampling(model, view, 10),
        sp.margin_sampling(model, view, 10),
        sp.kcenter_sampling(model, view, None, 10),
    ]
    for sel in selections:
        assert len(np.unique(sel.indices)) == len(sel.indices)
