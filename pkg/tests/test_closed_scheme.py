"""Closed scheme: rank matching, shift magnitudes, validity, zero bias."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokenmark.closed_scheme import (
    closed_step,
    epsilons_for,
    rank_match,
    sample_closed_batch,
    watermark_distribution,
    watermark_distributions,
)
from tokenmark.errors import InvalidInputError
from tokenmark.keystream import CLOSED, WatermarkKey, derive_closed_steps

P4 = np.array([0.4, 0.3, 0.2, 0.1])
COLORING4 = np.array([1, -1, 1, -1])


def random_balanced_coloring(rng, d):
    coloring = np.array([1] * (d // 2) + [-1] * (d // 2), dtype=np.int8)
    rng.shuffle(coloring)
    return coloring


def random_probs(rng, d):
    return rng.dirichlet(np.full(d, 0.5))


class TestRankMatch:
    def test_worked_example(self):
        # Ranks: token 0 (0.4, +) pairs with token 1 (0.3, -), token 2
        # (0.2, +) with token 3 (0.1, -). Shift magnitudes are the pair
        # minima.
        ranking = rank_match(P4, COLORING4)
        np.testing.assert_array_equal(ranking.pos, [0, 2])
        np.testing.assert_array_equal(ranking.neg, [1, 3])
        np.testing.assert_allclose(ranking.epsilon, [0.3, 0.3, 0.1, 0.1], atol=0)

    def test_ties_break_by_ascending_index(self):
        p = np.full(4, 0.25)
        ranking = rank_match(p, np.array([1, 1, -1, -1]))
        np.testing.assert_array_equal(ranking.pos, [0, 1])
        np.testing.assert_array_equal(ranking.neg, [2, 3])

    def test_pairing_is_a_perfect_matching(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            d = int(rng.choice([4, 8, 12, 20]))
            p = random_probs(rng, d)
            coloring = random_balanced_coloring(rng, d)
            ranking = rank_match(p, coloring)
            assert sorted(ranking.pos.tolist() + ranking.neg.tolist()) == list(range(d))
            # Pairs are rank-aligned: pos[i] is the i-th largest + token.
            assert np.all(np.diff(p[ranking.pos]) <= 0)
            assert np.all(np.diff(p[ranking.neg]) <= 0)

    def test_epsilon_is_pair_minimum(self):
        rng = np.random.default_rng(1)
        p = random_probs(rng, 8)
        coloring = random_balanced_coloring(rng, 8)
        ranking = rank_match(p, coloring)
        for a, b in zip(ranking.pos, ranking.neg):
            expected = min(p[a], p[b])
            assert ranking.epsilon[a] == expected
            assert ranking.epsilon[b] == expected

    def test_rejects_unbalanced_coloring(self):
        with pytest.raises(InvalidInputError):
            rank_match(P4, np.array([1, 1, 1, -1]))

    def test_rejects_non_sign_values(self):
        with pytest.raises(InvalidInputError):
            rank_match(P4, np.array([1, 0, -1, 0]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            rank_match(P4, np.array([1, -1]))


class TestWatermarkDistribution:
    def test_worked_example_both_flips(self):
        plus = watermark_distribution(P4, COLORING4, 1)
        minus = watermark_distribution(P4, COLORING4, -1)
        np.testing.assert_allclose(plus, [0.7, 0.0, 0.3, 0.0], atol=0)
        np.testing.assert_allclose(minus, [0.1, 0.6, 0.1, 0.2], atol=0)

    def test_two_flips_average_back_to_p(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            p = random_probs(rng, 6)
            coloring = random_balanced_coloring(rng, 6)
            plus = watermark_distribution(p, coloring, 1)
            minus = watermark_distribution(p, coloring, -1)
            np.testing.assert_allclose((plus + minus) / 2, p, atol=1e-15)

    def test_validity_is_floating_point_exact(self):
        # q >= 0 holds exactly, not just within tolerance: each entry is
        # either p + eps or fl(p - eps) with eps <= p.
        rng = np.random.default_rng(3)
        for _ in range(300):
            d = int(rng.choice([2, 4, 8, 16, 32]))
            p = random_probs(rng, d)
            coloring = random_balanced_coloring(rng, d)
            flip = int(rng.choice([-1, 1]))
            q = watermark_distribution(p, coloring, flip)
            assert q.min() >= 0.0
            assert abs(q.sum() - 1.0) <= 1e-12

    def test_uniform_p_moves_everything(self):
        # Uniform probabilities pair equal masses: boosted tokens double,
        # suppressed tokens empty out.
        d = 8
        q = watermark_distribution(np.full(d, 1 / d), np.array([1, -1] * 4), 1)
        boosted = q[0::2]
        np.testing.assert_allclose(boosted, 2 / d, atol=0)
        np.testing.assert_allclose(q[1::2], 0.0, atol=0)

    def test_point_mass_is_inert(self):
        p = np.array([1.0, 0.0, 0.0, 0.0])
        for flip in (1, -1):
            q = watermark_distribution(p, COLORING4, flip)
            np.testing.assert_array_equal(q, p)

    def test_rejects_bad_flip(self):
        with pytest.raises(InvalidInputError):
            watermark_distribution(P4, COLORING4, 0)

    @given(st.integers(0, 2**32 - 1), st.sampled_from([4, 6, 10]))
    @settings(max_examples=150, deadline=None)
    def test_mass_conservation_property(self, seed, d):
        rng = np.random.default_rng(seed)
        p = random_probs(rng, d)
        coloring = random_balanced_coloring(rng, d)
        q = watermark_distribution(p, coloring, int(rng.choice([-1, 1])))
        assert q.min() >= 0.0
        assert abs(q.sum() - p.sum()) <= 1e-14


class TestBatchPaths:
    def test_epsilons_match_single_step(self):
        rng = np.random.default_rng(4)
        for d in (4, 8, 18, 32):
            n = 40
            probs = np.vstack([random_probs(rng, d) for _ in range(n)])
            colorings = np.vstack([random_balanced_coloring(rng, d) for _ in range(n)])
            batch = epsilons_for(probs, colorings)
            for i in range(n):
                single = rank_match(probs[i], colorings[i]).epsilon
                np.testing.assert_array_equal(batch[i], single)

    def test_shared_distribution_broadcast(self):
        rng = np.random.default_rng(5)
        p = random_probs(rng, 8)
        colorings = np.vstack([random_balanced_coloring(rng, 8) for _ in range(10)])
        batch = epsilons_for(p, colorings)
        loop = epsilons_for(np.tile(p, (10, 1)), colorings)
        np.testing.assert_array_equal(batch, loop)

    def test_distributions_match_single_step(self):
        rng = np.random.default_rng(6)
        p = random_probs(rng, 8)
        colorings = np.vstack([random_balanced_coloring(rng, 8) for _ in range(12)])
        flips = rng.choice([-1, 1], size=12)
        batch = watermark_distributions(p, colorings, flips)
        for i in range(12):
            single = watermark_distribution(p, colorings[i], int(flips[i]))
            np.testing.assert_array_equal(batch[i], single)

    def test_rejects_bad_shapes(self):
        with pytest.raises(InvalidInputError):
            epsilons_for(P4, COLORING4)  # colorings must be 2-d
        with pytest.raises(InvalidInputError):
            epsilons_for(np.ones((3, 4)) / 4, np.tile(COLORING4, (2, 1)))


class TestKeyedSampling:
    KEY = WatermarkKey(master_seed=bytes(32), d=4, scheme=CLOSED)

    def test_deterministic_given_stream(self):
        a = [closed_step(self.KEY, j, P4, np.random.default_rng(9)) for j in range(6)]
        b = [closed_step(self.KEY, j, P4, np.random.default_rng(9)) for j in range(6)]
        assert a == b

    def test_suppressed_tokens_never_sampled(self):
        # Under a uniform source every step empties half the dictionary, so
        # each sampled token must have positive watermarked probability.
        key = WatermarkKey(master_seed=bytes(32), d=8, scheme=CLOSED)
        p = np.full(8, 1 / 8)
        rng = np.random.default_rng(10)
        n = 600
        tokens = sample_closed_batch(key, p, rng, n)
        batch = derive_closed_steps(key, n)
        q = watermark_distributions(p, batch.colorings, batch.flips)
        assert np.all(q[np.arange(n), tokens] > 0)

    def test_batch_agrees_with_stepwise_distributions(self):
        key = WatermarkKey(master_seed=bytes(32), d=6, scheme=CLOSED)
        p = np.array([0.3, 0.25, 0.2, 0.15, 0.07, 0.03])
        n = 4000
        tokens = sample_closed_batch(key, p, np.random.default_rng(11), n)
        batch = derive_closed_steps(key, n)
        q = watermark_distributions(p, batch.colorings, batch.flips)
        # Pooled frequencies should match the average watermarked law.
        freq = np.bincount(tokens, minlength=6) / n
        np.testing.assert_allclose(freq, q.mean(axis=0), atol=0.03)

    def test_single_step_bias_cancels_over_key_material(self):
        # Averaging the watermarked law over many steps' secret pairs
        # recovers p: the sample-level undetectability seen from outside.
        key = WatermarkKey(master_seed=bytes(32), d=6, scheme=CLOSED)
        p = np.array([0.35, 0.2, 0.18, 0.12, 0.1, 0.05])
        batch = derive_closed_steps(key, 4000)
        q = watermark_distributions(p, batch.colorings, batch.flips)
        np.testing.assert_allclose(q.mean(axis=0), p, atol=0.02)

    def test_wrong_dictionary_size_rejected(self):
        with pytest.raises(InvalidInputError):
            closed_step(self.KEY, 0, np.full(6, 1 / 6), np.random.default_rng(0))
