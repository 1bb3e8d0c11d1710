"Tests for the training objective"
import itertools
import math

import numpy as np
import pytest  # type: ignore

from ouiqa import (
    LossInputError,
    LossSettings,
    ablation_settings,
    align_loss,
    build_pair_of_pairs,
    build_pairs,
    cov_loss,
    edist_loss,
    embdist_loss,
    forward,
    lambda_emb_schedule,
    margin_ranking_loss,
    mreg_loss,
    pairwise_ranknet_loss,
    random_check_problem,
    ranking_loss,
    ranknet_loss,
    total_loss,
)

# pylint: disable=invalid-name


###############################################################################
# Independent enumerations used as oracles
###############################################################################
def softplus(x):
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def bce(logit, target):
    return target * softplus(-logit) + (1 - target) * softplus(logit)


def brute_pairs(values, threshold):
    return [
        (i, j)
        for i in range(len(values))
        for j in range(i + 1, len(values))
        if abs(values[i] - values[j]) > threshold
    ]


def brute_pair_of_pairs_loss(values, threshold, logit, first_wins):
    """Mean of BCE(logit(a), y) + BCE(logit(b), 1-y) over every combo of two
    valid pairs with distinct gaps"""
    pairs = brute_pairs(values, threshold)
    total, count = 0.0, 0
    for a, b in itertools.combinations(pairs, 2):
        gap_a = abs(values[a[0]] - values[a[1]])
        gap_b = abs(values[b[0]] - values[b[1]])
        if gap_a == gap_b:
            continue
        y = 1.0 if first_wins(gap_a, gap_b) else 0.0
        total += bce(logit(*a), y) + bce(logit(*b), 1.0 - y)
        count += 1
    return total / (2 * count) if count else 0.0


def brute_ranknet(q, d, t_d):
    return brute_pair_of_pairs_loss(d, t_d, lambda i, j: abs(q[i] - q[j]), lambda a, b: a > b)


def brute_mreg(q, d):
    n = len(q)
    terms = [
        softplus((q[i] - q[j]) * (d[i] - d[j])) for i in range(n) for j in range(n) if i != j
    ]
    return sum(terms) / len(terms)


def brute_edist(emb, q, t_q, tau):
    def logit(i, j):
        return math.exp(float(np.dot(emb[i], emb[j])) / tau)

    return brute_pair_of_pairs_loss(q, t_q, logit, lambda a, b: a < b)


def brute_cov(emb):
    n, width = emb.shape
    total = 0.0
    for a in range(width):
        for b in range(width):
            if a == b:
                continue
            ca = [emb[k, a] - sum(emb[:, a]) / n for k in range(n)]
            cb = [emb[k, b] - sum(emb[:, b]) / n for k in range(n)]
            total += (sum(x * y for x, y in zip(ca, cb)) / (n - 1)) ** 2
    return total / width ** 2


def central_differences(fn, x, epsilon=1e-6):
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[index] += epsilon
        minus[index] -= epsilon
        grad[index] = (fn(plus) - fn(minus)) / (2 * epsilon)
    return grad


def unit_rows(rng, n, width):
    rows = rng.normal(size=(n, width))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


###############################################################################
# Tests
###############################################################################
class TestPairs:
    """Pair sets and pair-of-pairs sets"""

    def test_single_pair(self):
        pairs = build_pairs([0.1, 0.9], 0.1)
        assert pairs.pairs.tolist() == [[0, 1]]
        assert pairs.gaps == pytest.approx([0.8])

    def test_equal_values_give_no_pairs(self):
        assert len(build_pairs([0.4, 0.4, 0.4], 0.1)) == 0

    def test_matches_enumeration(self):
        values = [0.0, 0.05, 0.5, 1.0]
        pairs = build_pairs(values, 0.1)
        assert [tuple(p) for p in pairs.pairs.tolist()] == brute_pairs(values, 0.1)
        assert len(pairs) == 5

    def test_single_value(self):
        assert len(build_pairs([0.3], 0.1)) == 0

    def test_labels_follow_the_gaps(self):
        rng = np.random.default_rng(0)
        d = rng.uniform(size=6)
        pairs = build_pairs(d, 0.1)
        for rule in ("greater", "less"):
            combos = build_pair_of_pairs(pairs, rule)
            for a, b, y in zip(combos.first, combos.second, combos.labels):
                assert a < b
                expected = pairs.gaps[a] > pairs.gaps[b]
                if rule == "less":
                    expected = pairs.gaps[a] < pairs.gaps[b]
                assert y == float(expected)

    def test_equal_gaps_are_skipped(self):
        pairs = build_pairs([0.0, 0.5, 1.0], 0.1)
        combos = build_pair_of_pairs(pairs)
        assert combos.sampled_from == 2
        assert combos.combos(pairs) == [((0, 1), (0, 2), 0), ((0, 2), (1, 2), 1)]

    def test_subsampling(self):
        rng = np.random.default_rng(1)
        pairs = build_pairs(rng.uniform(size=8), 0.0)
        every = build_pair_of_pairs(pairs)
        sampled = build_pair_of_pairs(pairs, combo_cap=10, seed=3)
        again = build_pair_of_pairs(pairs, combo_cap=10, seed=3)
        assert len(sampled) == 10
        assert sampled.sampled_from == len(every)
        assert np.array_equal(sampled.first, again.first)
        assert np.array_equal(sampled.second, again.second)

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            build_pair_of_pairs(build_pairs([0, 1], 0.1), "bigger")


class TestRanking:
    """Pair-of-pairs RankNet, the regularizer and the baselines"""

    def test_equal_scores_give_ln2(self):
        loss, grad = ranknet_loss([0.5, 0.5, 0.5], [0.0, 0.5, 1.0], 0.1)
        assert loss == pytest.approx(math.log(2))
        assert np.all(grad == 0.0)

    def test_single_combo_with_large_gap(self):
        """d gaps 1.0 and 0.7 give one combo with y = 1; score gaps 6 and 0"""
        loss, _ = ranknet_loss([0.0, 6.0, 6.0], [0.0, 1.0, 0.3], 0.65)
        assert loss == pytest.approx((softplus(-6.0) + math.log(2)) / 2)
        assert loss == pytest.approx(0.3478, abs=1e-4)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for n in (4, 5, 6):
            q, d = rng.uniform(size=n), rng.uniform(size=n)
            loss, _ = ranknet_loss(q, d, 0.1, combo_cap=None)
            assert loss == pytest.approx(brute_ranknet(q, d, 0.1), abs=1e-10)

    def test_empty_pairs(self):
        loss, grad = ranknet_loss([0.1, 0.9, 0.3], [0.5, 0.52, 0.55], 0.1)
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_ranknet_gradient(self):
        rng = np.random.default_rng(3)
        q, d = rng.uniform(size=5), rng.uniform(size=5)
        _, grad = ranknet_loss(q, d, 0.1, combo_cap=None)
        numeric = central_differences(lambda x: ranknet_loss(x, d, 0.1, combo_cap=None)[0], q)
        assert grad == pytest.approx(numeric, abs=1e-7)

    def test_mreg_values(self):
        assert mreg_loss([0.3, 0.3, 0.3], [0.0, 0.5, 1.0])[0] == pytest.approx(math.log(2))
        assert mreg_loss([0.0, 1.0], [1.0, 0.0])[0] == pytest.approx(math.log1p(math.exp(-1)))
        assert mreg_loss([0.0, 1.0], [0.0, 1.0])[0] == pytest.approx(math.log1p(math.e))
        assert mreg_loss([0.0, 1.0], [1.0, 0.0])[0] == pytest.approx(0.3133, abs=1e-4)

    def test_mreg_matches_brute_force_and_gradient(self):
        rng = np.random.default_rng(4)
        q, d = rng.normal(size=6), rng.uniform(size=6)
        loss, grad = mreg_loss(q, d)
        assert loss == pytest.approx(brute_mreg(q, d), abs=1e-10)
        assert grad == pytest.approx(central_differences(lambda x: mreg_loss(x, d)[0], q), abs=1e-7)

    def test_mreg_prefers_decreasing_scores(self):
        d = np.array([0.1, 0.4, 0.6, 0.9])
        decreasing = mreg_loss(1.0 - 0.8 * d, d)[0]
        increasing = mreg_loss(0.2 + 0.8 * d, d)[0]
        assert decreasing < increasing

    def test_mreg_needs_two_samples(self):
        with pytest.raises(LossInputError):
            mreg_loss([0.5], [0.5])

    def test_length_mismatch(self):
        with pytest.raises(LossInputError):
            ranknet_loss([0.1, 0.2], [0.1, 0.2, 0.3])

    def test_composite(self):
        rng = np.random.default_rng(5)
        q, d = rng.uniform(size=6), rng.uniform(size=6)
        loss, _ = ranking_loss(q, d, 0.1, 0.1, combo_cap=None)
        expected = brute_ranknet(q, d, 0.1) + 0.1 * brute_mreg(q, d)
        assert loss == pytest.approx(expected, abs=1e-10)
        without_reg, grad = ranking_loss(q, d, 0.1, 0.0, combo_cap=None)
        plain, plain_grad = ranknet_loss(q, d, 0.1, None)
        assert without_reg == plain
        assert np.array_equal(grad, plain_grad)

    def test_composite_without_pairs_is_the_regularizer(self):
        q, d = [0.2, 0.7], [0.5, 0.55]
        loss, grad = ranking_loss(q, d, 0.1, 0.1)
        reg, grad_reg = mreg_loss(q, d)
        assert loss == pytest.approx(0.1 * reg)
        assert grad == pytest.approx(0.1 * grad_reg)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        q, d = rng.uniform(size=6), rng.uniform(size=6)
        order = rng.permutation(6)
        assert ranking_loss(q[order], d[order], combo_cap=None)[0] == pytest.approx(
            ranking_loss(q, d, combo_cap=None)[0], abs=1e-12
        )

    def test_pairwise_baseline(self):
        """One pair, the less distorted sample scored higher by 2"""
        loss, grad = pairwise_ranknet_loss([1.0, -1.0], [0.0, 1.0], 0.1)
        assert loss == pytest.approx(softplus(-2.0))
        assert grad[0] == pytest.approx(-grad[1])
        assert grad[0] < 0

    def test_margin_baseline(self):
        loss, grad = margin_ranking_loss([0.5, 0.45], [0.0, 1.0], 0.1, margin=0.1)
        assert loss == pytest.approx(0.05)
        assert grad.tolist() == [-1.0, 1.0]
        assert margin_ranking_loss([0.9, 0.1], [0.0, 1.0], 0.1)[0] == 0.0

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            ranking_loss([0.1, 0.2], [0.0, 1.0], variant="listwise")


class TestEmbedding:
    """Embedding-distance consistency and the covariance penalty"""

    def test_identical_embeddings(self):
        emb = np.tile([[1.0, 0.0]], (3, 1))
        loss, _, _ = edist_loss(emb, [0.0, 1.0, 0.3], 0.65, 1.0)
        expected = (softplus(-math.e) + softplus(math.e)) / 2
        assert loss == pytest.approx(expected)
        assert loss == pytest.approx(1.4231, abs=1e-4)

    def test_orthogonal_embeddings_ignore_the_temperature(self):
        emb = np.eye(3)
        q = [0.0, 1.0, 0.3]
        one = edist_loss(emb, q, 0.05, 0.5)[0]
        other = edist_loss(emb, q, 0.05, 3.0)[0]
        assert one == pytest.approx(other)
        assert one == pytest.approx((softplus(1.0) + softplus(-1.0)) / 2)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for n in (4, 5):
            emb, q = unit_rows(rng, n, 3), rng.uniform(size=n)
            loss, _, _ = edist_loss(emb, q, 0.05, 0.7, combo_cap=None)
            assert loss == pytest.approx(brute_edist(emb, q, 0.05, 0.7), abs=1e-10)

    def test_gradients(self):
        rng = np.random.default_rng(8)
        emb, q = unit_rows(rng, 5, 3), rng.uniform(size=5)
        _, grad_emb, grad_tau = edist_loss(emb, q, 0.05, 0.8, combo_cap=None)
        numeric = central_differences(lambda x: edist_loss(x, q, 0.05, 0.8, None)[0], emb)
        assert grad_emb == pytest.approx(numeric, abs=1e-7)
        numeric_tau = central_differences(
            lambda t: edist_loss(emb, q, 0.05, float(t[0]), None)[0], [0.8]
        )
        assert grad_tau == pytest.approx(numeric_tau[0], abs=1e-7)

    def test_empty_pairs(self):
        loss, grad_emb, grad_tau = edist_loss(np.eye(2), [0.5, 0.5], 0.05)
        assert (loss, grad_tau) == (0.0, 0.0)
        assert np.all(grad_emb == 0.0)

    def test_cov_orthogonal_columns(self):
        emb = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        assert cov_loss(emb)[0] == 0.0

    def test_cov_single_dimension(self):
        assert cov_loss(np.array([[0.1], [0.5], [0.9]]))[0] == 0.0

    def test_cov_hand_computed(self):
        """Columns centered to (-1, 0, 1) and (-4/3, -1/3, 5/3): covariance 1.5"""
        emb = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 3.0]])
        assert cov_loss(emb)[0] == pytest.approx(2 * 1.5 ** 2 / 4)

    def test_cov_matches_brute_force_and_gradient(self):
        rng = np.random.default_rng(9)
        emb = rng.normal(size=(5, 3))
        loss, grad = cov_loss(emb)
        assert loss == pytest.approx(brute_cov(emb), abs=1e-10)
        assert grad == pytest.approx(central_differences(lambda x: cov_loss(x)[0], emb), abs=1e-7)

    def test_cov_needs_two_samples(self):
        with pytest.raises(LossInputError):
            cov_loss(np.ones((1, 3)))

    def test_composite(self):
        rng = np.random.default_rng(10)
        emb, q = unit_rows(rng, 5, 3), rng.uniform(size=5)
        loss, _, _ = embdist_loss(emb, q, 0.05, 0.9, 0.01, combo_cap=None)
        expected = brute_edist(emb, q, 0.05, 0.9) + 0.01 * brute_cov(emb)
        assert loss == pytest.approx(expected, abs=1e-10)
        without_penalty, _, _ = embdist_loss(emb, q, 0.05, 0.9, 0.0, None)
        assert without_penalty == edist_loss(emb, q, 0.05, 0.9, None)[0]

    def test_composite_without_pairs_is_the_penalty(self):
        emb = np.array([[0.0, 1.0], [1.0, 0.0], [0.6, 0.8]])
        loss, _, _ = embdist_loss(emb, [0.5, 0.5, 0.5], 0.05, 1.0, 0.01)
        assert loss == pytest.approx(0.01 * cov_loss(emb)[0])


class TestAlignment:
    """Symmetric image-text InfoNCE"""

    def test_single_record(self):
        rng = np.random.default_rng(0)
        emb, text = unit_rows(rng, 1, 3), unit_rows(rng, 1, 4)
        loss, _ = align_loss(emb, text, rng.normal(size=(3, 4)), np.zeros(4), 1.0)
        assert loss == 0.0

    def test_matched_and_orthogonal(self):
        loss, _ = align_loss(np.eye(2), np.eye(2), np.eye(2), np.zeros(2), math.log(10.0))
        assert loss == pytest.approx(-math.log(math.exp(10) / (math.exp(10) + 1)))
        assert loss == pytest.approx(4.54e-5, rel=1e-3)

    def test_identical_rows_give_log_n(self):
        emb = np.tile([[0.6, 0.8]], (3, 1))
        text = np.tile([[0.0, 1.0, 0.0]], (3, 1))
        loss, _ = align_loss(emb, text, np.ones((2, 3)), np.zeros(3), 2.0)
        assert loss == pytest.approx(math.log(3))

    def test_gradients(self):
        rng = np.random.default_rng(1)
        emb, text = unit_rows(rng, 4, 3), unit_rows(rng, 4, 5)
        text_w, text_b = rng.normal(size=(3, 5)), rng.normal(size=5)
        _, grads = align_loss(emb, text, text_w, text_b, 1.2)

        def loss(emb=emb, text_w=text_w, text_b=text_b, tau=1.2):
            return align_loss(emb, text, text_w, text_b, tau)[0]

        numeric = central_differences(lambda x: loss(emb=x), emb)
        assert grads.emb_hat == pytest.approx(numeric, abs=1e-7)
        numeric = central_differences(lambda x: loss(text_w=x), text_w)
        assert grads.text_w == pytest.approx(numeric, abs=1e-7)
        numeric = central_differences(lambda x: loss(text_b=x), text_b)
        assert grads.text_b == pytest.approx(numeric, abs=1e-7)
        numeric = central_differences(lambda t: loss(tau=float(t[0])), [1.2])
        assert grads.tau_align == pytest.approx(numeric[0], abs=1e-7)

    def test_width_mismatch(self):
        with pytest.raises(LossInputError):
            align_loss(np.eye(2), np.eye(3), np.eye(2), np.zeros(2), 1.0)


class TestFinalObjective:
    """Schedule, ablations and the combined objective"""

    def test_schedule(self):
        assert lambda_emb_schedule(0.5, 1, 1.0) == 0.0
        assert lambda_emb_schedule(0.5, 2, 0.5) == 0.25
        assert lambda_emb_schedule(0.5, 2, 1.0) == 0.5
        assert lambda_emb_schedule(0.5, 3, 0.1) == 0.5
        with pytest.raises(ValueError):
            lambda_emb_schedule(0.5, 0)

    def test_ablations(self):
        assert (ablation_settings(1).align, ablation_settings(1).embdist) == (False, False)
        assert (ablation_settings(2).align, ablation_settings(2).embdist) == (False, True)
        assert (ablation_settings(3).align, ablation_settings(3).embdist) == (True, False)
        assert ablation_settings(4) == LossSettings()
        with pytest.raises(ValueError):
            ablation_settings(5)

    def test_first_epoch_has_no_embedding_weight(self):
        params, batch, settings = random_check_problem(0)
        breakdown, _ = total_loss(params, forward(params, batch), 1, settings)
        assert breakdown.lambda_emb == 0.0
        assert breakdown.total == pytest.approx(breakdown.recomputed_total())

    def test_only_ranking(self):
        params, batch, settings = random_check_problem(1)
        settings = settings._replace(lambda_align=0.0, lambda_emb=0.0, lambda_rank=2.0)
        breakdown, grads = total_loss(params, forward(params, batch), 3, settings)
        assert breakdown.total == pytest.approx(2.0 * breakdown.ranking)
        assert np.all(grads.emb_hat == 0.0)
        assert grads.tau_align == 0.0

    def test_components_match_the_single_losses(self):
        params, batch, settings = random_check_problem(2)
        batch = forward(params, batch)
        q = np.array([record.score for record in batch])
        d = np.array([record.severity for record in batch])
        breakdown, _ = total_loss(params, batch, 3, settings)
        assert breakdown.ranknet == pytest.approx(brute_ranknet(q, d, settings.t_d), abs=1e-10)
        assert breakdown.mreg == pytest.approx(brute_mreg(q, d), abs=1e-10)
        assert breakdown.lambda_emb == settings.lambda_emb
        assert breakdown.total == pytest.approx(breakdown.recomputed_total())

    @pytest.mark.parametrize("variant", ["pair-of-pairs", "margin", "pairwise"])
    def test_ranking_term_is_the_ranking_loss(self, variant):
        params, batch, settings = random_check_problem(5)
        settings = settings._replace(
            ranking=variant, align=False, embdist=False, lambda_rank=1.5, margin=0.2
        )
        batch = forward(params, batch)
        q = np.array([record.score for record in batch])
        d = np.array([record.severity for record in batch])
        expected, expected_grad = ranking_loss(
            q, d, settings.t_d, settings.lambda_mreg, settings.combo_cap, 0, variant, 0.2
        )
        breakdown, grads = total_loss(params, batch, 3, settings)
        assert breakdown.ranking == pytest.approx(expected, abs=1e-12)
        assert breakdown.ranknet + settings.lambda_mreg * breakdown.mreg == pytest.approx(expected)
        assert grads.q == pytest.approx(1.5 * expected_grad, abs=1e-12)

    def test_single_record_batch(self):
        params, batch, settings = random_check_problem(3, batch_size=1)
        breakdown, grads = total_loss(params, forward(params, batch), 3, settings)
        assert breakdown.empty_rank_pairs and breakdown.empty_emb_pairs
        assert breakdown.align == 0.0
        assert np.all(grads.q == 0.0)
