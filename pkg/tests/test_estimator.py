import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from approxflow.estimator import (
    ConfidenceSpec,
    SampleNode,
    cluster_stats,
    compute_tree,
    confidence_interval,
    estimate_population,
    multistage_sum,
    multistage_variance,
    nb_augmented_two_stage_variance,
    product_variance,
    sample_variance,
    two_stage_sum,
    two_stage_variance,
)
from approxflow.provenance import Internal, Leaf, ProvenanceTree

HAND_CLUSTERS = [(4, 2, [1, 3]), (6, 3, [2, 2, 5])]

values = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=6)
rates = st.floats(0.05, 1.0)


def _frac_var(vals):
    vals = [Fraction(v) for v in vals]
    mean = sum(vals) / len(vals)
    return sum((v - mean) ** 2 for v in vals) / (len(vals) - 1)


class TestTwoStage:
    def test_hand_example(self):
        # cluster totals 8 and 18; S_u^2 = 50, S_1^2 = 2, S_2^2 = 3
        assert two_stage_sum(5, 2, HAND_CLUSTERS) == pytest.approx(65.0, rel=1e-15)
        assert two_stage_variance(5, 2, HAND_CLUSTERS) == pytest.approx(440.0, rel=1e-15)

    def test_exhausted_levels_give_zero_variance(self):
        clusters = [(2, 2, [1.0, 4.0]), (3, 3, [2.0, 2.0, 9.0])]
        assert two_stage_variance(2, 2, clusters) == 0.0
        assert two_stage_sum(2, 2, clusters) == 18.0

    def test_degenerate_single_cluster(self):
        v, deg = two_stage_variance(5, 1, [(4, 2, [1, 3])], return_degenerate=True)
        assert deg
        assert v == pytest.approx(5 * 4 * 2 * 2 / 2)

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            two_stage_sum(2, 3, HAND_CLUSTERS)
        with pytest.raises(ValueError):
            two_stage_sum(5, 2, [(1, 2, [1, 2]), (6, 3, [2, 2, 5])])

    @given(st.lists(st.tuples(st.integers(0, 4), values), min_size=1, max_size=5),
           st.integers(0, 5))
    def test_matches_exact_rational_oracle(self, raw, extra_n):
        clusters = [(len(v) + e, len(v), v) for e, v in raw]
        n = len(clusters)
        N = n + extra_n
        totals = [Fraction(M, m) * sum(Fraction(x) for x in v) for M, m, v in clusters]
        tau = Fraction(N, n) * sum(totals)
        var = Fraction(0)
        if n > 1:
            var += Fraction(N * (N - n), n) * _frac_var(totals)
        for M, m, v in clusters:
            if m > 1:
                var += Fraction(N, n) * Fraction(M * (M - m), m) * _frac_var(v)
        assert two_stage_sum(N, n, clusters) == pytest.approx(float(tau), rel=1e-9, abs=1e-6)
        assert two_stage_variance(N, n, clusters) == pytest.approx(float(var), rel=1e-9, abs=1e-6)


class TestMultistage:
    def test_reduces_to_two_stage(self):
        root = SampleNode(5, [SampleNode(M, list(v)) for M, _, v in HAND_CLUSTERS])
        assert multistage_sum(root) == 65.0
        assert multistage_variance(root) == 440.0

    def test_three_stage_by_hand(self):
        # two clusters of two sub-clusters; every level half sampled
        root = SampleNode(4, [
            SampleNode(4, [SampleNode(2, [1.0]), SampleNode(2, [3.0])]),
            SampleNode(4, [SampleNode(2, [2.0]), SampleNode(2, [2.0])]),
        ])
        # leaf totals 2, 6 | 4, 4 ; cluster totals 16, 16 ; root 64
        assert multistage_sum(root) == 64.0
        v, deg = multistage_variance(root, return_degenerate=True)
        # root between 0; cluster 1: 4*2*8/2 = 32, cluster 2: 0 ; leaves degenerate (1 of 2)
        assert v == pytest.approx(4 / 2 * 32)
        assert deg

    def test_population_smaller_than_sample(self):
        with pytest.raises(ValueError):
            multistage_sum(SampleNode(1, [1.0, 2.0]))


class TestPopulation:
    def test_negative_binomial_moments(self):
        est = estimate_population(30, 0.3)
        assert est.value == pytest.approx(100.0)
        assert est.variance == pytest.approx(30 * 0.7 / 0.09)
        assert not est.exact

    def test_rate_one_is_exact(self):
        est = estimate_population(17, 1.0)
        assert (est.value, est.variance, est.exact) == (17.0, 0.0, True)

    def test_product_variance(self):
        assert product_variance(2.0, 3.0, 5.0, 7.0) == 4 * 7 + 25 * 3 + 21

    def test_product_variance_rejects_negative(self):
        with pytest.raises(ValueError):
            product_variance(1, -1, 1, 1)


class TestAugmentedTwoStage:
    def test_hand_example(self):
        # cluster intra 26 and 75; between 200 + 676 + 50
        v = nb_augmented_two_stage_variance(0.5, 0.5, [(2, [1, 3]), (3, [2, 2, 5])])
        assert v == pytest.approx(1128.0, rel=1e-15)

    @given(st.lists(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=5),
                    min_size=1, max_size=5), rates, rates)
    def test_nested_cluster_stats_agree(self, groups, p1, p2):
        # per-node recursion and the closed form are two routes to one number
        inner = [cluster_stats(g, (), p2) for g in groups]
        outer = cluster_stats([c.tau_hat for c in inner], [c.v_hat for c in inner], p1)
        closed = nb_augmented_two_stage_variance(p1, p2, [(len(g), g) for g in groups])
        assert outer.v_hat == pytest.approx(closed, rel=1e-9, abs=1e-9)

    def test_unit_rates_collapse_to_zero(self):
        assert nb_augmented_two_stage_variance(1.0, 1.0, [(2, [1, 3]), (1, [4])]) == 0.0


class TestConfidence:
    def test_t_quantile(self):
        assert ConfidenceSpec(0.95).t_critical(9) == pytest.approx(2.2621571628540993, rel=1e-12)
        # one degree of freedom is Cauchy: closed-form quantile tan(pi (q - 1/2))
        assert ConfidenceSpec(0.90).t_critical(1) == pytest.approx(math.tan(math.pi * 0.45), rel=1e-9)

    def test_interval(self):
        eps, lo, hi = confidence_interval(10.0, 4.0, 10, ConfidenceSpec(0.95))
        assert eps == pytest.approx(2 * 2.2621571628540993)
        assert (lo, hi) == pytest.approx((10 - eps, 10 + eps))

    def test_zero_variance_zero_width(self):
        assert confidence_interval(3.0, 0.0, 1, ConfidenceSpec())[0] == 0.0

    def test_single_cluster_unbounded(self):
        assert math.isinf(confidence_interval(3.0, 1.0, 1, ConfidenceSpec())[0])

    @pytest.mark.parametrize("level", [0.0, 1.0, -0.5, 1.5])
    def test_bad_level(self, level):
        with pytest.raises(ValueError):
            ConfidenceSpec(level)

    @given(st.floats(0.5, 0.999), st.integers(1, 200))
    def test_width_grows_with_confidence(self, level, df):
        assert ConfidenceSpec(level).t_critical(df) < ConfidenceSpec(min(0.9999, level + 1e-3)).t_critical(df)


def test_sample_variance_degenerate():
    assert sample_variance([3.0]) == (0.0, True)
    assert sample_variance([1.0, 3.0]) == (2.0, False)


def _tree(partitions, total, rates):
    root = Internal(0)
    for leaves in partitions:
        node = Internal(1, [Leaf(k, v) for k, v in leaves])
        root.children.append(node)
    return ProvenanceTree(root, list(rates), total)


class TestComputeTree:
    def test_exact_tree(self):
        tree = _tree([[("a", 1), ("a", 2)], [("b", 5)]], 2, [1.0, 1.0])
        est = compute_tree(tree)
        assert est["a"].tau_hat == 3 and est["a"].epsilon == 0
        assert est["b"].tau_hat == 5 and est["b"].v_hat == 0

    def test_absent_partitions_count_as_zero(self):
        # key "a" appears in one of two sampled partitions out of four
        tree = _tree([[("a", 2), ("a", 2)], [("b", 1)]], 4, [0.5, 1.0])
        est = compute_tree(tree)["a"]
        # totals (4, 0): tau = 4/2 * 4, S_u^2 = 8, V = 4*2*8/2
        assert est.tau_hat == pytest.approx(8.0)
        assert est.v_hat == pytest.approx(32.0)
        assert est.n_level1 == 1
        assert est.degenerate

    def test_mean_aggregate(self):
        tree = _tree([[("a", 2), ("a", 4)], [("a", 6)]], 2, [1.0, 1.0])
        est = compute_tree(tree, aggregate="mean")["a"]
        assert est.tau_hat == pytest.approx(4.0)
        assert est.v_hat == 0

    def test_unknown_aggregate(self):
        with pytest.raises(ValueError):
            compute_tree(_tree([[("a", 1)]], 1, [1.0, 1.0]), aggregate="max")

    @given(st.lists(st.lists(st.tuples(st.sampled_from("ab"), st.floats(0, 10)), max_size=6),
                    min_size=1, max_size=5), st.integers(0, 4), rates, rates)
    def test_variance_nonnegative(self, parts, extra, p1, p2):
        est = compute_tree(_tree(parts, len(parts) + extra, [p1, p2]))
        for e in est.values():
            assert e.v_hat >= 0 and e.epsilon >= 0
            lo, hi = e.ci
            assert lo <= e.tau_hat <= hi
