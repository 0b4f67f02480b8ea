import math

import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from approxflow.dataset import SamplingConfig, from_records
from approxflow.exceptions import ChainTypeError, PipelineError
from approxflow.pipeline import (
    Filter,
    FlatMap,
    Map,
    MapValues,
    MultiStageAggregator,
    Sample,
    TransformChain,
    builtin_pipeline,
    execute,
    execute_exact,
    parse_tags,
    tokenize,
)

WORDS = [["a a b"], ["b c", "a"]]


def _exact_ds(parts):
    return from_records(parts, SamplingConfig())


class TestChain:
    def test_rejects_unknown_op(self):
        with pytest.raises(TypeError):
            TransformChain((lambda x: x,))

    def test_rejects_bad_final(self):
        with pytest.raises(ValueError):
            TransformChain((), "median")

    @pytest.mark.parametrize("rate", [0.0, 1.0, 1.2])
    def test_sample_rate_open_interval(self, rate):
        with pytest.raises(ValueError):
            Sample(rate)


class TestExecute:
    def test_wordcount_exact(self):
        res = execute(_exact_ds(WORDS), builtin_pipeline("wordcount"))
        assert res.values() == {"a": 3, "b": 2, "c": 1}
        assert all(e.epsilon == 0 for e in res.per_key.values())
        assert res.metadata["depth"] == 2

    def test_map_values_and_filter(self):
        chain = TransformChain((
            FlatMap(tokenize), Map(lambda w: (w, 2)), MapValues(lambda v: v * 3),
            Filter(lambda kv: kv[0] != "c"),
        ))
        assert execute(_exact_ds(WORDS), chain).values() == {"a": 18, "b": 12}

    def test_stage_named_on_error(self):
        chain = TransformChain((Map(lambda r: 1 / 0),))
        with pytest.raises(PipelineError) as info:
            execute(_exact_ds(WORDS), chain)
        assert info.value.stage == 0
        assert "stage 0 (Map)" in str(info.value)

    def test_final_records_must_be_pairs(self):
        with pytest.raises(ChainTypeError):
            execute(_exact_ds(WORDS), TransformChain((FlatMap(tokenize),)))

    def test_non_numeric_value(self):
        with pytest.raises(ChainTypeError):
            execute(_exact_ds(WORDS), TransformChain((Map(lambda r: (r, "x")),)))

    def test_threads_match_sequential(self):
        parts = [[f"w{i % 7} w{i % 3}" for i in range(j, j + 30)] for j in range(10)]
        ds = from_records(parts, SamplingConfig(0.6, 0.7, seed=4))
        chain = builtin_pipeline("wordcount")
        one = execute(ds, chain, n_jobs=1).per_key
        many = execute(ds, chain, n_jobs=4).per_key
        assert one == many

    def test_emptied_partition_logged(self, caplog):
        ds = _exact_ds([["a"], ["b c"]])
        chain = TransformChain((FlatMap(tokenize), Filter(lambda w: w == "a"), Map(lambda w: (w, 1))))
        res = execute(ds, chain)
        assert res.values() == {"a": 1}
        assert "emptied" in caplog.text

    def test_in_chain_sampling_deterministic(self):
        parts = [[f"x y z {i}" for i in range(40)] for _ in range(4)]
        chain = TransformChain((Sample(0.5), FlatMap(tokenize), Map(lambda w: (w, 1))))
        ds = from_records(parts, SamplingConfig(seed=3))
        assert execute(ds, chain).per_key == execute(ds, chain).per_key

    def test_mean_aggregate_exact(self):
        chain = TransformChain((Map(lambda r: (r[0], r[1])),), "mean")
        ds = _exact_ds([[("a", 1.0), ("a", 3.0)], [("a", 8.0), ("b", 2.0)]])
        res = execute(ds, chain)
        assert res["a"].tau_hat == pytest.approx(4.0)
        assert res["b"].tau_hat == pytest.approx(2.0)


class TestExact:
    def test_group_sum(self):
        rows = [["u,v,2", "u,v,3"], ["v,w,1.5"]]
        out = execute_exact(_exact_ds(rows), builtin_pipeline("group-sum"))
        assert out == {("u", "v"): 5.0, ("v", "w"): 1.5}

    def test_cooccur(self):
        out = execute_exact(_exact_ds([["b, a, c"], ["a b"]]), builtin_pipeline("cooccur"))
        assert out == {("a", "b"): 2, ("a", "c"): 1, ("b", "c"): 1}

    def test_requires_unsampled(self):
        ds = from_records(WORDS, SamplingConfig(1.0, 0.5))
        with pytest.raises(ValueError):
            execute_exact(ds, builtin_pipeline("wordcount"))

    def test_rejects_sample_op(self):
        with pytest.raises(ValueError):
            execute_exact(_exact_ds(WORDS), TransformChain((Sample(0.5),)))

    @given(st.lists(st.lists(st.tuples(st.sampled_from("abcd"), st.integers(-5, 5)), max_size=8),
                    min_size=1, max_size=4))
    def test_unsampled_run_equals_exact(self, parts):
        if not any(parts):
            return
        ds = _exact_ds(parts)
        chain = TransformChain(())
        exact = execute_exact(ds, chain)
        res = execute(ds, chain)
        assert set(res.per_key) == set(exact)
        for k, v in exact.items():
            assert res[k].tau_hat == pytest.approx(v, abs=1e-9)
            assert res[k].epsilon == 0


class TestBuiltins:
    def test_unknown(self):
        with pytest.raises(ValueError):
            builtin_pipeline("pagerank")

    def test_tokenize(self):
        assert tokenize("a, b;c.  d") == ["a", "b", "c", "d"]

    def test_parse_tags_unique_sorted(self):
        assert parse_tags("z, a a") == ["a", "z"]

    def test_synth_mean(self):
        assert builtin_pipeline("synth", {"aggregate": "mean"}).final_stage == "mean"


class TestEstimatorApi:
    def test_fit_predict(self):
        est = MultiStageAggregator(ops=builtin_pipeline("wordcount").ops).fit(_exact_ds(WORDS))
        assert est.predict(["a", "zzz"])[0] == 3
        assert math.isnan(est.predict(["zzz"])[0])

    def test_params_roundtrip(self):
        est = MultiStageAggregator(aggregate="mean", n_jobs=2)
        assert clone(est).get_params()["aggregate"] == "mean"

    def test_rejects_raw_input(self):
        with pytest.raises(TypeError):
            MultiStageAggregator().fit([["a"]])
