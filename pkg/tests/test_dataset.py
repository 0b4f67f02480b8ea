import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from approxflow._rng import stream
from approxflow.dataset import (
    SamplingConfig,
    from_records,
    load_text,
    read_partitions,
    sample_items,
    sample_partition_indices,
    split_lines,
)
from approxflow.exceptions import EmptyInputError


class TestSamplingConfig:
    def test_defaults_are_exact(self):
        assert SamplingConfig().exact

    @pytest.mark.parametrize("kw", [{"partition_rate": 0}, {"item_rate": 1.5},
                                    {"confidence": 1.0}, {"partition_rate": float("nan")}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SamplingConfig(**kw)


class TestPartitionSampling:
    def test_fixed_count_sorted(self):
        idx = sample_partition_indices(10, 0.25, stream(1, 0))
        assert len(idx) == 3  # round half up of 2.5
        assert list(idx) == sorted(set(idx))

    def test_at_least_one(self):
        assert len(sample_partition_indices(10, 0.01, stream(1, 0))) == 1

    def test_full_rate_keeps_all(self):
        assert list(sample_partition_indices(7, 1.0, stream(3, 0))) == list(range(7))

    @given(st.integers(1, 200), st.floats(0.01, 1.0), st.integers(0, 2**32))
    def test_subset_of_range(self, n, rate, seed):
        idx = sample_partition_indices(n, rate, stream(seed, 0))
        assert all(0 <= i < n for i in idx)
        assert len(set(idx)) == len(idx)


class TestItemSampling:
    def test_full_rate_identity(self):
        assert sample_items(list("abc"), 1.0, stream(0, 1)) == list("abc")

    def test_order_preserved_and_rate(self):
        kept = sample_items(list(range(20000)), 0.3, stream(5, 1))
        assert kept == sorted(kept)
        # binomial sd ~ 65
        assert abs(len(kept) - 6000) < 400


class TestFromRecords:
    def test_deterministic(self):
        parts = [list(range(i, i + 50)) for i in range(0, 500, 50)]
        cfg = SamplingConfig(0.5, 0.5, seed=9)
        a, b = from_records(parts, cfg), from_records(parts, cfg)
        assert [p.records for p in a] == [p.records for p in b]
        assert a.origin_partition_count == 10
        assert len(a.partitions) == 5

    def test_seed_changes_sample(self):
        parts = [list(range(100)) for _ in range(10)]
        a = from_records(parts, SamplingConfig(0.5, 0.5, seed=1))
        b = from_records(parts, SamplingConfig(0.5, 0.5, seed=2))
        assert [p.records for p in a] != [p.records for p in b]

    def test_original_counts_kept(self):
        ds = from_records([[1, 2, 3], [4]], SamplingConfig(1.0, 0.5, seed=0))
        assert [p.original_item_count for p in ds] == [3, 1]

    def test_empty(self):
        with pytest.raises(ValueError):
            from_records([])


class TestReading:
    def test_single_file_split(self, tmp_path):
        f = tmp_path / "in.txt"
        f.write_text("".join(f"l{i}\n" for i in range(7)))
        parts = read_partitions(f, 3)
        assert [len(p) for p in parts] == [3, 2, 2]
        assert sum(parts, []) == [f"l{i}" for i in range(7)]

    def test_directory_round_robin(self, tmp_path):
        for i in range(5):
            (tmp_path / f"part-{i}.txt").write_text(f"r{i}\n")
        (tmp_path / "manifest.json").write_text("{}")
        (tmp_path / ".hidden").write_text("x\n")
        assert read_partitions(tmp_path, 2) == [["r0", "r2", "r4"], ["r1", "r3"]]

    def test_directory_pads_missing(self, tmp_path, caplog):
        (tmp_path / "a.txt").write_text("x\n")
        assert read_partitions(tmp_path, 3) == [["x"], [], []]
        assert "empty" in caplog.text

    def test_empty_input(self, tmp_path):
        f = tmp_path / "e.txt"
        f.write_text("")
        with pytest.raises(EmptyInputError):
            load_text(f, 2)

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_partitions(tmp_path / "nope", 1)

    @given(st.lists(st.integers(), max_size=40), st.integers(1, 9))
    def test_split_is_partition_of_input(self, lines, n):
        parts = split_lines(lines, n)
        assert len(parts) == n
        assert sum(parts, []) == lines
        sizes = [len(p) for p in parts]
        assert max(sizes) - min(sizes) <= 1


def test_streams_independent_by_stage():
    a = stream(1, 0, 3).random(4)
    b = stream(1, 1, 3).random(4)
    assert not np.allclose(a, b)
    assert np.array_equal(a, stream(1, 0, 3).random(4))
