"""Loading newline-delimited text into a sampled, partitioned dataset.

Partition sampling draws a fixed number of partitions without replacement;
item sampling is a one-pass Bernoulli filter inside each chosen partition.
The unsampled counts (total partitions ``N`` and items per partition
``M_i``) are always recorded exactly because the estimators need them.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Any, Sequence

from ._rng import STAGE_ITEMS, STAGE_PARTITIONS, stream
from ._validation import check_confidence, check_count, check_rate, round_half_up
from .exceptions import EmptyInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplingConfig:
    """Load-time sampling rates, seed and confidence level."""

    partition_rate: float = 1.0
    item_rate: float = 1.0
    seed: int = 0
    confidence: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "partition_rate", check_rate(self.partition_rate, "partition_rate"))
        object.__setattr__(self, "item_rate", check_rate(self.item_rate, "item_rate"))
        object.__setattr__(self, "seed", check_count(self.seed, "seed", minimum=-(1 << 63)))
        object.__setattr__(self, "confidence", check_confidence(self.confidence))

    @property
    def exact(self):
        return self.partition_rate == 1.0 and self.item_rate == 1.0


@dataclass(frozen=True)
class Partition:
    original_index: int
    records: tuple
    original_item_count: int

    @property
    def sampled_item_count(self):
        return len(self.records)


@dataclass(frozen=True)
class PartitionedDataset:
    partitions: tuple
    origin_partition_count: int
    load_config: SamplingConfig

    def __post_init__(self):
        if not self.partitions:
            raise ValueError("a dataset needs at least one partition")

    def __len__(self):
        return len(self.partitions)

    def __iter__(self):
        return iter(self.partitions)

    @property
    def total_records(self):
        return sum(len(p.records) for p in self.partitions)


def sample_partition_indices(total, rate, rng):
    """Simple random sample of ``max(1, round(total * rate))`` indices, sorted."""
    total = check_count(total, "total", minimum=1)
    rate = check_rate(rate)
    size = min(total, max(1, round_half_up(total * rate)))
    if size == total:
        return list(range(total))
    chosen = rng.choice(total, size=size, replace=False)
    return sorted(int(i) for i in chosen)


def sample_items(items, rate, rng):
    """Bernoulli-thin ``items`` keeping each with probability ``rate``.

    Relative order is preserved. ``rate == 1`` returns a copy without
    drawing from ``rng``.
    """
    rate = check_rate(rate)
    items = list(items)
    if rate == 1.0 or not items:
        return items
    keep = rng.random(len(items)) < rate
    return [item for item, k in zip(items, keep) if k]


def from_records(partitions: Sequence[Sequence[Any]], cfg: SamplingConfig | None = None):
    """Build a dataset from in-memory partitions, applying ``cfg``'s sampling.

    Partition ``i`` of the input keeps ``i`` as its original index, so the
    result is identical to loading the same partitions from disk.
    """
    cfg = cfg or SamplingConfig()
    partitions = [list(p) for p in partitions]
    if not partitions:
        raise EmptyInputError("no partitions given")
    if not any(partitions):
        raise EmptyInputError("input contains no records")
    total = len(partitions)
    chosen = sample_partition_indices(total, cfg.partition_rate, stream(cfg.seed, STAGE_PARTITIONS))
    out = []
    for idx in chosen:
        records = partitions[idx]
        kept = sample_items(records, cfg.item_rate, stream(cfg.seed, STAGE_ITEMS, idx))
        out.append(Partition(idx, tuple(kept), len(records)))
    return PartitionedDataset(tuple(out), total, cfg)


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def split_lines(lines, n_parts):
    """Split into ``n_parts`` contiguous ranges whose lengths differ by at most one."""
    base, extra = divmod(len(lines), n_parts)
    out, start = [], 0
    for i in range(n_parts):
        stop = start + base + (1 if i < extra else 0)
        out.append(lines[start:stop])
        start = stop
    return out


def read_partitions(path, requested_partitions):
    """Read ``path`` into ``requested_partitions`` lists of lines (no sampling).

    A directory contributes one file per partition in name order; surplus
    files are merged round-robin and missing ones leave empty partitions.
    A single file is split by line ranges of near-equal size.
    """
    requested_partitions = check_count(requested_partitions, "requested_partitions", minimum=1)
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if os.path.isdir(path):
        files = sorted(
            os.path.join(path, name)
            for name in os.listdir(path)
            if not name.startswith(".") and os.path.isfile(os.path.join(path, name))
            and not name.endswith(".json")
        )
        parts = [[] for _ in range(requested_partitions)]
        for i, name in enumerate(files):
            parts[i % requested_partitions].extend(_read_lines(name))
        if len(files) < requested_partitions:
            logger.warning(
                "%d files for %d partitions; %d partitions are empty",
                len(files), requested_partitions, requested_partitions - len(files),
            )
    else:
        parts = split_lines(_read_lines(path), requested_partitions)
    if not any(parts):
        raise EmptyInputError(f"{path} contains no records")
    return parts


def load_text(path, requested_partitions, cfg: SamplingConfig | None = None):
    """Load UTF-8 text lines from a file or directory and sample them."""
    return from_records(read_partitions(path, requested_partitions), cfg)
