"""Transform chains, their per-partition execution, and keyed aggregation."""

from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Callable

from sklearn.base import BaseEstimator

from ._rng import STAGE_SAMPLE_OP, stream
from ._validation import check_rate, is_real
from .dataset import PartitionedDataset, sample_items
from .estimator import (
    ConfidenceSpec,
    KeyEstimate,
    key_estimates,
    merge_partitions,
    summarize_partition,
)
from .exceptions import ChainTypeError, PipelineError
from .provenance import finish_tree, init_tree

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Map:
    fn: Callable[[Any], Any]


@dataclass(frozen=True)
class FlatMap:
    fn: Callable[[Any], Any]


@dataclass(frozen=True)
class MapValues:
    fn: Callable[[Any], Any]


@dataclass(frozen=True)
class Filter:
    pred: Callable[[Any], bool]


@dataclass(frozen=True)
class Sample:
    rate: float

    def __post_init__(self):
        object.__setattr__(self, "rate", check_rate(self.rate, "Sample.rate", inclusive_one=False))


AGGREGATES = ("sum", "mean")


@dataclass(frozen=True)
class TransformChain:
    ops: tuple = ()
    final_stage: str = "sum"
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if self.final_stage not in AGGREGATES:
            raise ValueError(f"final_stage must be one of {AGGREGATES}, got {self.final_stage!r}")
        for op in self.ops:
            if not isinstance(op, (Map, FlatMap, MapValues, Filter, Sample)):
                raise TypeError(f"unsupported transform {op!r}")

    @property
    def has_sample(self):
        return any(isinstance(op, Sample) for op in self.ops)


@dataclass
class AggregationResult:
    per_key: dict
    metadata: dict = field(default_factory=dict)
    tree: Any = None

    @property
    def keys_present(self):
        return len(self.per_key)

    def __getitem__(self, key) -> KeyEstimate:
        return self.per_key[key]

    def values(self):
        return {k: e.tau_hat for k, e in self.per_key.items()}


def _stage_name(index, op):
    return "load" if op is None else f"stage {index} ({type(op).__name__})"


def _apply_one(op, record, index):
    try:
        if isinstance(op, Map):
            return [op.fn(record)]
        if isinstance(op, FlatMap):
            return list(op.fn(record))
        if isinstance(op, MapValues):
            key, value = record
            return [(key, op.fn(value))]
        if isinstance(op, Filter):
            return [record] if op.pred(record) else []
    except Exception as exc:  # user code: report which stage failed
        raise PipelineError(f"{_stage_name(index, op)} failed on {record!r}: {exc}", index) from exc
    raise TypeError(f"cannot apply {op!r} record-wise")


def _as_pair(record, index, op):
    if isinstance(record, tuple) and len(record) == 2 and is_real(record[1]):
        try:
            hash(record[0])
        except TypeError:
            pass
        else:
            return record
    raise ChainTypeError(
        f"{_stage_name(index, op)} produced {record!r}; the final stage needs (key, real) pairs",
        "load" if op is None else index,
    )


def apply_chain(ops, record):
    """Run one record through sample-free ``ops``; returns the outputs."""
    current = [record]
    for i, op in enumerate(ops):
        if isinstance(op, Sample):
            raise ValueError("apply_chain does not sample")
        current = [o for r in current for o in _apply_one(op, r, i)]
    return current


def _run_partition(part, chain, seed, builder):
    for i, op in enumerate(chain.ops):
        records = builder.records
        if isinstance(op, Sample):
            rng = stream(seed, STAGE_SAMPLE_OP + i, part.original_index)
            keep = sample_items(range(len(records)), op.rate, rng)
            flags = [False] * len(records)
            for j in keep:
                flags[j] = True
            outputs = [[r] if f else [] for r, f in zip(records, flags)]
        else:
            outputs = [_apply_one(op, r, i) for r in records]
        builder.on_transform(op, outputs)
        if records and not builder.frontier and isinstance(op, (Sample, Filter)):
            logger.warning(
                "partition %d emptied by %s; kept with no records",
                part.original_index, _stage_name(i, op),
            )
    last = len(chain.ops) - 1
    last_op = chain.ops[-1] if chain.ops else None
    pairs = [_as_pair(r, last, last_op) for r in builder.records]
    return builder.node, builder.finalize(pairs)


def execute(dataset: PartitionedDataset, chain: TransformChain, *, confidence=None,
            n_jobs=None, keep_tree=False):
    """Run ``chain`` on every partition and estimate each output key.

    Partitions are processed independently (optionally on ``n_jobs``
    threads); their per-key statistics are then folded at the root.
    """
    cfg = dataset.load_config
    spec = ConfidenceSpec(cfg.confidence if confidence is None else confidence)
    tree, builders = init_tree(
        dataset.partitions, cfg.partition_rate, cfg.item_rate, dataset.origin_partition_count
    )

    def work(args):
        part, builder = args
        node, rates = _run_partition(part, chain, cfg.seed, builder)
        full_rates = [cfg.partition_rate, *rates]
        sums = _summarize(node, full_rates)
        counts = _summarize(node, full_rates, count_only=True) if chain.final_stage == "mean" else None
        if not keep_tree:
            node.children = []
        return rates, sums, counts

    jobs = list(zip(dataset.partitions, builders))
    if n_jobs and n_jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    rates_below = results[0][0]
    if any(r[0] != rates_below for r in results):
        raise PipelineError("partitions disagree on the provenance tree shape")
    finish_tree(tree, rates_below)

    N = dataset.origin_partition_count
    sums = merge_partitions([r[1] for r in results], N)
    counts = merge_partitions([r[2] for r in results], N) if chain.final_stage == "mean" else None
    per_key = key_estimates(sums, spec, counts)
    metadata = {
        "pipeline": chain.name,
        "aggregate": chain.final_stage,
        "partition_rate": cfg.partition_rate,
        "item_rate": cfg.item_rate,
        "seed": cfg.seed,
        "confidence": spec.level,
        "depth": tree.depth,
        "level_rates": list(tree.level_rates),
        "partitions_total": N,
        "partitions_selected": len(dataset.partitions),
    }
    return AggregationResult(per_key, metadata, tree if keep_tree else None)


def _summarize(node, rates, count_only=False):
    # a partition emptied by sampling has no leaves and contributes nothing
    if not node.children:
        return {}
    return summarize_partition(node, rates, count_only=count_only)


def execute_exact(dataset: PartitionedDataset, chain: TransformChain):
    """Exact per-key aggregates; requires an unsampled load and no ``Sample`` op."""
    if not dataset.load_config.exact or len(dataset.partitions) != dataset.origin_partition_count:
        raise ValueError("execute_exact needs a dataset loaded at rates (1, 1)")
    if chain.has_sample:
        raise ValueError("execute_exact does not accept chains containing Sample")
    last = len(chain.ops) - 1
    last_op = chain.ops[-1] if chain.ops else None
    sums: dict = {}
    counts: dict = {}
    for part in dataset.partitions:
        for record in part.records:
            for out in apply_chain(chain.ops, record):
                key, value = _as_pair(out, last, last_op)
                sums.setdefault(key, []).append(value)
                counts[key] = counts.get(key, 0) + 1
    if chain.final_stage == "mean":
        return {k: math.fsum(v) / counts[k] for k, v in sums.items()}
    return {k: _exact_total(v) for k, v in sums.items()}


def _exact_total(values):
    if all(isinstance(v, int) for v in values):
        return sum(values)
    return math.fsum(values)


# -- built-in pipelines ----------------------------------------------------

_TOKEN_SPLIT = re.compile(r"[\s,;.]+")


def tokenize(line):
    return [t for t in _TOKEN_SPLIT.split(line) if t]


def parse_tags(line):
    return sorted({t.strip() for t in re.split(r"[,\s]+", line) if t.strip()})


def tag_pairs(tags):
    return list(combinations(tags, 2))


def parse_edge(line):
    fields = [f.strip() for f in line.split(",")]
    if len(fields) != 3:
        raise ValueError(f"expected 'src,dst,count', got {line!r}")
    src, dst, count = fields
    return ((src, dst), float(count))


def parse_keyed_value(line):
    key, sep, value = line.rpartition(",")
    if not sep:
        raise ValueError(f"expected 'key,value', got {line!r}")
    return (key.strip(), float(value))


def _pair_with_one(x):
    return (x, 1)


BUILTIN_PIPELINES = ("wordcount", "cooccur", "group-sum", "synth")


def builtin_pipeline(name, params=None):
    """Desk-scale stand-ins for common aggregation jobs.

    ``synth`` accepts ``params={"aggregate": "mean"}``; every other pipeline
    sums.
    """
    params = dict(params or {})
    if name == "wordcount":
        ops = (FlatMap(tokenize), Map(_pair_with_one))
        final = "sum"
    elif name == "cooccur":
        ops = (Map(parse_tags), FlatMap(tag_pairs), Map(_pair_with_one))
        final = "sum"
    elif name == "group-sum":
        ops = (Map(parse_edge),)
        final = "sum"
    elif name == "synth":
        ops = (Map(parse_keyed_value),)
        final = params.get("aggregate", "sum")
    else:
        raise ValueError(f"unknown pipeline {name!r}; choose from {', '.join(BUILTIN_PIPELINES)}")
    return TransformChain(ops, final, name)


class MultiStageAggregator(BaseEstimator):
    """Estimator-style wrapper around :func:`execute`.

    Parameters
    ----------
    ops : sequence of transforms
        Chain applied to every loaded record.
    aggregate : {"sum", "mean"}
    confidence : float or None
        Overrides the dataset's confidence level when given.
    n_jobs : int or None
        Worker threads for per-partition execution.
    keep_tree : bool
        Retain the provenance tree on ``result_``.
    """

    def __init__(self, ops=(), aggregate="sum", confidence=None, n_jobs=None, keep_tree=False):
        self.ops = ops
        self.aggregate = aggregate
        self.confidence = confidence
        self.n_jobs = n_jobs
        self.keep_tree = keep_tree

    def fit(self, X: PartitionedDataset, y=None):
        if not isinstance(X, PartitionedDataset):
            raise TypeError("MultiStageAggregator expects a PartitionedDataset")
        chain = TransformChain(tuple(self.ops), self.aggregate)
        self.result_ = execute(
            X, chain, confidence=self.confidence, n_jobs=self.n_jobs, keep_tree=self.keep_tree
        )
        self.estimates_ = self.result_.per_key
        return self

    def predict(self, keys):
        """Estimated aggregate per key (``nan`` for keys lost to sampling)."""
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "estimates_")
        return [self.estimates_[k].tau_hat if k in self.estimates_ else math.nan for k in keys]
