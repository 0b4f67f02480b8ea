"""Adaptive stratified reservoir sampling (power allocation with q = 0).

Each partition keeps one reservoir per key. The partition's reservoir
budget is split among keys in proportion to each key's running coefficient
of variation, so rare or noisy keys get relatively larger samples and no
key that has been seen is ever dropped entirely (every key keeps at least
one slot).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator, TransformerMixin

from ._rng import STAGE_ASRS, stream
from ._validation import check_count
from .dataset import Partition, PartitionedDataset
from .estimator import ConfidenceSpec, KeyEstimate, confidence_interval, sample_variance
from .pipeline import Sample, _as_pair, apply_chain

REALLOC_INTERVAL = 256

logger = logging.getLogger(__name__)


@dataclass
class KeyStratumStats:
    """Welford running mean/variance of one key's value stream."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    population: int | None = None

    def update(self, value):
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    @property
    def variance(self):
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def std(self):
        return math.sqrt(max(self.variance, 0.0))

    @property
    def cv(self):
        """Coefficient of variation; 0 when undefined (fewer than 2 items or zero mean)."""
        if self.count < 2 or self.mean == 0:
            return 0.0
        return self.std / abs(self.mean)


def largest_remainder(weights, total):
    """Integer apportionment of ``total`` proportional to ``weights`` (sums to ``total``)."""
    keys = list(weights)
    wsum = math.fsum(weights.values())
    if not keys:
        return {}
    if wsum <= 0:
        weights = {k: 1.0 for k in keys}
        wsum = float(len(keys))
    quotas = {k: total * weights[k] / wsum for k in keys}
    alloc = {k: int(math.floor(q)) for k, q in quotas.items()}
    left = total - sum(alloc.values())
    order = sorted(range(len(keys)), key=lambda i: (alloc[keys[i]] - quotas[keys[i]], i))
    for i in order[:left]:
        alloc[keys[i]] += 1
    return alloc


def _apply_floor(alloc, total):
    # every key keeps >= 1 slot; the units come from the largest allocations
    alloc = {k: max(1, a) for k, a in alloc.items()}
    excess = sum(alloc.values()) - total
    while excess > 0:
        k = max(alloc, key=lambda key: alloc[key])
        if alloc[k] <= 1:
            break  # more keys than slots
        alloc[k] -= 1
        excess -= 1
    return alloc


def allocate(stats, total):
    """Split ``total`` slots across keys proportionally to their running CV.

    All-zero CVs give an equal split. Rounding is by largest remainder and
    every key receives at least one slot, so the sum equals ``total`` unless
    there are more keys than slots.
    """
    total = check_count(total, "total", minimum=1)
    cvs = {k: s.cv for k, s in stats.items()}
    return _apply_floor(largest_remainder(cvs, total), total)


@dataclass
class Stratum:
    stats: KeyStratumStats = field(default_factory=KeyStratumStats)
    items: list = field(default_factory=list)
    allocation: int = 1


class ReservoirState:
    """ASRS state of a single partition."""

    def __init__(self, total_size, rng, realloc_interval=REALLOC_INTERVAL):
        self.total_size = check_count(total_size, "total_size", minimum=1)
        self.rng = rng
        self.realloc_interval = check_count(realloc_interval, "realloc_interval", minimum=1)
        self.strata: dict = {}
        self.admissions = 0

    @property
    def keys_seen(self):
        return len(self.strata)

    @property
    def allocations(self):
        return {k: s.allocation for k, s in self.strata.items()}

    def stream_counts(self):
        return {k: s.stats.count for k, s in self.strata.items()}

    def _evict(self, stratum):
        while len(stratum.items) > stratum.allocation:
            stratum.items.pop(int(self.rng.integers(len(stratum.items))))

    def _set_allocations(self, alloc):
        for key, a in alloc.items():
            stratum = self.strata[key]
            stratum.allocation = a
            self._evict(stratum)

    def _open_stratum(self, key):
        if not self.strata:
            self.strata[key] = Stratum(allocation=self.total_size)
            return
        # the newcomer starts at the average size; everyone is rescaled to fit
        weights = self.allocations
        weights[key] = max(1.0, sum(weights.values()) / len(weights))
        alloc = _apply_floor(largest_remainder(weights, self.total_size), self.total_size)
        self.strata[key] = Stratum(allocation=alloc[key])
        self._set_allocations(alloc)

    def reallocate(self):
        self._set_allocations(allocate({k: s.stats for k, s in self.strata.items()}, self.total_size))

    def admit(self, key, value):
        if key not in self.strata:
            self._open_stratum(key)
        stratum = self.strata[key]
        stratum.stats.update(float(value))
        if len(stratum.items) < stratum.allocation:
            stratum.items.append((key, value))
        else:
            j = int(self.rng.integers(stratum.stats.count))
            if j < stratum.allocation:
                stratum.items[j] = (key, value)
        self.admissions += 1
        if self.admissions % self.realloc_interval == 0:
            self.reallocate()
        return self

    def sample(self):
        return [item for s in self.strata.values() for item in s.items]


def admit(state: ReservoirState, item, rng=None):
    """Functional form of :meth:`ReservoirState.admit`."""
    if rng is not None:
        state.rng = rng
    key, value = item
    return state.admit(key, value)


def asrs_transform(dataset: PartitionedDataset, upstream_ops=(), reservoir_total=1000,
                   realloc_interval=REALLOC_INTERVAL):
    """Run ASRS over each partition's keyed stream.

    The reservoir budget is divided evenly among the selected partitions.
    Returns the sampled dataset and one :class:`ReservoirState` per
    partition; the states keep the exact per-key stream counts.
    """
    cfg = dataset.load_config
    if cfg.item_rate != 1.0:
        raise ValueError("ASRS needs the full partition stream (item_rate must be 1)")
    if any(isinstance(op, Sample) for op in upstream_ops):
        raise ValueError("ASRS is the only sampling point; upstream Sample ops are not allowed")
    share = check_count(reservoir_total, "reservoir_total", minimum=1) // len(dataset.partitions)
    if share < 1:
        raise ValueError(
            f"reservoir_total={reservoir_total} gives less than one slot per partition"
        )
    last = len(upstream_ops) - 1
    last_op = upstream_ops[-1] if upstream_ops else None
    parts, states = [], []
    for part in dataset.partitions:
        state = ReservoirState(share, stream(cfg.seed, STAGE_ASRS, part.original_index), realloc_interval)
        for record in part.records:
            for out in apply_chain(upstream_ops, record):
                key, value = _as_pair(out, last, last_op)
                state.admit(key, value)
        for key, stratum in state.strata.items():
            stratum.stats.population = stratum.stats.count
        if state.keys_seen > share:
            logger.warning(
                "partition %d: %d keys for %d reservoir slots; single-slot strata are degenerate",
                part.original_index, state.keys_seen, share,
            )
        parts.append(Partition(part.original_index, tuple(state.sample()), part.original_item_count))
        states.append(state)
    return PartitionedDataset(tuple(parts), dataset.origin_partition_count, cfg), states


def stratified_estimate(states, total_partitions, spec: ConfidenceSpec | None = None,
                        aggregate="sum"):
    """Two-stage per-key estimates from ASRS reservoirs.

    Partitions are the first stage (known ``N``, zero totals where a key is
    absent); within a partition each key's reservoir is treated as a simple
    random sample of its exactly known stream.
    """
    spec = spec or ConfidenceSpec()
    n = len(states)
    N = total_partitions
    if n < 1 or n > N:
        raise ValueError(f"need 1 <= partitions <= N, got {n} of {N}")
    per_key: dict = {}
    for state in states:
        for key, stratum in state.strata.items():
            values = [float(v) for _, v in stratum.items]
            M, m = stratum.stats.count, len(values)
            s2, deg = sample_variance(values)
            total = M / m * math.fsum(values)
            var = M * (M - m) * s2 / m
            per_key.setdefault(key, []).append((total, var, M, deg and M > m))
    out = {}
    for key, rows in per_key.items():
        totals = [r[0] for r in rows]
        mean = math.fsum(totals) / n
        s2u = 0.0
        if n > 1:
            s2u = (math.fsum((t - mean) ** 2 for t in totals) + (n - len(rows)) * mean**2) / (n - 1)
        tau = N / n * math.fsum(totals)
        v = N * (N - n) * s2u / n + N / n * math.fsum(r[1] for r in rows)
        if aggregate == "mean":
            pop = N / n * sum(r[2] for r in rows)
            tau, v = tau / pop, v / pop**2
        elif aggregate != "sum":
            raise ValueError(f"unknown aggregate {aggregate!r}")
        degenerate = any(r[3] for r in rows) or (N > n and len(rows) < 2)
        eps, _, _ = confidence_interval(tau, v, n, spec)
        out[key] = KeyEstimate(key, tau, v, eps, len(rows), degenerate)
    return out


class StratifiedReservoirSampler(BaseEstimator, TransformerMixin):
    """Transformer form of :func:`asrs_transform`.

    ``fit_transform(dataset)`` returns the reservoir sample; ``states_``
    keeps the per-partition reservoirs for :meth:`estimate`.
    """

    def __init__(self, reservoir_size=1000, upstream_ops=(), realloc_interval=REALLOC_INTERVAL):
        self.reservoir_size = reservoir_size
        self.upstream_ops = upstream_ops
        self.realloc_interval = realloc_interval

    def fit(self, X, y=None):
        self.sample_, self.states_ = asrs_transform(
            X, tuple(self.upstream_ops), self.reservoir_size, self.realloc_interval
        )
        self.total_partitions_ = X.origin_partition_count
        return self

    def transform(self, X):
        return asrs_transform(
            X, tuple(self.upstream_ops), self.reservoir_size, self.realloc_interval
        )[0]

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X).sample_

    def estimate(self, confidence=0.95, aggregate="sum"):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "states_")
        return stratified_estimate(
            self.states_, self.total_partitions_, ConfidenceSpec(confidence), aggregate
        )
