"""Pilot-based choice of (partition rate, item rate) for error-bound targets.

A pilot wave runs the chain exactly on a random fraction of partitions and
collects per-key statistics. Those statistics predict each key's relative
error bound at any candidate pair of load rates, using the same estimator
that the full run reports. The search then greedily lowers the partition
rate, and afterwards the item rate, for as long as the predicted CDF of
bounds across keys stays under every target.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2
from sklearn.base import BaseEstimator

from ._rng import STAGE_PILOT, stream
from ._validation import check_confidence, check_rate, round_half_up
from .dataset import SamplingConfig, from_records, read_partitions, sample_partition_indices
from .estimator import ConfidenceSpec, sample_variance
from .exceptions import InfeasibleTargetsError
from .pipeline import TransformChain, _as_pair, apply_chain, execute

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ErrorTargets:
    """``(percentile, max_relative_bound)`` pairs with increasing percentiles."""

    targets: tuple

    def __post_init__(self):
        targets = tuple((float(p), float(b)) for p, b in self.targets)
        if not targets:
            raise ValueError("at least one target is required")
        for p, b in targets:
            if not 0 < p <= 100:
                raise ValueError(f"percentile must lie in (0, 100], got {p:g}")
            if b < 0 or math.isnan(b):
                raise ValueError(f"bound must be non-negative, got {b:g}")
        ps = [p for p, _ in targets]
        if any(a >= b for a, b in zip(ps, ps[1:])):
            raise ValueError("percentiles must be strictly increasing")
        object.__setattr__(self, "targets", targets)

    @classmethod
    def parse(cls, specs):
        """Build from strings such as ``"50=0.1"``."""
        pairs = []
        for spec in specs:
            p, sep, b = str(spec).partition("=")
            if not sep:
                raise ValueError(f"target must look like P=B, got {spec!r}")
            pairs.append((float(p), float(b)))
        return cls(tuple(sorted(pairs)))

    def __iter__(self):
        return iter(self.targets)


@dataclass(frozen=True)
class RateSearchConfig:
    pilot_fraction: float = 0.10
    step: float = 0.001
    min_rate: float | None = None
    # one-sided confidence for the pilot variance components; None = plug-in
    pilot_confidence: float | None = 0.95

    def __post_init__(self):
        check_rate(self.pilot_fraction, "pilot_fraction")
        check_rate(self.step, "step")
        if self.step > self.pilot_fraction:
            raise ValueError("step must not exceed pilot_fraction")
        if self.min_rate is None:
            object.__setattr__(self, "min_rate", self.step)
        check_rate(self.min_rate, "min_rate")
        if self.pilot_confidence is not None:
            check_confidence(self.pilot_confidence)


@dataclass(frozen=True)
class KeyPilotStats:
    """Pilot statistics of one key.

    Units are input records that produced the key; ``mean_value`` is the
    mean per-record total and ``s2_intra`` the pooled within-partition
    variance of those totals. ``s2_inter`` is the variance of partition
    totals across all pilot partitions (zeros where the key is absent).
    """

    m_hat: float
    s2_intra: float
    s2_inter: float
    n_clusters: int
    mean_value: float
    participation: float
    degenerate: bool = False
    df_inter: int = 0
    df_intra: int = 0

    @property
    def total(self):
        return self.m_hat * self.mean_value


@dataclass
class PilotStats:
    per_key: dict
    n_pilot: int
    total_partitions: int
    pilot_fraction: float
    pilot_wall_time_s: float = 0.0
    global_average: KeyPilotStats | None = field(default=None)

    def get(self, key):
        """Statistics for ``key``; unseen keys fall back to the global average."""
        return self.per_key.get(key, self.global_average)


def percentile_ceil(values, percentile):
    """Empirical percentile: the value at 1-based rank ``ceil(P/100 * n)``."""
    values = sorted(values)
    if not values:
        return math.nan
    rank = min(len(values), max(1, math.ceil(percentile / 100.0 * len(values) - 1e-12)))
    return values[rank - 1]


def run_pilot(dataset, chain: TransformChain, cfg: RateSearchConfig | None = None, seed=None):
    """Execute ``chain`` exactly on a random pilot fraction of partitions.

    ``dataset`` must be loaded without sampling. The pilot partitions are
    drawn with :func:`sample_partition_indices`.
    """
    cfg = cfg or RateSearchConfig()
    if not dataset.load_config.exact:
        raise ValueError("the pilot needs a dataset loaded at rates (1, 1)")
    if chain.has_sample:
        raise ValueError("rate search handles load-time sampling only; remove Sample ops")
    seed = dataset.load_config.seed if seed is None else seed
    started = time.perf_counter()
    N = len(dataset.partitions)
    chosen = sample_partition_indices(N, cfg.pilot_fraction, stream(seed, STAGE_PILOT))
    if len(chosen) < 2:
        raise ValueError(
            f"pilot_fraction={cfg.pilot_fraction:g} of {N} partitions selects fewer than 2"
        )
    n_pilot = len(chosen)
    last = len(chain.ops) - 1
    last_op = chain.ops[-1] if chain.ops else None
    # key -> list of per-record totals, one list per pilot partition
    per_key: dict = {}
    for slot, idx in enumerate(chosen):
        for record in dataset.partitions[idx].records:
            record_totals: dict = {}
            for out in apply_chain(chain.ops, record):
                key, value = _as_pair(out, last, last_op)
                record_totals[key] = record_totals.get(key, 0.0) + float(value)
            for key, total in record_totals.items():
                per_key.setdefault(key, [[] for _ in range(n_pilot)])[slot].append(total)
    if not per_key:
        raise ValueError("the pilot produced no output keys")
    fraction = n_pilot / N
    stats = {}
    top = 0
    for key, parts in per_key.items():
        count = sum(len(p) for p in parts)
        top = max(top, count)
        sums = [math.fsum(p) for p in parts]
        pooled_num, pooled_den = 0.0, 0
        for p in parts:
            if len(p) >= 2:
                s2, _ = sample_variance(p)
                pooled_num += (len(p) - 1) * s2
                pooled_den += len(p) - 1
        s2_inter, _ = sample_variance(sums)
        present = sum(1 for p in parts if p)
        stats[key] = KeyPilotStats(
            m_hat=count / fraction,
            s2_intra=pooled_num / pooled_den if pooled_den else 0.0,
            s2_inter=s2_inter,
            n_clusters=present,
            mean_value=math.fsum(sums) / count,
            participation=present / n_pilot,
            degenerate=present < 2 or pooled_den == 0,
            df_inter=n_pilot - 1,
            df_intra=pooled_den,
        )
    n_records = sum(stat.m_hat for stat in stats.values()) * fraction
    if n_records and top > 0.5 * n_records:
        warnings.warn(
            "pilot key counts are highly skewed; predicted bounds may be unreliable",
            RuntimeWarning,
            stacklevel=2,
        )
    fields_ = ("m_hat", "s2_intra", "s2_inter", "mean_value", "participation")
    avg = {f: float(np.mean([getattr(s, f) for s in stats.values()])) for f in fields_}
    global_average = KeyPilotStats(
        n_clusters=round(np.mean([s.n_clusters for s in stats.values()])),
        df_inter=n_pilot - 1,
        df_intra=min(s.df_intra for s in stats.values()),
        **avg,
    )
    return PilotStats(stats, n_pilot, N, fraction, time.perf_counter() - started, global_average)


class PredictedCDF:
    """Predicted relative bounds across keys, queried by percentile."""

    def __init__(self, keys, bounds):
        self.keys = list(keys)
        self.bounds = np.asarray(bounds, dtype=float)

    def __call__(self, percentile):
        return percentile_ceil(self.bounds.tolist(), percentile)

    def as_dict(self):
        return dict(zip(self.keys, self.bounds.tolist()))


def variance_upper_factor(df, confidence):
    """Multiplier turning a variance estimate with ``df`` degrees of freedom
    into its one-sided upper confidence limit ``df / chi2_{1-c}(df)``."""
    if confidence is None or df < 1:
        return 1.0
    return df / chi2.ppf(1.0 - confidence, df)


def _stat_arrays(stats: PilotStats, pilot_confidence=None):
    keys = list(stats.per_key)
    cols = {
        f: np.array([getattr(stats.per_key[k], f) for k in keys], dtype=float)
        for f in ("m_hat", "s2_intra", "s2_inter", "mean_value", "participation")
    }
    if pilot_confidence is not None:
        # the pilot sees few partitions; plan against an upper limit, not a point value
        for f, df in (("s2_inter", "df_inter"), ("s2_intra", "df_intra")):
            factors = {d: variance_upper_factor(d, pilot_confidence)
                       for d in {getattr(stats.per_key[k], df) for k in keys}}
            cols[f] = cols[f] * np.array([factors[getattr(stats.per_key[k], df)] for k in keys])
    return keys, cols


def _predict(keys, cols, N, p1, p2, spec):
    n = min(N, max(1, round_half_up(N * p1)))
    c = cols["m_hat"] / N  # records with the key per partition
    s2, mean = cols["s2_intra"], cols["mean_value"]
    if p2 < 1.0:
        q = (1.0 - p2) / p2
        # average over partitions of the per-partition variance the full run reports
        v_part = c * q * (s2 + mean**2) + cols["participation"] * q * q * s2
    else:
        v_part = np.zeros_like(c)
    var = N * (N - n) / n * (cols["s2_inter"] + v_part) + N * v_part
    total = np.abs(cols["m_hat"] * mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        if n >= 2:
            eps = spec.t_critical(n - 1) * np.sqrt(var)
        else:
            eps = np.where(var > 0, np.inf, 0.0)
        bounds = np.where(total > 0, eps / total, np.nan)
    keep = ~np.isnan(bounds)
    return PredictedCDF([k for k, ok in zip(keys, keep) if ok], bounds[keep])


def predict_error_cdf(stats: PilotStats, p1, p2, spec: ConfidenceSpec | None = None,
                      pilot_confidence=None):
    """Predicted relative-bound CDF at load rates ``(p1, p2)``.

    With ``pilot_confidence`` the pilot variances are replaced by their
    one-sided upper confidence limits.
    """
    p1, p2 = check_rate(p1, "p1"), check_rate(p2, "p2")
    keys, cols = _stat_arrays(stats, pilot_confidence)
    return _predict(keys, cols, stats.total_partitions, p1, p2, spec or ConfidenceSpec())


def _violation(cdf, targets):
    for p, bound in targets:
        predicted = cdf(p)
        if not predicted <= bound:
            return p, predicted, bound
    return None


def _reject_zero_bounds(targets):
    # only an unsampled run has zero error; that is not an approximation
    for p, bound in targets:
        if bound <= 0:
            raise InfeasibleTargetsError(p, 0.0, bound)


def search_rates(stats: PilotStats, targets: ErrorTargets, cfg: RateSearchConfig | None = None,
                 spec: ConfidenceSpec | None = None):
    """Greedy search: lower the partition rate first, then the item rate.

    Returns ``(p1, p2, predicted_cdf)``; raises
    :class:`InfeasibleTargetsError` when a target fails at ``(1, 1)``.
    """
    cfg = cfg or RateSearchConfig()
    spec = spec or ConfidenceSpec()
    keys, cols = _stat_arrays(stats, cfg.pilot_confidence)
    N = stats.total_partitions

    def cdf_at(p1, p2):
        return _predict(keys, cols, N, p1, p2, spec)

    _reject_zero_bounds(targets)
    bad = _violation(cdf_at(1.0, 1.0), targets)
    if bad:
        raise InfeasibleTargetsError(*bad)

    def walk(feasible):
        i = 0
        while True:
            rate = round(1.0 - (i + 1) * cfg.step, 12)
            if rate < cfg.min_rate - 1e-12 or not feasible(rate):
                return round(1.0 - i * cfg.step, 12)
            i += 1

    p1 = walk(lambda r: _violation(cdf_at(r, 1.0), targets) is None)
    p2 = walk(lambda r: _violation(cdf_at(p1, r), targets) is None)
    return p1, p2, cdf_at(p1, p2)


@dataclass
class TunedRun:
    result: object
    partition_rate: float
    item_rate: float
    predicted: PredictedCDF
    pilot: PilotStats


def run_with_targets(dataset_path, chain, targets, requested_partitions, *,
                     cfg: RateSearchConfig | None = None, seed=0, confidence=0.95, n_jobs=None):
    """Pilot, search, then run the whole job fresh at the chosen rates."""
    spec = ConfidenceSpec(confidence)
    if not isinstance(targets, ErrorTargets):
        targets = ErrorTargets(tuple(targets))
    _reject_zero_bounds(targets)
    parts = read_partitions(dataset_path, requested_partitions)
    full = from_records(parts, SamplingConfig(1.0, 1.0, seed, confidence))
    pilot = run_pilot(full, chain, cfg, seed)
    p1, p2, predicted = search_rates(pilot, targets, cfg, spec)
    logger.info("chosen rates p1=%g p2=%g (pilot %.3fs)", p1, p2, pilot.pilot_wall_time_s)
    sampled = from_records(parts, SamplingConfig(p1, p2, seed, confidence))
    result = execute(sampled, chain, n_jobs=n_jobs)
    result.metadata["pilot_wall_time_s"] = pilot.pilot_wall_time_s
    result.metadata["pilot_partitions"] = pilot.n_pilot
    return TunedRun(result, p1, p2, predicted, pilot)


class RateTuner(BaseEstimator):
    """Estimator-style wrapper: ``fit(dataset, chain)`` finds load rates.

    ``dataset`` must be loaded at rates (1, 1). After fitting,
    ``partition_rate_``, ``item_rate_``, ``predicted_cdf_`` and
    ``pilot_stats_`` are available.
    """

    def __init__(self, targets=((50, 0.1),), pilot_fraction=0.10, step=0.001, min_rate=None,
                 pilot_confidence=0.95, confidence=0.95, random_state=None):
        self.targets = targets
        self.pilot_fraction = pilot_fraction
        self.step = step
        self.min_rate = min_rate
        self.pilot_confidence = pilot_confidence
        self.confidence = confidence
        self.random_state = random_state

    def fit(self, X, chain):
        cfg = RateSearchConfig(self.pilot_fraction, self.step, self.min_rate, self.pilot_confidence)
        targets = self.targets if isinstance(self.targets, ErrorTargets) else ErrorTargets(
            tuple(self.targets)
        )
        self.pilot_stats_ = run_pilot(X, chain, cfg, self.random_state)
        self.partition_rate_, self.item_rate_, self.predicted_cdf_ = search_rates(
            self.pilot_stats_, targets, cfg, ConfidenceSpec(self.confidence)
        )
        return self
