"""Sum and variance estimators for multi-stage cluster samples.

Two families live here:

* textbook estimators with known populations (``two_stage_*`` and the
  recursive ``multistage_*`` over :class:`SampleNode` trees);
* the per-key estimator used on provenance trees (:func:`compute_tree`),
  which estimates unknown per-key populations below the partition level
  with a negative-binomial model and adds the variance that estimation
  introduces.

At the partition level the population ``N`` is always known, so every key
is estimated over all selected partitions, with a zero total for
partitions that never produced the key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Hashable, Sequence

from scipy import stats as _st

from ._validation import check_confidence, check_rate


@dataclass(frozen=True)
class PopulationEstimate:
    value: float
    variance: float
    exact: bool


@dataclass(frozen=True)
class ClusterStats:
    """Per-key statistics of one cluster (a node of the provenance tree)."""

    tau_hat: float
    v_hat: float
    n: int
    pop: PopulationEstimate
    degenerate: bool = False


@dataclass(frozen=True)
class KeyEstimate:
    key: Hashable
    tau_hat: float
    v_hat: float
    epsilon: float
    n_level1: int
    degenerate: bool = False

    @property
    def ci(self):
        return (self.tau_hat - self.epsilon, self.tau_hat + self.epsilon)

    @property
    def relative_bound(self):
        """``epsilon / |tau_hat|``; ``None`` when the estimate is zero."""
        if self.tau_hat == 0:
            return None
        return self.epsilon / abs(self.tau_hat)


@dataclass(frozen=True)
class ConfidenceSpec:
    level: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "level", check_confidence(self.level))

    def t_critical(self, df):
        """Two-sided Student-t critical value ``t_{df, 1 - alpha/2}``."""
        return _t_quantile(self.level, float(df))


@lru_cache(maxsize=4096)
def _t_quantile(level, df):
    return float(_st.t.ppf(0.5 + level / 2.0, df))


# -- small building blocks -------------------------------------------------


def sample_variance(values):
    """Unbiased sample variance and a degeneracy flag (``count < 2``)."""
    n = len(values)
    if n < 2:
        return 0.0, True
    mean = math.fsum(values) / n
    return math.fsum((v - mean) ** 2 for v in values) / (n - 1), False


def estimate_population(sample_count, rate):
    """Negative-binomial population estimate from ``sample_count`` survivors at ``rate``."""
    rate = check_rate(rate)
    if sample_count < 0:
        raise ValueError("sample_count must be >= 0")
    if rate == 1.0:
        return PopulationEstimate(float(sample_count), 0.0, True)
    if sample_count == 0:
        return PopulationEstimate(0.0, 0.0, False)
    return PopulationEstimate(
        sample_count / rate, sample_count * (1.0 - rate) / rate**2, False
    )


def product_variance(ex, vx, ey, vy):
    """Variance of a product of independent estimates: ``Ex^2 Vy + Ey^2 Vx + Vx Vy``."""
    if vx < 0 or vy < 0:
        raise ValueError("variances must be non-negative")
    return ex * ex * vy + ey * ey * vx + vx * vy


def _stage_total(population, totals):
    return population / len(totals) * math.fsum(totals)


def _stage_variance(population, n, s2, child_variances=()):
    # N(N - n) s^2 / n + (N / n) * sum of child variances
    between = population * (population - n) * s2 / n
    return max(between, 0.0) + population / n * math.fsum(child_variances)


# -- known-population estimators -----------------------------------------


def _check_two_stage(N, n, clusters):
    if n < 1 or n > N:
        raise ValueError(f"need 1 <= n <= N, got n={n}, N={N}")
    if len(clusters) != n:
        raise ValueError(f"n={n} but {len(clusters)} clusters given")
    for M, m, values in clusters:
        if m < 1 or m > M:
            raise ValueError(f"need 1 <= m_i <= M_i, got m={m}, M={M}")
        if len(values) != m:
            raise ValueError(f"m_i={m} but {len(values)} values given")


def two_stage_sum(N, n, clusters):
    """Two-stage cluster-sample total ``(N/n) sum_i (M_i/m_i) sum_j v_ij``.

    ``clusters`` is a sequence of ``(M_i, m_i, values)``.
    """
    _check_two_stage(N, n, clusters)
    # closed form, kept apart from the recursive route on purpose
    return N / n * math.fsum(M / m * math.fsum(vals) for M, m, vals in clusters)


def two_stage_variance(N, n, clusters, *, return_degenerate=False):
    """Estimated variance of :func:`two_stage_sum`.

    ``N(N-n) S_u^2/n + (N/n) sum_i M_i (M_i - m_i) S_i^2 / m_i``, where
    ``S_u^2`` is the sample variance of the estimated cluster totals.
    """
    _check_two_stage(N, n, clusters)
    degenerate = False
    totals, intra = [], []
    for M, m, vals in clusters:
        vals = list(vals)
        totals.append(M / m * math.fsum(vals))
        s2, deg = sample_variance(vals)
        degenerate |= deg and M > m
        intra.append(M * (M - m) * s2 / m)
    s2u, deg = sample_variance(totals)
    degenerate |= deg and N > n
    v = N * (N - n) * s2u / n + N / n * math.fsum(intra)
    return (v, degenerate) if return_degenerate else v


@dataclass
class SampleNode:
    """A sampled cluster with a known number of sub-units.

    ``children`` holds either further :class:`SampleNode` objects or, for a
    cluster at the last sampling stage, plain leaf values.
    """

    population: float
    children: list = field(default_factory=list)

    @property
    def is_last_stage(self):
        return not any(isinstance(c, SampleNode) for c in self.children)


def _multistage(node):
    if not node.children:
        raise ValueError("a sampled cluster must have at least one child")
    n = len(node.children)
    if node.population < n:
        raise ValueError(f"population {node.population} smaller than sample {n}")
    if node.is_last_stage:
        values = [float(v) for v in node.children]
        s2, deg = sample_variance(values)
        return (
            _stage_total(node.population, values),
            _stage_variance(node.population, n, s2),
            deg and node.population > n,
        )
    results = [_multistage(c) for c in node.children]
    totals = [r[0] for r in results]
    s2, deg = sample_variance(totals)
    return (
        _stage_total(node.population, totals),
        _stage_variance(node.population, n, s2, [r[1] for r in results]),
        (deg and node.population > n) or any(r[2] for r in results),
    )


def multistage_sum(node: SampleNode):
    """Recursive multi-stage estimate of the total below ``node``."""
    return _multistage(node)[0]


def multistage_variance(node: SampleNode, *, return_degenerate=False):
    """Recursive multi-stage variance estimate; degeneracy flags OR upward."""
    _, v, deg = _multistage(node)
    return (v, deg) if return_degenerate else v


# -- population-estimated variants ----------------------------------------


def nb_augmented_two_stage_variance(p1, p2, clusters, *, return_degenerate=False):
    """Two-stage variance when both populations are estimated from rates.

    ``clusters`` holds ``(m_i, values)`` for each observed cluster. Cluster
    counts and per-cluster item counts are estimated as ``n/p1`` and
    ``m_i/p2``; the variance of each estimate enters through
    :func:`product_variance`.
    """
    p1, p2 = check_rate(p1, "p1"), check_rate(p2, "p2")
    n = len(clusters)
    if n == 0:
        raise ValueError("no observed clusters")
    degenerate = False
    totals, intra = [], []
    for m, values in clusters:
        values = [float(v) for v in values]
        if m != len(values) or m < 1:
            raise ValueError(f"m_i={m} does not match {len(values)} values")
        pop_m = estimate_population(m, p2)
        mean_i = math.fsum(values) / m
        s2_i, deg = sample_variance(values)
        degenerate |= deg and p2 < 1
        var_mean_i = (1.0 - p2) * s2_i / m
        totals.append(pop_m.value * mean_i)
        intra.append(product_variance(pop_m.value, pop_m.variance, mean_i, var_mean_i))
    pop_n = estimate_population(n, p1)
    mean_t = math.fsum(totals) / n
    s2_t, deg = sample_variance(totals)
    degenerate |= deg and p1 < 1
    var_inter = product_variance(pop_n.value, pop_n.variance, mean_t, (1.0 - p1) * s2_t / n)
    v = var_inter + math.fsum(intra) / p1
    return (v, degenerate) if return_degenerate else v


def cluster_stats(totals, variances, rate):
    """Per-key statistics of a cluster whose sub-units were kept at ``rate``.

    ``totals``/``variances`` describe the participating sub-units (those with
    at least one leaf of the key); leaf values carry zero variance. The
    population of sub-units is estimated as ``n/rate`` and the Eq.-(4)-style
    between term is augmented by the population-estimation variance.
    """
    n = len(totals)
    pop = estimate_population(n, rate)
    tau = _stage_total(pop.value, totals)
    if pop.exact:
        return ClusterStats(tau, math.fsum(variances), n, pop, False)
    s2, deg = sample_variance(totals)
    mean = math.fsum(totals) / n
    var_mean = (1.0 - rate) * s2 / n
    v = _stage_variance(pop.value, n, s2, variances)
    v += mean * mean * pop.variance + pop.variance * var_mean
    return ClusterStats(tau, v, n, pop, deg)


def confidence_interval(tau_hat, v_hat, n_level1, spec: ConfidenceSpec):
    """Half-width and bounds ``tau_hat -/+ t_{n-1} sqrt(v_hat)``.

    A zero variance yields a zero half-width; otherwise fewer than two
    level-1 clusters leave the interval unbounded (``inf``).
    """
    if v_hat < 0:
        raise ValueError("variance must be non-negative")
    if v_hat == 0:
        eps = 0.0
    elif n_level1 < 2:
        eps = math.inf
    else:
        eps = spec.t_critical(n_level1 - 1) * math.sqrt(v_hat)
    return eps, tau_hat - eps, tau_hat + eps


# -- provenance-tree traversal --------------------------------------------


def summarize_partition(node, level_rates: Sequence[float], *, count_only=False):
    """Per-key :class:`ClusterStats` for one partition subtree.

    ``node`` is a level-1 provenance node; ``level_rates[k]`` is the rate at
    which children of level-``k`` nodes were kept. With ``count_only`` every
    leaf contributes 1 instead of its value (population-size estimation).
    """
    depth = len(level_rates)
    return _visit(node, 1, depth, level_rates, count_only)


def _visit(node, level, depth, rates, count_only):
    rate = rates[level]
    per_key: dict = {}
    if level == depth - 1:
        for leaf in node.children:
            per_key.setdefault(leaf.key, []).append(1.0 if count_only else float(leaf.value))
        return {k: cluster_stats(vals, (), rate) for k, vals in per_key.items()}
    for child in node.children:
        for key, st in _visit(child, level + 1, depth, rates, count_only).items():
            per_key.setdefault(key, []).append(st)
    out = {}
    for key, children in per_key.items():
        st = cluster_stats([c.tau_hat for c in children], [c.v_hat for c in children], rate)
        if any(c.degenerate for c in children):
            st = ClusterStats(st.tau_hat, st.v_hat, st.n, st.pop, True)
        out[key] = st
    return out


@dataclass(frozen=True)
class RootStats:
    tau_hat: float
    v_hat: float
    n_selected: int
    participating: int
    degenerate: bool


def merge_partitions(summaries, total_partitions):
    """Combine per-partition summaries at the root.

    Every selected partition counts toward ``n``; a partition without the
    key contributes a zero total. Returns ``key -> RootStats``.
    """
    n = len(summaries)
    N = total_partitions
    if n < 1 or n > N:
        raise ValueError(f"need 1 <= selected partitions <= N, got {n} of {N}")
    grouped: dict = {}
    for summary in summaries:
        for key, st in summary.items():
            grouped.setdefault(key, []).append(st)
    out = {}
    for key, present in grouped.items():
        totals = [s.tau_hat for s in present]
        mean = math.fsum(totals) / n
        if n > 1:
            ss = math.fsum((t - mean) ** 2 for t in totals) + (n - len(present)) * mean * mean
            s2 = ss / (n - 1)
        else:
            s2 = 0.0
        tau = N / n * math.fsum(totals)
        v = _stage_variance(N, n, s2, [s.v_hat for s in present])
        degenerate = any(s.degenerate for s in present) or (N > n and len(present) < 2)
        out[key] = RootStats(tau, v, n, len(present), degenerate)
    return out


def key_estimates(sums, spec: ConfidenceSpec, counts=None):
    """Turn root statistics into :class:`KeyEstimate` objects.

    With ``counts`` (root statistics over unit leaves) the estimate is the
    per-key mean ``tau / M_hat`` with plug-in variance ``V / M_hat^2``.
    """
    out = {}
    for key, st in sums.items():
        tau, v = st.tau_hat, st.v_hat
        if counts is not None:
            pop = counts[key].tau_hat
            tau, v = tau / pop, v / (pop * pop)
        eps, _, _ = confidence_interval(tau, v, st.n_selected, spec)
        out[key] = KeyEstimate(key, tau, v, eps, st.participating, st.degenerate)
    return out


def compute_tree(tree, spec: ConfidenceSpec | None = None, *, aggregate="sum"):
    """Per-key estimates with confidence intervals for a finished provenance tree."""
    spec = spec or ConfidenceSpec()
    rates = tree.level_rates
    parts = tree.root.children
    sums = merge_partitions([summarize_partition(p, rates) for p in parts], tree.total_partitions)
    counts = None
    if aggregate == "mean":
        counts = merge_partitions(
            [summarize_partition(p, rates, count_only=True) for p in parts], tree.total_partitions
        )
    elif aggregate != "sum":
        raise ValueError(f"unknown aggregate {aggregate!r}")
    return key_estimates(sums, spec, counts)
