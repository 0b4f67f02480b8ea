"""Data provenance tree mapping in-chain sampling onto a multi-stage sample.

The root (level 0) and the partition nodes (level 1) are created up front;
each partition then grows its own subtree as transforms run. The builder
keeps a *frontier*: the records currently flowing through the chain, each
paired with the internal node that will become its parent in the tree.

A ``FlatMap`` opens a new sampling level when the frontier it expands was
itself sampled (effective rate below one), because dropping an input then
drops the whole group of outputs it would have produced. Every other
transform rewrites the frontier in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ._validation import check_rate


@dataclass(slots=True)
class Leaf:
    key: object
    value: float


@dataclass(slots=True)
class Internal:
    level: int
    children: list = field(default_factory=list)


@dataclass
class ProvenanceTree:
    root: Internal
    level_rates: list
    total_partitions: int

    @property
    def depth(self):
        return len(self.level_rates)


def depth(tree):
    return tree.depth


def level_rates(tree):
    return list(tree.level_rates)


class SubtreeBuilder:
    """Grows the subtree under one partition node."""

    def __init__(self, partition_node, records, item_rate):
        self.node = partition_node
        self.item_rate = check_rate(item_rate, "item_rate")
        self.frontier = [(partition_node, r) for r in records]
        self.frontier_level = 2
        # rates of levels 2..frontier_level; the last entry is still open
        self.rates = [self.item_rate]
        self.finalized = False

    @property
    def k(self):
        """Index of the next level to be created."""
        return self.frontier_level + 1

    @property
    def pending_rate(self):
        """Product of in-chain sample rates applied since the frontier level opened."""
        base = self.item_rate if self.frontier_level == 2 else 1.0
        return self.rates[-1] / base

    @property
    def effective_rate(self):
        return self.rates[-1]

    @property
    def records(self):
        return [rec for _, rec in self.frontier]

    def on_transform(self, op, outputs):
        """Apply ``op``'s ``outputs`` (one list per frontier record) to the tree."""
        from .pipeline import Filter, FlatMap, Map, MapValues, Sample

        if self.finalized:
            raise RuntimeError("builder already finalized")
        if len(outputs) != len(self.frontier):
            raise ValueError(
                f"{type(op).__name__}: {len(outputs)} output groups for {len(self.frontier)} inputs"
            )
        if isinstance(op, (Map, MapValues)):
            if any(len(o) != 1 for o in outputs):
                raise ValueError(f"{type(op).__name__} must produce exactly one output per input")
        elif isinstance(op, (Filter, Sample)):
            if any(len(o) > 1 for o in outputs):
                raise ValueError(f"{type(op).__name__} produces at most one output per input")
        elif not isinstance(op, FlatMap):
            raise TypeError(f"unsupported transform {op!r}")

        if isinstance(op, Sample):
            self.frontier = [(p, o[0]) for (p, _), o in zip(self.frontier, outputs) if o]
            self.rates[-1] *= op.rate
        elif isinstance(op, FlatMap) and self.rates[-1] < 1.0:
            frontier = []
            for (parent, _), outs in zip(self.frontier, outputs):
                if not outs:
                    continue
                node = Internal(self.frontier_level)
                parent.children.append(node)
                frontier.extend((node, o) for o in outs)
            self.frontier = frontier
            self.frontier_level += 1
            self.rates.append(1.0)
        else:
            self.frontier = [(p, o) for (p, _), outs in zip(self.frontier, outputs) for o in outs]
        return self

    def finalize(self, pairs=None):
        """Attach the frontier as leaves and return the rates of levels ``2..d``.

        ``pairs`` optionally replaces the frontier records with validated
        ``(key, value)`` tuples, in frontier order.
        """
        if self.finalized:
            raise RuntimeError("builder already finalized")
        records = self.records if pairs is None else pairs
        for (parent, _), (key, value) in zip(self.frontier, records):
            parent.children.append(Leaf(key, value))
        self.frontier = []
        self.finalized = True
        return list(self.rates)


def init_tree(partitions, partition_rate, item_rate, total_partitions=None):
    """Create root and level-1 nodes plus one builder per partition.

    ``partitions`` are :class:`~approxflow.dataset.Partition` objects (or
    plain record sequences). The returned tree's ``level_rates`` hold only
    the partition rate until :func:`finish_tree` runs.
    """
    partitions = list(partitions)
    if not partitions:
        raise ValueError("at least one selected partition is required")
    partition_rate = check_rate(partition_rate, "partition_rate")
    root = Internal(0)
    builders = []
    for part in partitions:
        records = getattr(part, "records", part)
        node = Internal(1)
        root.children.append(node)
        builders.append(SubtreeBuilder(node, records, item_rate))
    if total_partitions is None:
        total_partitions = len(partitions)
    return ProvenanceTree(root, [partition_rate], total_partitions), builders


def finish_tree(tree, rates_below):
    """Record the level rates ``2..d`` shared by all partitions."""
    tree.level_rates = [tree.level_rates[0], *rates_below]
    return tree


def level_counts(tree):
    """Number of nodes at each level ``0..d`` (leaves at level ``d``)."""
    counts = [0] * (tree.depth + 1)
    stack = [(tree.root, 0)]
    while stack:
        node, level = stack.pop()
        counts[level] += 1
        if isinstance(node, Internal):
            stack.extend((c, level + 1) for c in node.children)
    return counts


def render_tree(tree):
    """Text rendering of the tree shape used for golden tests and debugging."""
    counts = level_counts(tree)
    lines = [f"depth {tree.depth}", "level 0: 1 root"]
    for level in range(1, tree.depth + 1):
        kind = "leaves" if level == tree.depth else "nodes"
        lines.append(f"level {level}: {counts[level]} {kind} rate={tree.level_rates[level - 1]:g}")
    return "\n".join(lines) + "\n"
