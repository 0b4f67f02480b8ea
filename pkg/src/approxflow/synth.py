"""Deterministic keyed-value data generator with ground truth.

Output is one ``part-XXXXX.txt`` file per partition holding ``key,value``
lines, plus ``manifest.json`` with the generator parameters, the exact
per-key sums and the per-key item counts.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._rng import STAGE_SYNTH, stream
from ._validation import check_count

_CALL = re.compile(r"^\s*([a-z]+)\s*(?:\(([^)]*)\))?\s*$")


def _parse_call(text, allowed):
    m = _CALL.match(str(text))
    if not m or m.group(1) not in allowed:
        raise ValueError(f"unrecognised distribution {text!r}; expected one of {', '.join(allowed)}")
    name, raw = m.group(1), m.group(2)
    args = []
    if raw is not None and raw.strip():
        try:
            args = [float(a) for a in raw.split(",")]
        except ValueError:
            raise ValueError(f"non-numeric parameter in {text!r}") from None
    if len(args) != allowed[name]:
        raise ValueError(f"{name} takes {allowed[name]} parameter(s), got {len(args)}")
    return name, args


@dataclass(frozen=True)
class KeyDistribution:
    name: str
    s: float = 0.0

    @classmethod
    def parse(cls, text):
        name, args = _parse_call(text, {"uniform": 0, "zipf": 1})
        if name == "zipf":
            if not args[0] > 0 or math.isinf(args[0]):
                raise ValueError(f"zipf exponent must be positive and finite, got {args[0]:g}")
            return cls("zipf", args[0])
        return cls("uniform")

    def probabilities(self, n_keys):
        if self.name == "uniform":
            return np.full(n_keys, 1.0 / n_keys)
        w = np.arange(1, n_keys + 1, dtype=float) ** -self.s
        return w / w.sum()

    def __str__(self):
        return f"zipf({self.s:g})" if self.name == "zipf" else "uniform"


@dataclass(frozen=True)
class ValueDistribution:
    name: str
    a: float = 0.0
    b: float = 1.0

    @classmethod
    def parse(cls, text):
        name, args = _parse_call(text, {"uniform": 0, "normal": 2, "constant": 1})
        if name == "normal":
            if args[1] < 0 or not all(map(math.isfinite, args)):
                raise ValueError("normal(mu, sigma) needs finite mu and sigma >= 0")
            return cls("normal", *args)
        if name == "constant":
            if not math.isfinite(args[0]):
                raise ValueError("constant value must be finite")
            return cls("constant", args[0], 0.0)
        return cls("uniform")

    def draw(self, rng, size):
        if self.name == "uniform":
            return rng.random(size)
        if self.name == "normal":
            return rng.normal(self.a, self.b, size)
        return np.full(size, self.a)

    def __str__(self):
        if self.name == "normal":
            return f"normal({self.a:g},{self.b:g})"
        if self.name == "constant":
            return f"constant({self.a:g})"
        return "uniform"


def key_name(index, width):
    return f"k{index:0{width}d}"


def generate(keys, partitions, items_per_partition, distribution="uniform",
             value_dist="uniform", seed=0):
    """Generate partitions in memory.

    Returns ``(parts, truth)`` where ``parts`` is a list of lists of
    ``(key, value)`` tuples and ``truth`` maps key to ``(sum, count)``.
    Integer-valued constants are emitted as ``int`` so sums stay exact.
    """
    keys = check_count(keys, "keys", minimum=1)
    partitions = check_count(partitions, "partitions", minimum=1)
    items = check_count(items_per_partition, "items_per_partition", minimum=0)
    kd = distribution if isinstance(distribution, KeyDistribution) else KeyDistribution.parse(distribution)
    vd = value_dist if isinstance(value_dist, ValueDistribution) else ValueDistribution.parse(value_dist)
    probs = kd.probabilities(keys)
    width = len(str(keys - 1))
    names = [key_name(i, width) for i in range(keys)]
    as_int = vd.name == "constant" and float(vd.a).is_integer()
    parts = []
    values_by_key: dict = {}
    for p in range(partitions):
        rng = stream(seed, STAGE_SYNTH, p)
        idx = rng.choice(keys, size=items, p=probs)
        vals = vd.draw(rng, items)
        part = []
        for i, v in zip(idx.tolist(), vals.tolist()):
            v = int(v) if as_int else float(v)
            part.append((names[i], v))
            values_by_key.setdefault(names[i], []).append(v)
        parts.append(part)
    truth = {
        k: (sum(v) if as_int else math.fsum(v), len(v)) for k, v in sorted(values_by_key.items())
    }
    return parts, truth


def format_value(v):
    return str(v) if isinstance(v, int) else repr(float(v))


def write_dataset(out_dir, keys, partitions, items_per_partition, distribution="uniform",
                  value_dist="uniform", seed=0):
    """Generate and write partition files plus ``manifest.json``; returns the manifest."""
    kd = KeyDistribution.parse(distribution) if isinstance(distribution, str) else distribution
    vd = ValueDistribution.parse(value_dist) if isinstance(value_dist, str) else value_dist
    parts, truth = generate(keys, partitions, items_per_partition, kd, vd, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for stale in out.glob("part-*.txt"):
        stale.unlink()
    for i, part in enumerate(parts):
        lines = "".join(f"{k},{format_value(v)}\n" for k, v in part)
        (out / f"part-{i:05d}.txt").write_text(lines)
    manifest = {
        "params": {
            "keys": keys,
            "partitions": partitions,
            "items_per_partition": items_per_partition,
            "distribution": str(kd),
            "value_dist": str(vd),
            "seed": seed,
        },
        "key_distribution": asdict(kd),
        "value_distribution": asdict(vd),
        "true_sums": {k: s for k, (s, _) in truth.items()},
        "counts": {k: c for k, (_, c) in truth.items()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
