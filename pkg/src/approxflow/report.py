"""Run reports: per-key rows, summaries, CSV/JSON writers and comparison."""

from __future__ import annotations

import csv
import io
import json
import math

from .tuner import percentile_ceil

CSV_HEADER = (
    "key", "estimate", "variance", "ci_lo", "ci_hi", "epsilon",
    "relative_bound", "n_level1", "degenerate",
)
PERCENTILES = (10, 50, 90, 100)
KEY_SEPARATOR = "|"


def format_key(key):
    if isinstance(key, tuple):
        return KEY_SEPARATOR.join(format_key(k) for k in key)
    return str(key)


def format_number(x):
    # repr round-trips floats; inf/nan spelled the way float() parses them back
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def parse_number(text):
    return None if text == "" else float(text)


def report_rows(per_key):
    """Rows (dicts) sorted by rendered key."""
    rows = []
    for key, est in per_key.items():
        lo, hi = est.ci
        rows.append({
            "key": format_key(key),
            "estimate": est.tau_hat,
            "variance": est.v_hat,
            "ci_lo": lo,
            "ci_hi": hi,
            "epsilon": est.epsilon,
            "relative_bound": est.relative_bound,
            "n_level1": est.n_level1,
            "degenerate": bool(est.degenerate),
        })
    rows.sort(key=lambda r: r["key"])
    return rows


def bound_percentiles(bounds):
    finite = [b for b in bounds if b is not None]
    return {f"p{p}": (percentile_ceil(finite, p) if finite else None) for p in PERCENTILES}


def summarize(rows, metadata, wall_time_s, exact_keys=None):
    summary = {
        "keys_present": len(rows),
        "error_bound_percentiles": bound_percentiles([r["relative_bound"] for r in rows]),
        "partition_rate": metadata.get("partition_rate"),
        "item_rate": metadata.get("item_rate"),
        "seed": metadata.get("seed"),
        "confidence": metadata.get("confidence"),
        "d": metadata.get("depth"),
        "pipeline": metadata.get("pipeline"),
        "aggregate": metadata.get("aggregate"),
        "wall_time_s": wall_time_s,
    }
    for extra in ("pilot_wall_time_s", "pilot_partitions", "sampler", "reservoir_size"):
        if extra in metadata:
            summary[extra] = metadata[extra]
    if exact_keys is not None:
        present = {r["key"] for r in rows}
        summary["keys_lost_vs_exact"] = sum(1 for k in exact_keys if k not in present)
    return summary


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([r["key"], *(format_number(r[c]) for c in CSV_HEADER[1:])])
    return buf.getvalue()


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return format_number(x)
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


def report_json(rows, summary):
    """JSON envelope ``{"schema", "summary", "rows"}``; non-finite numbers become strings."""
    doc = {"schema": "approxflow.report/1", "summary": summary, "rows": rows}
    return json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n"


def read_report(path):
    """Read a CSV or JSON report back into rows with numeric fields parsed."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        rows = json.loads(text)["rows"]
        for r in rows:
            for c in CSV_HEADER[1:]:
                if isinstance(r[c], str):
                    r[c] = float(r[c])
        return rows
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader, ()))
    if header != CSV_HEADER:
        raise ValueError(f"{path}: not a report (header {','.join(header)!r})")
    rows = []
    for fields in reader:
        r = dict(zip(CSV_HEADER, fields))
        for c in ("estimate", "variance", "ci_lo", "ci_hi", "epsilon", "relative_bound"):
            r[c] = parse_number(r[c])
        r["n_level1"] = int(r["n_level1"])
        r["degenerate"] = r["degenerate"] == "true"
        rows.append(r)
    return rows


def exact_to_csv(values):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("key", "value"))
    for key, value in sorted((format_key(k), v) for k, v in values.items()):
        writer.writerow((key, format_number(value)))
    return buf.getvalue()


def read_exact(path):
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != ("key", "value"):
            raise ValueError(f"{path}: not an exact result (header {','.join(header)!r})")
        return {k: float(v) for k, v in reader}


def compare(rows, exact):
    """Estimated bounds against actual errors for keys shared with ``exact``.

    Returns ``(per_key, summary)``; ``per_key`` rows carry the actual error
    ``|1 - estimate/exact|`` (``None`` when the exact value is zero).
    """
    approx = {r["key"]: r for r in rows}
    unknown = [k for k in approx if k not in exact]
    if approx and len(unknown) == len(approx):
        raise ValueError("no approximate key matches the exact result; key formats differ")
    per_key = []
    contained = 0
    for key in sorted(k for k in approx if k in exact):
        r, v = approx[key], exact[key]
        actual = abs(1.0 - r["estimate"] / v) if v != 0 else None
        inside = r["ci_lo"] <= v <= r["ci_hi"]
        contained += inside
        per_key.append({
            "key": key,
            "estimate": r["estimate"],
            "exact": v,
            "actual_error": actual,
            "relative_bound": r["relative_bound"],
            "ci_contains": inside,
        })
    shared = len(per_key)
    summary = {
        "exact_keys": len(exact),
        "shared_keys": shared,
        "keys_lost": len(exact) - shared,
        "key_loss_fraction": (len(exact) - shared) / len(exact) if exact else 0.0,
        "extra_keys": len(unknown),
        "estimated_bound_percentiles": bound_percentiles([p["relative_bound"] for p in per_key]),
        "actual_error_percentiles": bound_percentiles([p["actual_error"] for p in per_key]),
        "ci_containment": contained / shared if shared else None,
    }
    return per_key, summary
