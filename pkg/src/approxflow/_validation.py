"""Argument checks shared by the public entry points."""

import math
import numbers


def check_rate(rate, name="rate", *, inclusive_one=True):
    """Validate a sampling rate in (0, 1] (or (0, 1) when ``inclusive_one`` is False)."""
    if isinstance(rate, bool) or not isinstance(rate, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {rate!r}")
    rate = float(rate)
    upper_ok = rate <= 1.0 if inclusive_one else rate < 1.0
    if not (rate > 0.0 and upper_ok):
        bounds = "(0, 1]" if inclusive_one else "(0, 1)"
        raise ValueError(f"{name} must lie in {bounds}, got {rate!r}")
    return rate


def check_confidence(level):
    if isinstance(level, bool) or not isinstance(level, numbers.Real):
        raise TypeError(f"confidence must be a real number, got {level!r}")
    level = float(level)
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {level!r}")
    return level


def check_count(value, name, minimum=0):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def is_real(value):
    return isinstance(value, numbers.Real) and not isinstance(value, bool)


def round_half_up(x):
    """Round to the nearest integer with ties going up (not banker's rounding)."""
    return int(math.floor(x + 0.5))
