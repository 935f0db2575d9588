"""Angle and finiteness helpers shared across modules."""

import math

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap ``a`` into (-pi, pi]; +pi maps to itself, -pi maps to +pi."""
    if -math.pi < a <= math.pi:
        return float(a)
    w = math.fmod(a + math.pi, TWO_PI)
    if w <= 0.0:
        w += TWO_PI
    return w - math.pi


def all_finite(*values) -> bool:
    """True when every entry of the given 1-D numpy arrays and floats is finite.

    Checking plain floats beats numpy reductions on tiny arrays.
    """
    for v in values:
        if hasattr(v, "tolist"):
            if not all(map(math.isfinite, v.tolist())):
                return False
        elif not math.isfinite(v):
            return False
    return True
