"""Smooth one-dimensional profiles shared by the constructions.

Everything here is a piecewise polynomial so that antiderivatives and
derivatives are available in closed form.
"""

from __future__ import annotations

import numpy as np

# normalisation of the bump (1 - t^2)^4 on [-1, 1]
BUMP_NORM = 315.0 / 256.0
BUMP_PROFILE_ID = "poly-bump-(1-t^2)^4"
ETA_PROFILE_ID = "quintic-smoothstep-eta"


def smoothstep(u):
    """Quintic smoothstep 6u^5 - 15u^4 + 10u^3, clamped to [0, 1]."""
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def smoothstep_prime(u):
    u = np.asarray(u, dtype=float)
    inside = (u > 0.0) & (u < 1.0)
    v = np.where(inside, u, 0.0)
    return np.where(inside, 30.0 * v * v * (v - 1.0) ** 2, 0.0)


def eta(t):
    """Radial profile equal to 1 on [0, 1/2] and to 2 on [3/4, oo)."""
    return 1.0 + smoothstep(4.0 * np.asarray(t, dtype=float) - 2.0)


def eta_prime(t):
    return 4.0 * smoothstep_prime(4.0 * np.asarray(t, dtype=float) - 2.0)


def bump(t):
    """Normalised mollifier profile on [-1, 1]."""
    t = np.asarray(t, dtype=float)
    return np.where(np.abs(t) < 1.0, BUMP_NORM * (1.0 - t * t) ** 4, 0.0)


def bump_cdf(t):
    """Mass of the bump on (-1, t]; 0 below -1 and 1 above 1."""
    raw = np.asarray(t, dtype=float)
    t = np.clip(raw, -1.0, 1.0)
    t2 = t * t
    poly = t * (1.0 + t2 * (-4.0 / 3.0 + t2 * (6.0 / 5.0 + t2 * (-4.0 / 7.0 + t2 / 9.0))))
    # exact tails, so far-away intervals contribute nothing at all
    return np.where(raw <= -1.0, 0.0, np.where(raw >= 1.0, 1.0, 0.5 + BUMP_NORM * poly))


def step_down(x, a, b):
    """1 for x <= a, 0 for x >= b, quintic transition in between."""
    return 1.0 - smoothstep((np.asarray(x, dtype=float) - a) / (b - a))


def step_down_prime(x, a, b):
    return -smoothstep_prime((np.asarray(x, dtype=float) - a) / (b - a)) / (b - a)


def plateau(x, lo, hi, width=1.0):
    """1 on [lo, hi], 0 outside (lo - width, hi + width), smooth between."""
    x = np.asarray(x, dtype=float)
    return step_down(lo - x, 0.0, width) * step_down(x - hi, 0.0, width)


def plateau_prime(x, lo, hi, width=1.0):
    x = np.asarray(x, dtype=float)
    left = step_down(lo - x, 0.0, width)
    right = step_down(x - hi, 0.0, width)
    return -step_down_prime(lo - x, 0.0, width) * right + left * step_down_prime(x - hi, 0.0, width)
