"""Smooth window profile shared by sources, readouts, and phantoms."""

from __future__ import annotations

import numpy as np


def smooth_bump(r):
    """Even C^2 polynomial window: 1 on [-1/2, 1/2], 0 outside (-1, 1).

    On the transition 1/2 < |r| < 1 the value is ``1 - s(u)`` with
    ``u = 2|r| - 1`` and the quintic ramp ``s(u) = u**3 * (10 - 15*u + 6*u**2)``,
    which has two vanishing derivatives at both ends. Values lie in [0, 1].
    """
    r = np.abs(np.asarray(r, dtype=float))
    u = np.clip(2.0 * r - 1.0, 0.0, 1.0)
    return 1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u**2)
