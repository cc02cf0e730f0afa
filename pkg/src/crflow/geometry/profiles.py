"""Smooth radial perturbation profiles for initial data.

AH profiles are smooth functions of the defining function ``x = e^{-s}``
(through ``sech s = 2x / (1 + x^2)``), even at the pole and vanishing there
so that the metric closes smoothly.  A profile with decay ``k`` is
``O(x^k)`` at the conformal boundary.
"""
from __future__ import annotations

import numpy as np

from crflow.errors import GridError
from crflow.geometry.grid import Family
from crflow.geometry.metric import SymmetricMetric

PROFILE_IDS = ("warp", "lapse", "both", "random")


def ah_bump(s, decay: float = 2.0):
    """``tanh^2(s) sech^k(s)`` scaled to unit maximum.

    Zero and even at the pole, ``O(x^k)`` far out.  With ``u = tanh^2`` the
    profile is ``u (1 - u)^{k/2}``, maximal at ``u = 2 / (2 + k)``.
    """
    s = np.asarray(s, dtype=float)
    u_star = 2.0 / (2.0 + decay)
    peak = u_star * (1.0 - u_star) ** (decay / 2.0)
    return np.tanh(s) ** 2 / np.cosh(s) ** decay / peak


def closed_bump(s, length: float, mode: int = 1):
    """``sin^2(pi s / L) cos(mode pi s / L)``: even about both poles, zero there."""
    s = np.asarray(s, dtype=float)
    th = np.pi * s / length
    return np.sin(th) ** 2 * np.cos(mode * th)


def perturbation_fields(metric: SymmetricMetric, amplitude: float, profile: str = "warp",
                        decay: float = 2.0, seed: int = 0):
    """Log-perturbations ``(dalpha, dbeta)`` for ``metric``'s grid.

    ``warp`` perturbs only ``b``, ``lapse`` only ``a``, ``both`` applies the
    same bump to both (a conformal-looking change), ``random`` draws a seeded
    combination of bumps of decays ``decay, decay+1, decay+2`` for each field.
    """
    if profile not in PROFILE_IDS:
        raise GridError(f"unknown perturbation profile {profile!r}; choose from {PROFILE_IDS}")
    grid = metric.grid
    s = grid.s_values
    zero = np.zeros_like(s)
    if amplitude == 0:
        return zero, zero
    if grid.family is Family.AH_BALL:
        bumps = [ah_bump(s, decay + j) for j in range(3)]
    elif grid.periodic:
        L = grid.s_max
        bumps = [np.cos(2 * np.pi * (j + 1) * s / L) for j in range(3)]
    else:
        bumps = [closed_bump(s, grid.s_max, j + 1) for j in range(3)]
    if profile == "warp":
        return zero, amplitude * bumps[0]
    if profile == "lapse":
        return amplitude * bumps[0], zero
    if profile == "both":
        return amplitude * bumps[0], amplitude * bumps[0]
    rng = np.random.default_rng(seed)
    ca = rng.uniform(-1.0, 1.0, size=3)
    cb = rng.uniform(-1.0, 1.0, size=3)
    ca /= np.sum(np.abs(ca))
    cb /= np.sum(np.abs(cb))
    dalpha = amplitude * sum(c * f for c, f in zip(ca, bumps))
    dbeta = amplitude * sum(c * f for c, f in zip(cb, bumps))
    return dalpha, dbeta
