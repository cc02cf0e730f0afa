"""Doubly-warped metrics ``g = a(s)^2 ds^2 + b(s)^2 g_kappa``.

A metric is stored relative to a space-form background whose warping
profile ``B(s)`` is known analytically::

    a = exp(alpha),   b = B(s) * exp(beta)

so ``alpha = beta = 0`` reproduces hyperbolic space, the round sphere or a
flat product exactly on any grid.  Only the perturbations ``alpha`` and
``beta`` are differentiated numerically; the background enters through exact
values of ``B'/B`` and its sectional curvature.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from crflow.errors import DegenerateMetricError, GridError
from crflow.geometry.grid import POLE, Family, RadialGrid, fill_poles_even


@dataclass(frozen=True)
class Background:
    """Space form ``a = 1, b = B(s)`` of constant sectional curvature ``k0``."""

    kind: str  # "hyperbolic" | "sphere" | "flat"
    radius: float = 1.0

    @property
    def kappa(self) -> int:
        return 0 if self.kind == "flat" else 1

    @property
    def curvature(self) -> float:
        if self.kind == "hyperbolic":
            return -1.0
        if self.kind == "sphere":
            return 1.0 / self.radius ** 2
        return 0.0

    def profile(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "hyperbolic":
            return np.sinh(s)
        if self.kind == "sphere":
            return self.radius * np.sin(s / self.radius)
        return np.full_like(s, self.radius)

    def log_derivative(self, s):
        """``B'/B``; infinite at poles (callers mask pole nodes)."""
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "hyperbolic":
                return 1.0 / np.tanh(s)
            if self.kind == "sphere":
                return 1.0 / (self.radius * np.tan(s / self.radius))
        return np.zeros_like(s)

    def log_derivative_minus_one(self, s):
        """``coth(s) - 1`` without cancellation (hyperbolic only)."""
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return 2.0 / np.expm1(2.0 * s)


@dataclass(frozen=True, eq=False)
class SymmetricMetric:
    """Rotationally symmetric metric on an AH ball or closed model manifold.

    ``m`` is the fiber dimension (the manifold has dimension ``m + 1``) and
    ``c`` the constant of the compact flow, scalar target ``2 n c``.
    """

    grid: RadialGrid
    m: int
    background: Background
    alpha: np.ndarray
    beta: np.ndarray
    c: float | None = None

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise GridError(f"fiber dimension m must be an integer >= 2, got {self.m}")
        alpha = np.array(self.alpha, dtype=float)
        beta = np.array(self.beta, dtype=float)
        n = self.grid.n_points
        if alpha.shape != (n,) or beta.shape != (n,):
            raise GridError("alpha/beta must have one value per grid node")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
            raise DegenerateMetricError("non-finite metric coefficients (blow-up upstream)")
        alpha.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        if self.family is Family.CLOSED and self.c is None:
            raise GridError("closed metrics need the flow constant c")

    # -- basic fields ------------------------------------------------------
    @property
    def family(self) -> Family:
        return self.grid.family

    @property
    def kappa(self) -> int:
        return self.background.kappa

    @property
    def n(self) -> int:
        return self.m + 1

    @property
    def s(self) -> np.ndarray:
        return self.grid.s_values

    @property
    def a(self) -> np.ndarray:
        return np.exp(self.alpha)

    @property
    def b(self) -> np.ndarray:
        b = self.background.profile(self.s) * np.exp(self.beta)
        for i in self.grid.pole_indices():
            b[i] = 0.0
        return b

    @property
    def scalar_target(self) -> float:
        if self.family is Family.AH_BALL:
            return -float(self.m * (self.m + 1))
        return 2.0 * self.n * float(self.c)

    @property
    def einstein_shift(self) -> float:
        """Constant ``lam`` with Einstein deviation ``Rc - lam g``."""
        if self.family is Family.AH_BALL:
            return -float(self.m)
        return 2.0 * float(self.c)

    def with_fields(self, alpha, beta) -> "SymmetricMetric":
        return replace(self, alpha=alpha, beta=beta)

    def pole_regularity_defect(self) -> float:
        """max over poles of ``| |b'/a| - 1 |``; zero for a smooth closing."""
        out = 0.0
        for i in self.grid.pole_indices():
            out = max(out, abs(np.expm1(self.beta[i] - self.alpha[i])))
        return out

    def check(self) -> None:
        if not (np.all(np.isfinite(self.alpha)) and np.all(np.isfinite(self.beta))):
            raise DegenerateMetricError("non-finite metric coefficients")


def _grid_for(family, m, grid_params, kappa):
    n_points = grid_params.get("n_points")
    if family is Family.AH_BALL:
        return RadialGrid.ah(grid_params.get("s_max"), n_points)
    length = grid_params.get("L", np.pi if kappa == 1 else 2 * np.pi)
    return RadialGrid.closed(length, n_points, periodic=(kappa == 0))


def build_background(family, m: int, c: float | None = None, kappa: int = 1,
                     radius: float = 1.0, **grid_params) -> SymmetricMetric:
    """Reference space form on a fresh grid.

    AH_BALL: hyperbolic space ``a = 1, b = sinh(s)`` on ``[0, s_max]``.
    CLOSED, kappa=1: round sphere ``b = r sin(s/r)`` on ``[0, pi r]``.
    CLOSED, kappa=0: flat product, ``b = radius`` on a circle of length ``L``.
    For CLOSED the default ``c`` is the Einstein value (``(n-1)/(2 r^2)`` or 0).
    """
    family = Family(family)
    if int(m) != m or m < 2:
        raise GridError(f"fiber dimension m must be an integer >= 2, got {m}")
    for key, val in grid_params.items():
        if val is None or not np.isfinite(val) or val <= 0:
            raise GridError(f"grid parameter {key} must be positive, got {val}")
    if family is Family.AH_BALL:
        if kappa != 1:
            raise GridError("AH_BALL requires a spherical fiber (kappa = 1)")
        if "s_max" not in grid_params or "n_points" not in grid_params:
            raise GridError("AH_BALL needs s_max and n_points")
        bg = Background("hyperbolic")
    elif kappa == 1:
        length = grid_params.setdefault("L", np.pi * radius)
        radius = length / np.pi
        bg = Background("sphere", radius)
    elif kappa == 0:
        grid_params.setdefault("L", 2 * np.pi)
        bg = Background("flat", radius)
    else:
        raise GridError(f"unsupported family/kappa combination: {family.value}/{kappa}")
    if "n_points" not in grid_params:
        raise GridError("n_points is required")
    grid = _grid_for(family, m, grid_params, kappa)
    if family is Family.CLOSED and c is None:
        c = (m / (2.0 * radius ** 2)) if kappa == 1 else 0.0
    zeros = np.zeros(grid.n_points)
    return SymmetricMetric(grid, int(m), bg, zeros, zeros, c)


def metric_from_profiles(template: SymmetricMetric, a, b) -> SymmetricMetric:
    """Wrap user-supplied ``a, b`` nodal profiles on ``template``'s grid."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    grid = template.grid
    if np.any(a <= 0):
        raise DegenerateMetricError("lapse a must be positive")
    interior = np.ones(grid.n_points, dtype=bool)
    interior[grid.pole_indices()] = False
    if np.any(b[interior] <= 0):
        raise DegenerateMetricError("warping b must be positive away from poles")
    B = template.background.profile(grid.s_values)
    beta = np.zeros_like(b)
    beta[interior] = np.log(b[interior] / B[interior])
    beta = fill_poles_even(beta, grid) if grid.pole_indices() else beta
    return template.with_fields(np.log(a), beta)


def perturbed(base: SymmetricMetric, dalpha=None, dbeta=None) -> SymmetricMetric:
    """Add log-perturbations to ``base``."""
    alpha = base.alpha + (0.0 if dalpha is None else np.asarray(dalpha, dtype=float))
    beta = base.beta + (0.0 if dbeta is None else np.asarray(dbeta, dtype=float))
    return base.with_fields(alpha, beta)


def is_pole(grid: RadialGrid, end: int) -> bool:
    return grid.ends[end] == POLE
