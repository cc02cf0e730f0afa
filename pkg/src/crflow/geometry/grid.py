"""Radial grids and second-order finite-difference stencils.

The radial coordinate ``s`` is arclength-like.  On the asymptotically
hyperbolic ball the conformal boundary sits at ``s = inf`` and the geodesic
defining function is recovered as ``x = exp(-s)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from crflow.errors import GridError


class Family(str, Enum):
    AH_BALL = "AH_BALL"
    CLOSED = "CLOSED"


POLE = "pole"
OUTER = "outer"
PERIODIC = "periodic"


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Uniform grid ``s_0 = 0 < s_1 < ... < s_{N-1}``.

    ``ends`` records the boundary type at each end: ``"pole"`` (smooth
    closing of the fiber, parity ghost points), ``"outer"`` (AH truncation,
    one-sided stencils) or ``"periodic"`` (flat circle; the last node
    duplicates the first).
    """

    n_points: int
    s_max: float
    family: Family
    ends: tuple = (POLE, OUTER)
    s_values: np.ndarray = field(init=False, repr=False)
    spacing: float = field(init=False)

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 5:
            raise GridError(f"n_points must be an integer >= 5, got {self.n_points}")
        if not np.isfinite(self.s_max) or self.s_max <= 0:
            raise GridError(f"grid extent must be positive, got {self.s_max}")
        object.__setattr__(self, "family", Family(self.family))
        s = np.linspace(0.0, float(self.s_max), int(self.n_points))
        s.setflags(write=False)
        object.__setattr__(self, "s_values", s)
        object.__setattr__(self, "spacing", float(self.s_max) / (self.n_points - 1))

    @classmethod
    def ah(cls, s_max: float, n_points: int) -> "RadialGrid":
        return cls(n_points, s_max, Family.AH_BALL, (POLE, OUTER))

    @classmethod
    def closed(cls, length: float, n_points: int, periodic: bool = False) -> "RadialGrid":
        ends = (PERIODIC, PERIODIC) if periodic else (POLE, POLE)
        return cls(n_points, length, Family.CLOSED, ends)

    @property
    def s(self) -> np.ndarray:
        return self.s_values

    @property
    def periodic(self) -> bool:
        return self.ends[0] == PERIODIC

    @property
    def x(self) -> np.ndarray:
        """Geodesic defining function ``exp(-s)`` (AH only)."""
        return np.exp(-self.s_values)

    def pole_indices(self) -> list:
        idx = []
        if self.ends[0] == POLE:
            idx.append(0)
        if self.ends[1] == POLE:
            idx.append(self.n_points - 1)
        return idx

    def interior_mask(self, pole_margin: int = 0) -> np.ndarray:
        """Nodes excluding poles and ``pole_margin`` neighbours of each pole."""
        mask = np.ones(self.n_points, dtype=bool)
        if self.ends[0] == POLE:
            mask[: pole_margin + 1] = False
        if self.ends[1] == POLE:
            mask[self.n_points - 1 - pole_margin:] = False
        return mask

    def trusted_mask(self, band_width: float = 1.0, pole_margin: int = 2) -> np.ndarray:
        """Diagnostic band: away from poles and, for AH, ``s <= s_max - band_width``."""
        mask = self.interior_mask(pole_margin)
        if self.ends[1] == OUTER:
            mask &= self.s_values <= self.s_max - band_width + 1e-12
        return mask

    def same_as(self, other: "RadialGrid") -> bool:
        return (
            self.n_points == other.n_points
            and self.s_max == other.s_max
            and self.family == other.family
            and self.ends == other.ends
        )

    def refined(self, factor: int = 2) -> "RadialGrid":
        return RadialGrid((self.n_points - 1) * factor + 1, self.s_max, self.family, self.ends)

    def with_extent(self, s_max: float) -> "RadialGrid":
        """Same spacing, different extent (s_max must be a multiple of ds)."""
        n = int(round(s_max / self.spacing)) + 1
        return RadialGrid(n, s_max, self.family, self.ends)


# ---------------------------------------------------------------------------
# stencils
# ---------------------------------------------------------------------------

def _as_field(f):
    f = np.asarray(f)
    return f if np.iscomplexobj(f) else f.astype(float, copy=False)


def _periodic_core(f):
    return f[:-1]


def diff1(f: np.ndarray, grid: RadialGrid, parity: str | None = "even") -> np.ndarray:
    """First derivative in s.

    Central differences inside; at a pole the ghost value is reflected
    according to ``parity`` ("even", "odd", or ``None`` for one-sided);
    at the AH outer end a one-sided second-order stencil is used.
    """
    h = grid.spacing
    f = _as_field(f)
    if grid.periodic:
        core = _periodic_core(f)
        d = (np.roll(core, -1) - np.roll(core, 1)) / (2 * h)
        return np.concatenate([d, d[:1]])
    d = np.empty_like(f)
    d[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    for end in (0, 1):
        i, j1, j2 = (0, 1, 2) if end == 0 else (-1, -2, -3)
        sgn = 1.0 if end == 0 else -1.0
        if grid.ends[end] == POLE and parity == "even":
            d[i] = 0.0
        elif grid.ends[end] == POLE and parity == "odd":
            d[i] = sgn * f[j1] / h
        else:
            d[i] = sgn * (-3 * f[i] + 4 * f[j1] - f[j2]) / (2 * h)
    return d


def diff2(f: np.ndarray, grid: RadialGrid, parity: str | None = "even") -> np.ndarray:
    """Second derivative in s, same boundary conventions as :func:`diff1`."""
    h2 = grid.spacing ** 2
    f = _as_field(f)
    if grid.periodic:
        core = _periodic_core(f)
        d = (np.roll(core, -1) - 2 * core + np.roll(core, 1)) / h2
        return np.concatenate([d, d[:1]])
    d = np.empty_like(f)
    d[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / h2
    for end in (0, 1):
        i, j1, j2, j3 = (0, 1, 2, 3) if end == 0 else (-1, -2, -3, -4)
        if grid.ends[end] == POLE and parity == "even":
            d[i] = 2 * (f[j1] - f[i]) / h2
        elif grid.ends[end] == POLE and parity == "odd":
            d[i] = 0.0
        else:
            d[i] = (2 * f[i] - 5 * f[j1] + 4 * f[j2] - f[j3]) / h2
    return d


def fill_poles_even(f: np.ndarray, grid: RadialGrid) -> np.ndarray:
    """Overwrite pole values by even extrapolation ``(4 f_1 - f_2) / 3``."""
    f = np.array(f, dtype=float, copy=True)
    if grid.ends[0] == POLE:
        f[0] = (4 * f[1] - f[2]) / 3
    if grid.ends[1] == POLE:
        f[-1] = (4 * f[-2] - f[-3]) / 3
    return f
