#!/usr/bin/env python3
"""
Uniform grids, boundary specifications and spline-based random initial conditions.

A random initial condition is drawn once on a coarse knot grid and fitted with a
not-a-knot cubic spline. Every experiment grid then resamples that same spline,
so sweeps over N_X or N_T share one underlying random function.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .exceptions import GridError, InvalidArgumentError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid on [-L, L] with n_x interior points and two boundary nodes."""

    L: float
    n_x: int

    def __post_init__(self):
        if self.L <= 0 or self.n_x < 1:
            raise InvalidArgumentError(f"invalid spatial grid: L={self.L}, N_X={self.n_x}")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / (self.n_x + 1)

    @property
    def points(self) -> np.ndarray:
        pts = -self.L + np.arange(self.n_x + 2) * self.dx
        pts[0] = -self.L
        pts[-1] = self.L
        return pts

    @property
    def interior(self) -> np.ndarray:
        return self.points[1:-1]


@dataclass(frozen=True)
class TimeGrid:
    """Evenly spaced time levels t_j = j*dt, j = 0..n_t."""

    T: float
    n_t: int

    def __post_init__(self):
        if self.T <= 0 or self.n_t < 1:
            raise InvalidArgumentError(f"invalid time grid: T={self.T}, N_T={self.n_t}")

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def levels(self) -> np.ndarray:
        lv = np.arange(self.n_t + 1) * self.dt
        lv[-1] = self.T
        return lv


@dataclass(frozen=True)
class BoundarySpec:
    """Dirichlet(value) or homogeneous Neumann boundary."""

    kind: str = "dirichlet"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise InvalidArgumentError(f"unknown boundary kind: {self.kind}")
        if not np.isfinite(self.value):
            raise InvalidArgumentError("Dirichlet value must be finite")

    @classmethod
    def dirichlet(cls, value: float) -> "BoundarySpec":
        return cls("dirichlet", float(value))

    @classmethod
    def neumann(cls) -> "BoundarySpec":
        return cls("neumann", 0.0)

    @property
    def is_dirichlet(self) -> bool:
        return self.kind == "dirichlet"


def build_grids(L: float, n_x: int, T: float, n_t: int) -> Tuple[SpatialGrid, TimeGrid]:
    """Build the spatial and temporal grid pair used by one experiment point."""
    if L <= 0 or T <= 0 or n_x < 1 or n_t < 1:
        raise InvalidArgumentError(
            f"grid dimensions must be positive: L={L}, N_X={n_x}, T={T}, N_T={n_t}"
        )
    return SpatialGrid(float(L), int(n_x)), TimeGrid(float(T), int(n_t))


def derive_trial_seed(base_seed: int, trial_index: int) -> int:
    """
    Split the base seed into an independent 64-bit stream per trial.

    Uses numpy's SeedSequence spawn keys, so trial m's draws depend only on
    (base_seed, m) and never on how many trials run or in which order.
    """
    seq = np.random.SeedSequence(int(base_seed), spawn_key=(int(trial_index),))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class ICSpline:
    """C² not-a-knot cubic spline through the random knot values."""

    L: float
    values: np.ndarray
    u_bc: float
    seed: Optional[int] = None
    a: Optional[float] = None
    b: Optional[float] = None
    _spline: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 3:
            raise InvalidArgumentError("an IC spline needs at least three knots")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        spline = CubicSpline(self.knots, values, bc_type="not-a-knot", extrapolate=False)
        object.__setattr__(self, "_spline", spline)

    @property
    def n_x(self) -> int:
        return self.values.size - 2

    @property
    def knots(self) -> np.ndarray:
        return SpatialGrid(self.L, self.values.size - 2).points

    @property
    def coefficients(self) -> np.ndarray:
        """Piecewise-cubic coefficients, shape (4, n_intervals), highest power first."""
        return self._spline.c

    def __call__(self, x, nu: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        tol = 1e-12 * self.L
        if np.any(x < -self.L - tol) or np.any(x > self.L + tol):
            raise GridError(f"spline evaluated outside [-{self.L}, {self.L}]")
        return self._spline(np.clip(x, -self.L, self.L), nu)

    def fingerprint(self) -> str:
        """Stable hash of the knot data; identical splines share a fingerprint."""
        digest = hashlib.sha256()
        digest.update(np.float64(self.L).tobytes())
        digest.update(np.ascontiguousarray(self.values, dtype=np.float64).tobytes())
        return digest.hexdigest()[:16]

    def to_record(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "N_X": self.n_x,
            "L": self.L,
            "a": self.a,
            "b": self.b,
            "u_BC": self.u_bc,
            "knot_values": [float(v) for v in self.values],
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "ICSpline":
        return cls(
            L=float(record.get("L", 1.0)),
            values=np.asarray(record["knot_values"], dtype=float),
            u_bc=float(record["u_BC"]),
            seed=record.get("seed"),
            a=record.get("a"),
            b=record.get("b"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_record())


def sample_random_ic(
    seed: int,
    n_x: int,
    a: float,
    b: float,
    boundary: BoundarySpec,
    L: float = 1.0,
) -> ICSpline:
    """
    Draw a random initial condition and fit its spline.

    Interior knot values are i.i.d. uniform on [a, b]; boundary knots are fixed
    to u_BC. Under Neumann boundaries the endpoint knots take the midpoint of
    [a, b]: the Neumann condition constrains the evolution, not the IC knots.

    Args:
        seed: 64-bit seed for numpy's PCG64 generator
        n_x: number of interior knots
        a, b: bounds of the uniform draw (a < b)
        boundary: boundary specification of the experiment
        L: half-width of the domain

    Returns:
        ICSpline carrying its full provenance for replay
    """
    if not a < b:
        raise InvalidArgumentError(f"IC bounds need a < b, got a={a}, b={b}")
    if n_x < 1:
        raise InvalidArgumentError(f"N_X must be >= 1, got {n_x}")

    u_bc = boundary.value if boundary.is_dirichlet else 0.5 * (a + b)
    rng = np.random.default_rng(int(seed))
    interior = rng.uniform(a, b, size=n_x)
    values = np.concatenate(([u_bc], interior, [u_bc]))

    spline = ICSpline(L=float(L), values=values, u_bc=float(u_bc), seed=int(seed), a=float(a), b=float(b))
    logger.debug(f"sampled IC seed={seed} N_X={n_x} fingerprint={spline.fingerprint()}")
    return spline


def resample_ic(spline: ICSpline, n_x_new: int, boundary: Optional[BoundarySpec] = None) -> np.ndarray:
    """
    Evaluate the fixed spline on a grid with n_x_new interior points.

    Returns a vector of length n_x_new + 2 whose end entries are u_BC.
    """
    if n_x_new < 1:
        raise InvalidArgumentError(f"N_X_new must be >= 1, got {n_x_new}")
    if boundary is not None and boundary.is_dirichlet and not np.isclose(boundary.value, spline.u_bc):
        raise InvalidArgumentError(
            f"boundary value {boundary.value} disagrees with spline u_BC {spline.u_bc}"
        )

    grid = SpatialGrid(spline.L, int(n_x_new))
    out = np.empty(n_x_new + 2)
    out[1:-1] = spline(grid.interior)
    out[0] = out[-1] = spline.u_bc
    return out
