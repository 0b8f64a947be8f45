#!/usr/bin/env python3
"""
Finite-difference time steppers for the four 1D model equations.

The state is always the vector of interior values; boundary nodes enter only
as ghost values of the second-difference stencil. Dirichlet ghosts are fixed
to u_BC, Neumann ghosts are eliminated with the second-order one-sided
zero-flux relation u_0 = (4u_1 - u_2)/3.
"""

import hashlib
import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .exceptions import (
    DivergenceError,
    InvalidArgumentError,
    SingularSystemError,
    StabilityError,
)
from .grid_ic import BoundarySpec, ICSpline, SpatialGrid, TimeGrid, resample_ic

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
MAX_DIFFUSION_NUMBER = 0.25
MAX_WAVE_CFL = 0.5
DEFAULT_REFINE_X = 8
MAX_REFINE_T = 2 ** 16


class Equation(ABC):
    """Right-hand side of u_t = coef*u_xx - reaction(u) (or u_tt = c²u_xx)."""

    name: str = ""
    second_order_in_time: bool = False

    @property
    @abstractmethod
    def coefficient(self) -> float:
        """Coefficient multiplying u_xx (c² for the wave equation)."""

    def reaction(self, u: np.ndarray) -> np.ndarray:
        """Reaction term subtracted from the diffusion term."""
        return np.zeros_like(u)

    @abstractmethod
    def parameters(self) -> dict:
        pass


@dataclass(frozen=True)
class AllenCahn(Equation):
    """u_t = eps² u_xx - f(u), f(u) = 2(u³ - u)."""

    eps2: float = 0.001
    name = "allen_cahn"

    @property
    def coefficient(self) -> float:
        return self.eps2

    def reaction(self, u: np.ndarray) -> np.ndarray:
        return 2.0 * (u ** 3 - u)

    def parameters(self) -> dict:
        return {"eps2": self.eps2}


@dataclass(frozen=True)
class FisherKPP(Equation):
    """u_t = D u_xx + r u(1 - u)."""

    D: float = 0.002
    r: float = 1.0
    name = "fisher_kpp"

    @property
    def coefficient(self) -> float:
        return self.D

    def reaction(self, u: np.ndarray) -> np.ndarray:
        return -self.r * u * (1.0 - u)

    def parameters(self) -> dict:
        return {"D": self.D, "r": self.r}


@dataclass(frozen=True)
class Heat(Equation):
    """u_t = k u_xx."""

    k: float = 0.01
    name = "heat"

    @property
    def coefficient(self) -> float:
        return self.k

    def parameters(self) -> dict:
        return {"k": self.k}


@dataclass(frozen=True)
class Wave(Equation):
    """u_tt = c² u_xx with zero initial velocity."""

    c: float = 0.2
    name = "wave"
    second_order_in_time = True

    @property
    def coefficient(self) -> float:
        return self.c ** 2

    def parameters(self) -> dict:
        return {"c": self.c}


@dataclass(frozen=True)
class PDESpec:
    """An equation together with its boundary condition."""

    equation: Equation
    boundary: BoundarySpec = field(default_factory=lambda: BoundarySpec.dirichlet(0.0))

    def __post_init__(self):
        for key, value in self.equation.parameters().items():
            if not value > 0:
                raise InvalidArgumentError(f"{self.equation.name}: {key} must be > 0, got {value}")

    @property
    def name(self) -> str:
        return self.equation.name

    def describe(self) -> dict:
        return {
            "equation": self.equation.name,
            **self.equation.parameters(),
            "boundary": self.boundary.kind,
            "u_BC": self.boundary.value,
        }


class SchemeId(str, Enum):
    FTCS = "ftcs"
    IMEX = "imex"
    BTCS = "btcs"
    LEAPFROG = "leapfrog"
    CRANK_NICOLSON = "crank_nicolson"

    @property
    def levels(self) -> int:
        """Number of previous time levels the scheme consumes."""
        return 2 if self in (SchemeId.LEAPFROG, SchemeId.CRANK_NICOLSON) else 1


_COMPATIBLE = {
    SchemeId.FTCS: ("allen_cahn", "fisher_kpp", "heat"),
    SchemeId.IMEX: ("allen_cahn", "fisher_kpp"),
    SchemeId.BTCS: ("heat",),
    SchemeId.LEAPFROG: ("wave",),
    SchemeId.CRANK_NICOLSON: ("wave",),
}


def is_compatible(scheme: SchemeId, pde: PDESpec) -> bool:
    return pde.name in _COMPATIBLE[SchemeId(scheme)]


def check_compatible(scheme: SchemeId, pde: PDESpec) -> SchemeId:
    scheme = SchemeId(scheme)
    if not is_compatible(scheme, pde):
        raise InvalidArgumentError(f"scheme {scheme.value} cannot advance {pde.name}")
    return scheme


def reference_scheme(pde: PDESpec) -> SchemeId:
    """Explicit scheme used for refined reference solutions."""
    return SchemeId.LEAPFROG if pde.equation.second_order_in_time else SchemeId.FTCS


@dataclass
class SolutionField:
    """Interior solution values, rows = x_1..x_N_X, columns = t_0..t_N_T."""

    values: np.ndarray
    spatial: SpatialGrid
    time: TimeGrid
    pde: PDESpec
    scheme: Optional[SchemeId] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.spatial.n_x, self.time.n_t + 1)
        if self.values.shape != expected:
            raise InvalidArgumentError(f"solution shape {self.values.shape} != {expected}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("solution contains non-finite entries")

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            self.values,
            index=pd.Index(self.spatial.interior, name="x"),
            columns=[f"{t:.12g}" for t in self.time.levels],
        )
        return frame

    def to_csv(self, path) -> Path:
        """CSV with a header row of t_j and a first column of x_i."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, float_format="%.17g")
        return path


# ---------------------------------------------------------------------------
# Stencils
# ---------------------------------------------------------------------------

def _ghosts(u: np.ndarray, boundary: BoundarySpec) -> Tuple[float, float]:
    if boundary.is_dirichlet:
        return boundary.value, boundary.value
    if u.size == 1:
        return float(u[0]), float(u[0])
    return (4.0 * u[0] - u[1]) / 3.0, (4.0 * u[-1] - u[-2]) / 3.0


def apply_laplacian(u: np.ndarray, dx: float, boundary: BoundarySpec) -> np.ndarray:
    """Centered second difference of the interior vector with boundary ghosts."""
    left, right = _ghosts(u, boundary)
    padded = np.concatenate(([left], u, [right]))
    return (padded[:-2] - 2.0 * padded[1:-1] + padded[2:]) / dx ** 2


def laplacian_operator(n: int, dx: float, boundary: BoundarySpec):
    """
    Tridiagonal form of the second difference: lap(u) = A u + b.

    Returns:
        (lower, diag, upper, b) with lower/upper of length n-1
    """
    inv = 1.0 / dx ** 2
    lower = np.full(n - 1, inv)
    upper = np.full(n - 1, inv)
    diag = np.full(n, -2.0 * inv)
    const = np.zeros(n)
    if boundary.is_dirichlet:
        const[0] += boundary.value * inv
        const[-1] += boundary.value * inv
    elif n == 1:
        diag[0] = 0.0
    else:
        # ghost (4u_1 - u_2)/3 folded into the first and last rows
        diag[0] += 4.0 / 3.0 * inv
        upper[0] -= 1.0 / 3.0 * inv
        diag[-1] += 4.0 / 3.0 * inv
        lower[-1] -= 1.0 / 3.0 * inv
    return lower, diag, upper, const


def thomas_solve(lower, diag, upper, rhs) -> np.ndarray:
    """
    Solve a tridiagonal system with the Thomas algorithm.

    Args:
        lower: sub-diagonal, length n-1
        diag: main diagonal, length n
        upper: super-diagonal, length n-1
        rhs: right-hand side, length n

    Returns:
        solution vector of length n
    """
    diag = np.array(diag, dtype=float)
    rhs = np.array(rhs, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = diag.size
    if rhs.size != n or lower.size != n - 1 or upper.size != n - 1:
        raise InvalidArgumentError("inconsistent tridiagonal band lengths")

    scale = max(float(np.max(np.abs(diag))), 1.0)
    tiny = np.finfo(float).eps * scale

    for k in range(1, n):
        if abs(diag[k - 1]) <= tiny:
            raise SingularSystemError(f"zero pivot at row {k - 1}")
        m = lower[k - 1] / diag[k - 1]
        diag[k] -= m * upper[k - 1]
        rhs[k] -= m * rhs[k - 1]

    if abs(diag[-1]) <= tiny:
        raise SingularSystemError(f"zero pivot at row {n - 1}")

    x = np.empty(n)
    x[-1] = rhs[-1] / diag[-1]
    for k in range(n - 2, -1, -1):
        x[k] = (rhs[k] - upper[k] * x[k + 1]) / diag[k]
    return x


def _implicit_solve(u_rhs: np.ndarray, mu: float, dx: float, boundary: BoundarySpec) -> np.ndarray:
    """Solve (I - mu*A) v = u_rhs + mu*b."""
    lower, diag, upper, const = laplacian_operator(u_rhs.size, dx, boundary)
    return thomas_solve(-mu * lower, 1.0 - mu * diag, -mu * upper, u_rhs + mu * const)


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------

def advance(
    pde: PDESpec,
    scheme: SchemeId,
    state: Sequence[np.ndarray],
    spatial: SpatialGrid,
    dt: float,
    step: int = 0,
) -> np.ndarray:
    """
    Advance the interior state by one time step.

    Args:
        pde: equation and boundary
        scheme: time stepper
        state: (u^n,) for one-level schemes, (u^{n-1}, u^n) for wave schemes
        spatial: grid supplying dx and N_X
        dt: time step
        step: index of the produced level, used in divergence reports

    Returns:
        interior column u^{n+1}
    """
    scheme = check_compatible(scheme, pde)
    columns = [np.asarray(col, dtype=float) for col in state]
    if len(columns) != scheme.levels:
        raise InvalidArgumentError(f"{scheme.value} needs {scheme.levels} state column(s)")
    for col in columns:
        if col.shape != (spatial.n_x,):
            raise InvalidArgumentError(f"state column has shape {col.shape}, want ({spatial.n_x},)")

    dx = spatial.dx
    bc = pde.boundary
    eq = pde.equation
    coef = eq.coefficient
    u = columns[-1]

    if scheme is SchemeId.FTCS:
        new = u + dt * (coef * apply_laplacian(u, dx, bc) - eq.reaction(u))
    elif scheme in (SchemeId.IMEX, SchemeId.BTCS):
        new = _implicit_solve(u - dt * eq.reaction(u), dt * coef, dx, bc)
    elif scheme is SchemeId.LEAPFROG:
        prev = columns[0]
        new = 2.0 * u - prev + coef * dt ** 2 * apply_laplacian(u, dx, bc)
    else:
        # (u+ - 2u + u-)/dt² = (c²/2)(lap u+ + lap u-)
        prev = columns[0]
        half = 0.5 * coef * dt ** 2
        rhs = 2.0 * u - prev + half * apply_laplacian(prev, dx, bc)
        new = _implicit_solve(rhs, half, dx, bc)

    _check_finite(new, scheme, step)
    return new


def wave_startup(pde: PDESpec, u0: np.ndarray, spatial: SpatialGrid, dt: float) -> np.ndarray:
    """First step under zero initial velocity: u¹ = u⁰ + ½c²dt² lap(u⁰)."""
    u0 = np.asarray(u0, dtype=float)
    return u0 + 0.5 * pde.equation.coefficient * dt ** 2 * apply_laplacian(u0, spatial.dx, pde.boundary)


def _check_finite(u: np.ndarray, scheme: SchemeId, step: int):
    if not np.all(np.isfinite(u)):
        raise DivergenceError(scheme.value, step, "non-finite values")
    peak = float(np.max(np.abs(u))) if u.size else 0.0
    if peak > DIVERGENCE_LIMIT:
        raise DivergenceError(scheme.value, step, f"|u| reached {peak:.3e}")


def march(
    pde: PDESpec,
    scheme: SchemeId,
    state: Sequence[np.ndarray],
    spatial: SpatialGrid,
    dt: float,
    n_steps: int,
    first_step: int = 1,
) -> np.ndarray:
    """
    Advance n_steps from the given state levels.

    A wave scheme given a single level starts with the zero-velocity Taylor step.

    Returns:
        matrix (N_X, n_steps) of the produced levels
    """
    scheme = check_compatible(scheme, pde)
    levels = [np.asarray(col, dtype=float) for col in state]
    out = np.empty((spatial.n_x, n_steps))
    for n in range(n_steps):
        step = first_step + n
        if scheme.levels == 2 and len(levels) == 1:
            new = wave_startup(pde, levels[0], spatial, dt)
            _check_finite(new, scheme, step)
        else:
            new = advance(pde, scheme, levels[-scheme.levels:], spatial, dt, step)
        out[:, n] = new
        levels = (levels + [new])[-2:]
    return out


def solve(pde: PDESpec, scheme: SchemeId, ic: np.ndarray, spatial: SpatialGrid, time: TimeGrid) -> SolutionField:
    """
    Solve the initial value problem on the given grids.

    Args:
        ic: interior initial values, length N_X (a length N_X+2 vector with
            boundary entries is accepted and trimmed)
    """
    ic = np.asarray(ic, dtype=float)
    if ic.shape == (spatial.n_x + 2,):
        ic = ic[1:-1]
    if ic.shape != (spatial.n_x,):
        raise InvalidArgumentError(f"IC has shape {ic.shape}, want ({spatial.n_x},)")

    values = np.empty((spatial.n_x, time.n_t + 1))
    values[:, 0] = ic
    values[:, 1:] = march(pde, scheme, [ic], spatial, time.dt, time.n_t)
    return SolutionField(values, spatial, time, pde, SchemeId(scheme))


# ---------------------------------------------------------------------------
# Refined reference solutions
# ---------------------------------------------------------------------------

def stability_number(pde: PDESpec, dx: float, dt: float) -> float:
    """Diffusion number coef*dt/dx², or the CFL number c*dt/dx for waves."""
    if pde.equation.second_order_in_time:
        return math.sqrt(pde.equation.coefficient) * dt / dx
    return pde.equation.coefficient * dt / dx ** 2


def stability_limit(pde: PDESpec) -> float:
    return MAX_WAVE_CFL if pde.equation.second_order_in_time else MAX_DIFFUSION_NUMBER


def choose_refine_t(pde: PDESpec, spatial: SpatialGrid, time: TimeGrid, refine_x: int) -> int:
    """Smallest power of two that keeps the refined explicit scheme stable."""
    fine_dx = spatial.dx / refine_x
    refine_t = 1
    while stability_number(pde, fine_dx, time.dt / refine_t) > stability_limit(pde):
        refine_t *= 2
        if refine_t > MAX_REFINE_T:
            raise StabilityError(f"no stable refine_t below {MAX_REFINE_T} for {pde.name}")
    return refine_t


def refined_solution(
    pde: PDESpec,
    ic_spline: ICSpline,
    spatial: SpatialGrid,
    time: TimeGrid,
    refine_x: int = DEFAULT_REFINE_X,
    refine_t: Optional[int] = None,
) -> SolutionField:
    """
    Solve on the refined grid behind a coarse (spatial, time) pair.

    The refined grid has refine_x*(N_X+1) - 1 interior points, so coarse node i
    is fine node refine_x*i, and refine_t*N_T steps, so coarse level j is fine
    level refine_t*j.
    """
    if refine_x < 1 or (refine_t is not None and refine_t < 1):
        raise InvalidArgumentError("refinement factors must be positive integers")

    fine_nx = refine_x * (spatial.n_x + 1) - 1
    fine_dx = spatial.dx / refine_x
    if refine_t is None:
        refine_t = choose_refine_t(pde, spatial, time, refine_x)

    number = stability_number(pde, fine_dx, time.dt / refine_t)
    limit = stability_limit(pde)
    if number > limit:
        raise StabilityError(
            f"{pde.name} refined stability number {number:.4f} exceeds {limit}; "
            f"increase refine_t above {refine_t}"
        )
    logger.info(
        f"✅ reference grid N_X'={fine_nx} N_T'={refine_t * time.n_t} "
        f"stability number {number:.4f} <= {limit}"
    )

    fine_spatial = SpatialGrid(spatial.L, fine_nx)
    fine_time = TimeGrid(time.T, refine_t * time.n_t)
    fine_ic = resample_ic(ic_spline, fine_nx)
    return solve(pde, reference_scheme(pde), fine_ic, fine_spatial, fine_time)


def restrict(fine: SolutionField, spatial: SpatialGrid, time: TimeGrid) -> SolutionField:
    """Restrict a refined solution to the coarse grid by node coincidence."""
    refine_x, rem_x = divmod(fine.spatial.n_x + 1, spatial.n_x + 1)
    refine_t, rem_t = divmod(fine.time.n_t, time.n_t)
    if rem_x or rem_t or refine_x < 1 or refine_t < 1:
        raise InvalidArgumentError("the coarse grid does not coincide with the refined grid")
    rows = refine_x * np.arange(1, spatial.n_x + 1) - 1
    cols = refine_t * np.arange(time.n_t + 1)
    return SolutionField(fine.values[np.ix_(rows, cols)], spatial, time, fine.pde, fine.scheme)


def reference_solution(
    pde: PDESpec,
    ic_spline: ICSpline,
    spatial: SpatialGrid,
    time: TimeGrid,
    refine_x: int = DEFAULT_REFINE_X,
    refine_t: Optional[int] = None,
) -> SolutionField:
    """Solve on a refined grid and restrict to the coarse grid by node coincidence."""
    fine = refined_solution(pde, ic_spline, spatial, time, refine_x, refine_t)
    return restrict(fine, spatial, time)


class SolutionCache:
    """On-disk cache of solution matrices keyed by problem, scheme, IC and grids."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(pde: PDESpec, scheme: str, ic_hash: str, spatial: SpatialGrid, time: TimeGrid,
            refine: Tuple[int, Optional[int]] = (1, 1)) -> str:
        payload = json.dumps(
            {
                "pde": pde.describe(),
                "scheme": str(scheme),
                "ic": ic_hash,
                "grid": [spatial.L, spatial.n_x, time.T, time.n_t],
                "refine": list(refine),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:24]

    def load(self, key: str) -> Optional[np.ndarray]:
        path = self.directory / f"{key}.npy"
        if not path.exists():
            return None
        return np.load(path)

    def store(self, key: str, values: np.ndarray):
        np.save(self.directory / f"{key}.npy", np.asarray(values, dtype=float))

    def reference(self, pde: PDESpec, ic_spline: ICSpline, spatial: SpatialGrid, time: TimeGrid,
                  refine_x: int = DEFAULT_REFINE_X, refine_t: Optional[int] = None) -> SolutionField:
        key = self.key(pde, reference_scheme(pde).value, ic_spline.fingerprint(), spatial, time,
                       (refine_x, refine_t))
        cached = self.load(key)
        if cached is not None:
            return SolutionField(cached, spatial, time, pde, reference_scheme(pde))
        field_ = reference_solution(pde, ic_spline, spatial, time, refine_x, refine_t)
        self.store(key, field_.values)
        return field_
