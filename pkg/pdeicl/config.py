#!/usr/bin/env python3
"""
PDE-ICL configuration

Module-level defaults, environment lookup (.env aware) and the pydantic
models that validate run manifests.
"""

import json
import logging
import os
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import AfterValidator, BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ConfigError
from .grid_ic import BoundarySpec
from .solvers import AllenCahn, FisherKPP, Heat, PDESpec, SchemeId, Wave, is_compatible

# pick up a .env file before reading the environment
load_dotenv()

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# run output and logging
RUNS_DIR = os.getenv("PDEICL_RUNS_DIR", "runs")
LOG_LEVEL = os.getenv("PDEICL_LOG_LEVEL", "INFO")
API_KEY_ENV = "PDEICL_API_KEY"

# problem setup
DEFAULT_L = 1.0
DEFAULT_T = 0.5
DEFAULT_N_X = 14
DEFAULT_EPS2 = 0.001
DEFAULT_D = 0.002
DEFAULT_R = 1.0
DEFAULT_K = 0.01
DEFAULT_C = 0.2

# (u_BC, a, b) per equation
IC_DEFAULTS = {
    "allen_cahn": (-1.0, -0.5, 0.5),
    "fisher_kpp": (0.0, 0.2, 0.8),
    "heat": (0.0, -0.5, 0.5),
    "wave": (0.0, -0.5, 0.5),
}
ENERGY_IC_BOUNDS = (0.0, 1.0)

# experiment setup
DEFAULT_TRIALS = 50
DEFAULT_GENERATIONS = 20
DEFAULT_REFINE_X = 8
MAX_FAILURE_FRACTION = 0.10

# request settings
REQUEST_TIMEOUT = 120
MAX_RETRIES = 3
MAX_IN_FLIGHT = 4
DEFAULT_TEMPERATURE = 0.6
DEFAULT_TOP_K = 20


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PDEConfig(_Strict):
    """Equation, coefficients, boundary and IC draw bounds."""

    equation: Literal["allen_cahn", "fisher_kpp", "heat", "wave"] = "allen_cahn"
    eps2: float = DEFAULT_EPS2
    D: float = DEFAULT_D
    r: float = DEFAULT_R
    k: float = DEFAULT_K
    c: float = DEFAULT_C
    boundary: Literal["dirichlet", "neumann"] = "dirichlet"
    u_bc: Optional[float] = None
    a: Optional[float] = None
    b: Optional[float] = None
    L: float = Field(DEFAULT_L, gt=0)
    T: float = Field(DEFAULT_T, gt=0)

    @model_validator(mode="after")
    def _fill_defaults(self):
        u_bc, a, b = IC_DEFAULTS[self.equation]
        if self.u_bc is None:
            self.u_bc = u_bc
        if self.a is None:
            self.a = a
        if self.b is None:
            self.b = b
        if not self.a < self.b:
            raise ValueError(f"IC bounds need a < b, got a={self.a}, b={self.b}")
        return self

    def boundary_spec(self) -> BoundarySpec:
        if self.boundary == "neumann":
            return BoundarySpec.neumann()
        return BoundarySpec.dirichlet(self.u_bc)

    def build(self, coefficient: Optional[float] = None) -> PDESpec:
        """PDESpec for this config; coefficient overrides k (heat) or c (wave)."""
        if self.equation == "allen_cahn":
            equation = AllenCahn(eps2=self.eps2)
        elif self.equation == "fisher_kpp":
            equation = FisherKPP(D=self.D, r=self.r)
        elif self.equation == "heat":
            equation = Heat(k=self.k if coefficient is None else coefficient)
        else:
            equation = Wave(c=self.c if coefficient is None else coefficient)
        return PDESpec(equation, self.boundary_spec())


def _sorted_nonempty(values: List[int]) -> List[int]:
    if not values:
        raise ValueError("sweep list must not be empty")
    if list(values) != sorted(values):
        raise ValueError("sweep list must be sorted")
    if any(v < 1 for v in values):
        raise ValueError("sweep values must be >= 1")
    return values


SweepValues = Annotated[List[int], AfterValidator(_sorted_nonempty)]


class ContextSweep(_Strict):
    kind: Literal["context"] = "context"
    n_x: int = Field(DEFAULT_N_X, ge=1)
    n_t_values: SweepValues = Field(default_factory=lambda: list(range(2, 41)))


class OutputSweep(_Strict):
    kind: Literal["output"] = "output"
    n_t: int = Field(50, ge=1)
    n_x_values: SweepValues = Field(default_factory=lambda: list(range(2, 41, 2)))
    # knot count of the shared IC spline, resampled onto every N_X
    ic_n_x: int = Field(DEFAULT_N_X, ge=1)


class MultiStep(_Strict):
    kind: Literal["multistep"] = "multistep"
    n_t: int = Field(25, ge=3)
    n_x: int = Field(DEFAULT_N_X, ge=1)
    generations: int = Field(DEFAULT_GENERATIONS, ge=1)
    average_predictions: bool = False


Sweep = Annotated[Union[ContextSweep, OutputSweep, MultiStep], Field(discriminator="kind")]


class HttpBackendConfig(_Strict):
    kind: Literal["http"] = "http"
    endpoint: str = "http://localhost:8000/v1"
    model: str
    api_key_env: str = API_KEY_ENV
    timeout: float = Field(REQUEST_TIMEOUT, gt=0)
    retries: int = Field(MAX_RETRIES, ge=0)
    max_in_flight: int = Field(MAX_IN_FLIGHT, ge=1)
    temperature: float = Field(DEFAULT_TEMPERATURE, ge=0)
    top_k: int = Field(DEFAULT_TOP_K, ge=1)

    def api_key(self) -> Optional[str]:
        return os.getenv(self.api_key_env)


class OracleBackendConfig(_Strict):
    kind: Literal["oracle"] = "oracle"
    refine_x: int = Field(DEFAULT_REFINE_X, ge=1)
    refine_t: Optional[int] = Field(None, ge=1)


class ReplayBackendConfig(_Strict):
    kind: Literal["replay"] = "replay"
    fixture_path: str
    record: bool = False
    upstream: Optional[Union[HttpBackendConfig, OracleBackendConfig]] = None

    @model_validator(mode="after")
    def _check_fixture(self):
        if self.record:
            if self.upstream is None:
                raise ValueError("record mode needs an upstream backend")
        elif not Path(self.fixture_path).exists():
            raise ValueError(f"fixture file not found: {self.fixture_path}")
        return self


class RepeatLastBackendConfig(_Strict):
    kind: Literal["repeat_last"] = "repeat_last"


BackendConfig = Annotated[
    Union[HttpBackendConfig, OracleBackendConfig, ReplayBackendConfig, RepeatLastBackendConfig],
    Field(discriminator="kind"),
]


class ReferenceConfig(_Strict):
    refine_x: int = Field(DEFAULT_REFINE_X, ge=1)
    refine_t: Optional[int] = Field(None, ge=1)
    cache_dir: Optional[str] = None


class ExperimentConfig(_Strict):
    """A complete run manifest."""

    schema_version: Literal[1] = SCHEMA_VERSION
    name: str = "experiment"
    family: Literal["one-step-context", "one-step-output", "multi-step", "energy"] = "one-step-context"
    pde: PDEConfig = Field(default_factory=PDEConfig)
    sweep: Sweep = Field(default_factory=ContextSweep)
    trials: int = Field(DEFAULT_TRIALS, ge=1)
    seed: int = Field(0, ge=0)
    backend: BackendConfig = Field(default_factory=RepeatLastBackendConfig)
    reference: ReferenceConfig = Field(default_factory=ReferenceConfig)
    baselines: Optional[List[SchemeId]] = None
    jobs: int = Field(1, ge=1)
    trailing_delimiter: bool = True
    coefficient_values: Optional[List[float]] = None
    entropy_base: Optional[float] = None
    top_k_table: int = Field(8, ge=1)
    dump_prompts: bool = True

    @model_validator(mode="before")
    @classmethod
    def _energy_bounds(cls, data):
        """Energy runs draw ICs from [0, 1] unless the manifest sets a or b."""
        if isinstance(data, dict) and data.get("family") == "energy" and isinstance(data.get("pde"), dict):
            a, b = ENERGY_IC_BOUNDS
            data = {**data, "pde": {"a": a, "b": b, **data["pde"]}}
        return data

    @model_validator(mode="after")
    def _check_family(self):
        expected = {
            "one-step-context": "context",
            "one-step-output": "output",
            "multi-step": "multistep",
            "energy": "multistep",
        }[self.family]
        if self.sweep.kind != expected:
            raise ValueError(f"family {self.family} needs a {expected} sweep, got {self.sweep.kind}")
        if self.family == "energy" and (self.pde.equation != "heat" or self.pde.boundary != "neumann"):
            raise ValueError("the energy experiment needs the heat equation with Neumann boundaries")
        if self.coefficient_values is not None:
            if self.pde.equation not in ("heat", "wave"):
                raise ValueError("coefficient sweeps apply to heat (k) or wave (c) only")
            if any(v <= 0 for v in self.coefficient_values):
                raise ValueError("coefficient values must be > 0")
        if self.baselines is None:
            self.baselines = default_baselines(self.pde.equation)
        pde = self.pde.build()
        for scheme in self.baselines:
            if not is_compatible(scheme, pde):
                raise ValueError(f"baseline {scheme.value} cannot advance {self.pde.equation}")
        return self

    def coefficients(self) -> List[Optional[float]]:
        return list(self.coefficient_values) if self.coefficient_values else [None]


def default_baselines(equation: str) -> List[SchemeId]:
    return {
        "allen_cahn": [SchemeId.FTCS, SchemeId.IMEX],
        "fisher_kpp": [SchemeId.FTCS, SchemeId.IMEX],
        "heat": [SchemeId.FTCS, SchemeId.BTCS],
        "wave": [SchemeId.LEAPFROG, SchemeId.CRANK_NICOLSON],
    }[equation]


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON run manifest."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {path}: {e}") from e
    return parse_config(raw)


def parse_config(raw: dict) -> ExperimentConfig:
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid run manifest:\n{e}") from e
    logger.debug(f"loaded config {config.name} ({config.family})")
    return config
