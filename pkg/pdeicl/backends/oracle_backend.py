#!/usr/bin/env python3
"""
Oracle backend: answers every request with the refined numerical solver.

When the request's hint carries the trial IC, the oracle solves the refined
reference for that IC and emits the levels that follow the prompt, so its
output is the quantized fine-solver trajectory itself. Without an IC, the
last context slices are decoded with the request's quantization range,
interpolated onto the refined grid, advanced with the reference scheme and
restricted back to the coarse nodes. Distributions are one-hot, so entropy
metrics see exact values.
"""

import json
import logging
import threading
from collections import OrderedDict
from dataclasses import replace
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from ..codec import SLICE_SEP, decode_codes, format_slice, parse, quantize, split_tokens
from ..exceptions import InvalidArgumentError
from ..grid_ic import BoundarySpec, SpatialGrid, TimeGrid
from ..solvers import (
    DEFAULT_REFINE_X,
    apply_laplacian,
    choose_refine_t,
    march,
    reference_scheme,
    reference_solution,
)
from .base_backend import (
    BaseBackend,
    GenerationRequest,
    GenerationResult,
    ProblemHint,
    TokenDistribution,
    truncate_emission,
)

logger = logging.getLogger(__name__)

TRAJECTORY_CACHE_SIZE = 64


def coarse_with_boundary(interior: np.ndarray, hint: ProblemHint) -> np.ndarray:
    """Extend an interior slice with its boundary values."""
    bc = hint.pde.boundary
    if bc.is_dirichlet:
        left = right = bc.value
    elif interior.size == 1:
        left = right = float(interior[0])
    else:
        left = (4.0 * interior[0] - interior[1]) / 3.0
        right = (4.0 * interior[-1] - interior[-2]) / 3.0
    return np.concatenate(([left], interior, [right]))


def prolong(interior: np.ndarray, coarse: SpatialGrid, fine: SpatialGrid, hint: ProblemHint) -> np.ndarray:
    """Interpolate a coarse interior slice onto the fine interior nodes."""
    values = coarse_with_boundary(interior, hint)
    spline = CubicSpline(coarse.points, values, bc_type="not-a-knot")
    return spline(fine.interior)


class OracleBackend(BaseBackend):
    """Deterministic fine-solver continuation."""

    name = "oracle"

    def __init__(self, refine_x: int = DEFAULT_REFINE_X, refine_t: Optional[int] = None):
        if refine_x < 1 or (refine_t is not None and refine_t < 1):
            raise InvalidArgumentError("refinement factors must be positive integers")
        self.refine_x = refine_x
        self.refine_t = refine_t
        self._trajectories: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._lock = threading.Lock()

    @property
    def exact_distributions(self) -> bool:
        return True

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.name, "refine_x": self.refine_x, "refine_t": self.refine_t}

    def generate(self, request: GenerationRequest) -> GenerationResult:
        hint = request.hint
        if hint is None:
            raise InvalidArgumentError("the oracle backend needs a problem hint on every request")

        n_x = hint.spatial.n_x
        report = parse(request.prompt, n_x)
        if not report.slices:
            raise InvalidArgumentError("oracle prompt holds no complete slice")

        # slices that fit in the token budget, plus one for a trailing separator
        n_slices = max(1, request.max_tokens // (2 * n_x) + 1)
        if hint.ic is not None:
            generated = self._follow(hint, len(report.slices), n_slices)
        else:
            history = [decode_codes(codes, hint.qrange) for codes in report.slices[-3:]]
            generated = self._continue(history, hint, n_slices)

        tokens: List[str] = []
        if not request.prompt.endswith(SLICE_SEP):
            tokens.append(SLICE_SEP)
        for j, column in enumerate(generated):
            if j:
                tokens.append(SLICE_SEP)
            text = format_slice(quantize(column, hint.qrange).codes[:, 0])
            for k, group in enumerate(text.split(",")):
                if k:
                    tokens.append(",")
                tokens.append(group)
        tokens.append(SLICE_SEP)

        distributions = [TokenDistribution.one_hot(t) for t in tokens]
        result = truncate_emission(tokens, distributions, request.max_tokens, request.stop)
        if request.echo:
            result.prompt_tokens = split_tokens(request.prompt)
        return result

    def _refine_t(self, hint: ProblemHint) -> int:
        return self.refine_t or choose_refine_t(hint.pde, hint.spatial, hint.time, self.refine_x)

    def _follow(self, hint: ProblemHint, start: int, n_slices: int) -> List[np.ndarray]:
        """Coarse levels start..start+n_slices-1 of the refined trajectory of hint.ic."""
        last = start + n_slices - 1
        n_t = max(hint.time.n_t, last)
        values = self._trajectory(hint, n_t)
        return [values[:, j] for j in range(start, last + 1)]

    def _trajectory(self, hint: ProblemHint, n_t: int) -> np.ndarray:
        time = hint.time if n_t == hint.time.n_t else TimeGrid(hint.time.dt * n_t, n_t)
        refine_t = self._refine_t(hint)
        key = json.dumps(
            [hint.pde.describe(), hint.ic.fingerprint(), hint.spatial.L, hint.spatial.n_x,
             hint.time.dt, n_t, self.refine_x, refine_t],
            sort_keys=True,
        )
        with self._lock:
            cached = self._trajectories.get(key)
            if cached is not None:
                self._trajectories.move_to_end(key)
                return cached

        values = reference_solution(hint.pde, hint.ic, hint.spatial, time, self.refine_x, refine_t).values
        with self._lock:
            self._trajectories[key] = values
            while len(self._trajectories) > TRAJECTORY_CACHE_SIZE:
                self._trajectories.popitem(last=False)
        return values

    def _continue(self, history: List[np.ndarray], hint: ProblemHint, n_slices: int) -> List[np.ndarray]:
        pde = hint.pde
        coarse = hint.spatial
        fine = SpatialGrid(coarse.L, self.refine_x * (coarse.n_x + 1) - 1)
        refine_t = self._refine_t(hint)
        dt_coarse = hint.time.dt
        dt = dt_coarse / refine_t
        scheme = reference_scheme(pde)

        u0 = prolong(history[-1], coarse, fine, hint)
        if scheme.levels == 2:
            # velocity from the trailing slices, second order when three are available
            if len(history) >= 3:
                v = (3.0 * history[-1] - 4.0 * history[-2] + history[-3]) / (2.0 * dt_coarse)
            elif len(history) == 2:
                v = (history[-1] - history[-2]) / dt_coarse
            else:
                v = np.zeros_like(history[-1])
            v_fine = prolong(v, coarse, fine, _zero_boundary(hint))
            lap = apply_laplacian(u0, fine.dx, pde.boundary)
            u_prev = u0 - dt * v_fine + 0.5 * pde.equation.coefficient * dt ** 2 * lap
            state = [u_prev, u0]
        else:
            state = [u0]

        trajectory = march(pde, scheme, state, fine, dt, refine_t * n_slices)
        rows = self.refine_x * np.arange(1, coarse.n_x + 1) - 1
        return [trajectory[rows, refine_t * (j + 1) - 1] for j in range(n_slices)]


def _zero_boundary(hint: ProblemHint) -> ProblemHint:
    """Hint whose Dirichlet value is 0, for interpolating time derivatives."""
    if not hint.pde.boundary.is_dirichlet:
        return hint
    pde = replace(hint.pde, boundary=BoundarySpec.dirichlet(0.0))
    return replace(hint, pde=pde)
