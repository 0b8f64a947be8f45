#!/usr/bin/env python3
"""
Plot data emission.

Metric figures are pure functions of metrics.csv. Diagnostic figures
(token tables, error correlates) read records.jsonl, and the
temporal-difference heatmap is computed from a config and a trial seed.
"""

import logging
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from .codec import quantize, temporal_differences, zero_fraction
from .config import ExperimentConfig
from .exceptions import InvalidArgumentError
from .grid_ic import SpatialGrid, build_grids, derive_trial_seed, sample_random_ic
from .metrics import DistributionRecord, error_correlates, loglog_slope, topk_table
from .solvers import reference_solution

logger = logging.getLogger(__name__)

METRIC_FIGURES = {
    "error-vs-NT": ("N_T", ("rmse.", "maxae.", "floor_")),
    "error-vs-NX": ("N_X", ("rmse.", "maxae.", "floor_")),
    "rollout-error": ("step", ("rmse.", "maxae.", "floor_")),
    "entropy-vs-NT": ("N_T", ("entropy",)),
    "entropy-vs-NX": ("N_X", ("entropy",)),
    "entropy-vs-step": ("step", ("entropy",)),
    "energy": ("step", ("energy.",)),
}
RECORD_FIGURES = ("error-correlates", "topk")
CONFIG_FIGURES = ("temporal-differences",)
FIGURES = tuple(METRIC_FIGURES) + RECORD_FIGURES + CONFIG_FIGURES

OUTPUT_COLUMNS = ["axis_value", "n_tokens", "metric", "mean", "ci_lo", "ci_hi", "m_effective", "scale", "coefficient"]


def metric_figure(metrics: pd.DataFrame, figure: str, trial: Optional[int] = None) -> pd.DataFrame:
    """
    Slice metrics.csv into the long-format table behind one figure.

    rollout-error rows carry a log-log slope fitted per metric over the steps;
    with a trial index they show that trial's per-run interval instead of the
    cross-trial one.
    """
    if figure not in METRIC_FIGURES:
        raise InvalidArgumentError(f"unknown metric figure: {figure}")
    axis, prefixes = METRIC_FIGURES[figure]

    frame = metrics[(metrics["axis"] == axis) & metrics["metric"].str.startswith(prefixes)]
    if trial is None:
        frame = frame[frame["trial"].isna()]
    else:
        frame = frame[frame["trial"] == trial]
    frame = frame[OUTPUT_COLUMNS].sort_values(["metric", "coefficient", "axis_value"], kind="stable")
    frame = frame.reset_index(drop=True)

    if figure == "rollout-error":
        slopes = []
        for _, group in frame.groupby(["metric", "coefficient"], dropna=False, sort=False):
            ok = group[(group["axis_value"] > 0) & (group["mean"] > 0)]
            slope = loglog_slope(ok["axis_value"], ok["mean"])[0] if len(ok) >= 2 else float("nan")
            slopes.append(pd.Series(slope, index=group.index))
        frame["slope"] = pd.concat(slopes).sort_index() if slopes else pd.Series(dtype=float)
    return frame.rename(columns={"axis_value": axis})


def _pick_record(records: List[Dict[str, Any]], trial: Optional[int]) -> Dict[str, Any]:
    ok = [r for r in records if r.get("status") == "ok"]
    if trial is not None:
        ok = [r for r in ok if int(r["trial"]) == trial]
    if not ok:
        raise InvalidArgumentError(f"no completed record for trial {trial}")
    return ok[0]


def correlates_figure(records: List[Dict[str, Any]], trial: Optional[int] = None, generation: int = 0,
                      L: float = 1.0) -> pd.DataFrame:
    """|error| against value, |∂x û| and |∂t û| for one rollout."""
    record = _pick_record(records, trial)
    point = record["points"][0]
    if "dt" not in point:
        raise InvalidArgumentError("error correlates need a multi-step record")
    predicted = np.asarray(point["predictions"]["backend"][generation], dtype=float)
    reference = np.asarray(point["reference"], dtype=float)
    spatial = SpatialGrid(L, int(point["n_x"]))
    frame = error_correlates(predicted, reference, spatial, float(point["dt"]), point["steps"])
    frame.insert(0, "trial", int(record["trial"]))
    return frame


def topk_figure(records: List[Dict[str, Any]], trial: Optional[int] = None, point_index: int = 0,
                generation: int = 0, step: int = 0, k: int = 8) -> pd.DataFrame:
    """Top-k table for one recorded slice, value positions then separators."""
    record = _pick_record(records, trial)
    point = record["points"][point_index]
    values = point["distributions"][generation][step]
    if values is None:
        raise InvalidArgumentError("no value distributions recorded for this slice")
    dists = [DistributionRecord.from_dict(d) for d in values]
    separators = point.get("separators") or []
    if separators and separators[generation][step]:
        dists += [DistributionRecord.from_dict(d) for d in separators[generation][step]]
    frame = topk_table(dists, k)
    frame.insert(0, "step", point["steps"][step])
    frame.insert(0, "trial", int(record["trial"]))
    return frame


def temporal_difference_figure(config: ExperimentConfig, n_x: int = 40, n_t: int = 50,
                               trial: int = 0) -> pd.DataFrame:
    """Q_{i,j+1} - Q_{i,j} of trial `trial`'s quantized reference on an N_X x N_T grid."""
    pde_cfg = config.pde
    pde = pde_cfg.build()
    spline = sample_random_ic(
        derive_trial_seed(config.seed, trial), n_x, pde_cfg.a, pde_cfg.b, pde_cfg.boundary_spec(), pde_cfg.L
    )
    spatial, time_grid = build_grids(pde_cfg.L, n_x, pde_cfg.T, n_t)
    ref = reference_solution(pde, spline, spatial, time_grid, config.reference.refine_x, config.reference.refine_t)
    diffs = temporal_differences(quantize(ref.values))
    logger.info(f"📊 temporal differences N_X={n_x} N_T={n_t}: zero fraction {zero_fraction(diffs):.3f}")

    ii, jj = np.meshgrid(np.arange(n_x), np.arange(n_t), indexing="ij")
    return pd.DataFrame(
        {
            "i": ii.ravel(),
            "x": spatial.interior[ii.ravel()],
            "j": jj.ravel(),
            "t": time_grid.levels[jj.ravel()],
            "diff": diffs.ravel(),
        }
    )
