#!/usr/bin/env python3
"""
Accuracy, uncertainty and conservation metrics.

Per-step RMSE/MaxAE, mean spatial entropy of value-token distributions,
Student-t confidence intervals on log and linear scales, log-log slope fits,
energy deviation under Neumann boundaries, error correlates and top-k token
tables. The last part of the module turns records.jsonl into metrics.csv.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from scipy.integrate import trapezoid

from .codec import token_count
from .exceptions import DegenerateEnergyError, InvalidArgumentError
from .grid_ic import SpatialGrid

logger = logging.getLogger(__name__)

ENERGY_THRESHOLD = 1e-6
LOWER_BOUND_MASS = 1e-6

METRICS_COLUMNS = [
    "run_id",
    "axis",
    "axis_value",
    "n_tokens",
    "metric",
    "mean",
    "ci_lo",
    "ci_hi",
    "m_effective",
    "scale",
    "coefficient",
    "trial",
]


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

def _pair(predicted, reference) -> Tuple[np.ndarray, np.ndarray]:
    predicted = np.asarray(predicted, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if predicted.shape != reference.shape:
        raise InvalidArgumentError(f"shape mismatch: predicted {predicted.shape} vs reference {reference.shape}")
    if predicted.ndim == 1:
        predicted, reference = predicted[:, None], reference[:, None]
    return predicted, reference


def rmse_per_step(predicted, reference) -> np.ndarray:
    """RMSE_j = sqrt(mean_i (ũ_ij - û_ij)²) for every column j."""
    predicted, reference = _pair(predicted, reference)
    return np.sqrt(np.mean((predicted - reference) ** 2, axis=0))


def maxae_per_step(predicted, reference) -> np.ndarray:
    predicted, reference = _pair(predicted, reference)
    return np.max(np.abs(predicted - reference), axis=0)


# ---------------------------------------------------------------------------
# Entropy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistributionRecord:
    """Observed distribution at one emitted position."""

    position: int
    alternatives: Tuple[Tuple[str, float], ...]
    remainder: float = 0.0
    separator: bool = False

    @property
    def k(self) -> int:
        return len(self.alternatives)

    def probabilities(self) -> np.ndarray:
        """Alternatives plus the remainder bucket as one outcome."""
        probs = [p for _, p in self.alternatives]
        if self.remainder > 0:
            probs.append(self.remainder)
        return np.asarray(probs, dtype=float)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "position": self.position,
            "alternatives": [[t, p] for t, p in self.alternatives],
            "remainder": self.remainder,
            "separator": self.separator,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DistributionRecord":
        return cls(
            position=int(data["position"]),
            alternatives=tuple((str(t), float(p)) for t, p in data["alternatives"]),
            remainder=float(data.get("remainder", 0.0)),
            separator=bool(data.get("separator", False)),
        )

    @classmethod
    def from_distribution(cls, position: int, dist, separator: bool = False) -> "DistributionRecord":
        return cls(position, tuple(dist.alternatives), dist.remainder, separator)


@dataclass(frozen=True)
class EntropyValue:
    """Mean spatial entropy with its top-k label."""

    value: float
    k: int
    lower_bound: bool


def position_entropy(record: DistributionRecord, base: Optional[float] = None) -> float:
    probs = record.probabilities()
    if probs.size == 0 or probs.sum() <= 0:
        return 0.0
    return float(stats.entropy(probs, base=base))


def mean_entropy(records: Sequence[DistributionRecord], n_x: Optional[int] = None,
                 base: Optional[float] = None) -> EntropyValue:
    """
    Average Shannon entropy over the value positions of one slice.

    Separator records are skipped. The result is natural-log by default and
    flagged as a lower bound when any position carries remainder mass.
    """
    values = [r for r in records if not r.separator]
    if not values:
        raise InvalidArgumentError("no value-position distributions to average")
    if n_x is not None:
        positions = {r.position for r in values}
        if positions != set(range(n_x)):
            missing = sorted(set(range(n_x)) - positions)
            raise InvalidArgumentError(f"distributions missing for positions {missing}")

    entropies = [position_entropy(r, base) for r in values]
    return EntropyValue(
        value=float(np.mean(entropies)),
        k=max(r.k for r in values),
        lower_bound=any(r.remainder > LOWER_BOUND_MASS for r in values),
    )


# ---------------------------------------------------------------------------
# Confidence intervals and fits
# ---------------------------------------------------------------------------

def t_quantile(p: float, df: float) -> float:
    """Quantile of Student's t distribution."""
    if not 0.0 < p < 1.0:
        raise InvalidArgumentError(f"p must lie in (0, 1), got {p}")
    if not df >= 1:
        raise InvalidArgumentError(f"df must be >= 1, got {df}")
    return float(stats.t.ppf(p, df))


@dataclass(frozen=True)
class Interval:
    mean: float
    ci_lo: float
    ci_hi: float
    m: int
    scale: str


def aggregate_ci(values: Iterable[float], scale: str = "log10", confidence: float = 0.95) -> Interval:
    """
    Mean and two-sided t confidence interval.

    Linear: mean ± t·σ/√M. Log: log10(E) ± t·σ/(E·√M·ln10), mapped back to
    value space, so the interval is symmetric in log10.
    """
    values = np.asarray(list(values), dtype=float)
    m = values.size
    if m < 2:
        raise InvalidArgumentError(f"a confidence interval needs M >= 2, got {m}")
    if scale not in ("log10", "linear"):
        raise InvalidArgumentError(f"unknown scale: {scale}")

    mean = float(np.mean(values))
    sigma = float(np.std(values, ddof=1))
    t = t_quantile(0.5 + confidence / 2.0, m - 1)

    if scale == "linear":
        half = t * sigma / math.sqrt(m)
        return Interval(mean, mean - half, mean + half, m, scale)

    if np.any(values <= 0):
        raise InvalidArgumentError("log-scale intervals need strictly positive values")
    half = t * sigma / (mean * math.sqrt(m) * math.log(10.0))
    center = math.log10(mean)
    return Interval(mean, 10.0 ** (center - half), 10.0 ** (center + half), m, scale)


def loglog_slope(xs, ys) -> Tuple[float, float]:
    """Least-squares fit of log10(y) = slope·log10(x) + intercept."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 2:
        raise InvalidArgumentError("loglog_slope needs two or more matching points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise InvalidArgumentError("loglog_slope needs strictly positive inputs")
    slope, intercept = np.polyfit(np.log10(xs), np.log10(ys), 1)
    return float(slope), float(intercept)


# ---------------------------------------------------------------------------
# Energy
# ---------------------------------------------------------------------------

def neumann_extend(interior: np.ndarray) -> np.ndarray:
    """Append boundary values û_0 = (4û_1 - û_2)/3 and û_{N+1} = (4û_N - û_{N-1})/3."""
    interior = np.asarray(interior, dtype=float)
    if interior.shape[0] < 2:
        raise InvalidArgumentError("Neumann boundary reconstruction needs N_X >= 2")
    left = (4.0 * interior[0] - interior[1]) / 3.0
    right = (4.0 * interior[-1] - interior[-2]) / 3.0
    return np.concatenate(([left], interior, [right]), axis=0)


def discrete_energy(interior, spatial: SpatialGrid) -> np.ndarray:
    """Trapezoidal integral of each column after Neumann boundary reconstruction."""
    interior = np.asarray(interior, dtype=float)
    if interior.ndim == 1:
        interior = interior[:, None]
    full = neumann_extend(interior)
    return trapezoid(full, dx=spatial.dx, axis=0)


def relative_deviation(energies, e0: float) -> np.ndarray:
    """ΔE_j = |Ê_j - E(0)| / |E(0)| · 100."""
    if abs(e0) <= ENERGY_THRESHOLD:
        raise DegenerateEnergyError(f"|E(0)| = {abs(e0):.3e} is below {ENERGY_THRESHOLD}")
    return np.abs(np.asarray(energies, dtype=float) - e0) / abs(e0) * 100.0


def energy_deviation(fields, spatial: SpatialGrid, e0: float) -> np.ndarray:
    """ΔE_j of every column of an interior field on the given grid."""
    return relative_deviation(discrete_energy(fields, spatial), e0)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def error_correlates(predicted, reference, spatial: SpatialGrid, dt: float,
                     steps: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """
    Pointwise |error| with the local value and gradient magnitudes.

    Derivatives are taken on the prediction with central differences in the
    interior and one-sided differences at the ends.
    """
    predicted, reference = _pair(predicted, reference)
    n_x, n_steps = predicted.shape
    if n_steps < 2:
        raise InvalidArgumentError("error correlates need at least two steps")
    if n_x < 2:
        raise InvalidArgumentError("error correlates need N_X >= 2")

    dudx = np.gradient(predicted, spatial.dx, axis=0, edge_order=1)
    dudt = np.gradient(predicted, dt, axis=1, edge_order=1)
    steps = list(steps) if steps is not None else list(range(n_steps))
    ii, jj = np.meshgrid(np.arange(n_x), np.arange(n_steps), indexing="ij")
    return pd.DataFrame(
        {
            "i": ii.ravel(),
            "step": np.asarray(steps)[jj.ravel()],
            "x": spatial.interior[ii.ravel()],
            "abs_error": np.abs(predicted - reference).ravel(),
            "value": predicted.ravel(),
            "abs_dudx": np.abs(dudx).ravel(),
            "abs_dudt": np.abs(dudt).ravel(),
        }
    )


def topk_table(records: Sequence[DistributionRecord], k: int = 8) -> pd.DataFrame:
    """Top-k (token, probability) rows per spatial position, descending."""
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    rows = []
    for record in records:
        ranked = sorted(record.alternatives, key=lambda tp: -tp[1])[:k]
        for rank, (token, prob) in enumerate(ranked, 1):
            rows.append(
                {"position": record.position, "rank": rank, "token": token,
                 "probability": prob, "separator": record.separator}
            )
    return pd.DataFrame(rows, columns=["position", "rank", "token", "probability", "separator"])


# ---------------------------------------------------------------------------
# Series and the metrics table
# ---------------------------------------------------------------------------

@dataclass
class MetricSeries:
    """A metric over an axis, aggregated across trials."""

    axis: str
    metric: str
    axis_values: List[float] = field(default_factory=list)
    n_tokens: List[int] = field(default_factory=list)
    per_trial: List[List[float]] = field(default_factory=list)
    mean: List[float] = field(default_factory=list)
    ci_lo: List[float] = field(default_factory=list)
    ci_hi: List[float] = field(default_factory=list)
    m_effective: List[int] = field(default_factory=list)
    scales: List[str] = field(default_factory=list)

    def add(self, axis_value, n_tokens: int, values: Sequence[float], scale: str = "log10"):
        """Aggregate one axis point; None and non-finite values are dropped."""
        values = [float(v) for v in values if v is not None and np.isfinite(v)]
        interval = summarize(values, scale)
        self.axis_values.append(axis_value)
        self.n_tokens.append(n_tokens)
        self.per_trial.append(values)
        self.mean.append(interval.mean)
        self.ci_lo.append(interval.ci_lo)
        self.ci_hi.append(interval.ci_hi)
        self.m_effective.append(interval.m)
        self.scales.append(interval.scale)

    def rows(self, run_id: str, coefficient=None, trial=None) -> List[Dict[str, Any]]:
        """metrics.csv rows, one per axis value."""
        return [
            {
                "run_id": run_id,
                "axis": self.axis,
                "axis_value": self.axis_values[k],
                "n_tokens": self.n_tokens[k],
                "metric": self.metric,
                "mean": self.mean[k],
                "ci_lo": self.ci_lo[k],
                "ci_hi": self.ci_hi[k],
                "m_effective": self.m_effective[k],
                "scale": self.scales[k],
                "coefficient": coefficient,
                "trial": trial,
            }
            for k in range(len(self))
        ]

    def __len__(self) -> int:
        return len(self.axis_values)


def summarize(values: Sequence[float], scale: str = "log10") -> Interval:
    """
    aggregate_ci with fallbacks for table building: fewer than two values give
    NaN bounds, and log scale drops to linear when a value is not positive.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return Interval(float("nan"), float("nan"), float("nan"), 0, scale)
    if values.size < 2:
        return Interval(float(values[0]), float("nan"), float("nan"), 1, scale)
    if scale == "log10" and np.any(values <= 0):
        scale = "linear"
    return aggregate_ci(values, scale)


def _point_spatial(point: Dict[str, Any], L: float) -> SpatialGrid:
    return SpatialGrid(L, int(point["n_x"]))


def _entropy_of(dists: Optional[List[Dict[str, Any]]], n_x: int, base: Optional[float]) -> Optional[EntropyValue]:
    if not dists:
        return None
    records = [DistributionRecord.from_dict(d) for d in dists]
    try:
        return mean_entropy(records, n_x, base)
    except InvalidArgumentError:
        return None


def point_metrics(point: Dict[str, Any], entropy_base: Optional[float] = None,
                  average_predictions: bool = False) -> Dict[str, List[Optional[float]]]:
    """
    Per-step metric values for one sweep point of one trial.

    Returns a mapping metric name -> list over prediction steps. Backend
    metrics are averaged over generations (per-generation errors first unless
    average_predictions is set).
    entropy.backend comes with entropy_k.backend, the top-k size behind it,
    and entropy_lower_bound.backend, the share of generations whose top-k
    left out more than LOWER_BOUND_MASS.
    """
    reference = np.asarray(point["reference"], dtype=float)
    n_x = int(point["n_x"])
    out: Dict[str, List[Optional[float]]] = {}

    for method, generations in point["predictions"].items():
        gens = [np.asarray(g, dtype=float) for g in generations]
        if average_predictions and len(gens) > 1:
            mean_field = np.mean(gens, axis=0)
            out[f"rmse.{method}"] = list(rmse_per_step(mean_field, reference))
            out[f"maxae.{method}"] = list(maxae_per_step(mean_field, reference))
        else:
            out[f"rmse.{method}"] = list(np.mean([rmse_per_step(g, reference) for g in gens], axis=0))
            out[f"maxae.{method}"] = list(np.mean([maxae_per_step(g, reference) for g in gens], axis=0))

    if "floor_rmse" in point:
        out["floor_rmse"] = list(point["floor_rmse"])
        out["floor_maxae"] = list(point["floor_maxae"])

    distributions = point.get("distributions") or []
    if distributions:
        n_steps = reference.shape[1] if reference.ndim == 2 else 1
        # exact backends return the full distribution, so no value is a lower bound
        exact = bool(point.get("exact_distributions", False))
        per_step, ks, bounds = [], [], []
        for j in range(n_steps):
            hs = [_entropy_of(gen[j] if j < len(gen) else None, n_x, entropy_base) for gen in distributions]
            hs = [h for h in hs if h is not None]
            if not hs:
                per_step.append(None)
                ks.append(None)
                bounds.append(None)
                continue
            per_step.append(float(np.mean([h.value for h in hs])))
            ks.append(max(h.k for h in hs))
            bounds.append(0.0 if exact else float(np.mean([h.lower_bound for h in hs])))
        out["entropy.backend"] = per_step
        out["entropy_k.backend"] = ks
        out["entropy_lower_bound.backend"] = bounds
    return out


def generation_errors(point: Dict[str, Any], method: str = "backend") -> np.ndarray:
    """Per-generation RMSE matrix (G, n_steps) for one trial."""
    reference = np.asarray(point["reference"], dtype=float)
    gens = point["predictions"].get(method, [])
    return np.asarray([rmse_per_step(np.asarray(g, dtype=float), reference) for g in gens])


def energy_metrics(point: Dict[str, Any], L: float) -> Dict[str, List[float]]:
    """
    ΔE per step for every method and the references.

    energy.grid_reference integrates the refined trajectory on its own grid;
    energy.restricted_reference integrates that trajectory restricted to the
    coarse nodes, so it carries the coarse quadrature error the methods share.
    """
    energy = point.get("energy")
    if not energy:
        return {}
    spatial = _point_spatial(point, L)
    e0 = float(energy["e0"])
    out: Dict[str, List[float]] = {}
    for method, generations in point["predictions"].items():
        devs = [energy_deviation(np.asarray(g, dtype=float), spatial, e0) for g in generations]
        out[f"energy.{method}"] = list(np.mean(devs, axis=0))
    if "reference_energy" in energy:
        out["energy.grid_reference"] = list(relative_deviation(energy["reference_energy"], e0))
    out["energy.restricted_reference"] = list(energy_deviation(np.asarray(energy["grid_reference"]), spatial, e0))
    return out


def _axis_and_tokens(record: Dict[str, Any], point: Dict[str, Any], step_index: int):
    axis = record["axis"]
    n_x = int(point["n_x"])
    if axis == "N_T":
        return axis, int(point["n_t"]), token_count(int(point["n_t"]), n_x)
    if axis == "N_X":
        return axis, n_x, token_count(1, n_x)
    n = step_index + 1
    return axis, n, token_count(n, n_x)


def build_metrics_table(records: Iterable[Dict[str, Any]], run_id: str = "run",
                        entropy_base: Optional[float] = None, average_predictions: bool = False,
                        L: float = 1.0, per_trial: bool = False) -> pd.DataFrame:
    """
    Aggregate trial records into the metrics.csv table.

    Cross-trial rows have an empty trial column. With per_trial, rollout
    records also yield per-run rows aggregated over the G generations of each
    trial.
    """
    # (coefficient, axis, metric) -> axis value -> values across trials
    buckets: Dict[Tuple, Dict[Any, List[float]]] = {}
    token_axis: Dict[Tuple, int] = {}
    scale_of: Dict[str, str] = {}
    rows: List[Dict[str, Any]] = []

    for record in records:
        if record.get("status") != "ok":
            continue
        coefficient = record.get("coefficient")
        for point in record["points"]:
            values = point_metrics(point, entropy_base, average_predictions)
            values.update(energy_metrics(point, L))
            for metric, per_step in values.items():
                scale_of.setdefault(metric, "linear" if metric.startswith(("energy", "entropy")) else "log10")
                for s, value in enumerate(per_step):
                    if value is None:
                        continue
                    axis, axis_value, n_tok = _axis_and_tokens(record, point, s)
                    buckets.setdefault((coefficient, axis, metric), {}).setdefault(axis_value, []).append(float(value))
                    token_axis[(coefficient, axis, axis_value, metric)] = n_tok

            if per_trial and record["axis"] == "step":
                errors = generation_errors(point)
                series = MetricSeries("step", "rmse.backend")
                for s in range(errors.shape[1] if errors.size else 0):
                    _, axis_value, n_tok = _axis_and_tokens(record, point, s)
                    series.add(axis_value, n_tok, errors[:, s], "log10")
                rows.extend(series.rows(run_id, coefficient, record["trial"]))

    for (coefficient, axis, metric), by_value in buckets.items():
        series = MetricSeries(axis, metric)
        for axis_value, values in by_value.items():
            series.add(axis_value, token_axis[(coefficient, axis, axis_value, metric)], values, scale_of[metric])
        rows.extend(series.rows(run_id, coefficient))

    frame = pd.DataFrame(rows, columns=METRICS_COLUMNS)
    if not frame.empty:
        frame = frame.sort_values(["metric", "coefficient", "trial", "axis_value"], na_position="first",
                                  kind="stable").reset_index(drop=True)
    logger.info(f"📊 metrics table: {len(frame)} rows over {frame['metric'].nunique() if len(frame) else 0} metrics")
    return frame
