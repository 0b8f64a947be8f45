#!/usr/bin/env python3
"""
Tests for error, entropy, confidence-interval and energy metrics.
"""

import math

import numpy as np
import pytest

from pdeicl.exceptions import DegenerateEnergyError, InvalidArgumentError
from pdeicl.grid_ic import SpatialGrid
from pdeicl.metrics import (
    METRICS_COLUMNS,
    DistributionRecord,
    MetricSeries,
    aggregate_ci,
    build_metrics_table,
    discrete_energy,
    energy_deviation,
    error_correlates,
    loglog_slope,
    maxae_per_step,
    mean_entropy,
    neumann_extend,
    position_entropy,
    relative_deviation,
    rmse_per_step,
    summarize,
    t_quantile,
    topk_table,
)


def dist(position, *alternatives, remainder=0.0, separator=False):
    """DistributionRecord from (token, probability) pairs."""
    return DistributionRecord(position, tuple(alternatives), remainder, separator)


class TestErrors:
    """Test cases for per-step error metrics"""

    def test_rmse_and_maxae(self):
        """Test RMSE and MaxAE on hand-computed columns"""
        predicted = np.array([0.5, 0.0, 0.0])
        reference = np.array([0.0, 0.0, 0.0])
        assert rmse_per_step(predicted, reference)[0] == pytest.approx(math.sqrt(0.25 / 3))
        predicted = np.array([0.1, -0.4, 0.0])
        assert maxae_per_step(predicted, reference)[0] == pytest.approx(0.4)

    def test_per_column(self):
        """Test errors are computed per column"""
        predicted = np.array([[1.0, 0.0], [1.0, 0.0]])
        assert list(rmse_per_step(predicted, np.zeros((2, 2)))) == [1.0, 0.0]

    def test_shape_mismatch(self):
        """Test mismatched shapes are rejected"""
        with pytest.raises(InvalidArgumentError):
            rmse_per_step(np.zeros(3), np.zeros(4))


class TestEntropy:
    """Test cases for token entropy"""

    def test_one_hot_is_zero(self):
        """Test a one-hot distribution has zero entropy"""
        assert position_entropy(dist(0, ("500", 1.0))) == 0.0

    def test_uniform(self):
        """Test a uniform distribution has log n entropy"""
        n = 5
        record = dist(0, *((str(500 + i), 1.0 / n) for i in range(n)))
        assert position_entropy(record) == pytest.approx(math.log(n))
        assert position_entropy(record, base=2) == pytest.approx(math.log2(n))

    def test_mean_over_positions(self):
        """Test entropy averages value positions and skips separators"""
        records = [
            dist(0, ("500", 0.5), ("501", 0.5)),
            dist(1, ("700", 1.0)),
            dist(1, (",", 1.0), separator=True),
        ]
        value = mean_entropy(records, n_x=2)
        assert value.value == pytest.approx(math.log(2) / 2)
        assert value.k == 2
        assert not value.lower_bound

    def test_remainder_marks_lower_bound(self):
        """Test remainder mass counts as one outcome and marks a lower bound"""
        records = [dist(0, ("500", 0.7), ("501", 0.2), remainder=0.1)]
        value = mean_entropy(records)
        expected = -sum(p * math.log(p) for p in (0.7, 0.2, 0.1))
        assert value.value == pytest.approx(expected)
        assert value.lower_bound

    def test_missing_positions(self):
        """Test missing value positions are rejected"""
        with pytest.raises(InvalidArgumentError):
            mean_entropy([dist(0, ("500", 1.0))], n_x=2)

    def test_only_separators(self):
        """Test slices without value positions are rejected"""
        with pytest.raises(InvalidArgumentError):
            mean_entropy([dist(0, (";", 1.0), separator=True)])

    def test_record_round_trip(self):
        """Test records rebuilt from dicts compare equal"""
        record = dist(3, ("500", 0.75), ("499", 0.25))
        assert DistributionRecord.from_dict(record.to_dict()) == record


class TestConfidenceIntervals:
    """Test cases for t-based confidence intervals"""

    def test_t_quantiles(self):
        """Test t quantiles against tabulated values"""
        assert t_quantile(0.975, 19) == pytest.approx(2.0930, abs=1e-3)
        assert t_quantile(0.975, 1) == pytest.approx(12.7062, abs=1e-3)
        assert t_quantile(0.975, 1e6) == pytest.approx(1.95996, abs=1e-4)
        assert t_quantile(0.5, 7) == pytest.approx(0.0, abs=1e-12)

    def test_t_quantile_domain(self):
        """Test quantile arguments are checked"""
        with pytest.raises(InvalidArgumentError):
            t_quantile(1.0, 5)
        with pytest.raises(InvalidArgumentError):
            t_quantile(0.9, 0.5)

    def test_equal_values_have_zero_width(self):
        """Test equal values give a zero-width interval"""
        interval = aggregate_ci([0.3] * 10, scale="log10")
        assert interval.ci_lo == pytest.approx(0.3)
        assert interval.ci_hi == pytest.approx(0.3)

    def test_linear_two_values(self):
        """Test the linear interval for two values"""
        interval = aggregate_ci([1.0, 3.0], scale="linear")
        assert interval.mean == 2.0
        assert interval.ci_hi - interval.mean == pytest.approx(12.7062, abs=1e-3)
        assert interval.mean - interval.ci_lo == pytest.approx(12.7062, abs=1e-3)

    def test_log_interval(self):
        """Test the log10 interval is symmetric in log space"""
        values = np.array([1.0, 2.0, 3.0, 4.0])
        interval = aggregate_ci(values, scale="log10")
        t = 3.182446
        half = t * np.std(values, ddof=1) / (2.5 * 2.0 * math.log(10))
        assert math.log10(interval.ci_lo) == pytest.approx(math.log10(2.5) - half, abs=1e-5)
        assert math.log10(interval.ci_hi) == pytest.approx(math.log10(2.5) + half, abs=1e-5)
        # symmetric in log10
        assert interval.ci_lo * interval.ci_hi == pytest.approx(2.5 ** 2)

    def test_log_needs_positive_values(self):
        """Test log intervals need positive values"""
        with pytest.raises(InvalidArgumentError):
            aggregate_ci([0.0, 1.0], scale="log10")

    def test_needs_two_values(self):
        """Test intervals need two values"""
        with pytest.raises(InvalidArgumentError):
            aggregate_ci([1.0])

    def test_linear_coverage(self, rng):
        """Test the 95% interval covers the mean about 95% of the time"""
        covered = 0
        for _ in range(1000):
            interval = aggregate_ci(rng.normal(5.0, 1.0, 20), scale="linear")
            covered += interval.ci_lo <= 5.0 <= interval.ci_hi
        assert 0.93 <= covered / 1000 <= 0.97

    def test_summarize_fallbacks(self):
        """Test table fallbacks for few or non-positive values"""
        empty = summarize([])
        assert empty.m == 0 and math.isnan(empty.mean)
        single = summarize([0.2])
        assert single.m == 1 and single.mean == 0.2 and math.isnan(single.ci_lo)
        mixed = summarize([-1.0, 1.0, 2.0], scale="log10")
        assert mixed.scale == "linear"


class TestSlope:
    """Test cases for log-log slope fits"""

    def test_power_law(self):
        """Test the slope of an exact power law"""
        xs = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
        slope, intercept = loglog_slope(xs, 3.0 * xs ** 2)
        assert slope == pytest.approx(2.0)
        assert intercept == pytest.approx(math.log10(3.0))

    def test_constant(self):
        """Test a constant series has zero slope"""
        slope, _ = loglog_slope([1, 10, 100], [5, 5, 5])
        assert slope == pytest.approx(0.0, abs=1e-12)

    def test_matches_normal_equations(self, rng):
        """Test the fit matches the normal equations"""
        xs = rng.uniform(1, 100, 30)
        ys = rng.uniform(1, 100, 30)
        A = np.column_stack([np.log10(xs), np.ones_like(xs)])
        expected = np.linalg.solve(A.T @ A, A.T @ np.log10(ys))
        assert loglog_slope(xs, ys) == pytest.approx(tuple(expected))

    def test_rejects_nonpositive(self):
        """Test non-positive values are rejected"""
        with pytest.raises(InvalidArgumentError):
            loglog_slope([1, 2], [0, 1])


class TestEnergy:
    """Test cases for the discrete energy and its deviation"""

    @pytest.fixture
    def spatial(self):
        """Spatial grid with 14 interior points"""
        return SpatialGrid(1.0, 14)

    def test_constant_field(self, spatial):
        """Test a constant field has the trapezoid energy and no deviation"""
        field = np.full((14, 6), 0.5)
        assert np.allclose(discrete_energy(field, spatial), 1.0)
        assert np.allclose(energy_deviation(field, spatial, 1.0), 0.0)

    def test_scaled_field(self, spatial):
        """Test a 10% larger field deviates by 10%"""
        field = np.full((14, 2), 0.55)
        assert np.allclose(energy_deviation(field, spatial, 1.0), 10.0)

    def test_boundary_reconstruction(self, spatial):
        """Test the Neumann boundary reconstruction"""
        # (x + 1)^2 has zero slope at x = -1
        interior = (spatial.interior + 1.0) ** 2
        assert neumann_extend(interior)[0] == pytest.approx(0.0, abs=1e-14)
        full = neumann_extend(np.full(4, 2.0))
        assert list(full) == [2.0] * 6

    def test_relative_deviation(self):
        """Test ΔE is the percentage deviation from E(0)"""
        assert list(relative_deviation([2.0, 2.02, 1.9], 2.0)) == pytest.approx([0.0, 1.0, 5.0])
        with pytest.raises(DegenerateEnergyError):
            relative_deviation([1.0], 0.0)

    def test_degenerate_energy(self, spatial):
        """Test a vanishing E(0) raises"""
        with pytest.raises(DegenerateEnergyError):
            energy_deviation(np.zeros((14, 1)), spatial, 1e-9)

    def test_needs_two_points(self):
        """Test the reconstruction needs two interior points"""
        with pytest.raises(InvalidArgumentError):
            neumann_extend(np.array([1.0]))


class TestDiagnostics:
    """Test cases for error correlates and top-k tables"""

    def test_error_correlates(self):
        """Test error correlates on a linear field"""
        spatial = SpatialGrid(1.0, 6)
        dt = 0.1
        t = dt * np.arange(1, 5)
        predicted = np.outer(spatial.interior, t)
        frame = error_correlates(predicted, np.zeros_like(predicted), spatial, dt, steps=[1, 2, 3, 4])
        assert len(frame) == 24
        assert list(frame.columns) == ["i", "step", "x", "abs_error", "value", "abs_dudx", "abs_dudt"]
        row = frame.iloc[2 * 4 + 3]
        assert row["i"] == 2 and row["step"] == 4
        assert row["abs_error"] == pytest.approx(abs(spatial.interior[2] * t[3]))
        assert row["abs_dudx"] == pytest.approx(t[3])
        assert row["abs_dudt"] == pytest.approx(abs(spatial.interior[2]))

    def test_topk_table(self):
        """Test top-k rows per position"""
        records = [dist(0, ("500", 0.6), ("501", 0.3), ("502", 0.1)), dist(1, (",", 1.0), separator=True)]
        frame = topk_table(records, k=2)
        assert list(frame["rank"]) == [1, 2, 1]
        assert list(frame["token"]) == ["500", "501", ","]
        assert list(frame["separator"]) == [False, False, True]


def one_step_record(trial, backend_value, status="ok"):
    """One-step trial record on N_X=2 with scripted predictions and distributions."""
    reference = [[1.0], [1.0]]
    return {
        "trial": trial,
        "status": status,
        "axis": "N_T",
        "coefficient": None,
        "points": [
            {
                "n_x": 2,
                "n_t": 3,
                "reference": reference,
                "predictions": {
                    "backend": [[[1.0 + backend_value], [1.0 + backend_value]]],
                    "ftcs": [[[1.0], [1.0 + 0.2]]],
                },
                "floor_rmse": [0.001],
                "floor_maxae": [0.002],
                "distributions": [[[
                    {"position": 0, "alternatives": [["500", 0.5], ["501", 0.5]], "remainder": 0.0},
                    {"position": 1, "alternatives": [["500", 1.0]], "remainder": 0.0},
                ]]],
            }
        ],
    }


class TestMetricsTable:
    """Test cases for building metrics.csv"""

    def test_one_step_rows(self):
        """Test one-step records aggregate across completed trials"""
        records = [one_step_record(0, 0.1), one_step_record(1, 0.2), one_step_record(2, 5.0, status="failed")]
        frame = build_metrics_table(records, run_id="r1")
        assert list(frame.columns) == METRICS_COLUMNS

        backend = frame[frame["metric"] == "rmse.backend"].iloc[0]
        assert backend["axis"] == "N_T"
        assert backend["axis_value"] == 3
        assert backend["n_tokens"] == 11
        assert backend["mean"] == pytest.approx(0.15)
        assert backend["m_effective"] == 2
        assert backend["scale"] == "log10"

        entropy = frame[frame["metric"] == "entropy.backend"].iloc[0]
        assert entropy["mean"] == pytest.approx(math.log(2) / 2)
        assert entropy["scale"] == "linear"

        assert set(frame["metric"]) == {
            "rmse.backend", "maxae.backend", "rmse.ftcs", "maxae.ftcs", "floor_rmse", "floor_maxae",
            "entropy.backend", "entropy_k.backend", "entropy_lower_bound.backend",
        }

    def test_entropy_base(self):
        """Test the entropy log base"""
        frame = build_metrics_table([one_step_record(0, 0.1), one_step_record(1, 0.1)], entropy_base=2)
        entropy = frame[frame["metric"] == "entropy.backend"].iloc[0]
        assert entropy["mean"] == pytest.approx(0.5)

    def test_per_trial_rollout_rows(self):
        """Test per-trial rollout rows over generations"""
        record = {
            "trial": 4,
            "status": "ok",
            "axis": "step",
            "coefficient": 0.01,
            "points": [
                {
                    "n_x": 2,
                    "n_t": 5,
                    "reference": [[0.0, 0.0], [0.0, 0.0]],
                    "predictions": {"backend": [[[0.1, 0.2], [0.1, 0.2]], [[0.3, 0.4], [0.3, 0.4]]]},
                }
            ],
        }
        frame = build_metrics_table([record], per_trial=True)
        per_trial = frame[frame["trial"] == 4]
        assert list(per_trial["axis_value"]) == [1, 2]
        assert list(per_trial["n_tokens"]) == [3, 7]
        assert per_trial.iloc[0]["mean"] == pytest.approx(0.2)
        assert per_trial.iloc[0]["m_effective"] == 2

    def test_entropy_labels(self):
        """Test entropy rows carry the top-k size and the lower-bound share"""
        frame = build_metrics_table([one_step_record(0, 0.1), one_step_record(1, 0.1)])
        assert frame[frame["metric"] == "entropy_k.backend"].iloc[0]["mean"] == 2
        assert frame[frame["metric"] == "entropy_lower_bound.backend"].iloc[0]["mean"] == 0.0

        truncated = [one_step_record(0, 0.1), one_step_record(1, 0.1)]
        truncated[0]["points"][0]["distributions"][0][0][0] = {
            "position": 0, "alternatives": [["500", 0.5], ["501", 0.3]], "remainder": 0.2,
        }
        frame = build_metrics_table(truncated)
        assert frame[frame["metric"] == "entropy_lower_bound.backend"].iloc[0]["mean"] == pytest.approx(0.5)

        for record in truncated:
            record["points"][0]["exact_distributions"] = True
        frame = build_metrics_table(truncated)
        assert frame[frame["metric"] == "entropy_lower_bound.backend"].iloc[0]["mean"] == 0.0

    def test_energy_references(self):
        """Test energy rows for the methods and both references"""
        record = one_step_record(0, 0.0)
        record["axis"] = "step"
        point = record["points"][0]
        point["energy"] = {"e0": 2.0, "reference_energy": [2.0, 2.02], "grid_reference": [[1.0], [1.0]]}
        point["reference"] = [[1.0], [1.0]]
        frame = build_metrics_table([record], L=1.0)
        grid = frame[frame["metric"] == "energy.grid_reference"]
        assert list(grid["mean"]) == pytest.approx([0.0, 1.0])
        assert "energy.restricted_reference" in set(frame["metric"])
        assert "energy.backend" in set(frame["metric"])

    def test_metric_series(self):
        """Test a series aggregates each axis point and emits one row per point"""
        series = MetricSeries("N_T", "rmse.backend")
        series.add(2, 3, [0.1, 0.2, None, float("nan")])
        series.add(4, 7, [0.3])
        assert len(series) == 2
        assert series.per_trial[0] == [0.1, 0.2]
        assert series.ci_lo[0] <= series.mean[0] <= series.ci_hi[0]
        rows = series.rows("r1", coefficient=0.5)
        assert [r["axis_value"] for r in rows] == [2, 4]
        assert rows[1]["m_effective"] == 1
        assert set(rows[0]) == set(METRICS_COLUMNS)

    def test_empty(self):
        """Test no records give an empty table"""
        frame = build_metrics_table([])
        assert frame.empty
        assert list(frame.columns) == METRICS_COLUMNS


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
