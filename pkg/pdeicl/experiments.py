#!/usr/bin/env python3
"""
Monte Carlo experiment families.

Each trial draws one random IC spline from (seed, trial index), solves the
refined reference on every sweep grid, quantizes it, asks the backend to
continue the serialized context and records the reconstructed prediction
beside the classical baselines. Trials run on a bounded thread pool and are
appended to records.jsonl as they finish.
"""

import json
import logging
import threading
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Set, Tuple

import numpy as np

from .backends import BackendManager, ProblemHint
from .codec import (
    decode_codes,
    encode_context,
    quantization_floor,
    quantize,
    reconstruct,
    temporal_differences,
    token_count,
    write_stream,
    zero_fraction,
)
from .config import MAX_FAILURE_FRACTION, ExperimentConfig
from .exceptions import (
    BackendError,
    DegenerateEnergyError,
    DivergenceError,
    ExcessiveFailuresError,
    InvalidArgumentError,
    PdeIclError,
    TrialFailure,
)
from .grid_ic import ICSpline, build_grids, derive_trial_seed, sample_random_ic
from .metrics import ENERGY_THRESHOLD, DistributionRecord, discrete_energy
from .solvers import (
    PDESpec,
    SchemeId,
    SolutionCache,
    SolutionField,
    march,
    reference_solution,
    refined_solution,
    restrict,
)

logger = logging.getLogger(__name__)

RECORDS_FILE = "records.jsonl"
_FAMILY_AXIS = {"one-step-context": "N_T", "one-step-output": "N_X", "multi-step": "step", "energy": "step"}


def multistep_split(n_t: int) -> Tuple[int, int]:
    """(context columns, predicted columns) for a rollout over N_T steps."""
    n_ctx = (2 * n_t) // 3
    if n_ctx < 1 or n_ctx > n_t:
        raise InvalidArgumentError(f"N_T={n_t} leaves no room for a context/prediction split")
    return n_ctx, n_t + 1 - n_ctx


@dataclass
class TrialRecord:
    """Outcome of one Monte Carlo trial, serialized as one JSON line."""

    family: str
    trial: int
    seed: int
    axis: str
    status: str = "ok"
    reason: Optional[str] = None
    failed_step: Optional[int] = None
    coefficient: Optional[float] = None
    ic: Optional[Dict[str, Any]] = None
    fingerprint: Optional[str] = None
    points: List[Dict[str, Any]] = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def key(self) -> Tuple[Optional[float], int]:
        return self.coefficient, self.trial

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrialRecord":
        return cls(**data)


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


class RecordWriter:
    """Appends trial records to a JSON-lines file from any worker thread."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def write(self, record: TrialRecord):
        line = json.dumps(_jsonable(record.to_dict()))
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")


def load_records(path) -> List[Dict[str, Any]]:
    """Read records.jsonl, ignoring a truncated final line."""
    path = Path(path)
    if not path.exists():
        return []
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                logger.warning(f"⚠️ skipping unreadable line in {path}")
    return records


def completed_keys(records: Iterable[Dict[str, Any]]) -> Set[Tuple[Optional[float], int]]:
    return {(r.get("coefficient"), int(r["trial"])) for r in records}


@dataclass
class RunSummary:
    records: List[TrialRecord]
    skipped: int = 0

    @property
    def failed(self) -> int:
        return sum(1 for r in self.records if not r.ok)

    def by_axis(self) -> Dict[Any, List[Dict[str, Any]]]:
        """Points grouped by their axis value (N_T, N_X or rollout length)."""
        groups: Dict[Any, List[Dict[str, Any]]] = {}
        for record in self.records:
            if not record.ok:
                continue
            for point in record.points:
                value = point["n_t"] if record.axis == "N_T" else point["n_x"]
                groups.setdefault(value, []).append(point)
        return groups


class ExperimentRunner:
    """Runs one ExperimentConfig against a backend manager."""

    def __init__(
        self,
        config: ExperimentConfig,
        manager: BackendManager,
        run_dir=None,
        skip: Optional[Set[Tuple[Optional[float], int]]] = None,
    ):
        self.config = config
        self.manager = manager
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.skip = skip or set()
        self.writer = RecordWriter(self.run_dir / RECORDS_FILE) if self.run_dir else None
        cache_dir = config.reference.cache_dir
        self.cache = SolutionCache(cache_dir) if cache_dir else None

    # -- trial building blocks ------------------------------------------------

    def trial_seed(self, trial: int) -> int:
        return derive_trial_seed(self.config.seed, trial)

    def trial_ic(self, trial: int, n_x: int) -> ICSpline:
        pde_cfg = self.config.pde
        return sample_random_ic(
            self.trial_seed(trial), n_x, pde_cfg.a, pde_cfg.b, pde_cfg.boundary_spec(), pde_cfg.L
        )

    def reference(self, pde: PDESpec, spline: ICSpline, n_x: int, n_t: int) -> SolutionField:
        spatial, time_grid = build_grids(self.config.pde.L, n_x, self.config.pde.T, n_t)
        ref = self.config.reference
        if self.cache is not None:
            return self.cache.reference(pde, spline, spatial, time_grid, ref.refine_x, ref.refine_t)
        return reference_solution(pde, spline, spatial, time_grid, ref.refine_x, ref.refine_t)

    def fine_reference(self, pde: PDESpec, spline: ICSpline, n_x: int, n_t: int) -> SolutionField:
        """Refined-grid trajectory behind reference(); energy trials integrate it at full resolution."""
        spatial, time_grid = build_grids(self.config.pde.L, n_x, self.config.pde.T, n_t)
        ref = self.config.reference
        return refined_solution(pde, spline, spatial, time_grid, ref.refine_x, ref.refine_t)

    def _dump_prompt(self, name: str, text: str):
        if self.run_dir is not None and self.config.dump_prompts:
            write_stream(self.run_dir / "prompts" / f"{name}.txt", text)

    def baseline_fields(self, pde: PDESpec, recon: np.ndarray, last: int, n_steps: int,
                        ref: SolutionField) -> Tuple[Dict[str, List[np.ndarray]], Dict[str, str]]:
        """
        Advance each baseline from the quantized-reconstructed slices ending at column `last`.
        """
        predictions: Dict[str, List[np.ndarray]] = {}
        failures: Dict[str, str] = {}
        for scheme in self.config.baselines:
            scheme = SchemeId(scheme)
            first = max(0, last - scheme.levels + 1)
            state = [recon[:, j] for j in range(first, last + 1)]
            try:
                out = march(pde, scheme, state, ref.spatial, ref.time.dt, n_steps, first_step=last + 1)
            except DivergenceError as e:
                logger.warning(f"⚠️ baseline {scheme.value} diverged: {e}")
                failures[scheme.value] = str(e)
                continue
            predictions[scheme.value] = [out]
        return predictions, failures

    @staticmethod
    def _distribution_dicts(dists) -> Optional[List[Dict[str, Any]]]:
        if dists is None:
            return None
        return [DistributionRecord.from_distribution(i, d).to_dict() for i, d in enumerate(dists)]

    @staticmethod
    def _separator_dicts(dists) -> List[Dict[str, Any]]:
        return [DistributionRecord.from_distribution(i, d, separator=True).to_dict() for i, d in enumerate(dists)]

    # -- one-step -------------------------------------------------------------

    def one_step_point(self, trial: int, pde: PDESpec, spline: ICSpline, n_x: int, n_t: int,
                       tag: str = "") -> Dict[str, Any]:
        """Predict column N_T from columns 0..N_T-1 on one grid."""
        ref = self.reference(pde, spline, n_x, n_t)
        qf = quantize(ref.values)
        recon = reconstruct(qf)
        context = encode_context(qf, 0, n_t, self.config.trailing_delimiter)
        self._dump_prompt(f"{tag}trial{trial:04d}_NT{n_t}_NX{n_x}", context)

        hint = ProblemHint(pde, ref.spatial, ref.time, qf.range, spline)
        sr = self.manager.generate_slice(context, n_x, hint)
        predicted = decode_codes(sr.codes, qf.range)[:, None]

        baselines, baseline_failures = self.baseline_fields(pde, recon, n_t - 1, 1, ref)
        floor_rmse, floor_maxae = quantization_floor(ref.values)

        return {
            "n_x": n_x,
            "n_t": n_t,
            "steps": [n_t],
            "n_tokens": token_count(n_t, n_x),
            "qrange": qf.range.to_dict(),
            "reference": recon[:, [n_t]],
            "predictions": {"backend": [predicted], **baselines},
            "exact_distributions": self.manager.backend.exact_distributions,
            "baseline_failures": baseline_failures,
            "distributions": [[self._distribution_dicts(sr.value_distributions)]],
            "separators": [[self._separator_dicts(sr.separator_distributions)]],
            "diagnostics": [[sr.report.to_dict()]],
            "attempts": [[sr.attempts]],
            "floor_rmse": [floor_rmse[n_t]],
            "floor_maxae": [floor_maxae[n_t]],
            "zero_fraction": zero_fraction(temporal_differences(qf)),
        }

    def _sweep_trial(self, trial: int, pde: PDESpec, coefficient, knots: int,
                     grids: List[Tuple[int, int]], axis: str) -> TrialRecord:
        spline = self.trial_ic(trial, knots)
        fingerprint = spline.fingerprint()
        record = TrialRecord(self.config.family, trial, self.trial_seed(trial), axis,
                             coefficient=coefficient, ic=spline.to_record(), fingerprint=fingerprint)
        tag = _coef_tag(coefficient)
        for n_x, n_t in grids:
            if spline.fingerprint() != fingerprint:
                raise PdeIclError(f"trial {trial}: IC spline changed within the sweep")
            record.points.append(self.one_step_point(trial, pde, spline, n_x, n_t, tag))
        return record

    def one_step_context_trial(self, trial: int, pde: PDESpec, coefficient=None) -> TrialRecord:
        sweep = self.config.sweep
        grids = [(sweep.n_x, n_t) for n_t in sweep.n_t_values]
        return self._sweep_trial(trial, pde, coefficient, sweep.n_x, grids, "N_T")

    def one_step_output_trial(self, trial: int, pde: PDESpec, coefficient=None) -> TrialRecord:
        sweep = self.config.sweep
        grids = [(n_x, sweep.n_t) for n_x in sweep.n_x_values]
        return self._sweep_trial(trial, pde, coefficient, sweep.ic_n_x, grids, "N_X")

    # -- multi-step -----------------------------------------------------------

    def rollout_point(self, trial: int, pde: PDESpec, spline: ICSpline, tag: str = "",
                      with_energy: bool = False) -> Dict[str, Any]:
        sweep = self.config.sweep
        n_x, n_t = sweep.n_x, sweep.n_t
        n_ctx, n_pred = multistep_split(n_t)

        fine = None
        if with_energy:
            # E(0) and the reference energies share the refined grid and its Neumann reconstruction
            fine = self.fine_reference(pde, spline, n_x, n_t)
            e0 = float(discrete_energy(fine.values[:, 0], fine.spatial)[0])
            if abs(e0) <= ENERGY_THRESHOLD:
                raise DegenerateEnergyError(f"trial {trial}: |E(0)| = {abs(e0):.3e} below {ENERGY_THRESHOLD}")
            ref = restrict(fine, *build_grids(self.config.pde.L, n_x, self.config.pde.T, n_t))
        else:
            ref = self.reference(pde, spline, n_x, n_t)
        qf = quantize(ref.values)
        recon = reconstruct(qf)
        context = encode_context(qf, 0, n_ctx, self.config.trailing_delimiter)
        self._dump_prompt(f"{tag}trial{trial:04d}_NT{n_t}_NX{n_x}_rollout", context)
        hint = ProblemHint(pde, ref.spatial, ref.time, qf.range, spline)

        generations, distributions, separators, diagnostics = [], [], [], []
        for g in range(sweep.generations):
            rollout = self.manager.rollout(context, n_x, n_pred, hint)
            generations.append(decode_codes(rollout.codes(), qf.range))
            distributions.append([self._distribution_dicts(d) for d in rollout.value_distributions])
            separators.append([self._separator_dicts(d) for d in rollout.separator_distributions])
            diagnostics.append([r.to_dict() for r in rollout.reports])
            logger.debug(f"trial {trial} generation {g + 1}/{sweep.generations} done")

        baselines, baseline_failures = self.baseline_fields(pde, recon, n_ctx - 1, n_pred, ref)
        floor_rmse, floor_maxae = quantization_floor(ref.values)

        point = {
            "n_x": n_x,
            "n_t": n_t,
            "n_context": n_ctx,
            "steps": list(range(n_ctx, n_t + 1)),
            "n_tokens": token_count(n_ctx, n_x),
            "qrange": qf.range.to_dict(),
            "dt": ref.time.dt,
            "reference": recon[:, n_ctx:],
            "predictions": {"backend": generations, **baselines},
            "exact_distributions": self.manager.backend.exact_distributions,
            "baseline_failures": baseline_failures,
            "distributions": distributions,
            "separators": separators,
            "diagnostics": diagnostics,
            "floor_rmse": floor_rmse[n_ctx:],
            "floor_maxae": floor_maxae[n_ctx:],
            "zero_fraction": zero_fraction(temporal_differences(qf)),
        }
        if fine is not None:
            refine_t = fine.time.n_t // n_t
            levels = [refine_t * j for j in range(n_ctx, n_t + 1)]
            point["energy"] = {
                "e0": e0,
                "reference_energy": discrete_energy(fine.values[:, levels], fine.spatial),
                "grid_reference": ref.values[:, n_ctx:],
            }
        return point

    def multistep_trial(self, trial: int, pde: PDESpec, coefficient=None, with_energy: bool = False) -> TrialRecord:
        spline = self.trial_ic(trial, self.config.sweep.n_x)
        record = TrialRecord(self.config.family, trial, self.trial_seed(trial), "step",
                             coefficient=coefficient, ic=spline.to_record(), fingerprint=spline.fingerprint())
        record.points.append(self.rollout_point(trial, pde, spline, _coef_tag(coefficient), with_energy))
        return record

    def energy_trial(self, trial: int, pde: PDESpec, coefficient=None) -> TrialRecord:
        return self.multistep_trial(trial, pde, coefficient, with_energy=True)

    # -- orchestration --------------------------------------------------------

    def trial_function(self) -> Callable[..., TrialRecord]:
        return {
            "one-step-context": self.one_step_context_trial,
            "one-step-output": self.one_step_output_trial,
            "multi-step": self.multistep_trial,
            "energy": self.energy_trial,
        }[self.config.family]

    def _guarded(self, fn, trial: int, pde: PDESpec, coefficient) -> TrialRecord:
        start = time.perf_counter()
        try:
            record = fn(trial, pde, coefficient)
        except (TrialFailure, DegenerateEnergyError, DivergenceError) as e:
            record = TrialRecord(self.config.family, trial, self.trial_seed(trial),
                                 _FAMILY_AXIS[self.config.family],
                                 status="failed", reason=str(e), coefficient=coefficient,
                                 failed_step=getattr(e, "step", None))
            logger.warning(f"❌ trial {trial} failed: {e}")
        record.wall_clock = time.perf_counter() - start
        return record

    def run(self) -> RunSummary:
        """
        Run every (coefficient, trial) pair not already recorded.

        Raises ExcessiveFailuresError once more than 10% of the trials of one
        coefficient have failed.
        """
        fn = self.trial_function()
        trials = self.config.trials
        limit = MAX_FAILURE_FRACTION * trials
        results: List[TrialRecord] = []
        skipped = 0

        for coefficient in self.config.coefficients():
            pde = self.config.pde.build(coefficient)
            todo = [m for m in range(trials) if (coefficient, m) not in self.skip]
            skipped += trials - len(todo)
            failed = 0
            logger.info(f"📊 {self.config.family} {pde.describe()}: {len(todo)} trial(s) to run, "
                        f"{trials - len(todo)} already recorded")

            with ThreadPoolExecutor(max_workers=self.config.jobs) as pool:
                pending = {pool.submit(self._guarded, fn, m, pde, coefficient) for m in todo}
                while pending:
                    done, pending = wait(pending, return_when=FIRST_COMPLETED)
                    for future in done:
                        try:
                            record = future.result()
                        except BackendError:
                            for f in pending:
                                f.cancel()
                            raise
                        results.append(record)
                        if self.writer is not None:
                            self.writer.write(record)
                        if record.ok:
                            logger.info(f"✅ trial {record.trial} done in {record.wall_clock:.2f}s")
                        else:
                            failed += 1
                    if failed > limit:
                        for f in pending:
                            f.cancel()
                        raise ExcessiveFailuresError(failed, trials)

        results.sort(key=lambda r: (r.coefficient if r.coefficient is not None else -1.0, r.trial))
        summary = RunSummary(results, skipped)
        logger.info(f"📊 finished: {len(results) - summary.failed} ok, {summary.failed} failed, {skipped} skipped")
        return summary


def _coef_tag(coefficient) -> str:
    return "" if coefficient is None else f"coef{coefficient:g}_"


def run_one_step_context_sweep(config: ExperimentConfig, manager: BackendManager, run_dir=None, **kw) -> RunSummary:
    _expect(config, "one-step-context")
    return ExperimentRunner(config, manager, run_dir, **kw).run()


def run_one_step_output_sweep(config: ExperimentConfig, manager: BackendManager, run_dir=None, **kw) -> RunSummary:
    _expect(config, "one-step-output")
    return ExperimentRunner(config, manager, run_dir, **kw).run()


def run_multistep(config: ExperimentConfig, manager: BackendManager, run_dir=None, **kw) -> RunSummary:
    _expect(config, "multi-step")
    return ExperimentRunner(config, manager, run_dir, **kw).run()


def run_energy_experiment(config: ExperimentConfig, manager: BackendManager, run_dir=None, **kw) -> RunSummary:
    _expect(config, "energy")
    return ExperimentRunner(config, manager, run_dir, **kw).run()


def run_experiment(config: ExperimentConfig, manager: BackendManager, run_dir=None, **kw) -> RunSummary:
    return ExperimentRunner(config, manager, run_dir, **kw).run()


def _expect(config: ExperimentConfig, family: str):
    if config.family != family:
        raise InvalidArgumentError(f"expected a {family} config, got {config.family}")
