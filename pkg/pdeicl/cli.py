#!/usr/bin/env python3
"""
PDE-ICL CLI - command-line entry point

Sub-commands wire run manifests to the solvers, the codec, the backends and
the experiment runner, and turn records into metrics and plot data.
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from . import __version__
from .backends import BackendManager
from .codec import encode_context, quantize, token_count, write_stream
from .config import (
    LOG_LEVEL,
    RUNS_DIR,
    ExperimentConfig,
    OracleBackendConfig,
    PDEConfig,
    RepeatLastBackendConfig,
    load_config,
    parse_config,
)
from .exceptions import BackendError, ConfigError, ExcessiveFailuresError, PdeIclError
from .experiments import RECORDS_FILE, completed_keys, load_records, run_experiment
from .grid_ic import build_grids, derive_trial_seed, resample_ic, sample_random_ic
from .metrics import build_metrics_table
from .plotdata import (
    CONFIG_FIGURES,
    FIGURES,
    METRIC_FIGURES,
    correlates_figure,
    metric_figure,
    temporal_difference_figure,
    topk_figure,
)
from .solvers import SchemeId, reference_solution, solve

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BACKEND = 2
EXIT_FAILURES = 3

MANIFEST_FILE = "manifest.json"
METRICS_FILE = "metrics.csv"


def setup_logging(level: str = LOG_LEVEL, log_file: Optional[Path] = None):
    """Log to stderr, and to a file inside the run directory when there is one."""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


@dataclass
class RunManifest:
    config_path: Optional[str]
    config: Dict[str, Any]
    run_dir: str
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    version: str = __version__
    tokenization: Optional[Dict[str, Any]] = None

    def write(self):
        path = Path(self.run_dir) / MANIFEST_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2), encoding="utf-8")
        return path

    @classmethod
    def read(cls, run_dir) -> "RunManifest":
        path = Path(run_dir) / MANIFEST_FILE
        if not path.exists():
            raise ConfigError(f"no {MANIFEST_FILE} in {run_dir}")
        return cls(**json.loads(path.read_text(encoding="utf-8")))


def new_run_dir(name: str, root: Optional[str] = None) -> Path:
    """runs/<name>-<timestamp>, suffixed until unused."""
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    base = Path(root or RUNS_DIR) / f"{name}-{stamp}"
    candidate, n = base, 1
    while candidate.exists():
        n += 1
        candidate = base.with_name(f"{base.name}-{n}")
    return candidate


def _config_or_default(path: Optional[str]) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def _records_L(args) -> float:
    """Domain half-width from --config or the manifest beside the records file."""
    if args.config:
        return load_config(args.config).pde.L
    run_dir = Path(args.records).parent
    if (run_dir / MANIFEST_FILE).exists():
        return parse_config(RunManifest.read(run_dir).config).pde.L
    return 1.0


def _write_frame(frame: pd.DataFrame, out: Optional[str]):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out, index=False)
        print(f"✅ wrote {len(frame)} rows to {out}")
    else:
        frame.to_csv(sys.stdout, index=False)


def apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    """Apply --backend/--trials/--seed/--jobs overrides and revalidate."""
    raw = config.model_dump(mode="json")
    if getattr(args, "backend", None):
        if args.backend == "oracle":
            raw["backend"] = OracleBackendConfig(
                refine_x=config.reference.refine_x, refine_t=config.reference.refine_t
            ).model_dump(mode="json")
        elif args.backend == "repeat_last":
            raw["backend"] = RepeatLastBackendConfig().model_dump(mode="json")
        elif args.backend == "replay":
            if not args.fixture:
                raise ConfigError("--backend replay needs --fixture")
            upstream = raw["backend"] if raw["backend"]["kind"] in ("http", "oracle") else None
            raw["backend"] = {
                "kind": "replay", "fixture_path": args.fixture, "record": args.record, "upstream": upstream,
            }
    for key in ("trials", "seed", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    return parse_config(raw)


# ---------------------------------------------------------------------------
# Sub-commands
# ---------------------------------------------------------------------------

def cmd_gen_ic(args) -> int:
    """Emit IC records, one JSON object per line."""
    config = _config_or_default(args.config)
    pde = config.pde
    n_x = args.n_x or getattr(config.sweep, "n_x", 14)
    lines = []
    for m in range(args.trials):
        seed = derive_trial_seed(args.seed if args.seed is not None else config.seed, m)
        spline = sample_random_ic(seed, n_x, pde.a, pde.b, pde.boundary_spec(), pde.L)
        record = {"trial": m, "fingerprint": spline.fingerprint(), **spline.to_record()}
        lines.append(json.dumps(record))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"✅ wrote {args.trials} IC record(s) to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _trial_field(config: ExperimentConfig, args):
    pde_cfg: PDEConfig = config.pde
    pde = pde_cfg.build(args.coefficient)
    spline = sample_random_ic(
        derive_trial_seed(config.seed, args.trial), args.ic_n_x or args.n_x,
        pde_cfg.a, pde_cfg.b, pde_cfg.boundary_spec(), pde_cfg.L,
    )
    spatial, time_grid = build_grids(pde_cfg.L, args.n_x, pde_cfg.T, args.n_t)
    return pde, spline, spatial, time_grid


def cmd_solve(args) -> int:
    config = _config_or_default(args.config)
    pde, spline, spatial, time_grid = _trial_field(config, args)
    if args.scheme == "reference":
        field_ = reference_solution(pde, spline, spatial, time_grid,
                                    config.reference.refine_x, config.reference.refine_t)
    else:
        field_ = solve(pde, SchemeId(args.scheme), resample_ic(spline, args.n_x), spatial, time_grid)
    if args.out:
        field_.to_csv(args.out)
        print(f"✅ {args.scheme} solution {spatial.n_x}x{time_grid.n_t + 1} written to {args.out}")
    else:
        field_.to_frame().to_csv(sys.stdout, float_format="%.17g")
    return EXIT_OK


def cmd_encode(args) -> int:
    config = _config_or_default(args.config)
    pde, spline, spatial, time_grid = _trial_field(config, args)
    ref = reference_solution(pde, spline, spatial, time_grid, config.reference.refine_x, config.reference.refine_t)
    qf = quantize(ref.values)
    j1 = args.j1 if args.j1 is not None else qf.n_slices
    text = encode_context(qf, args.j0, j1, trailing_delimiter=args.trailing)
    n_tokens = token_count(j1 - args.j0, spatial.n_x)
    if args.out:
        write_stream(args.out, text)
        print(f"✅ {j1 - args.j0} slice(s), {n_tokens} tokens written to {args.out}")
    else:
        sys.stdout.write(text + "\n")
    print(f"📊 tokens: {n_tokens}", file=sys.stderr)
    return EXIT_OK


def cmd_tokens(args) -> int:
    config = apply_overrides(_config_or_default(args.config), args)
    manager = BackendManager.from_config(config)
    try:
        report = manager.check_tokenization()
    finally:
        manager.close()
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_run(args) -> int:
    skip = set()
    if args.resume:
        run_dir = Path(args.resume)
        manifest = RunManifest.read(run_dir)
        config = parse_config(manifest.config)
        skip = completed_keys(load_records(run_dir / RECORDS_FILE))
        setup_logging(args.log_level, run_dir / "run.log")
        logger.info(f"📊 resuming {run_dir}: {len(skip)} trial(s) already recorded")
    else:
        if not args.config:
            raise ConfigError("run needs --config or --resume")
        config = apply_overrides(load_config(args.config), args)
        run_dir = Path(args.run_dir) if args.run_dir else new_run_dir(config.name)
        setup_logging(args.log_level, run_dir / "run.log")
        manifest = RunManifest(args.config, config.model_dump(mode="json"), str(run_dir))

    manager = BackendManager.from_config(config)
    try:
        if not args.resume and config.backend.kind == "http":
            manifest.tokenization = manager.check_tokenization().to_dict()
        if not args.resume:
            manifest.write()
            logger.info(f"✅ manifest written to {run_dir / MANIFEST_FILE}")

        summary = run_experiment(config, manager, run_dir, skip=skip)
    finally:
        manager.close()

    records = load_records(run_dir / RECORDS_FILE)
    frame = build_metrics_table(records, run_dir.name, config.entropy_base,
                                getattr(config.sweep, "average_predictions", False), config.pde.L,
                                per_trial=True)
    frame.to_csv(run_dir / METRICS_FILE, index=False)
    print(f"✅ {len(summary.records)} trial(s) run, {summary.failed} failed, {summary.skipped} skipped")
    print(f"📂 {run_dir}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    run_dir = Path(args.run_dir)
    records = load_records(run_dir / RECORDS_FILE)
    if not records:
        raise ConfigError(f"no records in {run_dir / RECORDS_FILE}")
    entropy_base, average, L = None, False, 1.0
    if (run_dir / MANIFEST_FILE).exists():
        config = parse_config(RunManifest.read(run_dir).config)
        entropy_base, L = config.entropy_base, config.pde.L
        average = getattr(config.sweep, "average_predictions", False)
    if args.average_predictions:
        average = True
    frame = build_metrics_table(records, run_dir.name, entropy_base, average, L, per_trial=True)
    _write_frame(frame, args.out or str(run_dir / METRICS_FILE))
    return EXIT_OK


def cmd_plotdata(args) -> int:
    figure = args.figure
    if figure in METRIC_FIGURES:
        if not args.metrics:
            raise ConfigError(f"--figure {figure} needs --metrics")
        frame = metric_figure(pd.read_csv(args.metrics), figure, args.trial)
    elif figure in CONFIG_FIGURES:
        config = _config_or_default(args.config)
        frame = temporal_difference_figure(config, args.n_x or 40, args.n_t or 50, args.trial or 0)
    else:
        if not args.records:
            raise ConfigError(f"--figure {figure} needs --records")
        records = load_records(args.records)
        if figure == "error-correlates":
            frame = correlates_figure(records, args.trial, args.generation, L=_records_L(args))
        else:
            frame = topk_figure(records, args.trial, args.point, args.generation, args.step, args.k)
    _write_frame(frame, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _grid_args(p):
    p.add_argument('--config', help='run manifest (JSON)')
    p.add_argument('--n-x', dest='n_x', type=int, default=14, help='interior grid points')
    p.add_argument('--n-t', dest='n_t', type=int, default=25, help='time steps')
    p.add_argument('--ic-n-x', dest='ic_n_x', type=int, help='IC knot count (default: --n-x)')
    p.add_argument('--trial', type=int, default=0, help='trial index selecting the IC seed')
    p.add_argument('--coefficient', type=float, help='override k (heat) or c (wave)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='pdeicl',
        description='PDE-ICL - zero-shot PDE continuation experiments over numeric token streams'
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--log-level', default=LOG_LEVEL, help='logging level (default from PDEICL_LOG_LEVEL)')
    subparsers = parser.add_subparsers(dest='command', help='available commands')

    p = subparsers.add_parser('gen-ic', help='emit random IC records')
    p.add_argument('--config', help='run manifest (JSON)')
    p.add_argument('--n-x', dest='n_x', type=int, help='interior knot count')
    p.add_argument('--trials', type=int, default=1)
    p.add_argument('--seed', type=int)
    p.add_argument('--out')

    p = subparsers.add_parser('solve', help='reference or baseline solution to CSV')
    _grid_args(p)
    p.add_argument('--scheme', default='reference', choices=['reference'] + [s.value for s in SchemeId])
    p.add_argument('--out')

    p = subparsers.add_parser('encode', help='dump a quantized reference as a token stream')
    _grid_args(p)
    p.add_argument('--j0', type=int, default=0, help='first slice (inclusive)')
    p.add_argument('--j1', type=int, help='last slice (exclusive, default all)')
    p.add_argument('--trailing', action='store_true', help="end the stream with ';'")
    p.add_argument('--out')

    p = subparsers.add_parser('tokens', help='backend tokenization check')
    p.add_argument('--config', help='run manifest (JSON)')
    _backend_args(p)

    p = subparsers.add_parser('run', help='run an experiment family')
    p.add_argument('--config', help='run manifest (JSON)')
    p.add_argument('--resume', help='run directory to resume')
    p.add_argument('--run-dir', dest='run_dir', help='output directory (default runs/<name>-<timestamp>)')
    p.add_argument('--trials', type=int)
    p.add_argument('--seed', type=int)
    p.add_argument('--jobs', type=int, help='worker threads')
    _backend_args(p)

    p = subparsers.add_parser('metrics', help='records.jsonl -> metrics.csv')
    p.add_argument('run_dir', help='run directory')
    p.add_argument('--out')
    p.add_argument('--average-predictions', action='store_true',
                   help='average rollout generations before computing errors')

    p = subparsers.add_parser('plotdata', help='per-figure CSV')
    p.add_argument('--figure', required=True, choices=FIGURES)
    p.add_argument('--metrics', help='metrics.csv')
    p.add_argument('--records', help='records.jsonl')
    p.add_argument('--config', help='run manifest (temporal-differences, error-correlates)')
    p.add_argument('--trial', type=int)
    p.add_argument('--generation', type=int, default=0)
    p.add_argument('--point', type=int, default=0, help='sweep point index (topk)')
    p.add_argument('--step', type=int, default=0, help='prediction step index (topk)')
    p.add_argument('--k', type=int, default=8)
    p.add_argument('--n-x', dest='n_x', type=int)
    p.add_argument('--n-t', dest='n_t', type=int)
    p.add_argument('--out')
    return parser


def _backend_args(p):
    p.add_argument('--backend', choices=['oracle', 'repeat_last', 'replay'], help='override the configured backend')
    p.add_argument('--fixture', help='replay fixture (JSON lines)')
    p.add_argument('--record', action='store_true', help='record missing fixture entries from the upstream backend')


COMMANDS = {
    'gen-ic': cmd_gen_ic,
    'solve': cmd_solve,
    'encode': cmd_encode,
    'tokens': cmd_tokens,
    'run': cmd_run,
    'metrics': cmd_metrics,
    'plotdata': cmd_plotdata,
}


def main(argv: Optional[List[str]] = None) -> int:
    """CLI entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG

    if args.command != 'run':
        setup_logging(args.log_level)

    try:
        return COMMANDS[args.command](args)
    except ExcessiveFailuresError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_FAILURES
    except BackendError as e:
        print(f"❌ backend error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except ConfigError as e:
        print(f"❌ configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PdeIclError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
