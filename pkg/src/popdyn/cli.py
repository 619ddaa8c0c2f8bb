"""``popdyn`` command line.

Subcommands: ``simulate``, ``fit``, ``pipeline``, ``aggregate``, ``report``.
Every run writes a manifest (``manifest.json`` in an output directory, or
``<output>.manifest.json`` next to an output file).

Configuration files are TOML.  Top-level keys apply to every command and a
table named after the command overrides them; keys are flag names with
dashes replaced by underscores (``beta_n = 1.67``).  Explicit flags win over
the file.  ``--config`` names the file, falling back to ``$POPDYN_CONFIG``.

Randomness: ``--seed S`` seeds ``numpy.random.SeedSequence(S)``, which spawns
one child per replication; replication ``i`` simulates with child ``i`` and
draws its observation noise from that child's first spawned grandchild.

Exit codes: 0 success, 2 usage or invalid parameters, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import aggregate_corpus, case_study_report, episode_scatter
from .errors import ConfigurationError, DataError, DomainError, FitError, ParameterError, PopdynError
from .fitting import FitOptions, FitResult, fit_batch
from .io import (
    read_fits_jsonl,
    read_series_map,
    read_traces_csv,
    write_fits_jsonl,
    write_json,
    write_rows_csv,
    write_traces_csv,
)
from .models import DModelParams, PopulationConfig, WModelParams, dmodel_cumulative, wmodel_discrete_trace
from .pipeline import CorpusSummary, prepare_corpus, read_records
from .simulator import add_observation_noise, replication_seeds, run_direct, run_wom

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CONFIG_ENV = "POPDYN_CONFIG"


class UsageError(PopdynError):
    pass


def _load_config(path, command):
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    merged = {k: v for k, v in data.items() if not isinstance(v, dict)}
    merged.update(data.get(command, {}))
    return merged


def _resolve(args, parser, defaults):
    """Fill unset flags from the config file, then from ``defaults``."""
    cfg_path = args.config or os.environ.get(CONFIG_ENV)
    cfg = _load_config(cfg_path, args.command)
    known = {a.dest for a in parser._actions}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in cfg.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    for key, value in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    args.config = cfg_path
    return args


def _require(parser, args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        parser.error(f"missing required option(s): {', '.join(missing)}")


def _manifest(args, inputs, outputs, seeds=None):
    config = {
        k: (str(v) if isinstance(v, float) and not np.isfinite(v) else v)
        for k, v in sorted(vars(args).items())
        if k != "func"
    }
    return {
        "command": args.command,
        "configuration": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "rng_seeds": seeds or {},
        "tool_version": __version__,
    }


def _manifest_path(output: Path) -> Path:
    return output / "manifest.json" if output.is_dir() else output.with_name(output.name + ".manifest.json")


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------


def _model_params(args):
    pop = PopulationConfig(float(args.n), float(args.q))
    if args.model == "direct":
        return DModelParams(pop, alpha=float(args.alpha), t_e=float(args.te), gamma=args.gamma)
    return WModelParams(pop, beta=float(args.beta_n) / float(args.n), x0=float(args.x0))


def cmd_simulate(args, parser):
    args = _resolve(args, parser, {"replications": 1, "seed": 0, "te": float("inf"), "noise": 0.0})
    _require(parser, args, "model", "q", "n", "days", "output")
    if args.model == "direct":
        _require(parser, args, "alpha")
    else:
        _require(parser, args, "beta_n", "x0")
    params = _model_params(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    days = int(args.days)
    outputs = []
    children = replication_seeds(int(args.seed), int(args.replications))
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        run = run_direct(params, days, rng) if args.model == "direct" else run_wom(params, days, rng)
        trace = run.trace
        if args.noise:
            trace = add_observation_noise(trace, float(args.noise), child.spawn(1)[0])
        path = out / f"replication_{i:03d}.csv"
        write_traces_csv({f"rep{i:03d}": trace}, path)
        outputs.append(path)
    if args.model == "direct":
        fluid = np.diff(dmodel_cumulative(params, np.arange(0, days + 1, dtype=float)))
    else:
        fluid = wmodel_discrete_trace(params, days).counts
    ref = out / "fluid_reference.csv"
    write_traces_csv({"fluid": fluid}, ref)
    outputs.append(ref)
    write_json(_manifest(args, [], outputs, {"root": int(args.seed), "scheme": "SeedSequence(seed).spawn(replications)"}),
               out / "manifest.json")
    print(f"wrote {len(children)} replication trace(s) and the fluid reference to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# fit
# --------------------------------------------------------------------------


def _population_for_fit(args, parser):
    if args.n is not None:
        return float(args.n)
    if args.summary is None:
        parser.error("fit needs --n or --summary with --video-type")
    summary = CorpusSummary.from_json(json.loads(Path(args.summary).read_text(encoding="utf-8")))
    if args.video_type is None:
        if len(summary.population) != 1:
            parser.error("--video-type is required when the summary lists several types")
        return float(next(iter(summary.population.values())))
    try:
        return float(summary.population[args.video_type])
    except KeyError:
        raise DataError(f"summary has no population for type {args.video_type!r}") from None


def cmd_fit(args, parser):
    args = _resolve(args, parser, {"multistart": 8, "workers": 1})
    _require(parser, args, "input", "output")
    N = _population_for_fit(args, parser)
    traces, failures = read_traces_csv(args.input)
    opts = FitOptions(multistart_count=int(args.multistart))
    results = fit_batch(traces, N, opts, workers=int(args.workers))
    for vid, msg in failures.items():
        results[vid] = DataError(f"corrupt trace: {msg}")
    results = {vid: results[vid] for vid in sorted(results)}
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_fits_jsonl(results, out)
    write_json(_manifest(args, [args.input], [out]), _manifest_path(out))

    ok = [r for r in results.values() if isinstance(r, FitResult)]
    values = np.array([r.nmse for r in ok])
    print(f"fitted {len(ok)} of {len(results)} videos ({len(results) - len(ok)} failed)")
    if values.size:
        q1, q2, q3 = np.quantile(values, [0.25, 0.5, 0.75])
        kinds = {k: sum(r.model_kind.value == k for r in ok) for k in ("DModel", "WModel")}
        print(f"NMSE count={values.size} min={values.min():.4g} q1={q1:.4g} median={q2:.4g} "
              f"q3={q3:.4g} max={values.max():.4g}")
        print(f"BModel: DModel={kinds['DModel']} WModel={kinds['WModel']}")
    return EXIT_OK if ok or not results else EXIT_NUMERIC


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------


def cmd_pipeline(args, parser):
    args = _resolve(args, parser, {"threshold": 1000, "removal_share": 0.25, "rule": "cap"})
    _require(parser, args, "input", "output")
    window = None
    if args.start or args.end:
        _require(parser, args, "start", "end")
        window = (args.start, args.end)
    records = read_records(args.input)
    traces_by_type, summary = prepare_corpus(
        records, window, removal_share=float(args.removal_share), threshold=float(args.threshold),
        rule=args.rule, horizon_days=args.horizon_days,
    )
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for vtype, traces in traces_by_type.items():
        path = out / f"traces_{vtype}.csv"
        write_traces_csv(traces, path)
        outputs.append(path)
    write_json(summary.to_json(), out / "corpus_summary.json")
    outputs.append(out / "corpus_summary.json")
    write_json(_manifest(args, [args.input], outputs), out / "manifest.json")
    for vtype in sorted(summary.population):
        print(f"{vtype}: N={summary.population[vtype]} videos={summary.retained_videos[vtype]} "
              f"removed_view_fraction={summary.removed_view_fraction[vtype]:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# aggregate / report
# --------------------------------------------------------------------------


def _load_composites(args):
    fits, _ = read_fits_jsonl(args.input)
    series = read_series_map(args.series) if args.series else {}
    return fits, series, aggregate_corpus(fits, series)


def cmd_aggregate(args, parser):
    args = _resolve(args, parser, {})
    _require(parser, args, "input", "output")
    _, _, composites = _load_composites(args)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for c in composites:
            rec = {"series_id": c.series_id, "label": c.label.value, **c.mean_params}
            rec = {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in rec.items()}
            fh.write(json.dumps(rec) + "\n")
    write_json(_manifest(args, [args.input, args.series], [out]), _manifest_path(out))
    print(f"aggregated into {len(composites)} composite video(s)")
    return EXIT_OK


def cmd_report(args, parser):
    args = _resolve(args, parser, {})
    _require(parser, args, "input", "output")
    fits, series, composites = _load_composites(args)
    report = case_study_report(composites)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, rows in report.datasets.items():
        path = out / f"{name}.csv"
        write_rows_csv(rows, ("x", "y", "series_id", "label"), path)
        outputs.append(path)
    for name, rows in episode_scatter(fits, series).items():
        path = out / f"{name}.csv"
        write_rows_csv(rows, ("x", "y", "series_id", "label", "video_id", "episode"), path)
        outputs.append(path)
    corr = report.correlations.to_json()
    corr["warnings"] = report.warnings
    write_json(corr, out / "correlations.json")
    outputs.append(out / "correlations.json")
    write_json(_manifest(args, [args.input, args.series], outputs), out / "manifest.json")
    for name in report.correlations.pairs:
        print(f"{name}: r={report.correlations.pearson_r[name]:+.4f} "
              f"(n={report.correlations.points[name]})")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="popdyn", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"popdyn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help=f"TOML config file (default: ${CONFIG_ENV})")
        p.add_argument("--input")
        p.add_argument("--output")
        return p

    p = common(sub.add_parser("simulate", help="agent simulation plus fluid reference trace"))
    p.add_argument("--model", choices=("direct", "wom"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta-n", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--n", type=float)
    p.add_argument("--x0", type=float)
    p.add_argument("--te", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--days", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--noise", type=float, help="relative sd of lognormal observation noise")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("fit", help="fit traces to both models and keep the better one"))
    p.add_argument("--n", type=float, help="potential population N")
    p.add_argument("--summary", help="corpus_summary.json giving N per video type")
    p.add_argument("--video-type")
    p.add_argument("--multistart", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_fit)

    p = common(sub.add_parser("pipeline", help="viewing records to filtered daily traces"))
    p.add_argument("--start", help="collection window start date (inclusive)")
    p.add_argument("--end", help="collection window end date (inclusive)")
    p.add_argument("--threshold", type=float, help="cold-video total view threshold")
    p.add_argument("--removal-share", type=float, help="share of views removed with inactive users")
    p.add_argument("--rule", choices=("cap", "first_crossing"))
    p.add_argument("--horizon-days", type=int)
    p.set_defaults(func=cmd_pipeline)

    p = common(sub.add_parser("aggregate", help="merge episode fits into composite videos"))
    p.add_argument("--series", help="video_id,series_id mapping CSV")
    p.set_defaults(func=cmd_aggregate)

    p = common(sub.add_parser("report", help="scatter datasets and Pearson correlations"))
    p.add_argument("--series", help="video_id,series_id mapping CSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return args.func(args, sub)
    except (UsageError, ParameterError, ConfigurationError) as exc:
        sub.print_usage(sys.stderr)
        print(f"popdyn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"popdyn {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"popdyn {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, DomainError, FloatingPointError) as exc:
        print(f"popdyn {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
