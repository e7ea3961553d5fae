"""Command line entry point: ``evpercept simulate|run|metrics|compare``.

Exit codes: 0 success, 1 configuration error, 2 dataset error, 3 pipeline failure.
"""

from __future__ import annotations

import argparse
import logging
import pathlib
import sys
from typing import Optional, Sequence

EXIT_OK, EXIT_CONFIG, EXIT_DATASET, EXIT_PIPELINE = 0, 1, 2, 3


class _Failure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _emit(rows, out) -> None:
    """Tab-delimited ``key<TAB>value...`` lines."""
    for row in rows:
        out.write("\t".join(str(v) for v in row) + "\n")


def _read_key_values(path: pathlib.Path) -> list[tuple[str, str]]:
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise _Failure(EXIT_DATASET, f"{path}:{lineno}: expected key=value")
        rows.append((key, value))
    return rows


def _run_metrics(run_dir: str) -> list[tuple[str, str]]:
    path = pathlib.Path(run_dir) / "metrics.txt"
    if not path.exists():
        raise _Failure(EXIT_DATASET, f"{path}: not a run directory (metrics.txt missing)")
    rows = _read_key_values(path)
    timing = pathlib.Path(run_dir) / "timing.txt"
    if timing.exists():
        rows += _read_key_values(timing)
    return rows


def cmd_simulate(args, out) -> int:
    from .config import ConfigError, load_scene_config
    from .simulator import generate, write_dataset

    scene_path = pathlib.Path(args.scene)
    scene = load_scene_config(scene_path)
    if args.seed is not None:
        scene.seed = args.seed
    outdir = pathlib.Path(args.output) if args.output else scene_path.with_suffix("")
    if outdir.resolve() == scene_path.resolve():
        raise ConfigError(f"{scene_path}: output directory would overwrite the scene file")
    bundle = generate(scene)
    write_dataset(bundle, outdir)
    labels = bundle.truth.labels
    _emit([("dataset", outdir), ("run_config", outdir / "run.cfg"), ("events", len(bundle.events)),
           ("object_events", int((labels == 0).sum())), ("depth_frames", len(bundle.depth_frames)),
           ("windows_with_object", sum(1 for w in bundle.truth.windows if w.object_events > 0))], out)
    return EXIT_OK


def cmd_run(args, out) -> int:
    from .config import load_run_config
    from .pipeline import run

    cfg = load_run_config(args.config)
    if args.output:
        cfg.pipeline.output = str(pathlib.Path(args.output).resolve())
    result = run(cfg, figures=False if args.no_figures else None)
    _emit([("run_dir", cfg.output_dir)], out)
    _emit([line.split("=", 1) for line in result.report.metric_lines()], out)
    return EXIT_OK


def cmd_metrics(args, out) -> int:
    from .plotting import render_report_figures

    rows = _run_metrics(args.run_dir)
    _emit(rows, out)
    if not args.no_figures:
        for p in render_report_figures(args.run_dir, width=args.width, height=args.height):
            _emit([("figure", p)], out)
    return EXIT_OK


def cmd_compare(args, out) -> int:
    a, b = dict(_run_metrics(args.run_a)), dict(_run_metrics(args.run_b))
    _emit([("metric", "a", "b", "b-a")], out)
    for key in list(a) + [k for k in b if k not in a]:
        va, vb = a.get(key, ""), b.get(key, "")
        try:
            diff = f"{float(vb) - float(va):.6f}"
        except ValueError:
            diff = ""
        _emit([(key, va, vb, diff)], out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evpercept", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset from a scene config")
    p.add_argument("scene")
    p.add_argument("-o", "--output", help="dataset directory (default: scene path without suffix)")
    p.add_argument("--seed", type=int, help="override the scene seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run the pipeline described by a run config")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="override the output directory")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("metrics", help="print a run's metrics and render its figures")
    p.add_argument("run_dir")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--width", type=int, default=240, help="image width for the detection plot")
    p.add_argument("--height", type=int, default=180, help="image height for the detection plot")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("compare", help="side-by-side metrics of two runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    from .config import ConfigError
    from .pipeline import DatasetError, PipelineError

    out = out if out is not None else sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args, out)
    except _Failure as exc:
        code, msg = exc.code, str(exc)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except DatasetError as exc:
        code, msg = EXIT_DATASET, f"dataset error: {exc}"
    except PipelineError as exc:
        code, msg = EXIT_PIPELINE, f"pipeline error: {exc}"
    except Exception as exc:  # noqa: BLE001 - stage errors that escaped the pipeline
        code, msg = EXIT_PIPELINE, f"pipeline error: {exc}"
    sys.stderr.write(msg + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
