"""Command-line interface.

Subcommands:
  phase     run one method's Monte-Carlo sweep, write CSV (+ figure)
  compare   sweep all three methods on shared datasets, write CSV (+ figure)
  synth     write one synthetic dataset as one CSV per task
  novel     fit the novel task of a dataset directory under a given support
  realdata  expression-table comparison pipeline, write CSV (+ figure)
  tune      random-search the support-recovery penalty for one method

Exit codes: 0 success, 2 config error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, meta, realdata
from .model import SupportSet, TaskData
from .synth import GenConfig, generate, make_true_weights

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3

logger = logging.getLogger("metasparse")


class ConfigError(Exception):
    pass


def _load_json(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _load_experiment(path: Path) -> bench.ExperimentSpec:
    try:
        return bench.ExperimentSpec.from_json_dict(_load_json(path))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _figure_path(out_csv: Path) -> Path:
    return out_csv.with_suffix(".png")


def _cmd_phase(args) -> int:
    spec = _load_experiment(Path(args.config))
    records = bench.run_phase(spec, workers=args.workers)
    bench.write_csv(records, args.out)
    if not args.no_plot:
        from . import plots

        plots.phase_figure(records, _figure_path(Path(args.out)))
    return EXIT_OK


def _cmd_compare(args) -> int:
    spec = _load_experiment(Path(args.config))
    records = bench.run_compare(spec, workers=args.workers)
    bench.write_csv(records, args.out)
    if not args.no_plot:
        from . import plots

        plots.phase_figure(records, _figure_path(Path(args.out)))
    return EXIT_OK


def _cmd_synth(args) -> int:
    try:
        config = GenConfig.from_json_dict(_load_json(Path(args.config)))
        w_star = make_true_weights(config.p, config.k, config.amplitude)
        dataset, truth = generate(config, w_star)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = "y," + ",".join(f"x{j + 1}" for j in range(config.p))
    for task in dataset.prior_tasks:
        _write_task_csv(task, out / f"task_{task.task_id:03d}.csv", header)
    _write_task_csv(dataset.novel_task, out / "novel.csv", header)
    (out / "truth.json").write_text(json.dumps({
        "w_star": truth.w_star.tolist(),
        "support": list(truth.support),
        "novel_weights": truth.novel_weights().tolist(),
        "config": config.to_json_dict(),
    }, indent=2), encoding="utf-8")
    return EXIT_OK


def _write_task_csv(task: TaskData, path: Path, header: str) -> None:
    rows = np.column_stack([task.y, task.X])
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _read_task_csv(path: Path, task_id: int) -> TaskData:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        if not header or header[0] != "y":
            raise ConfigError(f"{path}: expected header starting with 'y'")
        body = [line.strip().split(",") for line in f if line.strip()]
    data = np.array(body, dtype=float)
    if data.shape[1] != len(header):
        raise ConfigError(f"{path}: ragged rows")
    return TaskData(task_id=task_id, X=data[:, 1:], y=data[:, 0])


def _read_support_csv(path: Path) -> SupportSet:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != "index":
        raise ConfigError(f"{path}: expected a single 'index' column")
    try:
        return SupportSet.from_iterable(int(v) for v in lines[1:])
    except ValueError as exc:
        raise ConfigError(f"{path}: non-integer support entry ({exc})") from exc


def _cmd_novel(args) -> int:
    dataset_dir = Path(args.dataset)
    novel_path = dataset_dir / "novel.csv"
    if not novel_path.exists():
        raise FileNotFoundError(f"no novel.csv under {dataset_dir}")
    novel = _read_task_csv(novel_path, task_id=-1)
    support = _read_support_csv(Path(args.support))
    if len(support) and max(support) >= novel.n_features:
        raise ConfigError(
            f"support index {max(support)} out of range for p={novel.n_features}"
        )
    report = meta.fit_novel_task(
        novel, support, c_lambda_novel=args.c_lambda, refit=args.refit
    )
    Path(args.out).write_text(
        json.dumps(report.to_json_dict(), indent=2), encoding="utf-8"
    )
    return EXIT_OK


def _real_spec(args) -> realdata.RealSpec:
    try:
        return realdata.RealSpec(
            response_name=args.response,
            l=args.l,
            search_evals=args.evals,
            novel_rep=args.novel_rep,
            outer_reps=args.reps,
            master_seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_realdata(args) -> int:
    try:
        table = realdata.load_expression_csv(args.csv, response_name=args.response)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    spec = _real_spec(args)
    try:
        records = realdata.run_real_compare(
            table, spec, standardize=args.standardize, workers=args.workers
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    realdata.write_real_csv(records, args.out)
    if not args.no_plot:
        from . import plots

        plots.real_figure(records, _figure_path(Path(args.out)))
    return EXIT_OK


_TUNE_METHODS = {"meta": "meta", "group": "group_lasso", "dirty": "dirty_model"}


def _cmd_tune(args) -> int:
    try:
        table = realdata.load_expression_csv(args.csv, response_name=args.response)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    spec = _real_spec(args)
    method = _TUNE_METHODS[args.method]
    try:
        result = realdata.tune_support_penalty(table, spec, method)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    Path(args.out).write_text(json.dumps(result, indent=2), encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metasparse",
        description="Pooled sparse support recovery, few-shot novel-task "
        "estimation, and phase-transition experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_workers(p):
        p.add_argument(
            "--workers", type=int, default=None,
            help="worker processes (default: METASPARSE_WORKERS or CPU count)",
        )

    p_phase = sub.add_parser("phase", help="Monte-Carlo sweep for one method")
    p_phase.add_argument("--config", required=True, help="ExperimentSpec JSON")
    p_phase.add_argument("--out", required=True, help="output CSV path")
    p_phase.add_argument("--no-plot", action="store_true", help="skip the PNG figure")
    add_workers(p_phase)
    p_phase.set_defaults(func=_cmd_phase)

    p_cmp = sub.add_parser("compare", help="sweep meta vs both multi-task baselines")
    p_cmp.add_argument("--config", required=True, help="ExperimentSpec JSON")
    p_cmp.add_argument("--out", required=True, help="output CSV path")
    p_cmp.add_argument("--no-plot", action="store_true", help="skip the PNG figure")
    add_workers(p_cmp)
    p_cmp.set_defaults(func=_cmd_compare)

    p_synth = sub.add_parser("synth", help="write a synthetic dataset, one CSV per task")
    p_synth.add_argument("--config", required=True, help="GenConfig JSON")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.set_defaults(func=_cmd_synth)

    p_novel = sub.add_parser("novel", help="fit the novel task under a given support")
    p_novel.add_argument("--dataset", required=True, help="directory written by synth")
    p_novel.add_argument("--support", required=True, help="CSV with an 'index' column")
    p_novel.add_argument("--out", required=True, help="output JSON path")
    p_novel.add_argument("--c-lambda", type=float, default=1.0, dest="c_lambda")
    p_novel.add_argument("--refit", action="store_true", help="OLS refit on the selection")
    p_novel.set_defaults(func=_cmd_novel)

    p_real = sub.add_parser("realdata", help="expression-table comparison pipeline")
    p_real.add_argument("--csv", required=True, help="expression CSV path")
    p_real.add_argument("--response", required=True, help="response factor name")
    p_real.add_argument("--l", type=int, required=True, help="training cells per task")
    p_real.add_argument("--out", required=True, help="output CSV path")
    p_real.add_argument("--reps", type=int, default=100, help="outer repetitions")
    p_real.add_argument("--evals", type=int, default=30, help="random-search budget")
    p_real.add_argument("--novel-rep", type=int, default=6, dest="novel_rep")
    p_real.add_argument("--seed", type=int, default=0)
    p_real.add_argument("--standardize", action="store_true",
                        help="z-score covariates on pooled training data")
    p_real.add_argument("--no-plot", action="store_true", help="skip the PNG figure")
    add_workers(p_real)
    p_real.set_defaults(func=_cmd_realdata)

    p_tune = sub.add_parser("tune", help="random-search one method's penalty")
    p_tune.add_argument("--csv", required=True, help="expression CSV path")
    p_tune.add_argument("--method", required=True, choices=sorted(_TUNE_METHODS))
    p_tune.add_argument("--out", required=True, help="output JSON path")
    p_tune.add_argument("--response", required=True, help="response factor name")
    p_tune.add_argument("--l", type=int, default=5, help="training cells per task")
    p_tune.add_argument("--evals", type=int, default=30)
    p_tune.add_argument("--novel-rep", type=int, default=6, dest="novel_rep")
    p_tune.add_argument("--reps", type=int, default=1, help=argparse.SUPPRESS)
    p_tune.add_argument("--seed", type=int, default=0)
    p_tune.set_defaults(func=_cmd_tune)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
