"""Command-line front end: simulate, analyze, features, select, evaluate."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
import time
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .formats import (
    FormatError,
    atomic_open,
    format_cohort,
    format_feature_row,
    parse_cohort,
    read_dataset_manifest,
    read_feature_table,
    read_measurement,
    sha256_file,
    write_dataset_manifest,
    write_feature_table,
    write_json,
    write_matrix_csv,
    write_measurement,
    write_pgm,
)
from .model import FeatureTable, evaluate_loso, roc, select_model
from .pipeline import Analysis, PipelineConfig, analyze_signal, infer_direction, load_config
from .sim import CohortSpec, default_cohort, plan_dataset
from .tfa import power_to_db, to_gray

log = logging.getLogger("gaitradar")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DATA = 3


class DataError(RuntimeError):
    pass


class ValidationError(RuntimeError):
    pass


class Run:
    """Collects outputs and stage timings; writes the run manifest last."""

    def __init__(self, command: str, out: Path, config: PipelineConfig, seed):
        self.command = command
        self.out = out
        self.config = config
        self.seed = seed
        self.timings = {}
        self.outputs = []
        self._t = time.perf_counter()

    def stage(self, name: str):
        now = time.perf_counter()
        self.timings[name] = round(now - self._t, 6)
        self._t = now

    def add(self, path):
        self.outputs.append(Path(path))

    def data_hash(self) -> str:
        h = hashlib.sha256()
        for p in sorted(self.outputs, key=lambda p: str(p.relative_to(self.out))):
            h.update(str(p.relative_to(self.out)).encode())
            h.update(sha256_file(p).encode())
        return h.hexdigest()

    def finish(self, extra=None) -> Path:
        manifest = {
            "command": self.command,
            "config_hash": self.config.digest(),
            "config": self.config.__dict__,
            "seed": self.seed,
            "versions": {
                "gaitradar": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "timings_s": self.timings,
            "outputs": [
                {"path": str(p.relative_to(self.out)), "sha256": sha256_file(p)} for p in self.outputs
            ],
            "data_hash": self.data_hash(),
        }
        if extra:
            manifest.update(extra)
        return write_json(self.out / f"manifest_{self.command}.json", manifest)


def _pool_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


# --- simulate -----------------------------------------------------------------------


def _simulate_one(args):
    plan, path = args
    m = plan.run()
    write_measurement(path, m)
    return path


def cmd_simulate(cohort: CohortSpec, out: Path, config: PipelineConfig, jobs: int = 1) -> Path:
    run = Run("simulate", out, config, cohort.master_seed)
    plans = plan_dataset(cohort)
    mdir = out / "measurements"
    names = [f"{p.subject_id}_{p.direction.value}_{p.label.value}_{p.index:02d}.mdgs" for p in plans]
    paths = [mdir / n for n in names]
    run.add(write_cohort_file(out / "cohort.ini", cohort))
    run.stage("plan")
    _pool_map(_simulate_one, list(zip(plans, paths)), jobs)
    run.outputs.extend(paths)
    run.stage("synthesize")
    rows = [
        {"path": str(Path("measurements") / n), "subject": p.subject_id, "direction": p.direction.value,
         "label": p.label.value, "seed": p.seed}
        for p, n in zip(plans, names)
    ]
    run.add(write_dataset_manifest(out / "dataset.csv", rows))
    run.stage("manifest")
    return run.finish({"n_measurements": len(plans)})


def write_cohort_file(path: Path, cohort: CohortSpec) -> Path:
    with atomic_open(path, "w") as fh:
        fh.write(format_cohort(cohort))
    return path


# --- analyze ------------------------------------------------------------------------


def feature_row(meta: dict, analysis: Analysis) -> list[str]:
    """One feature-table row; rejected measurements carry NaNs and a 'rejected' flag."""
    if analysis.ok:
        return format_feature_row(meta, analysis.features.as_array(), analysis.flags)
    return format_feature_row(meta, [math.nan] * 8, [f"rejected:{analysis.error}"] + analysis.flags)


def _load(path, infer: bool, config: PipelineConfig):
    m = read_measurement(path)
    direction = infer_direction(m.signal, config) if infer else m.direction
    return m, direction


def cmd_analyze(path: Path, out: Path, config: PipelineConfig, infer: bool = False,
                write_csv: bool = False) -> tuple[Analysis, Path]:
    run = Run("analyze", out, config, None)
    m, direction = _load(path, infer, config)
    run.stage("read")
    a = analyze_signal(m.signal, direction, config)
    run.stage("analyze")
    spec_db = power_to_db(a.denoised.values)
    # frequency on the vertical axis, positive Doppler at the top
    run.add(write_pgm(out / "spectrogram.pgm", to_gray(spec_db.T[::-1], config.db_floor, config.db_ceil).pixels))
    if write_csv:
        run.add(write_matrix_csv(out / "spectrogram_db.csv", spec_db, a.denoised.frame_times,
                                 a.denoised.freq_axis))
    meta = {"measurement": Path(path).stem, "subject": m.subject_id, "direction": direction.value,
            "label": m.label.value}
    if a.stats is not None:
        run.add(write_json(out / "gaitstats.json", a.stats.to_dict()))
    if a.pair is not None:
        _write_steps(out, a, run)
    run.add(write_feature_table(out / "features.csv", [feature_row(meta, a)]))
    run.stage("write")
    manifest = run.finish({"input": str(path), "error": a.error, "flags": a.flags})
    return a, manifest


def _write_steps(out: Path, a: Analysis, run: Run):
    run.add(write_pgm(out / "window.pgm", a.window.pixels))
    run.add(write_pgm(out / "step_A.pgm", a.pair.a))
    run.add(write_pgm(out / "step_B.pgm", a.pair.b))
    sidecar = {
        "window_start_frame": a.window.start_frame,
        "initial_step_frames": list(a.window.step_frames),
        "step_frames": list(a.pair.step_frames),
        "gamma_max": list(a.pair.gamma_max),
        "n_x": a.pair.n_x,
        "n_y": a.pair.n_y,
        "doppler_rows_hz": [float(a.window.doppler_rows[0]), float(a.window.doppler_rows[-1])],
        "flags": list(a.pair.flags),
    }
    run.add(write_json(out / "steps.json", sidecar))


# --- features -----------------------------------------------------------------------


def _features_one(args):
    row, config = args
    try:
        m = read_measurement(row["path"])
    except FormatError as exc:
        a = None
        err = f"rejected:FormatError: {exc}"
        meta = {"measurement": Path(row["path"]).stem, "subject": row["subject"],
                "direction": row["direction"], "label": row["label"]}
        return format_feature_row(meta, [math.nan] * 8, [err])
    a = analyze_signal(m.signal, m.direction, config)
    meta = {"measurement": Path(row["path"]).stem, "subject": m.subject_id,
            "direction": m.direction.value, "label": m.label.value}
    return feature_row(meta, a)


def _dataset_csv(path: Path) -> Path:
    return path / "dataset.csv" if path.is_dir() else path


def cmd_features(dataset: Path, out: Path, config: PipelineConfig, jobs: int = 1) -> Path:
    run = Run("features", out, config, None)
    rows = read_dataset_manifest(_dataset_csv(dataset))
    run.stage("read")
    table_rows = _pool_map(_features_one, [(r, config) for r in rows], jobs)
    run.stage("analyze")
    run.add(write_feature_table(out / "features.csv", table_rows))
    rejected = sum(1 for r in table_rows if r[-1].startswith("rejected"))
    run.stage("write")
    return run.finish({"n_rows": len(table_rows), "n_rejected": rejected})


# --- select / evaluate ----------------------------------------------------------------


def _exclude(table: FeatureTable, subjects) -> FeatureTable:
    subjects = set(subjects or ())
    return table.subset([s not in subjects for s in table.subject])


def write_bic_curve(path: Path, result) -> Path:
    with atomic_open(path, "w", newline="") as fh:
        fh.write("order,bic,predictors\n")
        for d, subset, b in result.per_order_minima():
            fh.write(f"{d},{b!r},{'+'.join(subset)}\n")
    return path


def cmd_select(table_path: Path, out: Path, config: PipelineConfig, scenarios, exclude=()) -> Path:
    run = Run("select", out, config, None)
    table = _exclude(read_feature_table(table_path), exclude).usable()
    run.stage("read")
    summary = {}
    for scen in scenarios:
        res = select_model(table, scen)
        run.stage(f"select_{scen}")
        if res.best_model is None:
            raise DataError(f"no model could be fitted for scenario {scen!r}")
        doc = res.best_model.to_dict()
        doc["scenario"] = scen
        doc["excluded_subjects"] = sorted(set(exclude or ()))
        run.add(write_json(out / f"model_{scen}.json", doc))
        run.add(write_bic_curve(out / f"bic_{scen}.csv", res))
        summary[scen] = {"predictors": list(res.best_subset), "bic": res.best_bic}
    return run.finish({"selected": summary})


REPORT_COLUMNS = ("subject", "direction", "predictors", "tau", "pd_train", "fa_train", "pd_test",
                  "fa_test", "n_test_pos", "n_test_neg", "flags")


def cmd_evaluate(table_path: Path, out: Path, config: PipelineConfig, holdout=None,
                 scenarios=("toward", "away"), jobs: int = 1) -> tuple[list, Path]:
    run = Run("evaluate", out, config, None)
    table = read_feature_table(table_path).usable()
    subjects = list(holdout) if holdout else sorted(set(table.subject))
    missing = [s for s in subjects if s not in set(table.subject)]
    if missing:
        raise DataError(f"held-out subjects not in table: {missing}")
    run.stage("read")
    jobs_list = [(table, s, scen, config.fa_bound) for s in subjects for scen in scenarios]
    reports = _pool_map(_loso_one, jobs_list, jobs)
    run.stage("loso")
    with atomic_open(out / "evaluation.csv", "w", newline="") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for rep in reports:
            row = rep.row()
            fh.write(",".join(_cell(row[c]) for c in REPORT_COLUMNS) + "\n")
    run.add(out / "evaluation.csv")
    for rep in reports:
        train = table.subset([s != rep.subject for s in table.subject]).scenario(rep.scenario)
        probs = rep.detector.model.predict(train.columns(rep.predictors))
        curve = roc(probs, train.label)
        path = out / "roc" / f"roc_{rep.subject}_{rep.scenario}.csv"
        with atomic_open(path, "w", newline="") as fh:
            fh.write("threshold,fa,detection\n")
            for t, fa, pd in curve.rows():
                fh.write(f"{t!r},{fa!r},{pd!r}\n")
        run.add(path)
    run.stage("write")
    run.finish({"held_out": subjects, "scenarios": list(scenarios)})
    return reports, out / "evaluation.csv"


def _loso_one(args):
    table, subject, scenario, fa_bound = args
    return evaluate_loso(table, subject, scenario, fa_bound)


def _cell(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


# --- argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="pipeline INI config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (simulate)")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes")
    common.add_argument("--window-length", type=int, default=argparse.SUPPRESS)
    common.add_argument("--fft-size", type=int, default=argparse.SUPPRESS)
    common.add_argument("--hop", type=int, default=argparse.SUPPRESS)
    common.add_argument("--margin-db", type=float, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="gaitradar", parents=[common],
                                     description="Gait asymmetry detection from CW radar micro-Doppler.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="synthesize a labeled cohort")
    p.add_argument("--cohort", type=Path, help="cohort INI (default: built-in 14-subject cohort)")
    p.add_argument("--snr", type=float, help="override the cohort SNR in dB")

    for name, helptext in (("analyze", "analyze one measurement file"),
                           ("gaitstats", "print gait statistics as JSON"),
                           ("steps", "write the averaged step signatures")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("measurement", type=Path)
        p.add_argument("--infer-direction", action="store_true",
                       help="take the direction from the Doppler sign instead of the header")
        if name == "analyze":
            p.add_argument("--csv", action="store_true", help="also write the dB spectrogram as CSV")

    p = sub.add_parser("features", parents=[common], help="feature table for a dataset")
    p.add_argument("dataset", type=Path, help="dataset.csv or the directory holding it")

    p = sub.add_parser("select", parents=[common], help="exhaustive BIC model selection")
    p.add_argument("table", type=Path)
    p.add_argument("--scenario", action="append", choices=("toward", "away", "both"))
    p.add_argument("--exclude", action="append", default=[], help="subject to leave out (repeatable)")

    p = sub.add_parser("evaluate", parents=[common], help="leave-one-subject-out evaluation")
    p.add_argument("table", type=Path)
    p.add_argument("--holdout", action="append", default=[], help="held-out subject (repeatable)")
    p.add_argument("--scenario", action="append", choices=("toward", "away", "both"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    opts = vars(args)
    logging.basicConfig(level=logging.INFO if opts.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(opts.get("out", "."))
    jobs = int(opts.get("jobs", 1))
    if jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        config = load_config(opts.get("config"), window_length=opts.get("window_length"),
                             fft_size=opts.get("fft_size"), hop=opts.get("hop"),
                             margin_db=opts.get("margin_db"), master_seed=opts.get("seed"),
                             snr=opts.get("snr"))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        return _dispatch(args, opts, config, out, jobs)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataError, ValueError, KeyError, OSError) as exc:
        # unreadable inputs, failed analyses and unfittable models
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def _dispatch(args, opts, config: PipelineConfig, out: Path, jobs: int) -> int:
    cmd = args.command
    if cmd == "simulate":
        cohort_path = args.cohort or (Path(config.cohort) if config.cohort else None)
        if cohort_path is not None:
            try:
                text = Path(cohort_path).read_text()
            except OSError as exc:
                raise DataError(f"cannot read cohort {cohort_path}: {exc}") from exc
            try:
                cohort = parse_cohort(text)
                if "seed" in opts:
                    cohort = replace(cohort, master_seed=config.master_seed)
            except ValueError as exc:
                raise ValidationError(f"cohort {cohort_path}: {exc}") from exc
        else:
            cohort = default_cohort(config.master_seed, config.snr)
        if args.snr is not None:
            if not args.snr > 0:
                raise ValidationError("--snr must be positive")
            cohort = replace(cohort, snr=args.snr)
        manifest = cmd_simulate(cohort, out, config, jobs)
        print(manifest)
        return EXIT_OK

    if cmd in ("analyze", "gaitstats", "steps"):
        if not args.measurement.exists():
            raise DataError(f"no such file: {args.measurement}")
        if cmd == "analyze":
            a, manifest = cmd_analyze(args.measurement, out, config, args.infer_direction, args.csv)
            print(manifest)
            return EXIT_OK if a.ok else EXIT_DATA
        m, direction = _load(args.measurement, args.infer_direction, config)
        a = analyze_signal(m.signal, direction, config)
        if cmd == "gaitstats":
            if a.stats is None:
                print(f"error: {a.error}", file=sys.stderr)
                return EXIT_DATA
            print(json.dumps(a.stats.to_dict(), indent=2))
            return EXIT_OK
        if a.pair is None:
            print(f"error: {a.error}", file=sys.stderr)
            return EXIT_DATA
        run = Run("steps", out, config, None)
        _write_steps(out, a, run)
        print(run.finish({"input": str(args.measurement)}))
        return EXIT_OK

    if cmd == "features":
        print(cmd_features(args.dataset, out, config, jobs))
        return EXIT_OK

    if cmd == "select":
        scenarios = args.scenario or [config.scenario]
        print(cmd_select(args.table, out, config, scenarios, args.exclude))
        return EXIT_OK

    if cmd == "evaluate":
        scenarios = args.scenario or ["toward", "away"]
        reports, path = cmd_evaluate(args.table, out, config, args.holdout, scenarios, jobs)
        for rep in reports:
            print(f"{rep.subject:>6} {rep.scenario:>6}  tau={rep.tau:.3f}  "
                  f"P_D,train={100 * rep.pd_train:6.2f}%  P_D,test={_pct(rep.pd_test)}  "
                  f"FA,test={_pct(rep.fa_test)}  [{'+'.join(rep.predictors)}]")
        return EXIT_OK
    raise AssertionError(cmd)


def _pct(v) -> str:
    return "   n/a " if v is None or (isinstance(v, float) and math.isnan(v)) else f"{100 * v:6.2f}%"


if __name__ == "__main__":
    sys.exit(main())
