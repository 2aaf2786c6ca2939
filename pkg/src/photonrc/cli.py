"""Batch orchestration CLI: run sweeps from a config file, validate configs,
summarize result CSVs. Data goes to files, progress to stderr."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from photonrc.configfile import ConfigError, parse_config, schema_lines
from photonrc.experiment import ExperimentConfig, ResultRow, run_sweep_point, sweep_grid
from photonrc import dumps

log = logging.getLogger("photonrc")

CSV_SCHEMA_VERSION = 1

_FIXED_COLUMNS = ["schema_version", "point_index", "seed", "mode", "mask_seed",
                  "selected_taps", "log10_ber", "zero_errors", "bit_errors",
                  "bits", "hd_fec_pass", "mc", "runtime_s", "error"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.9g}"
    return str(value)


def _row_record(row: ResultRow, sweep_paths: list[str], timing: bool) -> dict:
    rec = {
        "schema_version": CSV_SCHEMA_VERSION,
        "point_index": row.point_index,
        "seed": row.seed,
        "mode": row.mode,
        "mask_seed": row.mask_seed,
        "selected_taps": row.selected_taps,
        "log10_ber": None,
        "zero_errors": None,
        "bit_errors": None,
        "bits": None,
        "hd_fec_pass": None,
        "mc": row.mc,
        "runtime_s": row.runtime_s if timing else None,
        "error": row.error,
    }
    if row.report is not None:
        rec["log10_ber"] = row.report.log10_ber_bound
        rec["zero_errors"] = int(row.report.bit_errors == 0)
        rec["bit_errors"] = row.report.bit_errors
        rec["bits"] = row.report.bits
        rec["hd_fec_pass"] = row.report.hd_fec_pass
    for path in sweep_paths:
        rec[path] = row.swept.get(path)
    return rec


def write_results_csv(path: str, rows: list[ResultRow], sweep_paths: list[str],
                      timing: bool = False) -> None:
    """Write rows atomically in canonical (point_index, seed) order."""
    columns = _FIXED_COLUMNS + sweep_paths
    ordered = sorted(rows, key=lambda r: (r.point_index, r.seed))
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in ordered:
                rec = _row_record(row, sweep_paths, timing)
                writer.writerow([_fmt(rec[c]) for c in columns])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_experiment(cfg: ExperimentConfig, out_csv: str, workers: int = 1,
                   seed_offset: int = 0, timing: bool = False,
                   dump_dir: str | None = None) -> list[ResultRow]:
    """Execute the sweep grid x seeds and write the results CSV."""
    grid = sweep_grid(cfg)
    seeds = [s + seed_offset for s in cfg.seeds]
    jobs = [(cfg, assignment, index, seed)
            for index, assignment in enumerate(grid) for seed in seeds]
    log.info("running %d points x %d seeds = %d jobs (%d workers)",
             len(grid), len(seeds), len(jobs), workers)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_sweep_point, jobs))
    else:
        rows = []
        for j, job in enumerate(jobs):
            rows.append(run_sweep_point(job))
            log.info("job %d/%d done (point %d, seed %d)", j + 1, len(jobs),
                     job[2], job[3])

    for row in rows:
        if row.error:
            log.warning("point %d seed %d failed: %s", row.point_index, row.seed, row.error)

    sweep_paths = [path for path, _ in cfg.sweep]
    write_results_csv(out_csv, rows, sweep_paths, timing=timing)
    if dump_dir:
        os.makedirs(dump_dir, exist_ok=True)
        for row in rows:
            if row.report is None:
                continue
            arr = np.array([row.point_index, row.seed,
                            row.report.bit_errors, row.report.bits], dtype=np.float64)
            dumps.write_array(os.path.join(
                dump_dir, f"point{row.point_index:04d}_seed{row.seed}.bin"), arr)
    return rows


def sweep_report(results_file: str, group_by: list[str]):
    """Group rows and summarize log10_ber: median, quartiles, min, max.

    Zero-error rows enter with their upper bound; rows with an error column
    or without a BER are dropped (a warning is logged); groups left empty
    are omitted with a warning.
    """
    with open(results_file, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{results_file}: empty results file")
        for col in group_by:
            if col not in reader.fieldnames:
                raise ValueError(f"unknown group-by column {col!r}")
        rows = list(reader)

    groups: dict[tuple, list[float]] = {}
    for row in rows:
        key = tuple(row[c] for c in group_by)
        groups.setdefault(key, [])
        if row.get("error"):
            log.warning("dropping failed row in group %s: %s", key, row["error"])
            continue
        if not row.get("log10_ber"):
            log.warning("dropping row without log10_ber in group %s", key)
            continue
        groups[key].append(float(row["log10_ber"]))

    header = group_by + ["n", "median", "p25", "p75", "min", "max"]
    table = []
    for key in sorted(groups):
        values = groups[key]
        if not values:
            log.warning("group %s has no usable rows; omitted", key)
            continue
        v = np.asarray(values)
        table.append(list(key) + [len(values),
                                  float(np.median(v)),
                                  float(np.percentile(v, 25)),
                                  float(np.percentile(v, 75)),
                                  float(v.min()), float(v.max())])
    return header, table


def _cmd_run(args) -> int:
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.config))[0]
    out_csv = os.path.join(out_dir, stem + ".csv")
    run_experiment(cfg, out_csv, workers=args.threads, seed_offset=args.seed_offset,
                   timing=args.timing, dump_dir=args.dump_dir)
    log.info("results written to %s", out_csv)
    print(out_csv)
    return 0


def _cmd_validate(args) -> int:
    if args.schema:
        for line in schema_lines():
            print(line)
        return 0
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    grid = sweep_grid(cfg)
    log.info("config ok: mode=%s, %d sweep points x %d seeds",
             cfg.mode, len(grid), len(cfg.seeds))
    return 0


def _cmd_report(args) -> int:
    try:
        header, table = sweep_report(args.results, args.group_by)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2
    out_path = args.out or args.results + ".summary.csv"
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in table:
            writer.writerow([_fmt(v) for v in row])
    log.info("summary written to %s", out_path)
    print(out_path)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="photonrc",
        description="PAM-4 SSB link simulator with photonic TDRC/ELM post-processing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the sweep described by a config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory (default .)")
    p_run.add_argument("--threads", type=int, default=1,
                       help="worker processes (default 1 = reproducibility mode)")
    p_run.add_argument("--seed-offset", type=int, default=0)
    p_run.add_argument("--timing", action="store_true",
                       help="record wall-clock runtimes in the CSV (breaks byte-stability)")
    p_run.add_argument("--dump-dir", default=None,
                       help="write per-point binary diagnostic dumps here")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a config file")
    p_val.add_argument("config", nargs="?", default=None)
    p_val.add_argument("--schema", action="store_true", help="print the key schema")
    p_val.set_defaults(func=_cmd_validate)

    p_rep = sub.add_parser("report", help="summarize a results CSV")
    p_rep.add_argument("results")
    p_rep.add_argument("--group-by", nargs="+", required=True)
    p_rep.add_argument("--out", default=None)
    p_rep.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    if args.command == "validate" and not args.schema and args.config is None:
        parser.error("validate needs a config file (or --schema)")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
