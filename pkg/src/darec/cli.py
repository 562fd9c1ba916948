"""Command-line entry point: ``darec <subcommand> [options]``.

Every subcommand that writes files also writes the fully resolved config
(``config.ini``) next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import autorec as ar
from . import checks, plotting
from .config import ConfigError, SynthConfig, TrainConfig, dump_config, parse_overrides, \
    read_config_file, resolve
from .harness import (CSV_COLUMNS, Prepared, format_report, prepare, report_row,
                      run_experiment, synth_generate)
from .nncore import save_tensors
from .ratings import AlignedDataset, DataError, align_domains, ingest_csv, load_aligned, \
    save_aligned, stats

log = logging.getLogger("darec")


class CliError(Exception):
    pass


def _configs(args) -> tuple[TrainConfig, SynthConfig]:
    values = read_config_file(args.config) if args.config else {}
    overrides = parse_overrides(args.set or [])
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
        overrides["synth.seed"] = str(args.seed)
    return resolve(values, overrides)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out: Path, cfg: TrainConfig, synth: SynthConfig | None) -> None:
    (out / "config.ini").write_text(dump_config(cfg, synth), encoding="utf-8")


def _write_csv(path: Path, rows: list[dict], columns=CSV_COLUMNS) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def stats_table(ds: AlignedDataset, name: str = "") -> str:
    lines = [f"{'dataset':<20}{'domain':<8}{'#users':>8}{'#items':>9}{'#ratings':>10}{'sparsity':>10}"]
    for dom in ("source", "target"):
        s = stats(ds.domain(dom))
        lines.append(f"{name:<20}{dom:<8}{s.users:>8}{s.items:>9}{s.ratings:>10}"
                     f"{100 * s.sparsity:>9.2f}%")
    return "\n".join(lines) + "\n"


def _stats_rows(ds: AlignedDataset) -> list[dict]:
    rows = []
    for dom in ("source", "target"):
        s = stats(ds.domain(dom))
        rows.append({"domain": dom, "users": s.users, "items": s.items, "ratings": s.ratings,
                     "sparsity": f"{s.sparsity:.6f}"})
    return rows


def _data(args, synth: SynthConfig) -> AlignedDataset:
    if getattr(args, "data", None):
        return load_aligned(args.data)
    log.info("no --data given; generating synthetic data (seed %d)", synth.seed)
    return synth_generate(synth)


# subcommands

def cmd_ingest(args) -> int:
    out = _out(args)
    src = ingest_csv(args.source, header=args.header)
    tgt = ingest_csv(args.target, header=args.header)
    ds = align_domains(src, tgt, min_ratings=args.min_ratings)
    save_aligned(ds, out / "aligned.txt")
    table = stats_table(ds, args.name)
    (out / "stats.txt").write_text(table, encoding="utf-8")
    _write_csv(out / "stats.csv", _stats_rows(ds), ("domain", "users", "items", "ratings", "sparsity"))
    sys.stdout.write(table)
    return 0


def cmd_stats(args) -> int:
    ds = load_aligned(args.data)
    table = stats_table(ds, args.name)
    sys.stdout.write(table)
    if args.out:
        out = _out(args)
        _write_csv(out / "stats.csv", _stats_rows(ds), ("domain", "users", "items", "ratings", "sparsity"))
    return 0


def cmd_synth(args) -> int:
    cfg, synth = _configs(args)
    out = _out(args)
    ds = synth_generate(synth)
    save_aligned(ds, out / "aligned.txt")
    _write_config(out, cfg, synth)
    sys.stdout.write(stats_table(ds, "synthetic"))
    return 0


def _save_embeddings(out: Path, prep: Prepared) -> None:
    for dom, e in prep.embeddings.items():
        save_tensors(out / f"embeddings_{dom}.bin", {f"{dom}.{e.orientation}": e.vectors})
        (out / f"embeddings_{dom}.ids.txt").write_text(
            "".join(f"{j}\t{i}\n" for j, i in enumerate(e.ids)), encoding="utf-8")


def _save_autorecs(out: Path, prep: Prepared) -> dict:
    files = {}
    for dom, p in prep.autorecs.items():
        name = f"autorec_{dom}.bin"
        save_tensors(out / name, p.tensors())
        files[dom] = name
    return files


def cmd_extract(args) -> int:
    cfg, synth = _configs(args)
    out = _out(args)
    _write_config(out, cfg, synth)
    prep = prepare(cfg, _data(args, synth))
    _save_autorecs(out, prep)
    _save_embeddings(out, prep)
    print(f"embeddings written to {out}", file=sys.stderr)
    return 0


def _save_run(out: Path, report, prep_files: dict | None = None) -> None:
    net = report.network
    save_tensors(out / "darec.bin", net.tensors())
    manifest = net.manifest()
    manifest["loss_weights"] = {"beta": report.config["beta"], "mu": report.config["mu"],
                                "lambda": report.config["lam"]}
    manifest["checkpoint"] = "darec.bin"
    if prep_files:
        manifest["autorec"] = prep_files
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _run_one(cfg: TrainConfig, data: AlignedDataset, out: Path, save: bool):
    prep = prepare(cfg, data)
    report = run_experiment(cfg, data, prep)
    if save:
        out.mkdir(parents=True, exist_ok=True)
        _save_run(out, report, _save_autorecs(out, prep))
        _save_embeddings(out, prep)
        plotting.loss_curves(report.curves, out / "loss_curves.png")
    return report


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"expected a comma-separated list of integers, got {text!r}") from None


def cmd_run(args, evaluate: bool = True) -> int:
    cfg, synth = _configs(args)
    out = _out(args)
    _write_config(out, cfg, synth)
    variants = args.variants.split(",") if args.variants else [cfg.variant]
    seeds = _int_list(args.seeds) if args.seeds else [cfg.seed]
    reports = []
    for seed in seeds:
        s_cfg = SynthConfig(**{**asdict(synth), "seed": seed})
        data = _data(args, s_cfg)
        for v in variants:
            run_cfg = cfg.with_(variant=v, seed=seed)
            multi = len(seeds) > 1 or len(variants) > 1
            sub = out / f"{v}_seed{seed}" if multi else out
            reports.append(_run_one(run_cfg, data, sub, save=True))
            log.info("%s seed %d done: target RMSE %.4f", v, seed, reports[-1].rmse_target)
    if not evaluate:
        print(f"checkpoints written to {out}", file=sys.stderr)
        return 0
    text = "\n\n".join(format_report(r) for r in reports) + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    _write_csv(out / "report.csv", [report_row(r) for r in reports])
    if len(reports) > 1:
        labels, means, stds = ["AutoRec"], [], []
        base = [r.baseline_rmse_target for r in reports if r.variant == variants[0]]
        means.append(float(np.mean(base)))
        stds.append(float(np.std(base)))
        for v in variants:
            vals = [r.rmse_target for r in reports if r.variant == v]
            labels.append(f"{v}-DARec")
            means.append(float(np.mean(vals)))
            stds.append(float(np.std(vals)))
        plotting.comparison_bars(labels, means, stds, out / "comparison.png")
    sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    return cmd_run(args, evaluate=False)


def _axis_values(axis: str, text: str) -> list:
    cfg = TrainConfig()
    if not hasattr(cfg, axis) or axis in ("variant", "orientation"):
        raise CliError(f"{axis}: not a sweepable configuration key")
    typ = type(getattr(cfg, axis))
    try:
        return [typ(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"{axis}: cannot parse sweep values {text!r}") from None


def cmd_sweep(args) -> int:
    cfg, synth = _configs(args)
    out = _out(args)
    _write_config(out, cfg, synth)
    values = _axis_values(args.axis, args.values)
    variants = args.variants.split(",") if args.variants else [cfg.variant]
    seeds = _int_list(args.seeds) if args.seeds else [cfg.seed]
    rows = []
    for seed in seeds:
        data = _data(args, SynthConfig(**{**asdict(synth), "seed": seed}))
        for v in variants:
            for x in values:
                run_cfg = cfg.with_(variant=v, seed=seed, **{args.axis: x})
                r = run_experiment(run_cfg, data)
                row = report_row(r)
                row[args.axis] = x
                rows.append(row)
                print(f"{v} seed={seed} {args.axis}={x}: target RMSE {r.rmse_target:.4f}",
                      file=sys.stderr)
    columns = list(CSV_COLUMNS) + ([args.axis] if args.axis not in CSV_COLUMNS else [])
    _write_csv(out / "sweep.csv", rows, columns)
    plotting.sweep_plot(rows, args.axis, out / "sweep.png")
    lines = [f"{'variant':<8}{args.axis:>12}{'mean RMSE':>12}{'std':>9}"]
    for v in variants:
        for x in values:
            vals = [r["rmse_target"] for r in rows if r["variant"] == v and r[args.axis] == x]
            lines.append(f"{v:<8}{x!s:>12}{np.mean(vals):>12.4f}{np.std(vals):>9.4f}")
    text = "\n".join(lines) + "\n"
    (out / "sweep.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    errors = checks.run_all(seed, corrupt=args.corrupt)
    ok = True
    for name, err in errors.items():
        passed = err < checks.TOLERANCE
        ok &= passed
        print(f"{name:<15}{err:.3e}  {'PASS' if passed else 'FAIL'}")
    if not ok:
        bad = ", ".join(n for n, e in errors.items() if e >= checks.TOLERANCE)
        print(f"gradient check failed: {bad}", file=sys.stderr)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="overrides experiment and synthetic seeds")
    common.add_argument("--out", default="darec_out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="config override, repeatable (key or section.key)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="darec", description="Cross-domain rating prediction.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="align two rating CSVs over shared users")
    s.add_argument("source", help="source-domain CSV (user,item,rating[,timestamp])")
    s.add_argument("target", help="target-domain CSV")
    s.add_argument("--min-ratings", type=int, default=5)
    s.add_argument("--header", action="store_true", help="CSV files start with a header row")
    s.add_argument("--name", default="", help="dataset label for the stats table")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("stats", parents=[common], help="statistics of an aligned dataset file")
    s.add_argument("data")
    s.add_argument("--name", default="")
    s.set_defaults(func=cmd_stats, out=None)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic aligned dataset")
    s.set_defaults(func=cmd_synth)

    for name, func, desc in (("run", cmd_run, "train and evaluate, writing reports and checkpoints"),
                             ("train", cmd_train, "train and write checkpoints only")):
        s = sub.add_parser(name, parents=[common], help=desc)
        s.add_argument("--data", help="aligned dataset file; synthetic data when omitted")
        s.add_argument("--variants", help="comma-separated, e.g. U,I (default: config variant)")
        s.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
        s.set_defaults(func=func)

    s = sub.add_parser("extract", parents=[common], help="train AutoRec stage and write embeddings")
    s.add_argument("--data")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("sweep", parents=[common], help="one run per value of a config key")
    s.add_argument("--data")
    s.add_argument("--axis", default="k")
    s.add_argument("--values", default="8,16,32,64,128")
    s.add_argument("--variants")
    s.add_argument("--seeds")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    s.add_argument("--corrupt", choices=checks.COMPONENTS, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, DataError, CliError, FileNotFoundError) as e:
        print(f"darec: error: {e}", file=sys.stderr)
        return 2 if isinstance(e, (ConfigError, CliError)) else 1
    except (ValueError, FloatingPointError) as e:
        print(f"darec: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
