"""Command-line entry point.

Every flag may also come from a ``key=value`` file given with ``--config``
(keys are flag names without the leading dashes, ``-`` or ``_`` both
accepted); flags on the command line win.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .joint import build_constraints, impute_constrained, impute_independent, load_constraints
from .learn import TrainConfig, cross_validate_lambda, train
from .model import load_model, save_model
from .pipeline import (METHODS, RunConfig, run_experiment, run_method, save_trace,
                       write_summary_tsv)
from .table import (MissingSpec, hamming_loss, load_csv, make_splits, mode_fill, read_mask,
                    write_csv, write_mask)

CONSTRAINT_CHOICES = {"none": (), "label": ("label",), "label+pair": ("label", "pairwise")}


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def read_config(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SystemExit(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip().replace("_", "-")] = value.strip()
    return out


def _lambda_arg(text: str):
    return None if text == "auto" else float(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="marginimpute",
        description="Impute missing categorical values with max-margin pairwise MRFs.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="key=value file with default flag values")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--missing-marker", default="?")
        sp.add_argument("--delimiter", default=",")

    sp = sub.add_parser("inject", help="write MCAR-masked copies of a complete table")
    sp.add_argument("--input", required=True)
    sp.add_argument("--fractions", type=_floats, default=[0.1, 0.3, 0.5])
    sp.add_argument("--splits", type=int, default=6)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", required=True)
    common(sp)

    sp = sub.add_parser("train", help="fit an MRF on a table (missing cells mode-filled)")
    sp.add_argument("--input", required=True)
    sp.add_argument("--lambda", dest="lam", type=_lambda_arg, default=None,
                    help="regularization constant or 'auto' (default)")
    sp.add_argument("--pieces", choices=("single", "pair", "both"), default="single")
    sp.add_argument("--formulation", choices=("wwfp", "csfp"), default="wwfp")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--model-out", required=True)
    common(sp)

    sp = sub.add_parser("impute", help="fill missing cells with a trained model")
    sp.add_argument("--input", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--constraints", choices=tuple(CONSTRAINT_CHOICES), default="none")
    sp.add_argument("--constraint-file")
    sp.add_argument("--out", required=True)
    common(sp)

    sp = sub.add_parser("run", help="impute with one method end to end")
    sp.add_argument("--input", required=True)
    sp.add_argument("--method", type=str.upper, choices=METHODS, default="WWFP-WC")
    sp.add_argument("--lambda", dest="lam", type=_lambda_arg, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--trace")
    sp.add_argument("--no-timing", action="store_true",
                    help="omit wall-clock fields so outputs are reproducible byte for byte")
    common(sp)

    sp = sub.add_parser("evaluate", help="Hamming loss of an imputed table on a mask")
    sp.add_argument("--imputed", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--mask", required=True)
    common(sp)

    sp = sub.add_parser("experiment", help="benchmark methods over MCAR splits")
    sp.add_argument("--truth", required=True)
    sp.add_argument("--fractions", type=_floats, default=[0.1, 0.3, 0.5])
    sp.add_argument("--splits", type=int, default=6)
    sp.add_argument("--methods", default="mo,bf,wwfp-wo,wwfp-wc")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--no-timing", action="store_true")
    common(sp)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    cmd_at = next((i for i, a in enumerate(argv) if a in COMMANDS), None)
    if not known.config or cmd_at is None:
        return parser.parse_args(argv)
    given = {a.split("=", 1)[0] for a in argv[cmd_at + 1:] if a.startswith("--")}
    extra = []
    for key, value in read_config(known.config).items():
        flag = f"--{key}"
        if flag in given:
            continue
        if key == "no-timing":
            if value.lower() in ("true", "yes", "1"):
                extra.append(flag)
        else:
            extra.extend([flag, value])
    # config values go right after the command so explicit flags still win
    return parser.parse_args(argv[:cmd_at + 1] + extra + argv[cmd_at + 1:])


def _load(path, args, domains=None):
    return load_csv(path, args.missing_marker, args.delimiter, domains)


def cmd_inject(args) -> int:
    truth = _load(args.input, args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    for frac in args.fractions:
        spec = MissingSpec.uniform(frac, truth.n_cols, args.seed)
        for s, (masked, mask) in enumerate(make_splits(truth, spec, args.splits), start=1):
            base = out / f"{stem}_f{round(frac * 100):02d}_s{s}"
            write_csv(masked, f"{base}.csv", args.missing_marker, args.delimiter)
            write_mask(mask, masked, f"{base}.mask")
    return 0


def cmd_train(args) -> int:
    table = _load(args.input, args)
    cfg = TrainConfig(piece_type=args.pieces, formulation=args.formulation, seed=args.seed)
    lam = args.lam
    if lam is None:
        lam = cross_validate_lambda(table, cfg=cfg, seed=args.seed)
    params = train(mode_fill(table), ~table.missing_mask, replace(cfg, lam=lam))
    save_model(params, args.model_out)
    print(f"lambda={lam!r} objective={params.objective!r}")
    return 0


def cmd_impute(args) -> int:
    params = load_model(args.model)
    table = _load(args.input, args, params.domains)
    kinds = CONSTRAINT_CHOICES[args.constraints]
    if args.constraint_file:
        constraints = load_constraints(args.constraint_file, table)
    elif kinds:
        constraints = build_constraints(table, kinds)
    else:
        constraints = None
    if constraints is None:
        out = impute_independent(params, table)
    else:
        res = impute_constrained(params, table, constraints)
        out = res.table
        if res.status != "converged":
            print(f"warning: constraints not fully met ({res.status})", file=sys.stderr)
    write_csv(out, args.out, args.missing_marker, args.delimiter)
    return 0


def cmd_run(args) -> int:
    table = _load(args.input, args)
    cfg = RunConfig(method=args.method, lam=args.lam, seed=args.seed)
    run = run_method(table, cfg)
    write_csv(run.table, args.out, args.missing_marker, args.delimiter)
    if args.trace:
        save_trace(run, args.trace, timing=not args.no_timing)
    return 0


def cmd_evaluate(args) -> int:
    truth = _load(args.truth, args)
    imputed = _load(args.imputed, args, truth.domains)
    mask = read_mask(args.mask, truth)
    print(f"{hamming_loss(imputed, truth, mask):.6f}")
    return 0


def cmd_experiment(args) -> int:
    truth = _load(args.truth, args)
    dataset = args.dataset or Path(args.truth).stem
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]

    def progress(rec):
        loss = "NA" if rec.loss is None else f"{100 * rec.loss:.2f}"
        print(f"{rec.dataset} {rec.fraction:g} split {rec.split} {rec.method}: {loss}",
              file=sys.stderr)

    res = run_experiment(truth, args.fractions, args.splits, methods, args.seed, dataset,
                         progress=progress)
    write_summary_tsv(res, args.out, timing=not args.no_timing)
    return 0


COMMANDS = {"inject": cmd_inject, "train": cmd_train, "impute": cmd_impute, "run": cmd_run,
            "evaluate": cmd_evaluate, "experiment": cmd_experiment}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = _apply_config(parser, argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
