"""Command-line entry point.

Exit codes: 0 ok, 2 configuration or input error, 3 numerical failure,
4 verification failure. NANOOD_OUT and NANOOD_THREADS supply defaults for
--out and --threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config, with_seed
from .data import save_csv, load_csv, write_manifest
from .errors import ConfigError, InvalidParameter, NanoodError, NumericalFailure, ParseError
from .errors import VerificationFailure

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    return cfg


def _out(args, default):
    return Path(args.out or os.environ.get("NANOOD_OUT") or default)


def _threads(args):
    if args.threads is not None:
        return args.threads
    try:
        return int(os.environ.get("NANOOD_THREADS", "1"))
    except ValueError as exc:
        raise ConfigError("NANOOD_THREADS must be an integer", "NANOOD_THREADS") from exc


def _kinds(text):
    return [k for k in (s.strip() for s in text.split(",")) if k]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    from .experiment import prepare_data
    cfg = _config(args)
    out = _out(args, "data")
    out.mkdir(parents=True, exist_ok=True)
    ds = prepare_data(cfg)
    params = {k: v for k, v in cfg.to_dict()["data"].items()}
    for d in (ds.id_train, ds.id_test):
        save_csv(d, out / f"{d.role}.csv")
        write_manifest(out / f"{d.role}.json", d, cfg.seed, kind=cfg.data.generator,
                       params=params)
    for o in ds.ood:
        save_csv(o, out / f"ood_{o.name}.csv")
        write_manifest(out / f"ood_{o.name}.json", o, cfg.seed)
    print(f"wrote {2 + len(ds.ood)} datasets to {out}")
    return EXIT_OK


def cmd_train(args):
    from .experiment import prepare_data
    from .net import save_model
    from .train import init_model, train, write_history_csv
    cfg = _config(args)
    out = _out(args, "model")
    out.mkdir(parents=True, exist_ok=True)
    if args.data:
        train_ds = load_csv(Path(args.data), role="id_train")
        from .train import assign_labels
        from .numcore import make_rng
        labeled = assign_labels(train_ds, cfg.train.scheme, make_rng(cfg.seed, "labels"))
    else:
        labeled = prepare_data(cfg).labeled_train
    tc = cfg.train_config(checkpoint_every=0)
    m = cfg.model
    model = init_model(labeled, tc, list(m.hidden_dims), m.activation, m.bias, m.temperature,
                       m.embed_dim, m.input_norm)
    result = train(model, labeled, tc)
    save_model(result.model, out / "model.json")
    write_history_csv(result.history, out / "history.csv")
    last = result.history[-1]
    print(f"epoch {last.epoch} loss {last.loss:.6g} train_acc {last.train_acc:.4f}")
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_verification
    seed = 0 if args.seed is None else args.seed
    rep = run_verification(seed=seed, n_samples=args.samples, inject_fault=args.inject_fault)
    doc = rep.as_dict()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"max identity residual {rep.max_identity_residual:.3e}; "
          f"max bound excess {rep.max_bound_violation:.3e}")
    if not rep.ok:
        for depth, act, bias in rep.failing():
            print(f"FAIL depth={depth} activation={act} bias={bias}", file=sys.stderr)
        raise VerificationFailure(f"{len(rep.failing())} case(s) failed")
    print("verification passed")
    return EXIT_OK


def cmd_score(args):
    from .net import load_model
    from .scores import ScoreKind, build_bank, score_many, write_scores_csv
    model = load_model(args.model)
    data = load_csv(args.data)
    kinds = [ScoreKind.parse(k) for k in _kinds(args.kinds)]
    bank = None
    if args.bank:
        bank_ds = load_csv(args.bank)
        bank = build_bank(model, bank_ds.features, bank_ds.labels)
    else:
        for k in kinds:
            if k.needs_bank:
                raise InvalidParameter(f"score {k.label!r} needs --bank")
    table = score_many(model, data.features, kinds, bank)
    out = _out(args, "scores.csv")
    write_scores_csv(out, [(args.ood, table)])
    print(f"wrote {len(data)} rows to {out}")
    return EXIT_OK


def cmd_eval(args):
    from .evaluate import build_report
    from .net import load_model
    from .scores import ScoreKind, build_bank
    from .data import with_role
    model = load_model(args.model)
    tr = with_role(load_csv(args.train), "id_train")
    te = with_role(load_csv(args.test), "id_test")
    oods = [with_role(load_csv(p), "ood") for p in args.ood]
    kinds = [ScoreKind.parse(k) for k in _kinds(args.kinds)]
    bank = build_bank(model, tr.features, tr.labels) if any(k.needs_bank for k in kinds) else None
    report = build_report(model, tr, te, oods, kinds, bank, run_id=args.run_id,
                          seed=0 if args.seed is None else args.seed, threads=_threads(args))
    out = _out(args, "report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    _print_rows(report)
    return EXIT_OK


def cmd_experiment(args):
    from .experiment import run_experiment
    cfg = _config(args)
    res = run_experiment(cfg, out_root=_out(args, cfg.output.directory),
                         threads=_threads(args))
    print(f"run {cfg.run_id} -> {res.run_dir}")
    _print_rows(res.report)
    return EXIT_OK


def cmd_report(args):
    from .experiment import load_report, read_trend_csv
    from .plotting import trend_plots
    run = Path(args.run)
    if not (run / "report.json").exists():
        raise InvalidParameter(f"{run} is not a run directory (no report.json)")
    report = load_report(run)
    trend_path = run / "diagnostics.csv"
    if trend_path.exists():
        rows = read_trend_csv(trend_path)
        names = sorted({k.split(":", 1)[1] for k in rows[0] if k.startswith("l1_train_auroc:")})
        names.sort(key=lambda n: n != report.diagnostics.get("trend_ood", ""))
        paths = trend_plots(rows, _out(args, run / "plots"), names)
        for p in paths:
            print(f"# plot {p}", file=sys.stderr)
    _print_rows(report, delimiter="\t" if args.format == "tsv" else ",")
    return EXIT_OK


def _print_rows(report, delimiter=","):
    from .experiment import report_table
    w = csv.writer(sys.stdout, delimiter=delimiter, lineterminator="\n")
    for row in report_table(report):
        w.writerow(row)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--config", default=None, help="experiment YAML")
    common.add_argument("--out", default=None, help="output path or directory")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default 1)")

    p = argparse.ArgumentParser(prog="nanood", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="write ID/OOD CSVs and manifests")
    t = sub.add_parser("train", parents=[common], help="train a model from a config")
    t.add_argument("--data", default=None, help="training CSV (default: config generator)")
    v = sub.add_parser("verify", parents=[common], help="identity and bound checks")
    v.add_argument("--samples", type=int, default=100)
    v.add_argument("--inject-fault", default=None, metavar="ACTIVATION",
                   help="use a wrong gate for this activation kind")
    s = sub.add_parser("score", parents=[common], help="score a CSV dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--kinds", default="nan")
    s.add_argument("--bank", default=None, help="ID bank CSV for distance scores")
    s.add_argument("--ood", action="store_true", help="mark rows as OOD in the output")
    e = sub.add_parser("eval", parents=[common], help="AUROC/FPR95 report from CSVs")
    e.add_argument("--model", required=True)
    e.add_argument("--train", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--ood", required=True, action="append")
    e.add_argument("--kinds", default="msp,energy,l1,nan")
    e.add_argument("--run-id", default="eval")
    sub.add_parser("experiment", parents=[common], help="run a full experiment config")
    r = sub.add_parser("report", parents=[common], help="re-render plots and print a run table")
    r.add_argument("run", help="run directory")
    r.add_argument("--format", choices=("csv", "tsv"), default="csv")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "verify": cmd_verify,
            "score": cmd_score, "eval": cmd_eval, "experiment": cmd_experiment,
            "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except VerificationFailure as exc:
        print(f"error: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except NumericalFailure as exc:
        print(f"error{_stage(exc)}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, InvalidParameter, ParseError) as exc:
        print(f"error{_stage(exc)}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NanoodError as exc:
        print(f"error{_stage(exc)}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _stage(exc):
    stage = getattr(exc, "stage", None)
    return f" [{stage}]" if stage else ""


if __name__ == "__main__":
    sys.exit(main())
