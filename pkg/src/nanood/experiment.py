"""End-to-end runs: generate, train with checkpoints, diagnose, score, report, plot."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, OodSpec
from .data import Dataset, gen_blobs, gen_ood, load_csv, split, with_role
from .errors import NanoodError
from .evaluate import EvalReport, build_report
from .hidden import hidden_diagnostics
from .metrics import activation_entropy, auroc, mean_sparsity, spearman
from .net import forward, save_model
from .numcore import lp_norm, make_rng
from .scores import build_bank, nan_score, write_scores_csv
from .train import LabelScheme, assign_labels, init_model, train, write_history_csv


@dataclass
class Datasets:
    id_train: Dataset          # ground-truth labels
    id_test: Dataset
    labeled_train: Dataset     # labels under the training scheme
    ood: list


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    datasets: Datasets
    model: object
    history: list
    trend: list
    report: EvalReport
    run_dir: Path | None = None
    checkpoints: list = field(default_factory=list)


class _Stage:
    """Label any library error raised inside the block with the stage name."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, NanoodError) and not hasattr(exc, "stage"):
            exc.stage = self.name
        return False


def make_ood(spec: OodSpec, reference: Dataset, seed):
    if spec.kind == "csv":
        return with_role(load_csv(spec.csv, role="ood", name=spec.label), "ood")
    rng = make_rng(seed, "ood", spec.label)
    return gen_ood(spec.kind, reference, spec.n, rng, variance_factor=spec.variance_factor,
                   shift=spec.shift, box_scale=spec.box_scale, name=spec.label)


def prepare_data(cfg: ExperimentConfig) -> Datasets:
    d = cfg.data
    if d.generator == "blobs":
        full = gen_blobs(d.K, d.d, d.n_per_class, d.spread, d.separation,
                         make_rng(cfg.seed, "data", "blobs"))
        id_train, id_test = split(full, make_rng(cfg.seed, "data", "split"), d.train_fraction)
    else:
        full = load_csv(d.train_csv, role="id")
        if d.test_csv:
            id_train = with_role(full, "id_train")
            id_test = with_role(load_csv(d.test_csv, role="id"), "id_test")
        else:
            id_train, id_test = split(full, make_rng(cfg.seed, "data", "split"),
                                      d.train_fraction)
        if not d.labeled:
            id_train, id_test = replace(id_train, labels=None), replace(id_test, labels=None)
    labeled = assign_labels(id_train, cfg.train.scheme, make_rng(cfg.seed, "labels"))
    oods = [make_ood(s, id_train, cfg.seed) for s in cfg.eval.ood_sets]
    return Datasets(id_train, id_test, labeled, oods)


def checkpoint_row(model, ds: Datasets, epoch):
    """Per-checkpoint trend statistics on the train fold (and the test fold for the gap)."""
    a_tr = forward(model, ds.id_train.features).last_hidden
    a_te = forward(model, ds.id_test.features).last_hidden
    hd = hidden_diagnostics(model, ds.labeled_train.features, ds.labeled_train.labels)
    row = {"checkpoint_epoch": epoch, "layer": hd.layer,
           "hidden_accuracy": hd.hidden_accuracy,
           "entropy": hd.mean_prediction_entropy,
           "sign_diff": hd.mean_sign_difference_target,
           "err_target": hd.mean_normalized_error_target,
           "err_nontarget": hd.mean_normalized_error_nontarget,
           "sign_diff_frac": hd.mean_sign_difference_target / model.dims[-1],
           "mean_activation_entropy": activation_entropy(a_tr)[1],
           "mean_sparsity": mean_sparsity(a_tr)}
    l1_tr, l1_te = lp_norm(a_tr, 1), lp_norm(a_te, 1)
    nan_tr, nan_te = nan_score(a_tr), nan_score(a_te)
    for o in ds.ood:
        a_o = forward(model, o.features).last_hidden
        l1_o, nan_o = lp_norm(a_o, 1), nan_score(a_o)
        row[f"l1_train_auroc:{o.name}"] = auroc(l1_tr, l1_o)
        row[f"l1_test_auroc:{o.name}"] = auroc(l1_te, l1_o)
        row[f"nan_train_auroc:{o.name}"] = auroc(nan_tr, nan_o)
        row[f"nan_test_auroc:{o.name}"] = auroc(nan_te, nan_o)
    return row


def write_trend_csv(rows, path):
    cols = list(rows[0])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], int) else repr(float(r[c])) for c in cols])


def read_trend_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    ints = ("checkpoint_epoch", "layer")
    return [{k: (int(v) if k in ints else float(v)) for k, v in r.items()} for r in rows]


def _finite(x):
    return x if x is None or math.isfinite(x) else None


def run_experiment(cfg: ExperimentConfig, out_root=None, threads=1, write=True,
                   keep_checkpoints=False) -> ExperimentResult:
    """Run ``cfg`` end to end. With ``write`` the run directory is
    ``out_root/run_id`` and holds every artifact."""
    with _Stage("data"):
        ds = prepare_data(cfg)
    with _Stage("train"):
        tc = cfg.train_config()
        m = cfg.model
        model = init_model(ds.labeled_train, tc, list(m.hidden_dims), m.activation, m.bias,
                           m.temperature, m.embed_dim, m.input_norm)
        trend = []
        kept = []

        def on_checkpoint(epoch, mdl):
            trend.append(checkpoint_row(mdl, ds, epoch))
            if keep_checkpoints:
                kept.append((epoch, mdl))

        result = train(model, ds.labeled_train, tc, on_checkpoint=on_checkpoint)
        model = result.model
    with _Stage("score"):
        scheme = LabelScheme.parse(cfg.train.scheme)
        s = cfg.scores
        bank_labels = ds.labeled_train.labels if scheme is LabelScheme.S else None
        bank = build_bank(model, ds.id_train.features, bank_labels, clusters=s.ssd_clusters,
                          residual_dim=s.residual_dim, react_percentile=s.react_percentile,
                          shrinkage=s.shrinkage, seed=cfg.seed)
    with _Stage("eval"):
        test_labels = ds.id_test.labels if scheme is LabelScheme.S else None
        report = build_report(model, ds.id_train, ds.id_test, ds.ood, s.kinds, bank,
                              run_id=cfg.run_id, seed=cfg.seed, config_digest=cfg.digest(),
                              test_labels=test_labels, threads=threads)
        ents = [r["mean_activation_entropy"] for r in trend]
        key = f"l1_train_auroc:{cfg.eval.trend_ood}"
        report.diagnostics.update(
            scheme=scheme.value,
            trend_ood=cfg.eval.trend_ood,
            num_classes=model.num_classes,
            final_train_accuracy=result.history[-1].train_acc,
            final_train_loss=result.history[-1].loss,
            initial=_clean(trend[0]),
            final=_clean(trend[-1]),
            entropy_auroc_spearman=spearman(ents, [r[key] for r in trend])
            if len(trend) >= 3 else None,
        )
        report.diagnostics = _clean(report.diagnostics)

    res = ExperimentResult(cfg, ds, model, result.history, trend, report,
                           checkpoints=kept)
    if write:
        with _Stage("write"):
            res.run_dir = write_run(res, out_root if out_root is not None
                                    else cfg.output.directory)
    return res


def _clean(obj):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (float, np.floating)):
        return _finite(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_run(res: ExperimentResult, out_root) -> Path:
    cfg = res.config
    run_dir = Path(out_root) / cfg.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(cfg.to_yaml())
    (run_dir / "config_digest.txt").write_text(cfg.digest() + "\n")
    fmts = set(cfg.output.formats)
    if "json" in fmts:
        save_model(res.model, run_dir / "model.json")
        (run_dir / "report.json").write_text(res.report.to_json())
    if "csv" in fmts:
        write_history_csv(res.history, run_dir / "history.csv")
        write_trend_csv(res.trend, run_dir / "diagnostics.csv")
        tables = res.report.score_tables
        blocks = [(False, tables["id_test"])] + [(True, tables[o.name]) for o in res.datasets.ood]
        write_scores_csv(run_dir / "scores.csv", blocks)
    if "svg" in fmts:
        from .plotting import trend_plots
        trend_plots(res.trend, run_dir / "plots", [o.name for o in res.datasets.ood])
    return run_dir


def load_report(run_dir) -> EvalReport:
    return EvalReport.from_json(Path(run_dir, "report.json").read_text())


def report_table(report: EvalReport):
    rows = [["score", "ood_set", "auroc", "fpr95", "train_auroc", "test_auroc"]]
    for r in report.scores:
        rows.append([r.name, r.ood_set, f"{r.auroc:.4f}", f"{r.fpr95:.4f}",
                     f"{r.train_auroc:.4f}", f"{r.test_auroc:.4f}"])
    return rows


def dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=lambda o: np.asarray(o).tolist())
