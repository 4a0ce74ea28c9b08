"""Evaluation reports: per-score, per-OOD-set detection metrics plus ID diagnostics."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .errors import InvalidParameter
from .metrics import accuracy, activation_entropy, auroc, fpr95, mean_sparsity
from .net import MlpModel, forward
from .scores import BankIndex, ScoreKind, score_many

REPORT_FORMAT = "nanood-report/1"


@dataclass
class ScoreResult:
    name: str
    ood_set: str
    auroc: float
    fpr95: float
    train_auroc: float
    test_auroc: float

    def __post_init__(self):
        for key in ("auroc", "fpr95", "train_auroc", "test_auroc"):
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise InvalidParameter(f"{key} must lie in [0, 1], got {v}")


@dataclass
class EvalReport:
    run_id: str
    seed: int
    config_digest: str
    scores: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def get(self, name, ood_set) -> ScoreResult:
        for r in self.scores:
            if r.name == name and r.ood_set == ood_set:
                return r
        raise KeyError((name, ood_set))

    def to_dict(self):
        return {"format": REPORT_FORMAT, "run_id": self.run_id, "seed": self.seed,
                "config_digest": self.config_digest,
                "scores": [asdict(r) for r in self.scores],
                "diagnostics": self.diagnostics}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != REPORT_FORMAT:
            raise InvalidParameter(f"not a {REPORT_FORMAT} document")
        return cls(doc["run_id"], doc["seed"], doc["config_digest"],
                   [ScoreResult(**r) for r in doc["scores"]], doc["diagnostics"])

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def id_diagnostics(model: MlpModel, id_train: Dataset, id_test: Dataset, test_labels=None):
    """Activation entropy and sparsity on the train fold, accuracy on the test fold."""
    a_train = forward(model, id_train.features).last_hidden
    diag = {
        "mean_activation_entropy": activation_entropy(a_train)[1],
        "mean_sparsity": mean_sparsity(a_train),
        "id_accuracy": None,
    }
    if test_labels is not None:
        diag["id_accuracy"] = accuracy(forward(model, id_test.features).logits, test_labels)
    return diag


def build_report(model: MlpModel, id_train: Dataset, id_test: Dataset, ood_sets,
                 score_kinds, bank: BankIndex | None = None, run_id="", seed=0,
                 config_digest="", test_labels=None, threads=1):
    """Score every dataset once and tabulate AUROC/FPR95 per (score, OOD set).

    ``auroc``/``fpr95``/``test_auroc`` use the ID test fold; ``train_auroc``
    uses the train fold. ``test_labels`` enables the ID accuracy field and
    should only be passed when the model's classes are the ground truth.
    """
    if not ood_sets:
        raise InvalidParameter("need at least one OOD set")
    names = [o.name for o in ood_sets]
    if len(set(names)) != len(names):
        raise InvalidParameter("OOD set names must be unique")
    kinds = [ScoreKind.parse(k) for k in score_kinds]
    datasets = [id_train, id_test, *ood_sets]

    def run(ds):
        return score_many(model, ds.features, kinds, bank)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            tables = list(pool.map(run, datasets))  # order preserved
    else:
        tables = [run(ds) for ds in datasets]
    s_train, s_test, s_oods = tables[0], tables[1], tables[2:]

    results = []
    for kind in kinds:
        label = kind.label
        for ood, s_ood in zip(ood_sets, s_oods):
            test_au = auroc(s_test[label], s_ood[label])
            results.append(ScoreResult(label, ood.name, test_au,
                                       fpr95(s_test[label], s_ood[label]),
                                       auroc(s_train[label], s_ood[label]), test_au))
    diag = id_diagnostics(model, id_train, id_test, test_labels)
    report = EvalReport(run_id, int(seed), config_digest, results, diag)
    report.score_tables = {"id_train": s_train, "id_test": s_test,
                           **{o.name: s for o, s in zip(ood_sets, s_oods)}}
    return report


def summary_rows(report: EvalReport):
    """Flat rows (name, ood_set, auroc, fpr95, train_auroc, test_auroc)."""
    return [[r.name, r.ood_set, r.auroc, r.fpr95, r.train_auroc, r.test_auroc]
            for r in report.scores]


def mean_auroc(report: EvalReport, name, ood_sets=None):
    rows = [r.auroc for r in report.scores
            if r.name == name and (ood_sets is None or r.ood_set in ood_sets)]
    if not rows:
        raise KeyError(name)
    return float(np.mean(rows))
