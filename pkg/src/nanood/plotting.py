"""Static SVG charts of the per-checkpoint trend tables.

Output is byte-stable: a fixed hash salt for element ids and no date
metadata.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "nanood", "svg.fonttype": "none", "font.size": 9,
       "axes.grid": True, "grid.alpha": 0.3}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": "nanood"})
    plt.close(fig)
    return path


def line_chart(path, x, series, xlabel, ylabel, title=""):
    """``series`` maps a legend label to y values aligned with ``x``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for label, ys in series.items():
            ax.plot(x, ys, marker="o", markersize=2.5, linewidth=1.2, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def scatter_chart(path, x, y, xlabel, ylabel, title=""):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.4))
        ax.scatter(x, y, s=12)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def trend_plots(rows, out_dir, ood_names):
    """Render the standard chart set from trend rows (dicts keyed by column)."""
    out_dir = Path(out_dir)
    if not rows:
        return []
    epochs = [r["checkpoint_epoch"] for r in rows]
    paths = []
    hidden_cols = {"hidden accuracy": "hidden_accuracy",
                   "sign difference / d": "sign_diff_frac",
                   "approx. error (target)": "err_target",
                   "approx. error (non-target)": "err_nontarget"}
    series = {k: [r[c] for r in rows] for k, c in hidden_cols.items() if rows[0].get(c) is not None}
    if series:
        paths.append(line_chart(out_dir / "hidden_classifier.svg", epochs, series, "epoch",
                                "value", "last-layer hidden classifier"))
    det = {}
    for name in ood_names:
        det[f"l1 train / {name}"] = [r[f"l1_train_auroc:{name}"] for r in rows]
        det[f"nan train / {name}"] = [r[f"nan_train_auroc:{name}"] for r in rows]
    paths.append(line_chart(out_dir / "detection.svg", epochs, det, "epoch", "AUROC",
                            "norm-based detection over training"))
    ent = [r["mean_activation_entropy"] for r in rows]
    paths.append(line_chart(out_dir / "entropy.svg", epochs, {"mean entropy": ent}, "epoch",
                            "activation entropy (nats)"))
    key = f"l1_train_auroc:{ood_names[0]}"
    paths.append(scatter_chart(out_dir / "entropy_vs_auroc.svg", ent, [r[key] for r in rows],
                               "activation entropy (nats)", f"l1 AUROC vs {ood_names[0]}"))
    return paths
