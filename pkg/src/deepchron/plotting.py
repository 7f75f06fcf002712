"""ROC figures. Square axes, chance diagonal, one step curve per method."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed salt and no timestamp so repeated runs write identical files
plt.rcParams["svg.hashsalt"] = "deepchron"
plt.rcParams["font.size"] = 9
plt.rcParams["axes.spines.top"] = False
plt.rcParams["axes.spines.right"] = False

FIG_INCHES = 6.0  # 600 px at 100 dpi


def _new_axes():
    fig, ax = plt.subplots(figsize=(FIG_INCHES, FIG_INCHES), dpi=100)
    ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.set_aspect("equal")
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    return fig, ax


def _save(fig, path: Path) -> list[Path]:
    path = Path(path)
    written = []
    for suffix in (".svg", ".png"):
        out = path.with_suffix(suffix)
        fig.savefig(out, metadata={"Date": None} if suffix == ".svg" else {"Software": None})
        written.append(out)
    plt.close(fig)
    return written


def roc_figure(curves: dict[str, tuple[list, float]], path) -> list[Path]:
    """Draw ``{label: (points, auc)}``; ``points`` are (fpr, tpr, threshold) triples.

    Writes ``path`` with .svg and .png suffixes and returns both paths.
    """
    fig, ax = _new_axes()
    for label, (points, auc) in curves.items():
        fpr = [p[0] for p in points]
        tpr = [p[1] for p in points]
        ax.plot(fpr, tpr, lw=1.4, label=f"{label} (AUC {auc:.3f})")
    ax.legend(loc="lower right", frameon=False)
    return _save(fig, path)
