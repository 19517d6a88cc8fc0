"""Figure rendering for report outputs.

Each report CSV gets a companion PNG rendered with the Agg backend at fixed
style parameters, so reruns in the same environment are byte-identical (the
determinism the CLI promises covers these files too).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402

from .backtest import BacktestReport  # noqa: E402
from .evaluation import ThresholdCurve  # noqa: E402

_STYLE = {
    "figure.figsize": (7.0, 4.2),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "pumplab",
}


def _save(fig, path: Path) -> None:
    fig.savefig(path, metadata={"Software": "pumplab"})
    plt.close(fig)


def plot_threshold_curve(curve: ThresholdCurve, path: Path) -> None:
    """Precision / recall / F1 against the decision threshold, AUC in the title."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ts = [p.threshold for p in curve.points]
        ax.plot([t for t, p in zip(ts, curve.points) if p.precision is not None],
                [p.precision for p in curve.points if p.precision is not None],
                label="precision")
        ax.plot(ts, [p.recall for p in curve.points], label="recall")
        ax.plot([t for t, p in zip(ts, curve.points) if p.f1 is not None],
                [p.f1 for p in curve.points if p.f1 is not None],
                label="F1")
        ax.set_xlabel("threshold")
        ax.set_ylabel("metric")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(f"threshold sweep (ROC AUC = {curve.auc:.4f})")
        ax.legend()
        _save(fig, path)


def plot_feature_weights(names, values, path: Path, title: str) -> None:
    """Horizontal bars of per-feature importances or coefficients."""
    with plt.rc_context(_STYLE):
        order = np.argsort(np.abs(np.asarray(values)))[::-1][:20][::-1]
        fig, ax = plt.subplots(figsize=(7.0, 6.0))
        ax.barh(range(len(order)), [values[i] for i in order])
        ax.set_yticks(range(len(order)))
        ax.set_yticklabels([names[i] for i in order], fontsize=7)
        ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)


def plot_backtest(report: BacktestReport, path: Path) -> None:
    """Invested vs gained per position in report order."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        n = len(report.positions)
        if n:
            x = np.arange(n)
            ax.bar(x - 0.2, [float(p.invested) for p in report.positions],
                   width=0.4, label="invested (BTC)")
            ax.bar(x + 0.2, [float(p.gained) for p in report.positions],
                   width=0.4, label="gained (BTC)")
            ax.set_xticks(x)
            ax.set_xticklabels([p.coin for p in report.positions],
                               fontsize=7, rotation=90)
            ret = report.return_ratio
            ax.set_title("backtest positions"
                         + ("" if ret is None else f" (return = {float(ret) * 100:.1f}%)"))
            ax.legend()
        else:
            ax.set_title("backtest: no trades")
        fig.tight_layout()
        _save(fig, path)
