"""SVG plots of training curves and evaluation results."""

from __future__ import annotations

import io
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import atomic_write_text  # noqa: E402


def _save(fig, path: str) -> str:
    buf = io.StringIO()
    # fixed metadata keeps the SVG byte-stable across runs
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    atomic_write_text(path, buf.getvalue())
    return path


def _col(rows, key):
    return np.array([float(r[key]) for r in rows])


def plot_curves(rows, path: str) -> str:
    upd = _col(rows, "update")
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    axes[0].plot(upd, _col(rows, "mean_reward"))
    axes[0].set_ylabel("mean step reward")
    axes[1].plot(upd, _col(rows, "success_rate"), label="training (standing starts)")
    ev = _col(rows, "eval_success")
    m = np.isfinite(ev)
    axes[1].plot(upd[m], ev[m], "o-", label="evaluation")
    axes[1].set_ylabel("success rate")
    axes[1].set_ylim(-0.05, 1.05)
    axes[1].legend(loc="lower right")
    axes[2].fill_between(upd, _col(rows, "range_lo"), _col(rows, "range_hi"), alpha=0.4)
    axes[2].set_ylabel("command range [m]")
    axes[2].set_xlabel("update")
    fig.tight_layout()
    return _save(fig, path)


def plot_eval(rows, task: str | None, path: str) -> str:
    """Achieved vs commanded target, with the +-0.1 m success band."""
    target = _col(rows, "target")
    achieved = _col(rows, "achieved")
    ok = _col(rows, "success") > 0
    fig, ax = plt.subplots(figsize=(5.5, 5))
    lo, hi = float(np.min(target)), float(np.max(target))
    pad = 0.1
    xs = np.array([lo - pad, hi + pad])
    ax.plot(xs, xs, "k-", lw=1, label="ideal")
    ax.fill_between(xs, xs - 0.1, xs + 0.1, color="0.85", label="+-0.1 m")
    fin = np.isfinite(achieved)
    ax.scatter(target[fin & ok], achieved[fin & ok], s=14, label="success")
    ax.scatter(target[fin & ~ok], achieved[fin & ~ok], s=14, marker="x", label="miss")
    name = {"vertical": "apex height", "horizontal": "landing position"}.get(task or "", "outcome")
    ax.set_xlabel(f"commanded {name} [m]")
    ax.set_ylabel(f"achieved {name} [m]")
    rate = float(np.mean(ok)) if len(ok) else math.nan
    ax.set_title(f"success {rate:.0%} over {len(rows)} jumps")
    ax.legend(loc="upper left")
    fig.tight_layout()
    return _save(fig, path)
