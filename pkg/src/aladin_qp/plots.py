"""Figure rendering for solver traces and closed-loop runs.

Figures are written straight to files (Agg backend); the format follows the
file extension.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def render_convergence(trace, path) -> None:
    """Residual profile of one solve; curvature-update iterations are marked."""
    iters = np.array([rec.iteration for rec in trace])
    res = np.array([max(rec.primal_res, rec.dual_res) for rec in trace])
    res = np.maximum(res, 1e-300)  # log scale needs positive values
    updated = np.array([rec.k_updated for rec in trace], dtype=bool)

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.semilogy(iters, res, color="tab:blue", lw=1.2, label="max residual")
    if np.any(updated):
        ax.semilogy(iters[updated], res[updated], "v", color="tab:red", ms=5,
                    label="K update")
    ax.set_xlabel("iteration")
    ax.set_ylabel("max(primal, dual) residual")
    ax.legend(loc="best")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_closed_loop(trace, path) -> None:
    """State norm and cumulative cost of one closed-loop run."""
    steps = np.arange(trace.steps)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.4, 5.6), sharex=True)
    ax1.semilogy(steps, np.maximum(trace.x_norms, 1e-300), color="tab:blue", lw=1.2)
    ax1.set_ylabel("state norm (Q-weighted)")
    ax1.grid(True, which="both", alpha=0.3)
    ax2.plot(steps, np.cumsum(trace.stage_costs), color="tab:orange", lw=1.2)
    ax2.set_xlabel("step")
    ax2.set_ylabel("accumulated cost")
    ax2.grid(True, alpha=0.3)
    if trace.unstable:
        ax1.set_title("closed loop flagged unstable")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
