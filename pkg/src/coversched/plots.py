"""Figure rendering for evaluation reports and training logs.

Uses the Agg backend so figures render headlessly to files next to the
CSV/JSON outputs they illustrate.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .harness import EvalReport


def save_eval_boxplot(report: EvalReport, path: str) -> str:
    """Boxplots of costs and gap percentages for one evaluation run."""
    ok = report.ok_records
    fig, (ax_cost, ax_gap) = plt.subplots(1, 2, figsize=(9, 4))

    ax_cost.boxplot([[r.model_cost for r in ok], [r.ref_cost for r in ok]])
    ax_cost.set_xticks([1, 2])
    ax_cost.set_xticklabels(["model", report.metadata.get("reference", "reference")])
    ax_cost.set_ylabel("tour cost")
    ax_cost.set_title("cost per map")

    ax_gap.boxplot([[r.excess_pct for r in ok]])
    ax_gap.set_xticks([1])
    ax_gap.set_xticklabels(["excess %"])
    ax_gap.axhline(0.0, color="grey", linewidth=0.8, linestyle="--")
    ax_gap.set_ylabel("(model/ref - 1) x 100")
    ax_gap.set_title("gap vs reference")

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_training_curves(metrics: list[dict], path: str, window: int = 100) -> str:
    """Mean batch cost (with moving average) and gradient norm per step."""
    steps = [row["step"] for row in metrics]
    costs = [row["mean_cost"] for row in metrics]
    norms = [row["grad_norm"] for row in metrics]

    fig, (ax_cost, ax_norm) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax_cost.plot(steps, costs, linewidth=0.7, alpha=0.5, label="mean cost")
    if len(costs) >= window:
        moving = [
            sum(costs[i - window + 1 : i + 1]) / window
            for i in range(window - 1, len(costs))
        ]
        ax_cost.plot(steps[window - 1 :], moving, linewidth=1.5,
                     label=f"{window}-step average")
    ax_cost.set_ylabel("batch mean cost")
    ax_cost.legend(loc="upper right")

    ax_norm.plot(steps, norms, linewidth=0.7)
    ax_norm.set_ylabel("grad norm (pre-clip)")
    ax_norm.set_xlabel("step")

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
