"""Static report figures written next to the CSV/JSON outputs."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "svg.hashsalt": "malt",
}


def _figure(width=5.0, height=3.2):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def _save(fig, path):
    # no timestamps or version strings, so reruns are byte-identical
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_rank_histogram(by_method, path):
    """Grouped bars of successful attacks per target rank, one group per method."""
    fig, ax = _figure()
    names = list(by_method)
    n_ranks = max(len(v) for v in by_method.values())
    width = 0.8 / max(1, len(names))
    ranks = np.arange(1, n_ranks + 1)
    for j, name in enumerate(names):
        counts = list(by_method[name]) + [0] * (n_ranks - len(by_method[name]))
        ax.bar(ranks + (j - (len(names) - 1) / 2) * width, counts, width, label=name)
    ax.set_xticks(ranks)
    ax.set_xlabel("target rank in plan")
    ax.set_ylabel("successful attacks")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_linearity_stats(stats, path, title=""):
    fig, ax = _figure()
    steps = np.arange(1, len(stats.alpha_mean) + 1)
    ax.plot(steps, stats.alpha_mean, label="alpha")
    ax.fill_between(steps, stats.alpha_mean - stats.alpha_std, stats.alpha_mean + stats.alpha_std, alpha=0.25)
    part_steps = steps[: len(stats.alpha_part_mean)]
    ax.plot(part_steps, stats.alpha_part_mean, label="alpha_part")
    ax.fill_between(
        part_steps,
        stats.alpha_part_mean - stats.alpha_part_std,
        stats.alpha_part_mean + stats.alpha_part_std,
        alpha=0.25,
    )
    ax.set_xlabel("step i")
    ax.set_ylabel("normalized gradient change")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    _save(fig, path)


def plot_logit_trace(trace, path, classes=None):
    """Actual (solid) and first-order (dashed) logits along the probe path."""
    fig, ax = _figure()
    steps = np.arange(1, trace.logits_actual.shape[0] + 1)
    k = trace.logits_actual.shape[1]
    if classes is None:
        top = np.argsort(-trace.logits_actual[0], kind="stable")[: min(k, 5)]
        classes = sorted(int(c) for c in top)
    for j, c in enumerate(classes):
        color = f"C{j % 10}"
        ax.plot(steps, trace.logits_actual[:, c], color=color, label=f"class {c}")
        ax.plot(steps, trace.logits_linear[:, c], color=color, linestyle="--")
    ax.set_xlabel("step i")
    ax.set_ylabel("logit (dashed: linear approx.)")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_theory_trend(trend, path):
    fig, ax = _figure()
    d = [row["d"] for row in trend]
    mean = np.array([row["mean_ratio"] for row in trend])
    std = np.array([row["std_ratio"] for row in trend])
    ax.errorbar(d, mean, yerr=std, marker="o", capsize=3)
    ax.set_xscale("log", base=2)
    ax.set_xticks(d)
    ax.set_xticklabels([str(v) for v in d])
    ax.set_xlabel("input dimension d")
    ax.set_ylabel("sup gradient change / gradient norm")
    _save(fig, path)
