"""Report figures: score histograms per condition and mean score against SNR."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden_mean = (np.sqrt(5) - 1.0) / 2.0
fig_width = 5.0

params = {
    "axes.labelsize": 10,
    "font.size": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": [fig_width, fig_width * golden_mean],
    "figure.dpi": 100,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
}

# PNG metadata otherwise embeds the matplotlib version string
_PNG_METADATA = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)


def plot_histogram(rows, path, title="Log-likelihood per condition"):
    """Overlaid step histograms from ``(condition, left, right, count)`` rows."""
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        conditions = list(dict.fromkeys(r[0] for r in rows))
        cmap = plt.get_cmap("viridis", max(len(conditions), 2))
        for k, label in enumerate(conditions):
            sub = [r for r in rows if r[0] == label]
            edges = [sub[0][1]] + [r[2] for r in sub]
            counts = [r[3] for r in sub]
            color = "black" if label == "clean" else cmap(k)
            ax.stairs(counts, edges, label=label, color=color, fill=False)
        ax.set_xlabel("log-likelihood per element [nats]")
        ax.set_ylabel("count")
        ax.set_title(title)
        ax.legend(frameon=False)
        _save(fig, path)


def plot_score_vs_snr(means, path):
    """Mean score per SNR condition; the clean mean is drawn as a horizontal line."""
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        snr = [(float(c[4:-2]), v) for c, v in means.items() if c.startswith("snr_")]
        if snr:
            x, y = zip(*sorted(snr))
            ax.plot(x, y, "o-", color="#2b8cbe", label="corrupted")
        if "clean" in means:
            ax.axhline(means["clean"], color="black", ls="--", label="clean")
        ax.set_xlabel("input SNR [dB]")
        ax.set_ylabel("mean log-likelihood per element")
        ax.legend(frameon=False)
        _save(fig, path)
