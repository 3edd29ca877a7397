"""Optional matplotlib rendering of simulation outputs.

The CLI always emits the delimited plot data; when `--figure PATH` is
given the same columns are additionally rendered to an image file.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_figure(experiment: str, columns, rows, summary, path) -> None:
    data = {c: [row[i] for row in rows] for i, c in enumerate(columns)}
    fig, ax = plt.subplots(figsize=(6, 4))
    if experiment in ("type1-curve", "power-curve"):
        ylab = "type-I error" if experiment == "type1-curve" else "power"
        ax.errorbar(data["rho"], data["empirical"],
                    yerr=[3 * s for s in data["std_err"]],
                    fmt="o-", capsize=3, label="empirical")
        ax.plot(data["rho"], data["asymptotic"], "s--", label="asymptotic")
        ax.set_xlabel("correlation rho")
        ax.set_ylabel(ylab)
        ax.legend()
    elif experiment == "coma-curve":
        ax.plot(data["set_size"], data["mean_coma"], "o-")
        ax.set_xlabel("set size")
        ax.set_ylabel("mean cost of multiplicity adjustment")
        ax.set_yscale("log")
    else:  # fwer-exp / fdp-exp: distribution of selected sizes
        ax.hist(data["selected_size"], bins=30)
        ax.set_xlabel("selected set size")
        ax.set_ylabel("trials")
    title_bits = [f"{k}={summary[k]}" for k in ("m", "r", "alpha")
                  if k in summary]
    ax.set_title(f"{experiment} ({', '.join(title_bits)})", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
