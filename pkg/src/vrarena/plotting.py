"""PNG figures next to the CSV outputs (non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def timeline_figure(result, path) -> None:
    """Per-GOP PSNR of every user with downtime GOPs marked."""
    users = list(dict.fromkeys(r.user for r in result.records))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for u in users:
        rs = [r for r in result.records if r.user == u]
        g = np.array([r.gop for r in rs])
        p = np.array([r.psnr_db for r in rs])
        line, = ax.plot(g, p, marker=".", lw=1, label=u)
        down = np.array([r.downtime for r in rs], dtype=bool)
        if down.any():
            ax.plot(g[down], p[down], "x", color=line.get_color(), ms=7)
    ax.set_xlabel("GOP")
    ax.set_ylabel("viewport PSNR [dB]")
    ax.set_title(f"{result.scenario}: {result.method}")
    if len(users) <= 8:
        ax.legend(fontsize=7, ncol=min(len(users), 4))
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def sweep_figure(rows, param: str, path, metrics=("psnr_db", "wspsnr_db")) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for m in metrics:
        sel = [r for r in rows if r["metric"] == m]
        if not sel:
            continue
        x = np.array([float(r["value"]) for r in sel])
        y = np.array([r["mean"] for r in sel])
        e = np.array([r["std"] for r in sel])
        ax.errorbar(x, y, yerr=e, marker="o", capsize=3, label=m)
    ax.set_xlabel(param)
    ax.set_ylabel("mean [dB]")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
