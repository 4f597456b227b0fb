"""Optional PNG rendering of a report's voltage profile and slack ranking."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .analysis import SolveReport  # noqa: E402


def render_figures(report: SolveReport, stem: str | Path, top: int = 20) -> list[Path]:
    """Write ``<stem>_voltages.png`` and, when slacks exist, ``<stem>_slacks.png``."""
    stem = Path(stem)
    out = []
    fig, ax = plt.subplots(figsize=(8, 3.5))
    buses = sorted({b for b, _ in report.buses})
    pos = {b: i for i, b in enumerate(buses)}
    for phase in ("a", "b", "c"):
        pts = [(pos[b], m) for (b, ph), m in zip(report.buses, report.magnitude) if ph == phase]
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, "o-", ms=3, label=f"phase {phase}")
    ax.set_xticks(range(len(buses)))
    ax.set_xticklabels([str(b) for b in buses], rotation=90 if len(buses) > 20 else 0, fontsize=7)
    ax.set_xlabel("bus")
    ax.set_ylabel("|v| (p.u.)")
    ax.set_title(f"{report.case}: voltage magnitudes ({report.status})")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = stem.with_name(stem.name + "_voltages.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    out.append(path)
    shown = [(c, s) for c, s in report.slacks[:top] if s > 0]
    if shown:
        fig, ax = plt.subplots(figsize=(8, 0.3 * len(shown) + 1.2))
        labels, values = zip(*reversed(shown))
        ax.barh(range(len(values)), values)
        ax.set_yticks(range(len(values)))
        ax.set_yticklabels(labels, fontsize=7)
        ax.set_xlabel("slack (p.u.)")
        ax.set_title(f"{report.case}: largest constraint slacks")
        fig.tight_layout()
        path = stem.with_name(stem.name + "_slacks.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        out.append(path)
    return out
