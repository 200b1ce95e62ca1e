"""SVG figures drawn from a :class:`~lqm.io.TraceSet` only."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import TraceSet  # noqa: E402


def plot_link(trace: TraceSet, link_id: str, path: str | Path) -> Path:
    """Three stacked panels for one link: cumulative curves on top, queue length and rates below."""
    t = np.arange(trace.steps) * trace.dt
    fig, (ax_n, ax_q, ax_r) = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    for q, style in (("N_in", "-"), ("N_qu", "--"), ("N_out", ":")):
        ax_n.plot(t, trace.series(link_id, q), style, label=q)
    ax_n.set_ylabel("vehicles")
    ax_n.legend(loc="upper left")
    ax_n.set_title(f"link {link_id}")

    ax_q.plot(t, trace.series(link_id, "L_q"), color="tab:red")
    ax_q.set_ylabel("queue length (m)")

    ax_r.step(t, trace.series(link_id, "q_in"), where="post", label="q_in")
    ax_r.step(t, trace.series(link_id, "q_out"), where="post", label="q_out")
    ax_r.set_ylabel("rate (veh/s)")
    ax_r.set_xlabel("time (s)")
    ax_r.legend(loc="upper left")

    fig.tight_layout()
    path = Path(path)
    with plt.rc_context({"svg.hashsalt": "lqm", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_trace(trace: TraceSet, out_dir: str | Path, links=None) -> list[Path]:
    """One SVG per link (all links unless ``links`` is given)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = trace.link_ids if links is None else links
    return [plot_link(trace, lid, out / f"link_{lid}.svg") for lid in ids]
