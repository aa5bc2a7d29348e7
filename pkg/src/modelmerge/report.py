"""Layer-weight report output: tab-separated table plus rendered figures.

The table has one row per tensor (name, w, aligned, assignment_cost). A
companion PNG with the weight profile and alignment costs is written next
to the table, sharing its basename.
"""

from __future__ import annotations

from pathlib import Path

COLUMNS = ("name", "w", "aligned", "assignment_cost")


def report_lines(reports) -> list[str]:
    lines = ["\t".join(COLUMNS)]
    for row in reports:
        cost = "" if row.assignment_cost is None else repr(row.assignment_cost)
        lines.append(f"{row.name}\t{row.w!r}\t{str(row.aligned).lower()}\t{cost}")
    return lines


def figure_path_for(report_path) -> Path:
    report_path = Path(report_path)
    if report_path.suffix == ".png":
        return report_path.with_suffix(".figure.png")
    return report_path.with_suffix(".png")


def write_report(reports, path) -> Path:
    """Write the delimited table and render the companion figure. Returns the
    figure path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(report_lines(reports)) + "\n", "utf-8")
    return render_figure(reports, figure_path_for(path))


def render_figure(reports, fig_path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_path = Path(fig_path)
    rows = list(reports)
    idx = range(len(rows))
    weights = [row.w for row in rows]
    colors = ["#d62728" if row.aligned else "#1f77b4" for row in rows]

    fig, (ax_w, ax_c) = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    ax_w.bar(idx, weights, color=colors, width=0.8)
    ax_w.set_ylabel("interpolation weight w")
    ax_w.set_ylim(0.0, 1.05)
    ax_w.set_title("per-tensor similarity weights (red = head-aligned)")

    aligned_idx = [i for i, row in enumerate(rows) if row.aligned]
    aligned_cost = [rows[i].assignment_cost for i in aligned_idx]
    ax_c.bar(aligned_idx, aligned_cost, color="#d62728", width=0.8)
    ax_c.set_ylabel("assignment cost")
    ax_c.set_xlabel("tensor index (lexicographic)")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return fig_path
