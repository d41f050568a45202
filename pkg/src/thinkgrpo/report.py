"""Charts and a Markdown summary for finished runs and evaluation reports.

Charts are presentation only; the CSV and JSON files they are drawn from are
the canonical numbers.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ConfigError  # noqa: E402
from .trainer import (  # noqa: E402
    accuracy_rise_step,
    format_saturation_step,
    read_csv_rows,
)

plt.rcParams["svg.hashsalt"] = "thinkgrpo"
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def _floats(rows: Sequence[dict], key: str) -> list[float | None]:
    return [float(r[key]) if r.get(key) not in (None, "") else None for r in rows]


def dynamics_chart(rows: Sequence[dict], path: str | Path, title: str = "") -> None:
    steps = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for key in ("mean_reward", "r_tag", "r_format", "r_accuracy", "r_len"):
        vals = _floats(rows, key)
        if any(v is not None for v in vals):
            ax.plot(steps, [v if v is not None else float("nan") for v in vals], label=key, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("reward")
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, Path(path))


def heldout_chart(rows: Sequence[dict], path: str | Path, switch_step: int | None = None) -> None:
    steps = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, _floats(rows, "accuracy"), label="held-out accuracy", marker=".")
    ax.plot(steps, _floats(rows, "format_rate"), label="held-out format rate", linestyle="--")
    if switch_step is not None:
        ax.axvline(switch_step, color="grey", linewidth=0.8, label="stage switch")
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("step")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, Path(path))


def bins_chart(report: dict, path: str | Path) -> None:
    bins = report.get("length_bins", [])
    fig, ax = plt.subplots(figsize=(5, 3))
    labels = [f"Len{b['index']}" for b in bins]
    ax.bar(labels, [b["accuracy"] or 0.0 for b in bins])
    ax.set_ylim(0, 1)
    ax.set_ylabel("greedy accuracy")
    fig.tight_layout()
    _save(fig, Path(path))


def _fmt(v: str) -> str:
    return v if v == "" else f"{float(v):.3f}"


def render_run_report(run_dir: str | Path) -> list[Path]:
    """Write per-stage dynamics charts, a held-out chart and ``report.md``."""
    run = Path(run_dir)
    stage_files = sorted(run.glob("dynamics_stage*.csv"))
    if not stage_files:
        raise ConfigError(f"{run}: no dynamics_stage*.csv files to report on")
    written = []
    lines = ["# Training run report", ""]
    for f in stage_files:
        rows = read_csv_rows(f)
        svg = run / f.with_suffix(".svg").name
        dynamics_chart(rows, svg, title=f.stem.replace("_", " "))
        written.append(svg)
        lines.append(f"## {f.stem}: {len(rows)} steps")
        if rows:
            last = rows[-1]
            lines.append("")
            lines.append("| step | mean_reward | r_tag | r_format | r_accuracy | r_len |")
            lines.append("|---|---|---|---|---|---|")
            lines.append(
                f"| {last['step']} | {_fmt(last['mean_reward'])} | {_fmt(last['r_tag'])} | "
                f"{_fmt(last['r_format'])} | {_fmt(last['r_accuracy'])} | {_fmt(last['r_len'])} |"
            )
        lines.append("")
    switch = None
    log_path = run / "training_log.json"
    if log_path.exists():
        log = json.loads(log_path.read_text(encoding="utf-8"))
        if log.get("transitions"):
            switch = int(log["transitions"][0]["step"])
            lines.append(f"Stage switch at step {switch} ({log['transitions'][0]['reason']}).")
            lines.append("")
    groups = run / "format_groups.csv"
    sat = format_saturation_step(read_csv_rows(groups)) if groups.exists() else None
    heldout_path = run / "heldout_eval.csv"
    if heldout_path.exists():
        rows = read_csv_rows(heldout_path)
        if rows:
            svg = run / "heldout_eval.svg"
            heldout_chart(rows, svg, switch)
            written.append(svg)
            lines.append(
                f"Held-out accuracy {float(rows[0]['accuracy']):.3f} at step {rows[0]['step']}, "
                f"{float(rows[-1]['accuracy']):.3f} at step {rows[-1]['step']}; "
                f"reaches 80% of its final value at step {accuracy_rise_step(rows)}."
            )
    if sat is not None:
        lines.append(f"Trailing-window format reward first reaches 0.95 at step {sat}.")
    lines.append("")
    md = run / "report.md"
    md.write_text("\n".join(lines), encoding="utf-8")
    written.append(md)
    return written
