"""Report files and matplotlib figures for evaluation and training runs.

Every report path gets three artifacts: the line-delimited detection dump,
a machine-readable ``report.json``, a human-readable ``report.txt``, and a
rendered figure next to them.
"""

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .evaluation import BUCKETS

REPORT_KEYS = ("map", "per_class_ap", "map_slow", "map_medium", "map_fast")


def format_report(report: dict, title: str = "evaluation") -> str:
    """Structured text with overall, per-class, and motion-split mAP."""
    lines = [f"== {title} ==", f"mAP@0.5: {_fmt(report.get('map'))}"]
    lines.append("per-class AP:")
    for class_id, ap in sorted(report.get("per_class_ap", {}).items()):
        lines.append(f"  class {class_id}: {_fmt(ap)}")
    lines.append("motion split:")
    for bucket in BUCKETS:
        lines.append(
            f"  {bucket:<7} mAP {_fmt(report.get(f'map_{bucket}'))}"
            f"  ({report.get(f'num_gt_{bucket}', 0)} instances)"
        )
    lines.append(f"detections: {report.get('num_detections', 0)}")
    lines.append(f"ground truth: {report.get('num_ground_truth', 0)}")
    if report.get("seq_nms_applied"):
        lines.append("post-processing: seq-nms applied")
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def write_report(report: dict, out_dir, name: str = "report") -> dict:
    """Write report.json / report.txt and the mAP figure; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{name}.json"
    txt_path = out_dir / f"{name}.txt"
    fig_path = out_dir / f"{name}.png"
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True))
    txt_path.write_text(format_report(report))
    plot_report(report, fig_path)
    return {"json": str(json_path), "txt": str(txt_path), "figure": str(fig_path)}


def plot_report(report: dict, out_path):
    """Bar chart: per-class AP plus the motion-split mAPs."""
    labels = [f"class {k}" for k in sorted(report.get("per_class_ap", {}))]
    values = [report["per_class_ap"][k] for k in sorted(report.get("per_class_ap", {}))]
    labels += [f"{b}" for b in BUCKETS]
    values += [report.get(f"map_{b}") for b in BUCKETS]
    values = [v if v is not None else 0.0 for v in values]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(range(len(values)), values, color=["tab:blue"] * (len(values) - 3) + ["tab:green"] * 3)
    ax.axhline(report.get("map") or 0.0, color="k", linestyle="--", linewidth=1, label="mAP")
    ax.set_xticks(range(len(values)), labels, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("AP")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_metrics(metrics_path, out_path):
    """Loss curves from a metrics.jsonl training log."""
    records = [json.loads(line) for line in Path(metrics_path).read_text().splitlines() if line.strip()]
    if not records:
        raise ValueError(f"no records in {metrics_path}")
    iters = [r["iter"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for key in ("L_rpn", "L_ref", "L_det", "L_total"):
        ax.plot(iters, [r[key] for r in records], label=key, linewidth=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def format_ablation_table(rows: list) -> str:
    """Fixed-width comparison table over pipeline variants."""
    header = f"{'variant':<8}{'mAP':>8}{'slow':>8}{'medium':>8}{'fast':>8}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['variant']:<8}"
            + "".join(
                f"{_fmt(row.get(k)):>8}" for k in ("map", "map_slow", "map_medium", "map_fast")
            )
        )
    return "\n".join(lines) + "\n"


def write_ablation(rows: list, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "ablation.json"
    txt_path = out_dir / "ablation.txt"
    fig_path = out_dir / "ablation.png"
    json_path.write_text(json.dumps(rows, indent=2, sort_keys=True))
    txt_path.write_text(format_ablation_table(rows))
    plot_ablation(rows, fig_path)
    return {"json": str(json_path), "txt": str(txt_path), "figure": str(fig_path)}


def plot_ablation(rows: list, out_path):
    """Grouped bars: overall and motion-split mAP per variant."""
    keys = ("map", "map_slow", "map_medium", "map_fast")
    names = ("overall", "slow", "medium", "fast")
    x = range(len(rows))
    width = 0.2
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for k, (key, label) in enumerate(zip(keys, names)):
        vals = [row.get(key) or 0.0 for row in rows]
        ax.bar([i + (k - 1.5) * width for i in x], vals, width=width, label=label)
    ax.set_xticks(list(x), [row["variant"] for row in rows])
    ax.set_xlabel("variant")
    ax.set_ylabel("mAP")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_any(path, out_path):
    """Render the right figure for a report, metrics log, or ablation file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".jsonl" or (text.lstrip()[:1] == "{" and "\n{" in text.strip()):
        plot_metrics(path, out_path)
        return "metrics"
    payload = json.loads(text)
    if isinstance(payload, list):
        plot_ablation(payload, out_path)
        return "ablation"
    plot_report(payload, out_path)
    return "report"
