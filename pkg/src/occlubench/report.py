"""Report emission: canonical JSON, CSV, and an SVG bar chart.

The JSON writer sorts keys and fixes the layout so that load -> dump is
byte-identical. The chart shows one group of bars per mask condition
(occluded, and recovered when present) with a dashed rule at the clean
baseline; bar heights are exactly proportional to top-1 error.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from pathlib import Path

from .evaluate import EvalReport

CHART_WIDTH = 1000
CHART_HEIGHT = 600
_MARGIN_LEFT = 80
_MARGIN_RIGHT = 30
_MARGIN_TOP = 50
_MARGIN_BOTTOM = 90
PLOT_WIDTH = CHART_WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
PLOT_HEIGHT = CHART_HEIGHT - _MARGIN_TOP - _MARGIN_BOTTOM

_MASK_ID = re.compile(r"^mask(\d+)$")
_MASK_RECOVERED = re.compile(r"^mask(\d+)\+(.+)$")

OCCLUDED_COLOR = "#2b4d8c"
RECOVERED_COLOR = "#3a9d5d"


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_report(report: EvalReport, out_dir: Path | str) -> dict[str, Path]:
    """Emit report.json, report.csv, and chart.svg into out_dir."""
    if not report.conditions:
        raise ValueError("report has no conditions")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out_dir / "report.json",
        "csv": out_dir / "report.csv",
        "svg": out_dir / "chart.svg",
    }
    paths["json"].write_text(canonical_json(report.to_dict()))
    paths["csv"].write_text(report_csv(report))
    paths["svg"].write_text(render_chart(report))
    return paths


def load_report(path: Path | str) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["condition", "n", "top1_error", "top5_error"])
    for c in report.conditions:
        writer.writerow([c.condition, c.n, repr(c.top1_error), repr(c.top5_error)])
    return buf.getvalue()


def _model_label(model: dict) -> str:
    arch = model.get("arch", "model")
    label = str(arch)
    if model.get("cutmix"):
        label += "+cutmix"
    if "seed" in model:
        label += f" (seed {model['seed']})"
    return label


def render_chart(report: EvalReport) -> str:
    """Grouped bars of top-1 error per mask condition, clean rule overlaid."""
    groups: dict[int, dict[str, float]] = {}
    for c in report.conditions:
        if m := _MASK_ID.match(c.condition):
            groups.setdefault(int(m.group(1)), {})["occluded"] = c.top1_error
        elif m := _MASK_RECOVERED.match(c.condition):
            groups.setdefault(int(m.group(1)), {})["recovered"] = c.top1_error
    clean = None
    for c in report.conditions:
        if c.condition == "clean":
            clean = c.top1_error
    errors = [v for g in groups.values() for v in g.values()]
    if clean is not None:
        errors.append(clean)
    if not errors:
        errors = [c.top1_error for c in report.conditions]
    ymax = min(1.0, max(0.1, math.ceil(max(errors) * 10 - 1e-9) / 10))

    def ypix(err: float) -> float:
        return _MARGIN_TOP + PLOT_HEIGHT * (1.0 - err / ymax)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{CHART_WIDTH}" '
        f'height="{CHART_HEIGHT}" viewBox="0 0 {CHART_WIDTH} {CHART_HEIGHT}">',
        f'<rect width="{CHART_WIDTH}" height="{CHART_HEIGHT}" fill="white"/>',
        f'<text x="{CHART_WIDTH / 2}" y="28" text-anchor="middle" '
        f'font-family="sans-serif" font-size="18">Top-1 error by occlusion: '
        f"{_model_label(report.model)}</text>",
    ]
    # y axis with 0.1-step grid
    ticks = int(round(ymax * 10)) + 1
    for i in range(ticks):
        err = i / 10
        y = ypix(err)
        parts.append(
            f'<line x1="{_MARGIN_LEFT}" y1="{y:.3f}" x2="{_MARGIN_LEFT + PLOT_WIDTH}" '
            f'y2="{y:.3f}" stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_MARGIN_LEFT - 8}" y="{y + 4:.3f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="12">{err:.1f}</text>'
        )
    parts.append(
        f'<line x1="{_MARGIN_LEFT}" y1="{_MARGIN_TOP}" x2="{_MARGIN_LEFT}" '
        f'y2="{_MARGIN_TOP + PLOT_HEIGHT}" stroke="#333333" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{_MARGIN_LEFT}" y1="{_MARGIN_TOP + PLOT_HEIGHT}" '
        f'x2="{_MARGIN_LEFT + PLOT_WIDTH}" y2="{_MARGIN_TOP + PLOT_HEIGHT}" '
        f'stroke="#333333" stroke-width="1"/>'
    )

    ordered = sorted(groups)
    if ordered:
        slot = PLOT_WIDTH / len(ordered)
        bar_w = slot * 0.3
        for pos, mask_id in enumerate(ordered):
            cx = _MARGIN_LEFT + slot * (pos + 0.5)
            entries = []
            if "occluded" in groups[mask_id]:
                entries.append(("occluded", groups[mask_id]["occluded"], OCCLUDED_COLOR))
            if "recovered" in groups[mask_id]:
                entries.append(("recovered", groups[mask_id]["recovered"], RECOVERED_COLOR))
            offset = -bar_w if len(entries) == 2 else -bar_w / 2
            for name, err, color in entries:
                x = cx + offset
                height = PLOT_HEIGHT * err / ymax
                y = _MARGIN_TOP + PLOT_HEIGHT - height
                parts.append(
                    f'<rect class="bar bar-{name}" data-error="{err!r}" x="{x:.3f}" '
                    f'y="{y:.3f}" width="{bar_w:.3f}" height="{height:.3f}" fill="{color}"/>'
                )
                parts.append(
                    f'<text x="{x + bar_w / 2:.3f}" y="{y - 4:.3f}" text-anchor="middle" '
                    f'font-family="sans-serif" font-size="11">{err:.3f}</text>'
                )
                offset += bar_w
            parts.append(
                f'<text x="{cx:.3f}" y="{_MARGIN_TOP + PLOT_HEIGHT + 20}" '
                f'text-anchor="middle" font-family="sans-serif" font-size="13">mask {mask_id}</text>'
            )
    if clean is not None:
        y = ypix(clean)
        parts.append(
            f'<line class="clean-baseline" x1="{_MARGIN_LEFT}" y1="{y:.3f}" '
            f'x2="{_MARGIN_LEFT + PLOT_WIDTH}" y2="{y:.3f}" stroke="#aa3333" '
            f'stroke-width="1.5" stroke-dasharray="6,4"/>'
        )
        parts.append(
            f'<text x="{_MARGIN_LEFT + PLOT_WIDTH - 4}" y="{y - 6:.3f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="12" fill="#aa3333">clean {clean:.3f}</text>'
        )
    # legend
    parts.append(
        f'<rect x="{_MARGIN_LEFT}" y="{CHART_HEIGHT - 36}" width="14" height="14" '
        f'fill="{OCCLUDED_COLOR}"/>'
        f'<text x="{_MARGIN_LEFT + 20}" y="{CHART_HEIGHT - 24}" font-family="sans-serif" '
        f'font-size="12">occluded</text>'
        f'<rect x="{_MARGIN_LEFT + 110}" y="{CHART_HEIGHT - 36}" width="14" height="14" '
        f'fill="{RECOVERED_COLOR}"/>'
        f'<text x="{_MARGIN_LEFT + 130}" y="{CHART_HEIGHT - 24}" font-family="sans-serif" '
        f'font-size="12">recovered</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_comparison(comparison: dict, out_dir: Path | str) -> dict[str, Path]:
    """Emit comparison.json and comparison.csv for a compare_models table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"json": out_dir / "comparison.json", "csv": out_dir / "comparison.csv"}
    paths["json"].write_text(canonical_json(comparison))

    labels = [f"m{i}:{_model_label(m)}" for i, m in enumerate(comparison["models"])]
    deltas = {d["id"]: d["inpaint_delta"] for d in comparison["inpaint_deltas"]}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["condition", "model", "top1_error", "degradation_ratio", "inpaint_delta"])
    for cond in comparison["conditions"]:
        for i, label in enumerate(labels):
            ratio = cond["degradation_ratio"][i]
            delta = deltas.get(cond["id"], [None] * len(labels))[i]
            writer.writerow(
                [
                    cond["id"],
                    label,
                    repr(cond["top1_error"][i]),
                    "" if ratio is None else repr(ratio),
                    "" if delta is None else repr(delta),
                ]
            )
    paths["csv"].write_text(buf.getvalue())
    return paths
