"""Rendering of evaluation reports: JSON, long-format CSV, markdown tables
and ROC point files."""

from __future__ import annotations

import io
import json

from .metrics import EvalReport, RocCurve

ALL_ROW = "All abnormal"
AVERAGE_ROW = "Average"


def _pct(x: float) -> str:
    return f"{100.0 * x:.1f}"


def table_rows(report: EvalReport) -> list[dict]:
    """Rows in table order: all abnormal, each category, unweighted average."""
    o = report.overall
    rows = [{
        "row": ALL_ROW, "seen": "na",
        "n_normal": o.n_normal, "n_abnormal": o.n_abnormal,
        "f1": o.metrics.f1, "specificity": o.metrics.specificity,
        "sensitivity": o.metrics.sensitivity,
        "auroc": o.auroc.point, "auroc_lo": o.auroc.lo, "auroc_hi": o.auroc.hi,
    }]
    for cat, b in report.per_category.items():
        rows.append({
            "row": cat, "seen": b.seen,
            "n_normal": b.n_normal, "n_abnormal": b.n_abnormal,
            "f1": b.metrics.f1, "specificity": b.metrics.specificity,
            "sensitivity": b.metrics.sensitivity,
            "auroc": b.auroc.point, "auroc_lo": b.auroc.lo, "auroc_hi": b.auroc.hi,
        })
    avg = report.averages
    rows.append({
        "row": AVERAGE_ROW, "seen": "na",
        "n_normal": o.n_normal, "n_abnormal": sum(b.n_abnormal for b in report.per_category.values()),
        "f1": avg["f1"], "specificity": avg["specificity"], "sensitivity": avg["sensitivity"],
        "auroc": avg["auroc"], "auroc_lo": None, "auroc_hi": None,
    })
    return rows


CSV_COLUMNS = ["stream", "row", "seen", "n_normal", "n_abnormal", "f1", "specificity",
               "sensitivity", "auroc", "auroc_lo", "auroc_hi"]


def reports_csv(reports: list[EvalReport]) -> str:
    out = io.StringIO()
    out.write(",".join(CSV_COLUMNS) + "\n")
    for rep in reports:
        for r in table_rows(rep):
            vals = [rep.stream_name] + [r[c] for c in CSV_COLUMNS[1:]]
            out.write(",".join("" if v is None else (repr(v) if isinstance(v, float) else str(v))
                               for v in vals) + "\n")
    return out.getvalue()


def _seen_tag(seen: str) -> str:
    return {"seen": "seen", "unseen": "unseen"}.get(seen, "")


def threshold_table_md(reports: list[EvalReport]) -> str:
    """F1 / SPC / SEN (%) per row, one column group per stream."""
    head = ["Normal vs", "Seen"]
    for rep in reports:
        head += [f"{rep.stream_name} F1", f"{rep.stream_name} SPC", f"{rep.stream_name} SEN"]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    per_stream = [table_rows(rep) for rep in reports]
    for i, base in enumerate(per_stream[0]):
        cells = [base["row"], _seen_tag(base["seen"])]
        for rows in per_stream:
            r = rows[i]
            cells += [_pct(r["f1"]), _pct(r["specificity"]), _pct(r["sensitivity"])]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def auroc_table_md(reports: list[EvalReport]) -> str:
    """AUROC (%) with 95% interval per row, one column per stream."""
    head = ["Normal vs", "Seen"] + [f"{rep.stream_name} AUROC" for rep in reports]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    per_stream = [table_rows(rep)[:-1] for rep in reports]
    for i, base in enumerate(per_stream[0]):
        cells = [base["row"], _seen_tag(base["seen"])]
        for rows in per_stream:
            r = rows[i]
            cells.append(f"{_pct(r['auroc'])} ({_pct(r['auroc_lo'])}-{_pct(r['auroc_hi'])})")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def tables_md(reports: list[EvalReport], title: str = "") -> str:
    parts = []
    if title:
        parts.append(f"# {title}\n")
    parts.append("## Threshold-dependent metrics (%)\n")
    parts.append(threshold_table_md(reports))
    parts.append("\n## AUROC (%) with 95% bootstrap interval\n")
    parts.append(auroc_table_md(reports))
    return "\n".join(parts)


def roc_csv(curve: RocCurve) -> str:
    out = io.StringIO()
    out.write("fpr,tpr,threshold\n")
    for f, t, th in curve.points():
        out.write(f"{f!r},{t!r},{th!r}\n")
    return out.getvalue()


def reports_json(reports: list[EvalReport], extra: dict | None = None) -> str:
    doc = dict(extra or {})
    doc["streams"] = [rep.to_dict() for rep in reports]
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"
