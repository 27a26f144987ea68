"""Metric tables with winner / runner-up markup, as aligned text and CSV."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Optional, Sequence

from covlab import METHODS

METRICS = ("SR", "Return", "Variance", "Turnover")
LOWER_IS_BETTER = frozenset({"Variance", "Turnover"})
COLUMNS = (("gmv", "GMV"), ("msr", "MSR"), ("mv", "MV"))
ROW_LABELS = {
    "nw": "NW",
    "rnw": "Residual-based NW",
    "poet": "POET",
    "oft": "OFT",
    "lslw": "LSLW",
    "nls": "NLS",
    "sfnl": "SFNL",
}
FAILED = "FAILED"


def fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    s = f"{x:.4f}"
    return "0.0000" if s == "-0.0000" else s


def _marks(values: list, metric: str) -> dict:
    """Map displayed value -> markup for the best and second-best distinct
    values across the whole table (ties share a mark)."""
    finite = sorted({float(fmt(v)) for v in values if math.isfinite(v)},
                    reverse=metric not in LOWER_IS_BETTER)
    out = {}
    if finite:
        out[finite[0]] = "**"
    if len(finite) > 1:
        out[finite[1]] = "*"
    return out


def render_table(metric: str, rows: Sequence[tuple], header: Optional[dict] = None) -> tuple[str, str]:
    """Render one metric table.

    ``rows`` holds ``(label, {"gmv": v, "msr": v, "mv": v})`` pairs where a
    value may be a float, ``None`` (not run) or the string ``"FAILED"``.
    Returns ``(text, csv)``.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    numeric = [v for _, cells in rows for v in cells.values() if isinstance(v, float)]
    marks = _marks(numeric, metric)
    body = []
    for label, cells in rows:
        line = [label]
        for key, _ in COLUMNS:
            v = cells.get(key)
            if v is None:
                line.append("")
            elif isinstance(v, str):
                line.append(v)
            else:
                s = fmt(v)
                m = marks.get(float(s), "") if math.isfinite(v) else ""
                line.append(f"{m}{s}{m}")
        body.append(line)
    head = ["method", *(name for _, name in COLUMNS)]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    w.writerows(body)

    widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
    lines = []
    if header:
        lines.append(f"# {metric}: " + " ".join(f"{k}={v}" for k, v in header.items()))
    for r in [head, *body]:
        cells = [r[0].ljust(widths[0])] + [c.rjust(widths[i]) for i, c in enumerate(r) if i > 0]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n", buf.getvalue()


def _rows(reports, metric: str) -> list:
    by_method: dict = {}
    order = []
    for rep in reports:
        if rep.method not in by_method:
            by_method[rep.method] = {}
            order.append(rep.method)
        by_method[rep.method][rep.objective] = FAILED if rep.failed else rep.metric(metric)
    known = [m for m in METHODS if m in by_method]
    others = [m for m in order if m not in METHODS]
    return [(ROW_LABELS.get(m, m), by_method[m]) for m in known + others]


def render_tables(reports, header: Optional[dict] = None) -> dict:
    """``{metric: (text, csv)}`` for every metric; benchmark rows come last."""
    if not reports:
        raise ValueError("render_tables needs at least one report")
    return {m: render_table(m, _rows(reports, m), header) for m in METRICS}


def write_tables(tables: dict, out_dir, run_id: str) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric, (text, csv_text) in tables.items():
        for ext, content in (("txt", text), ("csv", csv_text)):
            path = out / f"{run_id}_{metric}.{ext}"
            path.write_text(content, encoding="utf-8")
            paths.append(path)
    return paths
