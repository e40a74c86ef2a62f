# backend/export_report.py

import json
import logging
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd
from docx import Document
from jinja2 import Environment, FileSystemLoader, select_autoescape

from backend.backtest import BREAK_EVEN, BacktestReport, compute_metrics
from backend.errors import InputError, IoError, ParseError
from backend.utils import atomic_write_json, atomic_write_text, read_text

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).parent / "templates"
SVG_SIZE = (1200, 600)
MARGIN = 60
ACTUAL_COLOR = "#1f2937"
BASELINE_COLOR = "#2563eb"
ADJUSTED_COLOR = "#dc2626"
EXTRA_COLORS = ("#059669", "#d97706", "#7c3aed")

_environment = Environment(
    loader=FileSystemLoader(str(TEMPLATE_DIR)),
    autoescape=select_autoescape(enabled_extensions=("svg", "j2"), default_for_string=True),
    keep_trailing_newline=True,
)


def _csv_text(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")


def _series_colors(strategies: List[str]) -> Dict[str, str]:
    colors = {}
    extras = iter(EXTRA_COLORS)
    baseline_used = False
    for name in strategies:
        if name == "adjusted":
            colors[name] = ADJUSTED_COLOR
        elif not baseline_used:
            colors[name] = BASELINE_COLOR
            baseline_used = True
        else:
            colors[name] = next(extras, "#6b7280")
    return colors


def render_svg(report: BacktestReport) -> str:
    """Static SVG 1.1 line chart: actual closes plus one polyline per strategy."""
    records = report.records
    if records.empty:
        raise InputError("cannot plot an empty report")
    width, height = SVG_SIZE
    left, right = MARGIN, width - MARGIN
    top, bottom = MARGIN, height - MARGIN

    columns = ["actual", *report.strategies]
    stacked = records[columns].to_numpy(dtype=float)
    low, high = float(np.min(stacked)), float(np.max(stacked))
    if high == low:
        low, high = low - 1.0, high + 1.0
    count = len(records)
    xs = left + (right - left) * (np.arange(count) / max(count - 1, 1))

    def to_y(values: np.ndarray) -> np.ndarray:
        return bottom - (values - low) / (high - low) * (bottom - top)

    colors = _series_colors(report.strategies)
    lines = []
    for name in columns:
        ys = to_y(records[name].to_numpy(dtype=float))
        points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        lines.append({"name": name, "color": colors.get(name, ACTUAL_COLOR), "points": points})

    levels = np.linspace(low, high, 5)
    ticks = [{"y": f"{y:.2f}", "label": f"{v:.2f}"} for v, y in zip(levels, to_y(levels))]
    return _environment.get_template("plot.svg.j2").render(
        ticker=report.ticker,
        width=width,
        height=height,
        left=left,
        right=right,
        top=top,
        bottom=bottom,
        y_ticks=ticks,
        first_date=records["date"].iloc[0],
        last_date=records["date"].iloc[-1],
        lines=lines,
    )


def summary_payload(report: BacktestReport) -> Dict:
    return {
        "metadata": {
            "ticker": report.ticker,
            "evaluated_days": int(len(report.records)),
            "first_date": str(report.records["date"].iloc[0]),
            "last_date": str(report.records["date"].iloc[-1]),
            "config": dict(sorted(report.config.items())),
        },
        "metrics": {
            name: {
                "rmse": m.rmse,
                "mae": m.mae,
                "directional_accuracy": m.directional_accuracy,
                "count": m.count,
            }
            for name, m in report.metrics.items()
        },
        "break_even": BREAK_EVEN,
        "warnings": list(report.warnings),
    }


def export_docx(report: BacktestReport, output_path: Union[str, Path]) -> bool:
    """Human-readable summary; returns False instead of raising when the save fails."""
    doc = Document()
    doc.add_heading(f"BACKTEST REPORT: {report.ticker}", 0)
    doc.add_paragraph(
        f"Evaluated days: {len(report.records)} "
        f"({report.records['date'].iloc[0]} to {report.records['date'].iloc[-1]})"
    )

    doc.add_heading("METRICS", level=1)
    table = doc.add_table(rows=1, cols=4)
    for cell, title in zip(table.rows[0].cells, ("Strategy", "RMSE", "MAE", "Directional accuracy")):
        cell.text = title
    for name, m in report.metrics.items():
        cells = table.add_row().cells
        cells[0].text = name
        cells[1].text = f"{m.rmse:.6g}"
        cells[2].text = f"{m.mae:.6g}"
        cells[3].text = f"{m.directional_accuracy:.3f}"
    doc.add_paragraph(f"Break-even directional accuracy is {BREAK_EVEN:.2f}.")

    if report.warnings:
        doc.add_heading("WARNINGS", level=1)
        for warning in report.warnings:
            doc.add_paragraph(warning, style="List Bullet")

    try:
        Path(output_path).parent.mkdir(parents=True, exist_ok=True)
        doc.save(str(output_path))
        return True
    except OSError as e:
        logger.error(f"❌ DOCX save failed: {e}")
        return False


def emit_report(report: BacktestReport, output_dir: Union[str, Path], docx: bool = False) -> Dict[str, Path]:
    """Write report, metrics, plot and summary files for one ticker."""
    output_dir = Path(output_dir)
    ticker = report.ticker
    paths = {
        "report": atomic_write_text(output_dir / f"report_{ticker}.csv", _csv_text(report.records)),
        "metrics": atomic_write_text(output_dir / f"metrics_{ticker}.csv", _csv_text(report.metrics_frame())),
        "plot": atomic_write_text(output_dir / f"plot_{ticker}.svg", render_svg(report)),
        "summary": atomic_write_json(output_dir / f"summary_{ticker}.json", summary_payload(report)),
    }
    if docx:
        docx_path = output_dir / f"report_{ticker}.docx"
        if export_docx(report, docx_path):
            paths["docx"] = docx_path
    logger.info(f"✅ Wrote {len(paths)} report files for {ticker} to {output_dir}")
    return paths


def load_report(output_dir: Union[str, Path], ticker: str) -> BacktestReport:
    """Rebuild a report from emitted files, recomputing metrics from the per-day CSV."""
    output_dir = Path(output_dir)
    path = output_dir / f"report_{ticker}.csv"
    if not path.is_file():
        raise IoError("Report file not found", str(path))
    records = pd.read_csv(path, dtype={"date": str}, float_precision="round_trip")
    fixed = ["date", "previous", "actual"]
    if list(records.columns[:3]) != fixed or len(records.columns) < 4:
        raise ParseError("report header must start with date,previous,actual and name a strategy", str(path), 1)
    strategies = list(records.columns[3:])

    config, warnings = {}, []
    summary_path = output_dir / f"summary_{ticker}.json"
    if summary_path.is_file():
        summary = json.loads(read_text(summary_path))
        config = summary.get("metadata", {}).get("config", {})
        warnings = summary.get("warnings", [])
    return BacktestReport(ticker, records, compute_metrics(records, strategies), config, warnings)
