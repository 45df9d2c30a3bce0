"""
Reporting utilities for brwcap.
Writes the markdown summary, per-statistic SVG plots and the fits JSON.
"""

import os
import json
import logging
from datetime import datetime
from typing import Any, Dict, List, Optional

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from brwcap.models.records import ExponentFit

logger = logging.getLogger(__name__)

TABLE_HEADER = ["statistic", "slope", "stderr", "R^2", "target", "kind", "margin", "verdict"]


def save_fits(fits: List[ExponentFit], path: str) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump([fit.to_dict() for fit in fits], f, indent=2)
    logger.info(f"Saved {len(fits)} fits to {path}")
    return path


def load_fits(path: str) -> List[ExponentFit]:
    with open(path, "r", encoding="utf-8") as f:
        return [ExponentFit.from_dict(item) for item in json.load(f)]


def _number(value, digits: int = 3) -> str:
    if value is None or (isinstance(value, float) and not np.isfinite(value)):
        return "-"
    return f"{value:.{digits}f}"


class ExperimentReport:
    """Collects fits and renders them as markdown and SVG"""

    def __init__(self, output_dir: str = None):
        """
        Initialize the report

        Args:
            output_dir: Directory to save reports (defaults to "report")
        """
        self.output_dir = output_dir or "report"

        if not os.path.exists(self.output_dir):
            try:
                os.makedirs(self.output_dir)
            except Exception as e:
                logger.error(f"Failed to create report directory: {str(e)}")
                self.output_dir = "."

        self.report_data = {
            "timestamp": datetime.now().isoformat(),
            "summary": {},
            "details": {},
        }
        self.fits: List[ExponentFit] = []

    def set_summary_stats(self, stats: Dict[str, Any]):
        self.report_data["summary"] = stats

    def add_detail_section(self, section_name: str, data: Any):
        self.report_data["details"][section_name] = data

    def add_fits(self, fits: List[ExponentFit]):
        self.fits.extend(fits)

    def summary_table(self, statistics: Optional[List[str]] = None) -> str:
        """
        Markdown table of slope, target, margin and verdict.

        Statistics named in ``statistics`` without a fit get a "no data" row.
        """
        lines = ["| " + " | ".join(TABLE_HEADER) + " |",
                 "|" + "---|" * len(TABLE_HEADER)]
        by_name = {fit.statistic: fit for fit in self.fits}
        names = list(statistics) if statistics else list(by_name)
        if not names:
            names = ["(none)"]
        for name in names:
            fit = by_name.get(name)
            if fit is None:
                lines.append(f"| {name} | " + " | ".join(["-"] * (len(TABLE_HEADER) - 2)) + " | no data |")
                continue
            lines.append("| " + " | ".join([
                fit.statistic, _number(fit.slope), _number(fit.stderr), _number(fit.r_squared),
                _number(fit.target), fit.kind if fit.target is not None else "-",
                _number(fit.margin, 2), fit.verdict]) + " |")
        return "\n".join(lines)

    def generate_markdown_report(self, output_file: str = "summary.md",
                                 statistics: Optional[List[str]] = None) -> str:
        """Render the summary, detail sections and the fit table; returns the text"""
        timestamp = datetime.fromisoformat(self.report_data["timestamp"])
        report = ["# Exponent report", "",
                  f"Generated: {timestamp.strftime('%Y-%m-%d %H:%M:%S')}", ""]

        summary = self.report_data["summary"]
        if summary:
            report.append("## Summary")
            report.append("")
            for key, value in summary.items():
                report.append(f"- {key}: {value}")
            report.append("")

        report.append("## Fits")
        report.append("")
        report.append(self.summary_table(statistics))
        report.append("")

        trends = [fit for fit in self.fits if fit.trend]
        if trends:
            report.append("## Window slopes")
            report.append("")
            for fit in trends:
                slopes = ", ".join(_number(s) for s in fit.trend)
                report.append(f"- {fit.statistic} (target {_number(fit.target)}): {slopes}")
            report.append("")

        for section, data in self.report_data["details"].items():
            report.append(f"## {section}")
            report.append("")
            if isinstance(data, dict):
                for k, v in data.items():
                    report.append(f"- {k}: {v}")
            elif isinstance(data, list):
                for item in data:
                    report.append(f"- {item}")
            else:
                report.append(str(data))
            report.append("")

        report_text = "\n".join(report)
        if output_file:
            try:
                with open(os.path.join(self.output_dir, output_file), "w", encoding="utf-8") as f:
                    f.write(report_text)
            except Exception as e:
                logger.error(f"Failed to save report: {str(e)}")
        return report_text

    def plot_fit(self, fit: ExponentFit, records: Optional[pd.DataFrame] = None,
                 column: Optional[str] = None) -> str:
        """
        One log-log SVG: mean points, the fitted line and a guide line of the
        target slope through the centre of the data.
        """
        output_path = os.path.join(self.output_dir, f"{fit.statistic}.svg")
        fig, ax = plt.subplots(figsize=(6, 4.5))
        try:
            if records is not None and column in records.columns:
                data = records[["n", column]].dropna()
                data = data[data[column] > 0]
                ax.scatter(np.log(data["n"].astype(float)), np.log(data[column].astype(float)),
                           s=6, alpha=0.3, color="grey", label="trials")

            x = np.asarray(fit.log_n, dtype=float)
            y = np.asarray(fit.mean_log, dtype=float)
            points, = ax.plot(x, y, "o", color="tab:blue", label="mean log")
            points.set_gid("mean-points")
            fitted, = ax.plot(x, fit.intercept + fit.slope * x, "-", color="tab:blue",
                              label=f"fit slope {fit.slope:.3f}")
            fitted.set_gid("fit-line")

            description = "target=none"
            if fit.target is not None and x.size:
                centre_x, centre_y = float(x.mean()), float(y.mean())
                guide, = ax.plot(x, centre_y + fit.target * (x - centre_x), "--", color="tab:red",
                                 label=f"target slope {fit.target:g}")
                guide.set_gid("target-guide")
                description = f"target={fit.target!r}"

            ax.set_xlabel("log n")
            ax.set_ylabel(f"mean log {fit.statistic}")
            ax.set_title(f"{fit.statistic}: {fit.verdict}")
            ax.legend(loc="best", fontsize=8)
            fig.tight_layout()
            fig.savefig(output_path, format="svg", metadata={"Description": description})
        except Exception as e:
            logger.error(f"Failed to plot {fit.statistic}: {str(e)}")
            output_path = ""
        finally:
            plt.close(fig)
        return output_path

    def plot_empty(self, name: str = "no_data") -> str:
        output_path = os.path.join(self.output_dir, f"{name}.svg")
        fig, ax = plt.subplots(figsize=(6, 4.5))
        try:
            ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
            ax.set_xlabel("log n")
            fig.savefig(output_path, format="svg", metadata={"Description": "target=none"})
        finally:
            plt.close(fig)
        return output_path

    def write_all(self, records: Optional[pd.DataFrame] = None,
                  statistics: Optional[List[str]] = None,
                  columns: Optional[Dict[str, str]] = None) -> List[str]:
        """Markdown summary plus one SVG per fit (an empty plot when there are none)"""
        columns = columns or {}
        paths = [os.path.join(self.output_dir, "summary.md")]
        self.generate_markdown_report("summary.md", statistics)
        if not self.fits:
            paths.append(self.plot_empty())
        for fit in self.fits:
            path = self.plot_fit(fit, records, columns.get(fit.statistic, fit.statistic))
            if path:
                paths.append(path)
        logger.info(f"Report written to {self.output_dir} ({len(paths)} files)")
        return paths

    def save_json_report(self, output_file: str = None) -> str:
        if not output_file:
            output_file = f"report_{datetime.now().strftime('%Y%m%d_%H%M%S')}.json"
        output_path = os.path.join(self.output_dir, output_file)
        data = dict(self.report_data)
        data["fits"] = [fit.to_dict() for fit in self.fits]
        try:
            with open(output_path, "w", encoding="utf-8") as f:
                json.dump(data, f, indent=2)
            return output_path
        except Exception as e:
            logger.error(f"Failed to save JSON report: {str(e)}")
            return ""
