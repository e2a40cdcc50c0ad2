"""
Report Generator Module

Renders evaluation reports with Jinja2 templates: a key-value text summary that parses back into the same
`EvalReport`, and a static HTML overview with the result tables.

Summary keys (one `key=value` per line, floats written with full precision):
    task, n_samples, top1, top5, class_mean,
    dense_obs_<obs>_pred_<pred>   (one per Obs/Pred pair),
    seg_f1_10, seg_f1_25, seg_f1_50, seg_edit, seg_frame_acc
Absent metrics are omitted.

Usage:
    generator = ReportGenerator()
    generator.write_summary(report, "runs/a/report.txt")
"""

import datetime
import io
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd
from dotenv import dotenv_values
from jinja2 import Environment, FileSystemLoader, select_autoescape

from src.models import EvalReport, SegmentationScores, Task

DEFAULT_TEMPLATES_DIR = Path(__file__).resolve().parent.parent / "templates"
DENSE_PREFIX = "dense_obs_"
SEG_PREFIX = "seg_"


class ReportGenerator:
    logger = logging.getLogger("report_generator")

    def __init__(self, templates_dir: str | Path = DEFAULT_TEMPLATES_DIR):
        """
        Initialize the generator with a templates directory.

        Args:
            templates_dir: Path to the directory containing Jinja2 templates
        """
        self.templates_dir = Path(templates_dir)
        self.env = Environment(
            loader=FileSystemLoader(self.templates_dir), autoescape=select_autoescape(["html", "xml"])
        )
        self.env.filters["exact"] = self._exact
        self.env.filters["percent"] = self._percent

    @staticmethod
    def _exact(value: float) -> str:
        """Shortest text that parses back to the same float."""
        return repr(float(value))

    @staticmethod
    def _percent(value: Optional[float], digits: int = 1) -> str:
        if value is None:
            return "–"
        return f"{value:.{digits}f}"

    @staticmethod
    def summary_items(report: EvalReport) -> list[tuple[str, Any]]:
        """Flat (key, value) pairs of a report, in output order."""
        items: list[tuple[str, Any]] = [("task", report.task.value), ("n_samples", report.n_samples)]
        for name in ("top1", "top5", "class_mean"):
            value = getattr(report, name)
            if value is not None:
                items.append((name, float(value)))
        for (obs, pred), value in sorted(report.dense_table.items()):
            items.append((f"{DENSE_PREFIX}{obs!r}_pred_{pred!r}", float(value)))
        if report.seg is not None:
            items.extend((f"{SEG_PREFIX}{name}", float(value)) for name, value in report.seg.model_dump().items())
        return items

    def render_summary(self, report: EvalReport, template_name: str = "report.txt.j2") -> str:
        template = self.env.get_template(template_name)
        return template.render(items=self.summary_items(report))

    def write_summary(self, report: EvalReport, output_path: str | Path) -> str:
        output_file = Path(output_path)
        output_file.parent.mkdir(parents=True, exist_ok=True)
        with open(output_file, "w", encoding="utf-8") as f:
            f.write(self.render_summary(report))
        self.logger.info(f"Report summary written to {output_file}")
        return str(output_file)

    @staticmethod
    def parse_summary(text: str) -> EvalReport:
        """Inverse of `render_summary`."""
        values = dotenv_values(stream=io.StringIO(text))
        fields: Dict[str, Any] = {"task": Task(values["task"]), "n_samples": int(values.get("n_samples") or 0)}
        dense: dict[tuple[float, float], float] = {}
        seg: Dict[str, float] = {}
        for key, value in values.items():
            if key in ("top1", "top5", "class_mean"):
                fields[key] = float(value)
            elif key.startswith(DENSE_PREFIX):
                obs, pred = key[len(DENSE_PREFIX) :].split("_pred_")
                dense[(float(obs), float(pred))] = float(value)
            elif key.startswith(SEG_PREFIX):
                seg[key[len(SEG_PREFIX) :]] = float(value)
        return EvalReport(**fields, dense_table=dense, seg=SegmentationScores(**seg) if seg else None)

    @classmethod
    def read_summary(cls, path: str | Path) -> EvalReport:
        return cls.parse_summary(Path(path).read_text(encoding="utf-8"))

    @staticmethod
    def write_table(table: pd.DataFrame, output_path: str | Path) -> str:
        output_file = Path(output_path)
        output_file.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(output_file, index=False)
        return str(output_file)

    @staticmethod
    def dense_dataframe(report: EvalReport) -> pd.DataFrame:
        return pd.DataFrame(
            columns=["obs", "pred", "class_mean"],
            data=[[obs, pred, value] for (obs, pred), value in sorted(report.dense_table.items())],
        )

    def generate_report(
        self,
        report: EvalReport,
        tables: Optional[Dict[str, pd.DataFrame]] = None,
        output_path: str | Path = "report.html",
        template_name: str = "report.html.j2",
        custom_context: Optional[Dict[str, Any]] = None,
    ) -> str:
        """
        Generate an HTML overview of an evaluation.

        Args:
            report: Metrics to show
            tables: Named tables (loss curve, ablation rows, ...) rendered below the metrics
            output_path: Path where the generated HTML file will be saved
            template_name: Name of the Jinja2 template to use
            custom_context: Additional context variables for the template

        Returns:
            Path to the generated HTML file
        """
        template = self.env.get_template(template_name)
        tables = dict(tables or {})
        if report.dense_table:
            tables.setdefault("dense", self.dense_dataframe(report))

        context = {
            "page_title": f"Evaluation: {report.task.value}",
            "report": report,
            "tables": [(name, table.columns.tolist(), table.values.tolist()) for name, table in tables.items()],
            "generation_time": datetime.datetime.now(),
        }
        if custom_context:
            context.update(custom_context)

        output_file = Path(output_path)
        output_file.parent.mkdir(parents=True, exist_ok=True)
        with open(output_file, "w", encoding="utf-8") as f:
            f.write(template.render(**context))
        return str(output_file)
