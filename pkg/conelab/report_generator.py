"""Jinja2 rendering of run reports and the margin summary."""

import logging
from pathlib import Path
from typing import List, Optional

from jinja2 import Environment, FileSystemLoader, select_autoescape

from .config import TrainConfig, settings
from .models import MarginStats, MetricsRow, RunManifest
from .utils import ensure_parent

logger = logging.getLogger(__name__)

# Bias ranges measured on ImageNet-scale pools; shown as context only.
REFERENCE_M_POS = (0.06, 0.1)
REFERENCE_M_NEG = (0.3, 0.45)

_report_generator_instance: Optional["ReportGenerator"] = None


class ReportGenerator:
    """Renders run artifacts through the templates directory."""

    def __init__(self, templates_path: Optional[str] = None):
        self.env = Environment(
            loader=FileSystemLoader(templates_path or settings.REPORT_TEMPLATE_DIR),
            autoescape=select_autoescape(["html"]),
            keep_trailing_newline=True,
        )
        self.env.filters["fixed"] = self.fixed
        self.env.filters["percent"] = self.percent

    @staticmethod
    def fixed(value: Optional[float], digits: int = 4) -> str:
        """Fixed-point text; missing values render as a dash."""
        if value is None:
            return "-"
        return f"{value:.{digits}f}"

    @staticmethod
    def percent(value: Optional[float]) -> str:
        if value is None:
            return "-"
        return f"{100.0 * value:.1f}%"

    def render_run_report(self, manifest: RunManifest, metrics: List[MetricsRow], out_path: str) -> str:
        template = self.env.get_template("run_report.html")
        html = template.render(
            manifest=manifest,
            config_items=sorted(manifest.config.items()),
            metrics=metrics,
            final=metrics[-1] if metrics else None,
        )
        ensure_parent(out_path).write_text(html, encoding="utf-8")
        logger.info(f"run report written to {out_path}")
        return out_path

    def render_margin_summary(self, stats: MarginStats, config: TrainConfig, out_path: str) -> str:
        template = self.env.get_template("margin_summary.txt")
        text = template.render(
            stats=stats,
            config=config,
            reference_pos=REFERENCE_M_POS,
            reference_neg=REFERENCE_M_NEG,
        )
        ensure_parent(out_path).write_text(text, encoding="utf-8")
        return out_path


def get_report_generator() -> ReportGenerator:
    """Get singleton ReportGenerator instance to cache the Jinja2 environment."""
    global _report_generator_instance
    if _report_generator_instance is None:
        _report_generator_instance = ReportGenerator()
    return _report_generator_instance
