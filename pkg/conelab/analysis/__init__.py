"""Analysis reports package."""

from typing import Dict, Type

from .base import BaseReport
from .coefficients import CoefficientsReport, coefficient_report
from .features import FeaturesReport, export_features
from .margins import MarginsReport, margin_report

ALL_REPORTS: Dict[str, Type[BaseReport]] = {
    CoefficientsReport.name: CoefficientsReport,
    MarginsReport.name: MarginsReport,
    FeaturesReport.name: FeaturesReport,
}


def get_report(name: str) -> BaseReport:
    try:
        return ALL_REPORTS[name]()
    except KeyError:
        raise ValueError(f"unknown report '{name}'; choose from {', '.join(ALL_REPORTS)}") from None


__all__ = [
    "ALL_REPORTS",
    "BaseReport",
    "CoefficientsReport",
    "FeaturesReport",
    "MarginsReport",
    "coefficient_report",
    "export_features",
    "get_report",
    "margin_report",
]
