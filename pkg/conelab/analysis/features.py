"""Projection export for external embedding tools."""

from typing import Any, Optional

from ..config import TrainConfig
from ..data import Dataset
from ..memory_bank import MemoryBank
from ..models import ReportResult
from ..network import ModelParams
from ..utils import write_rows_csv
from .base import BaseReport


def export_features(params: ModelParams, dataset: Dataset, out_path: str) -> int:
    """Write ``label,z_0,...`` rows; returns the row count."""
    feats = BaseReport.project(params, dataset.samples)
    headers = ["label"] + [f"z_{i}" for i in range(feats.shape[1])]
    write_rows_csv(
        out_path,
        headers,
        ([int(label)] + [float(v) for v in row] for label, row in zip(dataset.labels, feats)),
    )
    return int(feats.shape[0])


class FeaturesReport(BaseReport):
    name = "export"
    display_name = "Feature export"
    description = "Normalized projections with labels, one row per sample"
    filename = "features.csv"

    def run(
        self,
        params: ModelParams,
        dataset: Dataset,
        bank: Optional[MemoryBank],
        config: TrainConfig,
        out_path: str,
        **kwargs: Any,
    ) -> ReportResult:
        rows = export_features(params, dataset, out_path)
        return self.create_result(summary=f"{rows} rows", output_path=out_path, data={"rows": rows})
