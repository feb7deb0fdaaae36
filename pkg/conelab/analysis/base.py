"""Base report class."""

from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional

import numpy as np

from ..config import TrainConfig
from ..data import Dataset
from ..memory_bank import MemoryBank
from ..models import ReportResult
from ..network import ModelParams, forward


class BaseReport(ABC):
    """Base class for analysis reports over a checkpoint, a bank dump and a dataset."""

    name: str = "base"
    display_name: str = "Base Report"
    description: str = ""
    filename: str = "report.csv"
    headers: List[str] = []

    @abstractmethod
    def run(
        self,
        params: ModelParams,
        dataset: Dataset,
        bank: Optional[MemoryBank],
        config: TrainConfig,
        out_path: str,
        **kwargs: Any,
    ) -> ReportResult:
        """
        Compute the report and write its CSV.

        Args:
            params: Trained query-network parameters
            dataset: Samples to analyze
            bank: Memory bank restored from a dump (unused by some reports)
            config: Run configuration (temperatures, Top-N)
            out_path: Destination CSV path
            **kwargs: Report-specific options (e.g. sample_ids)

        Returns:
            ReportResult describing the written file
        """

    @staticmethod
    def project(params: ModelParams, samples: np.ndarray) -> np.ndarray:
        """Normalized projections z of the given rows."""
        return forward(params, samples).z

    def create_result(
        self,
        summary: str = "",
        output_path: Optional[str] = None,
        data: Optional[Dict[str, Any]] = None,
    ) -> ReportResult:
        """Helper method to create a report result."""
        return ReportResult(
            name=self.name,
            display_name=self.display_name,
            description=self.description,
            summary=summary,
            output_path=output_path,
            data=data or {},
        )
