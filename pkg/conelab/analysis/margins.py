"""LogSumExp bias statistics over the bank's positive and negative pools."""

import logging
from typing import Any, Optional

import numpy as np

from ..config import TrainConfig
from ..data import Dataset
from ..losses import margin_analysis
from ..memory_bank import MemoryBank
from ..models import MarginSample, MarginStats, ReportResult
from ..network import ModelParams
from ..utils import write_rows_csv
from .base import BaseReport

logger = logging.getLogger(__name__)


def margin_report(params: ModelParams, dataset: Dataset, bank: MemoryBank, config: TrainConfig) -> MarginStats:
    """``m_pos`` and ``m_neg`` for every sample; samples with an empty pool are skipped."""
    snapshot = bank.snapshot()
    feats = BaseReport.project(params, dataset.samples)
    samples = []
    skipped = 0
    for sample_id, (z, label) in enumerate(zip(feats, dataset.labels)):
        nbrs = snapshot.query_neighbors(z, int(label), config.top_n)
        if nbrs.num_positives == 0 or nbrs.num_negatives == 0:
            skipped += 1
            continue
        report = margin_analysis(z, nbrs, config.tau_sup)
        samples.append(
            MarginSample(
                sample_id=sample_id,
                m_pos=report.m_pos,
                m_neg=report.m_neg,
                pos_count=nbrs.num_positives,
                neg_count=nbrs.num_negatives,
            )
        )
    if skipped:
        logger.warning(f"margin report skipped {skipped} samples with an empty pool")
    if not samples:
        return MarginStats(skipped=skipped)

    m_pos = np.array([s.m_pos for s in samples])
    m_neg = np.array([s.m_neg for s in samples])
    return MarginStats(
        samples=samples,
        skipped=skipped,
        mean_m_pos=float(m_pos.mean()),
        mean_m_neg=float(m_neg.mean()),
        min_m_pos=float(m_pos.min()),
        max_m_pos=float(m_pos.max()),
        min_m_neg=float(m_neg.min()),
        max_m_neg=float(m_neg.max()),
    )


class MarginsReport(BaseReport):
    name = "margins"
    display_name = "LogSumExp margins"
    description = "Gap between LogSumExp and max over each sample's positive and negative similarities"
    filename = "margins.csv"
    headers = ["sample_id", "m_pos", "m_neg"]

    def run(
        self,
        params: ModelParams,
        dataset: Dataset,
        bank: Optional[MemoryBank],
        config: TrainConfig,
        out_path: str,
        **kwargs: Any,
    ) -> ReportResult:
        if bank is None:
            raise ValueError("the margins report needs a bank dump")
        stats = margin_report(params, dataset, bank, config)
        write_rows_csv(out_path, self.headers, ([s.sample_id, s.m_pos, s.m_neg] for s in stats.samples))
        summary = f"{len(stats.samples)} samples, {stats.skipped} skipped"
        if stats.mean_m_pos is not None:
            summary += f"; mean m_pos={stats.mean_m_pos:.4f}, mean m_neg={stats.mean_m_neg:.4f}"
        return self.create_result(summary=summary, output_path=out_path, data={"stats": stats})
