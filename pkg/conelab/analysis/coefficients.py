"""Per-anchor gradient coefficient tables."""

import logging
from typing import Any, List, Optional, Sequence

import numpy as np

from ..config import TrainConfig
from ..data import Dataset
from ..losses import supcon_in_grad
from ..memory_bank import MemoryBank
from ..models import CoefficientRow, CoefficientTable, ReportResult
from ..network import ModelParams
from ..utils import write_rows_csv
from .base import BaseReport

logger = logging.getLogger(__name__)


def coefficient_report(
    params: ModelParams,
    dataset: Dataset,
    bank: MemoryBank,
    sample_ids: Sequence[int],
    config: TrainConfig,
) -> List[CoefficientTable]:
    """Alpha of every anchor for each requested sample, rows sorted by similarity.

    A sample with no same-label anchor in the bank gets an empty table.
    """
    ids = [int(i) for i in sample_ids]
    bad = [i for i in ids if not 0 <= i < len(dataset)]
    if bad:
        raise ValueError(f"unknown sample id {bad[0]} (dataset has {len(dataset)} samples)")
    if not ids:
        return []

    snapshot = bank.snapshot()
    feats = BaseReport.project(params, dataset.samples[ids])
    tables: List[CoefficientTable] = []
    for sample_id, z in zip(ids, feats):
        nbrs = snapshot.query_neighbors(z, int(dataset.labels[sample_id]), config.top_n)
        rows: List[CoefficientRow] = []
        if nbrs.num_positives:
            _, coeffs = supcon_in_grad(z, nbrs, config.tau_sup)
            pos_sims = np.clip(nbrs.positives @ z, -1.0, 1.0)
            neg_sims = np.clip(nbrs.negatives @ z, -1.0, 1.0)
            rows += [
                CoefficientRow(anchor_idx=a, is_positive=True, cos_sim=float(s), alpha=float(c))
                for a, s, c in zip(nbrs.positive_ids, pos_sims, coeffs.alpha_pos)
            ]
            rows += [
                CoefficientRow(anchor_idx=a, is_positive=False, cos_sim=float(s), alpha=float(c))
                for a, s, c in zip(nbrs.negative_ids, neg_sims, coeffs.alpha_neg)
            ]
        else:
            logger.warning(f"sample {sample_id}: no same-label anchors in the bank")
        rows.sort(key=lambda r: (-r.cos_sim, r.anchor_idx))
        tables.append(CoefficientTable(sample_id=sample_id, rows=rows))
    return tables


class CoefficientsReport(BaseReport):
    """How strongly each anchor pulls or pushes a query."""

    name = "coefficients"
    display_name = "Gradient coefficients"
    description = "Per-anchor alpha of the neighbor-contrast gradient, sorted by cosine similarity"
    filename = "coefficients.csv"
    headers = ["sample_id", "anchor_idx", "is_positive", "cos_sim", "alpha"]

    def run(
        self,
        params: ModelParams,
        dataset: Dataset,
        bank: Optional[MemoryBank],
        config: TrainConfig,
        out_path: str,
        sample_ids: Optional[Sequence[int]] = None,
        **kwargs: Any,
    ) -> ReportResult:
        if bank is None:
            raise ValueError("the coefficients report needs a bank dump")
        ids = list(range(min(8, len(dataset)))) if sample_ids is None else list(sample_ids)
        tables = coefficient_report(params, dataset, bank, ids, config)
        write_rows_csv(
            out_path,
            self.headers,
            (
                [t.sample_id, row.anchor_idx, int(row.is_positive), row.cos_sim, row.alpha]
                for t in tables
                for row in t.rows
            ),
        )
        return self.create_result(
            summary=f"{len(tables)} samples, {sum(len(t.rows) for t in tables)} anchor rows",
            output_path=out_path,
            data={"sample_ids": ids, "alpha_sums": [t.alpha_sum for t in tables]},
        )
