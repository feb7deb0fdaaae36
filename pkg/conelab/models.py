"""Pydantic models shared across the training lab."""

from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field


class NeighborSet(BaseModel):
    """Anchors selected from the memory bank for one query feature.

    ``positive_ids`` / ``negative_ids`` are chronological bank indices
    (0 = oldest entry at query time).
    """

    positives: np.ndarray
    negatives: np.ndarray
    positive_ids: List[int] = Field(default_factory=list)
    negative_ids: List[int] = Field(default_factory=list)

    model_config = {"arbitrary_types_allowed": True}

    @classmethod
    def from_arrays(cls, positives, negatives, dim: Optional[int] = None) -> "NeighborSet":
        pos = np.asarray(positives, dtype=np.float64)
        neg = np.asarray(negatives, dtype=np.float64)
        if dim is None:
            dim = pos.shape[-1] if pos.size else neg.shape[-1]
        pos = pos.reshape(-1, dim)
        neg = neg.reshape(-1, dim)
        return cls(
            positives=pos,
            negatives=neg,
            positive_ids=list(range(pos.shape[0])),
            negative_ids=list(range(pos.shape[0], pos.shape[0] + neg.shape[0])),
        )

    @property
    def num_positives(self) -> int:
        return int(self.positives.shape[0])

    @property
    def num_negatives(self) -> int:
        return int(self.negatives.shape[0])


class CoefficientReport(BaseModel):
    """Per-anchor gradient coefficients and the two similarity mass sums."""

    alpha_pos: List[float]
    alpha_neg: List[float]
    S_p: float
    S_n: float
    log_S_p: float
    log_S_n: float = float("-inf")


class MarginReport(BaseModel):
    """LogSumExp bias decomposition of the neighbor-contrast objective."""

    m_pos: float = Field(ge=0.0)
    m_neg: float = Field(ge=0.0)
    max_pos_sim: float
    max_neg_sim: float
    objective_gap: float


class LossBreakdown(BaseModel):
    """Per-batch loss components and their weighted total."""

    l_ce: float = Field(ge=0.0)
    l_sup: float = Field(ge=0.0)
    l_dc: float = Field(ge=0.0)
    total: float
    masked_count: int = Field(0, ge=0)


class BankEntry(BaseModel):
    """One stored EMA output: feature, class distribution and label."""

    feature: np.ndarray
    class_dist: np.ndarray
    label: int = Field(ge=0)

    model_config = {"arbitrary_types_allowed": True}


class MetricsRow(BaseModel):
    """One logged row of training metrics."""

    epoch: int
    step: int
    l_ce: float
    l_sup: float
    l_dc: float
    total: float
    train_acc: float
    test_acc: float
    lr: float
    ema_momentum: float
    masked_fraction: float
    mean_margin_pos: Optional[float] = None
    mean_margin_neg: Optional[float] = None


class GradCheckReport(BaseModel):
    """Analytic vs central finite-difference comparison."""

    name: str = "model"
    max_rel_error: Dict[str, float] = Field(default_factory=dict)
    tolerance: float
    passed: bool

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


class CoefficientRow(BaseModel):
    """One anchor's contribution to a query's gradient."""

    anchor_idx: int
    is_positive: bool
    cos_sim: float
    alpha: float


class CoefficientTable(BaseModel):
    """Gradient coefficients of one query sample, sorted by similarity."""

    sample_id: int
    rows: List[CoefficientRow] = Field(default_factory=list)

    @property
    def alpha_sum(self) -> float:
        return float(sum(row.alpha for row in self.rows))


class MarginSample(BaseModel):
    sample_id: int
    m_pos: float
    m_neg: float
    pos_count: int
    neg_count: int


class MarginStats(BaseModel):
    """Per-sample LogSumExp biases and their aggregates."""

    samples: List[MarginSample] = Field(default_factory=list)
    skipped: int = 0
    mean_m_pos: Optional[float] = None
    mean_m_neg: Optional[float] = None
    min_m_pos: Optional[float] = None
    max_m_pos: Optional[float] = None
    min_m_neg: Optional[float] = None
    max_m_neg: Optional[float] = None


class ReportResult(BaseModel):
    """Result from a single analysis report."""

    name: str
    display_name: str
    description: str = ""
    summary: str = ""
    output_path: Optional[str] = None
    data: Dict[str, Any] = Field(default_factory=dict)


class RunManifest(BaseModel):
    """Everything needed to reproduce a run, written before training starts."""

    tool_version: str
    config: Dict[str, Any]
    config_hash: str
    seed: int
    sub_seeds: Dict[str, int]
    rng_algorithm: str
    artifacts: Dict[str, str] = Field(default_factory=dict)
    started_at: datetime = Field(default_factory=datetime.utcnow)
    finished_at: Optional[datetime] = None
    status: str = "running"
