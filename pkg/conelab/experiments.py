"""Multi-seed ablation and hyperparameter sweep runners."""

import logging
from typing import Any, Dict, List, Sequence

import numpy as np
from pydantic import BaseModel

from .config import ConfigError, TrainConfig
from .data import build_datasets
from .trainer import centroid_probe, evaluate, fit

logger = logging.getLogger(__name__)

ABLATION_PRESETS: Dict[str, Dict[str, bool]] = {
    "ce": {"use_ce": True, "use_sup_in": False, "use_sup_out": False, "use_dc": False},
    "ce_sup_in": {"use_ce": True, "use_sup_in": True, "use_sup_out": False, "use_dc": False},
    "ce_sup_out": {"use_ce": True, "use_sup_in": False, "use_sup_out": True, "use_dc": False},
    "cone": {"use_ce": True, "use_sup_in": True, "use_sup_out": False, "use_dc": True},
    "sup_in_only": {"use_ce": False, "use_sup_in": True, "use_sup_out": False, "use_dc": False},
}


class RunScore(BaseModel):
    """Final scores of one training run."""

    label: str
    seed: int
    train_acc: float
    test_acc: float
    probe_acc: float


class ScoreSummary(BaseModel):
    label: str
    runs: int
    mean_test_acc: float
    mean_probe_acc: float


def score_run(label: str, config: TrainConfig) -> RunScore:
    train_set, test_set = build_datasets(config)
    result = fit(config, train_set, test_set)
    score = RunScore(
        label=label,
        seed=config.seed,
        train_acc=evaluate(result.params, train_set),
        test_acc=evaluate(result.params, test_set),
        probe_acc=centroid_probe(result.params, train_set, test_set),
    )
    logger.info(f"{label} seed={config.seed}: test_acc={score.test_acc:.4f} probe_acc={score.probe_acc:.4f}")
    return score


def run_ablation(
    base: TrainConfig,
    presets: Sequence[str] = tuple(ABLATION_PRESETS),
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
) -> List[RunScore]:
    """Train every preset at every seed; presets share the seed's dataset."""
    unknown = [p for p in presets if p not in ABLATION_PRESETS]
    if unknown:
        raise ConfigError(f"unknown ablation preset '{unknown[0]}'; choose from {', '.join(ABLATION_PRESETS)}")
    scores = []
    for seed in seeds:
        for preset in presets:
            scores.append(score_run(preset, base.with_updates(seed=seed, **ABLATION_PRESETS[preset])))
    return scores


def run_sweep(
    base: TrainConfig,
    field: str,
    values: Sequence[Any],
    seeds: Sequence[int] = (0,),
) -> List[RunScore]:
    """One run per (value, seed) with ``field`` set to each value."""
    if field not in TrainConfig.model_fields:
        raise ConfigError(f"unknown config key '{field}'")
    scores = []
    for value in values:
        for seed in seeds:
            config = base.with_updates(seed=seed, **{field: value})
            scores.append(score_run(f"{field}={value}", config))
    return scores


def summarize(scores: Sequence[RunScore]) -> List[ScoreSummary]:
    """Per-label means, labels in first-seen order."""
    labels: List[str] = []
    for score in scores:
        if score.label not in labels:
            labels.append(score.label)
    summary = []
    for label in labels:
        group = [s for s in scores if s.label == label]
        summary.append(
            ScoreSummary(
                label=label,
                runs=len(group),
                mean_test_acc=float(np.mean([s.test_acc for s in group])),
                mean_probe_acc=float(np.mean([s.probe_acc for s in group])),
            )
        )
    return summary
