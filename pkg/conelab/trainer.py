"""Training loop: dual forward passes, loss assembly, SGD, EMA and bank refresh."""

import logging
import math
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from . import losses
from .config import TrainConfig, derive_seed, settings
from .data import Dataset, augment_jitter
from .ema import EmaState, ema_update, momentum_at
from .memory_bank import BankSnapshot, MemoryBank
from .models import LossBreakdown, MetricsRow, NeighborSet
from .network import ForwardTrace, ModelParams, ParamGrads, backward, forward, init_params, is_decayed
from .numeric import Array, SeededRng, cosine_matrix, l2_normalize_rows, stable_softmax
from .utils import write_json, write_models_csv, write_models_jsonl

logger = logging.getLogger(__name__)

METRICS_COLUMNS = list(MetricsRow.model_fields)

# Reference batch size of the linear learning-rate scaling rule.
_LR_REFERENCE_BATCH = 256


class NumericAbort(RuntimeError):
    """A training step produced a non-finite loss or gradient."""

    def __init__(self, message: str, dump_path: Optional[str] = None):
        super().__init__(message)
        self.dump_path = dump_path


class SgdState(BaseModel):
    """Velocity buffers, one per parameter tensor."""

    velocity: ParamGrads

    @classmethod
    def zeros(cls, params: ModelParams) -> "SgdState":
        return cls(velocity=params.zeros_like())


class TrainState(BaseModel):
    params_q: ModelParams
    params_k: ModelParams
    bank: MemoryBank
    sgd: SgdState
    step: int = 0
    total_steps: int = Field(1, gt=0)

    model_config = {"arbitrary_types_allowed": True}

    @classmethod
    def initial(cls, params: ModelParams, config: TrainConfig, total_steps: int) -> "TrainState":
        """Query network ``params``, an exact EMA copy, an empty bank and zero velocity."""
        return cls(
            params_q=params,
            params_k=params.clone(),
            bank=MemoryBank(config.bank_capacity, params.proj_dim, params.num_classes),
            sgd=SgdState.zeros(params),
            total_steps=max(1, total_steps),
        )


class BatchTargets(BaseModel):
    """Everything a batch loss needs besides the query forward pass; all constants."""

    labels: np.ndarray
    neighbors: List[Optional[NeighborSet]] = Field(default_factory=list)
    p_dc: Optional[np.ndarray] = None

    model_config = {"arbitrary_types_allowed": True}


class BatchOutcome(BaseModel):
    breakdown: LossBreakdown
    grad_logits: np.ndarray
    grad_z: np.ndarray
    margin_pos: Optional[float] = None
    margin_neg: Optional[float] = None

    model_config = {"arbitrary_types_allowed": True}


def peak_lr(config: TrainConfig) -> float:
    return config.base_lr * config.batch_size / _LR_REFERENCE_BATCH


def warmup_steps(config: TrainConfig, total_steps: int) -> int:
    if config.epochs == 0:
        return 0
    return int(round(total_steps * min(config.warmup_epochs, config.epochs) / config.epochs))


def lr_at(config: TrainConfig, step: int, total_steps: int) -> float:
    """Linear warmup to the peak rate, then half-cosine decay to zero at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    peak = peak_lr(config)
    warm = warmup_steps(config, total_steps)
    if step < warm:
        return peak * step / warm
    if step == warm or total_steps == warm:
        return peak
    progress = (step - warm) / (total_steps - warm)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def sgd_update(params: ModelParams, grads: ParamGrads, sgd: SgdState, lr: float, config: TrainConfig) -> None:
    """``v = mu * v + g + wd * theta`` (weights only), then ``theta -= lr * v``."""
    tensors = zip(params.named_tensors(), grads.named_tensors(), sgd.velocity.named_tensors())
    for (name, theta), (_, grad), (_, velocity) in tensors:
        velocity *= config.sgd_momentum
        velocity += grad
        if config.weight_decay and is_decayed(name):
            velocity += config.weight_decay * theta
        theta -= lr * velocity


def _uses_contrast(config: TrainConfig) -> bool:
    return config.use_sup_in or config.use_sup_out


def prepare_targets(
    trace_q: ForwardTrace,
    trace_k: ForwardTrace,
    snapshot: BankSnapshot,
    labels: np.ndarray,
    config: TrainConfig,
    view_z: Optional[np.ndarray] = None,
) -> BatchTargets:
    """Neighbor sets for the contrast term and the consistency target, from the bank snapshot.

    ``view_z`` holds EMA features of a second view; row i joins sample i's
    positives.
    """
    neighbors: List[Optional[NeighborSet]] = []
    if _uses_contrast(config):
        for i in range(trace_q.batch_size):
            nbrs = snapshot.query_neighbors(trace_q.z[i], int(labels[i]), config.top_n)
            if view_z is not None:
                nbrs = NeighborSet(
                    positives=np.vstack([nbrs.positives, view_z[i][None, :]]),
                    negatives=nbrs.negatives,
                    positive_ids=nbrs.positive_ids + [-1],
                    negative_ids=nbrs.negative_ids,
                )
            neighbors.append(nbrs)

    p_dc = None
    if config.use_dc and snapshot.count > 0:
        p_instance = losses.dc_instance_dist(trace_k.z, snapshot.features, config.tau_dc)
        p_dc = losses.dc_target(p_instance, snapshot.dists)
    return BatchTargets(labels=np.asarray(labels, dtype=np.int64), neighbors=neighbors, p_dc=p_dc)


def batch_objective(
    trace: ForwardTrace,
    targets: BatchTargets,
    config: TrainConfig,
    track_margins: bool = False,
) -> BatchOutcome:
    """Weighted total loss of one batch and its partials w.r.t. logits and z.

    The contrast term averages over unmasked samples only; the other two
    terms average over the whole batch.
    """
    batch = trace.batch_size
    grad_logits = np.zeros_like(trace.logits)
    grad_z = np.zeros_like(trace.z)

    l_ce = 0.0
    if config.use_ce:
        ce_losses, ce_grads = losses.cross_entropy_batch(trace.logits, targets.labels)
        l_ce = float(np.mean(ce_losses))
        grad_logits += ce_grads / batch

    l_sup, masked = 0.0, 0
    pos_margins: List[float] = []
    neg_margins: List[float] = []
    if targets.neighbors:
        per_sample: List[Optional[float]] = []
        sample_grads: List[Tuple[int, Array]] = []
        for i, nbrs in enumerate(targets.neighbors):
            if nbrs is None or nbrs.num_positives == 0:
                per_sample.append(None)
                continue
            if config.use_sup_out:
                per_sample.append(losses.supcon_out(trace.z[i], nbrs, config.tau_sup))
                sample_grads.append((i, losses.supcon_out_grad(trace.z[i], nbrs, config.tau_sup)))
            else:
                per_sample.append(losses.supcon_in(trace.z[i], nbrs, config.tau_sup))
                grad, _ = losses.supcon_in_grad(trace.z[i], nbrs, config.tau_sup)
                sample_grads.append((i, grad))
            if track_margins and nbrs.num_negatives:
                report = losses.margin_analysis(trace.z[i], nbrs, config.tau_sup)
                pos_margins.append(report.m_pos)
                neg_margins.append(report.m_neg)
        l_sup, masked = losses.masked_mean(per_sample)
        if sample_grads:
            scale = config.lambda_sup / len(sample_grads)
            for i, grad in sample_grads:
                grad_z[i] += scale * grad

    l_dc = 0.0
    if targets.p_dc is not None:
        dc_losses, dc_grads = losses.dc_kl_from_logits(targets.p_dc, trace.logits)
        l_dc = float(np.mean(dc_losses))
        grad_logits += config.lambda_dc * dc_grads / batch

    breakdown = losses.combine(l_ce, l_sup, l_dc, config.lambda_sup, config.lambda_dc, masked_count=masked)
    return BatchOutcome(
        breakdown=breakdown,
        grad_logits=grad_logits,
        grad_z=grad_z,
        margin_pos=float(np.mean(pos_margins)) if pos_margins else None,
        margin_neg=float(np.mean(neg_margins)) if neg_margins else None,
    )


def _dump_abort(step: int, batch: np.ndarray, labels: np.ndarray, detail: dict) -> str:
    path = str(Path(settings.DUMP_DIR) / f"abort_step{step}.json")
    write_json(
        path,
        {
            "step": step,
            "inputs": np.asarray(batch).tolist(),
            "labels": np.asarray(labels).tolist(),
            **detail,
        },
    )
    return path


def _abort(step: int, batch: np.ndarray, labels: np.ndarray, reason: str, detail: dict) -> NumericAbort:
    dump_path = _dump_abort(step, batch, labels, {"reason": reason, **detail})
    logger.error(f"step {step}: {reason}; batch dumped to {dump_path}")
    return NumericAbort(f"step {step}: {reason}", dump_path=dump_path)


def train_step(
    state: TrainState,
    batch: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    view_rng: Optional[SeededRng] = None,
) -> Tuple[BatchOutcome, TrainState]:
    """One optimization step; ``state`` is updated in place and returned.

    Losses are computed against the bank as it stood before this batch; the
    batch's EMA outputs are pushed afterwards.
    """
    x = np.asarray(batch, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    step = state.step

    try:
        trace_q = forward(state.params_q, x)
        trace_k = forward(state.params_k, x)
        view_z = None
        if config.contrastive_view:
            rng = view_rng or SeededRng(derive_seed(config.seed, "augment") + step)
            view_z = forward(state.params_k, augment_jitter(x, config.augment_std, rng)).z
        p_class_k = stable_softmax(trace_k.logits)
        snapshot = state.bank.snapshot()
        targets = prepare_targets(trace_q, trace_k, snapshot, y, config, view_z=view_z)
        outcome = batch_objective(trace_q, targets, config, track_margins=config.track_margins)
    except ArithmeticError as exc:
        raise _abort(step, x, y, str(exc), {}) from exc

    if not (np.all(np.isfinite(outcome.grad_logits)) and np.all(np.isfinite(outcome.grad_z))):
        raise _abort(step, x, y, "non-finite loss gradient", outcome.breakdown.model_dump())

    grads = backward(state.params_q, trace_q, outcome.grad_logits, outcome.grad_z)
    lr = lr_at(config, step, state.total_steps)
    sgd_update(state.params_q, grads, state.sgd, lr, config)
    if not state.params_q.is_finite():
        raise _abort(step, x, y, "parameters became non-finite", outcome.breakdown.model_dump())

    momentum = momentum_at(EmaState(base_momentum=config.ema_base_momentum, total_steps=state.total_steps), step)
    ema_update(state.params_k, state.params_q, momentum)
    state.bank.push_arrays(trace_k.z, p_class_k, y)
    state.step += 1
    logger.debug(
        f"step {step}: total={outcome.breakdown.total:.4f} lr={lr:.4g} m={momentum:.6f} "
        f"masked={outcome.breakdown.masked_count}/{len(y)}"
    )
    return outcome, state


def predict(params: ModelParams, samples: np.ndarray) -> np.ndarray:
    """Argmax of the class logits; ties go to the lowest class index."""
    return np.argmax(forward(params, samples).logits, axis=1)


def evaluate(params: ModelParams, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(params, dataset.samples) == dataset.labels))


def nearest_centroid_accuracy(
    train_feats: np.ndarray,
    train_labels: np.ndarray,
    test_feats: np.ndarray,
    test_labels: np.ndarray,
    num_classes: int,
) -> float:
    """Classify test rows by cosine to the normalized per-class mean of train rows."""
    train_labels = np.asarray(train_labels, dtype=np.int64)
    counts = np.bincount(train_labels, minlength=num_classes)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ValueError(f"class {int(missing[0])} has no training samples for its centroid")
    feats = l2_normalize_rows(train_feats)
    sums = np.zeros((num_classes, feats.shape[1]))
    np.add.at(sums, train_labels, feats)
    centroids = l2_normalize_rows(sums / counts[:, None])
    preds = np.argmax(cosine_matrix(l2_normalize_rows(test_feats), centroids), axis=1)
    return float(np.mean(preds == np.asarray(test_labels)))


def centroid_probe(params: ModelParams, train_set: Dataset, test_set: Dataset) -> float:
    """Nearest-class-mean accuracy of the normalized projections; needs no classifier."""
    return nearest_centroid_accuracy(
        forward(params, train_set.samples).z,
        train_set.labels,
        forward(params, test_set.samples).z,
        test_set.labels,
        train_set.num_classes,
    )


class FitResult(BaseModel):
    params: ModelParams
    state: Optional[TrainState] = None
    metrics: List[MetricsRow] = Field(default_factory=list)

    model_config = {"arbitrary_types_allowed": True}


def initial_params(config: TrainConfig, input_dim: int, num_classes: int) -> ModelParams:
    return init_params(
        [input_dim, *config.hidden_dims],
        config.proj_dims,
        num_classes,
        SeededRng(derive_seed(config.seed, "init")),
        activation=config.activation,
        classifier_on_projection=config.classifier_on_projection,
    )


def fit(
    config: TrainConfig,
    train_set: Dataset,
    test_set: Dataset,
    on_epoch: Optional[Callable[[MetricsRow], None]] = None,
) -> FitResult:
    """Train for ``config.epochs`` epochs; one metrics row per epoch."""
    if len(train_set) == 0 or len(test_set) == 0:
        raise ValueError("train and test sets must be non-empty")
    if train_set.dim != test_set.dim:
        raise ValueError(f"train dim {train_set.dim} differs from test dim {test_set.dim}")

    params = initial_params(config, train_set.dim, train_set.num_classes)
    if config.epochs == 0:
        return FitResult(params=params)

    n = len(train_set)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    state = TrainState.initial(params, config, total_steps)
    shuffle_rng = SeededRng(derive_seed(config.seed, "shuffle"))
    augment_rng = SeededRng(derive_seed(config.seed, "augment"))
    ema_state = EmaState(base_momentum=config.ema_base_momentum, total_steps=state.total_steps)
    logger.info(f"training {config.epochs} epochs x {steps_per_epoch} steps on {n} samples")

    metrics: List[MetricsRow] = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(4)
        masked, seen, weight = 0, 0, 0
        margin_pos: List[float] = []
        margin_neg: List[float] = []
        lr = momentum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x = train_set.samples[idx]
            if config.augment_std > 0:
                x = augment_jitter(x, config.augment_std, augment_rng)
            lr = lr_at(config, state.step, state.total_steps)
            momentum = momentum_at(ema_state, state.step)
            outcome, state = train_step(state, x, train_set.labels[idx], config, view_rng=augment_rng)
            b = outcome.breakdown
            sums += len(idx) * np.array([b.l_ce, b.l_sup, b.l_dc, b.total])
            weight += len(idx)
            if _uses_contrast(config):
                masked += b.masked_count
                seen += len(idx)
            if outcome.margin_pos is not None:
                margin_pos.append(outcome.margin_pos)
                margin_neg.append(outcome.margin_neg)

        means = sums / weight
        row = MetricsRow(
            epoch=epoch,
            step=state.step,
            l_ce=float(means[0]),
            l_sup=float(means[1]),
            l_dc=float(means[2]),
            total=float(means[3]),
            train_acc=evaluate(state.params_q, train_set),
            test_acc=evaluate(state.params_q, test_set),
            lr=lr,
            ema_momentum=momentum,
            masked_fraction=masked / seen if seen else 0.0,
            mean_margin_pos=float(np.mean(margin_pos)) if margin_pos else None,
            mean_margin_neg=float(np.mean(margin_neg)) if margin_neg else None,
        )
        metrics.append(row)
        logger.info(
            f"epoch {epoch}: total={row.total:.4f} train_acc={row.train_acc:.3f} "
            f"test_acc={row.test_acc:.3f} masked={row.masked_fraction:.3f}"
        )
        if on_epoch is not None:
            on_epoch(row)

    return FitResult(params=state.params_q, state=state, metrics=metrics)


def write_metrics(rows: List[MetricsRow], csv_path: str, jsonl_path: str) -> None:
    write_models_csv(csv_path, rows, METRICS_COLUMNS)
    write_models_jsonl(jsonl_path, rows)
