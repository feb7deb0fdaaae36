"""Finite-difference verification of every analytic gradient in the lab.

Each component compares an analytic gradient with central differences on
random instances and reports the worst relative error. ``GRADIENT_HOOKS``
maps a component name to a function applied to its analytic gradient
before comparison; it is empty in normal use and lets tests inject a bug.
"""

import logging
from typing import Callable, Dict, List, Optional

import numpy as np

from . import losses
from .config import TrainConfig, derive_seed, settings
from .memory_bank import MemoryBank
from .models import GradCheckReport, NeighborSet
from .network import ParamGrads, forward, grad_check, init_params, relative_error
from .numeric import SeededRng, stable_softmax
from .trainer import batch_objective, prepare_targets

logger = logging.getLogger(__name__)

LOSS_TOLERANCE = 1e-6
MODEL_TOLERANCE = 1e-4
TEMPERATURES = (0.05, 0.1, 0.2)

GRADIENT_HOOKS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {}

# Desk-size shapes for the end-to-end check.
_MODEL_INPUT_DIM = 4
_MODEL_HIDDEN = [8, 8]
_MODEL_PROJ = [8, 6]
_MODEL_CLASSES = 3
_MODEL_BATCH = 8
_MODEL_BANK = 24


def _hooked(name: str, grad: np.ndarray) -> np.ndarray:
    hook = GRADIENT_HOOKS.get(name)
    return hook(np.array(grad, copy=True)) if hook else grad


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    """Numeric gradient of a scalar function of one array."""
    point = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(point)
    flat, out = point.reshape(-1), grad.reshape(-1)
    for idx in range(flat.size):
        original = flat[idx]
        flat[idx] = original + step
        plus = fn(point)
        flat[idx] = original - step
        minus = fn(point)
        flat[idx] = original
        out[idx] = (plus - minus) / (2.0 * step)
    return grad


def random_neighbor_set(rng: SeededRng, dim: int, max_pos: int = 8, max_neg: int = 8) -> NeighborSet:
    n_pos = int(rng.integers(1, max_pos + 1))
    n_neg = int(rng.integers(1, max_neg + 1))
    return NeighborSet.from_arrays(rng.unit_vectors(n_pos, dim), rng.unit_vectors(n_neg, dim), dim=dim)


def _contrast_component(
    name: str,
    loss_fn: Callable,
    grad_fn: Callable,
    instances: int,
    tolerance: float,
    rng: SeededRng,
    step: float,
) -> GradCheckReport:
    worst = 0.0
    for _ in range(instances):
        dim = int(rng.integers(2, 17))
        tau = TEMPERATURES[int(rng.integers(0, len(TEMPERATURES)))]
        nbrs = random_neighbor_set(rng, dim)
        z = rng.unit_vectors(1, dim)[0]
        analytic = _hooked(name, grad_fn(z, nbrs, tau))
        numeric = central_difference(lambda v: loss_fn(v, nbrs, tau), z, step)
        worst = max(worst, relative_error(analytic, numeric))
    return GradCheckReport(name=name, max_rel_error={"z": worst}, tolerance=tolerance, passed=worst <= tolerance)


def check_supcon_in(instances: int, tolerance: float, rng: SeededRng, step: float) -> GradCheckReport:
    return _contrast_component(
        "supcon_in",
        losses.supcon_in,
        lambda z, nbrs, tau: losses.supcon_in_grad(z, nbrs, tau)[0],
        instances,
        tolerance,
        rng,
        step,
    )


def check_supcon_out(instances: int, tolerance: float, rng: SeededRng, step: float) -> GradCheckReport:
    return _contrast_component("supcon_out", losses.supcon_out, losses.supcon_out_grad, instances, tolerance, rng, step)


def _random_simplex(rng: SeededRng, rows: int, cols: int) -> np.ndarray:
    return stable_softmax(np.asarray(rng.normal(0.0, 2.0, (rows, cols))))


def check_cross_entropy(instances: int, tolerance: float, rng: SeededRng, step: float) -> GradCheckReport:
    worst = 0.0
    for _ in range(instances):
        classes = int(rng.integers(2, 8))
        logits = np.asarray(rng.normal(0.0, 3.0, classes))
        label = int(rng.integers(0, classes))
        analytic = _hooked("cross_entropy", losses.cross_entropy(logits, label)[1])
        numeric = central_difference(lambda v: losses.cross_entropy(v, label)[0], logits, step)
        worst = max(worst, relative_error(analytic, numeric))
    return GradCheckReport(
        name="cross_entropy", max_rel_error={"logits": worst}, tolerance=tolerance, passed=worst <= tolerance
    )


def check_dc_kl(instances: int, tolerance: float, rng: SeededRng, step: float) -> GradCheckReport:
    """KL(p_dc || softmax(logits)) differentiated w.r.t. the logits."""
    worst = 0.0
    for _ in range(instances):
        classes = int(rng.integers(2, 8))
        bank_size = int(rng.integers(1, 17))
        p_instance = _random_simplex(rng, 1, bank_size)[0]
        p_dc = losses.dc_target(p_instance, _random_simplex(rng, bank_size, classes))
        logits = np.asarray(rng.normal(0.0, 2.0, classes))
        analytic = _hooked("dc_kl", losses.dc_kl(p_dc, stable_softmax(logits))[1])
        numeric = central_difference(lambda v: losses.dc_kl(p_dc, stable_softmax(v))[0], logits, step)
        worst = max(worst, relative_error(analytic, numeric))
    return GradCheckReport(name="dc_kl", max_rel_error={"logits": worst}, tolerance=tolerance, passed=worst <= tolerance)


def check_model(config: TrainConfig, tolerance: float, rng: SeededRng, step: float) -> GradCheckReport:
    """Full weighted objective through the whole network on a frozen batch and bank."""
    cfg = config.with_updates(hidden_dims=_MODEL_HIDDEN, proj_dims=_MODEL_PROJ, top_n=min(config.top_n, 4))
    params = init_params(
        [_MODEL_INPUT_DIM, *cfg.hidden_dims],
        cfg.proj_dims,
        _MODEL_CLASSES,
        rng,
        activation=cfg.activation,
        classifier_on_projection=cfg.classifier_on_projection,
    )
    ema_params = params.clone()
    for _, arr in ema_params.named_tensors():
        arr += np.asarray(rng.normal(0.0, 0.01, arr.shape))

    bank = MemoryBank(_MODEL_BANK, cfg.proj_dims[1], _MODEL_CLASSES)
    bank.push_arrays(
        rng.unit_vectors(_MODEL_BANK, cfg.proj_dims[1]),
        _random_simplex(rng, _MODEL_BANK, _MODEL_CLASSES),
        np.arange(_MODEL_BANK) % _MODEL_CLASSES,
    )
    batch = np.asarray(rng.normal(0.0, 1.0, (_MODEL_BATCH, _MODEL_INPUT_DIM)))
    labels = np.arange(_MODEL_BATCH) % _MODEL_CLASSES

    trace_k = forward(ema_params, batch)
    view_z = None
    if cfg.contrastive_view:
        view_z = forward(ema_params, batch + np.asarray(rng.normal(0.0, 0.05, batch.shape))).z
    targets = prepare_targets(forward(params, batch), trace_k, bank.snapshot(), labels, cfg, view_z=view_z)

    def loss_fn(trace):
        outcome = batch_objective(trace, targets, cfg)
        return outcome.breakdown.total, outcome.grad_logits, outcome.grad_z

    def grad_hook(grads: ParamGrads) -> None:
        for name, arr in grads.named_tensors():
            arr[...] = _hooked(f"model.{name}", arr)

    return grad_check(params, batch, loss_fn, tolerance, step=step, grad_hook=grad_hook, name="model")


def run_suite(
    config: TrainConfig,
    tolerance: Optional[float] = None,
    instances: Optional[int] = None,
) -> List[GradCheckReport]:
    """Every component check; ``tolerance`` overrides both default tolerances."""
    count = settings.GRADCHECK_INSTANCES if instances is None else instances
    step = settings.GRADCHECK_STEP
    rng = SeededRng(derive_seed(config.seed, "gradcheck"))
    loss_tol = LOSS_TOLERANCE if tolerance is None else tolerance
    model_tol = MODEL_TOLERANCE if tolerance is None else tolerance

    reports = [
        check_cross_entropy(count, loss_tol, rng, step),
        check_supcon_in(count, loss_tol, rng, step),
        check_supcon_out(count, loss_tol, rng, step),
        check_dc_kl(count, loss_tol, rng, step),
        check_model(config, model_tol, rng, step),
    ]
    for report in reports:
        status = "ok" if report.passed else "FAIL"
        logger.info(f"gradcheck {report.name}: max relative error {report.worst:.3e} ({status})")
    return reports
