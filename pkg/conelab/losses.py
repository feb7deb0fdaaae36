"""Loss functions and their analytic gradients.

Per-sample functions take one query feature ``z`` and a ``NeighborSet`` of
bank anchors. A query without positive anchors is *masked*: the
neighbor-contrast functions return ``None`` for it and callers leave it out
of the batch mean.
"""

import math
from typing import Optional, Sequence, Tuple

import numpy as np

from .models import CoefficientReport, LossBreakdown, MarginReport, NeighborSet
from .numeric import Array, NonFiniteError, ShapeError, log_softmax, log_sum_exp, stable_softmax


def _check_temperature(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")


def _scaled_sims(z: np.ndarray, nbrs: NeighborSet, tau: float) -> Tuple[Array, Array]:
    _check_temperature(tau)
    query = np.asarray(z, dtype=np.float64)
    for pool, name in ((nbrs.positives, "positive"), (nbrs.negatives, "negative")):
        if pool.size and pool.shape[1] != query.shape[0]:
            raise ShapeError(f"{name} anchors have dim {pool.shape[1]}, query has {query.shape[0]}")
    pos = nbrs.positives @ query / tau if nbrs.num_positives else np.empty(0)
    neg = nbrs.negatives @ query / tau if nbrs.num_negatives else np.empty(0)
    return pos, neg


def cross_entropy(logits: np.ndarray, label: int) -> Tuple[float, Array]:
    """Softmax cross-entropy and its gradient w.r.t. the logits."""
    row = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < row.shape[0]:
        raise ValueError(f"label {label} out of range for {row.shape[0]} classes")
    log_p = log_softmax(row)
    grad = np.exp(log_p)
    grad[label] -= 1.0
    return float(-log_p[label]), grad


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray) -> Tuple[Array, Array]:
    """Row-wise ``cross_entropy``: per-sample losses and the gradient matrix."""
    rows = np.asarray(logits, dtype=np.float64)
    idx = np.asarray(labels, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= rows.shape[1]):
        raise ValueError(f"labels out of range for {rows.shape[1]} classes")
    log_p = log_softmax(rows)
    grads = np.exp(log_p)
    grads[np.arange(rows.shape[0]), idx] -= 1.0
    return -log_p[np.arange(rows.shape[0]), idx], grads


def supcon_in(z: np.ndarray, nbrs: NeighborSet, tau: float) -> Optional[float]:
    """Summation-inside-the-log supervised contrast: ``-log(S_p / (S_p + S_n))``."""
    pos, neg = _scaled_sims(z, nbrs, tau)
    if pos.size == 0:
        return None
    if neg.size == 0:
        return 0.0
    return max(0.0, log_sum_exp(np.concatenate([pos, neg])) - log_sum_exp(pos))


def supcon_in_reformulated(z: np.ndarray, nbrs: NeighborSet, tau: float) -> Optional[float]:
    """The same loss written as ``log(1 + exp(lse_neg - lse_pos))``."""
    pos, neg = _scaled_sims(z, nbrs, tau)
    if pos.size == 0:
        return None
    if neg.size == 0:
        raise ValueError("reformulated objective needs at least one negative anchor")
    return float(np.logaddexp(0.0, log_sum_exp(neg) - log_sum_exp(pos)))


def _saturating_exp(x: float) -> float:
    """``exp(x)`` that saturates to inf instead of raising."""
    with np.errstate(over="ignore"):
        return float(np.exp(x))


def supcon_in_grad(z: np.ndarray, nbrs: NeighborSet, tau: float) -> Optional[Tuple[Array, CoefficientReport]]:
    """``dL/dz`` of ``supcon_in`` together with the per-anchor coefficients.

    ``-dL/dz = (1/tau) * (sum_p alpha_p z_p + sum_n alpha_n z_n)`` where
    ``alpha_p = e_p/S_p - e_p/(S_p + S_n)`` and ``alpha_n = -e_n/(S_p + S_n)``.
    The mass sums saturate to inf for very small tau; ``log_S_p`` and
    ``log_S_n`` stay finite.
    The gradient is taken w.r.t. z as given; the normalization Jacobian is
    applied by the network's backward pass.
    """
    pos, neg = _scaled_sims(z, nbrs, tau)
    if pos.size == 0:
        return None
    dim = np.asarray(z).shape[0]
    if neg.size == 0:
        log_mass_pos = log_sum_exp(pos)
        report = CoefficientReport(
            alpha_pos=[0.0] * pos.size,
            alpha_neg=[],
            S_p=_saturating_exp(log_mass_pos),
            S_n=0.0,
            log_S_p=log_mass_pos,
        )
        return np.zeros(dim), report

    peak = max(np.max(pos), np.max(neg))
    w_pos = np.exp(pos - peak)
    w_neg = np.exp(neg - peak)
    mass_pos = float(np.sum(w_pos))
    mass_neg = float(np.sum(w_neg))
    mass_all = mass_pos + mass_neg
    # e_p/S_p - e_p/(S_p+S_n) rewritten without the cancellation.
    alpha_pos = w_pos * (mass_neg / (mass_pos * mass_all))
    alpha_neg = -w_neg / mass_all

    grad = -(alpha_pos @ nbrs.positives + alpha_neg @ nbrs.negatives) / tau
    log_mass_pos = log_sum_exp(pos)
    log_mass_neg = log_sum_exp(neg)
    report = CoefficientReport(
        alpha_pos=alpha_pos.tolist(),
        alpha_neg=alpha_neg.tolist(),
        S_p=_saturating_exp(log_mass_pos),
        S_n=_saturating_exp(log_mass_neg),
        log_S_p=log_mass_pos,
        log_S_n=log_mass_neg,
    )
    return grad, report


def supcon_out(z: np.ndarray, nbrs: NeighborSet, tau: float) -> Optional[float]:
    """Summation-outside-the-log variant: mean over positives of per-anchor InfoNCE."""
    pos, neg = _scaled_sims(z, nbrs, tau)
    if pos.size == 0:
        return None
    total = log_sum_exp(np.concatenate([pos, neg]))
    return max(0.0, float(np.mean(total - pos)))


def supcon_out_grad(z: np.ndarray, nbrs: NeighborSet, tau: float) -> Optional[Array]:
    """``dL/dz`` of ``supcon_out``."""
    pos, neg = _scaled_sims(z, nbrs, tau)
    if pos.size == 0:
        return None
    anchors = np.concatenate([nbrs.positives, nbrs.negatives])
    weights = stable_softmax(np.concatenate([pos, neg]))
    return (weights @ anchors - nbrs.positives.mean(axis=0)) / tau


def _lse_bias(x: np.ndarray) -> float:
    """``log(sum(exp(x - max(x))))``: the gap between LogSumExp and max."""
    return float(np.log(np.sum(np.exp(x - np.max(x)))))


def margin_analysis(z: np.ndarray, nbrs: NeighborSet, tau: float) -> MarginReport:
    """Split ``supcon_in`` into hardest-anchor terms plus LogSumExp biases.

    ``objective_gap = (max_neg_sim - max_pos_sim)/tau + m_neg - m_pos`` so that
    ``supcon_in == log(1 + exp(objective_gap))``.
    """
    if nbrs.num_positives == 0 or nbrs.num_negatives == 0:
        raise ValueError("margin analysis needs non-empty positive and negative pools")
    pos, neg = _scaled_sims(z, nbrs, tau)
    m_pos = _lse_bias(pos)
    m_neg = _lse_bias(neg)
    query = np.asarray(z, dtype=np.float64)
    max_pos_sim = float(np.max(nbrs.positives @ query))
    max_neg_sim = float(np.max(nbrs.negatives @ query))
    gap = float(np.max(neg) - np.max(pos)) + m_neg - m_pos
    return MarginReport(
        m_pos=m_pos,
        m_neg=m_neg,
        max_pos_sim=max_pos_sim,
        max_neg_sim=max_neg_sim,
        objective_gap=gap,
    )


def dc_class_dist(classifier: np.ndarray, h: np.ndarray) -> Array:
    """Class distribution from class-center logits; ``h`` may be a row or a batch."""
    weights = np.asarray(classifier, dtype=np.float64)
    feats = np.asarray(h, dtype=np.float64)
    if feats.shape[-1] != weights.shape[1]:
        raise ShapeError(f"feature dim {feats.shape[-1]} does not match classifier dim {weights.shape[1]}")
    return stable_softmax(feats @ weights.T)


def dc_instance_dist(z: np.ndarray, bank_feats: np.ndarray, tau_dc: float) -> Array:
    """Softmax over the K bank similarities at temperature ``tau_dc``."""
    _check_temperature(tau_dc)
    bank = np.asarray(bank_feats, dtype=np.float64)
    if bank.ndim != 2 or bank.shape[0] == 0:
        raise ValueError("instance distribution needs a non-empty memory bank")
    query = np.asarray(z, dtype=np.float64)
    if query.shape[-1] != bank.shape[1]:
        raise ShapeError(f"query dim {query.shape[-1]} does not match bank dim {bank.shape[1]}")
    return stable_softmax(query @ bank.T, temperature=tau_dc)


def dc_target(p_instance: np.ndarray, bank_dists: np.ndarray) -> Array:
    """Similarity-weighted mixture of banked class distributions (a constant target)."""
    weights = np.asarray(p_instance, dtype=np.float64)
    dists = np.asarray(bank_dists, dtype=np.float64)
    if dists.ndim != 2 or weights.shape[-1] != dists.shape[0]:
        raise ShapeError(f"p_instance over {weights.shape[-1]} entries cannot mix {dists.shape[0]} bank rows")
    return weights @ dists


def _kl_terms(p_dc: np.ndarray, log_p_class: np.ndarray) -> Array:
    safe = np.where(p_dc > 0.0, p_dc, 1.0)
    return np.where(p_dc > 0.0, p_dc * (np.log(safe) - log_p_class), 0.0)


def dc_kl(p_dc: np.ndarray, p_class: np.ndarray) -> Tuple[float, Array]:
    """``KL(p_dc || p_class)`` and its gradient w.r.t. the logits behind ``p_class``."""
    target = np.asarray(p_dc, dtype=np.float64)
    pred = np.asarray(p_class, dtype=np.float64)
    if target.shape != pred.shape:
        raise ShapeError(f"distribution shapes differ: {target.shape} vs {pred.shape}")
    if np.any(pred <= 0.0):
        raise ValueError("p_class must be strictly positive")
    loss = float(np.sum(_kl_terms(target, np.log(pred))))
    return max(0.0, loss), pred - target


def dc_kl_from_logits(p_dc: np.ndarray, logits: np.ndarray) -> Tuple[Array, Array]:
    """Row-wise KL evaluated through log-softmax; per-row losses and logit gradients."""
    target = np.atleast_2d(np.asarray(p_dc, dtype=np.float64))
    rows = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if target.shape != rows.shape:
        raise ShapeError(f"target shape {target.shape} does not match logits {rows.shape}")
    log_p = log_softmax(rows)
    losses = np.maximum(np.sum(_kl_terms(target, log_p), axis=1), 0.0)
    return losses, np.exp(log_p) - target


def masked_mean(values: Sequence[Optional[float]]) -> Tuple[float, int]:
    """Mean over unmasked entries and the number of masked (``None``) entries."""
    kept = [v for v in values if v is not None]
    masked = len(values) - len(kept)
    if not kept:
        return 0.0, masked
    return float(np.mean(kept)), masked


def combine(
    l_ce: float,
    l_sup: float,
    l_dc: float,
    lambda_sup: float,
    lambda_dc: float,
    masked_count: int = 0,
) -> LossBreakdown:
    """``total = l_ce + lambda_sup * l_sup + lambda_dc * l_dc``."""
    components = {"l_ce": l_ce, "l_sup": l_sup, "l_dc": l_dc}
    for name, value in components.items():
        if not math.isfinite(value):
            raise NonFiniteError(f"{name} is not finite ({value})")
    if lambda_sup < 0 or lambda_dc < 0:
        raise ValueError("loss weights must be non-negative")
    total = l_ce + lambda_sup * l_sup + lambda_dc * l_dc
    return LossBreakdown(l_ce=l_ce, l_sup=l_sup, l_dc=l_dc, total=total, masked_count=masked_count)
