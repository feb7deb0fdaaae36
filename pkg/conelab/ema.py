"""EMA twin network maintenance and its cosine momentum schedule."""

import math

import numpy as np
from pydantic import BaseModel, Field

from .network import ModelParams
from .numeric import ShapeError


class EmaState(BaseModel):
    base_momentum: float = Field(0.996, ge=0.0, le=1.0)
    total_steps: int = Field(gt=0)


def ema_update(target: ModelParams, source: ModelParams, m: float) -> None:
    """``target <- m * target + (1 - m) * source`` for every parameter, in place.

    ``m == 1`` leaves the target untouched and ``m == 0`` copies the source
    exactly.
    """
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum must lie in [0, 1], got {m}")
    pairs = list(zip(target.named_tensors(), source.named_tensors()))
    if len(target.shapes()) != len(source.shapes()):
        raise ShapeError("parameter trees have different numbers of tensors")
    for (t_name, t_arr), (s_name, s_arr) in pairs:
        if t_name != s_name or t_arr.shape != s_arr.shape:
            raise ShapeError(f"cannot average {t_name}{t_arr.shape} with {s_name}{s_arr.shape}")

    if m == 1.0:
        return
    for (_, t_arr), (_, s_arr) in pairs:
        if m == 0.0:
            np.copyto(t_arr, s_arr)
        else:
            t_arr *= m
            t_arr += (1.0 - m) * s_arr


def momentum_at(state: EmaState, step: int) -> float:
    """Half-cosine ramp from the base momentum at step 0 to 1 at ``total_steps``."""
    if not 0 <= step <= state.total_steps:
        raise ValueError(f"step {step} outside [0, {state.total_steps}]")
    if step == 0:
        return state.base_momentum
    if step == state.total_steps:
        return 1.0
    progress = step / state.total_steps
    cosine = (math.cos(math.pi * progress) + 1.0) / 2.0
    return 1.0 - (1.0 - state.base_momentum) * cosine
