"""Adam with bias correction, as an explicit functional update.

Keeping the optimizer state as plain tensors (rather than behind a torch
optimizer object) lets checkpoints capture and restore it exactly, which the
resume-equivalence contract requires.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import NumericError


@dataclass
class AdamState:
    m: list[torch.Tensor]  # first-moment accumulators, one per parameter
    v: list[torch.Tensor]  # second-moment accumulators
    step: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        params = list(params)
        return cls(
            m=[torch.zeros_like(p) for p in params],
            v=[torch.zeros_like(p) for p in params],
        )


def adam_update(
    params,
    grads,
    state: AdamState,
    lr: float,
    beta1: float = 0.5,
    beta2: float = 0.9,
    eps: float = 1e-8,
):
    """One bias-corrected Adam step. Mutates params and state in place and
    returns (params, state).

    First step with gradient g moves each parameter by
    -lr * g / (|g| + eps) since m_hat = g and v_hat = g^2.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params vs {len(grads)} grads")
    for g in grads:
        if not torch.isfinite(g).all():
            raise NumericError("non-finite gradient in adam_update")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.add_(-lr * (m / bc1) / ((v / bc2).sqrt() + eps))
    return params, state
