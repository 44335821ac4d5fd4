"""Decentralized momentum SGD steps and the step-decay learning rate rule.

Two update families share the gossip machinery:

* dsgdm_step: local heavy-ball (optionally Nesterov) momentum, a gradient
  half-step, then mixing of the half-stepped parameters received from
  neighbors.
* qgm_step: quasi-global momentum. Parameters are mixed as exchanged at the
  start of the round, the buffer blends into the gradient, and a second
  slow buffer tracks the realized per-round displacement instead of raw
  gradients, which keeps momentum meaningful when neighbor gradients
  disagree.

Vector convention for both steps: w_row[0] weighs the agent's own vector and
w_row[k] (k >= 1) weighs neighbor_params[k - 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass
class OptState:
    """Per-agent optimizer buffers; mutated only by the owning agent."""

    momentum: np.ndarray
    displacement: np.ndarray  # slow buffer driven by realized parameter motion
    beta: float = 0.9
    eta: float = 0.1
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {self.beta}")
        if self.eta < 0.0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")


def fresh_state(n_params: int, beta: float, eta: float, gamma: float = 1.0) -> OptState:
    return OptState(np.zeros(n_params), np.zeros(n_params), beta, eta, gamma)


def lr_at(schedule: Sequence[tuple[float, float]], round_k: int, total_rounds: int,
          base_lr: float) -> float:
    """Step-decayed learning rate for round round_k of total_rounds.

    schedule lists (fraction, factor) pairs; once round_k reaches
    fraction * total_rounds the rate is divided by factor. The default
    training schedule [(0.5, 10), (0.75, 10)] gives base, base/10, base/100.
    """
    eta = base_lr
    for fraction, factor in schedule:
        if round_k >= fraction * total_rounds:
            eta /= factor
    return eta


def mix(own: np.ndarray, neighbor_params: Sequence[np.ndarray],
        w_row: Sequence[float]) -> np.ndarray:
    """Weighted average of own and received vectors, folded in listed order."""
    if len(w_row) != len(neighbor_params) + 1:
        raise ValueError(f"w_row has {len(w_row)} weights for {len(neighbor_params)} neighbors + self")
    out = w_row[0] * own
    for wk, vec in zip(w_row[1:], neighbor_params):
        out += wk * vec
    return out


def momentum_half_step(x: np.ndarray, grad: np.ndarray, state: OptState,
                       nesterov: bool = True) -> np.ndarray:
    """Local momentum update and gradient half-step, before any mixing."""
    state.momentum *= state.beta
    state.momentum += grad
    direction = grad + state.beta * state.momentum if nesterov else state.momentum
    return x - state.eta * direction


def dsgdm_step(x: np.ndarray, grad: np.ndarray, state: OptState,
               neighbor_half_params: Sequence[np.ndarray], w_row: Sequence[float],
               nesterov: bool = True) -> np.ndarray:
    """Momentum half-step then gossip over the half-stepped parameters.

    neighbor_half_params must already be the neighbors' post-half-step
    vectors for this round.
    """
    half = momentum_half_step(x, grad, state, nesterov)
    return mix(half, neighbor_half_params, w_row)


def qgm_step(x: np.ndarray, grad: np.ndarray, state: OptState,
             neighbor_params: Sequence[np.ndarray], w_row: Sequence[float]) -> np.ndarray:
    """Quasi-global momentum update over round-start parameters.

    The mixing is damped by gamma: the effective matrix is
    (1 - gamma) I + gamma W. The displacement buffer update divides by eta,
    so at eta = 0 (gossip-only diagnostics) it is left to decay instead.
    """
    prev = state.displacement
    m = state.beta * prev + grad
    mixed = mix(x, neighbor_params, w_row)
    if state.gamma != 1.0:
        mixed = (1.0 - state.gamma) * x + state.gamma * mixed
    x_next = mixed - state.eta * m
    if state.eta != 0.0:
        new_disp = state.beta * prev + (1.0 - state.beta) * (x - x_next) / state.eta
    else:
        new_disp = state.beta * prev
    state.momentum = m
    state.displacement = new_disp
    return x_next
