from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and a new state.

    Only names present in ``grads`` are updated; the rest are passed through.
    """
    step = state.step + 1
    m_new = dict(state.m)
    v_new = dict(state.v)
    out = dict(params)
    c1 = 1.0 - state.beta1**step
    c2 = 1.0 - state.beta2**step
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch for {name}: param {p.shape}, grad {g.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        elif m.shape != p.shape:
            raise ValueError(f"Adam moment shape mismatch for {name}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        out[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_opt)
        m_new[name] = m
        v_new[name] = v
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps_opt, step, m_new, v_new)
    return out, new_state
