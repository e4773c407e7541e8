"""Adam with bias correction."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """Optimizer state: step count plus per-parameter moment arrays."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(params: dict, state: AdamState) -> None:
    """One Adam update over every parameter; missing grads count as zero."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data = p.data - update.astype(p.data.dtype)


def state_arrays(state: AdamState, prefix: str) -> dict:
    """Flatten moments for checkpointing."""
    out = {}
    for name, arr in state.m.items():
        out[f"{prefix}.m.{name}"] = arr
    for name, arr in state.v.items():
        out[f"{prefix}.v.{name}"] = arr
    return out


def load_state_arrays(state: AdamState, prefix: str, arrays: dict, step: int) -> None:
    state.step = step
    for name in state.m:
        state.m[name] = np.asarray(arrays[f"{prefix}.m.{name}"],
                                   dtype=state.m[name].dtype).reshape(state.m[name].shape)
        state.v[name] = np.asarray(arrays[f"{prefix}.v.{name}"],
                                   dtype=state.v[name].dtype).reshape(state.v[name].shape)
