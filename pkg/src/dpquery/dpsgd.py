"""DP-SGD mechanics: per-example clipping, Gaussian noising, optimizer steps.

Noise draws come from numpy's PCG64 generator, a documented deterministic
transform of a seeded 64-bit PRNG; a given seed reproduces the same stream.
The aggregate is normalized by the expected batch size, matching Poisson
subsampling accounting, not by the realized sample count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Gradient, ParamSet

# incremented by privatize_batch; training loops assert that DP-mode optimizer
# steps consume exactly one privatized gradient each
PRIVATIZE_CALLS = 0


def reset_instrumentation() -> None:
    global PRIVATIZE_CALLS
    PRIVATIZE_CALLS = 0


@dataclass
class DpConfig:
    clip_norm: float
    noise_multiplier: float
    expected_batch_size: int
    seed: int = 0

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.noise_multiplier < 0:
            raise ValueError(f"noise_multiplier must be nonnegative, got {self.noise_multiplier}")
        if self.expected_batch_size < 1:
            raise ValueError(f"expected_batch_size must be >= 1, got {self.expected_batch_size}")


def clip_gradient(g: Gradient, clip_norm: float) -> Gradient:
    """Rescale to norm at most clip_norm, preserving direction."""
    if clip_norm <= 0:
        raise ValueError(f"clip_norm must be positive, got {clip_norm}")
    norm = g.l2_norm
    if norm <= clip_norm or norm == 0.0:
        return Gradient({k: v.copy() for k, v in g.values.items()})
    return g.scaled(clip_norm / norm)


def privatize_batch(grads: list[Gradient], config: DpConfig, rng: np.random.Generator) -> Gradient:
    """Clip each gradient, add isotropic Gaussian noise, average by expected batch size.

    Returns (1/B) * (sum_i clip(g_i, C) + z) with z ~ N(0, sigma^2 C^2 I).
    """
    if not grads:
        raise ValueError("privatize_batch needs at least one gradient")
    acc = {k: np.zeros_like(v) for k, v in grads[0].values.items()}
    for g in grads:
        clipped = clip_gradient(g, config.clip_norm)
        for k, v in clipped.values.items():
            acc[k] += v
    scale = config.noise_multiplier * config.clip_norm
    inv_b = 1.0 / config.expected_batch_size
    out = {}
    for k in acc:
        noise = rng.normal(0.0, scale, size=acc[k].shape) if scale > 0 else 0.0
        out[k] = (acc[k] + noise) * inv_b
    global PRIVATIZE_CALLS
    PRIVATIZE_CALLS += 1
    return Gradient(out, privatized=True)


@dataclass
class OptimizerState:
    kind: str  # "sgd" or "adam"
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")


def step(state: OptimizerState, params: ParamSet, grad: Gradient) -> None:
    """Apply one optimizer update in place; increments step_count by one."""
    for name, t in params.items():
        if name not in grad.values:
            raise ValueError(f"gradient missing parameter {name!r}")
        if grad.values[name].shape != t.data.shape:
            raise ValueError(
                f"shape mismatch for {name!r}: param {t.data.shape} vs grad {grad.values[name].shape}"
            )
    state.step_count += 1
    if state.kind == "sgd":
        for name, t in params.items():
            t.data -= state.learning_rate * grad.values[name]
        return
    t_step = state.step_count
    for name, t in params.items():
        g = grad.values[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * (g * g)
        m_hat = state.m[name] / (1 - state.beta1**t_step)
        v_hat = state.v[name] / (1 - state.beta2**t_step)
        t.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps_adam)
