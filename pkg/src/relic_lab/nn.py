"""MLP networks and the optimization stack: LARS, warmup-cosine schedule, EMA targets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import AbortStepError, ConfigError, ContractError, ShapeError
from .tensor import Tensor, l2_normalize, relu


@dataclass(frozen=True)
class NetworkSpec:
    """Fully connected relu stack. No activation after the last layer."""

    input_dim: int
    layer_widths: tuple = (64,)
    activation: str = "relu"
    normalize_output: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if self.input_dim <= 0:
            raise ConfigError("input_dim must be positive", ["input_dim"])
        if not self.layer_widths or min(self.layer_widths) <= 0:
            raise ConfigError("layer_widths must be a nonempty list of positive ints", ["layer_widths"])
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}", ["activation"])

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths)

    def weight_shapes(self):
        dims = (self.input_dim,) + self.layer_widths
        return [(dims[i], dims[i + 1]) for i in range(self.n_layers)]


@dataclass
class Parameters:
    """Named arrays ``"{layer}.weight"`` (in x out) and ``"{layer}.bias"``.

    ``momentum`` holds optimizer buffers keyed like ``arrays``.
    """

    arrays: dict
    step: int = 0
    rng_state: dict | None = None
    momentum: dict = field(default_factory=dict)

    def copy(self) -> "Parameters":
        return Parameters(
            {k: v.copy() for k, v in self.arrays.items()},
            self.step,
            None if self.rng_state is None else dict(self.rng_state),
            {k: v.copy() for k, v in self.momentum.items()},
        )

    def leaves(self, requires_grad: bool = True) -> dict:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}

    def n_layers(self) -> int:
        return len({name.split(".")[0] for name in self.arrays})

    def check_against(self, spec: NetworkSpec) -> None:
        for i, shape in enumerate(spec.weight_shapes()):
            w = self.arrays.get(f"{i}.weight")
            b = self.arrays.get(f"{i}.bias")
            if w is None or b is None or w.shape != shape or b.shape != (shape[1],):
                raise ShapeError(f"parameters for layer {i} do not match spec shape {shape}")


def init_parameters(spec: NetworkSpec, seed) -> Parameters:
    """He-style uniform fan-in initialization, zero biases."""
    rng = np.random.default_rng(seed)
    state = rng.bit_generator.state
    arrays = {}
    for i, (fan_in, fan_out) in enumerate(spec.weight_shapes()):
        bound = math.sqrt(6.0 / fan_in)
        arrays[f"{i}.weight"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        arrays[f"{i}.bias"] = np.zeros(fan_out)
    return Parameters(arrays, 0, state)


def zero_parameters(spec: NetworkSpec) -> Parameters:
    arrays = {}
    for i, (fan_in, fan_out) in enumerate(spec.weight_shapes()):
        arrays[f"{i}.weight"] = np.zeros((fan_in, fan_out))
        arrays[f"{i}.bias"] = np.zeros(fan_out)
    return Parameters(arrays)


def encode(params, spec: NetworkSpec, batch) -> Tensor:
    """Forward pass of ``batch`` (N x input_dim) through the network.

    ``params`` is either a :class:`Parameters` (evaluated without gradients) or
    a mapping of name to Tensor, e.g. from :meth:`Parameters.leaves`.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"batch shape {x.shape} does not match input_dim {spec.input_dim}")
    if isinstance(params, Parameters):
        params.check_against(spec)
        tensors = params.leaves(requires_grad=False)
    else:
        tensors = params
    h = x
    for i in range(spec.n_layers):
        h = h @ tensors[f"{i}.weight"] + tensors[f"{i}.bias"]
        if i < spec.n_layers - 1:
            h = relu(h)
    if spec.normalize_output:
        h = l2_normalize(h, axis=1)
    return h


@dataclass(frozen=True)
class OptimizerConfig:
    # The full-scale recipe is base_lr 0.3, batch 4096, 1000 epochs with 10 warmup epochs.
    base_lr: float = 0.3
    batch_size: int = 256
    warmup_steps: int = 100
    total_steps: int = 2000
    weight_decay: float = 1.5e-6
    momentum: float = 0.9
    lars_eta: float = 0.001
    exclude_bias_and_norm: bool = True
    decay_final_layer: bool = True
    trust_clip: float = 10.0

    def __post_init__(self):
        bad = []
        if not self.base_lr > 0:
            bad.append("base_lr")
        if self.batch_size <= 0:
            bad.append("batch_size")
        if self.warmup_steps < 0:
            bad.append("warmup_steps")
        if self.total_steps < 0 or self.warmup_steps > self.total_steps:
            bad.append("total_steps")
        if self.weight_decay < 0:
            bad.append("weight_decay")
        if not 0 <= self.momentum < 1:
            bad.append("momentum")
        if bad:
            raise ConfigError(f"invalid optimizer settings: {', '.join(bad)}", bad)

    @property
    def peak_lr(self) -> float:
        return self.base_lr * self.batch_size / 256.0


def cosine_schedule(step: int, cfg: OptimizerConfig) -> float:
    """Linear warmup to the batch-scaled peak, then half-cosine decay to zero."""
    if not 0 <= step <= cfg.total_steps:
        raise ContractError(f"step {step} outside [0, {cfg.total_steps}]")
    peak = cfg.peak_lr
    if step < cfg.warmup_steps:
        return peak * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    if span == 0:
        return peak
    return peak * 0.5 * (1.0 + math.cos(math.pi * (step - cfg.warmup_steps) / span))


def lars_step(params: Parameters, grads: Mapping, cfg: OptimizerConfig, lr: float) -> Parameters:
    """One LARS update with momentum; returns new parameters with ``step + 1``.

    Biases (when ``exclude_bias_and_norm``) take a plain momentum-SGD step with
    no weight decay. Other tensors scale the momentum direction by the trust
    ratio ``eta * |w| / (|g| + wd * |w|)``, clipped to ``[0, trust_clip]``.
    """
    final = params.n_layers() - 1
    arrays = {}
    momentum = {}
    for name, w in params.arrays.items():
        layer = int(name.split(".")[0])
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        if not np.isfinite(g).all():
            raise AbortStepError(f"non-finite gradient in {name}", layer)
        excluded = cfg.exclude_bias_and_norm and name.endswith(".bias")
        decay = 0.0 if excluded or (layer == final and not cfg.decay_final_layer) else cfg.weight_decay
        direction = g + decay * w
        trust = 1.0
        if not excluded:
            w_norm = float(np.linalg.norm(w))
            g_norm = float(np.linalg.norm(g))
            if w_norm > 0.0 and g_norm > 0.0:
                trust = cfg.lars_eta * w_norm / (g_norm + decay * w_norm)
                trust = min(max(trust, 0.0), cfg.trust_clip)
        v = cfg.momentum * params.momentum.get(name, 0.0) + direction
        momentum[name] = np.asarray(v, dtype=np.float64)
        arrays[name] = w - lr * trust * v
    return Parameters(arrays, params.step + 1, params.rng_state, momentum)


def ema_tau(k: int, K: int, tau_base: float) -> float:
    """Target decay rising from ``tau_base`` at k=0 to 1 at k=K along a cosine."""
    if not 0 <= k <= K:
        raise ContractError(f"EMA step {k} outside [0, {K}]")
    if K == 0:
        return tau_base
    return 1.0 - (1.0 - tau_base) * (math.cos(math.pi * k / K) + 1.0) / 2.0


def ema_update(online: Parameters, target: Parameters, k: int, K: int, tau_base: float) -> Parameters:
    tau = ema_tau(k, K, tau_base)
    arrays = {}
    for name, t in target.arrays.items():
        o = online.arrays.get(name)
        if o is None or o.shape != t.shape:
            raise ShapeError(f"EMA shape mismatch for {name}")
        if tau == 1.0:
            arrays[name] = t.copy()
        elif tau == 0.0:
            arrays[name] = o.copy()
        else:
            arrays[name] = tau * t + (1.0 - tau) * o
    return replace(target, arrays=arrays)
