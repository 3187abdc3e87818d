"""Central finite-difference checks of tape gradients.

Used by the ``verify gradient-suite`` command and the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import OP_KINDS, Tape, Tensor, backward, forward_op

REL_TOL = 1e-4
ABS_TOL = 1e-7


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    max_abs_error: float
    passed: bool


def numeric_gradient(fn: Callable[[list], float], arrays: Sequence[np.ndarray], h: float = 1e-5):
    """Central differences of the scalar ``fn(arrays)`` w.r.t. every entry."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(arrays)
            flat[i] = orig - h
            down = fn(arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def analytic_gradient(build: Callable[[list], Tensor], arrays: Sequence[np.ndarray]):
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        root = build(leaves)
    backward(tape, root)
    return [leaf.adjoint.copy() for leaf in leaves]


def compare(analytic, numeric, rel_tol=REL_TOL, abs_tol=ABS_TOL):
    """Largest relative and absolute discrepancies, and whether every entry passes.

    An entry passes when its absolute error is within ``abs_tol`` or its error
    relative to the larger magnitude is within ``rel_tol``.
    """
    max_rel = 0.0
    max_abs = 0.0
    ok = True
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        rel = np.where(scale > 0, err / np.where(scale > 0, scale, 1.0), 0.0)
        considered = err > abs_tol
        if considered.any():
            max_rel = max(max_rel, float(rel[considered].max()))
            ok = ok and bool((rel[considered] <= rel_tol).all())
        if err.size:
            max_abs = max(max_abs, float(err.max()))
    return max_rel, max_abs, ok


def check(name: str, build: Callable[[list], Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5) -> GradCheckResult:
    """Compare tape gradients of ``build`` against central differences at ``arrays``."""
    analytic = analytic_gradient(build, arrays)

    def value(arrs):
        return build([Tensor(a) for a in arrs]).item()

    numeric = numeric_gradient(value, arrays, h=h)
    max_rel, max_abs, ok = compare(analytic, numeric)
    return GradCheckResult(name, max_rel, max_abs, ok)


# -- the suite ------------------------------------------------------------------------

KINK_MARGIN = 1e-3


def _near_kink(tape: Tape) -> bool:
    """True when a relu or clamp input sits close enough to its kink to spoil differences."""
    for node in tape.nodes:
        if node.kind == "relu" and np.abs(node.inputs[0].data).min(initial=np.inf) < KINK_MARGIN:
            return True
        if node.kind == "clamp_min":
            gap = np.abs(node.inputs[0].data - node.saved.get("floor", -np.inf))
            if gap.min(initial=np.inf) < KINK_MARGIN:
                return True
    return False


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * Tensor._wrap(weights)).sum()


def _op_case(kind: str, rng: np.random.Generator):
    """``(build, arrays)`` for one random configuration of primitive ``kind``."""
    n, m, k = (int(v) for v in rng.integers(2, 5, size=3))

    def away_from_zero(shape):
        x = rng.normal(size=shape)
        return x + np.sign(x) * 0.1

    if kind in ("add", "sub", "mul", "div"):
        b_shape = [(n, m), (m,), ()][int(rng.integers(3))]
        a = rng.normal(size=(n, m))
        b = away_from_zero(b_shape) + (np.sign(rng.normal(size=b_shape)) * 0.5 if kind == "div" else 0.0)
        w = rng.normal(size=(n, m))
        return (lambda t: _weighted(forward_op(kind, t[0], t[1]), w)), [a, b]
    if kind == "matmul":
        w = rng.normal(size=(n, k))
        return (lambda t: _weighted(t[0] @ t[1], w)), [rng.normal(size=(n, m)), rng.normal(size=(m, k))]
    if kind in ("neg", "relu", "exp", "transpose", "row_softmax", "row_log_softmax"):
        shape = (n, m)
        w = rng.normal(size=(m, n) if kind == "transpose" else shape)
        return (lambda t: _weighted(forward_op(kind, t[0]), w)), [away_from_zero(shape)]
    if kind == "log":
        w = rng.normal(size=(n, m))
        return (lambda t: _weighted(forward_op("log", t[0]), w)), [rng.uniform(0.2, 3.0, size=(n, m))]
    if kind in ("sum", "mean"):
        axis = [None, 0, 1][int(rng.integers(3))]
        out_shape = {None: (), 0: (m,), 1: (n,)}[axis]
        w = rng.normal(size=out_shape)
        return (lambda t: _weighted(forward_op(kind, t[0], axis=axis), w)), [rng.normal(size=(n, m))]
    if kind == "concat_rows":
        w = rng.normal(size=(n + k, m))
        return (lambda t: _weighted(forward_op("concat_rows", t[0], t[1]), w)), [rng.normal(size=(n, m)), rng.normal(size=(k, m))]
    if kind == "clamp_min":
        floor = float(rng.normal())
        w = rng.normal(size=(n, m))
        return (lambda t: _weighted(forward_op("clamp_min", t[0], floor=floor), w)), [rng.normal(size=(n, m))]
    if kind == "l2_normalize":
        axis = int(rng.integers(2))
        w = rng.normal(size=(n, m))
        return (lambda t: _weighted(forward_op("l2_normalize", t[0], axis=axis), w)), [away_from_zero((n, m))]
    raise ValueError(f"no gradient case for op {kind!r}")


LOSS_CASES = ("simclr", "relic", "amdim_style", "byol_style", "euclidean")


def _loss_case(name: str, rng: np.random.Generator):
    from dataclasses import replace

    from .nn import init_parameters
    from .objective import ObjectiveConfig, build_specs, preset, relic_loss

    n = int(rng.integers(3, 6))
    d = int(rng.integers(3, 5))
    tau = float(rng.uniform(0.2, 1.0))
    if name == "euclidean":
        cfg = ObjectiveConfig(tau=tau, critic_widths=None, regularizer="euclidean", rho_weight=float(rng.uniform(0.1, 2.0)))
    elif name == "byol_style":
        cfg = preset(name, critic_widths=(3,), predictor_widths=(3,))
    else:
        cfg = preset(name, tau=tau)
        if cfg.critic_widths is not None:
            cfg = replace(cfg, critic_widths=(3, 3))
        if name == "relic":
            cfg = replace(cfg, alpha=float(rng.uniform(0.5, 2.0)))
    specs = build_specs(d, (4, 3), cfg)
    seed = int(rng.integers(2**31))
    nets = specs.networks()
    params = {net: init_parameters(spec, [seed, i]) for i, (net, spec) in enumerate(nets.items())}
    for p in params.values():
        for key in p.arrays:
            if key.endswith(".bias"):
                p.arrays[key] = rng.normal(scale=0.1, size=p.arrays[key].shape)
    target = None
    if cfg.target_mode == "ema":
        target = {net: init_parameters(spec, [seed, 100 + i]).leaves(False) for i, (net, spec) in enumerate(nets.items())}
    views = [rng.normal(size=(n, d)) for _ in range(cfg.n_views)]
    clean = rng.normal(size=(n, d))
    keys = [(net, key) for net in params for key in params[net].arrays]

    def build(leaves):
        tensors = {net: {} for net in params}
        for (net, key), leaf in zip(keys, leaves):
            tensors[net][key] = leaf
        loss, _ = relic_loss(views, tensors, specs, cfg, target=target, clean=clean)
        return loss

    return build, [params[net].arrays[key] for net, key in keys]


def gradient_suite(seed: int = 0, n_configs: int = 20, ops=None, losses=LOSS_CASES, max_redraws: int = 50) -> list:
    """Finite-difference checks for every primitive and every preset loss.

    Each case is drawn ``n_configs`` times; a draw whose relu or clamp inputs
    lie within ``KINK_MARGIN`` of a kink is redrawn, since central differences
    straddling a kink do not estimate the one-sided derivative.
    """
    ops = OP_KINDS if ops is None else ops
    rng = np.random.default_rng(seed)
    results = []
    cases = [(f"op:{k}", lambda r, k=k: _op_case(k, r)) for k in ops]
    cases += [(f"loss:{name}", lambda r, name=name: _loss_case(name, r)) for name in losses]
    for label, make in cases:
        worst = GradCheckResult(label, 0.0, 0.0, True)
        for _ in range(n_configs):
            for _ in range(max_redraws):
                build, arrays = make(rng)
                leaves = [Tensor(a, requires_grad=True) for a in arrays]
                with Tape() as tape:
                    build(leaves)
                if not _near_kink(tape):
                    break
            res = check(label, build, arrays)
            worst = GradCheckResult(
                label,
                max(worst.max_rel_error, res.max_rel_error),
                max(worst.max_abs_error, res.max_abs_error),
                worst.passed and res.passed,
            )
        results.append(worst)
    return results
