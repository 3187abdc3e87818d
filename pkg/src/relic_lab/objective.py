"""Contrastive proxy-task loss with an invariance penalty across augmentation pairs.

For views ``v_0 .. v_{V-1}`` of a batch, each ordered pair ``(l, k)`` defines a
row-stochastic matrix: anchor ``i`` from view ``l`` (online encoder) scored
against every candidate ``j`` from view ``k`` (target encoder) via the critic
inner product divided by ``tau``. The positive for anchor ``i`` is candidate
``i``. The loss sums the cross entropy over all ordered pairs and adds
``alpha`` times the mean symmetrized KL between the matrices of different
pairs, row by row.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .nn import NetworkSpec, encode
from .tensor import Tensor, clamp_min, l2_normalize, row_log_softmax, transpose

REGULARIZERS = ("kl_symmetric", "euclidean", "predictive_l2", "none")
TARGET_MODES = ("shared", "ema")
PRESETS = ("simclr", "relic", "amdim_style", "byol_style")


@dataclass(frozen=True)
class ObjectiveConfig:
    tau: float = 0.2
    alpha: float = 1.0
    critic_widths: tuple | None = (64, 32)  # None: identity critic
    critic_normalize: bool = True
    predictor_widths: tuple | None = None
    regularizer: str = "kl_symmetric"
    target_mode: str = "shared"
    contrastive: bool = True
    contrast_size: int | None = None  # None: the whole batch
    n_views: int = 2
    prob_floor: float = 1e-12
    tau_base: float = 0.996
    rho_weight: float = 1.0

    def __post_init__(self):
        for name in ("critic_widths", "predictor_widths"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(int(w) for w in v))
        bad = []
        if not self.tau > 0:
            bad.append("tau")
        if not self.alpha >= 0:
            bad.append("alpha")
        if self.regularizer not in REGULARIZERS:
            bad.append("regularizer")
        if self.target_mode not in TARGET_MODES:
            bad.append("target_mode")
        if self.contrast_size is not None and self.contrast_size < 1:
            bad.append("contrast_size")
        if self.n_views < 2:
            bad.append("n_views")
        if not 0 < self.prob_floor < 1:
            bad.append("prob_floor")
        if not 0 <= self.tau_base <= 1:
            bad.append("tau_base")
        if self.regularizer == "predictive_l2" and self.predictor_widths is None:
            bad.append("predictor_widths")
        if bad:
            raise ConfigError(f"invalid objective settings: {', '.join(bad)}", bad)


def preset(name: str, **overrides) -> ObjectiveConfig:
    """Objective settings reproducing a known method as a special case."""
    if name == "simclr":
        cfg = ObjectiveConfig(alpha=0.0, regularizer="none", target_mode="shared")
    elif name == "relic":
        cfg = ObjectiveConfig(alpha=1.0, regularizer="kl_symmetric", target_mode="shared")
    elif name == "amdim_style":
        cfg = ObjectiveConfig(alpha=0.0, critic_widths=None, critic_normalize=False, regularizer="none")
    elif name == "byol_style":
        cfg = ObjectiveConfig(
            alpha=0.0,
            critic_widths=(32,),
            predictor_widths=(32,),
            regularizer="predictive_l2",
            target_mode="ema",
            contrastive=False,
        )
    else:
        raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}", ["preset"])
    return replace(cfg, **overrides) if overrides else cfg


@dataclass(frozen=True)
class ModelSpecs:
    encoder: NetworkSpec
    critic: NetworkSpec | None
    predictor: NetworkSpec | None

    def networks(self) -> dict:
        out = {"encoder": self.encoder}
        if self.critic is not None:
            out["critic"] = self.critic
        if self.predictor is not None:
            out["predictor"] = self.predictor
        return out


def build_specs(input_dim: int, encoder_widths, cfg: ObjectiveConfig, normalize_encoder: bool = False) -> ModelSpecs:
    encoder = NetworkSpec(input_dim, tuple(encoder_widths), normalize_output=normalize_encoder)
    critic = None
    if cfg.critic_widths is not None:
        critic = NetworkSpec(encoder.output_dim, cfg.critic_widths, normalize_output=cfg.critic_normalize)
    predictor = None
    if cfg.predictor_widths is not None:
        rep_dim = critic.output_dim if critic is not None else encoder.output_dim
        predictor = NetworkSpec(rep_dim, cfg.predictor_widths + (rep_dim,), normalize_output=True)
    return ModelSpecs(encoder, critic, predictor)


@dataclass
class ProxyDistribution:
    """Row-stochastic ``N x M`` matrix, stored as log-probabilities on the tape."""

    log_probs: Tensor
    pair: tuple = ()

    @classmethod
    def from_probs(cls, probs, pair=(), floor: float = 1e-12) -> "ProxyDistribution":
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim == 1:
            probs = probs[None, :]
        if np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-10):
            raise ContractError("rows must be nonnegative and sum to 1")
        return cls(Tensor(np.log(np.maximum(probs, floor))), pair)

    @property
    def shape(self) -> tuple:
        return self.log_probs.shape

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.data)


def apply_critic(reps: Tensor, critic, critic_spec: NetworkSpec | None) -> Tensor:
    if critic_spec is None:
        return reps
    return encode(critic, critic_spec, reps)


def proxy_distribution(anchors: Tensor, candidates: Tensor, cfg: ObjectiveConfig, critic=None, critic_spec=None, pair=()) -> ProxyDistribution:
    """Softmax over candidates of critic inner products divided by ``tau``.

    ``anchors`` (N x K) and ``candidates`` (M x K) are encoder outputs; the
    critic (None for identity) is applied to both.
    """
    if not cfg.tau > 0:
        raise ConfigError("tau must be positive", ["tau"])
    anchors = anchors if isinstance(anchors, Tensor) else Tensor(anchors)
    candidates = candidates if isinstance(candidates, Tensor) else Tensor(candidates)
    if anchors.ndim != 2 or candidates.ndim != 2 or anchors.shape[1] != candidates.shape[1]:
        raise ShapeError(f"anchor shape {anchors.shape} and candidate shape {candidates.shape} do not match")
    ga = apply_critic(anchors, critic, critic_spec)
    gh = apply_critic(candidates, critic, critic_spec)
    scores = (ga @ transpose(gh)) * (1.0 / cfg.tau)
    return ProxyDistribution(row_log_softmax(scores), pair)


def _one_hot(positives, n_rows: int, n_cols: int) -> np.ndarray:
    positives = np.asarray(positives, dtype=np.int64).reshape(-1)
    if positives.shape != (n_rows,) or positives.min(initial=0) < 0 or positives.max(initial=0) >= n_cols:
        raise ContractError("one valid positive index per row is required")
    mask = np.zeros((n_rows, n_cols))
    mask[np.arange(n_rows), positives] = 1.0
    return mask


def contrastive_term(dist: ProxyDistribution, positives) -> Tensor:
    """Mean over rows of ``-log p[row, positive]``."""
    n, m = dist.shape
    mask = Tensor._wrap(_one_hot(positives, n, m))
    return -(dist.log_probs * mask).sum() * (1.0 / n)


def _floored_log(dist: ProxyDistribution, floor: float) -> Tensor:
    return clamp_min(dist.log_probs, math.log(floor))


def invariance_penalty(dists, floor: float = 1e-12) -> Tensor:
    """Symmetrized KL, averaged over rows and over unordered pairs of distributions.

    Probabilities are floored at ``floor`` inside the logarithms only.
    """
    dists = list(dists)
    if len(dists) < 2:
        raise ContractError("the invariance penalty needs at least two distributions")
    shape = dists[0].shape
    if any(d.shape != shape for d in dists):
        raise ContractError(f"distribution shapes differ: {[d.shape for d in dists]}")
    n = shape[0]
    total = None
    pairs = list(itertools.combinations(range(len(dists)), 2))
    for a, b in pairs:
        p, q = dists[a], dists[b]
        diff_p = p.log_probs.exp() - q.log_probs.exp()
        diff_log = _floored_log(p, floor) - _floored_log(q, floor)
        # 0.5 * [KL(p|q) + KL(q|p)] = 0.5 * sum (p - q)(log p - log q)
        term = (diff_p * diff_log).sum() * (0.5 / n)
        total = term if total is None else total + term
    return total * (1.0 / len(pairs))


def view_pairs(n_views: int) -> list:
    return [(l, k) for l in range(n_views) for k in range(n_views) if l != k]


def _encoder_outputs(views, params, specs: ModelSpecs, cfg: ObjectiveConfig, target):
    online = [encode(params["encoder"], specs.encoder, v) for v in views]
    if cfg.target_mode == "ema":
        if target is None:
            raise ContractError("target_mode 'ema' needs target parameters")
        tgt = [encode(target["encoder"], specs.encoder, v) for v in views]
    else:
        tgt = online
    return online, tgt


def relic_loss(views, params, specs: ModelSpecs, cfg: ObjectiveConfig, target=None, clean=None):
    """Total loss and a diagnostics dict with the separate terms.

    ``views`` is a list of ``N x D`` arrays (augmented copies of one batch);
    ``params``/``target`` map network names to Tensor dicts. ``clean`` is the
    unaugmented batch, required by the Euclidean regularizer only.
    """
    if len(views) != cfg.n_views:
        raise ContractError(f"expected {cfg.n_views} views, got {len(views)}")
    n = views[0].shape[0]
    m = cfg.contrast_size or n
    if n < 2 or m < 2:
        raise ContractError("the contrast set needs at least two points")
    if m > n:
        raise ContractError(f"contrast_size {m} exceeds batch size {n}")
    views = [v[:m] for v in views]

    if cfg.regularizer == "euclidean":
        if clean is None:
            raise ContractError("the euclidean regularizer needs the clean batch")
        if specs.critic is not None:
            raise ConfigError("the euclidean objective uses an identity critic", ["critic_widths"])
        return euclidean_objective(clean[:m], views, params["encoder"], specs.encoder, cfg.rho_weight)

    if cfg.regularizer == "predictive_l2":
        return _predictive_loss(views, params, specs, cfg, target)

    online, tgt = _encoder_outputs(views, params, specs, cfg, target)
    critic = params.get("critic")
    tgt_critic = (target or {}).get("critic", critic) if cfg.target_mode == "ema" else critic
    positives = np.arange(m)
    dists = []
    contrastive = None
    for l, k in view_pairs(cfg.n_views):
        ga = apply_critic(online[l], critic, specs.critic)
        gh = apply_critic(tgt[k], tgt_critic, specs.critic)
        scores = (ga @ transpose(gh)) * (1.0 / cfg.tau)
        dist = ProxyDistribution(row_log_softmax(scores), (l, k))
        dists.append(dist)
        term = contrastive_term(dist, positives)
        contrastive = term if contrastive is None else contrastive + term

    penalty = invariance_penalty(dists, cfg.prob_floor)
    if cfg.regularizer == "kl_symmetric" and cfg.alpha > 0:
        loss = contrastive + penalty * cfg.alpha
    else:
        loss = contrastive
    diagnostics = {
        "contrastive": contrastive.item(),
        "penalty": penalty.item(),
        "loss": loss.item(),
        "prob_floor": cfg.prob_floor,
    }
    return loss, diagnostics


def _predictive_loss(views, params, specs: ModelSpecs, cfg: ObjectiveConfig, target):
    """Regress the predictor output of one view onto the stopped target projection of the other."""
    online, _ = _encoder_outputs(views, params, specs, replace(cfg, target_mode="shared"), None)
    src = target if cfg.target_mode == "ema" else params
    if src is None:
        raise ContractError("target_mode 'ema' needs target parameters")
    total = None
    n = views[0].shape[0]
    for l, k in view_pairs(cfg.n_views):
        z = apply_critic(online[l], params.get("critic"), specs.critic)
        pred = encode(params["predictor"], specs.predictor, z)
        with_stop = encode(_detached(src["encoder"]), specs.encoder, views[k])
        tz = apply_critic(with_stop, _detached(src.get("critic")), specs.critic)
        tz = l2_normalize(tz.detach(), axis=1)
        diff = pred - tz
        term = (diff * diff).sum() * (1.0 / n)
        total = term if total is None else total + term
    diagnostics = {"contrastive": 0.0, "penalty": total.item(), "loss": total.item(), "prob_floor": cfg.prob_floor}
    return total, diagnostics


def _detached(tensors):
    if tensors is None:
        return None
    return {k: v.detach() for k, v in tensors.items()}


def _row_shift(mat: Tensor, col: Tensor) -> Tensor:
    """``mat[i, j] - col[i]`` using row-vector broadcasting on the transpose."""
    return transpose(transpose(mat) - col)


def euclidean_objective(clean, views, encoder, spec: NetworkSpec, rho_weight: float):
    """Logistic loss on score gaps plus a squared-distance invariance penalty.

    For each ordered view pair ``(l, k)`` and anchor ``i`` the gaps are
    ``f(x_i^l) . (f(x_m^k) - f(x_i^k))`` over negatives ``m != i``, and the
    loss is ``log(1 + sum_m exp(gap_m))``. The penalty is ``rho_weight`` times the
    mean of ``|f(x_i) - f(x_i^k)|^2`` over anchors and views.
    """
    feats = [encode(encoder, spec, v) for v in views]
    base = encode(encoder, spec, clean)
    n = base.shape[0]
    off_diag = Tensor._wrap(1.0 - np.eye(n))
    eye = Tensor._wrap(np.eye(n))
    logistic = None
    for l, k in view_pairs(len(views)):
        scores = feats[l] @ transpose(feats[k])
        positive = (scores * eye).sum(axis=1)
        gaps = _row_shift(scores, positive)
        # log(1 + sum exp(g)) = s + log(exp(-s) + sum exp(g - s)) with s = max(0, max g)
        shift = np.maximum(0.0, np.where(np.eye(n, dtype=bool), -np.inf, gaps.data).max(axis=1))
        shift_t = Tensor._wrap(shift)
        shifted = _row_shift(gaps, shift_t)
        inner = (shifted.exp() * off_diag).sum(axis=1) + Tensor._wrap(np.exp(-shift))
        term = (inner.log() + shift_t).mean()
        logistic = term if logistic is None else logistic + term
    penalty = None
    for f in feats:
        d = base - f
        term = (d * d).sum() * (1.0 / n)
        penalty = term if penalty is None else penalty + term
    penalty = penalty * (1.0 / len(feats))
    loss = logistic + penalty * rho_weight
    return loss, {"contrastive": logistic.item(), "penalty": penalty.item(), "loss": loss.item()}
