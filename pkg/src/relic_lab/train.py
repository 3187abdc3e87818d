"""Pretraining loop and frozen-encoder feature extraction.

Every random choice at step ``k`` comes from ``SeedSequence([seed, k, view,
shard])``, so a run resumed at step ``k`` replays the uninterrupted run
exactly and the result does not depend on how shards are spread over workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .augment import AugmentationSpec, apply_draws, normalize, sample_draws
from .config import RunConfig
from .datagen import LabeledDataset, deserialize_dataset, generate_content_style
from .errors import AbortStepError, DomainError
from .nn import Parameters, cosine_schedule, ema_tau, ema_update, encode, init_parameters, lars_step
from .objective import ModelSpecs, build_specs, relic_loss
from .tensor import Tape, backward

SHARD_SIZE = 64


def worker_count(single_thread: bool = False) -> int:
    if single_thread:
        return 1
    raw = os.environ.get("RELIC_LAB_THREADS", "")
    if raw.strip():
        return max(1, int(raw))
    return max(1, min(4, os.cpu_count() or 1))


@dataclass
class TrainState:
    online: dict  # network name -> Parameters
    target: dict | None  # EMA copies, or None for a shared target
    step: int = 0


def model_specs(cfg: RunConfig, input_dim: int) -> ModelSpecs:
    return build_specs(input_dim, cfg.model.encoder_widths, cfg.objective, cfg.model.normalize_encoder)


def init_state(cfg: RunConfig, specs: ModelSpecs) -> TrainState:
    online = {}
    for i, (name, spec) in enumerate(specs.networks().items()):
        online[name] = init_parameters(spec, np.random.SeedSequence([cfg.seed, 0xC0FFEE, i]))
    target = None
    if cfg.objective.target_mode == "ema":
        target = {name: Parameters({k: v.copy() for k, v in p.arrays.items()}) for name, p in online.items()}
    return TrainState(online, target, 0)


def load_datasets(cfg: RunConfig):
    """Train and test sets; the test set is rendered from a disjoint seed stream."""
    if cfg.dataset_path:
        train = deserialize_dataset(cfg.dataset_path, "train")
    else:
        train = generate_content_style(cfg.data, np.random.SeedSequence([cfg.seed, 1]))
    test_cfg = replace(cfg.data, samples_per_content=cfg.eval.test_samples_per_content)
    test = generate_content_style(test_cfg, np.random.SeedSequence([cfg.seed, 2]))
    test.split = "test"
    return train, test


def _view_shard(images, spec: AugmentationSpec, seed: int, step: int, view: int, shard: int):
    rng = np.random.default_rng(np.random.SeedSequence([seed, step, view, shard]))
    n, h, w, _ = images.shape
    return apply_draws(images, sample_draws(spec, rng, n, h, w), spec)


def make_views(images: np.ndarray, spec: AugmentationSpec, seed: int, step: int, n_views: int, workers: int = 1):
    """Augmented, flattened views of one batch, computed shard by shard."""
    jobs = []
    for v in range(n_views):
        for s, start in enumerate(range(0, images.shape[0], SHARD_SIZE)):
            jobs.append((v, s, images[start : start + SHARD_SIZE]))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outs = list(pool.map(lambda j: _view_shard(j[2], spec, seed, step, j[0], j[1]), jobs))
    else:
        outs = [_view_shard(j[2], spec, seed, step, j[0], j[1]) for j in jobs]
    views = []
    per_view = len(jobs) // n_views
    for v in range(n_views):
        x = np.concatenate(outs[v * per_view : (v + 1) * per_view])
        views.append(x.reshape(x.shape[0], -1))
    return views


def batch_indices(seed: int, step: int, n: int, batch: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, step, 0xBA7C]))
    return rng.choice(n, size=min(batch, n), replace=False)


def clean_batch(images: np.ndarray, spec: AugmentationSpec) -> np.ndarray:
    x = normalize(images, spec.mean, spec.std)
    return x.reshape(x.shape[0], -1)


def train_step(state: TrainState, train: LabeledDataset, cfg: RunConfig, specs: ModelSpecs, workers: int = 1):
    """One optimizer step; returns ``(new_state, record)``.

    Raises DomainError (non-finite loss) or AbortStepError (non-finite
    gradient) and leaves ``state`` untouched in that case.
    """
    k = state.step
    opt = cfg.optimizer
    idx = batch_indices(cfg.seed, k, len(train), opt.batch_size)
    images = train.images[idx]
    views = make_views(images, cfg.augment, cfg.seed, k, cfg.objective.n_views, workers)
    clean = clean_batch(images, cfg.augment) if cfg.objective.regularizer == "euclidean" else None
    leaves = {name: p.leaves() for name, p in state.online.items()}
    target = None
    if state.target is not None:
        target = {name: p.leaves(requires_grad=False) for name, p in state.target.items()}
    with Tape() as tape:
        loss, diag = relic_loss(views, leaves, specs, cfg.objective, target=target, clean=clean)
    if not math.isfinite(loss.item()):
        raise DomainError(f"non-finite loss at step {k}")
    backward(tape, loss)
    lr = cosine_schedule(k, opt)
    online = {}
    for name, params in state.online.items():
        grads = {key: leaf.adjoint for key, leaf in leaves[name].items()}
        online[name] = lars_step(params, grads, opt, lr)
    new_target = None
    tau = None
    if state.target is not None:
        tau = ema_tau(k, opt.total_steps, cfg.objective.tau_base)
        new_target = {name: ema_update(online[name], state.target[name], k, opt.total_steps, cfg.objective.tau_base) for name in state.target}
    record = {
        "step": k,
        "loss": diag["loss"],
        "contrastive": diag["contrastive"],
        "penalty": diag["penalty"],
        "lr": lr,
        "tau_ema": tau,
    }
    return TrainState(online, new_target, k + 1), record


def pretrain(cfg: RunConfig, train: LabeledDataset, state: TrainState | None = None, stop_after: int | None = None, workers: int = 1, on_record=None, on_checkpoint=None):
    """Run from ``state`` (fresh if None) to ``total_steps`` or ``stop_after`` steps.

    ``on_record(record)`` receives every ``log_every``-th step record and
    ``on_checkpoint(state)`` is called at every ``checkpoint_every`` boundary.
    """
    specs = model_specs(cfg, int(np.prod(train.images.shape[1:])))
    if state is None:
        state = init_state(cfg, specs)
    end = cfg.optimizer.total_steps if stop_after is None else min(cfg.optimizer.total_steps, stop_after)
    while state.step < end:
        try:
            state, record = train_step(state, train, cfg, specs, workers)
        except (DomainError, AbortStepError) as exc:
            exc.last_state = state
            raise
        if on_record is not None and (record["step"] % cfg.eval.log_every == 0 or state.step == cfg.optimizer.total_steps):
            on_record(record)
        if on_checkpoint is not None and state.step % cfg.eval.checkpoint_every == 0:
            on_checkpoint(state)
    return state


def features(state: TrainState, specs: ModelSpecs, images: np.ndarray, spec: AugmentationSpec, batch: int = 512) -> np.ndarray:
    """Frozen encoder outputs for unaugmented images."""
    out = []
    for start in range(0, images.shape[0], batch):
        x = clean_batch(images[start : start + batch], spec)
        out.append(encode(state.online["encoder"], specs.encoder, x).numpy())
    return np.concatenate(out) if out else np.zeros((0, specs.encoder.output_dim))

