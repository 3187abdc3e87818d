"""Command-line entry points: gen-data, pretrain, eval, verify, inspect-checkpoint.

Exit codes: 0 success, 1 verification or training failure, 2 configuration
error, 3 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import contextlib
import glob
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as config_mod
from . import metrics, report
from .causal import EnumerationLimits, enumerate_scms, sweep_theorem1
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .datagen import corrupt, deserialize_dataset, generate_content_style, serialize_dataset
from .errors import AbortStepError, ConfigError, ContractError, DomainError, FormatError
from .gradcheck import gradient_suite
from .objective import PRESETS
from .train import features, init_state, load_datasets, model_specs, pretrain, worker_count

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

CONFIG_NAME = "config.ini"
METRICS_NAME = "metrics.jsonl"
TIMINGS_NAME = "timings.jsonl"
EVAL_KINDS = ("linear", "lda", "robust", "variance", "graph")
VERIFY_MODES = ("theorem1-grid", "theorem1-fuzz", "gradient-suite")


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, allow_nan=True)


def _checkpoint_path(run_dir: str, step: int) -> str:
    return os.path.join(run_dir, f"ckpt_{step:07d}.rlck")


def latest_checkpoint(run_dir: str) -> str | None:
    paths = sorted(glob.glob(os.path.join(run_dir, "ckpt_*.rlck")))
    return paths[-1] if paths else None


def read_records(path: str, event: str | None = None) -> list:
    if not os.path.exists(path):
        return []
    with open(path, encoding="utf-8") as fh:
        recs = [json.loads(line) for line in fh if line.strip()]
    return [r for r in recs if event is None or r.get("event") == event]


def _rng_info(cfg: RunConfig, step: int) -> dict:
    return {"scheme": "SeedSequence([seed, step, view, shard])", "seed": cfg.seed, "step": step}


def integrity_problems(run_dir: str) -> list:
    """Missing pieces of a finished run directory."""
    problems = []
    if not os.path.exists(os.path.join(run_dir, CONFIG_NAME)):
        problems.append("resolved config copy")
    if latest_checkpoint(run_dir) is None:
        problems.append("checkpoint")
    if not os.path.exists(os.path.join(run_dir, METRICS_NAME)):
        problems.append("metrics log")
    return problems


# -- pretrain ------------------------------------------------------------------------


def run_pretrain(cfg: RunConfig, workers: int = 1, resume: bool = False, stop_after: int | None = None, quiet: bool = False):
    """Train to completion (or ``stop_after``); returns ``(exit_status, run_dir)``."""
    run_dir = cfg.out_dir
    os.makedirs(run_dir, exist_ok=True)
    config_path = os.path.join(run_dir, CONFIG_NAME)
    metrics_path = os.path.join(run_dir, METRICS_NAME)
    timings_path = os.path.join(run_dir, TIMINGS_NAME)
    digest = cfg.digest()
    train, _ = load_datasets(cfg)

    state = None
    if resume and latest_checkpoint(run_dir) is not None:
        ckpt = load_checkpoint(latest_checkpoint(run_dir))
        if ckpt.config_hash != digest:
            raise ConfigError("config differs from the one the checkpoint was trained with", ["--config"])
        state = ckpt.state
        kept = [r for r in read_records(metrics_path) if r.get("event") == "train" and r["step"] < state.step]
        with open(metrics_path, "w", encoding="utf-8") as fh:
            fh.writelines(_dump(r) + "\n" for r in kept)
    else:
        with open(config_path, "w", encoding="utf-8") as fh:
            fh.write(config_mod.serialize(cfg))
        for path in glob.glob(os.path.join(run_dir, "ckpt_*.rlck")):
            os.remove(path)
        open(metrics_path, "w").close()
        open(timings_path, "w").close()

    start = time.perf_counter()
    log = open(metrics_path, "a", encoding="utf-8")
    timings = open(timings_path, "a", encoding="utf-8")

    def on_record(record):
        log.write(_dump({"event": "train", **record}) + "\n")
        log.flush()
        timings.write(_dump({"step": record["step"], "wall_time": time.perf_counter() - start}) + "\n")

    last_good = {}

    def on_checkpoint(st):
        save_checkpoint(_checkpoint_path(run_dir, st.step), st, digest, _rng_info(cfg, st.step))
        last_good["state"] = st

    specs = model_specs(cfg, int(np.prod(train.images.shape[1:])))
    if state is None:
        state = init_state(cfg, specs)
        on_checkpoint(state)
    status = EXIT_OK
    try:
        state = pretrain(cfg, train, state, stop_after, workers, on_record, on_checkpoint)
        on_checkpoint(state)
    except (DomainError, AbortStepError) as exc:
        good = getattr(exc, "last_state", None)
        if good is not None:
            on_checkpoint(good)
        print(f"training aborted: {exc}; last good state saved at step {good.step if good else '?'}", file=sys.stderr)
        status = EXIT_FAIL
    finally:
        log.close()
        timings.close()

    records = read_records(metrics_path, "train")
    if records:
        report.write_tsv(os.path.join(run_dir, "loss.tsv"), ["step", "loss", "contrastive", "penalty", "lr"], [[r["step"], r["loss"], r["contrastive"], r["penalty"], r["lr"]] for r in records])
        report.loss_curve(records, os.path.join(run_dir, "loss.png"))
    missing = integrity_problems(run_dir)
    if missing:
        print(f"run directory incomplete: missing {', '.join(missing)}", file=sys.stderr)
        status = EXIT_FAIL
    if not quiet:
        print(f"step {state.step}/{cfg.optimizer.total_steps}  run dir {run_dir}")
    return status, run_dir


# -- eval ----------------------------------------------------------------------------


def _load_for_eval(checkpoint: str, cfg: RunConfig | None):
    ckpt = load_checkpoint(checkpoint)
    if cfg is None:
        cfg = config_mod.load(os.path.join(os.path.dirname(os.path.abspath(checkpoint)), CONFIG_NAME))
    if cfg.digest() != ckpt.config_hash:
        raise ConfigError("config does not match the checkpoint's config hash", ["--config"])
    return ckpt, cfg


def run_eval(kind: str, checkpoint: str, cfg: RunConfig | None = None, dataset: str | None = None, out_dir: str | None = None, er: dict | None = None, quiet: bool = False):
    """Evaluate a frozen encoder; appends one record to the metrics log and returns it."""
    if kind not in EVAL_KINDS:
        raise ConfigError(f"unknown eval kind {kind!r}", ["--kind"])
    ckpt, cfg = _load_for_eval(checkpoint, cfg)
    out_dir = out_dir or os.path.dirname(os.path.abspath(checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    train, test = load_datasets(cfg)
    if dataset:
        test = deserialize_dataset(dataset, "test")
    if test.images.shape[1:] != train.images.shape[1:]:
        raise FormatError(f"dataset image shape {test.images.shape[1:]} does not match the encoder input {train.images.shape[1:]}")
    specs = model_specs(cfg, int(np.prod(train.images.shape[1:])))
    state = ckpt.state
    f_test = features(state, specs, test.images, cfg.augment)
    record = {"event": "eval", "kind": kind, "step": ckpt.step}
    tsv, png = report.figure_paths(out_dir, f"eval_{kind}")
    lines = []

    if kind in ("linear", "robust"):
        f_train = features(state, specs, train.images, cfg.augment)
        res = metrics.fit_linear_probe(f_train, train.content, cfg.eval.probe(cfg.seed), f_test, test.content)
        record.update(accuracy=res.accuracy, val_accuracy=res.val_accuracy, probe_lr=res.lr, probe_epoch=res.epoch)
        lines.append(f"linear probe accuracy {res.accuracy:.4f} (val {res.val_accuracy:.4f}, lr {res.lr}, epoch {res.epoch})")
        if kind == "linear":
            pred = res.probe.predict(f_test)
            per_class = {int(k): float(np.mean(pred[test.content == k] == k)) for k in np.unique(test.content)}
            record.update(per_class_accuracy={str(k): v for k, v in per_class.items()})
            report.write_tsv(tsv, ["accuracy", "val_accuracy", "lr", "epoch"], [[res.accuracy, res.val_accuracy, res.lr, res.epoch]])
            report.class_accuracy_bars(per_class, res.accuracy, png)
    if kind == "robust":
        clean_err = 100.0 * (1.0 - res.accuracy)
        errors = {}
        for i, corruption in enumerate(cfg.eval.corruption_kinds):
            row = []
            for s in range(1, 6):
                noisy = corrupt(test.images, corruption, s, np.random.SeedSequence([cfg.seed, 77, i, s]))
                row.append(100.0 * (1.0 - res.probe.accuracy(features(state, specs, noisy, cfg.augment), test.content)))
            errors[corruption] = row
        rob = metrics.mce_rce(metrics.ErrorTable({k: v for k, v in errors.items() if k in metrics.ALEXNET_NORMALIZERS}, clean_err))
        sev = list(cfg.eval.severities)
        increase = float(np.mean([errors[k][s - 1] - clean_err for k in errors for s in sev]))
        record.update(clean_error=clean_err, errors=errors, ce=rob.ce, mce=rob.mce, rce=rob.rce, mrce=rob.mrce, mean_error_increase=increase)
        kinds = list(errors)
        report.write_tsv(tsv, ["severity"] + kinds, [[s] + [errors[k][s - 1] for k in kinds] for s in range(1, 6)])
        report.robustness_curves(errors, clean_err, png)
        lines.append("severity\t" + "\t".join(kinds))
        lines += [f"{s}\t" + "\t".join(f"{errors[k][s - 1]:.2f}" for k in kinds) for s in range(1, 6)]
        lines.append(f"mCE {rob.mce:.2f}  mrCE {rob.mrce:.2f}  mean error increase {increase:.2f} points")
    elif kind == "lda":
        lda = metrics.fisher_lda(f_test, test.content)
        record.update(median=lda.median, pairs={f"{a}->{b}": v for (a, b), v in sorted(lda.pairs.items())}, degenerate=[f"{a}->{b}" for a, b in lda.degenerate])
        report.write_tsv(tsv, ["class", "other", "F", "degenerate"], [[a, b, v, (a, b) in lda.degenerate] for (a, b), v in sorted(lda.pairs.items())])
        report.lda_histogram(lda, png)
        lines.append(f"median F_LDA {lda.median:.6g} over {len(lda.pairs) - len(lda.degenerate)} class pairs")
    elif kind == "variance":
        var = metrics.class_variance(f_test, test.content)
        record.update(per_class={str(k): v for k, v in var.per_class.items()}, mean_per_class=var.mean_per_class, pooled=var.pooled)
        report.write_tsv(tsv, ["class", "sigma_f2"], [[k, v] for k, v in sorted(var.per_class.items())] + [["pooled", var.pooled]])
        report.variance_bars(var.per_class, png)
        lines.append(f"mean per-class sigma_f^2 {var.mean_per_class:.6g}  pooled {var.pooled:.6g}")
    elif kind == "graph":
        pts = f_test[: min(len(f_test), 300)]
        g = metrics.overlap_graph_diagnostics(pts, cfg.eval.graph_radius, er)
        record.update(n_nodes=g.n_nodes, edges=g.edges, connected=g.connected, diameter=g.diameter, er_connectivity=g.er_connectivity)
        report.write_tsv(tsv, ["nodes", "edges", "connected", "diameter", "er_connectivity"], [[g.n_nodes, g.edges, g.connected, g.diameter, g.er_connectivity]])
        report.degree_histogram(metrics.ball_graph(pts, cfg.eval.graph_radius).sum(axis=1), png)
        lines.append(f"overlap graph: {g.n_nodes} nodes, {g.edges} edges, connected={g.connected}, diameter={g.diameter}")
        if g.er_connectivity is not None:
            lines.append(f"G(n, p) connectivity rate {g.er_connectivity:.3f} over {g.er_samples} samples")

    with open(os.path.join(out_dir, METRICS_NAME), "a", encoding="utf-8") as fh:
        fh.write(_dump(record) + "\n")
    if not quiet:
        print("\n".join(lines))
    return record


# -- verify --------------------------------------------------------------------------


def run_verify(mode: str, seed: int = 0, count: int = 100_000, out_dir: str | None = None, limits: EnumerationLimits | None = None, quiet: bool = False):
    """Returns ``(exit_status, summary)``; theorem modes archive any counterexample."""
    if mode not in VERIFY_MODES:
        raise ConfigError(f"unknown verify mode {mode!r}", ["mode"])
    limits = limits or EnumerationLimits()
    if mode == "gradient-suite":
        results = gradient_suite(seed)
        if not quiet:
            for r in results:
                print(f"{r.name:24s} max rel err {r.max_rel_error:.3e}  max abs err {r.max_abs_error:.3e}  {'ok' if r.passed else 'FAIL'}")
        return (EXIT_OK if all(r.passed for r in results) else EXIT_FAIL), results
    stream = enumerate_scms(limits) if mode == "theorem1-grid" else enumerate_scms(limits, seed=seed, count=count)
    summary = sweep_theorem1(stream)
    if summary.counterexamples and out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for i, text in enumerate(summary.counterexamples):
            with open(os.path.join(out_dir, f"counterexample_{i}.scm"), "w", encoding="utf-8") as fh:
                fh.write(text)
    if not quiet:
        print(f"{summary.violations} violations / {summary.models} models checked ({summary.antecedent_true} with invariant proxy, {summary.skipped_cells} undefined cells skipped)")
    return (EXIT_OK if summary.violations == 0 else EXIT_FAIL), summary


# -- argument parsing ----------------------------------------------------------------


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="run config file ([section] key = JSON value)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory (or file for gen-data)")
    parser.add_argument("--single-thread", action="store_true", help="bit-reproducible single-threaded path")
    parser.add_argument("--preset", choices=PRESETS)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--tau", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relic-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic content/style dataset")
    _common(p)
    p.add_argument("--split", choices=("train", "test"), default="train")

    p = sub.add_parser("pretrain", help="train an encoder")
    _common(p)
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in the run directory")
    p.add_argument("--stop-after", type=int, help="stop once this many steps are done")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--kind", choices=EVAL_KINDS, required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", help="RLDS file to use as the test set")
    p.add_argument("--er-n", type=int, help="also sample G(n, c log n / n) graphs")
    p.add_argument("--er-c", type=float, default=2.0)
    p.add_argument("--er-samples", type=int, default=500)

    p = sub.add_parser("verify", help="brute-force checks")
    _common(p)
    p.add_argument("mode", choices=VERIFY_MODES)
    p.add_argument("--count", type=int, default=100_000, help="models sampled in fuzz mode")

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint's header and tensor directory")
    _common(p)
    p.add_argument("path")
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = config_mod.load(args.config) if args.config else RunConfig()
    return config_mod.with_overrides(cfg, args.seed, args.out, args.preset, args.alpha, args.tau)


def _cmd_gen_data(args) -> int:
    cfg = _resolve_config(replace_out(args))
    seed_key = 1 if args.split == "train" else 2
    data_cfg = cfg.data if args.split == "train" else replace(cfg.data, samples_per_content=cfg.eval.test_samples_per_content)
    ds = generate_content_style(data_cfg, np.random.SeedSequence([cfg.seed, seed_key]))
    path = args.out or f"{args.split}.rlds"
    if os.path.dirname(path):
        os.makedirs(os.path.dirname(path), exist_ok=True)
    serialize_dataset(ds, path)
    print(f"wrote {len(ds)} images of shape {ds.images.shape[1:]} to {path}")
    return EXIT_OK


def replace_out(args):
    """gen-data's --out names a file, not the run directory."""
    ns = argparse.Namespace(**vars(args))
    ns.out = None
    return ns


def _cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    status, _ = run_pretrain(cfg, worker_count(args.single_thread), args.resume, args.stop_after)
    return status


def _cmd_eval(args) -> int:
    cfg = None
    if args.config or any(v is not None for v in (args.seed, args.preset, args.alpha, args.tau)):
        base = config_mod.load(args.config) if args.config else _load_for_eval(args.checkpoint, None)[1]
        cfg = config_mod.with_overrides(base, args.seed, None, args.preset, args.alpha, args.tau)
    er = None
    if args.er_n is not None:
        er = {"n": args.er_n, "c": args.er_c, "samples": args.er_samples, "seed": args.seed or 0}
    run_eval(args.kind, args.checkpoint, cfg, args.dataset, args.out, er)
    return EXIT_OK


def _cmd_verify(args) -> int:
    status, _ = run_verify(args.mode, args.seed or 0, args.count, args.out)
    return status


def _cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.path)
    print(f"version {ckpt.version}\nstep {ckpt.step}\nconfig sha256 {ckpt.config_hash.hex()}")
    rows = []
    for net, params in ckpt.state.online.items():
        rows += [(f"online/{net}/{k}", v.shape) for k, v in params.arrays.items()]
        rows += [(f"momentum/{net}/{k}", v.shape) for k, v in params.momentum.items()]
    for net, params in (ckpt.state.target or {}).items():
        rows += [(f"target/{net}/{k}", v.shape) for k, v in params.arrays.items()]
    for name, shape in rows:
        print(f"{name}\t{'x'.join(map(str, shape))}")
    print(f"rng {json.dumps(ckpt.rng, sort_keys=True)}")
    return EXIT_OK


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "pretrain": _cmd_pretrain,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
    "inspect-checkpoint": _cmd_inspect,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    limit = threadpool_limits(1) if args.single_thread else contextlib.nullcontext()
    try:
        with limit:
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        keys = f" (keys: {', '.join(exc.keys)})" if exc.keys else ""
        print(f"config error: {exc}{keys}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
