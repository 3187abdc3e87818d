"""Evaluation metrics: linear probe, Fisher LDA ratio, class variance, corruption errors, overlap graphs."""

from __future__ import annotations

import hashlib
import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

# Average AlexNet error across severities for the noise corruptions.
ALEXNET_NORMALIZERS = {"gaussian_noise": 88.6, "shot_noise": 89.4, "impulse_noise": 92.3}
# AlexNet clean top-1 error on ImageNet (from the ImageNet-C benchmark release).
ALEXNET_CLEAN_ERROR = 43.5


# -- linear probe --------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeConfig:
    lrs: tuple = (0.1, 0.5, 2.0)
    epochs: int = 200
    momentum: float = 0.9
    l2: float = 1e-4
    seed: int = 0
    # fractions of rows routed to train / val / test when no test set is given
    split: tuple = (0.6, 0.2, 0.2)


@dataclass
class LinearProbe:
    """A fitted softmax classifier on standardized features."""

    weights: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    classes: np.ndarray

    def predict(self, reps) -> np.ndarray:
        z = (np.asarray(reps, dtype=np.float64) - self.mean) / self.std
        return self.classes[np.argmax(z @ self.weights + self.bias, axis=1)]

    def accuracy(self, reps, labels) -> float:
        labels = np.asarray(labels)
        if labels.size == 0:
            raise ContractError("cannot score an empty set")
        return float(np.mean(self.predict(reps) == labels))


@dataclass
class ProbeResult:
    accuracy: float
    val_accuracy: float
    lr: float
    epoch: int
    n_train: int
    n_val: int
    n_test: int
    probe: LinearProbe


def _bucket(reps: np.ndarray, labels: np.ndarray, seed: int) -> np.ndarray:
    """Uniform value in [0, 1) per row from a hash of its content.

    Identical rows land in the same split, so duplicating the data leaves
    every split's empirical distribution unchanged.
    """
    salt = int(seed).to_bytes(8, "little", signed=True)
    rows = np.ascontiguousarray(reps, dtype=np.float64)
    out = np.empty(rows.shape[0])
    for i in range(rows.shape[0]):
        h = hashlib.blake2b(rows[i].tobytes() + int(labels[i]).to_bytes(8, "little") + salt, digest_size=8)
        out[i] = int.from_bytes(h.digest(), "little") / 2.0**64
    return out


def _fit_softmax(x, y, k, lr, cfg: ProbeConfig, xv, yv):
    """Full-batch gradient descent with momentum; returns the best-val snapshot."""
    n, d = x.shape
    w = np.zeros((d, k))
    b = np.zeros(k)
    vw = np.zeros_like(w)
    vb = np.zeros_like(b)
    onehot = np.eye(k)[y]
    best = (-1.0, 0, w, b)
    for epoch in range(1, cfg.epochs + 1):
        logits = x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        gw = x.T @ g + cfg.l2 * w
        gb = g.sum(axis=0)
        vw = cfg.momentum * vw + gw
        vb = cfg.momentum * vb + gb
        w = w - lr * vw
        b = b - lr * vb
        acc = float(np.mean(np.argmax(xv @ w + b, axis=1) == yv))
        if acc > best[0]:
            best = (acc, epoch, w.copy(), b.copy())
    return best


def fit_linear_probe(reps, labels, cfg: ProbeConfig = ProbeConfig(), test_reps=None, test_labels=None) -> ProbeResult:
    """Multinomial logistic regression on frozen features.

    Rows are split by content hash into train/val/test (or train/val when an
    explicit test set is passed). Each learning rate in ``cfg.lrs`` is run for
    ``cfg.epochs`` full-batch steps; the best validation snapshot is scored on
    the test split.
    """
    reps = np.asarray(reps, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if reps.ndim != 2 or labels.shape != (reps.shape[0],):
        raise ContractError("reps must be N x K with one label per row")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ContractError("linear probe needs at least two classes")
    y_all = np.searchsorted(classes, labels)
    u = _bucket(reps, labels, cfg.seed)
    if test_reps is None:
        tr = u < cfg.split[0]
        va = (u >= cfg.split[0]) & (u < cfg.split[0] + cfg.split[1])
        te = ~(tr | va)
        xt, yt = reps[te], labels[te]
    else:
        frac = cfg.split[0] / (cfg.split[0] + cfg.split[1])
        tr = u < frac
        va = ~tr
        xt = np.asarray(test_reps, dtype=np.float64)
        yt = np.asarray(test_labels).astype(np.int64)
    if not tr.any() or not va.any() or len(yt) == 0:
        raise ContractError("a probe split is empty; provide more rows")
    mean = reps[tr].mean(axis=0)
    std = reps[tr].std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    xtr, xva = (reps[tr] - mean) / std, (reps[va] - mean) / std
    best = None
    for lr in cfg.lrs:
        acc, epoch, w, b = _fit_softmax(xtr, y_all[tr], classes.size, lr, cfg, xva, y_all[va])
        if best is None or acc > best[0]:
            best = (acc, epoch, w, b, lr)
    acc, epoch, w, b, lr = best
    probe = LinearProbe(w, b, mean, std, classes)
    test_acc = probe.accuracy(xt, yt)
    return ProbeResult(test_acc, acc, lr, epoch, int(tr.sum()), int(va.sum()), int(len(yt)), probe)


def linear_probe(reps, labels, cfg: ProbeConfig = ProbeConfig(), test_reps=None, test_labels=None) -> float:
    return fit_linear_probe(reps, labels, cfg, test_reps, test_labels).accuracy


# -- Fisher LDA ----------------------------------------------------------------------


@dataclass
class LdaReport:
    pairs: dict  # (k, k') -> F value, ordered pairs
    degenerate: list  # (k, k') pairs whose denominator is below 1e-12
    median: float

    @property
    def values(self) -> np.ndarray:
        return np.array([v for key, v in sorted(self.pairs.items()) if key not in self.degenerate])


def _class_groups(reps, labels):
    reps = np.asarray(reps, dtype=np.float64)
    labels = np.asarray(labels)
    if reps.ndim != 2 or labels.shape != (reps.shape[0],):
        raise ContractError("reps must be N x K with one label per row")
    return {k: reps[labels == k] for k in np.unique(labels).tolist()}


def fisher_lda(reps, labels) -> LdaReport:
    """Ratio ``|mu_k - mu_k'|^2 / sum_{i<j in k} |f_i - f_j|^2`` for every ordered class pair."""
    groups = _class_groups(reps, labels)
    if len(groups) < 2:
        raise ContractError("fisher_lda needs at least two classes")
    means, spread = {}, {}
    for k, pts in groups.items():
        if pts.shape[0] < 2:
            raise ContractError(f"class {k} has fewer than 2 points")
        means[k] = pts.mean(axis=0)
        # sum over unordered pairs equals N * sum of squared deviations
        spread[k] = pts.shape[0] * float(np.sum((pts - means[k]) ** 2))
    pairs, degenerate = {}, []
    for k in groups:
        for k2 in groups:
            if k == k2:
                continue
            num = float(np.sum((means[k] - means[k2]) ** 2))
            if spread[k] < 1e-12:
                pairs[(k, k2)] = math.inf
                degenerate.append((k, k2))
            else:
                pairs[(k, k2)] = num / spread[k]
    good = [v for key, v in pairs.items() if key not in degenerate]
    return LdaReport(pairs, degenerate, float(np.median(good)) if good else math.nan)


# -- concentration -------------------------------------------------------------------


@dataclass
class VarianceReport:
    per_class: dict
    mean_per_class: float
    pooled: float


def _sigma2(pts: np.ndarray) -> float:
    # (1 / 2N^2) sum_ij |f_i - f_j|^2 == mean squared deviation from the centroid
    return float(np.mean(np.sum((pts - pts.mean(axis=0)) ** 2, axis=1)))


def class_variance(reps, labels) -> VarianceReport:
    groups = _class_groups(reps, labels)
    per = {k: _sigma2(pts) for k, pts in groups.items()}
    return VarianceReport(per, float(np.mean(list(per.values()))), _sigma2(np.asarray(reps, dtype=np.float64)))


# -- corruption robustness -----------------------------------------------------------


@dataclass
class ErrorTable:
    """Top-1 error percentages per corruption kind and severity 1..5."""

    errors: dict  # kind -> 5 errors
    clean: float
    normalizers: dict = field(default_factory=lambda: dict(ALEXNET_NORMALIZERS))
    clean_normalizer: float = ALEXNET_CLEAN_ERROR

    def __post_init__(self):
        for kind, row in self.errors.items():
            if len(row) != 5:
                raise ContractError(f"{kind} needs 5 severities, got {len(row)}")
            if kind not in self.normalizers:
                raise ContractError(f"no normalizer for {kind}")
            if any(not 0 <= e <= 100 for e in row):
                raise ContractError(f"{kind} errors must lie in [0, 100]")
        if not 0 <= self.clean <= 100:
            raise ContractError("clean error must lie in [0, 100]")
        for kind, norm in self.normalizers.items():
            vals = norm if np.ndim(norm) else [norm]
            if any(v <= 0 for v in vals):
                raise ContractError(f"normalizer for {kind} must be positive")

    def normalizer_row(self, kind) -> np.ndarray:
        """Per-severity reference errors; a scalar normalizer is a severity average."""
        norm = self.normalizers[kind]
        return np.full(5, float(norm)) if np.ndim(norm) == 0 else np.asarray(norm, dtype=np.float64)


@dataclass
class RobustnessReport:
    ce: dict
    mce: float
    rce: dict
    mrce: float
    undefined: list


def mce_rce(table: ErrorTable) -> RobustnessReport:
    ce, rce, undefined = {}, {}, []
    for kind, row in table.errors.items():
        row = np.asarray(row, dtype=np.float64)
        norm = table.normalizer_row(kind)
        ce[kind] = float(row.sum() / norm.sum() * 100.0)
        denom = float(np.sum(norm - table.clean_normalizer))
        if denom == 0.0:
            rce[kind] = math.nan
            undefined.append(kind)
            warnings.warn(f"rCE undefined for {kind}: zero reference denominator", RuntimeWarning, stacklevel=2)
        else:
            rce[kind] = float(np.sum(row - table.clean) / denom * 100.0)
    defined = [v for k, v in rce.items() if k not in undefined]
    mce = float(np.mean(list(ce.values()))) if ce else math.nan
    mrce = float(np.mean(defined)) if defined else math.nan
    return RobustnessReport(ce, mce, rce, mrce, undefined)


# -- overlap graphs ------------------------------------------------------------------


@dataclass
class GraphReport:
    n_nodes: int
    edges: int
    connected: bool
    diameter: float  # inf when disconnected
    er_connectivity: float | None = None
    er_samples: int = 0


def ball_graph(points, radius: float) -> np.ndarray:
    """Adjacency of the graph joining points at distance at most ``2 * radius``."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    adj = d2 <= (2.0 * radius) ** 2 * (1 + 1e-12)
    np.fill_diagonal(adj, False)
    return adj


def bfs_eccentricities(adj: np.ndarray) -> np.ndarray:
    """Largest hop distance from every node (inf if some node is unreachable)."""
    n = adj.shape[0]
    nbrs = [np.flatnonzero(adj[i]) for i in range(n)]
    ecc = np.empty(n)
    for src in range(n):
        dist = np.full(n, -1)
        dist[src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        ecc[src] = math.inf if (dist < 0).any() else dist.max()
    return ecc


def graph_diameter(adj: np.ndarray) -> float:
    return float(bfs_eccentricities(adj).max()) if adj.shape[0] else 0.0


def is_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    if n == 0:
        return True
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    frontier = np.array([0])
    while frontier.size:
        nxt = adj[frontier].any(axis=0) & ~seen
        seen |= nxt
        frontier = np.flatnonzero(nxt)
    return bool(seen.all())


def erdos_renyi(n: int, p: float, rng) -> np.ndarray:
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return upper | upper.T


def overlap_graph_diagnostics(points=None, radius: float = 1.0, er_params: dict | None = None) -> GraphReport:
    """Connectivity and diameter of the ``2B``-ball graph, optionally with a G(n, p) check.

    ``er_params`` takes ``n``, ``c`` (so ``p = c log n / n``), ``samples`` and
    ``seed``; the report then carries the empirical connectivity rate.
    """
    if points is None and er_params is None:
        raise ContractError("provide points or er_params")
    report = GraphReport(0, 0, True, 0.0)
    if points is not None:
        adj = ball_graph(points, radius)
        if adj.shape[0] < 2:
            raise ContractError("overlap graph needs at least 2 points")
        report = GraphReport(adj.shape[0], int(adj.sum() // 2), is_connected(adj), graph_diameter(adj))
    if er_params is not None:
        n = int(er_params["n"])
        if n < 2:
            raise ContractError("G(n, p) needs n >= 2")
        p = float(er_params.get("c", 2.0)) * math.log(n) / n
        samples = int(er_params.get("samples", 500))
        rng = np.random.default_rng(er_params.get("seed", 0))
        hits = sum(is_connected(erdos_renyi(n, p, rng)) for _ in range(samples))
        report.er_connectivity = hits / samples
        report.er_samples = samples
    return report
