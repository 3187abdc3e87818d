"""Finite structural causal models over content, style, observation and targets.

Graph: ``C -> X <- S``, ``C -> Y^R``, ``Y^R -> Y_t`` for every task ``t``, with
``C`` and ``S`` independent. A representation ``f`` maps each observation value
to a code ``z``; invariance asks that ``p^{do(S=s)}(Y | f(X)=z)`` not depend on
``s``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, ContractError, FormatError
from .refine import Partition

ROW_TOL = 1e-12
DEFAULT_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


def _stochastic(name: str, table: np.ndarray) -> np.ndarray:
    table = np.array(table, dtype=np.float64)
    if np.any(table < 0) or not np.all(np.isfinite(table)):
        raise ContractError(f"{name} has negative or non-finite entries")
    if np.any(np.abs(table.sum(axis=-1) - 1.0) > ROW_TOL):
        raise ContractError(f"{name} rows do not sum to 1")
    table.flags.writeable = False
    return table


@dataclass(frozen=True, eq=False)
class DiscreteSCM:
    p_c: np.ndarray  # (|C|,)
    p_s: np.ndarray  # (|S|,)
    p_x_given_cs: np.ndarray  # (|C|, |S|, |X|)
    p_r_given_c: np.ndarray  # (|C|, |Y^R|)
    p_t_given_r: tuple  # per task: (|Y^R|, |Y_t|)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "p_c", _stochastic("P(C)", self.p_c))
        set_(self, "p_s", _stochastic("P(S)", self.p_s))
        set_(self, "p_x_given_cs", _stochastic("P(X|C,S)", self.p_x_given_cs))
        set_(self, "p_r_given_c", _stochastic("P(Y^R|C)", self.p_r_given_c))
        set_(self, "p_t_given_r", tuple(_stochastic(f"P(Y_{t}|Y^R)", m) for t, m in enumerate(self.p_t_given_r)))
        nc, ns = self.p_c.size, self.p_s.size
        if self.p_c.ndim != 1 or self.p_s.ndim != 1:
            raise ContractError("P(C) and P(S) must be vectors")
        if self.p_x_given_cs.ndim != 3 or self.p_x_given_cs.shape[:2] != (nc, ns):
            raise ContractError("P(X|C,S) must have shape (|C|, |S|, |X|)")
        if self.p_r_given_c.ndim != 2 or self.p_r_given_c.shape[0] != nc:
            raise ContractError("P(Y^R|C) must have shape (|C|, |Y^R|)")
        for m in self.p_t_given_r:
            if m.ndim != 2 or m.shape[0] != self.n_r:
                raise ContractError("P(Y_t|Y^R) must have shape (|Y^R|, |Y_t|)")

    @property
    def n_c(self):
        return self.p_c.size

    @property
    def n_s(self):
        return self.p_s.size

    @property
    def n_x(self):
        return self.p_x_given_cs.shape[2]

    @property
    def n_r(self):
        return self.p_r_given_c.shape[1]

    @property
    def task_sizes(self):
        return tuple(m.shape[1] for m in self.p_t_given_r)

    def __eq__(self, other):
        if not isinstance(other, DiscreteSCM):
            return NotImplemented
        return (
            np.array_equal(self.p_c, other.p_c)
            and np.array_equal(self.p_s, other.p_s)
            and np.array_equal(self.p_x_given_cs, other.p_x_given_cs)
            and np.array_equal(self.p_r_given_c, other.p_r_given_c)
            and len(self.p_t_given_r) == len(other.p_t_given_r)
            and all(np.array_equal(a, b) for a, b in zip(self.p_t_given_r, other.p_t_given_r))
        )

    __hash__ = None

    def to_text(self) -> str:
        """Structured text block; :meth:`from_text` inverts it exactly."""
        lines = [
            "scm v1",
            f"sizes C={self.n_c} S={self.n_s} X={self.n_x} R={self.n_r} T={','.join(map(str, self.task_sizes))}",
            "p_c: " + _fmt(self.p_c),
            "p_s: " + _fmt(self.p_s),
            "p_x_given_cs: " + _fmt(self.p_x_given_cs),
            "p_r_given_c: " + _fmt(self.p_r_given_c),
        ]
        lines += [f"p_t_given_r[{t}]: " + _fmt(m) for t, m in enumerate(self.p_t_given_r)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DiscreteSCM":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if not lines or lines[0].strip() != "scm v1":
            raise FormatError("expected header 'scm v1'")
        try:
            sizes = dict(tok.split("=") for tok in lines[1].split()[1:])
            nc, ns, nx, nr = (int(sizes[k]) for k in "CSXR")
            nts = [int(v) for v in sizes["T"].split(",") if v]
            fields_ = dict(ln.split(":", 1) for ln in lines[2:])

            def vec(key, shape):
                return np.array([float(v) for v in fields_[key].split()]).reshape(shape)

            return cls(
                vec("p_c", (nc,)),
                vec("p_s", (ns,)),
                vec("p_x_given_cs", (nc, ns, nx)),
                vec("p_r_given_c", (nc, nr)),
                tuple(vec(f"p_t_given_r[{t}]", (nr, k)) for t, k in enumerate(nts)),
            )
        except (KeyError, ValueError, IndexError) as exc:
            raise FormatError(f"malformed SCM block: {exc}") from None


def _fmt(arr) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(arr).reshape(-1))


def task_table(partition: Partition) -> np.ndarray:
    """Deterministic ``P(Y_t | Y^R)`` sending each proxy value to its block."""
    table = np.zeros((partition.ground_size, partition.n_blocks))
    table[np.arange(partition.ground_size), list(partition.block_of)] = 1.0
    return table


def scm_from_partitions(p_c, p_s, p_x_given_cs, p_r_given_c, tasks: Sequence[Partition], labelings=None) -> DiscreteSCM:
    """SCM whose tasks are coarsenings of the proxy variable.

    Each task partitions the ``Y^R`` domain; ``labelings[t]`` optionally
    permutes block ids into task labels.
    """
    tables = []
    for t, part in enumerate(tasks):
        table = task_table(part)
        if labelings is not None:
            table = table[:, np.argsort(labelings[t])]
        tables.append(table)
    return DiscreteSCM(p_c, p_s, p_x_given_cs, p_r_given_c, tuple(tables))


def as_representation(f, n_x: int) -> np.ndarray:
    f = np.asarray(f, dtype=np.int64).reshape(-1)
    if f.size != n_x or (f.size and f.min() < 0):
        raise ContractError(f"representation must map all {n_x} observation values to codes >= 0")
    return f


@dataclass
class Joint:
    """``table[c, x, r, t_1, ..., t_T]`` under a style intervention."""

    table: np.ndarray
    style: int

    def total(self) -> float:
        return float(self.table.sum())


def intervene(scm: DiscreteSCM, s: int) -> Joint:
    """Joint over ``(C, X, Y^R, Y_1..Y_T)`` with ``S`` set to ``s``."""
    if not 0 <= s < scm.n_s:
        raise ContractError(f"style {s} outside domain of size {scm.n_s}")
    joint = scm.p_c[:, None, None] * scm.p_x_given_cs[:, s, :, None] * scm.p_r_given_c[:, None, :]
    for m in scm.p_t_given_r:
        joint = joint[..., None] * m.reshape((1, 1, scm.n_r) + (1,) * (joint.ndim - 3) + (m.shape[1],))
    return Joint(joint, s)


def _code_onehot(f: np.ndarray, n_z: int) -> np.ndarray:
    onehot = np.zeros((f.size, n_z))
    onehot[np.arange(f.size), f] = 1.0
    return onehot


def target_given_code(scm: DiscreteSCM, f, target="R", n_z: int | None = None):
    """``(joint[s, z, y], mass[s, z])`` for the chosen target under every intervention.

    ``target`` is ``"R"`` for the proxy variable or a task index.
    """
    f = as_representation(f, scm.n_x)
    n_z = int(f.max()) + 1 if n_z is None else n_z
    # a[s, c, z] = P(f(X) = z | C = c, do(S = s))
    a = np.einsum("csx,xz->scz", scm.p_x_given_cs, _code_onehot(f, n_z))
    joint = np.einsum("c,scz,cr->szr", scm.p_c, a, scm.p_r_given_c)
    if target != "R":
        joint = joint @ scm.p_t_given_r[int(target)]
    return joint, joint.sum(axis=2)


@dataclass
class InvarianceReport:
    invariant: bool
    max_difference: float
    compared_cells: int
    skipped_cells: int


def _conditionals(scm: DiscreteSCM, f, target="R"):
    joint, mass = target_given_code(scm, f, target)
    defined = mass > 0
    cond = joint / np.where(defined, mass, 1.0)[..., None]
    return cond, defined


def _spread(cond: np.ndarray, defined: np.ndarray, tol: float) -> InvarianceReport:
    """Largest across-style gap of ``cond[s, z, y]`` over cells defined on both sides."""
    used = defined.any(axis=0)
    if not used.any():
        return InvarianceReport(True, 0.0, 0, 0)
    mask = defined[:, used, None]
    hi = np.where(mask, cond[:, used], -np.inf).max(axis=0)
    lo = np.where(mask, cond[:, used], np.inf).min(axis=0)
    max_diff = float((hi - lo).max())
    compared = int(defined[:, used].sum())
    return InvarianceReport(max_diff <= tol, max_diff, compared, int(used.sum()) * defined.shape[0] - compared)


def invariance_report(scm: DiscreteSCM, f, target="R", tol: float = 1e-9) -> InvarianceReport:
    """Compare ``p^{do(s)}(target | z)`` across styles wherever both sides are defined.

    A cell ``(s, z)`` with zero mass under ``do(s)`` but positive mass under
    another style is skipped and counted.
    """
    cond, defined = _conditionals(scm, f, target)
    return _spread(cond, defined, tol)


def check_invariant_representation(scm: DiscreteSCM, f, target="R", tol: float = 1e-9) -> bool:
    return invariance_report(scm, f, target, tol).invariant


@dataclass
class Theorem1Report:
    antecedent: bool
    consequent_per_task: list
    violation: bool
    skipped_cells: int
    counterexample: str | None = None


def verify_theorem1(scm: DiscreteSCM, f, tol: float = 1e-9) -> Theorem1Report:
    """Check that invariance for ``Y^R`` implies invariance for every task."""
    cond, defined = _conditionals(scm, f, "R")
    ante = _spread(cond, defined, tol)
    # Y_t depends on X only through Y^R, so p(Y_t | z) = p(Y^R | z) P(Y_t | Y^R)
    cons = [_spread(cond @ m, defined, tol) for m in scm.p_t_given_r]
    violation = ante.invariant and not all(c.invariant for c in cons)
    counterexample = None
    if violation:
        counterexample = scm.to_text() + "f: " + " ".join(map(str, as_representation(f, scm.n_x))) + "\n"
    skipped = ante.skipped_cells + sum(c.skipped_cells for c in cons)
    return Theorem1Report(ante.invariant, [c.invariant for c in cons], violation, skipped, counterexample)


# -- enumeration ---------------------------------------------------------------------


@dataclass(frozen=True)
class EnumerationLimits:
    max_c: int = 3
    max_s: int = 3
    max_r: int = 4
    max_t: int = 3
    max_z: int = 3
    # Per-component caps; a component with more grid options than its cap is
    # visited at an even stride through its lexicographic enumeration.
    cap_p_c: int = 3
    cap_p_r: int = 6
    cap_p_t: int = 6
    cap_f: int = 8

    def __post_init__(self):
        bad = [k for k, v in self.__dict__.items() if v < 1]
        if bad:
            raise ConfigError(f"enumeration limits must be positive: {', '.join(bad)}", bad)


def simplex_points(length: int, grid) -> list:
    """All vectors with entries from ``grid`` summing to 1."""
    pts = []
    for combo in itertools.product(grid, repeat=length):
        total = math.fsum(combo)
        if abs(total - 1.0) <= 1e-9:
            pts.append(tuple(v / total for v in combo))
    return pts


def _strided(seq: Sequence, cap: int) -> list:
    if len(seq) <= cap:
        return list(seq)
    stride = len(seq) / cap
    return [seq[int(i * stride)] for i in range(cap)]


def _tables(rows: int, points: list, cap: int) -> list:
    """Row-stochastic tables with every row from ``points``, capped by striding."""
    total = len(points) ** rows
    if total <= cap:
        idx = range(total)
    else:
        stride = total / cap
        idx = [int(i * stride) for i in range(cap)]
    out = []
    for k in idx:
        digits = []
        for _ in range(rows):
            k, d = divmod(k, len(points))
            digits.append(points[d])
        out.append(np.array(digits[::-1]))
    return out


def _renderings(nc: int, ns: int, grid) -> list:
    """Observation mechanisms on ``X = C x S`` (x = c * |S| + s).

    Mixtures, with grid weights, of the identity rendering with a content-only
    rendering (x = (c, 0)) and with a style-only rendering (x = (0, s)).
    """
    nx = nc * ns
    ident = np.zeros((nc, ns, nx))
    content = np.zeros((nc, ns, nx))
    style = np.zeros((nc, ns, nx))
    for c in range(nc):
        for s in range(ns):
            ident[c, s, c * ns + s] = 1.0
            content[c, s, c * ns] = 1.0
            style[c, s, s] = 1.0
    out = []
    seen = set()
    for other in (content, style):
        for w in grid:
            if not 0.0 <= w <= 1.0:
                continue
            table = w * ident + (1.0 - w) * other
            key = table.tobytes()
            if key not in seen:
                seen.add(key)
                out.append(table)
    return out


def _representations(nc: int, ns: int, nz: int, cap: int) -> list:
    nx = nc * ns
    structured = [
        [0] * nx,
        [(x // ns) % nz for x in range(nx)],
        [(x % ns) % nz for x in range(nx)],
        [((x // ns) + (x % ns)) % nz for x in range(nx)],
    ]
    total = nz**nx
    stride = max(1, total // cap) if total > cap else 1
    strided = []
    for k in range(0, total, stride):
        digits = []
        for _ in range(nx):
            k, d = divmod(k, nz)
            digits.append(d)
        strided.append(digits[::-1])
        if len(strided) >= cap:
            break
    out, seen = [], set()
    for f in structured + strided:
        key = tuple(f)
        if key not in seen:
            seen.add(key)
            out.append(np.array(f, dtype=np.int64))
    return out


def _validate_grid(grid, limits: EnumerationLimits) -> None:
    need = max(limits.max_c, limits.max_s, limits.max_r, limits.max_t)
    for length in range(1, need + 1):
        if not simplex_points(length, grid):
            raise ConfigError(f"no probability vector of length {length} can be built from grid {tuple(grid)}", ["grid"])


def enumerate_scms(limits: EnumerationLimits = EnumerationLimits(), grid=DEFAULT_GRID, seed=None, count: int | None = None) -> Iterator:
    """Stream ``(scm, f)`` pairs.

    With ``seed=None`` the stream is a deterministic grid enumeration over all
    domain sizes up to ``limits`` (observation domain ``C x S``). With a seed,
    ``count`` SCMs are sampled instead (fuzz mode).
    """
    grid = tuple(float(g) for g in grid)
    if seed is not None:
        yield from _fuzz(limits, grid, seed, count if count is not None else 1000)
        return
    _validate_grid(grid, limits)
    for nc, ns, nr, nt, nz in itertools.product(
        range(1, limits.max_c + 1),
        range(1, limits.max_s + 1),
        range(1, limits.max_r + 1),
        range(1, limits.max_t + 1),
        range(1, limits.max_z + 1),
    ):
        p_s = np.full(ns, 1.0 / ns)
        pcs = _strided(simplex_points(nc, grid), limits.cap_p_c)
        r_tables = _tables(nc, simplex_points(nr, grid), limits.cap_p_r)
        t_tables = _tables(nr, simplex_points(nt, grid), limits.cap_p_t)
        renders = _renderings(nc, ns, grid)
        reps = _representations(nc, ns, nz, limits.cap_f)
        for p_c in pcs:
            for px in renders:
                for pr in r_tables:
                    for pt in t_tables:
                        scm = DiscreteSCM(np.array(p_c), p_s, px, pr, (pt,))
                        for f in reps:
                            yield scm, f


def _fuzz(limits: EnumerationLimits, grid, seed, count: int):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        nc = int(rng.integers(1, limits.max_c + 1))
        ns = int(rng.integers(1, limits.max_s + 1))
        nr = int(rng.integers(1, limits.max_r + 1))
        nz = int(rng.integers(1, limits.max_z + 1))
        n_tasks = int(rng.integers(1, 4))
        nx = nc * ns
        p_c = rng.dirichlet(np.ones(nc))
        p_s = rng.dirichlet(np.ones(ns))
        kind = rng.integers(4)
        if kind == 0:
            px = rng.dirichlet(np.ones(nx), size=(nc, ns))
        else:
            base = _renderings(nc, ns, (0.0, 1.0))
            w = rng.random()
            px = w * base[0] + (1 - w) * base[min(int(kind), len(base) - 1)]
        pr = rng.dirichlet(np.ones(nr), size=nc)
        pts = tuple(rng.dirichlet(np.ones(int(rng.integers(1, limits.max_t + 1))), size=nr) for _ in range(n_tasks))
        fkind = rng.integers(4)
        if fkind == 0:
            f = rng.integers(0, nz, size=nx)
        elif fkind == 1:
            f = np.array([(x // ns) % nz for x in range(nx)])
        elif fkind == 2:
            f = np.array([(x % ns) % nz for x in range(nx)])
        else:
            f = np.zeros(nx, dtype=np.int64)
        yield DiscreteSCM(p_c, p_s, px, pr, pts), np.asarray(f, dtype=np.int64)


@dataclass
class SweepSummary:
    models: int = 0
    antecedent_true: int = 0
    violations: int = 0
    skipped_cells: int = 0
    counterexamples: list = field(default_factory=list)


def sweep_theorem1(stream, tol: float = 1e-9, keep: int = 5) -> SweepSummary:
    summary = SweepSummary()
    for scm, f in stream:
        rep = verify_theorem1(scm, f, tol)
        summary.models += 1
        summary.antecedent_true += rep.antecedent
        summary.skipped_cells += rep.skipped_cells
        if rep.violation:
            summary.violations += 1
            if len(summary.counterexamples) < keep:
                summary.counterexamples.append(rep.counterexample)
    return summary
