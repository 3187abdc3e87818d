"""Partitions of ``{0, ..., n-1}`` ordered by fineness.

A partition is stored as ``block_of[i]``, renumbered so blocks appear in order
of first occurrence. Two partitions are equal exactly when they group the same
indices, whatever labels they were built from.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import ContractError, FormatError


def _canonical(labels) -> tuple:
    seen = {}
    return tuple(seen.setdefault(lab, len(seen)) for lab in labels)


@dataclass(frozen=True)
class Partition:
    block_of: tuple

    def __init__(self, labels: Iterable):
        object.__setattr__(self, "block_of", _canonical(labels))

    @classmethod
    def from_blocks(cls, blocks, n: int | None = None) -> "Partition":
        """Build from a collection of disjoint blocks covering ``0..n-1``."""
        blocks = [sorted(b) for b in blocks]
        size = n if n is not None else sum(len(b) for b in blocks)
        labels = [None] * size
        for bid, block in enumerate(blocks):
            for i in block:
                if not 0 <= i < size or labels[i] is not None:
                    raise ContractError(f"blocks do not partition 0..{size - 1}")
                labels[i] = bid
        if any(lab is None for lab in labels):
            raise ContractError(f"blocks do not cover 0..{size - 1}")
        return cls(labels)

    @property
    def ground_size(self) -> int:
        return len(self.block_of)

    @property
    def n_blocks(self) -> int:
        return max(self.block_of) + 1 if self.block_of else 0

    def blocks(self) -> list:
        out = [[] for _ in range(self.n_blocks)]
        for i, b in enumerate(self.block_of):
            out[b].append(i)
        return [frozenset(b) for b in out]

    def __str__(self):
        return f"{self.ground_size}: " + " ".join(str(b) for b in self.block_of)

    @classmethod
    def parse(cls, line: str) -> "Partition":
        """Inverse of ``str``: ``"n: b0 b1 ... b_{n-1}"``."""
        head, sep, body = line.strip().partition(":")
        if not sep:
            raise FormatError(f"partition line lacks ':' separator: {line!r}")
        try:
            n = int(head)
            labels = [int(tok) for tok in body.split()]
        except ValueError:
            raise FormatError(f"non-integer field in partition line {line!r}") from None
        if len(labels) != n:
            raise FormatError(f"partition line declares {n} elements but lists {len(labels)}")
        part = cls(labels)
        if part.block_of != tuple(labels):
            raise FormatError(f"block ids not in first-occurrence order: {line!r}")
        return part


def _same_size(a: Partition, b: Partition) -> None:
    if a.ground_size != b.ground_size:
        raise ContractError(f"ground sizes differ: {a.ground_size} vs {b.ground_size}")


def is_finer(a: Partition, b: Partition) -> bool:
    """True when every block of ``a`` lies inside a single block of ``b``."""
    _same_size(a, b)
    image = {}
    for x, y in zip(a.block_of, b.block_of):
        if image.setdefault(x, y) != y:
            return False
    return True


def meet_refinement(tasks) -> Partition:
    """Coarsest partition finer than every task: blocks are nonempty intersections."""
    tasks = list(tasks)
    if not tasks:
        raise ContractError("meet_refinement needs at least one partition")
    for t in tasks[1:]:
        _same_size(tasks[0], t)
    return Partition(zip(*(t.block_of for t in tasks)))


def instance_discrimination(n: int) -> Partition:
    """The finest partition: every index in its own block."""
    if n < 1:
        raise ContractError("n must be at least 1")
    return Partition(range(n))


def union_decomposition(fine: Partition, coarse: Partition) -> dict:
    """Map each block of ``coarse`` to the ``fine`` blocks whose union it is.

    Raises ContractError when ``fine`` is not finer than ``coarse``.
    """
    if not is_finer(fine, coarse):
        raise ContractError("first partition is not finer than the second")
    fine_blocks = fine.blocks()
    parts = {cb: [] for cb in range(coarse.n_blocks)}
    for fb, block in enumerate(fine_blocks):
        parts[coarse.block_of[min(block)]].append(block)
    return parts


def all_partitions(n: int) -> Iterator[Partition]:
    """Every partition of ``n`` elements, as restricted growth strings."""
    if n == 0:
        yield Partition(())
        return

    def grow(prefix, top):
        if len(prefix) == n:
            yield Partition(prefix)
            return
        for b in range(top + 2):
            yield from grow(prefix + [b], max(top, b))

    yield from grow([0], 0)
