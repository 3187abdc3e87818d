import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relic_lab.errors import ContractError, FormatError
from relic_lab.refine import (
    Partition,
    all_partitions,
    instance_discrimination,
    is_finer,
    meet_refinement,
    union_decomposition,
)


def finer_oracle(a: Partition, b: Partition) -> bool:
    """Set-based definition: each block of a is a subset of some block of b."""
    return all(any(x <= y for y in b.blocks()) for x in a.blocks())


def P(*blocks):
    """Partition from 1-based blocks as written in the examples."""
    return Partition.from_blocks([[i - 1 for i in b] for b in blocks])


labels = st.integers(1, 8).flatmap(lambda n: st.lists(st.integers(0, 3), min_size=n, max_size=n))


class TestExamples:
    def test_subdivision_is_finer(self):
        assert is_finer(P({1}, {2}, {3, 4}), P({1, 2}, {3, 4}))

    def test_crossing_blocks(self):
        assert not is_finer(P({1, 3}, {2, 4}), P({1, 2}, {3, 4}))

    def test_reflexive(self):
        p = P({1, 4}, {2}, {3})
        assert is_finer(p, p)

    def test_meet_of_crossing(self):
        assert meet_refinement([P({1, 2}, {3, 4}), P({1, 3}, {2, 4})]) == instance_discrimination(4)

    def test_meet_of_one(self):
        p = P({1, 2}, {3})
        assert meet_refinement([p]) == p

    def test_aquatic_animal_grid(self):
        # items: shark, seaweed, dog, rock; tasks aquatic? and animal?
        aquatic = Partition([0, 0, 1, 1])
        animal = Partition([0, 1, 0, 1])
        assert meet_refinement([aquatic, animal]).n_blocks == 4

    def test_instance_discrimination(self):
        assert instance_discrimination(3) == P({1}, {2}, {3})
        assert all(is_finer(instance_discrimination(4), p) for p in all_partitions(4))

    def test_absorbing(self):
        for p in all_partitions(4):
            assert meet_refinement([instance_discrimination(4), p]) == instance_discrimination(4)

    def test_errors(self):
        with pytest.raises(ContractError):
            is_finer(Partition([0, 1]), Partition([0, 1, 2]))
        with pytest.raises(ContractError):
            meet_refinement([])
        with pytest.raises(ContractError):
            Partition.from_blocks([[0, 1], [1, 2]])

    def test_bell_numbers(self):
        assert [sum(1 for _ in all_partitions(n)) for n in range(1, 8)] == [1, 2, 5, 15, 52, 203, 877]


class TestText:
    def test_roundtrip(self):
        p = Partition([2, 2, 0, 1])
        assert str(p) == "4: 0 0 1 2"
        assert Partition.parse(str(p)) == p

    @pytest.mark.parametrize("line", ["3 0 1 2", "3: 0 1", "2: 0 x", "3: 1 0 0"])
    def test_malformed(self, line):
        with pytest.raises(FormatError):
            Partition.parse(line)


class TestUnionLemma:
    def test_blocks_are_unions(self):
        fine, coarse = P({1}, {2}, {3, 4}, {5}), P({1, 2}, {3, 4, 5})
        parts = union_decomposition(fine, coarse)
        for cb, pieces in parts.items():
            assert frozenset().union(*pieces) == coarse.blocks()[cb]

    def test_not_finer(self):
        with pytest.raises(ContractError):
            union_decomposition(P({1, 2}), P({1}, {2}))


class TestLaws:
    def test_exhaustive_small(self):
        parts = list(all_partitions(4))
        rel = np.array([[is_finer(a, b) for b in parts] for a in parts])
        oracle = np.array([[finer_oracle(a, b) for b in parts] for a in parts])
        np.testing.assert_array_equal(rel, oracle)
        assert rel.diagonal().all()
        assert not (rel & rel.T & ~np.eye(len(parts), dtype=bool)).any()
        assert ((rel.astype(int) @ rel.astype(int) > 0) <= rel).all()

    @settings(max_examples=200, deadline=None)
    @given(labels, st.data())
    def test_partial_order_random(self, a_labels, data):
        n = len(a_labels)
        b_labels = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
        c_labels = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
        a, b, c = Partition(a_labels), Partition(b_labels), Partition(c_labels)
        assert is_finer(a, a)
        assert is_finer(a, b) == finer_oracle(a, b)
        if is_finer(a, b) and is_finer(b, a):
            assert a == b
        if is_finer(a, b) and is_finer(b, c):
            assert is_finer(a, c)

    @settings(max_examples=200, deadline=None)
    @given(labels, st.data())
    def test_meet_is_finer_and_union_lemma(self, a_labels, data):
        n = len(a_labels)
        b = Partition(data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n)))
        a = Partition(a_labels)
        m = meet_refinement([a, b])
        assert is_finer(m, a) and is_finer(m, b)
        for coarse in (a, b):
            for cb, pieces in union_decomposition(m, coarse).items():
                assert frozenset().union(*pieces) == coarse.blocks()[cb]

    @settings(max_examples=100, deadline=None)
    @given(labels)
    def test_canonical_labels(self, labs):
        p = Partition(labs)
        assert sorted(set(p.block_of)) == list(range(p.n_blocks))
        assert Partition.parse(str(p)) == p
