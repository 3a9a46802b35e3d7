import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spp.grid import (
    ArrayShape,
    Partition,
    Patch,
    bounds_from_indicator,
    contains,
    indicator_vector,
    patch_volume,
    time_points,
)


def make_patch(start, length, shape, cost=0.1):
    return Patch(tuple(start), tuple(length), cost, ArrayShape(tuple(shape)))


class TestIndicatorVector:
    def test_interior_segment(self):
        p = make_patch((2,), (3,), (5,))
        assert indicator_vector(p, 0).tolist() == [0, 1, 1, 1, 0]

    def test_full_span(self):
        p = make_patch((1,), (4,), (4,))
        assert indicator_vector(p, 0).tolist() == [1, 1, 1, 1]

    def test_terminal_singleton(self):
        p = make_patch((3,), (1,), (3,))
        assert indicator_vector(p, 0).tolist() == [0, 0, 1]

    def test_bad_dimension(self):
        p = make_patch((1,), (1,), (3,))
        with pytest.raises(IndexError):
            indicator_vector(p, 1)

    @given(st.integers(1, 64), st.data())
    @settings(max_examples=200)
    def test_round_trip(self, n, data):
        s = data.draw(st.integers(1, n))
        l = data.draw(st.integers(1, n - s + 1))
        p = make_patch((s,), (l,), (n,))
        assert bounds_from_indicator(indicator_vector(p, 0)) == (s, l)

    def test_round_trip_exhaustive_small(self):
        for n in range(1, 17):
            for s in range(1, n + 1):
                for l in range(1, n - s + 2):
                    u = indicator_vector(make_patch((s,), (l,), (n,)), 0)
                    assert bounds_from_indicator(u) == (s, l)

    def test_inverse_rejects_gaps(self):
        with pytest.raises(ValueError):
            bounds_from_indicator(np.array([1, 0, 1]))
        with pytest.raises(ValueError):
            bounds_from_indicator(np.array([0, 0, 0]))


class TestPatchVolume:
    def test_product(self):
        assert patch_volume(make_patch((1, 1), (3, 4), (5, 5))) == 12

    def test_unit(self):
        assert patch_volume(make_patch((1, 1, 1), (1, 1, 1), (2, 2, 2))) == 1

    def test_rate(self):
        p = make_patch((1, 1), (2, 5), (3, 6), cost=0.1)
        assert patch_volume(p) == 10
        assert p.rate == pytest.approx(0.01, abs=0)

    def test_volume_equals_contained_cell_count(self):
        shape = ArrayShape((7, 9))
        rng = np.random.default_rng(0)
        for _ in range(20):
            s = tuple(int(rng.integers(1, n + 1)) for n in shape.dims)
            l = tuple(int(rng.integers(1, n - x + 2)) for x, n in zip(s, shape.dims))
            p = make_patch(s, l, shape.dims)
            count = sum(
                contains(p, (i, j))
                for i in range(1, shape.dims[0] + 1)
                for j in range(1, shape.dims[1] + 1)
            )
            assert count == patch_volume(p)


class TestContains:
    def test_inside(self):
        assert contains(make_patch((2, 2), (2, 2), (5, 5)), (3, 3))

    def test_outside(self):
        assert not contains(make_patch((2, 2), (2, 2), (5, 5)), (1, 2))

    def test_full_cover(self):
        p = make_patch((1, 1), (5, 5), (5, 5))
        assert all(contains(p, (i, j)) for i in range(1, 6) for j in range(1, 6))


class TestTimePoints:
    def test_prefix_sums(self):
        shape = ArrayShape((3,))
        part = Partition(
            shape,
            [make_patch((1,), (1,), (3,), c) for c in (0.1, 0.2, 0.05)],
            tau=1.0,
        )
        assert time_points(part) == pytest.approx([0.1, 0.3, 0.35])

    def test_empty(self):
        assert time_points(Partition(ArrayShape((3,)), [], tau=1.0)).size == 0

    def test_boundary_cost(self):
        part = Partition(ArrayShape((2,)), [make_patch((1,), (1,), (2,), 0.5)], tau=0.5)
        assert time_points(part)[-1] == pytest.approx(0.5)

    @given(st.lists(st.floats(1e-6, 1.0), min_size=0, max_size=20))
    @settings(max_examples=100)
    def test_monotone_and_bounded(self, gaps):
        tau = sum(gaps) + 1.0
        part = Partition(
            ArrayShape((2,)),
            [make_patch((1,), (1,), (2,), g) for g in gaps],
            tau=tau,
        )
        t = time_points(part)
        assert np.all(np.diff(t) > 0)
        assert t.size == 0 or t[-1] <= tau


class TestValidation:
    def test_bad_shape(self):
        with pytest.raises(ValueError):
            ArrayShape(())
        with pytest.raises(ValueError):
            ArrayShape((0, 3))

    def test_patch_outside(self):
        with pytest.raises(ValueError):
            make_patch((3,), (3,), (4,))
        with pytest.raises(ValueError):
            make_patch((0,), (1,), (4,))

    def test_empty_patch_rejected(self):
        with pytest.raises(ValueError):
            make_patch((1,), (0,), (4,))

    def test_nonpositive_cost(self):
        with pytest.raises(ValueError):
            make_patch((1,), (1,), (4,), cost=0.0)

    def test_budget_overrun(self):
        with pytest.raises(ValueError):
            Partition(ArrayShape((2,)), [make_patch((1,), (1,), (2,), 0.7)], tau=0.5)
