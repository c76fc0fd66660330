import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonlocal_lab.czkit import (
    DyadicCube,
    calibrate_gamma,
    cz_decompose,
    distribution_set,
    good_lambda_check,
    good_lambda_constant,
    max_admissible_delta,
    maximal,
    maximal_array,
)
from nonlocal_lab.discretize import Grid, GridFunction
from nonlocal_lab.errors import DomainError, PreconditionError


class TestDyadicCube:
    def test_children_and_bounds(self):
        q = DyadicCube(2, 8)
        kids = q.children()
        assert [k.corner for k in kids] == [(0, 0), (4, 0), (0, 4), (4, 4)]
        assert kids[3].bounds() == [(0.5, 1.0), (0.5, 1.0)]
        assert kids[3].parent == q and q.contains(kids[3]) and not kids[0].contains(kids[1])
        assert kids[1].children()[0].cell_count == 4

    def test_too_deep(self):
        with pytest.raises(DomainError):
            DyadicCube(1, 4, (0, 0, 0))


class TestCZ:
    def test_eight_cell_example(self):
        res = cz_decompose(DyadicCube(1, 8), [0, 1], 0.5)
        assert [q.bounds() for q in res.selected] == [[(0.0, 0.25)]]
        assert res.residual_measure == 0
        c = res.certificates[0]
        assert c.density == 1 and c.parent_density == Fraction(1, 2)
        assert json.loads(res.to_json())["selected"][0]["bounds"] == [[0.0, 0.25]]

    @pytest.mark.parametrize("delta", [0.05, 0.3, 0.9])
    def test_single_cell(self, delta):
        res = cz_decompose(DyadicCube(2, 16), [37], delta)
        if delta * 256 <= 1:
            pytest.skip("a single cell is not below delta |Q|")
        assert [q.cells().tolist() for q in res.selected] == [[37]] or \
            all(37 in q.cells() for q in res.selected)
        assert res.verify([37]) and res.residual_cells == 0

    def test_preconditions(self):
        with pytest.raises(PreconditionError):
            cz_decompose(DyadicCube(1, 8), [], 0.5)
        with pytest.raises(PreconditionError):
            cz_decompose(DyadicCube(1, 8), [0, 1, 2, 3], 0.5)
        with pytest.raises(DomainError):
            cz_decompose(DyadicCube(1, 8, (0,)), [6], 0.5)
        with pytest.raises(DomainError):
            cz_decompose(DyadicCube(1, 8), [1], 1.5)

    def test_max_level_residual(self):
        res = cz_decompose(DyadicCube(1, 16), [0, 5], 0.25, max_level=1)
        assert res.selected == [] and res.residual_cells == 2

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 2), st.integers(2, 4), st.integers(0, 2**31), st.integers(1, 19))
    def test_conclusions_exact(self, d, depth, seed, num):
        cells = 2**depth
        total = cells**d
        delta = Fraction(num, 20)
        limit = -(-delta.numerator * total // delta.denominator) - 1
        if limit < 1:
            return
        rng = np.random.default_rng(seed)
        A = rng.choice(total, int(rng.integers(1, limit + 1)), replace=False)
        res = cz_decompose(DyadicCube(d, cells), A, delta)
        mask = np.zeros(total, bool)
        mask[A] = True
        covered = np.zeros(total, bool)
        for q in res.selected:
            idx = q.cells()
            assert not covered[idx].any()
            covered[idx] = True
            assert Fraction(int(mask[idx].sum()), idx.size) > delta
            par = q.parent.cells()
            assert Fraction(int(mask[par].sum()), par.size) <= delta
        assert res.residual_cells == 0 and not np.any(mask & ~covered)


class TestMaximal:
    def test_four_cell_example(self):
        np.testing.assert_allclose(maximal_array([1.0, 0, 0, 0]), [1, 1 / 2, 1 / 3, 1 / 4])

    def test_constant_and_domination(self):
        assert np.allclose(maximal_array(np.full((5, 5), 2.5)), 2.5)
        g = np.random.default_rng(0).uniform(0, 1, (7, 6))
        assert np.all(maximal_array(g) >= g)

    def test_grid_function_and_localisation(self):
        g = Grid(1, 1.0, 8)
        u = GridFunction(g, [0, 0, 0, 0, 4, 0, 0, 0])
        assert maximal(u).values.real[5] == pytest.approx(2.0)
        loc = maximal(np.array([0, 0, 0, 0, 4.0, 0, 0, 0]), localized_to=DyadicCube(1, 8, (0,)))
        assert np.all(loc == 0)

    def test_rejects_negative(self):
        with pytest.raises(DomainError):
            maximal(np.array([1.0, -1.0]))

    def test_distribution_sets(self):
        g = np.array([1.0, 0, 0, 0])
        assert distribution_set(g, 0.4).indices.tolist() == [0, 1]
        assert distribution_set(g, 1.0).count == 0
        assert distribution_set(g, 0.0).count == 4
        with pytest.raises(DomainError):
            distribution_set(g, -1.0)


class TestGoodLambda:
    def test_constants(self):
        delta = max_admissible_delta(3, 1)
        assert delta == pytest.approx(10**-1.5 * (1 - 1e-6))
        assert good_lambda_constant(delta, 3) > 5

    def test_zero_operator(self):
        f = np.random.default_rng(1).uniform(0, 1, 64)
        rep = good_lambda_check(np.zeros(64), f, 3.0, 0.03, 1.0, np.logspace(-3, 3, 13))
        assert rep.summary["pass"] and all(c["E_A_lambda"] == 0 for c in rep.cases)

    def test_joint_scaling(self):
        rng = np.random.default_rng(2)
        T, f = rng.uniform(0, 1, (2, 128))
        lams = np.logspace(-2, 1, 10)
        a = good_lambda_check(T, f, 3.0, 0.03, 0.5, lams)
        b = good_lambda_check(9 * T, 9 * f, 3.0, 0.03, 0.5, 9 * lams)
        assert [c["holds"] for c in a.cases] == [c["holds"] for c in b.cases]

    def test_inadmissible_delta(self):
        with pytest.raises(PreconditionError):
            good_lambda_check(np.ones(8), np.ones(8), 3.0, 0.5, 1.0, [1.0])

    def test_calibration_is_largest_passing(self):
        rng = np.random.default_rng(3)
        f = rng.uniform(0, 1, 64)
        T = np.roll(f, 7) * 50
        lams = np.logspace(-2, 2, 9)
        gamma = calibrate_gamma(T, f, 3.0, 0.03, lams)
        assert gamma is not None
        assert good_lambda_check(T, f, 3.0, 0.03, gamma, lams).summary["pass"]
