import json

import numpy as np
import pytest
from scipy.integrate import quad

from dyadic_lab import (
    CapacityError,
    CubeId,
    FiniteModel,
    InvalidWeightError,
    Weight,
    a2_constant,
    cube_leaves,
    dual_weight,
    power_weight,
    random_a2_weight,
)
from dyadic_lab.weights import cube_products, exact_reciprocal_pair

from conftest import random_weight


def brute_a2(weight):
    """Loop over every cube; independent of the generation-wide reshaping."""
    model = weight.model
    best = 0.0
    h = model.leaf_volume
    for q in model.all_cubes():
        leaves = cube_leaves(model, q)
        prod = (weight.w[leaves].sum() * h / q.volume) * (weight.sigma[leaves].sum() * h / q.volume)
        best = max(best, prod)
    return best


class TestReciprocal:
    def test_bit_exact(self, rng):
        vals = np.exp(rng.uniform(-30, 30, 100_000))
        w, s = exact_reciprocal_pair(vals)
        assert np.all(w * s == 1.0)
        assert np.max(np.abs(w / vals - 1)) < 1e-12

    def test_rejects_nonpositive(self):
        with pytest.raises(InvalidWeightError):
            exact_reciprocal_pair([1.0, 0.0])
        with pytest.raises(InvalidWeightError):
            Weight(FiniteModel(1, 1), [1.0, -2.0])


class TestDual:
    def test_constant_two(self):
        model = FiniteModel(1, 3)
        wt = Weight.constant(model, 2.0)
        assert np.all(dual_weight(wt).w == 0.5)

    def test_constant_one(self):
        wt = Weight.constant(FiniteModel(1, 3))
        assert np.all(dual_weight(wt).w == 1.0)

    def test_involution(self, rng):
        wt = random_weight(FiniteModel(2, 3), rng)
        back = dual_weight(dual_weight(wt))
        assert np.array_equal(back.w, wt.w) and np.array_equal(back.sigma, wt.sigma)


class TestA2:
    def test_constant_weight(self):
        rep = a2_constant(Weight.constant(FiniteModel(2, 3), 7.0))
        assert rep.constant == 1.0
        assert rep.argmax_cube == CubeId(0, (0, 0))

    @pytest.mark.parametrize("N", [1, 2, 5])
    def test_step_weight(self, N):
        model = FiniteModel(1, N)
        half = model.n_leaves // 2
        wt = Weight(model, [2.0] * half + [0.5] * half)
        rep = a2_constant(wt)
        assert rep.constant == 25 / 16
        assert rep.argmax_cube == model.root

    def test_scale_invariance(self, rng):
        model = FiniteModel(1, 8)
        wt = random_weight(model, rng)
        scaled = Weight(model, 8.0 * wt.w)  # a power of two keeps the arithmetic exact
        assert a2_constant(scaled).constant == pytest.approx(a2_constant(wt).constant, rel=1e-14)
        assert a2_constant(Weight(model, 3.7 * wt.w)).constant == pytest.approx(a2_constant(wt).constant, rel=1e-12)

    def test_matches_brute_force(self, rng):
        for d, N in [(1, 6), (2, 3), (3, 2)]:
            wt = random_weight(FiniteModel(d, N), rng, 3.0)
            assert a2_constant(wt).constant == pytest.approx(brute_a2(wt), rel=1e-12)

    def test_products_at_least_one(self, rng):
        wt = random_weight(FiniteModel(1, 10), rng, 4.0)
        for g in range(11):
            assert np.all(cube_products(wt, g) >= 1 - 1e-12)

    def test_equality_iff_constant(self, rng):
        model = FiniteModel(1, 6)
        assert a2_constant(Weight.constant(model, 0.3)).constant == 1.0
        vals = np.ones(model.n_leaves)
        vals[17] = 1.001
        assert a2_constant(Weight(model, vals)).constant > 1.0

    def test_dual_symmetry_exact(self, rng):
        wt = random_weight(FiniteModel(2, 4), rng)
        assert a2_constant(dual_weight(wt)).constant == a2_constant(wt).constant

    def test_tie_break_prefers_coarse(self):
        # leaf pairs (2, 1/2) repeat, so the root and every generation-(N-1) cube tie
        model = FiniteModel(1, 3)
        wt = Weight(model, [2.0, 0.5] * 4)
        rep = a2_constant(wt)
        assert rep.constant == 25 / 16
        assert rep.argmax_cube == model.root

    def test_report_json(self):
        rep = a2_constant(Weight.constant(FiniteModel(1, 2)))
        assert json.loads(rep.to_json()) == {"constant": 1.0, "argmax": {"generation": 0, "position": [0]}}


class TestPowerWeight:
    def test_alpha_zero_is_one(self):
        wt = power_weight(0.0, FiniteModel(1, 8))
        assert np.all(wt.w == 1.0)
        assert a2_constant(wt).constant == 1.0

    def test_half_closed_form(self):
        wt = power_weight(0.5, FiniteModel(1, 1))
        left = (0.5 ** 1.5 * 2 / 3) / 0.5
        assert wt.w[0] == pytest.approx(left, rel=1e-15)

    @pytest.mark.parametrize("alpha", [-0.9, -0.5, 0.3, 0.75])
    def test_quadrature(self, alpha):
        model = FiniteModel(1, 5)
        wt = power_weight(alpha, model)
        h = model.leaf_volume
        # the leaf at 0 carries the singularity: integrate it with the algebraic weight x**alpha
        first = quad(lambda x: 1.0, 0.0, h, weight="alg", wvar=(alpha, 0.0))[0] / h
        assert wt.w[0] == pytest.approx(first, rel=1e-12)
        for j in range(1, model.n_leaves):
            mean = quad(lambda x: x ** alpha, j * h, (j + 1) * h)[0] / h
            assert wt.w[j] == pytest.approx(mean, rel=1e-12)

    def test_first_coordinate_only(self):
        model = FiniteModel(2, 3)
        wt = power_weight(-0.5, model)
        grid = wt.w.reshape(8, 8)
        assert np.all(grid == grid[:, :1])

    def test_monotone_in_alpha(self):
        model = FiniteModel(1, 12)
        for sign in (1, -1):
            vals = [a2_constant(power_weight(sign * a, model)).constant for a in (0, 0.25, 0.5, 0.75)]
            assert vals == sorted(vals)

    def test_grows_with_depth(self):
        vals = [a2_constant(power_weight(-0.9, FiniteModel(1, N))).constant for N in (4, 8, 12)]
        assert vals == sorted(vals)

    @pytest.mark.parametrize("alpha", [1.0, -1.0, 1.5])
    def test_rejects_large_alpha(self, alpha):
        with pytest.raises(InvalidWeightError):
            power_weight(alpha, FiniteModel(1, 4))


class TestCascade:
    def test_target_one(self):
        assert np.all(random_a2_weight(1, 0, FiniteModel(1, 6)).w == 1.0)

    def test_deterministic(self):
        model = FiniteModel(1, 10)
        a = random_a2_weight(20, 7, model)
        b = random_a2_weight(20, 7, model)
        assert np.array_equal(a.w, b.w)
        assert not np.array_equal(a.w, random_a2_weight(20, 8, model).w)

    def test_target_fifty(self):
        val = a2_constant(random_a2_weight(50, 0, FiniteModel(1, 12))).constant
        assert 12.5 <= val <= 200

    @pytest.mark.parametrize("d,N", [(1, 8), (2, 5), (3, 3)])
    def test_within_factor_in_higher_dimension(self, d, N):
        val = a2_constant(random_a2_weight(4, 1, FiniteModel(d, N))).constant
        assert 1 <= val <= 16

    def test_capacity(self):
        with pytest.raises(CapacityError):
            random_a2_weight(1e12, 0, FiniteModel(1, 2))

    def test_below_one_rejected(self):
        with pytest.raises(ValueError):
            random_a2_weight(0.5, 0, FiniteModel(1, 2))


class TestSerialization:
    def test_json_roundtrip(self):
        wt = power_weight(-0.3, FiniteModel(1, 4))
        data = json.loads(wt.to_json())
        assert set(data) == {"d", "N", "family", "params", "values"}
        back = Weight.from_json(wt.to_json())
        assert np.array_equal(back.w, wt.w) and back.family == "power"

    def test_immutable(self):
        wt = Weight.constant(FiniteModel(1, 2))
        with pytest.raises(AttributeError):
            wt.w = None
        with pytest.raises(ValueError):
            wt.sigma[0] = 2.0
