import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from dyadic_lab import FiniteModel, Measure, StepFunction, petermichl_shift
from dyadic_lab.estimators import ConditionalExpectationTransformer, HaarShiftTransformer
from dyadic_lab.grid import conditional_expectation
from dyadic_lab.shift import adjoint


class TestHaarShiftTransformer:
    def test_matches_apply(self, rng):
        X = rng.standard_normal((5, 64))
        shift = petermichl_shift(FiniteModel(1, 6))
        out = HaarShiftTransformer().fit_transform(X)
        assert out.shape == X.shape
        assert np.allclose(out, np.vstack([shift.apply(x) for x in X]), rtol=0, atol=0)

    def test_adjoint_and_weight(self, rng):
        X = rng.standard_normal((3, 32))
        w = np.exp(rng.uniform(-1, 1, 32))
        shift = adjoint(petermichl_shift(FiniteModel(1, 5)))
        out = HaarShiftTransformer(adjoint=True, weight=w).fit_transform(X)
        assert np.allclose(out, np.vstack([shift.apply(x / w) for x in X]), rtol=1e-14)

    def test_two_dimensions(self, rng):
        X = rng.standard_normal((2, 256))
        tr = HaarShiftTransformer(kind="haar_multiplier", d=2).fit(X)
        assert tr.model_ == FiniteModel(2, 4)
        assert tr.transform(X).shape == (2, 256)

    def test_params_and_clone(self):
        tr = HaarShiftTransformer(kind="random", m=2, n=1, residue=1, seed=3)
        assert tr.get_params()["m"] == 2
        twin = clone(tr)
        assert twin.get_params() == tr.get_params()
        tr.set_params(seed=4)
        assert tr.seed == 4

    def test_not_fitted_and_feature_mismatch(self, rng):
        with pytest.raises(NotFittedError):
            HaarShiftTransformer().transform(np.zeros((1, 8)))
        tr = HaarShiftTransformer().fit(np.zeros((1, 8)))
        with pytest.raises(ValueError):
            tr.transform(np.zeros((1, 16)))

    def test_bad_feature_count(self):
        with pytest.raises(ValueError):
            HaarShiftTransformer().fit(np.zeros((2, 12)))


class TestConditionalExpectation:
    def test_lebesgue(self, rng):
        X = rng.standard_normal((4, 16))
        out = ConditionalExpectationTransformer(generation=2).fit_transform(X)
        assert np.allclose(out, np.repeat(X.reshape(4, 4, 4).mean(axis=2), 4, axis=1), rtol=1e-14)

    def test_density(self, rng):
        model = FiniteModel(1, 4)
        X = rng.standard_normal((2, 16))
        dens = np.exp(rng.uniform(-1, 1, 16))
        out = ConditionalExpectationTransformer(generation=1, density=dens).fit_transform(X)
        mu = Measure(StepFunction(model, dens))
        assert np.allclose(out[1], conditional_expectation(X[1], mu, 1), rtol=1e-14)

    def test_idempotent_in_pipeline(self, rng):
        X = rng.standard_normal((3, 64))
        once = ConditionalExpectationTransformer(generation=3).fit_transform(X)
        pipe = make_pipeline(ConditionalExpectationTransformer(generation=3), ConditionalExpectationTransformer(generation=3))
        assert np.allclose(pipe.fit_transform(X), once, rtol=1e-14)

    def test_generation_out_of_range(self):
        with pytest.raises(ValueError):
            ConditionalExpectationTransformer(generation=5).fit(np.zeros((1, 16)))
