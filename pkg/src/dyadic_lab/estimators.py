"""scikit-learn style transformers over leaf-value samples.

Each row of ``X`` is one step function, given by its ``2**(d*N)`` leaf
values in lexicographic leaf order.  The depth is inferred in ``fit``.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .grid import FiniteModel, Measure, StepFunction
from .shift import adjoint as shift_adjoint
from .validation import check_leaf_values, check_n_features, check_positive, depth_from_n_features
from .verify import build_shift


class HaarShiftTransformer(TransformerMixin, BaseEstimator):
    """Apply a Haar shift to every row.

    Parameters
    ----------
    kind : {"petermichl", "haar_multiplier", "random"}
    m, n : complexity of a random shift
    residue : scale class kept (None keeps every generation for the canonical shifts)
    seed : seed for random shifts
    d : dimension of the model
    weight : optional positive leaf array; rows are then mapped by ``f -> S(f / weight)``
    adjoint : apply the adjoint shift instead
    """

    def __init__(self, kind="petermichl", m=1, n=1, residue=None, seed=0, d=1, weight=None, adjoint=False):
        self.kind = kind
        self.m = m
        self.n = n
        self.residue = residue
        self.seed = seed
        self.d = d
        self.weight = weight
        self.adjoint = adjoint

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"expected a 2-d array, got shape {X.shape}")
        N = depth_from_n_features(X.shape[1], self.d)
        self.model_ = FiniteModel(self.d, N)
        descriptor = {"type": self.kind, "m": self.m, "n": self.n, "residue": self.residue, "seed": self.seed}
        shift = build_shift(descriptor, self.model_)
        self.shift_ = shift_adjoint(shift) if self.adjoint else shift
        if self.weight is not None:
            w = check_positive(check_leaf_values(self.weight, self.model_.n_leaves, "weight"))
            self.sigma_ = 1.0 / w
        else:
            self.sigma_ = None
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "shift_")
        X = check_n_features(X, self.n_features_in_)
        if self.sigma_ is not None:
            X = X * self.sigma_
        return np.vstack([self.shift_.apply(row) for row in X])


class ConditionalExpectationTransformer(TransformerMixin, BaseEstimator):
    """Replace every row by its conditional expectation at ``generation``.

    ``density`` (optional, positive leaf array) gives the measure; Lebesgue by default.
    """

    def __init__(self, generation=0, d=1, density=None):
        self.generation = generation
        self.d = d
        self.density = density

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"expected a 2-d array, got shape {X.shape}")
        N = depth_from_n_features(X.shape[1], self.d)
        self.model_ = FiniteModel(self.d, N)
        self.model_.check_generation(self.generation)
        if self.density is None:
            self.measure_ = Measure.lebesgue(self.model_)
        else:
            self.measure_ = Measure(StepFunction(self.model_, check_positive(self.density, "density")))
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "measure_")
        X = check_n_features(X, self.n_features_in_)
        model, g = self.model_, self.generation
        return np.vstack([model.refine(self.measure_.averages(row, g), g) for row in X])
