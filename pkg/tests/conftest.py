import numpy as np
import pytest

from dyadic_lab import (
    ComplexityType,
    FiniteModel,
    StepFunction,
    Weight,
    haar_multiplier,
    petermichl_shift,
    power_weight,
    random_a2_weight,
    random_shift,
    separate,
)


def random_weight(model, rng, spread=2.0):
    """Log-uniform leaf values in [exp(-spread), exp(spread)]."""
    return Weight(model, np.exp(rng.uniform(-spread, spread, model.n_leaves)))


def random_function(model, rng):
    return StepFunction(model, rng.standard_normal(model.n_leaves))


def shift_corpus(model, samples=10, separated=False):
    """Canonical and random shifts used across the suite (d = 1)."""
    out = {
        "haar_multiplier": haar_multiplier(model),
        "petermichl": petermichl_shift(model),
        "random(2,1)": random_shift(ComplexityType(2, 1), 0, 1, model, samples),
        "random(1,2)": random_shift(ComplexityType(1, 2), 1, 2, model, samples),
        "random(3,1)": random_shift(ComplexityType(3, 1), 2, 3, model, samples),
    }
    if separated:
        out = {k: (v if v.is_separated else separate(v, 0)) for k, v in out.items()}
    return out


def weight_corpus(model):
    return {
        "power(-0.9)": power_weight(-0.9, model),
        "power(0.5)": power_weight(0.5, model),
        "cascade(20)": random_a2_weight(20, 0, model),
        "cascade(5)": random_a2_weight(5, 3, model),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def model8():
    return FiniteModel(1, 8)
