"""A2 weights on the finite model.

The characteristic computed here is the *dyadic* one: the supremum runs
over the dyadic cubes of the model only, not over all cubes of R^d.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CapacityError, InvalidWeightError
from .grid import CubeId, FiniteModel, Measure, StepFunction
from .validation import check_leaf_values, check_positive

_MAX_NUDGES = 1 << 10


def exact_reciprocal_pair(values):
    """Return ``(w, sigma)`` with ``w * sigma == 1`` bit-exactly and sigma within one ulp of ``1/w``.

    Floating point division does not guarantee ``x * (1/x) == 1``.  For a
    failing entry the neighbours of ``1/x`` are tried first (one of them
    works whenever the mantissa of x is at most 1.5); otherwise x is moved
    up one ulp and the search repeats, which ends after a few steps.
    """
    w = check_positive(values).copy()
    sigma = 1.0 / w
    bad = np.flatnonzero(w * sigma != 1.0)
    for _ in range(_MAX_NUDGES):
        if bad.size == 0:
            return w, sigma
        wb = w[bad]
        fixed = np.zeros(bad.size, dtype=bool)
        for direction in (np.inf, -np.inf):
            cand = np.nextafter(sigma[bad], direction)
            ok = ~fixed & (wb * cand == 1.0)
            sigma[bad[ok]] = cand[ok]
            fixed |= ok
        rest = bad[~fixed]
        w[rest] = np.nextafter(w[rest], np.inf)
        sigma[rest] = 1.0 / w[rest]
        bad = rest[w[rest] * sigma[rest] != 1.0]
    raise InvalidWeightError("could not find exactly reciprocal floating point values")


class Weight:
    """A strictly positive step-function weight ``w`` with its dual ``sigma = 1/w``."""

    __slots__ = ("model", "w", "sigma", "family", "params")

    def __init__(self, model, values, family="explicit", params=None, *, _sigma=None):
        if _sigma is None:
            w, sigma = exact_reciprocal_pair(check_leaf_values(values, model.n_leaves, "weight"))
        else:
            w = np.asarray(values, dtype=np.float64).copy()
            sigma = np.asarray(_sigma, dtype=np.float64).copy()
        w.setflags(write=False)
        sigma.setflags(write=False)
        for name, value in (("model", model), ("w", w), ("sigma", sigma),
                            ("family", family), ("params", dict(params or {}))):
            object.__setattr__(self, name, value)

    def __setattr__(self, name, value):
        raise AttributeError("Weight is immutable")

    def __repr__(self):
        return f"Weight(family={self.family!r}, params={self.params!r}, d={self.model.d}, N={self.model.N})"

    @classmethod
    def constant(cls, model, c=1.0):
        return cls(model, np.full(model.n_leaves, float(c)), "explicit", {"constant": float(c)})

    @property
    def w_function(self):
        return StepFunction(self.model, self.w)

    @property
    def sigma_function(self):
        return StepFunction(self.model, self.sigma)

    @property
    def w_measure(self):
        return Measure(self.w_function)

    @property
    def sigma_measure(self):
        return Measure(self.sigma_function)

    def to_dict(self):
        return {
            "d": self.model.d,
            "N": self.model.N,
            "family": self.family,
            "params": self.params,
            "values": self.w.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        model = FiniteModel(int(data["d"]), int(data["N"]))
        return cls(model, data["values"], data.get("family", "explicit"), data.get("params"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def dual_weight(weight):
    """The weight with density sigma and dual w.  Swapping is bit-exact."""
    return Weight(weight.model, weight.sigma, weight.family, dict(weight.params, dual=not weight.params.get("dual", False)),
                  _sigma=weight.w)


@dataclass(frozen=True)
class A2Report:
    constant: float
    argmax_cube: CubeId
    per_generation: tuple = field(default=(), compare=False, repr=False)

    def to_dict(self):
        return {"constant": self.constant, "argmax": self.argmax_cube.to_dict()}

    def to_json(self):
        return json.dumps(self.to_dict())


def cube_products(weight, generation):
    """(w(Q)/|Q|)(sigma(Q)/|Q|) for every cube of a generation."""
    model = weight.model
    vol = 2.0 ** (-model.d * generation)
    w_avg = weight.w_measure.masses(generation) / vol
    s_avg = weight.sigma_measure.masses(generation) / vol
    return w_avg * s_avg


def a2_constant(weight, model=None):
    """Dyadic A2 characteristic; ties go to the coarsest, then lexicographically first cube."""
    model = model or weight.model
    if model != weight.model:
        raise InvalidWeightError("weight lives on a different model")
    best, best_cube, maxima = -np.inf, None, []
    for g in range(model.depth + 1):
        prods = cube_products(weight, g)
        i = int(np.argmax(prods))
        maxima.append(float(prods[i]))
        if prods[i] > best:
            best, best_cube = float(prods[i]), model.cube_from_index(g, i)
    return A2Report(best, best_cube, tuple(maxima))


def power_weight(alpha, model):
    """Leaf means of x_1**alpha, singular at the corner x_1 = 0."""
    alpha = float(alpha)
    if not abs(alpha) < 1:
        raise InvalidWeightError(f"power weight needs |alpha| < 1, got {alpha}")
    if alpha == 0.0:
        return Weight(model, np.ones(model.n_leaves), "power", {"alpha": alpha})
    n = 1 << model.depth
    h = 2.0 ** -model.depth
    c = alpha + 1.0
    a = np.arange(n) * h
    means = np.empty(n)
    means[0] = h ** c / (c * h)
    ratio = np.log1p(1.0 / np.arange(1, n))  # log(b/a) for a = j*h, b = (j+1)*h
    means[1:] = a[1:] ** c * np.expm1(c * ratio) / (c * h)
    values = np.repeat(means, model.n_leaves // n)
    return Weight(model, values, "power", {"alpha": alpha})


def _cascade_factors(model, seed):
    rng = np.random.default_rng(seed)
    d = model.d
    parity = np.array([bin(c).count("1") % 2 for c in range(1 << d)])
    child_signs = np.where(parity == 0, 1.0, -1.0)
    layers = []
    for g in range(model.depth):
        u = rng.uniform(-1.0, 1.0, size=model.n_cubes(g))
        per_child = u[:, None] * child_signs[None, :]
        layers.append(model.refine(model.ungroup(per_child, g + 1, g), g + 1))
    return layers


def _cascade(layers, amplitude):
    w = np.ones_like(layers[0]) if layers else None
    for layer in layers:
        w = w * (1.0 + amplitude * layer)
    return w


def random_a2_weight(target, seed, model, max_amplitude=1.0 - 1e-6, max_bisections=80):
    """Seeded multiplicative cascade whose dyadic A2 constant is within a factor 2 of ``target``.

    Every cube hands its children the factors ``1 + a*u`` / ``1 - a*u``
    (alternating by parity of the child index), with ``u`` uniform in
    [-1, 1].  The amplitude ``a`` is bisected against the measured A2
    constant.
    """
    target = float(target)
    if not target >= 1:
        raise ValueError(f"A2 target must be >= 1, got {target}")
    params = {"target": target, "seed": int(seed)}
    if target == 1:
        return Weight(model, np.ones(model.n_leaves), "cascade", dict(params, amplitude=0.0))
    layers = _cascade_factors(model, seed)

    def measure(a):
        wt = Weight(model, _cascade(layers, a), "cascade", dict(params, amplitude=a))
        return wt, a2_constant(wt).constant

    hi_w, hi_val = measure(max_amplitude)
    if hi_val < target / 4:
        raise CapacityError(
            f"cascade at depth {model.depth} reaches A2 = {hi_val:.4g}, below target {target}"
        )
    if abs(np.log(hi_val / target)) <= np.log(2):
        return hi_w
    lo, hi = 0.0, max_amplitude
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        wt, val = measure(mid)
        if abs(np.log(val / target)) <= np.log(2):
            return wt
        if val < target:
            lo = mid
        else:
            hi = mid
    raise CapacityError(f"bisection did not bracket A2 target {target}")  # pragma: no cover
