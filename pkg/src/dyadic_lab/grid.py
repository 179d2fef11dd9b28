"""The finite dyadic model on [0,1)^d truncated at depth N.

Leaves are ordered lexicographically by their position vector (first
coordinate most significant), which is numpy's C order on an array of
shape ``(2**N,) * d``.  Cube-level quantities are computed for a whole
generation at once by reshaping that array.
"""

import itertools
import json
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .exceptions import DegenerateMeasureError, InvalidCubeError
from .validation import check_dimension_depth, check_leaf_values, check_same_model


@dataclass(frozen=True)
class CubeId:
    generation: int
    position: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(int(p) for p in self.position))
        if self.generation < 0:
            raise InvalidCubeError(f"negative generation {self.generation}")
        side = 1 << self.generation
        if any(p < 0 or p >= side for p in self.position):
            raise InvalidCubeError(f"position {self.position} outside generation {self.generation}")

    @property
    def dimension(self):
        return len(self.position)

    @property
    def side_length(self):
        return 2.0 ** -self.generation

    @property
    def volume(self):
        return 2.0 ** (-self.dimension * self.generation)

    def parent(self):
        if self.generation == 0:
            raise InvalidCubeError("the root cube has no parent")
        return CubeId(self.generation - 1, tuple(p >> 1 for p in self.position))

    def ancestor(self, generation):
        shift = self.generation - generation
        if shift < 0:
            raise InvalidCubeError(f"generation {generation} is finer than {self}")
        return CubeId(generation, tuple(p >> shift for p in self.position))

    def children(self):
        return [
            CubeId(self.generation + 1, tuple(2 * p + b for p, b in zip(self.position, bits)))
            for bits in itertools.product((0, 1), repeat=self.dimension)
        ]

    def contains(self, other):
        """True if ``other`` is this cube or one of its descendants."""
        if other.generation < self.generation:
            return False
        return other.ancestor(self.generation) == self

    def to_dict(self):
        return {"generation": self.generation, "position": list(self.position)}

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["generation"]), tuple(data["position"]))

    def __lt__(self, other):
        return (self.generation, self.position) < (other.generation, other.position)


@dataclass(frozen=True)
class FiniteModel:
    dimension: int = 1
    depth: int = 1

    def __post_init__(self):
        check_dimension_depth(self.dimension, self.depth)

    @property
    def d(self):
        return self.dimension

    @property
    def N(self):
        return self.depth

    @property
    def n_leaves(self):
        return 1 << (self.dimension * self.depth)

    @property
    def leaf_volume(self):
        return 2.0 ** (-self.dimension * self.depth)

    @property
    def root(self):
        return CubeId(0, (0,) * self.dimension)

    def n_cubes(self, generation):
        return 1 << (self.dimension * generation)

    def check_generation(self, generation):
        if not 0 <= generation <= self.depth:
            raise InvalidCubeError(f"generation {generation} outside [0, {self.depth}]")

    def check_cube(self, q):
        if q.dimension != self.dimension:
            raise InvalidCubeError(f"cube {q} has dimension {q.dimension}, model has {self.dimension}")
        self.check_generation(q.generation)

    def cubes(self, generation):
        """All cubes of a generation in lexicographic order."""
        self.check_generation(generation)
        side = range(1 << generation)
        return [CubeId(generation, pos) for pos in itertools.product(side, repeat=self.dimension)]

    def all_cubes(self):
        return [q for g in range(self.depth + 1) for q in self.cubes(g)]

    def cube_index(self, q):
        """Lexicographic index of ``q`` among the cubes of its generation."""
        idx = 0
        for p in q.position:
            idx = (idx << q.generation) | p
        return idx

    def cube_from_index(self, generation, index):
        pos = []
        mask = (1 << generation) - 1
        for _ in range(self.dimension):
            pos.append(index & mask)
            index >>= generation
        return CubeId(generation, tuple(reversed(pos)))

    def ancestor_indices(self, indices, generation, ancestor_generation):
        """Vectorized cube_index of the generation-``ancestor_generation`` ancestor."""
        indices = np.asarray(indices, dtype=np.int64)
        shift = generation - ancestor_generation
        mask = (1 << generation) - 1
        out = np.zeros_like(indices)
        for k in range(self.dimension):
            p = (indices >> (generation * (self.dimension - 1 - k))) & mask
            out = (out << ancestor_generation) | (p >> shift)
        return out

    def leaf_centers(self):
        """Array of shape (n_leaves, d) with leaf centre coordinates."""
        h = 2.0 ** -self.depth
        axes = [(np.arange(1 << self.depth) + 0.5) * h] * self.dimension
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    # -- generation-wide reshaping --------------------------------------------

    def _split_shape(self, outer, inner):
        return tuple(x for _ in range(self.dimension) for x in (outer, inner))

    def coarsen(self, values, generation):
        """Sum leaf values over every cube of ``generation``.

        Returns a flat array of length ``2**(d*generation)`` in cube order.
        """
        self.check_generation(generation)
        # pairwise halving, one axis at a time: every addition combines two
        # sibling sums, so sums of equal values stay exact
        arr = np.asarray(values, dtype=np.float64).reshape((1 << self.depth,) * self.dimension)
        for _ in range(self.depth - generation):
            for axis in range(self.dimension):
                lo = [slice(None)] * self.dimension
                hi = [slice(None)] * self.dimension
                lo[axis], hi[axis] = slice(0, None, 2), slice(1, None, 2)
                arr = arr[tuple(lo)] + arr[tuple(hi)]
        return arr.ravel()

    def refine(self, cube_values, generation):
        """Spread per-cube values of ``generation`` back onto the leaves."""
        self.check_generation(generation)
        outer, inner = 1 << generation, 1 << (self.depth - generation)
        shape = self._split_shape(outer, 1)
        arr = np.asarray(cube_values).reshape(shape)
        return np.broadcast_to(arr, self._split_shape(outer, inner)).reshape(-1).copy()

    def group(self, cube_values, fine, coarse):
        """Rearrange per-cube values of generation ``fine`` by their ancestor at ``coarse``.

        Returns shape ``(2**(d*coarse), 2**(d*(fine-coarse)))``; row ``i`` lists the
        descendants of the ``i``-th coarse cube in lexicographic relative position.
        """
        d = self.dimension
        outer, inner = 1 << coarse, 1 << (fine - coarse)
        arr = np.asarray(cube_values).reshape(self._split_shape(outer, inner))
        order = tuple(range(0, 2 * d, 2)) + tuple(range(1, 2 * d, 2))
        return arr.transpose(order).reshape(outer ** d, inner ** d)

    def ungroup(self, grouped, fine, coarse):
        """Inverse of :meth:`group`."""
        d = self.dimension
        outer, inner = 1 << coarse, 1 << (fine - coarse)
        arr = np.asarray(grouped).reshape((outer,) * d + (inner,) * d)
        order = tuple(x for k in range(d) for x in (k, d + k))
        return arr.transpose(order).reshape(-1)

    def to_dict(self):
        return {"d": self.dimension, "N": self.depth}


class StepFunction:
    """A real function constant on the leaves of a model."""

    __slots__ = ("model", "values")

    def __init__(self, model, values):
        arr = check_leaf_values(values, model.n_leaves).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "model", model)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("StepFunction is immutable")

    @classmethod
    def constant(cls, model, c):
        return cls(model, np.full(model.n_leaves, float(c)))

    @classmethod
    def indicator(cls, model, q):
        return cls(model, np.isin(np.arange(model.n_leaves), cube_leaves(model, q)).astype(float))

    def _other(self, other):
        if isinstance(other, StepFunction):
            check_same_model(self, other)
            return other.values
        return float(other)

    def __add__(self, other):
        return StepFunction(self.model, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return StepFunction(self.model, self.values - self._other(other))

    def __rsub__(self, other):
        return StepFunction(self.model, self._other(other) - self.values)

    def __mul__(self, other):
        return StepFunction(self.model, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return StepFunction(self.model, self.values / self._other(other))

    def __neg__(self):
        return StepFunction(self.model, -self.values)

    def __abs__(self):
        return StepFunction(self.model, np.abs(self.values))

    def __eq__(self, other):
        return (
            isinstance(other, StepFunction)
            and other.model == self.model
            and np.array_equal(other.values, self.values)
        )

    __hash__ = None

    def __repr__(self):
        return f"StepFunction(d={self.model.d}, N={self.model.N}, values={self.values!r})"

    def to_json(self):
        return json.dumps({"d": self.model.d, "N": self.model.N, "values": self.values.tolist()})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text) if isinstance(text, str) else text
        return cls(FiniteModel(int(data["d"]), int(data["N"])), data["values"])


class Measure:
    """A measure with a step-function density; ``Measure.lebesgue`` has density one."""

    __slots__ = ("density",)

    def __init__(self, density):
        if np.any(density.values < 0):
            raise ValueError("measure density must be nonnegative")
        object.__setattr__(self, "density", density)

    def __setattr__(self, name, value):
        raise AttributeError("Measure is immutable")

    @classmethod
    def lebesgue(cls, model):
        return cls(StepFunction.constant(model, 1.0))

    @property
    def model(self):
        return self.density.model

    def masses(self, generation):
        """mu(Q) for every cube of a generation."""
        return self.model.coarsen(self.density.values, generation) * self.model.leaf_volume

    def mass(self, q):
        self.model.check_cube(q)
        return float(self.density.values[cube_leaves(self.model, q)].sum() * self.model.leaf_volume)

    def integrals(self, f_values, generation):
        """Integral of f against mu over every cube of a generation."""
        return self.model.coarsen(f_values * self.density.values, generation) * self.model.leaf_volume

    def averages(self, f_values, generation):
        """mu-averages of f over every cube of a generation."""
        m = self.masses(generation)
        if np.any(m <= 0):
            raise DegenerateMeasureError(f"a generation-{generation} cube has zero measure")
        return self.integrals(f_values, generation) / m


def cube_leaves(model, q):
    """Leaf indices covered by ``q``, in increasing order."""
    model.check_cube(q)
    span = 1 << (model.depth - q.generation)
    ranges = [np.arange(p * span, (p + 1) * span) for p in q.position]
    side = 1 << model.depth
    idx = np.zeros((1,), dtype=np.int64)
    for r in ranges:
        idx = (idx[:, None] * side + r[None, :]).ravel()
    return idx


def average(f, mu, q):
    """(integral of f over q against mu) / mu(q)."""
    check_same_model(f, mu)
    leaves = cube_leaves(f.model, q)
    dens = mu.density.values[leaves]
    total = dens.sum()
    if total <= 0:
        raise DegenerateMeasureError(f"cube {q} has zero measure")
    return float((f.values[leaves] * dens).sum() / total)


def inner_product(f, g, mu):
    check_same_model(f, g, mu)
    return float(np.sum(f.values * g.values * mu.density.values) * f.model.leaf_volume)


def norm(f, mu):
    return float(np.sqrt(inner_product(f, f, mu)))


def conditional_expectation(f_values, mu, generation):
    """Leaf array of the mu-conditional expectation at a generation."""
    return mu.model.refine(mu.averages(f_values, generation), generation)


def maximal_function(f, mu):
    """Dyadic maximal function of f with respect to mu over generations 0..N."""
    check_same_model(f, mu)
    if np.any(mu.density.values <= 0):
        raise DegenerateMeasureError("maximal function needs a strictly positive measure")
    model = f.model
    out = np.abs(f.values).copy()
    for g in range(model.depth):
        np.maximum(out, np.abs(conditional_expectation(f.values, mu, g)), out=out)
    return StepFunction(model, out)
