"""Weighted conditional expectations and kappa-step martingale differences."""

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .exceptions import DegenerateMeasureError, InvalidCubeError
from .grid import CubeId, StepFunction, average, cube_leaves
from .shift import side_integrals, spread
from .validation import check_same_model

UNDERFLOW = 1e-300


def expectation(f, mu, q):
    """``E^mu_q f * 1_q``."""
    check_same_model(f, mu)
    values = np.zeros(f.model.n_leaves)
    values[cube_leaves(f.model, q)] = average(f, mu, q)
    return StepFunction(f.model, values)


def generation_difference(f_values, mu, generation, step):
    """Leaf array of ``E_{generation+step} f - E_generation f``: every D_Q of that generation at once."""
    model = mu.model
    fine = model.refine(mu.averages(f_values, generation + step), generation + step)
    coarse = model.refine(mu.averages(f_values, generation), generation)
    return fine - coarse


def block_step(model, kappa, generation):
    """Difference depth used below a block cube: kappa, cut off at the leaves."""
    return min(kappa, model.depth - generation)


class MartingaleLadder:
    """Ladder generations ``residue, residue + kappa, ... <= N - kappa`` for a measure."""

    def __init__(self, measure, kappa, residue=0):
        model = measure.model
        if kappa < 1:
            raise ValueError(f"kappa must be >= 1, got {kappa}")
        if not 0 <= residue < kappa:
            raise ValueError(f"residue must lie in [0, {kappa}), got {residue}")
        self.measure = measure
        self.kappa = int(kappa)
        self.residue = int(residue)
        self.generations = list(range(residue, model.depth - kappa + 1, kappa))
        for g in range(model.depth + 1):
            if np.any(measure.masses(g) < UNDERFLOW):
                raise DegenerateMeasureError(
                    f"a generation-{g} cube has measure below {UNDERFLOW:g}; E^mu is ill-conditioned"
                )

    @property
    def model(self):
        return self.measure.model

    def cubes(self):
        return [q for g in self.generations for q in self.model.cubes(g)]

    def __contains__(self, q):
        return q.generation in self.generations

    @property
    def top(self):
        return self.residue

    @property
    def bottom(self):
        """Generation reached by the last full kappa step."""
        if not self.generations:
            return self.residue
        return self.generations[-1] + self.kappa


def difference(f, ladder, q):
    """``D^mu_q f``: kappa-step child averages minus the average on q, supported on q."""
    check_same_model(f, ladder.measure)
    if q not in ladder:
        raise InvalidCubeError(f"cube {q} is not on the ladder {ladder.generations}")
    leaves = cube_leaves(f.model, q)
    diff = generation_difference(f.values, ladder.measure, q.generation, ladder.kappa)
    values = np.zeros(f.model.n_leaves)
    values[leaves] = diff[leaves]
    return StepFunction(f.model, values)


@dataclass
class Decomposition:
    coarse: StepFunction
    differences: Dict[CubeId, StepFunction] = field(default_factory=dict)
    refinement: StepFunction = None

    def reconstruct(self):
        total = self.coarse.values.copy()
        for piece in self.differences.values():
            total += piece.values
        total += self.refinement.values
        return StepFunction(self.coarse.model, total)


def decompose(f, ladder):
    """``f = coarse + sum_Q D_Q f + refinement`` with pairwise orthogonal pieces.

    ``coarse`` is the conditional expectation at the ladder's top generation
    and ``refinement`` is ``f`` minus the conditional expectation at the
    generation reached by the last full step.
    """
    check_same_model(f, ladder.measure)
    if not ladder.generations:
        raise ValueError("ladder is empty at this depth")
    model, mu = f.model, ladder.measure
    coarse = model.refine(mu.averages(f.values, ladder.top), ladder.top)
    differences = {}
    for g in ladder.generations:
        diff = generation_difference(f.values, mu, g, ladder.kappa)
        for q in model.cubes(g):
            values = np.zeros(model.n_leaves)
            leaves = cube_leaves(model, q)
            values[leaves] = diff[leaves]
            differences[q] = StepFunction(model, values)
    bottom = model.refine(mu.averages(f.values, ladder.bottom), ladder.bottom)
    return Decomposition(StepFunction(model, coarse), differences, StepFunction(model, f.values - bottom))


def difference_energies(f_values, ladder):
    """Sum over ladder cubes of ``||D_Q f||_mu**2``, computed generation-wise."""
    mu = ladder.measure
    total = 0.0
    for g in ladder.generations:
        diff = generation_difference(f_values, mu, g, ladder.kappa)
        total += float(np.sum(diff * diff * mu.density.values) * mu.model.leaf_volume)
    return total


def bessel_gap(f, ladder):
    """``||f||_mu**2 - sum_Q ||D_Q f||_mu**2``; equals coarse plus refinement energy."""
    check_same_model(f, ladder.measure)
    mu = ladder.measure
    energy = float(np.sum(f.values ** 2 * mu.density.values) * f.model.leaf_volume)
    return energy - difference_energies(f.values, ladder)


def complexity_identity_defect(shift, f_values, mu):
    """Largest relative defect of the block splitting of ``int s_Q(x, y) f(y) mu(dy)``.

    For every block Q the left side is compared against
    ``E^mu_Q f * int s_Q mu(dy) + int s_Q D^mu_Q f mu(dy)``, where the
    difference uses ``block_step`` levels below Q.
    """
    model = shift.model
    dens = mu.density.values
    worst = 0.0
    for g, idx, tables in shift.layers():
        step = block_step(model, shift.kappa, g)
        lhs = np.einsum("krs,ks->kr", tables, side_integrals(model, f_values * dens, g, shift.n)[idx])
        means = mu.averages(f_values, g)[idx]
        mass = np.einsum("krs,ks->kr", tables, side_integrals(model, dens, g, shift.n)[idx])
        diff = generation_difference(f_values, mu, g, step)
        rest = np.einsum("krs,ks->kr", tables, side_integrals(model, diff * dens, g, shift.n)[idx])
        rhs = means[:, None] * mass + rest
        scale = 1.0 + np.abs(lhs).max()
        worst = max(worst, float(np.abs(lhs - rhs).max() / scale))
    return worst


def block_expectation_field(shift, f_values, mu):
    """Per-block values ``E^mu_Q f`` keyed by generation, aligned with ``shift.layers()``."""
    return {g: mu.averages(f_values, g)[idx] for g, idx, _ in shift.layers()}


def mass_field(shift, mu):
    """Leaf array ``sum_Q x -> int s_Q(x, y) mu(dy)`` split by block, per generation.

    Returns ``{g: (n_blocks, 2**(d*m))}`` of values on the output sub-cubes R.
    """
    model = shift.model
    dens = mu.density.values
    return {
        g: np.einsum("krs,ks->kr", tables, side_integrals(model, dens, g, shift.n)[idx])
        for g, idx, tables in shift.layers()
    }

