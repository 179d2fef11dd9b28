"""Numerical lab for dyadic shifts and A2 weights on a finite dyadic model."""

from .corona import (
    BilinearReport,
    StoppingForest,
    build_stopping_cubes,
    carleson_check,
    check_forest,
    corona_diagnostics,
    decompose_form,
)
from .exceptions import (
    CapacityError,
    ConvergenceError,
    DegenerateMeasureError,
    DyadicLabError,
    IdentityViolationError,
    InvalidCubeError,
    InvalidWeightError,
    ModelMismatchError,
    SizeGuardError,
    UnresolvedBlockError,
)
from .grid import (
    CubeId,
    FiniteModel,
    Measure,
    StepFunction,
    average,
    conditional_expectation,
    cube_leaves,
    inner_product,
    maximal_function,
    norm,
)
from .linalg import NormResult
from .martingale import MartingaleLadder, bessel_gap, decompose, difference, expectation
from .shift import (
    ComplexityType,
    HaarShift,
    ShiftBlock,
    adjoint,
    assemble_matrix,
    axiom_report,
    haar_multiplier,
    petermichl_shift,
    random_shift,
    separate,
    unconditionality_check,
)
from .verify import SweepRow, a2_sweep, duality_check, fit_slope, lemma_li_ratios, weighted_norm
from .weights import A2Report, Weight, a2_constant, dual_weight, power_weight, random_a2_weight

__version__ = "0.1.0"
