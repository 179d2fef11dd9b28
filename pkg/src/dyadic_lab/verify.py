"""Weighted operator norms, local testing ratios, A2 sweeps and slope fits."""

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .exceptions import ConvergenceError, InvalidCubeError
from .grid import FiniteModel, cube_leaves
from .linalg import MAX_ITER, POWER_TOL, NormResult, spectral_norm, top_singular_value
from .shift import (
    ComplexityType,
    adjoint,
    assemble_matrix,
    haar_multiplier,
    petermichl_shift,
    random_shift,
    separate,
    side_integrals,
    spread,
)
from .validation import check_same_model
from .weights import a2_constant, dual_weight, power_weight, random_a2_weight

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["param", "a2", "norm", "kappa", "d", "N", "shift_id", "seed", "residual"]
DEFAULT_A2_MIN = 10.0
CROSS_CHECK_LEAVES = 2 ** 8


def weighted_norm(shift, weight, tol=POWER_TOL, max_iter=MAX_ITER, warm_start=True, seed=0,
                  cross_check=False):
    """Norm of ``f -> S(f sigma)`` from L2(sigma) to L2(w).

    This is the top singular value of ``B = diag(sqrt w) M diag(sqrt sigma)``,
    found by certified power iteration on ``B^T B`` without forming ``M``.
    With ``cross_check`` (models up to ``CROSS_CHECK_LEAVES`` leaves) the
    value is compared against a dense SVD.
    """
    check_same_model(shift, weight)
    if not shift.blocks:
        return NormResult(0.0, 0, 0.0)
    if cross_check and shift.model.n_leaves <= CROSS_CHECK_LEAVES:
        result = weighted_norm(shift, weight, tol, max_iter, warm_start, seed)
        dense = weighted_norm_dense(shift, weight)
        if abs(result.value - dense) > 1e-9 * max(1.0, dense):
            raise ConvergenceError(f"power iteration {result.value!r} disagrees with SVD {dense!r}")
        return result
    sw, ss = np.sqrt(weight.w), np.sqrt(weight.sigma)

    def matvec(x):
        return sw * shift.apply(ss * x)

    def rmatvec(y):
        return ss * shift.apply_adjoint(sw * y)

    return top_singular_value(matvec, rmatvec, shift.model.n_leaves, tol, max_iter, warm_start, seed)


def weighted_norm_dense(shift, weight):
    """Dense SVD cross-check of :func:`weighted_norm` (small models only)."""
    M = assemble_matrix(shift)
    B = np.sqrt(weight.w)[:, None] * M * np.sqrt(weight.sigma)[None, :]
    return spectral_norm(B)


def duality_check(shift, weight, **kwargs):
    """``|  ||S||_{L2(sigma) -> L2(w)} - ||S*||_{L2(w) -> L2(sigma)} |``."""
    a = weighted_norm(shift, weight, **kwargs).value
    b = weighted_norm(adjoint(shift), dual_weight(weight), **kwargs).value
    return abs(a - b)


def linear_bound_constant(shift, weight, norm_value=None, a2=None):
    """Measured C in ``weighted_norm <= C * kappa * [w]_A2``."""
    norm_value = weighted_norm(shift, weight).value if norm_value is None else norm_value
    a2 = a2_constant(weight).constant if a2 is None else a2
    return norm_value / (shift.kappa * a2)


def lemma_li_ratios(shift, weight, q, subcollections=50, seed=0, input="sigma", a2=None, blocks=None):
    """Largest local testing ratios over subcollections of the blocks inside ``q``.

    ``r1 = int_q |S_Q(u)| w / ([w]_A2 |q|)`` and
    ``r2 = int_q S_Q(u)**2 w / ([w]_A2**2 sigma(q))``, where ``u = sigma 1_q``
    (``input="sigma"``, the scale-invariant form) or ``u = 1_q``
    (``input="lebesgue"``).  Collections: all blocks in q, each generation
    slice, and ``subcollections`` seeded random subsets.  Passing ``blocks``
    evaluates that single collection instead (empty gives zero ratios).
    """
    check_same_model(shift, weight)
    model = shift.model
    model.check_cube(q)
    a2 = a2_constant(weight).constant if a2 is None else a2
    inside = sorted(Q for Q in shift.blocks if q.contains(Q))
    if blocks is not None:
        chosen = sorted(set(blocks))
        stray = [Q for Q in chosen if Q not in shift.blocks or not q.contains(Q)]
        if stray:
            raise InvalidCubeError(f"{stray[0]} is not a block inside {q}")
        if not chosen:
            return {"r1_max": 0.0, "r2_max": 0.0, "collections": 1, "blocks": 0}
    elif not inside:
        raise InvalidCubeError(f"no blocks inside {q}")
    indicator = np.zeros(model.n_leaves)
    leaves = cube_leaves(model, q)
    indicator[leaves] = 1.0
    if input == "sigma":
        u = indicator * weight.sigma
    elif input == "lebesgue":
        u = indicator
    else:
        raise ValueError(f"input must be 'sigma' or 'lebesgue', got {input!r}")

    layers = []
    position = {}
    for gen, idx, tables in shift.layers():
        outs = np.einsum("krs,ks->kr", tables, side_integrals(model, u, gen, shift.n)[idx])
        cubes = [model.cube_from_index(gen, int(i)) for i in idx]
        for k, Q in enumerate(cubes):
            position[Q] = (len(layers), k)
        layers.append((gen, idx, outs))

    def evaluate(chosen):
        masks = [np.zeros(len(idx), dtype=bool) for _, idx, _ in layers]
        for Q in chosen:
            li, k = position[Q]
            masks[li][k] = True
        total = np.zeros(model.n_leaves)
        for (gen, idx, outs), mask in zip(layers, masks):
            if mask.any():
                grouped = np.zeros((model.n_cubes(gen), outs.shape[1]))
                grouped[idx[mask]] = outs[mask]
                total += spread(model, grouped, gen, shift.m)
        vals = total[leaves]
        wv = weight.w[leaves]
        l1 = float(np.sum(np.abs(vals) * wv) * model.leaf_volume)
        l2 = float(np.sum(vals * vals * wv) * model.leaf_volume)
        return l1, l2

    if blocks is not None:
        collections = [chosen]
    else:
        collections = [inside]
        for gen in sorted({Q.generation for Q in inside}):
            collections.append([Q for Q in inside if Q.generation == gen])
        rng = np.random.default_rng(seed)
        for _ in range(subcollections):
            mask = rng.random(len(inside)) < 0.5
            collections.append([Q for Q, keep in zip(inside, mask) if keep])

    sigma_q = float(np.sum(weight.sigma[leaves]) * model.leaf_volume)
    r1 = r2 = 0.0
    for subset in collections:
        if not subset:
            continue
        l1, l2 = evaluate(subset)
        r1 = max(r1, l1 / (a2 * q.volume))
        r2 = max(r2, l2 / (a2 ** 2 * sigma_q))
    return {"r1_max": r1, "r2_max": r2, "collections": len(collections), "blocks": len(inside)}


# -- sweeps ---------------------------------------------------------------------


@dataclass
class SweepRow:
    weight_param: float
    a2: float
    norm: float
    kappa: int
    depth: int
    shift_id: str
    d: int = 1
    seed: int = 0
    residual: float = 0.0
    iterations: int = 0
    error: Optional[str] = None

    def csv_record(self):
        return [
            repr(float(self.weight_param)),
            repr(float(self.a2)),
            repr(float(self.norm)),
            str(self.kappa),
            str(self.d),
            str(self.depth),
            self.shift_id,
            str(self.seed),
            repr(float(self.residual)),
        ]


def build_shift(descriptor, model):
    """Shift from a descriptor ``{"type", "m", "n", "residue", "seed", "separated"}``."""
    kind = descriptor.get("type", "petermichl")
    residue = descriptor.get("residue")
    if kind == "random":
        cplx = ComplexityType(int(descriptor.get("m", 1)), int(descriptor.get("n", 1)))
        return random_shift(cplx, int(residue or 0), int(descriptor.get("seed", 0)), model,
                            int(descriptor.get("samples", 50)))
    if kind == "petermichl":
        shift = petermichl_shift(model)
    elif kind == "haar_multiplier":
        shift = haar_multiplier(model)
    else:
        raise ValueError(f"unknown shift type {kind!r}")
    if residue is not None:
        shift = separate(shift, int(residue))
    return shift


def shift_id(descriptor):
    kind = descriptor.get("type", "petermichl")
    if kind == "random":
        return (f"random({descriptor.get('m', 1)},{descriptor.get('n', 1)})"
                f"/r{descriptor.get('residue') or 0}/s{descriptor.get('seed', 0)}")
    residue = descriptor.get("residue")
    return f"{kind}/r{'all' if residue is None else residue}"


def build_weight(family, param, model):
    name = family.get("family", "power")
    if name == "power":
        return power_weight(param, model)
    if name == "cascade":
        return random_a2_weight(param, int(family.get("seed", 0)), model)
    raise ValueError(f"unknown weight family {name!r}")


def _sweep_row(args):
    shift_family, weight_family, param, d, N = args
    model = FiniteModel(d, N)
    seed = int(shift_family.get("seed", weight_family.get("seed", 0)))
    sid = shift_id(shift_family)
    kappa = 0
    try:
        shift = build_shift(shift_family, model)
        kappa = shift.kappa
        weight = build_weight(weight_family, param, model)
        a2 = a2_constant(weight).constant
        res = weighted_norm(shift, weight)
        return SweepRow(float(param), a2, res.value, kappa, N, sid, d, seed, res.residual, res.iterations)
    except Exception as exc:  # recorded in-row; the sweep continues
        logger.warning("sweep row %r failed: %s", param, exc)
        return SweepRow(float(param), math.nan, math.nan, kappa, N, sid, d, seed, math.nan, 0,
                        f"{type(exc).__name__}: {exc}")


def a2_sweep(shift_family, weight_family, params, model, jobs=1):
    """One row per parameter, in parameter order, independent of ``jobs``."""
    params = list(params)
    if not params:
        raise ValueError("parameter list is empty")
    tasks = [(dict(shift_family), dict(weight_family), p, model.d, model.N) for p in params]
    if jobs is None or jobs <= 1:
        return [_sweep_row(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_sweep_row, tasks))


def fit_slope(rows, a2_min=DEFAULT_A2_MIN):
    """Least squares fit of log(norm) against log(a2) over rows with a2 >= a2_min."""
    pts = [(r.a2, r.norm) for r in rows
           if r.error is None and np.isfinite(r.a2) and np.isfinite(r.norm) and r.a2 >= a2_min and r.norm > 0]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 usable rows with a2 >= {a2_min}, got {len(pts)}")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ np.array([slope, intercept])
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2, "n": len(pts)}


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.csv_record())
    return buf.getvalue()


def rows_from_csv(text):
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(SweepRow(
            weight_param=float(rec["param"]), a2=float(rec["a2"]), norm=float(rec["norm"]),
            kappa=int(rec["kappa"]), depth=int(rec["N"]), shift_id=rec["shift_id"], d=int(rec["d"]),
            seed=int(rec["seed"]), residual=float(rec["residual"]),
        ))
    return rows


def row_dict(row):
    return asdict(row)
