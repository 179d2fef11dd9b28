"""Stopping cubes, the U / V / V* / W splitting of the weighted bilinear form, and corona diagnostics."""

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List

import numpy as np
from scipy.linalg import hadamard

from .exceptions import IdentityViolationError, ModelMismatchError
from .grid import CubeId, StepFunction, cube_leaves, maximal_function, norm
from .martingale import block_step, generation_difference
from .shift import side_integrals, spread
from .validation import check_same_model
from .weights import a2_constant

THRESHOLD = 4.0
IDENTITY_TOL = 1e-10


def _key(q):
    return f"{q.generation}/" + ",".join(str(p) for p in q.position)


@dataclass
class StoppingForest:
    model: object
    kappa: int
    residue: int
    cubes: List[CubeId]
    rho: Dict[CubeId, float]
    parent: Dict[CubeId, CubeId]
    corona: Dict[CubeId, List[CubeId]]
    owner: Dict[CubeId, CubeId]
    threshold: float = THRESHOLD
    roots: List[CubeId] = field(default_factory=list)

    @property
    def root(self):
        return self.roots[0]

    def generations(self):
        return list(range(self.residue, self.model.depth + 1, self.kappa))

    def ancestors(self, F):
        """Stopping ancestors of F, nearest first."""
        out = []
        while F in self.parent:
            F = self.parent[F]
            out.append(F)
        return out

    def to_dict(self):
        return {
            "kappa": self.kappa,
            "residue": self.residue,
            "threshold": self.threshold,
            "cubes": [q.to_dict() for q in self.cubes],
            "rho": {_key(q): self.rho[q] for q in self.cubes},
            "corona_sizes": {_key(q): len(self.corona[q]) for q in self.cubes},
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def build_stopping_cubes(f, weight, kappa, residue=0, threshold=THRESHOLD):
    """f-stopping cubes in the scale class ``residue`` mod ``kappa``.

    Every cube of the top generation ``residue`` is a stopping cube.  Below a
    stopping cube F the stopping children are the maximal class cubes with
    ``E^sigma_Q |f| > threshold * E^sigma_F |f|``; each class cube joins the
    corona of its minimal stopping ancestor.
    """
    check_same_model(f, weight)
    if not np.any(f.values):
        raise ValueError("f vanishes identically; stopping cubes are undefined")
    if not 0 <= residue < kappa:
        raise ValueError(f"residue must lie in [0, {kappa}), got {residue}")
    model = f.model
    sigma = weight.sigma_measure
    absf = np.abs(f.values)
    gens = list(range(residue, model.depth + 1, kappa))

    cubes, rho, parent, corona, owner = [], {}, {}, {}, {}
    top = gens[0]
    avg = sigma.averages(absf, top)
    level_owner = []
    for i in range(model.n_cubes(top)):
        q = model.cube_from_index(top, i)
        cubes.append(q)
        rho[q] = float(avg[i])
        corona[q] = [q]
        owner[q] = q
        level_owner.append(q)
    roots = list(cubes)
    prev = top
    for g in gens[1:]:
        avg = sigma.averages(absf, g)
        parents = model.ancestor_indices(np.arange(model.n_cubes(g)), g, prev)
        new_owner = []
        for i in range(model.n_cubes(g)):
            q = model.cube_from_index(g, i)
            F = level_owner[parents[i]]
            if avg[i] > threshold * rho[F]:
                cubes.append(q)
                rho[q] = float(avg[i])
                parent[q] = F
                corona[q] = [q]
                owner[q] = q
                new_owner.append(q)
            else:
                corona[F].append(q)
                owner[q] = F
                new_owner.append(F)
        level_owner = new_owner
        prev = g
    return StoppingForest(model, kappa, residue, cubes, rho, parent, corona, owner, threshold, roots)


def check_forest(forest, f, weight):
    """Verify the stopping conditions exactly.

    Returns a dict of booleans plus the printed root-relative condition,
    which is reported but not required.
    """
    model = forest.model
    sigma = weight.sigma_measure
    absf = np.abs(f.values)
    avgs = {g: sigma.averages(absf, g) for g in forest.generations()}

    def avg(q):
        return avgs[q.generation][model.cube_index(q)]

    all_class = [q for g in forest.generations() for q in model.cubes(g)]
    members = [q for F in forest.cubes for q in forest.corona[F]]
    partition = len(members) == len(all_class) and set(members) == set(all_class)
    covered = all(any(F.contains(q) for F in forest.roots) for q in all_class)
    corona_bound = all(
        avg(q) <= forest.threshold * forest.rho[F] for F in forest.cubes for q in forest.corona[F]
    )
    minimal = _minimal_owner(forest)
    jumps = all(forest.rho[F] > forest.threshold * forest.rho[P] for F, P in forest.parent.items())
    rho_ok = all(forest.rho[F] == avg(F) for F in forest.cubes)
    root_avg = avg(forest.root)
    printed = all(forest.rho[F] > forest.threshold * root_avg for F in forest.parent)
    return {
        "partition": partition,
        "covered": covered,
        "corona_bound": corona_bound,
        "minimal_owner": minimal,
        "parent_threshold": jumps,
        "rho_is_average": rho_ok,
        "root_relative_condition": printed,
        "n_stopping": len(forest.cubes),
        "n_class_cubes": len(all_class),
    }


def _minimal_owner(forest):
    """Every corona member lies in its owner with no stopping cube strictly in between."""
    stopping = set(forest.cubes)
    for F in forest.cubes:
        for q in forest.corona[F]:
            if not F.contains(q):
                return False
            g = q.generation
            while g > F.generation:
                if q.ancestor(g) in stopping:
                    return False
                g -= 1
    return True


def carleson_check(forest, f, weight):
    """Packing ``sum rho(F)**2 sigma(F)`` and overlap ``||sum rho(F) 1_F||_sigma**2``, both over ``||f||_sigma**2``.

    ``packing_squared_average`` replaces ``rho(F)**2`` by ``E^sigma_F |f|**2``.
    """
    check_same_model(f, weight)
    if forest.model != f.model:
        raise ModelMismatchError("forest was built on another model")
    sigma = weight.sigma_measure
    model = f.model
    energy = norm(f, sigma) ** 2
    phi = np.zeros(model.n_leaves)
    packing = 0.0
    packing_sq = 0.0
    sq_avgs = {}
    for F in forest.cubes:
        leaves = cube_leaves(model, F)
        mass = sigma.mass(F)
        packing += forest.rho[F] ** 2 * mass
        g = F.generation
        if g not in sq_avgs:
            sq_avgs[g] = sigma.averages(f.values ** 2, g)
        packing_sq += sq_avgs[g][model.cube_index(F)] * mass
        phi[leaves] += forest.rho[F]
    overlap = float(np.sum(phi ** 2 * weight.sigma) * model.leaf_volume)
    return {
        "packing": packing / energy,
        "overlap": overlap / energy,
        "packing_squared_average": packing_sq / energy,
    }


@dataclass
class BilinearReport:
    total: float
    U: float
    Vstar: float
    W: float
    V: float
    Vtilde: float
    I: float = float("nan")
    II: float = float("nan")

    @property
    def defect(self):
        return abs(self.total - (self.U + self.Vstar + self.W))

    @property
    def u_defect(self):
        return abs(self.U - (self.Vtilde + self.V))

    def to_dict(self):
        return {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in asdict(self).items()}

    def to_json(self):
        return json.dumps(self.to_dict())


def _block_terms(shift, f_values, g_values, weight):
    """Per-generation arrays for E, D and the kernel-side integrals of every block."""
    model = shift.model
    sigma, w = weight.sigma_measure, weight.w_measure
    for gen, idx, tables in shift.layers():
        step = block_step(model, shift.kappa, gen)
        ef = sigma.averages(f_values, gen)[idx]
        eg = w.averages(g_values, gen)[idx]
        df = generation_difference(f_values, sigma, gen, step)
        dg = generation_difference(g_values, w, gen, step)
        sig_s = side_integrals(model, weight.sigma, gen, shift.n)[idx]
        df_s = side_integrals(model, df * weight.sigma, gen, shift.n)[idx]
        w_r = side_integrals(model, weight.w, gen, shift.m)[idx]
        dg_r = side_integrals(model, dg * weight.w, gen, shift.m)[idx]
        g_r = side_integrals(model, g_values * weight.w, gen, shift.m)[idx]
        yield gen, idx, tables, ef, eg, df, dg, sig_s, df_s, w_r, dg_r, g_r


def decompose_form(shift, f, g, weight, tol=IDENTITY_TOL, strict=True, forest=None):
    """Split ``<S(f sigma), g>_w`` block by block.

    With ``f = E^sigma_Q f + D^sigma_Q f`` and ``g = E^w_Q g + D^w_Q g`` on
    each block cube:

    * ``Vtilde = sum E^sigma_Q f * (iint s_Q sigma w) * E^w_Q g``
    * ``V      = sum E^sigma_Q f * iint s_Q D^w_Q g sigma w``
    * ``Vstar  = sum E^w_Q g * iint s_Q D^sigma_Q f sigma w``
    * ``W      = sum iint s_Q D^sigma_Q f D^w_Q g sigma w``

    ``U = sum E^sigma_Q f * iint s_Q sigma g w`` is summed on its own, so
    ``U = Vtilde + V`` is a genuine check.  ``total`` is evaluated through
    the operator.
    Given a stopping ``forest`` for f (separated shifts only) the corona
    terms I and II are filled in as well.
    """
    check_same_model(shift, f, g, weight)
    model = shift.model
    u = vt = v = vs = wq = 0.0
    for _, _, tables, ef, eg, _, _, sig_s, df_s, w_r, dg_r, g_r in _block_terms(shift, f.values, g.values, weight):
        u += float(np.sum(ef * np.einsum("kr,krs,ks->k", g_r, tables, sig_s)))
        vt += float(np.sum(ef * eg * np.einsum("kr,krs,ks->k", w_r, tables, sig_s)))
        v += float(np.sum(ef * np.einsum("kr,krs,ks->k", dg_r, tables, sig_s)))
        vs += float(np.sum(eg * np.einsum("kr,krs,ks->k", w_r, tables, df_s)))
        wq += float(np.sum(np.einsum("kr,krs,ks->k", dg_r, tables, df_s)))
    out = shift.apply(f.values * weight.sigma)
    total = float(np.sum(out * g.values * weight.w) * model.leaf_volume)
    report = BilinearReport(total=total, U=u, Vstar=vs, W=wq, V=v, Vtilde=vt)
    if forest is not None:
        diag = corona_diagnostics(shift, f, weight, forest, tol)
        report.I, report.II = diag["I"], diag["II"]
    if strict:
        scale = 1.0 + abs(total)
        if report.defect > tol * scale or report.u_defect > tol * scale:
            raise IdentityViolationError(
                f"bilinear splitting off by {report.defect:.3e} (U: {report.u_defect:.3e})"
            )
    return report


def _require_separated(shift, forest=None):
    if not shift.is_separated:
        raise ValueError("this diagnostic needs a scale-separated shift (see shift.separate)")
    if forest is not None and (forest.kappa != shift.kappa or forest.residue != shift.residue):
        raise ModelMismatchError(
            f"forest class {forest.residue} mod {forest.kappa} differs from shift class "
            f"{shift.residue} mod {shift.kappa}"
        )


def block_outputs(shift, f_values, weight):
    """``{gen: (idx, E^sigma_Q f, A_Q)}`` with ``A_Q(R) = int s_Q(x, y) sigma(dy)`` for x in R."""
    model = shift.model
    sigma = weight.sigma_measure
    out = {}
    for gen, idx, tables in shift.layers():
        ef = sigma.averages(f_values, gen)[idx]
        mass = np.einsum("krs,ks->kr", tables, side_integrals(model, weight.sigma, gen, shift.n)[idx])
        out[gen] = (idx, ef, mass)
    return out


def corona_operators(shift, f, weight, forest):
    """Leaf arrays ``U_{sigma,F} f`` for every stopping cube, plus the max of ``|E_Q f| / rho(F)``."""
    _require_separated(shift, forest)
    check_same_model(shift, f, weight)
    model = shift.model
    U = {F: np.zeros(model.n_leaves) for F in forest.cubes}
    worst_ratio = 0.0
    for gen, (idx, ef, mass) in block_outputs(shift, f.values, weight).items():
        owners = [forest.owner[model.cube_from_index(gen, int(i))] for i in idx]
        by_owner = {}
        for k, F in enumerate(owners):
            by_owner.setdefault(F, []).append(k)
            if forest.rho[F] > 0:
                worst_ratio = max(worst_ratio, abs(ef[k]) / forest.rho[F])
        for F, ks in by_owner.items():
            ks = np.asarray(ks)
            grouped = np.zeros((model.n_cubes(gen), mass.shape[1]))
            grouped[idx[ks]] = ef[ks, None] * mass[ks]
            U[F] += spread(model, grouped, gen, shift.m)
    return U, worst_ratio


def corona_diagnostics(shift, f, weight, forest, tol=IDENTITY_TOL):
    """Diagonal term I, off-diagonal term II and ``||sum_F |U_F f| ||_w``."""
    U, ratio = corona_operators(shift, f, weight, forest)
    model = shift.model
    wv = weight.w
    vol = model.leaf_volume
    I = float(sum(np.sum(u * u * wv) for u in U.values()) * vol)
    II = 0.0
    constancy = 0.0
    for Fp in forest.cubes:
        leaves = cube_leaves(model, Fp)
        up = np.abs(U[Fp][leaves])
        for F in forest.ancestors(Fp):
            piece = U[F][leaves]
            constancy = max(constancy, float(np.ptp(piece)) if piece.size else 0.0)
            II += float(np.sum(np.abs(piece) * up * wv[leaves]) * vol)
    total = np.zeros(model.n_leaves)
    for u in U.values():
        total += np.abs(u)
    norm_uf = float(np.sqrt(np.sum(total ** 2 * wv) * vol))
    return {
        "I": I,
        "II": II,
        "normUf": norm_uf,
        "max_normalized_average": ratio,
        "constancy_defect": constancy,
        "expansion_holds": norm_uf ** 2 <= (I + 2 * II) * (1 + tol) + tol,
    }


def square_function_v(shift, f, weight):
    """``[sum_Q (E^sigma_Q f * int s_Q(x, y) sigma(dy))**2]**(1/2)``."""
    check_same_model(shift, f, weight)
    model = shift.model
    sq = np.zeros(model.n_leaves)
    for gen, (idx, ef, mass) in block_outputs(shift, f.values, weight).items():
        grouped = np.zeros((model.n_cubes(gen), mass.shape[1]))
        grouped[idx] = ef[:, None] * mass
        sq += spread(model, grouped, gen, shift.m) ** 2
    return StepFunction(model, np.sqrt(sq))


def block_list(shift):
    """Block cubes in the order used by sign patterns."""
    return [shift.model.cube_from_index(gen, int(i)) for gen, idx, _ in shift.layers() for i in idx]


def sign_randomized(shift, f, weight, signs):
    """``sum_Q eps_Q E^sigma_Q f int s_Q sigma(dy)`` for signs aligned with :func:`block_list`."""
    model = shift.model
    signs = np.asarray(signs, dtype=np.float64)
    out = np.zeros(model.n_leaves)
    start = 0
    for gen, (idx, ef, mass) in block_outputs(shift, f.values, weight).items():
        eps = signs[start:start + len(idx)]
        start += len(idx)
        grouped = np.zeros((model.n_cubes(gen), mass.shape[1]))
        grouped[idx] = (eps * ef)[:, None] * mass
        out += spread(model, grouped, gen, shift.m)
    return StepFunction(model, out)


def sign_patterns(n_blocks, n_patterns=256, seed=0):
    """Seeded sign patterns, shape ``(n_patterns, n_blocks)``.

    When ``n_blocks <= n_patterns`` and ``n_patterns`` is a power of two the
    columns are distinct, randomly signed Walsh functions, so the patterns
    are pairwise independent and second moments average exactly.
    Otherwise the signs are i.i.d.
    """
    rng = np.random.default_rng(seed)
    if n_blocks <= n_patterns and n_patterns & (n_patterns - 1) == 0:
        H = hadamard(n_patterns).astype(np.float64)
        cols = rng.choice(n_patterns, size=n_blocks, replace=False)
        flips = rng.choice([-1.0, 1.0], size=n_blocks)
        return H[:, cols] * flips
    return rng.choice([-1.0, 1.0], size=(n_patterns, n_blocks))


def w_block_ratios(shift, f, g, weight, a2=None):
    """``|iint s_Q D^sigma_Q f D^w_Q g sigma w| / ([w]_A2 ||D^sigma_Q f||_sigma ||D^w_Q g||_w)`` per block."""
    check_same_model(shift, f, g, weight)
    model = shift.model
    a2 = a2 if a2 is not None else a2_constant(weight).constant
    ratios = []
    for gen, idx, tables, _, _, df, dg, _, df_s, _, dg_r, _ in _block_terms(shift, f.values, g.values, weight):
        wq = np.abs(np.einsum("kr,krs,ks->k", dg_r, tables, df_s))
        nf = np.sqrt(model.coarsen(df * df * weight.sigma, gen)[idx] * model.leaf_volume)
        ng = np.sqrt(model.coarsen(dg * dg * weight.w, gen)[idx] * model.leaf_volume)
        denom = a2 * nf * ng
        ok = denom > 0
        ratios.extend((wq[ok] / denom[ok]).tolist())
        if np.any(wq[~ok] > 1e-12):
            ratios.append(np.inf)
    return np.asarray(ratios)


def vtilde_chain(shift, f, g, weight, report=None, a2=None):
    """Measured constant in ``|Vtilde| <= C [w]_A2 ||M^sigma f||_sigma ||M^w g||_w``."""
    report = report or decompose_form(shift, f, g, weight)
    a2 = a2 if a2 is not None else a2_constant(weight).constant
    sigma, w = weight.sigma_measure, weight.w_measure
    mf = maximal_function(f, sigma)
    mg = maximal_function(g, w)
    mf_norm, mg_norm = norm(mf, sigma), norm(mg, w)
    inner = float(np.sum(mf.values * mg.values) * f.model.leaf_volume)
    denom = a2 * mf_norm * mg_norm
    return {
        "Vtilde": report.Vtilde,
        "maximal_f": mf_norm,
        "maximal_g": mg_norm,
        "unweighted_pairing": inner,
        "cauchy_schwarz_holds": inner <= mf_norm * mg_norm * (1 + 1e-12),
        "constant": abs(report.Vtilde) / denom if denom > 0 else 0.0,
    }


def restricted_sum_constant(shift, weight, a2=None):
    """``max_{Q0} sum_{Q in blocks, Q in Q0} |iint s_Q sigma w| / ([w]_A2 |Q0|)``."""
    model = shift.model
    a2 = a2 if a2 is not None else a2_constant(weight).constant
    totals = {g0: np.zeros(model.n_cubes(g0)) for g0 in range(model.depth + 1)}
    for gen, idx, tables in shift.layers():
        sig_s = side_integrals(model, weight.sigma, gen, shift.n)[idx]
        w_r = side_integrals(model, weight.w, gen, shift.m)[idx]
        vals = np.abs(np.einsum("kr,krs,ks->k", w_r, tables, sig_s))
        for g0 in range(gen + 1):
            anc = model.ancestor_indices(idx, gen, g0)
            totals[g0] += np.bincount(anc, weights=vals, minlength=model.n_cubes(g0))
    best = 0.0
    for g0, t in totals.items():
        vol = 2.0 ** (-model.d * g0)
        best = max(best, float(t.max() / (a2 * vol)))
    return best
