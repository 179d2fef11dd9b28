"""Haar shift operators of complexity type (m, n).

A block ``s_Q`` is stored as a table ``t[r, s]`` where ``r`` indexes the
sub-cubes R of Q with side ``2**-m * l(Q)`` (output variable x) and ``s``
indexes the sub-cubes S with side ``2**-n * l(Q)`` (input variable y), both
in lexicographic relative position.  The kernel is ``s_Q(x, y) = t[R(x), S(y)]``
on Q x Q and zero elsewhere, so ``S_Q f(x) = sum_S t[R(x), S] * int_S f``.

Haar functions follow the convention ``h_I = (1_{I-} - 1_{I+}) / sqrt|I|``.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .exceptions import InvalidCubeError, SizeGuardError, UnresolvedBlockError
from .grid import CubeId, FiniteModel, StepFunction, cube_leaves
from .linalg import spectral_norm
from .validation import check_same_model

DENSE_MATRIX_LIMIT = 2 ** 12
KERNEL_TABLE_LIMIT = 2 ** 10
RESCALE_SAFETY = 1.05


@dataclass(frozen=True)
class ComplexityType:
    m: int
    n: int

    def __post_init__(self):
        if self.m < 0 or self.n < 0:
            raise ValueError(f"complexity type must be nonnegative, got ({self.m}, {self.n})")

    @property
    def kappa(self):
        return 1 + max(self.m, self.n)

    def transpose(self):
        return ComplexityType(self.n, self.m)


class ShiftBlock:
    __slots__ = ("cube", "table")

    def __init__(self, cube, table):
        table = np.array(table, dtype=np.float64)
        if table.ndim != 2 or not np.all(np.isfinite(table)):
            raise ValueError(f"block table at {cube} must be a finite 2-d array")
        table.setflags(write=False)
        object.__setattr__(self, "cube", cube)
        object.__setattr__(self, "table", table)
        if self.sup_ratio > 1.0:
            raise ValueError(f"block at {cube} violates the sup bound: |Q| * max|s_Q| = {self.sup_ratio}")

    def __setattr__(self, name, value):
        raise AttributeError("ShiftBlock is immutable")

    @property
    def sup_ratio(self):
        """|Q| * max |s_Q|; the sup-norm axiom asks for <= 1."""
        return float(np.max(np.abs(self.table), initial=0.0) * self.cube.volume)

    def norm(self, d, complexity):
        """L2 operator norm of the single block."""
        vol = self.cube.volume
        r_vol = vol * 2.0 ** (-d * complexity.m)
        s_vol = vol * 2.0 ** (-d * complexity.n)
        return float(np.sqrt(r_vol * s_vol) * spectral_norm(self.table))


class HaarShift:
    """A finite sum of kernel blocks on a model.

    ``residue`` is the class mod kappa of every block generation, or ``None``
    for a shift whose blocks sit on arbitrary generations (the full canonical
    operators).  Use :func:`separate` to extract a scale-separated piece.
    """

    def __init__(self, model, complexity, blocks, residue=None, kind="explicit", meta=None):
        self.model = model
        self.complexity = complexity
        self.residue = residue
        self.kind = kind
        self.meta = dict(meta or {})
        m, n = complexity.m, complexity.n
        shape = (1 << (model.d * m), 1 << (model.d * n))
        kappa = complexity.kappa
        if residue is not None and not 0 <= residue < kappa:
            raise ValueError(f"residue must lie in [0, {kappa}), got {residue}")
        blocks = dict(blocks)
        for q, block in blocks.items():
            model.check_cube(q)
            if q.generation + max(m, n) > model.depth:
                raise UnresolvedBlockError(f"block at {q} needs depth {q.generation + max(m, n)} > {model.depth}")
            if block.table.shape != shape:
                raise ValueError(f"block at {q} has table shape {block.table.shape}, expected {shape}")
            if residue is not None and q.generation % kappa != residue:
                raise InvalidCubeError(f"block at {q} is not in the residue class {residue} mod {kappa}")
        self.blocks = blocks
        self._layers = self._stack_layers()

    def _stack_layers(self):
        layers = {}
        for g in sorted({q.generation for q in self.blocks}):
            cubes = sorted(q for q in self.blocks if q.generation == g)
            idx = np.array([self.model.cube_index(q) for q in cubes], dtype=np.int64)
            tables = np.stack([self.blocks[q].table for q in cubes])
            layers[g] = (idx, tables)
        return layers

    @property
    def kappa(self):
        return self.complexity.kappa

    @property
    def m(self):
        return self.complexity.m

    @property
    def n(self):
        return self.complexity.n

    @property
    def is_separated(self):
        return self.residue is not None

    def layers(self):
        """Iterate ``(generation, cube_indices, tables)`` over block generations."""
        for g, (idx, tables) in self._layers.items():
            yield g, idx, tables

    def __len__(self):
        return len(self.blocks)

    def __repr__(self):
        return (f"HaarShift(kind={self.kind!r}, m={self.m}, n={self.n}, residue={self.residue}, "
                f"blocks={len(self.blocks)}, d={self.model.d}, N={self.model.N})")

    # -- application ----------------------------------------------------------

    def apply(self, values):
        """Leaf array of ``S f`` for a leaf array ``f`` (fast, per generation)."""
        return _apply_layers(self.model, self._layers, self.m, self.n, np.asarray(values, dtype=np.float64))

    def apply_adjoint(self, values):
        """Leaf array of ``S^* g`` (adjoint in unweighted L2)."""
        layers = {g: (idx, tables.transpose(0, 2, 1)) for g, (idx, tables) in self._layers.items()}
        return _apply_layers(self.model, layers, self.n, self.m, np.asarray(values, dtype=np.float64))

    def __call__(self, f):
        return StepFunction(self.model, self.apply(f.values))

    # -- serialization --------------------------------------------------------

    def to_dict(self):
        data = {
            "type": self.kind,
            "m": self.m,
            "n": self.n,
            "residue": self.residue,
            "N": self.model.N,
            "d": self.model.d,
        }
        data.update(self.meta)
        if self.kind == "explicit":
            data["blocks"] = [
                {"cube": q.to_dict(), "table": self.blocks[q].table.tolist()} for q in sorted(self.blocks)
            ]
        return data

    def to_json(self):
        return json.dumps(self.to_dict())


def side_integrals(model, values, generation, depth):
    """Integrals of a leaf array over the depth-``depth`` sub-cubes of every cube of ``generation``.

    Shape ``(2**(d*generation), 2**(d*depth))``.
    """
    fine = generation + depth
    return model.group(model.coarsen(values, fine) * model.leaf_volume, fine, generation)


def spread(model, grouped, generation, depth):
    """Leaf array taking value ``grouped[Q, R]`` on the sub-cube R of Q."""
    fine = generation + depth
    return model.refine(model.ungroup(grouped, fine, generation), fine)


def _apply_layers(model, layers, m, n, values):
    out = np.zeros(model.n_leaves)
    for g, (idx, tables) in layers.items():
        inputs = side_integrals(model, values, g, n)[idx]
        outputs = np.zeros((model.n_cubes(g), tables.shape[1]))
        outputs[idx] = np.einsum("krs,ks->kr", tables, inputs)
        out += spread(model, outputs, g, m)
    return out


def block_action(shift, q, values):
    """Leaf array of ``S_Q f`` for a single block, evaluated cube-locally."""
    model = shift.model
    block = shift.blocks[q]
    leaves = cube_leaves(model, q)
    local = np.asarray(values, dtype=np.float64)[leaves]
    per_side = 1 << (model.N - q.generation)
    d = model.d
    local = local.reshape((per_side,) * d)

    def cell_sums(arr, depth):
        k = 1 << depth
        shape = tuple(x for _ in range(d) for x in (k, per_side // k))
        return arr.reshape(shape).sum(axis=tuple(range(1, 2 * d, 2))).ravel()

    ins = cell_sums(local, shift.n) * model.leaf_volume
    outs = block.table @ ins
    k = 1 << shift.m
    cells = outs.reshape((k,) * d)
    for axis in range(d):
        cells = np.repeat(cells, per_side // k, axis=axis)
    out = np.zeros(model.n_leaves)
    out[leaves] = cells.ravel()
    return out


# -- construction -------------------------------------------------------------


def _generations(model, kappa, residue, max_depth):
    """Block generations: all admissible ones, or the residue class mod kappa."""
    top = model.depth - max_depth
    if residue is None:
        return list(range(0, top + 1))
    return list(range(residue, top + 1, kappa))


def _default_signs(model, kappa, residue, max_depth):
    return {q: 1.0 for g in _generations(model, kappa, residue, max_depth) for q in model.cubes(g)}


def _check_signs(signs, model, allowed):
    out = {}
    for q, eps in signs.items():
        eps = float(eps)
        if not -1.0 <= eps <= 1.0:
            raise ValueError(f"sign {eps} for cube {q} outside [-1, 1]")
        model.check_cube(q)
        if q.generation not in allowed:
            raise InvalidCubeError(f"cube {q} cannot carry a block here")
        out[q] = eps
    return out


def _signs_meta(signs):
    return [dict(q.to_dict(), sign=eps) for q, eps in sorted(signs.items())]


def _signs_from_meta(entries):
    return {CubeId.from_dict(e): float(e["sign"]) for e in entries}


def haar_multiplier(model, signs=None, residue=None):
    """``f -> sum_Q eps_Q sum_h <f, h> h`` over the 2**d - 1 Haar functions on Q's children.

    In d >= 2 the projection kernel has sup ``(2**d - 1)/|Q|``; it is divided
    by ``2**d - 1`` so the sup-norm axiom holds (a no-op when d = 1).
    """
    cplx = ComplexityType(1, 1)
    if signs is None:
        signs = _default_signs(model, cplx.kappa, residue, 1)
    signs = _check_signs(signs, model, set(_generations(model, cplx.kappa, residue, 1)))
    k = 1 << model.d
    proj = (k * np.eye(k) - np.ones((k, k))) / (k - 1)
    blocks = {q: ShiftBlock(q, eps * proj / q.volume) for q, eps in signs.items() if eps != 0.0}
    return HaarShift(model, cplx, blocks, residue, "haar_multiplier", {"signs": _signs_meta(signs)})


_PETERMICHL = np.outer([1.0, -1.0, -1.0, 1.0], [1.0, -1.0])


def petermichl_shift(model, signs=None, residue=None):
    """``f -> sum_I eps_I <f, h_I> (h_{I-} - h_{I+}) / sqrt 2`` on the line."""
    if model.d != 1:
        raise ValueError("the Petermichl shift is defined for d = 1 only")
    cplx = ComplexityType(2, 1)
    if signs is None:
        signs = _default_signs(model, cplx.kappa, residue, 2)
    signs = _check_signs(signs, model, set(_generations(model, cplx.kappa, residue, 2)))
    blocks = {q: ShiftBlock(q, eps * _PETERMICHL / q.volume) for q, eps in signs.items() if eps != 0.0}
    return HaarShift(model, cplx, blocks, residue, "petermichl", {"signs": _signs_meta(signs)})


def random_shift(cplx, residue, seed, model, samples=50):
    """Seeded kernel tables uniform in [-1/|Q|, 1/|Q|], rescaled by the sampled unconditional norm."""
    if not 0 <= residue < cplx.kappa:
        raise ValueError(f"residue must lie in [0, {cplx.kappa}), got {residue}")
    rng = np.random.default_rng(seed)
    shape = (1 << (model.d * cplx.m), 1 << (model.d * cplx.n))
    blocks = {}
    for g in _generations(model, cplx.kappa, residue, max(cplx.m, cplx.n)):
        for q in model.cubes(g):
            blocks[q] = rng.uniform(-1.0, 1.0, size=shape) / q.volume
    raw = HaarShift(model, cplx, {q: ShiftBlock(q, t) for q, t in blocks.items()}, residue)
    measured = unconditionality_check(raw, samples, seed)
    scale = 1.0 if RESCALE_SAFETY * measured <= 1.0 else 1.0 / (RESCALE_SAFETY * measured)
    scaled = {q: ShiftBlock(q, t * scale) for q, t in blocks.items()}
    meta = {"seed": int(seed), "samples": int(samples), "scale": scale}
    return HaarShift(model, cplx, scaled, residue, "random", meta)


def shift_from_dict(data):
    model = FiniteModel(int(data.get("d", 1)), int(data["N"]))
    kind = data["type"]
    residue = data.get("residue")
    if kind == "random":
        cplx = ComplexityType(int(data["m"]), int(data["n"]))
        return random_shift(cplx, int(residue or 0), int(data["seed"]), model, int(data.get("samples", 50)))
    if kind in ("haar_multiplier", "petermichl"):
        build = haar_multiplier if kind == "haar_multiplier" else petermichl_shift
        signs = _signs_from_meta(data["signs"]) if data.get("signs") is not None else None
        return build(model, signs, residue)
    if kind == "explicit":
        cplx = ComplexityType(int(data["m"]), int(data["n"]))
        blocks = {}
        for entry in data["blocks"]:
            q = CubeId.from_dict(entry["cube"])
            blocks[q] = ShiftBlock(q, entry["table"])
        return HaarShift(model, cplx, blocks, residue)
    raise ValueError(f"unknown shift type {kind!r}")


def shift_from_json(text):
    return shift_from_dict(json.loads(text))


# -- derived shifts -----------------------------------------------------------


def restrict(shift, cubes):
    """The shift keeping only the blocks on ``cubes``."""
    cubes = set(cubes)
    unknown = cubes - set(shift.blocks)
    if unknown:
        raise InvalidCubeError(f"cubes without a block: {sorted(unknown)[:3]}")
    return HaarShift(shift.model, shift.complexity, {q: shift.blocks[q] for q in cubes},
                     shift.residue, "explicit")


def separate(shift, residue):
    """The scale-separated piece whose block generations are ``residue`` mod kappa."""
    kappa = shift.kappa
    keep = {q: b for q, b in shift.blocks.items() if q.generation % kappa == residue}
    return HaarShift(shift.model, shift.complexity, keep, residue, shift.kind + "_separated",
                     {"parent": shift.kind})


def adjoint(shift):
    """Transpose every block kernel; complexity (m, n) becomes (n, m)."""
    blocks = {q: ShiftBlock(q, b.table.T) for q, b in shift.blocks.items()}
    return HaarShift(shift.model, shift.complexity.transpose(), blocks, shift.residue, "explicit")


# -- matrices -----------------------------------------------------------------


def _relative_index(model, generation, depth):
    """For every leaf: index of the depth-``depth`` sub-cube of its generation-``generation`` ancestor."""
    rel = np.tile(np.arange(1 << (model.d * depth)), model.n_cubes(generation))
    return spread(model, rel.reshape(model.n_cubes(generation), -1), generation, depth).astype(np.int64)


def assemble_matrix(shift, limit=DENSE_MATRIX_LIMIT):
    """Dense matrix with entry (i, j) = sum_Q s_Q(x_i, y_j) * leaf volume.

    Built from explicit kernel evaluation at leaf representatives,
    independently of :meth:`HaarShift.apply`.
    """
    model = shift.model
    if model.n_leaves > limit:
        raise SizeGuardError(f"{model.n_leaves} leaves exceeds dense limit {limit}")
    M = np.zeros((model.n_leaves, model.n_leaves))
    cache = {}
    for q in sorted(shift.blocks):
        g = q.generation
        if g not in cache:
            cube_of_leaf = model.refine(np.arange(model.n_cubes(g)), g).astype(np.int64)
            cache[g] = (cube_of_leaf,
                        _relative_index(model, g, shift.m),
                        _relative_index(model, g, shift.n))
        cube_of_leaf, rel_r, rel_s = cache[g]
        rows = np.flatnonzero(cube_of_leaf == model.cube_index(q))
        table = shift.blocks[q].table
        M[np.ix_(rows, rows)] += table[np.ix_(rel_r[rows], rel_s[rows])] * model.leaf_volume
    return M


def apply_weighted(shift, f, weight):
    """``S(f * sigma)``."""
    check_same_model(shift, f, weight)
    return StepFunction(shift.model, shift.apply(f.values * weight.sigma))


def write_matrix(path, M):
    """Row-major float64 with an 8-byte header of two little-endian uint32 (rows, cols)."""
    M = np.ascontiguousarray(M, dtype="<f8")
    rows, cols = M.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", rows, cols))
        fh.write(M.tobytes(order="C"))


def read_matrix(path):
    with open(path, "rb") as fh:
        rows, cols = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(rows, cols).copy()


# -- axiom checks -------------------------------------------------------------


def operator_norm(shift, dense_limit=512):
    """Unweighted L2 -> L2 operator norm."""
    if not shift.blocks:
        return 0.0
    model = shift.model
    n = model.n_leaves
    if n <= dense_limit:
        return spectral_norm(assemble_matrix(shift))
    gram = LinearOperator((n, n), matvec=lambda x: shift.apply_adjoint(shift.apply(x)), dtype=np.float64)
    v0 = np.random.default_rng(0).standard_normal(n)
    val = eigsh(gram, k=1, which="LA", v0=v0, tol=1e-13, return_eigenvectors=False)[0]
    return float(np.sqrt(max(val, 0.0)))


def unconditionality_check(shift, samples=50, seed=0):
    """Largest L2 norm over the full sum, single blocks, generation slices and random subcollections."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not shift.blocks:
        return 0.0
    d = shift.model.d
    best = operator_norm(shift)
    for block in shift.blocks.values():
        best = max(best, block.norm(d, shift.complexity))
    cubes = sorted(shift.blocks)
    for g in sorted({q.generation for q in cubes}):
        best = max(best, operator_norm(restrict(shift, [q for q in cubes if q.generation == g])))
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        mask = rng.random(len(cubes)) < 0.5
        chosen = [q for q, keep in zip(cubes, mask) if keep]
        if chosen:
            best = max(best, operator_norm(restrict(shift, chosen)))
    return float(best)


def kernel_table(shift, limit=KERNEL_TABLE_LIMIT):
    """Full kernel K(x_i, y_j) = sum_Q s_Q(x_i, y_j) at leaf centres."""
    model = shift.model
    if model.n_leaves > limit:
        raise SizeGuardError(f"kernel table of {model.n_leaves}**2 entries exceeds limit {limit}**2")
    return assemble_matrix(shift, limit=limit) / model.leaf_volume


def kernel_decay_check(shift, limit=KERNEL_TABLE_LIMIT):
    """max over leaf pairs x != y of |K(x, y)| * |x - y|**d."""
    model = shift.model
    K = kernel_table(shift, limit)
    centers = model.leaf_centers()
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    off = ~np.eye(model.n_leaves, dtype=bool)
    return float(np.max(np.abs(K[off]) * dist[off] ** model.d, initial=0.0))


def axiom_report(shift):
    """Sup-norm ratio and rectangle-constancy defect of every stored block.

    ``sup_ratio`` is ``max_Q |Q| * ||s_Q||_inf`` (axiom (1) asks <= 1);
    ``rectangle_defect`` is the largest spread of the assembled per-block
    kernel on any R x S rectangle (axiom (2) asks 0); ``support_defect``
    is the largest kernel value found outside Q x Q.
    """
    model = shift.model
    sup_ratio = max((b.sup_ratio for b in shift.blocks.values()), default=0.0)
    rect = 0.0
    support = 0.0
    if model.n_leaves <= DENSE_MATRIX_LIMIT:
        for q in shift.blocks:
            K = assemble_matrix(restrict(shift, [q])) / model.leaf_volume
            leaves = cube_leaves(model, q)
            outside = np.ones(model.n_leaves, dtype=bool)
            outside[leaves] = False
            support = max(support, float(np.max(np.abs(K[outside]), initial=0.0)),
                          float(np.max(np.abs(K[:, outside]), initial=0.0)))
            local = K[np.ix_(leaves, leaves)]
            g = q.generation
            rel_r = _relative_index(model, g, shift.m)[leaves]
            rel_s = _relative_index(model, g, shift.n)[leaves]
            for r in np.unique(rel_r):
                for s in np.unique(rel_s):
                    cell = local[np.ix_(rel_r == r, rel_s == s)]
                    rect = max(rect, float(cell.max() - cell.min()))
    return {"sup_ratio": sup_ratio, "rectangle_defect": rect, "support_defect": support}
