"""Finite symmetry groups and their orthogonal matrix representations.

Groups are stored as dense composition tables over integer element ids
0..order-1, so every Haar average elsewhere in the package is an exact
finite sum.  Continuous SO(2) is admitted through an equispaced angular
quadrature, which is itself an exact cyclic group of rotations; rotation
blocks of frequency below half the node count integrate exactly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MAX_GROUP_ORDER",
    "HOMOMORPHISM_TOL",
    "FiniteGroup",
    "Representation",
    "build_group",
    "build_representation",
    "character",
    "character_inner",
]

MAX_GROUP_ORDER = 5040
HOMOMORPHISM_TOL = 1e-10

# exhaustive pair/triple validation up to this order, random sampling above
_EXHAUSTIVE_ORDER = 64
_SAMPLED_CHECKS = 1000


@dataclass(frozen=True, eq=False)
class FiniteGroup:
    """A group as a dense composition table over element ids 0..order-1.

    ``table[a, b]`` is the id of a*b, ``inverse[a]`` the id of a^-1.
    ``weights`` are the Haar averaging weights: uniform 1/|G| for exact
    finite groups, quadrature weights (also uniform) for discretized
    continuous groups.  ``exactness`` is "exact" or "quadrature(M)".
    ``structure`` records how the group was built, e.g. ("cyclic", 4) or
    ("product", ("cyclic", 2), ("symmetric", 3)), so representation
    constructors can recover the concrete action behind the opaque ids.
    """

    name: str
    table: np.ndarray
    inverse: np.ndarray
    identity: int
    weights: np.ndarray
    exactness: str = "exact"
    structure: tuple = ("opaque",)

    def __post_init__(self) -> None:
        table = np.ascontiguousarray(self.table, dtype=np.int64)
        inverse = np.ascontiguousarray(self.inverse, dtype=np.int64)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        for arr in (table, inverse, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "inverse", inverse)
        object.__setattr__(self, "weights", weights)
        _validate_group(self)

    @property
    def order(self) -> int:
        return self.table.shape[0]

    @property
    def is_exact(self) -> bool:
        return self.exactness == "exact"

    def elements(self) -> range:
        return range(self.order)

    def compose(self, a: int, b: int) -> int:
        return int(self.table[a, b])

    def inverse_of(self, a: int) -> int:
        return int(self.inverse[a])

    def __repr__(self) -> str:
        return f"FiniteGroup({self.name!r}, order={self.order})"


def _validate_group(group: FiniteGroup) -> None:
    table = group.table
    m = table.shape[0]
    if table.ndim != 2 or table.shape != (m, m) or m == 0:
        raise ValueError(f"{group.name}: composition table must be square and non-empty")
    if m > MAX_GROUP_ORDER:
        raise ValueError(f"{group.name}: order {m} exceeds the cap {MAX_GROUP_ORDER}")
    if table.min() < 0 or table.max() >= m:
        raise ValueError(f"{group.name}: table entries must be element ids in [0, {m})")
    if not 0 <= group.identity < m:
        raise ValueError(f"{group.name}: identity id {group.identity} out of range")
    ids = np.arange(m)
    if not (np.array_equal(table[group.identity], ids) and np.array_equal(table[:, group.identity], ids)):
        raise ValueError(f"{group.name}: id {group.identity} is not a two-sided identity")
    if group.inverse.shape != (m,):
        raise ValueError(f"{group.name}: inverse table has wrong shape {group.inverse.shape}")
    if not (
        np.all(table[group.inverse, ids] == group.identity)
        and np.all(table[ids, group.inverse] == group.identity)
    ):
        raise ValueError(f"{group.name}: inverse table is inconsistent with the composition table")

    if m <= _EXHAUSTIVE_ORDER:
        # left[a,b,c] = (a*b)*c, right[a,b,c] = a*(b*c)
        associative = np.array_equal(table[table], table[:, table])
    else:
        rng = np.random.default_rng(0)
        a, b, c = rng.integers(0, m, size=(3, _SAMPLED_CHECKS))
        associative = np.array_equal(table[table[a, b], c], table[a, table[b, c]])
    if not associative:
        raise ValueError(f"{group.name}: composition table is not associative")

    w = group.weights
    if w.shape != (m,):
        raise ValueError(f"{group.name}: weights have wrong shape {w.shape}")
    if w.min() < 0:
        raise ValueError(f"{group.name}: weights must be non-negative")
    total = float(w.sum())
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"{group.name}: weights sum to {total!r}, not 1")
    if m <= _EXHAUSTIVE_ORDER:
        rows = ids
    else:
        rows = np.random.default_rng(1).integers(0, m, size=_EXHAUSTIVE_ORDER)
    for a in rows:
        if np.max(np.abs(w[table[a]] - w)) > 1e-12:
            raise ValueError(f"{group.name}: weights are not invariant under left translation")


def _cyclic_tables(m: int) -> tuple[np.ndarray, np.ndarray]:
    ids = np.arange(m)
    return (ids[:, None] + ids[None, :]) % m, (-ids) % m


def _build_cyclic(m: int) -> FiniteGroup:
    table, inverse = _cyclic_tables(m)
    return FiniteGroup(
        name=f"cyclic {m}",
        table=table,
        inverse=inverse,
        identity=0,
        weights=np.full(m, 1.0 / m),
        structure=("cyclic", m),
    )


def _perm_lex_rank(perms: np.ndarray) -> np.ndarray:
    """Rank each row among the lexicographically ordered permutations of 0..m-1."""
    n, m = perms.shape
    rank = np.zeros(n, dtype=np.int64)
    for j in range(m - 1):
        smaller_right = np.zeros(n, dtype=np.int64)
        for l in range(j + 1, m):
            smaller_right += perms[:, l] < perms[:, j]
        rank += smaller_right * math.factorial(m - 1 - j)
    return rank


def _build_symmetric(m: int) -> FiniteGroup:
    order = math.factorial(m)
    if order > MAX_GROUP_ORDER:
        raise ValueError(f"symmetric {m} has {m}! = {order} elements, past the {MAX_GROUP_ORDER} cap")
    # rows in itertools lexicographic order, so lex rank recovers the id
    perms = np.array(list(itertools.permutations(range(m))), dtype=np.int64).reshape(order, m)
    table = np.empty((order, order), dtype=np.int64)
    block = max(1, (1 << 22) // (order * m))
    for start in range(0, order, block):
        sigma = perms[start:start + block]
        # composed[b, j, v] = sigma[b][perms[j][v]], i.e. (sigma*tau)(v) = sigma(tau(v))
        composed = sigma[:, perms]
        table[start:start + block] = _perm_lex_rank(composed.reshape(-1, m)).reshape(sigma.shape[0], order)
    inverse = _perm_lex_rank(np.argsort(perms, axis=1))
    return FiniteGroup(
        name=f"symmetric {m}",
        table=table,
        inverse=inverse,
        identity=0,
        weights=np.full(order, 1.0 / order),
        structure=("symmetric", m),
    )


def _build_dihedral(m: int) -> FiniteGroup:
    # ids 0..m-1 are rotations r^j, ids m..2m-1 are reflections s*r^j
    order = 2 * m
    if order > MAX_GROUP_ORDER:
        raise ValueError(f"dihedral {m} has {order} elements, past the {MAX_GROUP_ORDER} cap")
    j = np.arange(m)
    table = np.empty((order, order), dtype=np.int64)
    table[:m, :m] = (j[:, None] + j[None, :]) % m
    table[:m, m:] = m + (j[None, :] - j[:, None]) % m
    table[m:, :m] = m + (j[:, None] + j[None, :]) % m
    table[m:, m:] = (j[None, :] - j[:, None]) % m
    inverse = np.concatenate([(-j) % m, m + j])
    return FiniteGroup(
        name=f"dihedral {m}",
        table=table,
        inverse=inverse,
        identity=0,
        weights=np.full(order, 1.0 / order),
        structure=("dihedral", m),
    )


def _build_so2_quadrature(nodes: int) -> FiniteGroup:
    if nodes < 2:
        raise ValueError(f"so2_quadrature needs at least 2 nodes, got {nodes}")
    table, inverse = _cyclic_tables(nodes)
    return FiniteGroup(
        name=f"so2_quadrature {nodes}",
        table=table,
        inverse=inverse,
        identity=0,
        weights=np.full(nodes, 1.0 / nodes),
        exactness=f"quadrature({nodes})",
        structure=("so2_quadrature", nodes),
    )


def _product(a: FiniteGroup, b: FiniteGroup) -> FiniteGroup:
    order = a.order * b.order
    if order > MAX_GROUP_ORDER:
        raise ValueError(f"product of {a.name} and {b.name} has {order} elements, past the cap")
    ob = b.order
    table = (a.table[:, None, :, None] * ob + b.table[None, :, None, :]).reshape(order, order)
    inverse = (a.inverse[:, None] * ob + b.inverse[None, :]).reshape(order)
    exactness = "exact" if (a.is_exact and b.is_exact) else "quadrature(product)"
    return FiniteGroup(
        name=f"{a.name} * {b.name}",
        table=table,
        inverse=inverse,
        identity=a.identity * ob + b.identity,
        weights=np.kron(a.weights, b.weights),
        exactness=exactness,
        structure=("product", a.structure, b.structure),
    )


def _parse_positive_int(token: str, what: str) -> int:
    try:
        value = int(token)
    except ValueError:
        raise ValueError(f"{what} must be an integer, got {token!r}") from None
    if value < 1:
        raise ValueError(f"{what} must be >= 1, got {value}")
    return value


def _build_atom(text: str) -> FiniteGroup:
    tokens = text.split()
    if len(tokens) != 2:
        raise ValueError(
            f"invalid group descriptor {text!r}; expected 'cyclic m', 'symmetric m', "
            "'dihedral m' or 'so2_quadrature M'"
        )
    kind, arg = tokens
    m = _parse_positive_int(arg, f"{kind} size")
    if kind == "cyclic":
        return _build_cyclic(m)
    if kind == "symmetric":
        return _build_symmetric(m)
    if kind == "dihedral":
        return _build_dihedral(m)
    if kind == "so2_quadrature":
        return _build_so2_quadrature(m)
    raise ValueError(f"unknown group kind {kind!r}")


def build_group(descriptor: str) -> FiniteGroup:
    """Build a group from a descriptor string.

    Grammar: "cyclic m" | "symmetric m" | "dihedral m" | "so2_quadrature M",
    optionally joined with '*' for direct products, e.g.
    "cyclic 2 * symmetric 3".  Products associate to the right.
    """
    parts = [p.strip() for p in descriptor.split("*")]
    if any(not p for p in parts):
        raise ValueError(f"invalid group descriptor {descriptor!r}")
    group = _build_atom(parts[-1])
    for part in reversed(parts[:-1]):
        group = _product(_build_atom(part), group)
    return group


@dataclass(frozen=True, eq=False)
class Representation:
    """Per-element dim x dim real matrices realizing a group action.

    ``matrices[g]`` is the matrix of element id g.  ``is_orthogonal`` acts
    as a requirement on construction: if True (default) a failed
    orthogonality check raises; if False the check result is recorded
    instead, so non-orthogonal explicit representations can be carried
    with a flag.  The homomorphism property is always enforced.
    """

    group: FiniteGroup
    dim: int
    matrices: np.ndarray
    name: str = "explicit"
    orthogonality_tol: float = HOMOMORPHISM_TOL
    is_orthogonal: bool = True

    def __post_init__(self) -> None:
        mats = np.ascontiguousarray(self.matrices, dtype=np.float64)
        mats.setflags(write=False)
        object.__setattr__(self, "matrices", mats)
        _validate_representation(self)

    def matrix(self, g: int) -> np.ndarray:
        return self.matrices[g]

    def inverse_matrix(self, g: int) -> np.ndarray:
        # exact via the group table; valid even for non-orthogonal matrices
        return self.matrices[self.group.inverse[g]]

    def __repr__(self) -> str:
        return f"Representation({self.name!r}, group={self.group.name!r}, dim={self.dim})"


def _validate_representation(rep: Representation) -> None:
    group, mats = rep.group, rep.matrices
    m = group.order
    if rep.dim < 1:
        raise ValueError(f"representation dim must be >= 1, got {rep.dim}")
    if mats.shape != (m, rep.dim, rep.dim):
        raise ValueError(
            f"matrices have shape {mats.shape}, expected {(m, rep.dim, rep.dim)} for {group.name}"
        )
    eye = np.eye(rep.dim)
    if np.max(np.abs(mats[group.identity] - eye)) > HOMOMORPHISM_TOL:
        raise ValueError("identity element does not map to the identity matrix")

    if m <= _EXHAUSTIVE_ORDER:
        dev = 0.0
        for a in range(m):
            prod = mats[a] @ mats  # broadcasts over all b
            dev = max(dev, float(np.max(np.abs(prod - mats[group.table[a]]))))
    else:
        rng = np.random.default_rng(2)
        a, b = rng.integers(0, m, size=(2, _SAMPLED_CHECKS))
        dev = float(np.max(np.abs(mats[a] @ mats[b] - mats[group.table[a, b]])))
    if dev > HOMOMORPHISM_TOL:
        raise ValueError(f"matrices are not a homomorphism: max deviation {dev:.3e}")

    gram = np.matmul(mats, mats.transpose(0, 2, 1))
    orth_dev = float(np.max(np.abs(gram - eye)))
    actually_orthogonal = orth_dev <= rep.orthogonality_tol
    if rep.is_orthogonal and not actually_orthogonal:
        raise ValueError(
            f"representation is not orthogonal: max |psi psi^T - I| = {orth_dev:.3e}; "
            "pass require_orthogonal=False to carry it flagged"
        )
    object.__setattr__(rep, "is_orthogonal", actually_orthogonal)


def _structure_order(structure: tuple) -> int:
    kind = structure[0]
    if kind in ("cyclic", "so2_quadrature"):
        return structure[1]
    if kind == "symmetric":
        return math.factorial(structure[1])
    if kind == "dihedral":
        return 2 * structure[1]
    if kind == "product":
        return _structure_order(structure[1]) * _structure_order(structure[2])
    raise ValueError(f"no known order for structure {structure!r}")


def _natural_permutations(structure: tuple) -> tuple[int, list[np.ndarray]]:
    """Return (dim, per-element coordinate permutation) for a group structure.

    Element g acts on coordinates by v -> perm[v]; permutations are listed
    in element-id order of the group built from the same structure.
    """
    kind = structure[0]
    if kind == "cyclic":
        m = structure[1]
        return m, [np.arange(m) if m == 1 else (np.arange(m) + j) % m for j in range(m)]
    if kind == "symmetric":
        m = structure[1]
        return m, [np.array(p) for p in itertools.permutations(range(m))]
    if kind == "dihedral":
        m = structure[1]
        v = np.arange(m)
        rotations = [(v + j) % m for j in range(m)]
        reflections = [(-(v + j)) % m for j in range(m)]
        return m, rotations + reflections
    if kind == "product":
        da, perms_a = _natural_permutations(structure[1])
        db, perms_b = _natural_permutations(structure[2])
        ob = _structure_order(structure[2])
        combined = []
        for pa in perms_a:
            for pb in perms_b:
                combined.append(np.concatenate([pa, da + pb]))
        assert len(combined) == len(perms_a) * ob
        return da + db, combined
    raise ValueError(f"no natural permutation action for group structure {structure!r}")


def _permutation_matrices(dim: int, perms: list[np.ndarray]) -> np.ndarray:
    mats = np.zeros((len(perms), dim, dim))
    cols = np.arange(dim)
    for g, p in enumerate(perms):
        mats[g, p, cols] = 1.0
    return mats


def _rotation_block_matrices(group: FiniteGroup, freqs: list[int]) -> np.ndarray:
    kind = group.structure[0]
    if kind not in ("cyclic", "so2_quadrature"):
        raise ValueError(f"rotation_block requires a cyclic or so2_quadrature group, got {group.name}")
    m = group.structure[1]
    dim = 2 * len(freqs)
    mats = np.zeros((m, dim, dim))
    angles = 2.0 * np.pi * np.arange(m) / m
    for b, f in enumerate(freqs):
        c, s = np.cos(f * angles), np.sin(f * angles)
        i = 2 * b
        mats[:, i, i] = c
        mats[:, i, i + 1] = -s
        mats[:, i + 1, i] = s
        mats[:, i + 1, i + 1] = c
    return mats


def _sign_matrices(group: FiniteGroup) -> np.ndarray:
    if group.structure[0] != "symmetric":
        raise ValueError(f"sign representation requires a symmetric group, got {group.name}")
    m = group.structure[1]
    signs = []
    for p in itertools.permutations(range(m)):
        inversions = sum(1 for i in range(m) for j in range(i + 1, m) if p[i] > p[j])
        signs.append(-1.0 if inversions % 2 else 1.0)
    return np.array(signs).reshape(-1, 1, 1)


def build_representation(
    group: FiniteGroup,
    kind: str,
    matrices: np.ndarray | None = None,
    require_orthogonal: bool = True,
) -> Representation:
    """Build a representation of ``group`` from a descriptor string.

    Descriptors: "natural_permutation", "trivial d", "rotation_block f1 f2 ...",
    "sign", "direct_sum <a> + <b> [+ ...]", or "explicit" with the
    ``matrices`` argument, an (order, d, d) array.  Orthogonality is
    enforced unless ``require_orthogonal=False``, in which case a
    non-orthogonal explicit representation is carried with
    ``is_orthogonal=False``.
    """
    text = kind.strip()
    tokens = text.split()
    if not tokens:
        raise ValueError("empty representation descriptor")
    head = tokens[0]

    if head == "direct_sum":
        parts = [p.strip() for p in text[len("direct_sum"):].split("+")]
        if len(parts) < 2 or any(not p for p in parts):
            raise ValueError(f"direct_sum needs at least two '+'-separated descriptors: {kind!r}")
        reps = [build_representation(group, p, require_orthogonal=require_orthogonal) for p in parts]
        dim = sum(r.dim for r in reps)
        mats = np.zeros((group.order, dim, dim))
        offset = 0
        for r in reps:
            mats[:, offset:offset + r.dim, offset:offset + r.dim] = r.matrices
            offset += r.dim
    elif head == "natural_permutation":
        if len(tokens) != 1:
            raise ValueError(f"natural_permutation takes no arguments, got {kind!r}")
        dim, perms = _natural_permutations(group.structure)
        mats = _permutation_matrices(dim, perms)
    elif head == "trivial":
        dim = _parse_positive_int(tokens[1], "trivial dim") if len(tokens) > 1 else 1
        mats = np.broadcast_to(np.eye(dim), (group.order, dim, dim)).copy()
    elif head == "rotation_block":
        if len(tokens) < 2:
            raise ValueError("rotation_block needs at least one frequency")
        freqs = [int(t) for t in tokens[1:]]
        if any(f < 0 for f in freqs):
            raise ValueError(f"rotation_block frequencies must be >= 0, got {freqs}")
        mats = _rotation_block_matrices(group, freqs)
        dim = mats.shape[1]
    elif head == "sign":
        if len(tokens) != 1:
            raise ValueError(f"sign takes no arguments, got {kind!r}")
        mats = _sign_matrices(group)
        dim = 1
    elif head == "explicit":
        if matrices is None:
            raise ValueError("explicit representation needs the matrices argument")
        mats = np.asarray(matrices, dtype=np.float64)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ValueError(f"explicit matrices must have shape (order, d, d), got {mats.shape}")
        dim = mats.shape[1]
    else:
        raise ValueError(f"unknown representation kind {head!r}")

    return Representation(
        group=group,
        dim=dim,
        matrices=mats,
        name=text,
        is_orthogonal=require_orthogonal,
    )


def character(rep: Representation) -> np.ndarray:
    """chi(g) = trace of the matrix of g, as a vector over element ids."""
    return np.einsum("gii->g", rep.matrices)


def character_inner(rep1: Representation, rep2: Representation) -> float:
    """Haar-weighted inner product of the characters of two representations.

    Counts the dimension of the space of equivariant linear maps between
    them; a non-negative near-integer for exact finite groups.
    """
    if rep1.group is not rep2.group and not (
        np.array_equal(rep1.group.table, rep2.group.table)
        and np.array_equal(rep1.group.weights, rep2.group.weights)
    ):
        raise ValueError("representations live on different groups")
    return float(np.sum(rep1.group.weights * character(rep1) * character(rep2)))
