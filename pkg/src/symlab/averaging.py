"""Group-averaging operators.

Exact averaging on linear maps (the projection matrix Phi and the
4-index intertwiner tensor Psi), generic averaging of black-box
predictors, test-time augmentation, and the empirical Rademacher
complexity used by the sandwich check.

Conventions: a batched predictor maps an (m, d_in) array of row vectors
to an (m, d_out) array.  For a linear predictor f_W(x) = W^T x with
W of shape (d, k), averaging f_W gives f_{Psi(W)} where
Psi(W) = sum_g w(g) phi(g) W psi(g^-1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .groups import Representation, build_representation, character_inner

__all__ = [
    "MAX_TENSOR_SIDE",
    "ProjectionMatrix",
    "IntertwinerTensor",
    "DecomposedPredictor",
    "build_phi",
    "build_psi",
    "apply_Q",
    "tta_average",
    "empirical_rademacher",
    "verify_operator_identities",
]

# dense Psi storage cap: (d*k)^2 float64 entries <= 10^6, i.e. < 8 MB
MAX_TENSOR_SIDE = 1000

_PROJECTION_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """Phi = sum_g w(g) phi(g); projects onto the invariant subspace."""

    rep: Representation
    matrix: np.ndarray

    @property
    def group(self):
        return self.rep.group

    @property
    def dim_invariant(self) -> float:
        # trace of a projection counts its rank
        return float(np.trace(self.matrix))

    def complement(self) -> np.ndarray:
        return np.eye(self.rep.dim) - self.matrix


def build_phi(rep: Representation) -> ProjectionMatrix:
    """Average the representation matrices with the Haar weights."""
    mat = np.einsum("g,gij->ij", rep.group.weights, rep.matrices)
    if np.max(np.abs(mat @ mat - mat)) > _PROJECTION_TOL:
        raise ValueError("averaged matrix is not idempotent")
    if rep.is_orthogonal and np.max(np.abs(mat - mat.T)) > _PROJECTION_TOL:
        raise ValueError("averaged matrix of an orthogonal representation must be symmetric")
    if np.max(np.abs(np.matmul(mat, rep.matrices) - mat)) > _PROJECTION_TOL:
        raise ValueError("averaged matrix is not left-invariant")
    return ProjectionMatrix(rep=rep, matrix=mat)


@dataclass(frozen=True, eq=False)
class IntertwinerTensor:
    """Dense 4-index averaging map on d x k weight matrices.

    tensor[a, b, c, e] maps input entry (c, e) to output entry (a, b):
    apply(W)_ab = sum_ce tensor[a,b,c,e] W_ce = sum_g w(g) (phi(g) W psi(g^-1))_ab.
    """

    rep_in: Representation   # phi, dim d
    rep_out: Representation  # psi, dim k
    tensor: np.ndarray       # (d, k, d, k)

    @property
    def group(self):
        return self.rep_in.group

    @property
    def trace(self) -> float:
        return float(np.einsum("abab->", self.tensor))

    def apply(self, W: np.ndarray) -> np.ndarray:
        return np.einsum("abce,ce->ab", self.tensor, W)

    def apply_batch(self, Ws: np.ndarray) -> np.ndarray:
        return np.einsum("abce,tce->tab", self.tensor, Ws)

    def complement(self, W: np.ndarray) -> np.ndarray:
        return W - self.apply(W)

    def complement_batch(self, Ws: np.ndarray) -> np.ndarray:
        return Ws - self.apply_batch(Ws)


def build_psi(rep_in: Representation, rep_out: Representation) -> IntertwinerTensor:
    """Build the intertwiner tensor for input rep phi and output rep psi."""
    group = rep_in.group
    if rep_out.group is not group:
        raise ValueError("input and output representations live on different groups")
    d, k = rep_in.dim, rep_out.dim
    if d * k > MAX_TENSOR_SIDE:
        raise ValueError(
            f"dense intertwiner storage cap exceeded: d*k = {d * k} > {MAX_TENSOR_SIDE}"
        )
    psi_inv_t = rep_out.matrices[group.inverse].transpose(0, 2, 1)
    tensor = np.einsum("g,gac,gbe->abce", group.weights, rep_in.matrices, psi_inv_t)

    op = IntertwinerTensor(rep_in=rep_in, rep_out=rep_out, tensor=tensor)
    rng = np.random.default_rng(3)
    for _ in range(3):
        W = rng.standard_normal((d, k))
        W_bar = op.apply(W)
        if np.linalg.norm(op.apply(W_bar) - W_bar) > _PROJECTION_TOL:
            raise ValueError("intertwiner tensor is not idempotent")
        fixed = np.einsum("gac,ce,geb->gab", rep_in.matrices, W_bar,
                          rep_out.matrices[group.inverse])
        if np.max(np.abs(fixed - W_bar)) > _PROJECTION_TOL:
            raise ValueError("averaged matrix does not intertwine the representations")
    expected_trace = character_inner(rep_out, rep_in)
    if abs(op.trace - expected_trace) > 1e-8:
        raise ValueError(
            f"tensor trace {op.trace!r} does not match the character inner product {expected_trace!r}"
        )
    return op


def _as_batch(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ValueError(f"input has dim {x.shape[0]}, expected {dim}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"input has shape {x.shape}, expected (m, {dim})")
    return x, False


@dataclass(frozen=True, eq=False)
class DecomposedPredictor:
    """Splits a black-box predictor into f = f_bar + f_perp.

    symmetric_part computes Q f, i.e. sum_g w(g) psi(g^-1) f(phi(g) x),
    either by the exact group sum or by a fixed Monte-Carlo draw of
    group elements (the draw happens once at construction, so repeated
    evaluations are consistent).  antisym_part is f - Qf, so pointwise
    reconstruction is exact by construction.
    """

    base: Callable[[np.ndarray], np.ndarray]
    rep_in: Representation
    rep_out: Representation
    mode: str = "exact_sum"  # or "monte_carlo"
    n_samples: int = 10_000
    seed: int = 0
    _sampled: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.rep_in.group is not self.rep_out.group:
            raise ValueError("input and output representations live on different groups")
        if self.mode not in ("exact_sum", "monte_carlo"):
            raise ValueError(f"unknown averaging mode {self.mode!r}")
        if self.mode == "monte_carlo":
            if self.n_samples < 1:
                raise ValueError("monte_carlo averaging needs n_samples >= 1")
            rng = np.random.default_rng(self.seed)
            group = self.rep_in.group
            draw = rng.choice(group.order, size=self.n_samples, p=group.weights)
            object.__setattr__(self, "_sampled", draw)
        probe = np.zeros((2, self.rep_in.dim))
        out = np.asarray(self.base(probe))
        if out.shape not in ((2, self.rep_out.dim), (2,)):
            raise ValueError(
                f"predictor output shape {out.shape} incompatible with output dim {self.rep_out.dim}"
            )

    def _average(self, X: np.ndarray) -> np.ndarray:
        group = self.rep_in.group
        phi = self.rep_in.matrices
        psi_inv = self.rep_out.matrices[group.inverse]
        if self.mode == "exact_sum":
            elements = np.arange(group.order)
            weights = group.weights
        else:
            elements = self._sampled
            weights = np.full(len(elements), 1.0 / len(elements))
        acc = None
        for g, w in zip(elements, weights):
            vals = np.asarray(self.base(X @ phi[g].T), dtype=np.float64)
            flat = vals.ndim == 1
            if flat:
                vals = vals[:, None]
            term = w * (vals @ psi_inv[g].T)
            acc = term if acc is None else acc + term
        if flat and self.rep_out.dim == 1:
            return acc[:, 0]
        return acc

    def symmetric_part(self, x: np.ndarray) -> np.ndarray:
        X, single = _as_batch(x, self.rep_in.dim)
        out = self._average(X)
        return out[0] if single else out

    def antisym_part(self, x: np.ndarray) -> np.ndarray:
        X, single = _as_batch(x, self.rep_in.dim)
        out = np.asarray(self.base(X), dtype=np.float64) - self._average(X)
        return out[0] if single else out


def apply_Q(
    pred: Callable[[np.ndarray], np.ndarray],
    rep_in: Representation,
    rep_out: Representation,
    mode: str = "exact_sum",
    n_samples: int = 10_000,
    seed: int = 0,
) -> DecomposedPredictor:
    """Decompose a batched predictor into symmetric and anti-symmetric parts."""
    return DecomposedPredictor(
        base=pred, rep_in=rep_in, rep_out=rep_out, mode=mode, n_samples=n_samples, seed=seed
    )


def tta_average(
    pred: Callable[[np.ndarray], np.ndarray],
    rep_in: Representation,
    n: int,
    seed: int,
    mode: str = "monte_carlo",
) -> Callable[[np.ndarray], np.ndarray]:
    """Test-time augmentation: average predictions over group transforms.

    Invariance case only (no output representation).  "monte_carlo" draws
    n group elements i.i.d. from the Haar weights once and reuses them on
    every call; "exact" sums over the whole group and ignores n.
    """
    group = rep_in.group
    if mode == "exact":
        elements = np.arange(group.order)
        weights = group.weights
    elif mode == "monte_carlo":
        if n < 1:
            raise ValueError("tta_average needs n >= 1")
        rng = np.random.default_rng(seed)
        elements = rng.choice(group.order, size=n, p=group.weights)
        weights = np.full(n, 1.0 / n)
    else:
        raise ValueError(f"unknown tta mode {mode!r}")
    phi = rep_in.matrices

    def averaged(x: np.ndarray) -> np.ndarray:
        X, single = _as_batch(x, rep_in.dim)
        acc = None
        for g, w in zip(elements, weights):
            term = w * np.asarray(pred(X @ phi[g].T), dtype=np.float64)
            acc = term if acc is None else acc + term
        return acc[0] if single else acc

    return averaged


def empirical_rademacher(
    funcs: list,
    points: np.ndarray,
    mode: str = "enumerate",
    m_samples: int = 10_000,
    seed: int = 0,
) -> float:
    """Rad(F) = E_s[ sup_f | (1/n) sum_i s_i f(x_i) | ] over sign vectors s.

    "enumerate" averages over all 2^n sign vectors exactly (n <= 20);
    "sample" uses m_samples Monte-Carlo draws.
    """
    if not funcs:
        raise ValueError("empty function class")
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty point list")
    values = np.empty((len(funcs), n))
    for i, f in enumerate(funcs):
        values[i] = np.asarray(f(X), dtype=np.float64).reshape(n)

    if mode == "enumerate":
        if n > 20:
            raise ValueError(f"enumerate mode caps at 20 points, got {n}")
        total = 0.0
        bit = np.arange(n)
        block = 4096
        for start in range(0, 1 << n, block):
            idx = np.arange(start, min(start + block, 1 << n))
            signs = 2.0 * ((idx[:, None] >> bit) & 1) - 1.0
            total += np.abs(signs @ values.T).max(axis=1).sum()
        return total / (1 << n) / n
    if mode == "sample":
        rng = np.random.default_rng(seed)
        signs = rng.choice([-1.0, 1.0], size=(m_samples, n))
        return float(np.abs(signs @ values.T).max(axis=1).mean() / n)
    raise ValueError(f"unknown rademacher mode {mode!r}")


def verify_operator_identities(
    rep_in: Representation,
    rep_out: Representation | None = None,
    n_samples: int = 100_000,
    seed: int = 0,
) -> dict:
    """Run the operator identity battery for one (phi, psi) pair.

    Exact identities (projection idempotence and symmetry, intertwining
    fixed point, trace of the tensor vs the character inner product,
    pointwise reconstruction, Q o Q = Q) are held to 1e-9; the L2
    orthogonality of the two parts of a nonlinear predictor is a
    Monte-Carlo estimate held to 3 standard errors.
    """
    if rep_out is None:
        rep_out = build_representation(rep_in.group, "trivial 1")
    phi = build_phi(rep_in)
    P = phi.matrix
    dev_phi_idem = float(np.max(np.abs(P @ P - P)))
    dev_phi_sym = float(np.max(np.abs(P - P.T))) if rep_in.is_orthogonal else 0.0

    op_psi = build_psi(rep_in, rep_out)
    d, k = rep_in.dim, rep_out.dim
    rng = np.random.default_rng(seed)
    dev_psi_idem = 0.0
    dev_intertwine = 0.0
    for W in rng.standard_normal((3, d, k)):
        W_bar = op_psi.apply(W)
        dev_psi_idem = max(dev_psi_idem, float(np.max(np.abs(op_psi.apply(W_bar) - W_bar))))
        for g in rep_in.group.elements():
            lhs = W_bar.T @ rep_in.matrices[g]
            rhs = rep_out.matrices[g] @ W_bar.T
            dev_intertwine = max(dev_intertwine, float(np.max(np.abs(lhs - rhs))))
    side = d * k
    flat = op_psi.tensor.reshape(side, side)
    dev_psi_sym = float(np.max(np.abs(flat - flat.T))) if (
        rep_in.is_orthogonal and rep_out.is_orthogonal
    ) else 0.0
    dev_trace = float(abs(op_psi.trace - character_inner(rep_out, rep_in)))

    # nonlinear predictor split on invariant Gaussian inputs; the bias keeps
    # the symmetric part away from zero even when the action contains -I
    B = rng.standard_normal((d, k))
    c = 0.5 * rng.standard_normal(k)
    pred = lambda X: np.tanh(X @ B + c)
    op = apply_Q(pred, rep_in, rep_out)
    X = rng.standard_normal((n_samples, d))
    f_vals = pred(X)
    f_bar = op.symmetric_part(X)
    f_perp = op.antisym_part(X)
    dev_reconstruct = float(np.max(np.abs(f_vals - f_bar - f_perp)))
    small = X[:1000]
    op_twice = apply_Q(lambda Z: op.symmetric_part(Z), rep_in, rep_out)
    dev_q_idem = float(np.max(np.abs(op_twice.symmetric_part(small) - op.symmetric_part(small))))
    inner = (np.asarray(f_bar).reshape(n_samples, -1) * np.asarray(f_perp).reshape(n_samples, -1)).sum(axis=1)
    inner_mean = float(inner.mean())
    inner_se = float(inner.std(ddof=1) / np.sqrt(n_samples))

    exact_ok = max(
        dev_phi_idem, dev_phi_sym, dev_psi_idem, dev_psi_sym,
        dev_intertwine, dev_trace, dev_reconstruct, dev_q_idem,
    ) <= 1e-9
    ortho_ok = abs(inner_mean) <= 3.0 * max(inner_se, 1e-15)
    return {
        "group": rep_in.group.name,
        "rep_in": rep_in.name,
        "rep_out": rep_out.name,
        "dev_phi_idempotent": dev_phi_idem,
        "dev_phi_symmetric": dev_phi_sym,
        "dev_psi_idempotent": dev_psi_idem,
        "dev_psi_symmetric": dev_psi_sym,
        "dev_intertwine": dev_intertwine,
        "dev_trace": dev_trace,
        "dev_reconstruction": dev_reconstruct,
        "dev_q_idempotent": dev_q_idem,
        "inner_mean": inner_mean,
        "inner_se": inner_se,
        "verdict": "pass" if (exact_ok and ortho_ok) else "fail",
    }
