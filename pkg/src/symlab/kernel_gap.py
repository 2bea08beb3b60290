"""Kernel ridge regression with Haar-averaged kernels.

Provides the KRR solver, the switch-condition checker, averaged and
remainder kernel evaluation, the N[.] second-moment functionals, the
kernel-invariance lower bound experiment, and its linear-kernel
specialization on the sphere.

Kernels are evaluated through Gram callables gram(A, B)[i, j] = k(a_i, b_j).
The averaged kernel transforms the second argument,
kbar(x, y) = sum_g w(g) k(x, phi(g) y), so for a fitted KRR model the
averaged predictor sum_i alpha_i kbar(x_i, .) is exactly the group
average of the fitted function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .averaging import build_phi
from .groups import Representation
from .linear_gap import GapReport
from .sampling import Distribution

__all__ = [
    "KernelSpec",
    "AveragedKernel",
    "KrrModel",
    "KrrGapConfig",
    "linear_kernel",
    "gaussian_kernel",
    "inner_product_kernel",
    "explicit_bilinear_kernel",
    "check_switch_condition",
    "build_averaged_kernel",
    "estimate_N",
    "fit_krr",
    "krr_gap_experiment",
    "estimate_bias_term",
    "linear_kernel_bound",
]

SWITCH_VERIFY_TOL = 1e-9
SWITCH_REFUTE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """A base kernel with a group action on its input space.

    Mk is sup_x k(x, x) over the support of the sampling distribution;
    None means not declared (the gap experiment will estimate it).
    """

    name: str
    action: Representation
    gram: Callable[[np.ndarray, np.ndarray], np.ndarray]
    Mk: float | None = None

    @property
    def dim(self) -> int:
        return self.action.dim


def _validate_kernel(spec: KernelSpec) -> KernelSpec:
    rng = np.random.default_rng(20)
    d = spec.dim
    X, Y = rng.standard_normal((2, 8, d))
    if np.max(np.abs(spec.gram(X, Y) - spec.gram(Y, X).T)) > 1e-12:
        raise ValueError(f"kernel {spec.name!r} is not symmetric")
    P = rng.standard_normal((30, d))
    K = spec.gram(P, P)
    if float(np.linalg.eigvalsh((K + K.T) / 2).min()) < -1e-8:
        raise ValueError(f"kernel {spec.name!r} is not positive definite on random points")
    return spec


def linear_kernel(action: Representation, Mk: float | None = None) -> KernelSpec:
    return _validate_kernel(KernelSpec("linear", action, lambda A, B: A @ B.T, Mk))


def gaussian_kernel(action: Representation, bandwidth: float, Mk: float = 1.0) -> KernelSpec:
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")

    def gram(A, B):
        sq = (
            (A ** 2).sum(axis=1)[:, None]
            + (B ** 2).sum(axis=1)[None, :]
            - 2.0 * (A @ B.T)
        )
        return np.exp(-np.maximum(sq, 0.0) / (2.0 * bandwidth ** 2))

    return _validate_kernel(KernelSpec(f"gaussian({bandwidth!r})", action, gram, Mk))


def inner_product_kernel(
    action: Representation, profile: Callable[[np.ndarray], np.ndarray], Mk: float | None = None,
    name: str = "inner_product",
) -> KernelSpec:
    return _validate_kernel(KernelSpec(name, action, lambda A, B: profile(A @ B.T), Mk))


def explicit_bilinear_kernel(
    action: Representation, matrix: np.ndarray, Mk: float | None = None
) -> KernelSpec:
    A = np.asarray(matrix, dtype=np.float64)
    if A.shape != (action.dim, action.dim) or np.max(np.abs(A - A.T)) > 1e-12:
        raise ValueError("bilinear kernel matrix must be symmetric (d, d)")
    return _validate_kernel(KernelSpec("bilinear", action, lambda X, Y: X @ A @ Y.T, Mk))


def _pair_values(gram, X: np.ndarray, Y: np.ndarray, block: int = 256) -> np.ndarray:
    """k(x_i, y_i) for aligned rows, computed blockwise off the Gram diagonal."""
    n = X.shape[0]
    out = np.empty(n)
    for start in range(0, n, block):
        sl = slice(start, min(start + block, n))
        out[sl] = np.diagonal(gram(X[sl], Y[sl]))
    return out


def check_switch_condition(
    kernel: KernelSpec, n_pairs: int = 64, seed: int = 0
) -> tuple[str, float]:
    """Compare sum_g w(g) k(g x, y) against sum_g w(g) k(x, g y) on random pairs.

    Returns ("verified" | "refuted" | "unchecked", max violation); the dead
    band between the two thresholds is reported as unchecked rather than
    misclassifying quadrature error.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    group = kernel.action.group
    mats = kernel.action.matrices
    X, Y = rng.standard_normal((2, n_pairs, kernel.dim))
    lhs = np.zeros(n_pairs)
    rhs = np.zeros(n_pairs)
    for g in group.elements():
        w = group.weights[g]
        lhs += w * _pair_values(kernel.gram, X @ mats[g].T, Y)
        rhs += w * _pair_values(kernel.gram, X, Y @ mats[g].T)
    violation = float(np.max(np.abs(lhs - rhs)))
    if violation <= SWITCH_VERIFY_TOL:
        return "verified", violation
    if violation > SWITCH_REFUTE_TOL:
        return "refuted", violation
    return "unchecked", violation


@dataclass(frozen=True, eq=False)
class AveragedKernel:
    """kbar(x, y) = sum_g w(g) k(x, phi(g) y) and its remainder k - kbar."""

    parent: KernelSpec
    switch_ok: str
    switch_violation: float

    def gram_bar(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        group = self.parent.action.group
        mats = self.parent.action.matrices
        out = None
        for g in group.elements():
            term = group.weights[g] * self.parent.gram(A, B @ mats[g].T)
            out = term if out is None else out + term
        return out

    def gram_perp(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        return self.parent.gram(A, B) - self.gram_bar(A, B)


def build_averaged_kernel(kernel: KernelSpec, n_pairs: int = 64, seed: int = 0) -> AveragedKernel:
    """Average the kernel over the group; record the switch-condition state."""
    status, violation = check_switch_condition(kernel, n_pairs=n_pairs, seed=seed)
    ak = AveragedKernel(parent=kernel, switch_ok=status, switch_violation=violation)
    rng = np.random.default_rng(seed + 1)
    X, Y = rng.standard_normal((2, 8, kernel.dim))
    # invariance in the second argument holds by construction
    mats = kernel.action.matrices
    base = ak.gram_bar(X, Y)
    for g in kernel.action.group.elements():
        if np.max(np.abs(ak.gram_bar(X, Y @ mats[g].T) - base)) > 1e-10:
            raise ValueError("averaged kernel is not invariant in its second argument")
    if status == "verified":
        if np.max(np.abs(base - ak.gram_bar(Y, X).T)) > 1e-10:
            raise ValueError("switch condition verified but averaged kernel is asymmetric")
        P = rng.standard_normal((30, kernel.dim))
        Kbar = ak.gram_bar(P, P)
        if float(np.linalg.eigvalsh((Kbar + Kbar.T) / 2).min()) < -1e-8:
            raise ValueError("switch condition verified but averaged kernel is not PSD")
    return ak


def estimate_N(
    gram: Callable[[np.ndarray, np.ndarray], np.ndarray],
    mu: Distribution,
    pairs: int,
    seed: int,
) -> tuple[float, float]:
    """Monte-Carlo estimate of N[j] = E[j(X, Y)^2] over independent X, Y ~ mu."""
    if pairs < 1000:
        raise ValueError("estimate_N needs pairs >= 1000")
    rng = np.random.default_rng(seed)
    X = mu.sample(pairs, rng)
    Y = mu.sample(pairs, rng)
    vals = _pair_values(gram, X, Y) ** 2
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(pairs))


@dataclass(frozen=True, eq=False)
class KrrModel:
    """Fitted kernel ridge regression: alpha = (K + rho I)^{-1} Y."""

    kernel: KernelSpec
    X: np.ndarray
    alpha: np.ndarray
    rho: float

    def predict(self, X_new: np.ndarray) -> np.ndarray:
        return self.kernel.gram(self.X, X_new).T @ self.alpha

    def predict_averaged(self, X_new: np.ndarray, averaged: AveragedKernel) -> np.ndarray:
        # exact group average of the fitted function via kbar on the representers
        return averaged.gram_bar(self.X, X_new).T @ self.alpha


def fit_krr(kernel: KernelSpec, X: np.ndarray, Y: np.ndarray, rho: float) -> KrrModel:
    """Solve (K + rho I) alpha = Y by Cholesky with jitter escalation."""
    if rho <= 0:
        raise ValueError("rho must be > 0")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n = X.shape[0]
    K = kernel.gram(X, X)
    base = K + rho * np.eye(n)
    jitter = 1e-12 * float(np.trace(K)) / n
    alpha = None
    for attempt in range(4):
        try:
            factor = cho_factor(base + attempt * jitter * np.eye(n), lower=True)
            alpha = cho_solve(factor, Y)
            break
        except np.linalg.LinAlgError:
            continue
    if alpha is None:
        raise np.linalg.LinAlgError(
            f"Gram factorization failed; condition estimate {np.linalg.cond(base):.3e}"
        )
    residual = np.linalg.norm(base @ alpha - Y)
    if residual > 1e-8 * max(1.0, np.linalg.norm(Y)):
        raise np.linalg.LinAlgError(f"KRR solve residual too large: {residual:.3e}")
    return KrrModel(kernel=kernel, X=X, alpha=alpha, rho=rho)


@dataclass(frozen=True, eq=False)
class KrrGapConfig:
    """Averaged-KRR gap experiment with an invariant target.

    f_star must be invariant under the kernel's action (checked on
    samples); mu must be one of the invariant distributions.
    """

    kernel: KernelSpec
    f_star: Callable[[np.ndarray], np.ndarray]
    mu: Distribution
    n: int
    sigma: float
    rho: float
    trials: int
    seed: int
    n_test: int = 256
    n_pairs: int = 4000
    bias_trials: int = 200

    def __post_init__(self) -> None:
        if self.mu.dim != self.kernel.dim:
            raise ValueError("distribution dimension does not match the kernel action")
        if self.rho <= 0 or self.n < 1 or self.trials < 1 or self.sigma < 0:
            raise ValueError("need rho > 0, n >= 1, trials >= 1, sigma >= 0")
        rng = np.random.default_rng((self.seed, 101))
        X = self.mu.sample(32, rng)
        vals = np.asarray(self.f_star(X)).reshape(-1)
        group = self.kernel.action.group
        mats = self.kernel.action.matrices
        ids = (
            np.arange(group.order)
            if group.order <= 16
            else rng.integers(0, group.order, size=16)
        )
        for g in ids:
            dev = np.max(np.abs(np.asarray(self.f_star(X @ mats[g].T)).reshape(-1) - vals))
            if dev > 1e-9:
                raise ValueError(f"f_star is not invariant under the action: deviation {dev:.3e}")


def estimate_bias_term(config: KrrGapConfig, averaged: AveragedKernel | None = None) -> tuple[float, float]:
    """Noiseless sub-procedure: fit KRR on f_star(X_i) and Monte-Carlo the
    squared anti-symmetric part of the fit on fresh points."""
    if averaged is None:
        averaged = build_averaged_kernel(config.kernel)
    rng = np.random.default_rng((config.seed, 77))
    per_trial = np.empty(config.bias_trials)
    for t in range(config.bias_trials):
        X = config.mu.sample(config.n, rng)
        model = fit_krr(config.kernel, X, np.asarray(config.f_star(X)).reshape(-1), config.rho)
        X_test = config.mu.sample(config.n_test, rng)
        perp = model.predict(X_test) - model.predict_averaged(X_test, averaged)
        per_trial[t] = float((perp ** 2).mean())
    se = float(per_trial.std(ddof=1) / math.sqrt(config.bias_trials)) if config.bias_trials > 1 else math.inf
    return float(per_trial.mean()), se


def krr_gap_experiment(config: KrrGapConfig) -> GapReport:
    """Estimate E[R[f] - R[f_bar]] for KRR under group averaging and compare
    against the invariance lower bound (estimated bias + variance term)."""
    averaged = build_averaged_kernel(config.kernel)
    rng = np.random.default_rng(config.seed)
    gaps = np.empty(config.trials)
    for t in range(config.trials):
        X = config.mu.sample(config.n, rng)
        y = np.asarray(config.f_star(X)).reshape(-1) + config.sigma * rng.standard_normal(config.n)
        model = fit_krr(config.kernel, X, y, config.rho)
        X_test = config.mu.sample(config.n_test, rng)
        perp = model.predict(X_test) - model.predict_averaged(X_test, averaged)
        gaps[t] = float((perp ** 2).mean())
    mean = float(gaps.mean())
    se = float(gaps.std(ddof=1) / math.sqrt(config.trials)) if config.trials > 1 else math.inf

    mk = config.kernel.Mk
    if mk is None:
        probe = config.mu.sample(2048, np.random.default_rng((config.seed, 55)))
        mk = float(_pair_values(config.kernel.gram, probe, probe).max())
    n_perp, n_perp_se = estimate_N(averaged.gram_perp, config.mu, config.n_pairs, seed=config.seed + 7)
    variance_term = config.sigma ** 2 * n_perp / (math.sqrt(config.n) * mk + config.rho / math.sqrt(config.n)) ** 2
    bias_term, bias_se = estimate_bias_term(config, averaged)
    bound = bias_term + variance_term

    phi = build_phi(config.kernel.action)
    verdict = "pass" if mean + 4.0 * se >= bound else "fail"
    return GapReport(
        experiment="gap-kernel",
        mc_gap_mean=mean,
        mc_gap_se=se,
        closed_form=bound,
        dim_A=float(config.kernel.dim - phi.dim_invariant),
        verdict=verdict,
        metadata={
            "group": config.kernel.action.group.name,
            "kernel": config.kernel.name,
            "d": config.kernel.dim,
            "n": config.n,
            "rho": config.rho,
            "sigma": config.sigma,
            "trials": config.trials,
            "seed": config.seed,
            "Mk": mk,
            "N_kperp": n_perp,
            "N_kperp_se": n_perp_se,
            "bound_bias": bias_term,
            "bound_bias_se": bias_se,
            "bound_variance": variance_term,
            "switch": averaged.switch_ok,
        },
    )


def linear_kernel_bound(
    d: int,
    n: int,
    rho: float,
    theta_norm: float,
    phi_matrix: np.ndarray,
    trials: int,
    seed: int,
    sigma: float = 1.0,
) -> dict:
    """Closed-ish form of the invariance bound for the linear kernel on the
    sphere of radius sqrt(d): zeta moments of the Gram eigenvalues give the
    bias term, and N[k_perp] = d - |Phi|_F^2 gives the variance term
    exactly.  The stated arithmetic assumes sigma = 1."""
    if d <= 1:
        raise ValueError("linear kernel bound needs d > 1")
    phi = np.asarray(phi_matrix, dtype=np.float64)
    fro2 = float((phi ** 2).sum())
    rng = np.random.default_rng(seed)
    z1 = np.empty(trials)
    z2 = np.empty(trials)
    for t in range(trials):
        Z = rng.standard_normal((n, d))
        X = math.sqrt(d) * Z / np.linalg.norm(Z, axis=1, keepdims=True)
        gamma = np.linalg.eigvalsh(X @ X.T)
        ratio = gamma / (gamma + rho)
        z1[t] = float((ratio ** 2).sum())
        z2[t] = float(ratio.sum() ** 2)
    zeta1 = float(z1.mean())
    zeta2 = float(z2.mean())
    bias = theta_norm ** 2 * (d * zeta1 - zeta2) * (d - fro2) / (d * (d + 2) * (d - 1))
    variance = sigma ** 2 * (d - fro2) / (math.sqrt(n) * d + rho / math.sqrt(n)) ** 2
    return {
        "zeta1": zeta1,
        "zeta2": zeta2,
        "zeta1_se": float(z1.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf,
        "zeta2_se": float(z2.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf,
        "bias_bound": bias,
        "variance_bound": variance,
        "bound": bias + variance,
    }
