"""Tests for the averaged-kernel KRR lab.

Oracles: the switch condition for linear/Gaussian kernels, kbar = x'Phi y
for the linear kernel, N[k] = d and N[kbar] = dim S for isotropic Gaussian
inputs, the scalar KRR solve, and the ridgeless limits of the zeta moments.
"""

import math

import numpy as np
import pytest

from symlab.averaging import build_phi
from symlab.groups import build_group, build_representation
from symlab.kernel_gap import (
    KrrGapConfig,
    build_averaged_kernel,
    check_switch_condition,
    estimate_N,
    estimate_bias_term,
    explicit_bilinear_kernel,
    fit_krr,
    gaussian_kernel,
    krr_gap_experiment,
    linear_kernel,
    linear_kernel_bound,
)
from symlab.sampling import gaussian


def _perm_rep(descriptor, d=None):
    group = build_group(descriptor)
    return build_representation(group, "natural_permutation")


def _swap_rep():
    return _perm_rep("symmetric 2")


# ---------------------------------------------------------------- switch


def test_switch_verified_linear_orthogonal():
    rep = build_representation(build_group("cyclic 4"), "rotation_block 1")
    status, violation = check_switch_condition(linear_kernel(rep), n_pairs=32, seed=1)
    assert status == "verified"
    assert violation <= 1e-9


def test_switch_verified_gaussian_permutation():
    rep = _perm_rep("symmetric 3")
    status, _ = check_switch_condition(gaussian_kernel(rep, bandwidth=1.5), n_pairs=32, seed=2)
    assert status == "verified"


def test_switch_refuted_projection_bilinear():
    # k(x,y) = x1*y1 with the swap action: averaging over g on the left and
    # right disagrees, so O is not well defined on this RKHS
    kernel = explicit_bilinear_kernel(_swap_rep(), np.diag([1.0, 0.0]))
    status, violation = check_switch_condition(kernel, n_pairs=64, seed=3)
    assert status == "refuted"
    assert violation > 1e-6


def test_switch_unchecked_dead_band():
    eps = 3e-8
    kernel = explicit_bilinear_kernel(_swap_rep(), np.diag([1.0 + eps, 1.0 - eps]))
    status, violation = check_switch_condition(kernel, n_pairs=64, seed=4)
    assert status == "unchecked"
    assert 1e-9 < violation <= 1e-6


# ------------------------------------------------------------- averaging


def test_trivial_group_kbar_equals_k():
    rep = _perm_rep("cyclic 1")
    ak = build_averaged_kernel(gaussian_kernel(rep, bandwidth=1.0))
    rng = np.random.default_rng(5)
    A, B = rng.standard_normal((2, 7, 1))
    assert np.array_equal(ak.gram_bar(A, B), ak.parent.gram(A, B))
    assert np.max(np.abs(ak.gram_perp(A, B))) == 0.0


def test_linear_kernel_kbar_is_phi():
    rep = _perm_rep("cyclic 5")
    phi = build_phi(rep).matrix
    ak = build_averaged_kernel(linear_kernel(rep))
    rng = np.random.default_rng(6)
    A, B = rng.standard_normal((2, 9, 5))
    assert np.allclose(ak.gram_bar(A, B), A @ phi @ B.T, atol=1e-12)
    assert ak.switch_ok == "verified"


def test_invariant_base_kernel_unchanged():
    # k(x,y) = mean(x)*sum(y) is already invariant in each argument under S_3
    rep = _perm_rep("symmetric 3")
    kernel = explicit_bilinear_kernel(rep, np.ones((3, 3)) / 3.0)
    ak = build_averaged_kernel(kernel)
    rng = np.random.default_rng(7)
    A, B = rng.standard_normal((2, 8, 3))
    assert np.allclose(ak.gram_bar(A, B), kernel.gram(A, B), atol=1e-12)


def test_averaged_kernel_second_argument_invariance():
    rep = build_representation(build_group("cyclic 4"), "rotation_block 1")
    kernel = gaussian_kernel(rep, bandwidth=2.0)
    ak = build_averaged_kernel(kernel)
    rng = np.random.default_rng(8)
    A, B = rng.standard_normal((2, 6, 2))
    base = ak.gram_bar(A, B)
    group = rep.group
    for g in group.elements():
        assert np.max(np.abs(ak.gram_bar(A, B @ rep.matrices[g].T) - base)) <= 1e-10
    # pointwise decomposition and the double-average reduction
    assert np.allclose(ak.gram_bar(A, B) + ak.gram_perp(A, B), kernel.gram(A, B), atol=1e-12)
    doubled = sum(group.weights[g] * ak.gram_bar(A, B @ rep.matrices[g].T) for g in group.elements())
    assert np.max(np.abs(doubled - base)) <= 1e-10


def test_kernel_construction_rejections():
    rep = _swap_rep()
    with pytest.raises(ValueError):
        explicit_bilinear_kernel(rep, np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        explicit_bilinear_kernel(rep, np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        gaussian_kernel(rep, bandwidth=0.0)


# ----------------------------------------------------------- N functionals


def test_estimate_N_linear_kernel_is_d():
    d = 4
    rep = _perm_rep("cyclic 4")
    kernel = linear_kernel(rep)
    mean, se = estimate_N(kernel.gram, gaussian(d), pairs=20_000, seed=9)
    assert abs(mean - d) <= 4.0 * se


def test_estimate_N_averaged_linear_is_dim_s():
    rep = _perm_rep("cyclic 4")
    ak = build_averaged_kernel(linear_kernel(rep))
    dim_s = build_phi(rep).dim_invariant
    mean, se = estimate_N(ak.gram_bar, gaussian(4), pairs=20_000, seed=10)
    assert abs(mean - dim_s) <= 4.0 * se


def test_estimate_N_zero_kernel():
    mean, se = estimate_N(lambda A, B: np.zeros((A.shape[0], B.shape[0])), gaussian(3), pairs=1000, seed=0)
    assert mean == 0.0 and se == 0.0


def test_estimate_N_requires_1000_pairs():
    with pytest.raises(ValueError):
        estimate_N(lambda A, B: A @ B.T, gaussian(2), pairs=999, seed=0)


def test_N_decomposition():
    rep = _perm_rep("symmetric 3")
    kernel = gaussian_kernel(rep, bandwidth=math.sqrt(3.0))
    ak = build_averaged_kernel(kernel)
    mu = gaussian(3)
    n_full, se_full = estimate_N(kernel.gram, mu, pairs=6000, seed=11)
    n_bar, se_bar = estimate_N(ak.gram_bar, mu, pairs=6000, seed=12)
    n_perp, se_perp = estimate_N(ak.gram_perp, mu, pairs=6000, seed=13)
    combined = math.sqrt(se_full ** 2 + se_bar ** 2 + se_perp ** 2)
    assert abs(n_full - (n_bar + n_perp)) <= 4.0 * combined


# ------------------------------------------------------------------- KRR


def test_fit_krr_scalar_solve():
    rep = _perm_rep("cyclic 1")
    model = fit_krr(linear_kernel(rep), np.array([[2.0]]), np.array([3.0]), rho=1.0)
    # k(x1,x1) = 4, so alpha = y/(c+rho) = 3/5
    assert np.allclose(model.alpha, [0.6], atol=1e-14)
    assert np.allclose(model.predict(np.array([[1.0]])), [1.2], atol=1e-14)


def test_fit_krr_large_rho_shrinks_to_zero():
    rep = _perm_rep("symmetric 3")
    rng = np.random.default_rng(14)
    X = rng.standard_normal((20, 3))
    y = rng.standard_normal(20)
    model = fit_krr(gaussian_kernel(rep, bandwidth=1.0), X, y, rho=1e8)
    assert np.max(np.abs(model.predict(X))) <= 1e-5
    assert np.linalg.norm(model.alpha) <= 10.0 * np.linalg.norm(y) / 1e8


def test_fit_krr_interpolates_representer_target():
    rep = _perm_rep("symmetric 3")
    kernel = gaussian_kernel(rep, bandwidth=1.5)
    rng = np.random.default_rng(15)
    X = rng.standard_normal((12, 3))
    coef = rng.standard_normal(12)
    y = kernel.gram(X, X) @ coef
    model = fit_krr(kernel, X, y, rho=1e-8)
    assert float(np.mean((model.predict(X) - y) ** 2)) <= 1e-6


def test_fit_krr_residual_identity():
    rep = _perm_rep("cyclic 4")
    kernel = gaussian_kernel(rep, bandwidth=2.0)
    rng = np.random.default_rng(16)
    X = rng.standard_normal((15, 4))
    y = rng.standard_normal(15)
    model = fit_krr(kernel, X, y, rho=0.3)
    K = kernel.gram(X, X)
    residual = (K + 0.3 * np.eye(15)) @ model.alpha - y
    assert np.linalg.norm(residual) <= 1e-8 * max(1.0, np.linalg.norm(y))


def test_fit_krr_requires_positive_rho():
    rep = _perm_rep("cyclic 1")
    with pytest.raises(ValueError):
        fit_krr(linear_kernel(rep), np.array([[1.0]]), np.array([1.0]), rho=0.0)


# ---------------------------------------------------------- gap experiment


def test_trivial_group_gap_and_bound_zero():
    rep = _perm_rep("cyclic 1")
    config = KrrGapConfig(
        kernel=gaussian_kernel(rep, bandwidth=1.0),
        f_star=lambda X: np.tanh(X[:, 0]),
        mu=gaussian(1),
        n=10,
        sigma=0.3,
        rho=0.5,
        trials=5,
        seed=17,
        n_pairs=1000,
        bias_trials=5,
    )
    report = krr_gap_experiment(config)
    assert report.mc_gap_mean == 0.0
    assert report.closed_form == 0.0
    assert report.verdict == "pass"
    assert report.dim_A == 0.0


def test_krr_gap_bound_holds_and_metadata():
    rep = _perm_rep("symmetric 3")
    config = KrrGapConfig(
        kernel=gaussian_kernel(rep, bandwidth=math.sqrt(3.0)),
        f_star=lambda X: np.tanh(X.sum(axis=1)),
        mu=gaussian(3),
        n=24,
        sigma=0.5,
        rho=1.0,
        trials=100,
        seed=18,
        n_test=128,
        n_pairs=2000,
        bias_trials=40,
    )
    report = krr_gap_experiment(config)
    assert report.verdict == "pass"
    assert report.mc_gap_mean + 4.0 * report.mc_gap_se >= report.closed_form
    assert report.mc_gap_mean >= 0.0
    for key in ("rho", "Mk", "N_kperp", "bound_bias", "bound_variance", "switch"):
        assert key in report.metadata
    assert report.metadata["switch"] == "verified"
    assert report.closed_form == pytest.approx(
        report.metadata["bound_bias"] + report.metadata["bound_variance"]
    )


def test_gap_equals_risk_difference():
    # R[f] - R[fbar] = E[fperp^2] when target and mu are invariant: the cross
    # term vanishes because fbar - f* is invariant and fperp is orthogonal
    rep = _perm_rep("symmetric 3")
    kernel = gaussian_kernel(rep, bandwidth=1.2)
    ak = build_averaged_kernel(kernel)
    rng = np.random.default_rng(19)
    X = rng.standard_normal((30, 3))
    f_star = lambda Z: np.tanh(Z.sum(axis=1))
    y = f_star(X) + 0.4 * rng.standard_normal(30)
    model = fit_krr(kernel, X, y, rho=0.8)
    X_test = rng.standard_normal((200_000, 3))
    truth = f_star(X_test)
    f_hat = model.predict(X_test)
    f_bar = model.predict_averaged(X_test, ak)
    samples = (f_hat - truth) ** 2 - (f_bar - truth) ** 2 - (f_hat - f_bar) ** 2
    se = samples.std(ddof=1) / math.sqrt(samples.size)
    assert abs(samples.mean()) <= 4.0 * max(se, 1e-12)


def test_f_star_invariance_enforced():
    rep = _perm_rep("symmetric 3")
    with pytest.raises(ValueError, match="invariant"):
        KrrGapConfig(
            kernel=gaussian_kernel(rep, bandwidth=1.0),
            f_star=lambda X: X[:, 0],
            mu=gaussian(3),
            n=8,
            sigma=0.1,
            rho=0.5,
            trials=2,
            seed=0,
        )


def test_bias_zero_for_invariant_kernel():
    # representers of an invariant kernel are invariant functions, so the
    # anti-symmetric part of any fit is identically zero
    rep = _perm_rep("symmetric 3")
    kernel = explicit_bilinear_kernel(rep, np.ones((3, 3)) / 3.0)
    config = KrrGapConfig(
        kernel=kernel,
        f_star=lambda X: X.sum(axis=1),
        mu=gaussian(3),
        n=12,
        sigma=0.0,
        rho=0.5,
        trials=2,
        seed=21,
        bias_trials=8,
    )
    mean, se = estimate_bias_term(config)
    assert mean <= max(4.0 * se, 1e-12)


def test_bias_positive_when_switch_refuted():
    # k(x,y) = x1*y1 under the swap: fits live on the x1 axis, and their
    # group average genuinely differs from them
    kernel = explicit_bilinear_kernel(_swap_rep(), np.diag([1.0, 0.0]))
    config = KrrGapConfig(
        kernel=kernel,
        f_star=lambda X: X.sum(axis=1),
        mu=gaussian(2),
        n=40,
        sigma=0.0,
        rho=0.1,
        trials=2,
        seed=22,
        bias_trials=60,
    )
    ak = build_averaged_kernel(kernel)
    assert ak.switch_ok == "refuted"
    mean, se = estimate_bias_term(config, averaged=ak)
    assert mean > 4.0 * se
    assert mean > 0.1


# ----------------------------------------------------- linear kernel bound


def test_linear_bound_ridgeless_underparameterized():
    # rho -> 0 with n < d: d*zeta1 - zeta2 -> d*n - n^2, exactly per sample
    out = linear_kernel_bound(
        d=4, n=2, rho=1e-9, theta_norm=1.0,
        phi_matrix=np.ones((4, 4)) / 4.0, trials=50, seed=23,
    )
    assert out["zeta1"] == pytest.approx(2.0, abs=1e-6)
    assert out["zeta2"] == pytest.approx(4.0, abs=1e-6)
    assert 4.0 * out["zeta1"] - out["zeta2"] == pytest.approx(4 * 2 - 2 ** 2, abs=1e-5)


def test_linear_bound_ridgeless_overparameterized_bias_vanishes():
    out = linear_kernel_bound(
        d=4, n=6, rho=1e-9, theta_norm=1.0,
        phi_matrix=np.ones((4, 4)) / 4.0, trials=50, seed=24,
    )
    assert 4.0 * out["zeta1"] - out["zeta2"] == pytest.approx(0.0, abs=1e-5)
    assert out["bias_bound"] == pytest.approx(0.0, abs=1e-6)


def test_linear_bound_zeta_inequality_and_variance_term():
    d, n, rho = 6, 4, 1.0
    phi = np.ones((d, d)) / d
    out = linear_kernel_bound(d=d, n=n, rho=rho, theta_norm=1.0, phi_matrix=phi, trials=200, seed=25)
    assert out["zeta2"] <= min(n, d) * out["zeta1"] + 1e-9
    fro2 = float((phi ** 2).sum())
    expected = (d - fro2) / (math.sqrt(n) * d + rho / math.sqrt(n)) ** 2
    assert out["variance_bound"] == pytest.approx(expected, rel=1e-12)
    assert out["bound"] == pytest.approx(out["bias_bound"] + out["variance_bound"], rel=1e-12)


def test_linear_bound_requires_d_above_one():
    with pytest.raises(ValueError):
        linear_kernel_bound(d=1, n=2, rho=1.0, theta_norm=1.0, phi_matrix=np.eye(1), trials=10, seed=0)
