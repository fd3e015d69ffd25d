"""Oracle module: Riccati solve, consistency operator, fixed point, gains,
costate, exact costs, and exact critic targets, all checked against the
closed-form scalar solution and structural identities."""

import math

import numpy as np
import pytest

from lqmfg import (
    AssumptionError,
    DivergentSeriesError,
    FeedbackPolicy,
    GameSpec,
    MeanFieldLaw,
    UnstableSystemError,
    ValidationError,
    aggregate,
    apply_T,
    compute_costate,
    equilibrium_recursion_residual,
    exact_cost,
    fixed_point_mf,
    mf_series,
    optimal_gain,
    solve_dare,
    true_theta,
)
from lqmfg.linalg import solve_stein, spectral_norm, svec
from lqmfg.oracle import riccati_fixed_point

from conftest import G1_CLOSED, H1_CLOSED, INST1, K1_CLOSED, P1_CLOSED, T1_CLOSED, random_in_ball


# --- solve_dare ---------------------------------------------------------


def test_dare_matches_scalar_quadratic(rd1):
    assert abs(rd1.P[0, 0] - P1_CLOSED) < 1e-10
    assert abs(rd1.G_P[0, 0] - G1_CLOSED) < 1e-10
    assert abs(rd1.H_P[0, 0] - H1_CLOSED) < 1e-10
    assert abs(rd1.T_P - T1_CLOSED) < 1e-10
    assert rd1.assumption1_ok


def test_dare_residual_and_identities(inst1, rd1, inst2, rd2):
    for spec, rd in ((inst1, rd1), (inst2, rd2)):
        res = spectral_norm(
            rd.P - (spec.A.T @ rd.P @ spec.A + spec.C_Z + spec.A.T @ rd.P @ spec.B @ rd.G_P @ rd.P @ spec.A)
        )
        assert res <= 1e-10
        # rearrangement P = H_P P A + C_Z
        assert spectral_norm(rd.P - (rd.H_P @ rd.P @ spec.A + spec.C_Z)) <= 1e-10
        assert np.allclose(rd.P, rd.P.T)
        assert np.linalg.eigvalsh(rd.P).min() > 0


def test_dare_zero_state_matrix_gives_cost_weight():
    for m in (1, 3):
        rng = np.random.default_rng(5 + m)
        q = rng.normal(size=(m, m))
        C_Z = q @ q.T + 0.2 * np.eye(m)
        spec = GameSpec(A=np.zeros((m, m)), B=np.eye(m), C_Z=C_Z, C_U=np.eye(m),
                        Sigma_w=np.eye(m), Sigma_0=np.eye(m), nu0=np.ones(m))
        rd = solve_dare(spec)
        assert np.allclose(rd.P, C_Z, atol=1e-10)


def test_dare_zero_tracking_weight(inst1):
    spec = GameSpec(**{**INST1, "C_Z": 0.0})
    assert not (r := __import__("lqmfg").validate_spec(spec)).checks["observable"]
    rd = solve_dare(spec)
    assert abs(rd.P[0, 0]) <= 1e-12


# --- consistency operator ----------------------------------------------


def test_operator_fixes_state_matrix(inst1, rd1):
    # DARE rearrangement forces S(A) = P A and hence T(A) = A
    out = apply_T(inst1.A, rd1, inst1)
    assert spectral_norm(out - inst1.A) <= 1e-10


def test_operator_at_zero(inst1, rd1):
    out = apply_T(np.zeros((1, 1)), rd1, inst1)
    assert spectral_norm(out - rd1.H_P.T) <= 1e-12
    assert abs(out[0, 0] - 0.27055) < 1e-4


def test_operator_zero_tracking_weight_is_constant():
    spec = GameSpec(**{**INST1, "C_Z": 0.0})
    rd = solve_dare(spec)
    for f in (0.0, 0.3, 0.6):
        out = apply_T([[f]], rd, spec)
        assert spectral_norm(out - rd.H_P.T) <= 1e-12


def test_series_divergence_rejected(inst1, rd1):
    bad = 1.0 / spectral_norm(rd1.H_P) + 0.5
    with pytest.raises(DivergentSeriesError, match=">= 1"):
        apply_T([[bad]], rd1, inst1)


def test_series_matches_stein_solve(inst1, rd1, inst2, rd2):
    rng = np.random.default_rng(2)
    for spec, rd in ((inst1, rd1), (inst2, rd2)):
        for _ in range(20):
            F = random_in_ball(rng, spec.m, (1 + rd.T_P) / 2)
            a = mf_series(F, rd, spec, method="series")
            b = mf_series(F, rd, spec, method="stein")
            assert spectral_norm(a - b) <= 1e-11


# --- fixed point --------------------------------------------------------


def test_fixed_point_scalar(mfe1):
    assert abs(mfe1.F_star[0, 0] - 0.3) <= 1e-8
    assert mfe1.residual <= 1e-10


def test_fixed_point_from_fstar_one_iteration(rd1, inst1, mfe1):
    sol = fixed_point_mf(rd1, inst1, F_init=mfe1.F_star, tol=1e-10)
    assert sol.iterations == 1
    assert sol.residual <= 1e-10


def test_fixed_point_iteration_bound(rd1, inst1):
    sol = fixed_point_mf(rd1, inst1, F_init=[[0.7]], tol=1e-10)
    bound = math.ceil(math.log(1e-10 / abs(0.7 - 0.3)) / math.log(rd1.T_P))
    assert abs(sol.F_star[0, 0] - 0.3) <= 1e-8
    assert sol.iterations <= bound


def test_fixed_point_requires_assumption():
    # strong coupling violates the contraction assumption
    spec = GameSpec(**{**INST1, "A": 0.95, "C_Z": 2.0})
    rd = solve_dare(spec)
    assert not rd.assumption1_ok
    with pytest.raises(AssumptionError, match="T_P"):
        fixed_point_mf(rd, spec)


def test_fixed_point_in_ball(mfe1, rd1, mfe2, rd2):
    for mfe, rd in ((mfe1, rd1), (mfe2, rd2)):
        assert spectral_norm(mfe.F_star) <= (1 + rd.T_P) / 2 + 1e-12


def test_nce_consistency_of_solution(mfe1, inst1, mfe2, inst2):
    for mfe, spec in ((mfe1, inst1), (mfe2, inst2)):
        assert spectral_norm(aggregate(mfe.K_star, spec) - mfe.F_star) <= 1e-8


# --- optimal gain -------------------------------------------------------


def test_gain_scalar_values(mfe1, rd1, inst1):
    K = optimal_gain(mfe1.F_star, rd1, inst1)
    assert abs(K.K1[0, 0] - K1_CLOSED) < 1e-8
    assert abs(K.K1[0, 0] - 0.02945) < 1e-4
    assert abs(K.K1[0, 0] + K.K2[0, 0]) <= 1e-10  # K1 + K2 = 0 at F* = A
    # closed loop equals H_P^T
    assert spectral_norm(inst1.A - inst1.B @ K.K1 - rd1.H_P.T) <= 1e-10


def test_gain_zero_tracking_weight():
    spec = GameSpec(**{**INST1, "C_Z": 0.0})
    rd = solve_dare(spec)
    for f in (0.0, 0.4):
        K = optimal_gain([[f]], rd, spec)
        assert spectral_norm(K.K2) <= 1e-14


def test_gain_agrees_with_augmented_riccati(inst1, rd1, inst2, rd2):
    # independent route: LQR on the augmented system (Abar, Bbar, C_X, C_U)
    from lqmfg.model import build_augmented

    rng = np.random.default_rng(17)
    for spec, rd in ((inst1, rd1), (inst2, rd2)):
        for _ in range(3):
            F = random_in_ball(rng, spec.m, (1 + rd.T_P) / 2)
            aug = build_augmented(spec, MeanFieldLaw(F=F, nu0=spec.nu0))
            Pbar, _, _ = riccati_fixed_point(aug.Abar, aug.Bbar, aug.C_X, spec.C_U, tol=1e-14)
            Kbar = np.linalg.solve(spec.C_U + aug.Bbar.T @ Pbar @ aug.Bbar, aug.Bbar.T @ Pbar @ aug.Abar)
            K = optimal_gain(F, rd, spec)
            assert spectral_norm(Kbar - K.K) <= 1e-8


# --- costate ------------------------------------------------------------


def test_costate_zero_trajectory(rd1, inst1):
    lam = compute_costate(lambda t: np.zeros(1), 3, rd1, inst1)
    assert np.allclose(lam, 0.0)


def test_costate_geometric_reference(rd1, inst1):
    # Zbar_t = 0.3^t gives lambda_t = -P 0.3^t in closed form
    for t in (0, 1, 5):
        lam = compute_costate(lambda k: np.array([0.3**k]), t, rd1, inst1, sup_norm=1.0)
        assert abs(lam[0] + P1_CLOSED * 0.3**t) <= 1e-10
    lam1 = compute_costate(lambda k: np.array([0.3**k]), 1, rd1, inst1)
    assert abs(lam1[0] + 0.032650) < 1e-5


def test_costate_constant_reference(rd1, inst1, rd2, inst2):
    for rd, spec in ((rd1, inst1), (rd2, inst2)):
        c = np.linspace(1.0, 2.0, spec.m)
        lam = compute_costate(lambda t: c, 4, rd, spec)
        expected = -np.linalg.solve(np.eye(spec.m) - rd.H_P, spec.C_Z @ c)
        assert np.allclose(lam, expected, atol=1e-10)


def test_costate_nonlinear_bounded_trajectory(rd1, inst1):
    # arbitrary bounded (non-geometric) reference: series vs brute truncation
    zb = lambda t: np.array([math.sin(0.3 * t) / (1.0 + 0.1 * t)])
    lam = compute_costate(zb, 2, rd1, inst1, sup_norm=1.0)
    brute = -sum(np.linalg.matrix_power(rd1.H_P, k) @ inst1.C_Z @ zb(2 + k) for k in range(200))
    assert np.allclose(lam, brute, atol=1e-10)


def test_costate_rejects_unbounded_witness(rd1, inst1):
    # stated bound violated mid-scan
    with pytest.raises(ValidationError, match="bound"):
        compute_costate(lambda t: np.array([1.5**t]), 0, rd1, inst1, sup_norm=3.0)
    # no stated bound, but growth fast enough to break the series
    with pytest.raises(ValidationError, match="unbounded"):
        compute_costate(lambda t: np.array([4.0**t]), 0, rd1, inst1)


# --- exact cost ---------------------------------------------------------


def test_exact_cost_zero_gain_closed_form(inst1, mf1):
    spec0 = GameSpec(**{**INST1, "sigma": 0.0})
    J = exact_cost(FeedbackPolicy.zero(1, 1), mf1, spec0)
    assert abs(J - 0.1 / 0.91) <= 1e-12
    assert abs(J - 0.10989) < 1e-4


def test_exact_cost_at_optimum(mfe1, mf1):
    spec0 = GameSpec(**{**INST1, "sigma": 0.0})
    J = exact_cost(mfe1.K_star, mf1, spec0)
    assert abs(J - 0.1088) < 1e-4
    # scalar identity: the optimal stationary cost equals P when Sigma_w = 1
    assert abs(J - P1_CLOSED) < 1e-10


def test_exact_cost_noiseless_is_zero(mfe1, mf1):
    spec0 = GameSpec(**{**INST1, "Sigma_w": 0.0, "sigma": 0.0})
    assert exact_cost(mfe1.K_star, mf1, spec0) == 0.0


def test_exact_cost_unstable_returns_inf(inst1, mf1):
    J = exact_cost(FeedbackPolicy(K=np.array([[-2.0, 0.0]]), m=1), mf1, inst1)
    assert J == math.inf


# --- true theta ---------------------------------------------------------


def test_true_theta_trivial_identity_block():
    # C_X = 0 (via C_Z = 0), Abar = 0, K = 0: Theta = diag(0, .., 0, C_U)
    spec = GameSpec(**{**INST1, "A": 0.0, "C_Z": 0.0, "sigma": 0.0})
    est = true_theta(FeedbackPolicy.zero(1, 1), MeanFieldLaw(F=[[0.0]], nu0=[1.0]), spec)
    assert np.allclose(est.Theta, np.diag([0.0, 0.0, 1.0]), atol=1e-14)


def test_true_theta_schur_gain_recovers_optimum(mfe1, mf1, inst1, mfe2, inst2):
    for mfe, spec in ((mfe1, inst1), (mfe2, inst2)):
        mf = MeanFieldLaw(F=mfe.F_star, nu0=spec.nu0)
        est = true_theta(mfe.K_star, mf, spec)
        K_back = np.linalg.solve(est.Theta_uu, est.Theta_ux)
        assert spectral_norm(K_back - mfe.K_star.K) <= 1e-8


def test_true_theta_scales_linearly(mfe1, mf1, inst1):
    alpha = 2.5
    scaled = GameSpec(**{**INST1, "C_Z": 0.1 * alpha, "C_U": alpha, "Sigma_w": alpha})
    a = true_theta(mfe1.K_star, mf1, inst1)
    b = true_theta(mfe1.K_star, mf1, scaled)
    assert np.allclose(b.Theta, alpha * a.Theta, atol=1e-10)


def test_true_theta_unstable_raises(inst1, mf1):
    with pytest.raises(UnstableSystemError):
        true_theta(FeedbackPolicy(K=np.array([[-2.0, 0.0]]), m=1), mf1, inst1)


def test_true_theta_bellman_residual_closed_form(inst1, rd1, inst2, rd2):
    # q(x,u) - c(x,u) + Jbar - E[q(x', -Kx' + zeta')] = 0 exactly, where the
    # successor expectation is taken in closed form over both noises
    from lqmfg.model import build_augmented
    from conftest import random_stabilizing_policy

    rng = np.random.default_rng(23)
    for spec, rd in ((inst1, rd1), (inst2, rd2)):
        mf = MeanFieldLaw(F=random_in_ball(rng, spec.m, 0.5), nu0=spec.nu0)
        aug = build_augmented(spec, mf)
        for _ in range(25):
            K = random_stabilizing_policy(rng, spec, rd)
            est = true_theta(K, mf, spec)
            L = aug.Abar - aug.Bbar @ K.K
            QK = aug.C_X + K.K.T @ spec.C_U @ K.K
            PK = solve_stein(L.T, QK)
            x = rng.normal(size=2 * spec.m)
            u = rng.normal(size=spec.p)
            z = np.concatenate([x, u])
            q = z @ est.Theta @ z
            c = x @ aug.C_X @ x + u @ spec.C_U @ u
            xn = aug.Abar @ x + aug.Bbar @ u
            zn = np.concatenate([xn, -K.K @ xn])
            Eq_next = (
                zn @ est.Theta @ zn
                + np.trace(PK @ aug.Sigma_wbar)
                + spec.sigma**2 * np.trace(spec.C_U + aug.Bbar.T @ PK @ aug.Bbar)
            )
            resid = q - c + est.avg_cost - Eq_next
            assert abs(resid) <= 1e-6


def test_theta_vector_matrix_roundtrip(mfe1, mf1, inst1):
    est = true_theta(mfe1.K_star, mf1, inst1)
    np.testing.assert_array_almost_equal_nulp(svec(est.Theta), est.theta, nulp=2)


# --- equilibrium recursion residual -------------------------------------


def test_recursion_residual_at_fixed_point(mfe1, rd1, inst1):
    assert equilibrium_recursion_residual(mfe1.F_star, rd1, inst1) <= 1e-8


def test_recursion_residual_zero_mean(rd1, inst1):
    assert equilibrium_recursion_residual([[0.7]], rd1, inst1, nu0=[0.0]) == 0.0


def test_recursion_residual_detects_non_fixed_point(rd1, inst1):
    assert equilibrium_recursion_residual([[0.7]], rd1, inst1) > 1e-3


# --- contraction properties (also exercised at acceptance scale) --------


def test_contraction_lipschitz_sample(inst1, rd1):
    rng = np.random.default_rng(31)
    ball = (1 + rd1.T_P) / 2
    lip = spectral_norm(inst1.B @ rd1.G_P) * spectral_norm(inst1.C_Z) / (1 - spectral_norm(rd1.H_P)) ** 2
    for _ in range(50):
        F1 = random_in_ball(rng, 1, ball)
        F2 = random_in_ball(rng, 1, ball)
        lhs = spectral_norm(apply_T(F1, rd1, inst1) - apply_T(F2, rd1, inst1))
        assert lhs <= lip * spectral_norm(F1 - F2) + 1e-12


def test_operator_maps_ball_into_tp_ball(inst2, rd2):
    rng = np.random.default_rng(37)
    ball = (1 + rd2.T_P) / 2
    for _ in range(50):
        F = random_in_ball(rng, 2, ball)
        assert spectral_norm(apply_T(F, rd2, inst2)) <= rd2.T_P + 1e-12
