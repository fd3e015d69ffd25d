"""Model-based ground truth: Riccati solve, consistency operator, equilibrium,
exact costs, and exact critic targets.

Everything here is a pure function of immutable inputs and is used as the
test oracle for the model-free side.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AssumptionError,
    ConvergenceError,
    DivergentSeriesError,
    UnstableSystemError,
    ValidationError,
)
from .linalg import solve_stein, spectral_norm, spectral_radius, svec, sym_min_eig
from .model import FeedbackPolicy, MeanFieldLaw, build_augmented
from .learner import CriticEstimate

__all__ = [
    "RiccatiData",
    "MfeSolution",
    "solve_dare",
    "riccati_fixed_point",
    "mf_series",
    "apply_T",
    "fixed_point_mf",
    "optimal_gain",
    "compute_costate",
    "exact_cost",
    "true_theta",
    "equilibrium_recursion_residual",
]

DARE_TOL = 1e-12
DARE_MAX_ITER = 100_000
SERIES_TERM_TOL = 1e-14


@dataclass(frozen=True)
class RiccatiData:
    """DARE solution P with the derived gains and contraction modulus.

    G_P = -(C_U + B^T P B)^{-1} B^T,  H_P = A^T (I + P B G_P),
    T_P = ||H_P|| + ||B G_P|| ||C_Z|| / (1 - ||H_P||)^2.
    """

    P: np.ndarray
    G_P: np.ndarray
    H_P: np.ndarray
    T_P: float
    assumption1_ok: bool
    residual: float
    iterations: int

    @property
    def H_norm(self):
        return spectral_norm(self.H_P)


@dataclass(frozen=True)
class MfeSolution:
    """Equilibrium mean-field matrix with its consistent controller."""

    F_star: np.ndarray
    K_star: FeedbackPolicy
    riccati: RiccatiData
    residual: float
    iterations: int


def riccati_fixed_point(A, B, Q, R, tol=DARE_TOL, max_iter=DARE_MAX_ITER):
    """Plain Riccati recursion P <- A'PA + Q - A'PB (R + B'PB)^{-1} B'PA
    from P0 = Q. Returns (P, residual, iterations).

    Dimension is desk scale, so the recursion is preferred over structured
    eigensolvers. Raises on indefinite iterates or non-convergence.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    res = math.inf
    for k in range(1, max_iter + 1):
        BtP = B.T @ P
        G = np.linalg.solve(R + BtP @ B, BtP @ A)
        Pn = A.T @ P @ A + Q - A.T @ P @ B @ G
        Pn = 0.5 * (Pn + Pn.T)
        if sym_min_eig(Pn) < -1e-8:
            raise ConvergenceError(
                f"Riccati iterate became indefinite at step {k} (min eig {sym_min_eig(Pn):.3e})"
            )
        res = spectral_norm(Pn - P)
        P = Pn
        if res <= tol:
            return P, res, k
    raise ConvergenceError(f"Riccati recursion did not converge in {max_iter} iterations; last residual {res:.3e}")


def solve_dare(spec, tol=DARE_TOL, max_iter=DARE_MAX_ITER):
    """Solve the game's Riccati equation and derive (G_P, H_P, T_P)."""
    P, _, iters = riccati_fixed_point(spec.A, spec.B, spec.C_Z, spec.C_U, tol=tol, max_iter=max_iter)
    G_P = -np.linalg.solve(spec.C_U + spec.B.T @ P @ spec.B, spec.B.T)
    H_P = spec.A.T @ (np.eye(spec.m) + P @ spec.B @ G_P)
    residual = spectral_norm(P - (spec.A.T @ P @ spec.A + spec.C_Z + spec.A.T @ P @ spec.B @ G_P @ P @ spec.A))
    nH = spectral_norm(H_P)
    T_P = nH + spectral_norm(spec.B @ G_P) * spectral_norm(spec.C_Z) / (1.0 - nH) ** 2
    for arr in (P, G_P, H_P):
        arr.setflags(write=False)
    return RiccatiData(
        P=P,
        G_P=G_P,
        H_P=H_P,
        T_P=float(T_P),
        assumption1_ok=bool(T_P < 1.0),
        residual=float(residual),
        iterations=iters,
    )


def mf_series(F, rd, spec, method="series", term_tol=SERIES_TERM_TOL, max_terms=100_000):
    """S(F) = sum_{s>=0} H_P^s C_Z F^{s+1}.

    ``method="series"`` truncates when the term-norm bound drops below
    ``term_tol``; ``method="stein"`` solves S = C_Z F + H_P S F by
    vectorization as an independent cross-check of the same quantity.
    Requires ||H_P|| ||F|| < 1.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    nH = spectral_norm(rd.H_P)
    nF = spectral_norm(F)
    if nH * nF >= 1.0:
        raise DivergentSeriesError(f"series diverges: ||H_P|| * ||F|| = {nH * nF:.6f} >= 1")
    if method == "stein":
        return solve_stein(rd.H_P, spec.C_Z @ F, B=F.T)
    if method != "series":
        raise ValueError(f"unknown method {method!r}")
    nC = spectral_norm(spec.C_Z)
    S = spec.C_Z @ F
    Hk = rd.H_P.copy()
    Fk = F @ F
    for s in range(1, max_terms + 1):
        if nC * nH**s * nF ** (s + 1) < term_tol:
            break
        S = S + Hk @ spec.C_Z @ Fk
        Hk = Hk @ rd.H_P
        Fk = Fk @ F
    return S


def apply_T(F, rd, spec):
    """Consistency operator: T(F) = H_P^T - B G_P S(F)."""
    return rd.H_P.T - spec.B @ rd.G_P @ mf_series(F, rd, spec)


def fixed_point_mf(rd, spec, F_init=None, tol=1e-10, max_iter=10_000):
    """Picard iteration F <- T(F) to the equilibrium mean-field matrix.

    Requires Assumption 1 (T_P < 1) and an initial point in the contraction
    ball; every iterate stays inside it.
    """
    if not rd.assumption1_ok:
        raise AssumptionError(f"contraction modulus T_P = {rd.T_P:.6f} >= 1; fixed point not guaranteed")
    F = np.zeros((spec.m, spec.m)) if F_init is None else np.atleast_2d(np.asarray(F_init, dtype=float))
    ball = (1.0 + rd.T_P) / 2.0
    if spectral_norm(F) > ball + 1e-12:
        raise AssumptionError(f"F_init has spectral norm {spectral_norm(F):.6f} > (1 + T_P)/2 = {ball:.6f}")
    res = math.inf
    for k in range(1, max_iter + 1):
        Fn = apply_T(F, rd, spec)
        res = spectral_norm(Fn - F)
        F = Fn
        if res <= tol:
            break
    else:
        raise ConvergenceError(f"mean-field fixed point not reached in {max_iter} iterations; residual {res:.3e}")
    F.setflags(write=False)
    return MfeSolution(F_star=F, K_star=optimal_gain(F, rd, spec), riccati=rd, residual=float(res), iterations=k)


def optimal_gain(F, rd, spec):
    """Cost-minimizing feedback for a fixed mean-field matrix F.

    K1 = -G_P P A and K2 = +G_P S(F), signed so that U = -K X reproduces
    the model-based tracking controller.
    """
    K1 = -rd.G_P @ rd.P @ spec.A
    K2 = rd.G_P @ mf_series(F, rd, spec)
    return FeedbackPolicy.from_blocks(K1, K2)


def compute_costate(zbar, t, rd, spec, tol=1e-12, sup_norm=None, max_terms=100_000):
    """Costate lambda_t = -sum_{k>=0} H_P^k C_Z Zbar_{t+k} for a bounded
    trajectory ``zbar`` (callable index -> m-vector; need not be linear).

    Truncates once ||H_P||^k ||C_Z|| sup||Zbar|| < tol, using ``sup_norm``
    when supplied and the running maximum otherwise. A trajectory that keeps
    growing past the iteration budget is rejected as unbounded.
    """
    nH = spectral_norm(rd.H_P)
    nC = spectral_norm(spec.C_Z)
    if nH >= 1.0:
        raise DivergentSeriesError(f"costate series diverges: ||H_P|| = {nH:.6f} >= 1")
    lam = np.zeros(spec.m)
    Hk = np.eye(spec.m)
    seen = 0.0
    last_term = math.inf
    growing = 0
    for k in range(max_terms):
        z = np.asarray(zbar(t + k), dtype=float).reshape(spec.m)
        nz = float(np.linalg.norm(z))
        if sup_norm is not None and nz > sup_norm * (1.0 + 1e-12):
            raise ValidationError(
                f"trajectory exceeds stated bound at index {t + k}: ||Zbar|| = {nz:.4g} > {sup_norm:.4g}"
            )
        seen = max(seen, nz)
        term = nH**k * nC * nz
        # for a bounded trajectory the term bound decays geometrically
        growing = growing + 1 if term >= last_term and term > tol else 0
        if growing > 64:
            raise ValidationError(
                f"trajectory looks unbounded: series terms still growing at index {t + k} (||Zbar|| = {nz:.4g})"
            )
        last_term = term
        lam = lam - Hk @ spec.C_Z @ z
        Hk = Hk @ rd.H_P
        bound = nH ** (k + 1) * nC * (sup_norm if sup_norm is not None else seen)
        if bound < tol:
            return lam
    raise ValidationError(
        f"costate series not truncated after {max_terms} terms (sup seen {seen:.4g})"
    )


def exact_cost(K, mf, spec, rd=None):
    """Average cost J(K, F) via the stationary Lyapunov identity.

    The stationary covariance of the augmented chain lives in the agent
    block (the mean-field block decays), so
    J = tr((C_Z + K1' C_U K1) Sigma_11) + sigma^2 tr(C_U) with
    Sigma_11 = (Sigma_w + sigma^2 B B') + (A - B K1) Sigma_11 (A - B K1)'.
    Returns ``inf`` for an unstable closed loop (distinguished value,
    not an exception). ``rd`` is unused; kept for interface symmetry.
    """
    K = _as_policy(K, spec)
    L = spec.A - spec.B @ K.K1
    if spectral_radius(L) >= 1.0 or spectral_radius(mf.F) >= 1.0:
        return math.inf
    SX11 = spec.Sigma_w + spec.sigma**2 * (spec.B @ spec.B.T)
    Sigma11 = solve_stein(L, SX11)
    return float(np.trace((spec.C_Z + K.K1.T @ spec.C_U @ K.K1) @ Sigma11) + spec.sigma**2 * np.trace(spec.C_U))


def true_theta(K, mf, spec):
    """Exact action-value parameter for policy K against mean-field law mf.

    Theta = [[C_X + Abar' P_K Abar, Abar' P_K Bbar],
             [Bbar' P_K Abar,       C_U + Bbar' P_K Bbar]]
    with P_K the positive solution of the policy Lyapunov equation.
    """
    K = _as_policy(K, spec)
    aug = build_augmented(spec, mf)
    L = aug.Abar - aug.Bbar @ K.K
    if spectral_radius(L) >= 1.0:
        raise UnstableSystemError(f"closed loop unstable: spectral radius {spectral_radius(L):.6f} >= 1")
    QK = aug.C_X + K.K.T @ spec.C_U @ K.K
    PK = solve_stein(L.T, QK)
    PK = 0.5 * (PK + PK.T)
    Txx = aug.C_X + aug.Abar.T @ PK @ aug.Abar
    Txu = aug.Abar.T @ PK @ aug.Bbar
    Tuu = spec.C_U + aug.Bbar.T @ PK @ aug.Bbar
    Theta = np.block([[Txx, Txu], [Txu.T, Tuu]])
    Theta = 0.5 * (Theta + Theta.T)
    return CriticEstimate(
        theta=svec(Theta),
        Theta=Theta,
        avg_cost=exact_cost(K, mf, spec),
        projection_radius=math.inf,
        nx=2 * spec.m,
        nu=spec.p,
    )


def equilibrium_recursion_residual(F, rd, spec, nu0=None, horizon=50):
    """Worst-case defect of the equilibrium recursion along Zbar_t = F^t nu0.

    sup_{t <= horizon} || Zbar_{t+1} - H_P' Zbar_t + B G_P S(F) Zbar_t ||;
    zero exactly when F is fixed under the consistency operator on the
    directions reachable from nu0.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    nu0 = spec.nu0 if nu0 is None else np.asarray(nu0, dtype=float).reshape(spec.m)
    SF = mf_series(F, rd, spec)
    worst = 0.0
    z = nu0.copy()
    for _ in range(horizon):
        r = F @ z - rd.H_P.T @ z + spec.B @ rd.G_P @ SF @ z
        worst = max(worst, float(np.linalg.norm(r)))
        z = F @ z
    return worst


def _as_policy(K, spec):
    if isinstance(K, FeedbackPolicy):
        return K
    return FeedbackPolicy(K=np.atleast_2d(np.asarray(K, dtype=float)), m=spec.m)


def mean_field_law(F, spec):
    """Convenience: wrap a matrix as a MeanFieldLaw with the spec's nu0."""
    return MeanFieldLaw(F=F, nu0=spec.nu0)
