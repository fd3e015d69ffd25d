"""Model-free inner loop: critic estimating the quadratic action-value
parameter from one unmixed trajectory, and a natural-gradient actor.

The critic processes the single trajectory in order, exactly as sampled.
It never reorders, subsamples, or waits for the chain to mix.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InnerLoopAborted, SafeguardRejection, ValidationError
from .linalg import smat, svec, sym_min_eig
from .model import FeedbackPolicy
from .sim import feature_dim, feature_matrix, rollout_generic

__all__ = [
    "CriticEstimate",
    "LearnerConfig",
    "critic_gtd",
    "critic_lstd",
    "actor_step",
    "natural_gradient",
    "inner_loop",
    "probe_stabilizing",
]


@dataclass(frozen=True)
class CriticEstimate:
    """Symmetric action-value parameter in vector and matrix form.

    ``theta`` and ``Theta`` are the same object under symmetric
    vectorization; ``nx``/``nu`` record the state/control split so the
    actor can read off the control blocks.
    """

    theta: np.ndarray
    Theta: np.ndarray
    avg_cost: float
    projection_radius: float
    nx: int
    nu: int

    @property
    def Theta_uu(self):
        return self.Theta[self.nx :, self.nx :]

    @property
    def Theta_ux(self):
        return self.Theta[self.nx :, : self.nx]

    @classmethod
    def from_theta(cls, theta, avg_cost, projection_radius, nx, nu):
        return cls(
            theta=np.asarray(theta, dtype=float),
            Theta=smat(theta),
            avg_cost=float(avg_cost),
            projection_radius=float(projection_radius),
            nx=nx,
            nu=nu,
        )


@dataclass(frozen=True)
class LearnerConfig:
    """Knobs of the actor-critic inner loop.

    ``T_critic`` is the per-critic-call trajectory length (must be at least
    the feature dimension), ``S_inner`` the actor-critic iterations per
    round. Step sizes follow a_t = step_primal/(1+t)^step_power and
    b_t = step_dual/(1+t)^step_power. ``sigma_explore=None`` mirrors the
    game's exploration scale.
    """

    T_critic: int = 20_000
    S_inner: int = 30
    eta: float = 0.05
    step_primal: float = 0.5
    step_dual: float = 0.5
    step_power: float = 0.6
    rho_theta: float = 100.0
    sigma_explore: float | None = None
    lstd_ridge: float = 1e-6
    safeguard_limit: int = 5

    def __post_init__(self):
        for name in ("T_critic", "S_inner", "eta", "step_primal", "step_dual", "step_power", "rho_theta"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sigma_explore is not None and self.sigma_explore <= 0:
            raise ValidationError("sigma_explore must be positive (critic needs exploration)")


def _check_trajectory(traj, d):
    if traj.diverged:
        raise ValidationError("trajectory diverged; refusing to fit the critic on it")
    if len(traj) < max(d, 2):
        raise ValidationError(f"trajectory length {len(traj)} < feature dimension {d}")


def critic_gtd(traj, cfg):
    """Primal-dual (gradient-TD) critic for the average-cost Bellman equation
    <phi_t - phi_{t+1}, theta> = c_t - Jbar on one unmixed trajectory.

    Maintains the average-cost estimate as the running mean of observed
    costs, takes one primal and one dual step per transition in trajectory
    order, and projects theta onto the ball of radius ``rho_theta`` after
    every step.
    """
    nx = traj.X.shape[1]
    nu = traj.U.shape[1]
    d = feature_dim(nx // 2, nu)
    _check_trajectory(traj, d)

    Phi = feature_matrix(traj.X, traj.U)
    Dphi = Phi[:-1] - Phi[1:]
    C = traj.C
    T = len(C)
    Jbar = np.cumsum(C) / np.arange(1.0, T + 1.0)

    steps = np.arange(1.0, T, dtype=float) ** -cfg.step_power
    alpha = cfg.step_primal * steps
    beta = cfg.step_dual * steps

    theta = np.zeros(d)
    omega = np.zeros(d)
    rho = cfg.rho_theta
    for t in range(T - 1):
        delta = C[t] - Jbar[t] - Dphi[t] @ theta
        fw = Phi[t] @ omega
        omega += beta[t] * (delta - fw) * Phi[t]
        theta += alpha[t] * fw * Dphi[t]
        nrm = math.sqrt(theta @ theta)
        if nrm > rho:
            theta *= rho / nrm
    return CriticEstimate.from_theta(theta, avg_cost=Jbar[-1], projection_radius=rho, nx=nx, nu=nu)


def critic_lstd(traj, cfg):
    """Batch least-squares cross-check of :func:`critic_gtd`.

    Solves sum_t phi_t (phi_t - phi_{t+1})' theta = sum_t (c_t - cbar) phi_t
    with ridge damping scaled to the design matrix. Raises when the damped
    design is still numerically rank-deficient, naming the smallest
    singular value.
    """
    nx = traj.X.shape[1]
    nu = traj.U.shape[1]
    d = feature_dim(nx // 2, nu)
    _check_trajectory(traj, d)

    Phi = feature_matrix(traj.X, traj.U)
    Dphi = Phi[:-1] - Phi[1:]
    T = len(traj)
    cbar = float(traj.C.mean())
    design = Phi[:-1].T @ Dphi / (T - 1)
    rhs = Phi[:-1].T @ (traj.C[:-1] - cbar) / (T - 1)

    ridge = cfg.lstd_ridge * max(1.0, float(np.linalg.norm(design, "fro")))
    damped = design + ridge * np.eye(d)
    smin = float(np.linalg.svd(damped, compute_uv=False)[-1])
    if smin < 1e3 * np.finfo(float).eps * ridge:
        raise ValidationError(f"design rank-deficient beyond ridge rescue: smallest singular value {smin:.3e}")
    theta = np.linalg.solve(damped, rhs)
    nrm = float(np.linalg.norm(theta))
    if nrm > cfg.rho_theta:
        theta *= cfg.rho_theta / nrm
    return CriticEstimate.from_theta(theta, avg_cost=cbar, projection_radius=cfg.rho_theta, nx=nx, nu=nu)


def actor_step(K, est, eta):
    """Natural-policy-gradient update K' = K - eta (Theta_uu K - Theta_ux).

    Pure function. Rejects the update (SafeguardRejection) when the
    control-control block is not symmetric positive definite, in which case
    the caller keeps its current gain.
    """
    K = K if isinstance(K, FeedbackPolicy) else FeedbackPolicy(K=K, m=est.nx // 2)
    Tuu = est.Theta_uu
    if sym_min_eig(0.5 * (Tuu + Tuu.T)) <= 0.0:
        raise SafeguardRejection(f"Theta_uu not positive definite (min eig {sym_min_eig(Tuu):.3e})")
    grad = Tuu @ K.K - est.Theta_ux
    return FeedbackPolicy(K=K.K - eta * grad, m=K.m)


def natural_gradient(K, est):
    """The actor's update direction Theta_uu K - Theta_ux (for diagnostics)."""
    K = K if isinstance(K, FeedbackPolicy) else FeedbackPolicy(K=K, m=est.nx // 2)
    return est.Theta_uu @ K.K - est.Theta_ux


def probe_stabilizing(K, mf, spec, steps=2000, starts=5, growth=1e3, seed=0):
    """Model-free stability probe: roll ``steps`` noiseless steps from a few
    random starts and flag growth beyond ``growth`` times the start norm."""
    K = K if isinstance(K, FeedbackPolicy) else FeedbackPolicy(K=K, m=spec.m)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, 101))))
    m = spec.m
    for _ in range(starts):
        x = np.concatenate([rng.normal(size=m) + spec.nu0, mf.nu0])
        x0n = max(1.0, np.linalg.norm(x))
        for _ in range(steps):
            u = -K.K @ x
            x = np.concatenate([spec.A @ x[:m] + spec.B @ u, mf.F @ x[m:]])
            if np.linalg.norm(x) > growth * x0n:
                return False
    return True


def inner_loop(K_init, mf, spec, cfg, seed, critic=None, probe=True):
    """Run ``S_inner`` iterations of rollout -> critic -> actor against a
    fixed mean-field law.

    ``critic(traj, cfg, K)`` defaults to :func:`critic_gtd`; trajectories
    are generated on-policy with the configured exploration scale, with
    per-iteration seeds derived from ``seed``. Returns the final policy and
    a list of per-iteration diagnostics dicts. Aborts after
    ``safeguard_limit`` consecutive rejected actor updates.
    """
    critic_fn = critic if critic is not None else (lambda traj, c, _K: critic_gtd(traj, c))
    needs_data = getattr(critic_fn, "needs_trajectory", True)
    sigma = spec.sigma if cfg.sigma_explore is None else cfg.sigma_explore
    if needs_data and sigma <= 0:
        raise ValidationError("exploration required: sigma = 0 makes the critic unidentifiable")
    d = feature_dim(spec.m, spec.p)
    if needs_data and cfg.T_critic < d:
        raise ValidationError(f"T_critic = {cfg.T_critic} < feature dimension {d}")
    K = K_init if isinstance(K_init, FeedbackPolicy) else FeedbackPolicy(K=K_init, m=spec.m)
    if probe and not probe_stabilizing(K, mf, spec, seed=seed):
        raise ValidationError("K_init failed the stabilizing probe")

    diagnostics = []
    consecutive = 0
    for s in range(cfg.S_inner):
        traj = None
        if needs_data:
            traj = rollout_generic(K, mf, spec, cfg.T_critic, seed=_iter_seed(seed, s), sigma=sigma)
        est = critic_fn(traj, cfg, K)
        row = {
            "s": s,
            "est_cost": est.avg_cost,
            "theta_norm": float(np.linalg.norm(est.theta)),
            "grad_norm": math.nan,
            "safeguard": 0,
        }
        try:
            row["grad_norm"] = float(np.linalg.norm(natural_gradient(K, est)))
            K = actor_step(K, est, cfg.eta)
            consecutive = 0
        except SafeguardRejection:
            row["safeguard"] = 1
            consecutive += 1
            if consecutive > cfg.safeguard_limit:
                raise InnerLoopAborted(
                    f"{consecutive} consecutive safeguard rejections at iteration {s}",
                    diagnostics=diagnostics + [row],
                )
        diagnostics.append(row)
    return K, diagnostics


def _iter_seed(seed, s):
    # deterministic per-iteration seed; SeedSequence hashes the tuple downstream
    return int(np.random.SeedSequence((seed, 211, s)).generate_state(1)[0])
