"""Outer orchestration: alternate the inner actor-critic loop with the
state-aggregator mean-field update to produce the approximate equilibrium."""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .learner import LearnerConfig, inner_loop
from .linalg import spectral_norm
from .model import FeedbackPolicy, MeanFieldLaw
from . import oracle

__all__ = ["LoopConfig", "LoopReport", "aggregate", "run_algorithm1", "MODES"]

MODES = ("model-free", "exact-critic", "exact-inner")


def aggregate(K, spec):
    """State-aggregator update: the mean-field matrix induced by gain K.

    Aggregating the noiseless closed loop gives F' = A - B (K1 + K2).
    """
    K = K if isinstance(K, FeedbackPolicy) else FeedbackPolicy(K=K, m=spec.m)
    return spec.A - spec.B @ (K.K1 + K.K2)


@dataclass(frozen=True)
class LoopConfig:
    """Outer-loop schedule and mode.

    ``T_growth`` > 1 grows the critic budget geometrically across rounds
    (T_{s,r} = T_critic * T_growth^{r-1}); the default keeps it constant.
    ``damping`` blends the aggregator update (0 = replace outright, the
    default). ``F_init=None`` starts from the zero matrix, which is always
    inside the contraction ball.
    """

    R: int = 5
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    F_init: np.ndarray | None = None
    K_init: np.ndarray | None = None
    seed: int = 0
    mode: str = "model-free"
    T_growth: float = 1.0
    damping: float = 0.0
    oracle_diagnostics: bool = True

    def __post_init__(self):
        if self.R < 1:
            raise ValidationError(f"R must be >= 1, got {self.R}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (0.0 <= self.damping < 1.0):
            raise ValidationError(f"damping must be in [0, 1), got {self.damping}")
        if self.T_growth < 1.0:
            raise ValidationError(f"T_growth must be >= 1, got {self.T_growth}")


@dataclass(frozen=True)
class LoopReport:
    """Per-round trace of Algorithm 1 plus oracle diagnostics when available.

    ``F_rounds[r]`` is the mean-field matrix the inner loop ran against in
    round r; ``final_F`` is F^{(R)} and ``final_K`` the last inner-loop
    output. Oracle columns are None in purely model-free reporting.
    """

    F_rounds: list
    final_F: np.ndarray
    final_K: FeedbackPolicy
    F_errors: list | None
    cost_gaps: list | None
    in_ball: list | None
    inner_diagnostics: list
    wall_clock: float
    mode: str


def run_algorithm1(spec, cfg):
    """Alternate best-response learning with the state-aggregator update.

    Modes: ``model-free`` runs the data-driven inner loop; ``exact-critic``
    replaces the critic with the exact action-value target (actor recursion
    unchanged); ``exact-inner`` replaces the whole inner loop with the
    model-based gain, making the recursion exactly F <- T(F). The gain
    carries over across rounds. Aborts if an iterate leaves the unit ball.
    """
    t0 = time.perf_counter()
    m = spec.m
    F = np.zeros((m, m)) if cfg.F_init is None else np.atleast_2d(np.asarray(cfg.F_init, dtype=float))

    rd = None
    mfe = None
    if cfg.mode in ("exact-critic", "exact-inner") or cfg.oracle_diagnostics:
        rd = oracle.solve_dare(spec)
    if cfg.oracle_diagnostics and rd is not None and rd.assumption1_ok:
        mfe = oracle.fixed_point_mf(rd, spec)

    if cfg.K_init is not None:
        K = cfg.K_init if isinstance(cfg.K_init, FeedbackPolicy) else FeedbackPolicy(K=cfg.K_init, m=m)
    elif cfg.mode == "model-free":
        K = FeedbackPolicy.zero(m, spec.p)
    else:
        K = oracle.optimal_gain(F, rd, spec)

    F_rounds = []
    F_errors = [] if mfe is not None else None
    cost_gaps = [] if mfe is not None else None
    in_ball = [] if rd is not None else None
    inner_diags = []

    for r in range(1, cfg.R + 1):
        F_rounds.append(F.copy())
        mf = MeanFieldLaw(F=F, nu0=spec.nu0)
        if rd is not None and in_ball is not None:
            in_ball.append(bool(spectral_norm(F) <= (1.0 + rd.T_P) / 2.0))

        if cfg.mode == "exact-inner":
            K = oracle.optimal_gain(F, rd, spec)
            inner_diags.append([])
        else:
            critic = None
            if cfg.mode == "exact-critic":
                critic = _exact_critic(mf, spec)
            lcfg = cfg.learner
            if cfg.T_growth > 1.0:
                lcfg = replace(lcfg, T_critic=int(lcfg.T_critic * cfg.T_growth ** (r - 1)))
            round_seed = int(np.random.SeedSequence((cfg.seed, 307, r)).generate_state(1)[0])
            try:
                K, diag = inner_loop(K, mf, spec, lcfg, seed=round_seed, critic=critic, probe=(r == 1))
            except Exception as exc:
                raise RuntimeError(f"inner loop failed in round {r}: {exc}") from exc
            for row in diag:
                row["r"] = r
            inner_diags.append(diag)

        if mfe is not None:
            F_errors.append(float(spectral_norm(F - mfe.F_star)))
            mf_now = MeanFieldLaw(F=F, nu0=spec.nu0)
            j_k = oracle.exact_cost(K, mf_now, spec)
            j_opt = oracle.exact_cost(oracle.optimal_gain(F, rd, spec), mf_now, spec)
            cost_gaps.append(float(j_k - j_opt) if math.isfinite(j_k) else math.inf)

        F_new = aggregate(K, spec)
        if cfg.damping > 0.0:
            F_new = cfg.damping * F + (1.0 - cfg.damping) * F_new
        if r < cfg.R:
            F = F_new
            if spectral_norm(F) > 1.0:
                raise RuntimeError(
                    f"mean-field iterate left the unit ball in round {r}: ||F|| = {spectral_norm(F):.4f}; "
                    f"history: {[np.round(f, 4).tolist() for f in F_rounds]}"
                )

    return LoopReport(
        F_rounds=F_rounds,
        final_F=F_rounds[-1],
        final_K=K,
        F_errors=F_errors,
        cost_gaps=cost_gaps,
        in_ball=in_ball,
        inner_diagnostics=inner_diags,
        wall_clock=time.perf_counter() - t0,
        mode=cfg.mode,
    )


def _exact_critic(mf, spec):
    def critic_fn(traj, cfg, K):
        return oracle.true_theta(K, mf, spec)

    critic_fn.needs_trajectory = False
    return critic_fn
