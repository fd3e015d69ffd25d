"""Finite-population deployment and epsilon-Nash gap estimation.

The deployed policy follows the learned pair (K, F) through the open-loop
reference F^t nu0. The best-response benchmark is the model-based tracking
controller against that same deterministic reference (the object the
theory compares against), evaluated by Monte Carlo inside the actual
N-agent system. Both arms of a gap estimate share noise realizations
(common random numbers) through the per-(N, R, rep) seed derivation.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import FeedbackPolicy, MeanFieldLaw
from .sim import TimeIndexedAffinePolicy, rollout_population
from . import mfgloop, oracle

__all__ = [
    "DeployedPolicy",
    "CostEstimate",
    "NeGapEstimate",
    "SweepResult",
    "deploy",
    "estimate_deployed_cost",
    "best_response_cost",
    "gap_estimate",
    "sweep",
]

DEFAULT_HORIZON = 5000
DEFAULT_REPS = 20
BURN_FRAC = 0.1


@dataclass(frozen=True)
class DeployedPolicy:
    """Per-agent action rule U_t = -K1 Z_t - K2 F^t nu0.

    The reference F^t nu0 is precomputed once per horizon and shared by all
    agents (it is the same deterministic sequence for everyone).
    """

    K1: np.ndarray
    K2: np.ndarray
    F: np.ndarray
    nu0: np.ndarray

    def reference(self, T):
        """The open-loop reference points F^t nu0 for t = 0..T-1, (T, m)."""
        return MeanFieldLaw(F=self.F, nu0=self.nu0).trajectory(T)

    def as_affine(self, T):
        offsets = -self.reference(T) @ self.K2.T
        return TimeIndexedAffinePolicy(gain=self.K1, offsets=offsets)


@dataclass(frozen=True)
class CostEstimate:
    value: float
    stderr: float
    reps: int
    horizon: int
    diverged: bool = False


@dataclass(frozen=True)
class NeGapEstimate:
    """Deployed-vs-best-response gap for one (N, R) cell."""

    N: int
    R: int | None
    deployed: float
    deployed_se: float
    best_response: float
    best_response_se: float
    gap: float
    reps: int
    horizon: int


@dataclass(frozen=True)
class SweepResult:
    """Factorial gap table with the scaling fits.

    ``slope_n`` is the log-log regression slope of gap against (N - 1);
    ``decay_r`` the fitted per-round geometric ratio of gap against R.
    Either fit is None when its axis is a single point or the gaps are not
    positive (nothing to regress on a log scale).
    """

    rows: list
    slope_n: float | None
    decay_r: float | None


def deploy(K, F, nu0):
    """Wrap a feedback gain and mean-field matrix as the deployment rule."""
    K = K if isinstance(K, FeedbackPolicy) else FeedbackPolicy(K=np.atleast_2d(K), m=np.atleast_2d(F).shape[0])
    F = np.atleast_2d(np.asarray(F, dtype=float))
    nu0 = np.asarray(nu0, dtype=float).reshape(F.shape[0])
    return DeployedPolicy(K1=K.K1.copy(), K2=K.K2.copy(), F=F, nu0=nu0)


def _rep_seed(seed, N, R, rep):
    tag = -1 if R is None else int(R)
    return int(np.random.SeedSequence((seed, 401, N, tag, rep)).generate_state(1)[0])


def _population_cost(policies, N, spec, horizon, reps, seeds, burn_frac):
    vals = []
    diverged = False
    for rep in range(reps):
        trace = rollout_population(N, policies, spec, horizon, seed=seeds[rep])
        if trace.diverged:
            diverged = True
            continue
        vals.append(trace.time_average_cost(0, burn_frac=burn_frac))
    if not vals:
        return CostEstimate(math.inf, math.inf, reps, horizon, diverged=True)
    vals = np.asarray(vals)
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.inf
    return CostEstimate(float(vals.mean()), se, reps, horizon, diverged=diverged)


def estimate_deployed_cost(dp, N, spec, horizon=DEFAULT_HORIZON, reps=DEFAULT_REPS, seed=0, R_tag=None,
                           burn_frac=BURN_FRAC):
    """Monte Carlo time-average cost of agent 1 when everyone plays ``dp``.

    The first ``burn_frac`` of each horizon is discarded before averaging;
    the standard error comes from independent replications.
    """
    if N < 2 or reps < 2:
        raise ValidationError(f"need N >= 2 and reps >= 2, got N={N}, reps={reps}")
    pol = dp.as_affine(horizon)
    seeds = [_rep_seed(seed, N, R_tag, rep) for rep in range(reps)]
    return _population_cost([pol] * N, N, spec, horizon, reps, seeds, burn_frac)


def best_response_policy(dp, spec, rd, horizon):
    """Model-based tracking controller against the deterministic reference.

    u_t = G_P P A z_t + G_P lambda_{t+1}, with the costate computed from
    the reference trajectory F^t nu0. This benchmarks the infimum from
    above (it is one admissible policy, not a claimed optimum over all
    history-dependent deviations).
    """
    ref = MeanFieldLaw(F=dp.F, nu0=dp.nu0)
    sup = float(np.linalg.norm(dp.nu0)) + 1e-9
    lam = np.empty((horizon + 1, spec.m))
    for t in range(horizon + 1):
        lam[t] = oracle.compute_costate(ref.point, t, rd, spec, sup_norm=sup)
    gain = -rd.G_P @ rd.P @ spec.A
    offsets = lam[1 : horizon + 1] @ rd.G_P.T
    return TimeIndexedAffinePolicy(gain=gain, offsets=offsets)


def best_response_cost(dp, N, spec, rd, horizon=DEFAULT_HORIZON, reps=DEFAULT_REPS, seed=0, R_tag=None,
                       burn_frac=BURN_FRAC):
    """Cost of agent 1 best-responding (model-based) while others play ``dp``.

    Shares noise realizations with :func:`estimate_deployed_cost` for the
    same (seed, N, R_tag, rep), so the reported gap is a paired comparison.
    """
    if N < 2 or reps < 2:
        raise ValidationError(f"need N >= 2 and reps >= 2, got N={N}, reps={reps}")
    others = dp.as_affine(horizon)
    br = best_response_policy(dp, spec, rd, horizon)
    policies = [br] + [others] * (N - 1)
    seeds = [_rep_seed(seed, N, R_tag, rep) for rep in range(reps)]
    return _population_cost(policies, N, spec, horizon, reps, seeds, burn_frac)


def gap_estimate(dp, N, spec, rd, horizon=DEFAULT_HORIZON, reps=DEFAULT_REPS, seed=0, R_tag=None):
    dep = estimate_deployed_cost(dp, N, spec, horizon, reps, seed, R_tag)
    br = best_response_cost(dp, N, spec, rd, horizon, reps, seed, R_tag)
    return NeGapEstimate(
        N=N,
        R=R_tag,
        deployed=dep.value,
        deployed_se=dep.stderr,
        best_response=br.value,
        best_response_se=br.stderr,
        gap=dep.value - br.value,
        reps=reps,
        horizon=horizon,
    )


def _policy_for_round_count(spec, R, seed):
    cfg = mfgloop.LoopConfig(R=R, mode="exact-inner", seed=seed, oracle_diagnostics=False)
    report = mfgloop.run_algorithm1(spec, cfg)
    return deploy(report.final_K, report.final_F, spec.nu0)


def sweep(spec, policy, N_list, R_list, reps=DEFAULT_REPS, seed=0, horizon=DEFAULT_HORIZON, rd=None):
    """Full factorial gap table over population sizes and round counts.

    ``R_list`` entries are outer-loop round counts realized with the
    exact-inner recursion; the entry ``None`` means "use ``policy`` as
    supplied" (e.g. the exact equilibrium or a learned policy). Reports the
    log-log slope of gap against (N - 1) and the geometric decay ratio of
    gap against R, each omitted when degenerate.
    """
    if not N_list or not R_list:
        raise ValidationError("N_list and R_list must be nonempty")
    rd = oracle.solve_dare(spec) if rd is None else rd
    rows = []
    for R in R_list:
        dp = policy if R is None else _policy_for_round_count(spec, R, seed)
        for N in sorted(N_list):
            rows.append(gap_estimate(dp, N, spec, rd, horizon=horizon, reps=reps, seed=seed, R_tag=R))
    return SweepResult(rows=rows, slope_n=_fit_slope_n(rows), decay_r=_fit_decay_r(rows))


def _fit_slope_n(rows):
    by_n = {}
    for row in rows:
        by_n.setdefault(row.N, []).append(row.gap)
    pts = [(math.log(n - 1), math.log(np.median(g))) for n, g in sorted(by_n.items()) if np.median(g) > 0]
    if len(pts) < 2:
        return None
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


def _fit_decay_r(rows):
    by_r = {}
    for row in rows:
        if row.R is not None:
            by_r.setdefault(row.R, []).append(row.gap)
    pts = [(r, math.log(np.median(g))) for r, g in sorted(by_r.items()) if np.median(g) > 0]
    if len(pts) < 2:
        return None
    x, y = np.array(pts).T
    return float(math.exp(np.polyfit(x, y, 1)[0]))
