"""Trajectory generation: single generic-agent rollouts on the augmented
system and finite-population rollouts for Nash-gap evaluation.

All randomness flows through counter-based Philox streams derived from the
caller's seed, so output is identical for identical (inputs, seed) no matter
how many rollouts run concurrently.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .linalg import psd_sqrt, svec_dim
from .model import FeedbackPolicy, build_augmented

__all__ = [
    "Trajectory",
    "PopulationTrace",
    "TimeIndexedAffinePolicy",
    "rollout_generic",
    "rollout_population",
    "features",
    "feature_matrix",
    "feature_dim",
    "save_trajectory_csv",
]

DIVERGENCE_GUARD = 1e8

# stream tags for substream derivation (stable across releases)
_STREAM_X0 = 0
_STREAM_W = 1
_STREAM_ZETA = 2
_STREAM_AGENT = 3


def _rng(seed, *tags):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, *tags))))


@dataclass(frozen=True)
class Trajectory:
    """One rollout: augmented states, controls, per-step costs.

    ``C[t]`` is exactly ``X[t]' C_X X[t] + U[t]' C_U U[t]`` and is stored per
    step so the critic can consume it directly. ``diverged`` marks a rollout
    truncated by the state-norm guard.
    """

    X: np.ndarray
    U: np.ndarray
    C: np.ndarray
    seed: int
    x0: np.ndarray
    diverged: bool = False

    def __len__(self):
        return self.X.shape[0]


@dataclass(frozen=True)
class PopulationTrace:
    """N-agent rollout: per-agent states (T, N, m) and per-step costs (T, N)."""

    Z: np.ndarray
    costs: np.ndarray
    seed: int
    diverged: bool = False

    @property
    def N(self):
        return self.Z.shape[1]

    @property
    def T(self):
        return self.Z.shape[0]

    def mean_field_excluding(self, n):
        """Empirical mean-field trajectory with agent ``n`` left out, (T, m)."""
        total = self.Z.sum(axis=1)
        return (total - self.Z[:, n, :]) / (self.N - 1)

    def time_average_cost(self, n, burn_frac=0.0):
        start = int(self.T * burn_frac)
        return float(self.costs[start:, n].mean())


@dataclass(frozen=True)
class TimeIndexedAffinePolicy:
    """Per-agent control law U_t = -gain Z_t + offsets[t].

    The offset sequence carries any open-loop reference term; it is
    precomputed once and may be shared between agents.
    """

    gain: np.ndarray
    offsets: np.ndarray  # (T, p)


def rollout_generic(K, mf, spec, T, seed, x0=None, sigma=None, guard=DIVERGENCE_GUARD):
    """Simulate the augmented chain X_{t+1} = Abar X_t + Bbar U_t + Wbar_t
    under U_t = -K X_t + zeta_t.

    No burn-in is discarded: the chain is served unmixed, exactly as the
    critic consumes it. When ``x0`` is omitted, Z_0 ~ N(nu0, Sigma_0) and
    Zbar_0 = nu0. ``sigma`` overrides the spec's exploration scale.
    Deterministic under a fixed seed; truncates and flags ``diverged`` if
    ||X_t|| exceeds ``guard``.
    """
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    K = K if isinstance(K, FeedbackPolicy) else FeedbackPolicy(K=K, m=spec.m)
    aug = build_augmented(spec, mf)
    m, p = spec.m, spec.p
    sigma = spec.sigma if sigma is None else float(sigma)

    if x0 is None:
        z0 = _rng(seed, _STREAM_X0).standard_normal(m) @ psd_sqrt(spec.Sigma_0).T + spec.nu0
        x0 = np.concatenate([z0, mf.nu0])
    else:
        x0 = np.asarray(x0, dtype=float).reshape(2 * m)
    W = _rng(seed, _STREAM_W).standard_normal((T, m)) @ psd_sqrt(spec.Sigma_w).T
    zeta = sigma * _rng(seed, _STREAM_ZETA).standard_normal((T, p)) if sigma > 0 else np.zeros((T, p))

    # the mean-field block is deterministic, so only the agent block needs
    # the sequential recursion; controls and costs vectorize afterwards
    Zbar = np.empty((T, m))
    zb = x0[m:].copy()
    F = mf.F
    for t in range(T):
        Zbar[t] = zb
        zb = F @ zb
    ref = zeta - Zbar @ K.K2.T  # exploration plus the mean-field feedback term

    L = spec.A - spec.B @ K.K1
    drive = ref @ spec.B.T + W
    Z = np.empty((T, m))
    z = x0[:m].copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            Z[t] = z
            z = L @ z + drive[t]
    # guard applied after the fact: truncate at the first state past the norm bound
    norms2 = np.einsum("ti,ti->t", Z, Z) + np.einsum("ti,ti->t", Zbar, Zbar)
    bad = ~(norms2 <= guard * guard)  # catches overflow to nan as well
    diverged = bool(bad.any())
    t_end = int(np.argmax(bad)) if diverged else T

    X = np.hstack([Z[:t_end], Zbar[:t_end]])
    U = -Z[:t_end] @ K.K1.T + ref[:t_end]
    C = np.einsum("ti,ij,tj->t", X, aug.C_X, X) + np.einsum("ti,ij,tj->t", U, spec.C_U, U)
    return Trajectory(X=X, U=U, C=C, seed=seed, x0=x0, diverged=diverged)


def rollout_population(N, policies, spec, T, seed, guard=DIVERGENCE_GUARD):
    """Simulate N coupled agents, each under its own time-indexed policy.

    Agent n evolves Z^n_{t+1} = A Z^n_t + B U^n_t + W^n_t with i.i.d. noise
    across agents and time; its per-step cost is the tracking error against
    the empirical mean of the other agents plus the control penalty. Noise
    streams are keyed by agent index, so permuting agents permutes costs.
    """
    if N < 2:
        raise ValidationError(f"population size must be >= 2, got {N}")
    if len(policies) != N:
        raise ValidationError(f"expected {N} policies, got {len(policies)}")
    m, p = spec.m, spec.p

    sqrt_w = psd_sqrt(spec.Sigma_w)
    sqrt_0 = psd_sqrt(spec.Sigma_0)
    Z0 = np.empty((N, m))
    W = np.empty((T, N, m))
    for n in range(N):
        g = _rng(seed, _STREAM_AGENT, n)
        Z0[n] = g.standard_normal(m) @ sqrt_0.T + spec.nu0
        W[:, n, :] = g.standard_normal((T, m)) @ sqrt_w.T

    gains = np.stack([np.atleast_2d(pol.gain) for pol in policies])  # (N, p, m)
    offsets = np.stack([np.asarray(pol.offsets, dtype=float) for pol in policies], axis=1)  # (T, N, p)
    if offsets.shape[0] < T:
        raise ValidationError(f"policy offsets cover {offsets.shape[0]} steps, need {T}")

    Z = np.empty((T, N, m))
    costs = np.empty((T, N))
    A_T, B_T = spec.A.T, spec.B.T
    z = Z0
    diverged = False
    t_end = T
    for t in range(T):
        if np.linalg.norm(z) > guard:
            diverged = True
            t_end = t
            break
        u = -np.einsum("npm,nm->np", gains, z) + offsets[t]
        zbar_excl = (z.sum(axis=0, keepdims=True) - z) / (N - 1)
        e = z - zbar_excl
        costs[t] = np.einsum("nm,mk,nk->n", e, spec.C_Z, e) + np.einsum("np,pq,nq->n", u, spec.C_U, u)
        Z[t] = z
        z = z @ A_T + u @ B_T + W[t]
    return PopulationTrace(Z=Z[:t_end], costs=costs[:t_end], seed=seed, diverged=diverged)


def feature_dim(m, p):
    """Length of the quadratic feature vector: (2m+p)(2m+p+1)/2."""
    return svec_dim(2 * m + p)


def features(x, u):
    """Quadratic critic features: svec of the outer product of (x; u).

    Off-diagonal entries carry the sqrt(2) weight, so the inner product of
    ``features(x, u)`` with ``svec(Theta)`` equals ``(x;u)' Theta (x;u)``.
    """
    v = np.concatenate([np.asarray(x, dtype=float).ravel(), np.asarray(u, dtype=float).ravel()])
    i, j = np.triu_indices(v.size)
    return v[i] * v[j] * np.where(i == j, 1.0, np.sqrt(2.0))


def feature_matrix(X, U):
    """Row-wise :func:`features` for a whole trajectory, shape (T, d)."""
    V = np.hstack([X, U])
    i, j = np.triu_indices(V.shape[1])
    return V[:, i] * V[:, j] * np.where(i == j, 1.0, np.sqrt(2.0))


def save_trajectory_csv(traj, path):
    """Dump a trajectory as plain CSV: t, x[0..2m), u[0..p), c."""
    nx = traj.X.shape[1]
    nu = traj.U.shape[1]
    header = ["t"] + [f"x{i}" for i in range(nx)] + [f"u{i}" for i in range(nu)] + ["c"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(len(traj)):
            w.writerow([t] + [repr(v) for v in traj.X[t]] + [repr(v) for v in traj.U[t]] + [repr(traj.C[t])])
