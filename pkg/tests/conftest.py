"""Shared fixtures: the scalar reference instance INST-1 with its closed-form
solution, and a frozen randomly-generated m=2 instance INST-2."""

import math

import numpy as np
import pytest

from lqmfg import GameSpec, MeanFieldLaw, fixed_point_mf, solve_dare

# INST-1: m = p = 1 reference instance. Its Riccati solution reduces to the
# quadratic p^2 + 0.81 p - 0.1 = 0, solved in closed form below.
INST1 = dict(A=0.3, B=1.0, C_Z=0.1, C_U=1.0, Sigma_w=1.0, Sigma_0=1.0, nu0=1.0, sigma=0.1)

P1_CLOSED = (-0.81 + math.sqrt(0.81**2 + 4 * 0.1)) / 2.0
G1_CLOSED = -1.0 / (1.0 + P1_CLOSED)
H1_CLOSED = 0.3 / (1.0 + P1_CLOSED)
T1_CLOSED = H1_CLOSED + (-G1_CLOSED) * 0.1 / (1.0 - H1_CLOSED) ** 2
K1_CLOSED = -G1_CLOSED * P1_CLOSED * 0.3  # gain on the agent state at F*

# INST-2: m = 2, p = 1, found by seeded rejection sampling (Philox seed
# 20240817, attempt 2) over instances passing validation with T_P < 1.
INST2 = dict(
    A=[[-0.36993311496654774, 0.3828345231699327], [0.09846533585465511, 0.020805500737722773]],
    B=[[-0.5535092164077124], [0.43916595749948506]],
    C_Z=[[0.10124479602650745, 0.030670911814015666], [0.030670911814015666, 0.03513336905566927]],
    C_U=[[1.0]],
    Sigma_w=[[0.449358482921846, -0.014696887713855581], [-0.014696887713855581, 0.4051847802162758]],
    Sigma_0=[[0.5, 0.0], [0.0, 0.5]],
    nu0=[0.9689154584579203, -0.9606974753648487],
    sigma=0.1,
)


@pytest.fixture(scope="session")
def inst1():
    return GameSpec(**INST1)


@pytest.fixture(scope="session")
def rd1(inst1):
    return solve_dare(inst1)


@pytest.fixture(scope="session")
def mfe1(rd1, inst1):
    return fixed_point_mf(rd1, inst1)


@pytest.fixture(scope="session")
def mf1(mfe1, inst1):
    return MeanFieldLaw(F=mfe1.F_star, nu0=inst1.nu0)


@pytest.fixture(scope="session")
def inst2():
    return GameSpec(**INST2)


@pytest.fixture(scope="session")
def rd2(inst2):
    return solve_dare(inst2)


@pytest.fixture(scope="session")
def mfe2(rd2, inst2):
    return fixed_point_mf(rd2, inst2)


def random_in_ball(rng, m, radius):
    """Random matrix with spectral norm at most ``radius`` (rejection-free)."""
    M = rng.uniform(-1.0, 1.0, size=(m, m))
    return M * (radius * rng.uniform(0.05, 1.0) / max(np.linalg.norm(M, 2), 1e-12))


def random_stabilizing_policy(rng, spec, rd, scale=0.25):
    """Random K = [K1 K2] with A - B K1 stable (rejection sampling)."""
    from lqmfg import FeedbackPolicy

    m, p = spec.m, spec.p
    K1_opt = -rd.G_P @ rd.P @ spec.A
    while True:
        K1 = K1_opt + scale * rng.uniform(-1.0, 1.0, size=(p, m))
        if max(abs(np.linalg.eigvals(spec.A - spec.B @ K1))) < 0.95:
            K2 = scale * rng.uniform(-1.0, 1.0, size=(p, m))
            return FeedbackPolicy.from_blocks(K1, K2)
