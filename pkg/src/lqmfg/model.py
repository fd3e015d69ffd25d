"""Problem definition: game primitives, mean-field law, policies, validation."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .linalg import (
    is_symmetric,
    psd_sqrt,
    spectral_norm,
    staircase_rank,
    sym_min_eig,
)

__all__ = [
    "GameSpec",
    "MeanFieldLaw",
    "FeedbackPolicy",
    "AugmentedSpec",
    "ValidationReport",
    "validate_spec",
    "build_augmented",
    "CONFIG_KEYS",
]

#: Config-file keys, in canonical order. Matrices are row-major nested arrays.
CONFIG_KEYS = ("A", "B", "C_Z", "C_U", "Sigma_w", "Sigma_0", "nu0", "sigma_explore")

_DEFINITENESS_TOL = 1e-10


def _as_matrix(name, value, shape=None):
    M = np.atleast_2d(np.asarray(value, dtype=float))
    if shape is not None and M.shape != shape:
        raise ValidationError(f"{name}: expected shape {shape}, got {M.shape}")
    return M


@dataclass(frozen=True)
class GameSpec:
    """All primitives of one linear-quadratic mean-field game instance.

    Immutable after construction; matrices are normalized to 2-D float
    arrays and dimension-checked against A (m x m) and B (m x p).
    """

    A: np.ndarray
    B: np.ndarray
    C_Z: np.ndarray
    C_U: np.ndarray
    Sigma_w: np.ndarray
    Sigma_0: np.ndarray
    nu0: np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        A = _as_matrix("A", self.A)
        if A.shape[0] != A.shape[1]:
            raise ValidationError(f"A: must be square, got {A.shape}")
        m = A.shape[0]
        B = _as_matrix("B", self.B)
        if B.shape[0] != m:
            raise ValidationError(f"B: expected {m} rows to match A, got {B.shape}")
        p = B.shape[1]
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C_Z", _as_matrix("C_Z", self.C_Z, (m, m)))
        object.__setattr__(self, "C_U", _as_matrix("C_U", self.C_U, (p, p)))
        object.__setattr__(self, "Sigma_w", _as_matrix("Sigma_w", self.Sigma_w, (m, m)))
        object.__setattr__(self, "Sigma_0", _as_matrix("Sigma_0", self.Sigma_0, (m, m)))
        nu0 = np.asarray(self.nu0, dtype=float).reshape(-1)
        if nu0.shape != (m,):
            raise ValidationError(f"nu0: expected length {m}, got {nu0.shape}")
        object.__setattr__(self, "nu0", nu0)
        sigma = float(self.sigma)
        if sigma < 0:
            raise ValidationError(f"sigma_explore: must be nonnegative, got {sigma}")
        object.__setattr__(self, "sigma", sigma)
        for arr in (self.A, self.B, self.C_Z, self.C_U, self.Sigma_w, self.Sigma_0, self.nu0):
            arr.setflags(write=False)

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    def to_config(self):
        """Plain-dict form matching the on-disk config schema."""
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C_Z": self.C_Z.tolist(),
            "C_U": self.C_U.tolist(),
            "Sigma_w": self.Sigma_w.tolist(),
            "Sigma_0": self.Sigma_0.tolist(),
            "nu0": self.nu0.tolist(),
            "sigma_explore": self.sigma,
        }

    @classmethod
    def from_config(cls, cfg):
        missing = [k for k in CONFIG_KEYS if k not in cfg]
        if missing:
            raise ValidationError(f"config missing keys: {missing}")
        return cls(
            A=cfg["A"],
            B=cfg["B"],
            C_Z=cfg["C_Z"],
            C_U=cfg["C_U"],
            Sigma_w=cfg["Sigma_w"],
            Sigma_0=cfg["Sigma_0"],
            nu0=cfg["nu0"],
            sigma=cfg["sigma_explore"],
        )


@dataclass(frozen=True)
class MeanFieldLaw:
    """Mean-field state matrix F plus the initial mean; Zbar_t = F^t nu0."""

    F: np.ndarray
    nu0: np.ndarray

    def __post_init__(self):
        F = _as_matrix("F", self.F)
        if F.shape[0] != F.shape[1]:
            raise ValidationError(f"F: must be square, got {F.shape}")
        nu0 = np.asarray(self.nu0, dtype=float).reshape(-1)
        if nu0.shape != (F.shape[0],):
            raise ValidationError(f"nu0: expected length {F.shape[0]}, got {nu0.shape}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "nu0", nu0)
        self.F.setflags(write=False)
        self.nu0.setflags(write=False)

    @property
    def m(self):
        return self.F.shape[0]

    def trajectory(self, T):
        """First T points of the deterministic trajectory, shape (T, m)."""
        out = np.empty((T, self.m))
        z = self.nu0.copy()
        for t in range(T):
            out[t] = z
            z = self.F @ z
        return out

    def point(self, t):
        return np.linalg.matrix_power(self.F, t) @ self.nu0

    def in_contraction_ball(self, riccati):
        """Membership in {F : ||F||_2 <= (1 + T_P)/2}."""
        return spectral_norm(self.F) <= (1.0 + riccati.T_P) / 2.0


@dataclass(frozen=True)
class FeedbackPolicy:
    """Block gain K = [K1 K2] on the augmented state; control law U = -K X + zeta."""

    K: np.ndarray
    m: int

    def __post_init__(self):
        K = _as_matrix("K", self.K)
        if K.shape[1] != 2 * self.m:
            raise ValidationError(f"K: expected {2 * self.m} columns, got {K.shape}")
        object.__setattr__(self, "K", K)
        self.K.setflags(write=False)

    @property
    def p(self):
        return self.K.shape[0]

    @property
    def K1(self):
        """Gain on the agent's own state (first m columns)."""
        return self.K[:, : self.m]

    @property
    def K2(self):
        """Gain on the mean-field state (last m columns)."""
        return self.K[:, self.m :]

    @classmethod
    def from_blocks(cls, K1, K2):
        K1 = _as_matrix("K1", K1)
        K2 = _as_matrix("K2", K2, K1.shape)
        return cls(K=np.hstack([K1, K2]), m=K1.shape[1])

    @classmethod
    def zero(cls, m, p):
        return cls(K=np.zeros((p, 2 * m)), m=m)


@dataclass(frozen=True)
class AugmentedSpec:
    """Joint (agent, mean-field) view: state X = (Z, Zbar), block dynamics."""

    Abar: np.ndarray
    Bbar: np.ndarray
    C_X: np.ndarray
    Sigma_wbar: np.ndarray
    m: int

    @property
    def F(self):
        return self.Abar[self.m :, self.m :]


def build_augmented(spec, mf):
    """Assemble the augmented system for a fixed mean-field law.

    Abar = diag(A, F), Bbar = [B; 0], C_X = [[C_Z, -C_Z], [-C_Z, C_Z]],
    process noise confined to the agent block.
    """
    m, p = spec.m, spec.p
    if mf.m != m:
        raise ValidationError(f"F: expected {m}x{m} to match A, got {mf.F.shape}")
    Abar = np.zeros((2 * m, 2 * m))
    Abar[:m, :m] = spec.A
    Abar[m:, m:] = mf.F
    Bbar = np.vstack([spec.B, np.zeros((m, p))])
    C_X = np.block([[spec.C_Z, -spec.C_Z], [-spec.C_Z, spec.C_Z]])
    Sigma_wbar = np.zeros((2 * m, 2 * m))
    Sigma_wbar[:m, :m] = spec.Sigma_w
    return AugmentedSpec(Abar=Abar, Bbar=Bbar, C_X=C_X, Sigma_wbar=Sigma_wbar, m=m)


@dataclass(frozen=True)
class ValidationReport:
    """Named pass/fail checks; ``ok`` is their conjunction. Warnings don't gate."""

    checks: dict
    warnings: tuple = field(default=())

    @property
    def ok(self):
        return all(self.checks.values())

    def failed(self):
        return [name for name, passed in self.checks.items() if not passed]


def validate_spec(spec):
    """Run the model sanity checks: symmetry, definiteness, controllability,
    observability. Deterministic and side-effect free."""
    checks = {}
    checks["C_U_symmetric"] = is_symmetric(spec.C_U)
    checks["C_U_positive_definite"] = checks["C_U_symmetric"] and sym_min_eig(spec.C_U) > _DEFINITENESS_TOL
    checks["C_Z_symmetric"] = is_symmetric(spec.C_Z)
    checks["C_Z_positive_semidefinite"] = checks["C_Z_symmetric"] and sym_min_eig(spec.C_Z) >= -_DEFINITENESS_TOL
    checks["Sigma_w_symmetric"] = is_symmetric(spec.Sigma_w)
    checks["Sigma_w_positive_definite"] = checks["Sigma_w_symmetric"] and sym_min_eig(spec.Sigma_w) > _DEFINITENESS_TOL
    checks["Sigma_0_symmetric"] = is_symmetric(spec.Sigma_0)
    checks["Sigma_0_positive_semidefinite"] = (
        checks["Sigma_0_symmetric"] and sym_min_eig(spec.Sigma_0) >= -_DEFINITENESS_TOL
    )
    checks["controllable"] = staircase_rank(spec.A, spec.B) == spec.m
    checks["observable"] = staircase_rank(spec.A.T, psd_sqrt(spec.C_Z)) == spec.m

    warnings = []
    if np.allclose(spec.nu0, 0.0):
        # F is unobservable from data when the mean-field trajectory is identically zero
        warnings.append("nu0 is zero: mean-field trajectory is identically zero; learning cannot identify F")
    return ValidationReport(checks=checks, warnings=tuple(warnings))
