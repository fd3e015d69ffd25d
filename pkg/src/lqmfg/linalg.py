"""Small dense linear-algebra kernels shared across the package."""

import numpy as np

__all__ = [
    "spectral_norm",
    "svec",
    "smat",
    "svec_dim",
    "solve_stein",
    "spectral_radius",
    "is_symmetric",
    "sym_min_eig",
    "psd_sqrt",
    "staircase_rank",
]

#: Relative singular-value cutoff for controllability/observability ranks.
RANK_RTOL = 1e-10


def spectral_norm(M, tol=1e-12, max_iter=10000):
    """Largest singular value of ``M`` by power iteration on ``M^T M``.

    Deterministic start vector; stops when the estimate stagnates below
    ``tol`` in relative terms.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    G = M.T @ M
    n = G.shape[0]
    # slight tilt breaks symmetry when the top eigenspace is degenerate
    v = np.ones(n) + 1e-3 * np.arange(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = float(np.sqrt(v @ G @ v))
        if abs(new - est) <= tol * max(1.0, new):
            return new
        est = new
    return est


def spectral_radius(M):
    """Largest eigenvalue magnitude (stability test for the closed loop)."""
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


def svec_dim(n):
    return n * (n + 1) // 2


def _svec_index(n):
    i, j = np.triu_indices(n)
    scale = np.where(i == j, 1.0, np.sqrt(2.0))
    return i, j, scale


def svec(M):
    """Symmetric vectorization: upper triangle, off-diagonal scaled by sqrt(2).

    Satisfies ``svec(M) @ svec(N) == trace(M @ N)`` for symmetric M, N.
    """
    M = np.asarray(M, dtype=float)
    i, j, scale = _svec_index(M.shape[0])
    return M[i, j] * scale


def smat(v):
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=float)
    n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if svec_dim(n) != v.size:
        raise ValueError(f"length {v.size} is not a triangular number")
    i, j, scale = _svec_index(n)
    M = np.zeros((n, n))
    M[i, j] = v / scale
    M[j, i] = M[i, j]
    return M


def solve_stein(A, Q, B=None):
    """Solve ``X = Q + A X B^T`` by Kronecker vectorization (B defaults to A).

    Covers both the covariance form (``X = Q + L X L^T``) and, with
    transposed arguments, the value form ``P = Q + L^T P L``.  Dimensions
    here are desk scale, so the dense (n^2 x n^2) solve is fine.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    n, q = A.shape[0], Q.shape[1]
    M = np.eye(n * q) - np.kron(B, A)
    x = np.linalg.solve(M, Q.reshape(-1, order="F"))
    return x.reshape(n, q, order="F")


def is_symmetric(M, tol=1e-10):
    M = np.atleast_2d(M)
    return M.shape[0] == M.shape[1] and bool(np.all(np.abs(M - M.T) <= tol * max(1.0, np.abs(M).max())))


def sym_min_eig(M):
    return float(np.linalg.eigvalsh(np.atleast_2d(M)).min())


def psd_sqrt(M):
    """Symmetric PSD square root via eigendecomposition."""
    w, V = np.linalg.eigh(np.atleast_2d(M))
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def staircase_rank(A, C):
    """Rank of ``[C, AC, ..., A^{m-1}C]`` with a relative singular-value cut.

    With C = B this is the controllability test; with C = C_Z^{1/2} applied
    to A^T it doubles as the observability test.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    m = A.shape[0]
    blocks = []
    Ak = np.eye(m)
    for _ in range(m):
        blocks.append(Ak @ C)
        Ak = A @ Ak
    s = np.linalg.svd(np.hstack(blocks), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))
