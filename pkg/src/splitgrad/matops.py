"""Small dense matrix algebra for split-structure analysis.

Matrices are plain numpy arrays.  A "block matrix" is a 2n x 2n array read
in n x n blocks

    F = [[A, B],
         [C, D]],

L1 is the subspace {B = C = 0}, L2 is {A = D = 0}, and L = L1 u L2 is the
set of split matrices.  Both L1 and L2 are coordinate subspaces, so all
distances below are exact Frobenius projections.
"""

from __future__ import annotations

import enum
import itertools
from typing import Optional, Tuple

import numpy as np

from .config import MINOR_BOUND_C, OFFDIAG_BOUND_C
from .errors import WrongBranchError

DEFAULT_TOL = 1e-9


class SplitClass(enum.Enum):
    L1 = "L1"
    L2 = "L2"
    NOT_SPLIT = "NotSplit"
    ZERO = "Zero"


def as_matrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] % 2:
        raise ValueError(f"expected a 2n x 2n matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix entries must be finite")
    return M


def block_n(M: np.ndarray) -> int:
    return M.shape[0] // 2


def block_split(F) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return the four n x n blocks (A, B, C, D) of a 2n x 2n matrix."""
    F = as_matrix(F)
    n = block_n(F)
    return F[:n, :n], F[:n, n:], F[n:, :n], F[n:, n:]


def block_join(A, B, C, D) -> np.ndarray:
    return np.block([[np.asarray(A, float), np.asarray(B, float)],
                     [np.asarray(C, float), np.asarray(D, float)]])


def frob(M) -> float:
    return float(np.linalg.norm(np.asarray(M, float)))


def det(M) -> float:
    """Determinant; closed form for 2 x 2, LU with partial pivoting above."""
    M = np.asarray(M, dtype=float)
    if M.shape == (2, 2):
        return float(M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0])
    return float(np.linalg.det(M))


def det_many(Ms: np.ndarray) -> np.ndarray:
    """Vectorized determinant over a stack of matrices (..., k, k)."""
    Ms = np.asarray(Ms, dtype=float)
    if Ms.shape[-2:] == (2, 2):
        return Ms[..., 0, 0] * Ms[..., 1, 1] - Ms[..., 0, 1] * Ms[..., 1, 0]
    return np.linalg.det(Ms)


def dist_to_L1(F) -> float:
    _, B, C, _ = block_split(F)
    return float(np.sqrt((B ** 2).sum() + (C ** 2).sum()))


def dist_to_L2(F) -> float:
    A, _, _, D = block_split(F)
    return float(np.sqrt((A ** 2).sum() + (D ** 2).sum()))


def dist_to_L(F) -> float:
    return min(dist_to_L1(F), dist_to_L2(F))


def dist_to(F, target: str) -> float:
    """Frobenius distance to L, L1 or L2 (exact coordinate projections)."""
    target = target.upper()
    if target == "L1":
        return dist_to_L1(F)
    if target == "L2":
        return dist_to_L2(F)
    if target == "L":
        return dist_to_L(F)
    raise ValueError(f"unknown target {target!r}")


def project_to_L(F) -> np.ndarray:
    """Frobenius projection onto the nearer of L1 / L2 (ties -> L1)."""
    F = as_matrix(F)
    n = block_n(F)
    P = F.copy()
    if dist_to_L1(F) <= dist_to_L2(F):
        P[:n, n:] = 0.0
        P[n:, :n] = 0.0
    else:
        P[:n, :n] = 0.0
        P[n:, n:] = 0.0
    return P


def classify_split(F, tol: float = DEFAULT_TOL) -> SplitClass:
    """Classify F as L1 / L2 / Zero / NotSplit with scale-relative tolerance.

    Ties (both distances within tol, nonzero) resolve to the smaller
    distance, then to L1.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    F = as_matrix(F)
    nF = frob(F)
    if nF <= tol:
        return SplitClass.ZERO
    d1, d2 = dist_to_L1(F), dist_to_L2(F)
    in1, in2 = d1 <= tol * nF, d2 <= tol * nF
    if in1 and in2:
        return SplitClass.L2 if d2 < d1 else SplitClass.L1
    if in1:
        return SplitClass.L1
    if in2:
        return SplitClass.L2
    return SplitClass.NOT_SPLIT


def rank_one_decompose(M, tol: float = DEFAULT_TOL
                       ) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Decompose M = a (x) xi with |xi| = 1 when rank(M) = 1 within tol.

    Returns None for (numerical) rank 0 or 2.  The sign of xi is fixed so
    its largest-magnitude entry is positive, making the result deterministic.
    """
    M = np.asarray(M, dtype=float)
    u, s, vt = np.linalg.svd(M)
    if s[0] <= tol:
        return None
    if s[1] > tol * s[0]:
        return None
    xi = vt[0]
    sign = 1.0 if xi[np.argmax(np.abs(xi))] >= 0 else -1.0
    return s[0] * u[:, 0] * sign, xi * sign


def straddling_minor_pairs(n_rows: int, n_cols_half: int):
    """Index pairs (I, J) of the 2 x 2 minors straddling the column blocks."""
    for I in itertools.combinations(range(n_rows), 2):
        for j1 in range(n_cols_half):
            for j2 in range(n_cols_half, 2 * n_cols_half):
                yield I, (j1, j2)


def is_in_Lprime(G, tol: float = DEFAULT_TOL) -> bool:
    """Test membership in L' = {all block-straddling 2 x 2 minors vanish}.

    For G = (A | B) with n rows this is equivalent to rank G <= 1 or A = 0
    or B = 0; the equivalence is exercised against an SVD oracle in tests.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[1] % 2:
        raise ValueError("expected an n x 2m matrix")
    m = G.shape[1] // 2
    scale = max(float((G ** 2).sum()), 1e-300)
    for I, J in straddling_minor_pairs(G.shape[0], m):
        minor = G[I[0], J[0]] * G[I[1], J[1]] - G[I[0], J[1]] * G[I[1], J[0]]
        if abs(minor) > tol * scale:
            return False
    return True


def minor(F: np.ndarray, rows, cols) -> float:
    sub = np.asarray(F, float)[np.ix_(rows, cols)]
    return sub[0, 0] if sub.shape == (1, 1) else float(np.linalg.det(sub))


def minor_perturbation_bound(F, r: int) -> float:
    """Frozen-constant bound c (|F|^{r-1} d + d^r) with d = dist(F, L)."""
    d = dist_to_L(F)
    return MINOR_BOUND_C * (frob(F) ** (r - 1) * d + d ** r)


def offdiag_det_gap(F) -> Tuple[float, float]:
    """Gap |det F - (-1)^n det B det C| and its calibrated bound.

    Requires F to be strictly closer to L2 than to L1; raises
    WrongBranchError otherwise.
    """
    F = as_matrix(F)
    n = block_n(F)
    _, B, C, _ = block_split(F)
    d1, d2 = dist_to_L1(F), dist_to_L2(F)
    if not d2 < d1:
        raise WrongBranchError(
            f"dist(F,L2)={d2:.3e} not smaller than dist(F,L1)={d1:.3e}")
    gap = abs(det(F) - (-1.0) ** n * det(B) * det(C))
    d = d2
    bound = OFFDIAG_BOUND_C * (frob(F) ** (2 * n - 1) * d + d ** (2 * n))
    return gap, bound
