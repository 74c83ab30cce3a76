"""T_N configuration certification in 2 x 2 matrix space.

An ordered tuple (X_1, ..., X_N) with det(X_i - X_j) != 0 for i != j is a
T_N configuration iff the matrix

    A^mu_ij = det(X_i - X_j)        if i comes before j in the ordering,
              0                     if i = j,
              mu det(X_i - X_j)     otherwise,

has a strictly positive kernel vector for some mu > 1.  Orderings are
tracked through a permutation sigma; entries compare positions of i and j
under sigma^{-1}.  For N = 5 the admissible mu has the closed form

    mu* = 1 + beta/2 + sqrt(beta^2 + 4 beta)/2,
    beta = -det A / (2 alpha),

with alpha the product of the five cyclic entries of A in the sigma-order;
mu* > 1 exists iff beta > 0, and then the kernel of A^{sigma,mu*} is
one-dimensional.  For other N a sign-change scan of det A^mu is used.

Certified configurations come with their inner points P_k (the corners of
the rank-one staircase) and legs (C_i, kappa_i): writing the cycle order
Y_p = X_{sigma(p)}, the staircase reads Y_p = P + C_1 + ... + C_{p-1}
+ kappa_p C_p with rank C_p = 1, sum C_p = 0 and every kappa_p > 1.
"""

from __future__ import annotations

import dataclasses
import json
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import matops
from .config import SCHEMA_VERSION
from .errors import (CertificateError, DegenerateInputError,
                     RankDeficientError)

DEFAULT_TOL = 1e-9
KERNEL_RANK_TOL = 1e-8


def _check_permutation(sigma: Sequence[int], N: int) -> Tuple[int, ...]:
    sigma = tuple(int(s) for s in sigma)
    if sorted(sigma) != list(range(1, N + 1)):
        raise ValueError(f"sigma={sigma} is not a permutation of 1..{N}")
    return sigma


@dataclasses.dataclass(frozen=True)
class TnInput:
    """Ordered matrices plus the ordering permutation (one-based)."""

    X: Tuple[np.ndarray, ...]
    sigma: Tuple[int, ...]

    def __init__(self, X: Sequence, sigma: Optional[Sequence[int]] = None,
                 tol: float = DEFAULT_TOL):
        X = tuple(matops.as_matrix(M) for M in X)
        N = len(X)
        if N < 4:
            raise ValueError("a T_N configuration needs N >= 4")
        if any(M.shape != (2, 2) for M in X):
            raise ValueError("all matrices must be 2 x 2")
        sigma = _check_permutation(sigma if sigma is not None
                                   else range(1, N + 1), N)
        for i in range(N):
            for j in range(i + 1, N):
                D = X[i] - X[j]
                scale = max(float((D ** 2).sum()), 1e-300)
                if abs(matops.det(D)) <= tol * scale:
                    raise ValueError(
                        f"det(X_{i+1} - X_{j+1}) vanishes (rank-one "
                        "connection or coincident matrices)")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "sigma", sigma)

    @property
    def N(self) -> int:
        return len(self.X)

    @property
    def inverse_positions(self) -> np.ndarray:
        """pos[i] = position (0-based) of original index i under sigma."""
        pos = np.empty(self.N, dtype=int)
        for p, v in enumerate(self.sigma):
            pos[v - 1] = p
        return pos

    def cycle_order(self) -> List[int]:
        """Original indices (0-based) in staircase order."""
        return [v - 1 for v in self.sigma]


@dataclasses.dataclass(frozen=True)
class TnCertificate:
    """A verified T_N configuration.

    lam and inner_points are indexed by the original matrix index;
    legs are in cycle (sigma) order.
    """

    input: TnInput
    mu: float
    lam: np.ndarray
    inner_points: Tuple[np.ndarray, ...]
    base: np.ndarray                       # P = inner point at cycle start
    legs: Tuple[Tuple[np.ndarray, float], ...]
    residuals: dict

    @property
    def kappas(self) -> np.ndarray:
        return np.array([k for _, k in self.legs])

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "tn_certificate",
            "N": self.input.N,
            "sigma": list(self.input.sigma),
            "matrices": [M.flatten().tolist() for M in self.input.X],
            "mu": self.mu,
            "lambda": self.lam.tolist(),
            "inner_points": [P.flatten().tolist() for P in self.inner_points],
            "base": self.base.flatten().tolist(),
            "legs": [{"C": C.flatten().tolist(), "kappa": k}
                     for C, k in self.legs],
            "residuals": self.residuals,
        }


@dataclasses.dataclass(frozen=True)
class LargeT5Report:
    sigmas: Tuple[Tuple[int, ...], ...]
    certificates: Tuple[TnCertificate, ...]
    B: Tuple[np.ndarray, ...]
    ranks: Tuple[int, ...]
    verdict: bool

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "large_t5_report",
            "sigmas": [list(s) for s in self.sigmas],
            "certificates": [c.to_json_dict() for c in self.certificates],
            "B": [Bk.tolist() for Bk in self.B],
            "ranks": list(self.ranks),
            "verdict": self.verdict,
        }


def build_Amu(inp: TnInput, mu: float) -> np.ndarray:
    """The criterion matrix A^{sigma,mu} indexed by original matrix indices."""
    N = inp.N
    pos = inp.inverse_positions
    A = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            if i == j:
                continue
            d = matops.det(inp.X[i] - inp.X[j])
            A[i, j] = d if pos[i] < pos[j] else mu * d
    return A


def _amu_parts(inp: TnInput) -> Tuple[np.ndarray, np.ndarray]:
    """A^mu = U + mu * W split into its mu-free and mu-linear parts."""
    N = inp.N
    pos = inp.inverse_positions
    U = np.zeros((N, N))
    W = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            if i == j:
                continue
            d = matops.det(inp.X[i] - inp.X[j])
            if pos[i] < pos[j]:
                U[i, j] = d
            else:
                W[i, j] = d
    return U, W


def t5_alpha_beta(inp: TnInput) -> Tuple[float, float]:
    """Cyclic product alpha and beta = -det A / (2 alpha) for N = 5.

    beta follows the mu*-formula normalization; the alternative
    normalization without the factor 2 fails the det A^{mu*} = 0 check and
    is rejected by the verification inside t5_mu_star.
    """
    if inp.N != 5:
        raise ValueError("alpha/beta closed form is specific to N = 5")
    A1 = build_Amu(inp, 1.0)
    order = inp.cycle_order()
    alpha = 1.0
    scale = float(np.max(np.abs(A1)))
    for p in range(5):
        entry = A1[order[p], order[(p + 1) % 5]]
        if abs(entry) <= 1e-14 * max(scale, 1.0):
            raise DegenerateInputError(
                f"cyclic determinant A[{order[p]+1},{order[(p+1) % 5]+1}] "
                "vanishes")
        alpha *= entry
    beta = -float(np.linalg.det(A1)) / (2.0 * alpha)
    return float(alpha), float(beta)


def t5_mu_star(inp: TnInput, tol: float = DEFAULT_TOL) -> Optional[float]:
    """Closed-form root mu* > 1 of det A^{sigma,mu}, or None if beta <= 0.

    The returned value is verified: |det A^{mu*}| <= 1e-8 |A|^5 and the
    kernel of A^{mu*} is one-dimensional.
    """
    _, beta = t5_alpha_beta(inp)
    if beta <= 0:
        return None
    mu = 1.0 + beta / 2.0 + 0.5 * np.sqrt(beta * beta + 4.0 * beta)
    Amu = build_Amu(inp, mu)
    norm = np.linalg.norm(Amu)
    residual = abs(np.linalg.det(Amu))
    if residual > 1e-8 * norm ** 5:
        raise CertificateError(
            f"det A^(mu*) residual {residual:.3e} exceeds 1e-8 |A|^5")
    s = np.linalg.svd(Amu, compute_uv=False)
    if s[-2] <= KERNEL_RANK_TOL * s[0]:
        raise RankDeficientError("kernel of A^(mu*) is not one-dimensional")
    return float(mu)


def kernel_positive(A: np.ndarray,
                    rank_tol: float = KERNEL_RANK_TOL
                    ) -> Optional[np.ndarray]:
    """Positive kernel generator of a rank N-1 matrix, first entry 1.

    Returns None when the matrix has full numerical rank or the normalized
    kernel vector is not strictly positive.  Raises RankDeficientError when
    the numerical rank is below N - 1.
    """
    A = np.asarray(A, dtype=float)
    N = A.shape[0]
    u, s, vt = np.linalg.svd(A)
    if s[0] == 0.0:
        raise RankDeficientError("zero matrix")
    if N >= 2 and s[N - 2] / s[0] < rank_tol:
        raise RankDeficientError(
            f"numerical rank below {N-1}: sigma ratios "
            f"{(s / s[0]).tolist()}")
    if s[N - 1] / s[0] >= rank_tol:
        return None
    v = vt[-1]
    if abs(v[0]) < 1e-300:
        return None
    v = v / v[0]
    if np.any(v <= 0):
        return None
    return v


def _scan_mu_roots(inp: TnInput, mu_max: float = 1e4,
                   samples: int = 1000) -> List[float]:
    """Roots of det A^{sigma,mu} on (1, mu_max] by sign-change bisection."""
    U, W = _amu_parts(inp)
    mus = np.geomspace(1.0 + 1e-9, mu_max, samples)
    stack = U[None, :, :] + mus[:, None, None] * W[None, :, :]
    vals = np.linalg.det(stack)
    roots = []
    for k in range(samples - 1):
        a, b = mus[k], mus[k + 1]
        fa, fb = vals[k], vals[k + 1]
        if fa == 0.0:
            roots.append(float(a))
            continue
        if fa * fb < 0:
            for _ in range(80):
                m = 0.5 * (a + b)
                fm = np.linalg.det(U + m * W)
                if fa * fm <= 0:
                    b = m
                else:
                    a, fa = m, fm
            roots.append(0.5 * (a + b))
    return roots


def xi_vectors(inp: TnInput, mu: float, lam: np.ndarray) -> np.ndarray:
    """Convex weights xi^{(k)} of the inner points, rows indexed by k.

    xi^{(k)}_i is proportional to lam_i, weighted by mu for the indices
    that precede k in the cycle order.
    """
    N = inp.N
    pos = inp.inverse_positions
    xi = np.zeros((N, N))
    for k in range(N):
        v = np.where(pos >= pos[k], lam, mu * lam)
        xi[k] = v / v.sum()
    return xi


def _assemble(inp: TnInput, mu: float, lam: np.ndarray,
              tol: float) -> TnCertificate:
    N = inp.N
    Amu = build_Amu(inp, mu)
    xi = xi_vectors(inp, mu, lam)
    Xs = np.stack(inp.X)
    P = [np.tensordot(xi[k], Xs, axes=1) for k in range(N)]
    order = inp.cycle_order()

    legs = []
    for p in range(N):
        i, i_next = order[p], order[(p + 1) % N]
        C = P[i_next] - P[i]
        R = inp.X[i] - P[i]
        denom = float((C * C).sum())
        if denom <= 0:
            raise CertificateError("degenerate leg direction")
        kappa = float((R * C).sum() / denom)
        colin = float(np.linalg.norm(R - kappa * C))
        if colin > max(tol, tol * np.linalg.norm(R)) * 1e3:
            raise CertificateError(
                f"X - P not collinear with leg (residual {colin:.3e})")
        legs.append((C, kappa))

    scale = max(matops.frob(M) for M in inp.X)
    res = {
        "kernel": float(np.linalg.norm(Amu @ lam)
                        / (np.linalg.norm(Amu) * np.linalg.norm(lam))),
        "rank_one_legs": max(abs(matops.det(P[k] - inp.X[k]))
                             for k in range(N)),
        "legs_sum": float(np.linalg.norm(sum(C for C, _ in legs))),
        "det_inner": max(
            abs(matops.det(P[k]) - float(np.dot(
                xi[k], [matops.det(M) for M in inp.X])))
            for k in range(N)),
        "staircase": 0.0,
    }
    base = P[order[0]]
    acc = base.copy()
    worst = 0.0
    for p in range(N):
        i = order[p]
        C, kappa = legs[p]
        worst = max(worst, float(np.linalg.norm(
            inp.X[i] - (acc + kappa * C))))
        acc = acc + C
    res["staircase"] = worst

    rel = max(tol, 1e-12)
    ok = (res["kernel"] <= rel
          and res["rank_one_legs"] <= max(rel, rel * scale ** 2) * 10
          and res["legs_sum"] <= rel * scale * 10
          and res["det_inner"] <= max(rel, rel * scale ** 2) * 10
          and res["staircase"] <= rel * scale * 10
          and all(k > 1.0 for _, k in legs))
    if not ok:
        raise CertificateError(f"certificate invariants violated: {res}")

    return TnCertificate(input=inp, mu=float(mu), lam=np.asarray(lam, float),
                         inner_points=tuple(P), base=base,
                         legs=tuple(legs), residuals=res)


def certify(inp: TnInput, tol: float = DEFAULT_TOL,
            mu_max: float = 1e4, mu_samples: int = 1000
            ) -> Optional[TnCertificate]:
    """Certify the ordered tuple as a T_N configuration, or return None.

    N = 5 uses the closed-form mu*; other N scan det A^mu for sign changes
    and test every root's kernel for positivity, returning the first that
    works.
    """
    candidates: List[float] = []
    if inp.N == 5:
        try:
            mu = t5_mu_star(inp, tol)
        except (CertificateError, RankDeficientError):
            mu = None
        if mu is None:
            return None
        candidates = [mu]
    else:
        candidates = _scan_mu_roots(inp, mu_max, mu_samples)
    for mu in candidates:
        if mu <= 1.0:
            continue
        try:
            lam = kernel_positive(build_Amu(inp, mu))
        except RankDeficientError:
            continue
        if lam is None:
            continue
        return _assemble(inp, mu, lam, tol)
    return None


def t4_family(c: float) -> TnInput:
    """Diagonal/antidiagonal unit-determinant four-matrix family."""
    if not c > 1:
        raise ValueError("c must exceed 1")
    X1 = np.array([[c, 0.0], [0.0, 1.0 / c]])
    X2 = np.array([[1.0 / c, 0.0], [0.0, c]])
    X3 = np.array([[0.0, -c], [1.0 / c, 0.0]])
    X4 = np.array([[0.0, -1.0 / c], [c, 0.0]])
    return TnInput([X1, X2, X3, X4])


def t5_family(c: float, sigma: Optional[Sequence[int]] = None) -> TnInput:
    """The four-matrix family extended by the identity."""
    base = t4_family(c)
    return TnInput(list(base.X) + [np.eye(2)], sigma)


SIGMA_1 = (1, 2, 3, 5, 4)
SIGMA_2 = (1, 2, 4, 5, 3)
SIGMA_3 = (1, 2, 5, 3, 4)


def build_Bk(k: int, certs: Sequence[TnCertificate]) -> np.ndarray:
    """The 3 x 5 rank-condition matrix for atom k (one-based)."""
    B = np.zeros((len(certs), 5))
    for i, cert in enumerate(certs):
        pos = cert.input.inverse_positions
        for j in range(5):
            if j == k - 1:
                continue
            lamj = cert.lam[j]
            B[i, j] = lamj if pos[k - 1] < pos[j] else cert.mu * lamj
    return B


def is_large_t5(X: Sequence, sigma1=SIGMA_1, sigma2=SIGMA_2, sigma3=SIGMA_3,
                tol: float = DEFAULT_TOL) -> LargeT5Report:
    """Certify three orderings and check the rank-3 condition at every atom.

    The five matrices must be affinely non-degenerate: the differences
    X_j - X_5 span a 4-dimensional space.
    """
    X = [matops.as_matrix(M) for M in X]
    if len(X) != 5:
        raise ValueError("a large T_5 check needs exactly five matrices")
    diffs = np.stack([(X[j] - X[4]).flatten() for j in range(4)])
    s = np.linalg.svd(diffs, compute_uv=False)
    if s[-1] < 1e-8 * s[0]:
        raise DegenerateInputError("matrices are affinely degenerate")

    sigmas = tuple(_check_permutation(sg, 5)
                   for sg in (sigma1, sigma2, sigma3))
    certs = []
    for sg in sigmas:
        cert = certify(TnInput(X, sg, tol))
        if cert is None:
            return LargeT5Report(sigmas, (), (), (), False)
        certs.append(cert)

    Bs = tuple(build_Bk(k, certs) for k in range(1, 6))
    ranks = []
    for Bk in Bs:
        sv = np.linalg.svd(Bk, compute_uv=False)
        ranks.append(int(np.sum(sv > 1e-8 * sv[0])))
    verdict = all(r == 3 for r in ranks)
    return LargeT5Report(sigmas, tuple(certs), Bs, tuple(ranks), verdict)


def t4_threshold(tol: float = 1e-6, lo: float = 1.5, hi: float = 10.0
                 ) -> float:
    """Bisection for the smallest c such that the four-matrix family
    certifies; the certification predicate is the oracle."""
    def predicate(c: float) -> bool:
        try:
            return certify(t4_family(c)) is not None
        except ValueError:
            return False

    if predicate(lo) or not predicate(hi):
        raise ValueError("threshold bracket [lo, hi] is invalid")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def certificate_from_json(d: dict) -> TnCertificate:
    if d.get("type") != "tn_certificate":
        raise ValueError("not a tn_certificate document")
    N = int(d["N"])
    X = [np.array(m, float).reshape(2, 2) for m in d["matrices"]]
    inp = TnInput(X, d["sigma"])
    return TnCertificate(
        input=inp,
        mu=float(d["mu"]),
        lam=np.array(d["lambda"], float),
        inner_points=tuple(np.array(p, float).reshape(2, 2)
                           for p in d["inner_points"]),
        base=np.array(d["base"], float).reshape(2, 2),
        legs=tuple((np.array(leg["C"], float).reshape(2, 2),
                    float(leg["kappa"])) for leg in d["legs"]),
        residuals=dict(d["residuals"]),
    )
