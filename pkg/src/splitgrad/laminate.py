"""Laminates of finite order and their splitting trees.

A laminate here is an atomic probability measure on matrix space obtained
from a Dirac mass by finitely many barycenter-preserving rank-one
splittings: an atom A_j with weight w may donate mass s <= w to a pair
B', B'' with A_j = lam B' + (1-lam) B'' and rank(B'' - B') = 1.

Two concrete constructions are provided: the sign-matrix counterexample
measure (example_nu), supported on split matrices of determinant +-1 with a
non-split barycenter, and staircase laminates extracted from a certified
T_N configuration, which exhibit the inner points as barycenters of
measures concentrating on the configuration.
"""

from __future__ import annotations

import dataclasses
import io
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import matops
from .config import SCHEMA_VERSION
from .errors import (MassExceededError, NotOnSegmentError, NotRankOneError,
                     SingularError)
from .tnconfig import TnCertificate

MERGE_TOL = 1e-10
WEIGHT_TOL = 1e-12


@dataclasses.dataclass(frozen=True)
class Laminate:
    """Atomic probability measure; atoms are merged on near-equality."""

    weights: np.ndarray
    matrices: np.ndarray          # shape (k, 2n, 2n)

    def __init__(self, atoms: Sequence[Tuple[float, np.ndarray]]):
        if not atoms:
            raise ValueError("a laminate needs at least one atom")
        side = np.asarray(atoms[0][1]).shape[0]
        ws: List[float] = []
        Ms: List[np.ndarray] = []
        for w, M in atoms:
            M = matops.as_matrix(M)
            if M.shape != (side, side):
                raise ValueError("mixed matrix dimensions in one laminate")
            if w <= 0:
                raise ValueError("atom weights must be positive")
            for idx, existing in enumerate(Ms):
                if np.linalg.norm(existing - M) <= MERGE_TOL:
                    ws[idx] += w
                    break
            else:
                ws.append(w)
                Ms.append(M)
        total = sum(ws)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {total}, expected 1")
        object.__setattr__(self, "weights", np.array(ws))
        object.__setattr__(self, "matrices", np.stack(Ms))

    @property
    def n(self) -> int:
        return self.matrices.shape[1] // 2

    @property
    def size(self) -> int:
        return len(self.weights)

    def atoms(self) -> List[Tuple[float, np.ndarray]]:
        return [(float(w), M) for w, M in zip(self.weights, self.matrices)]

    def mass_where(self, pred) -> float:
        return float(sum(w for w, M in self.atoms() if pred(M)))

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "laminate",
            "n": self.n,
            "atoms": [{"weight": float(w), "matrix": M.flatten().tolist()}
                      for w, M in self.atoms()],
        }


def barycenter(nu: Laminate) -> np.ndarray:
    return np.tensordot(nu.weights, nu.matrices, axes=1)


def _check_split(parent: np.ndarray, lam: float, Bp: np.ndarray,
                 Bpp: np.ndarray, tol: float = 1e-9) -> None:
    Bp = matops.as_matrix(Bp)
    Bpp = matops.as_matrix(Bpp)
    if not 0.0 < lam < 1.0:
        raise NotOnSegmentError(f"lambda={lam} outside (0,1)")
    D = Bpp - Bp
    if matops.rank_one_decompose(D, tol) is None:
        raise NotRankOneError("B'' - B' is not rank one")
    combo = lam * Bp + (1.0 - lam) * Bpp
    scale = max(np.linalg.norm(parent), np.linalg.norm(combo), 1.0)
    if np.linalg.norm(parent - combo) > tol * scale:
        raise NotOnSegmentError(
            "parent is not the prescribed convex combination of B', B''")


def split(nu: Laminate, j: int, s: float, lam: float,
          Bp: np.ndarray, Bpp: np.ndarray) -> Laminate:
    """Move mass s of atom j onto the rank-one pair (B', B'').

    Barycenter-preserving: nu' = nu + s (lam d_{B'} + (1-lam) d_{B''}
    - d_{A_j}).  s = 0 returns an identical laminate.
    """
    atoms = nu.atoms()
    if not 0 <= j < len(atoms):
        raise IndexError(f"atom index {j} out of range")
    wj, Aj = atoms[j]
    if s < 0 or s > wj + WEIGHT_TOL:
        raise MassExceededError(f"s={s} exceeds atom weight {wj}")
    if s == 0.0:
        return Laminate(atoms)
    _check_split(Aj, lam, Bp, Bpp)
    out = []
    for idx, (w, M) in enumerate(atoms):
        if idx == j:
            if wj - s > WEIGHT_TOL:
                out.append((wj - s, M))
        else:
            out.append((w, M))
    out.append((s * lam, np.asarray(Bp, float)))
    out.append((s * (1.0 - lam), np.asarray(Bpp, float)))
    return Laminate(out)


@dataclasses.dataclass
class TreeNode:
    """Node of a splitting tree; split is None at leaves."""

    matrix: np.ndarray
    lam: Optional[float] = None
    left: Optional["TreeNode"] = None     # carries weight lam
    right: Optional["TreeNode"] = None    # carries weight 1 - lam

    def is_leaf(self) -> bool:
        return self.lam is None


@dataclasses.dataclass
class SplitTree:
    """Full provenance of a laminate built from a single Dirac mass."""

    root: TreeNode

    def leaves(self) -> List[Tuple[float, np.ndarray]]:
        out: List[Tuple[float, np.ndarray]] = []

        def walk(node: TreeNode, w: float) -> None:
            if node.is_leaf():
                out.append((w, node.matrix))
                return
            walk(node.left, w * node.lam)
            walk(node.right, w * (1.0 - node.lam))

        walk(self.root, 1.0)
        return out

    def to_laminate(self) -> Laminate:
        return Laminate(self.leaves())

    def depth(self) -> int:
        def walk(node: TreeNode) -> int:
            if node.is_leaf():
                return 0
            return 1 + max(walk(node.left), walk(node.right))
        return walk(self.root)

    def count_splits(self) -> int:
        def walk(node: TreeNode) -> int:
            if node.is_leaf():
                return 0
            return 1 + walk(node.left) + walk(node.right)
        return walk(self.root)

    def validate(self, tol: float = 1e-9) -> None:
        """Check every node's convex-combination and rank-one identities."""
        def walk(node: TreeNode) -> None:
            if node.is_leaf():
                return
            _check_split(node.matrix, node.lam, node.left.matrix,
                         node.right.matrix, tol)
            walk(node.left)
            walk(node.right)
        walk(self.root)

    def map_matrices(self, fn) -> "SplitTree":
        def walk(node: TreeNode) -> TreeNode:
            if node.is_leaf():
                return TreeNode(fn(node.matrix))
            return TreeNode(fn(node.matrix), node.lam,
                            walk(node.left), walk(node.right))
        return SplitTree(walk(self.root))

    def to_json_dict(self) -> dict:
        def walk(node: TreeNode) -> dict:
            d = {"matrix": node.matrix.flatten().tolist()}
            if not node.is_leaf():
                d["lambda"] = node.lam
                d["left"] = walk(node.left)
                d["right"] = walk(node.right)
            return d
        return {"schema_version": SCHEMA_VERSION, "type": "split_tree",
                "root": walk(self.root)}


def tree_from_json(d: dict) -> SplitTree:
    if d.get("type") != "split_tree":
        raise ValueError("not a split_tree document")

    def walk(nd: dict) -> TreeNode:
        m = np.array(nd["matrix"], float)
        side = int(round(np.sqrt(m.size)))
        m = m.reshape(side, side)
        if "lambda" not in nd:
            return TreeNode(m)
        return TreeNode(m, float(nd["lambda"]), walk(nd["left"]),
                        walk(nd["right"]))

    return SplitTree(walk(d["root"]))


def pushforward_left(P: np.ndarray, nu: Laminate) -> Laminate:
    """Left multiplication of every atom by a nonsingular matrix P.

    Rank-one splittings stay rank one, so laminates map to laminates.
    """
    P = matops.as_matrix(P)
    if abs(matops.det(P)) <= 1e-12 * max(matops.frob(P) ** P.shape[0], 1e-30):
        raise SingularError("pushforward matrix is singular")
    return Laminate([(w, P @ M) for w, M in nu.atoms()])


def _sign_cascade(node: TreeNode, axis: int, side: int) -> None:
    """Split diag entries axis..side-1 of a diagonal matrix into +-1."""
    if axis >= side:
        return
    base = node.matrix
    lo = base.copy()
    hi = base.copy()
    lo[axis, axis] = -1.0
    hi[axis, axis] = 1.0
    node.lam = 0.5
    node.left = TreeNode(lo)
    node.right = TreeNode(hi)
    _sign_cascade(node.left, axis + 1, side)
    _sign_cascade(node.right, axis + 1, side)


def example_nu(n: int) -> Tuple[Laminate, SplitTree]:
    """Sign-matrix laminate with non-split barycenter in 2n x 2n space.

    Every atom lies in L with |det| = 1; the barycenter
    (e_1 + e_{n+1})/4 (x) e_1 does not.  Construction: a diagonal cascade
    produces nu_1 with barycenter e_1 (x) e_1 / 2, its pushforward by the
    block swap gives nu_2, and a final rank-one split of the barycenter
    glues nu = (nu_1 + nu_2)/2.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    side = 2 * n
    E = np.zeros((side, side))
    E[0, 0] = 0.25
    E[n, 0] = 0.25

    B1 = np.zeros((side, side))
    B1[0, 0] = 0.5

    # diagonal cascade under B1: first entry splits 1/4 : 3/4, the rest 1/2
    nu1_root = TreeNode(B1)
    lo = B1.copy()
    hi = B1.copy()
    lo[0, 0] = -1.0
    hi[0, 0] = 1.0
    nu1_root.lam = 0.25
    nu1_root.left = TreeNode(lo)
    nu1_root.right = TreeNode(hi)
    _sign_cascade(nu1_root.left, 1, side)
    _sign_cascade(nu1_root.right, 1, side)

    swap = np.zeros((side, side))
    swap[:n, n:] = np.eye(n)
    swap[n:, :n] = np.eye(n)
    nu2_root = SplitTree(nu1_root).map_matrices(lambda M: swap @ M).root

    tree = SplitTree(TreeNode(E, 0.5, nu1_root, nu2_root))
    tree.validate()
    return tree.to_laminate(), tree


def staircase(cert: TnCertificate, k: int, M: int
              ) -> Tuple[Laminate, SplitTree]:
    """Staircase laminate with barycenter P_k from a T_N certificate.

    Starting from the Dirac mass at the inner point P_k, each step splits
    the current inner-point atom toward the previous corner:
    P_p = (1/kappa_q) X_q + (1 - 1/kappa_q) P_q with q the cyclic
    predecessor.  After M full cycles the residual inner-point atom has
    mass prod_i (1 - 1/kappa_i)^M and the rest sits on the X_i.

    k is the (one-based) original matrix index of the starting inner point.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    inp = cert.input
    N = inp.N
    order = inp.cycle_order()
    if not 1 <= k <= N:
        raise ValueError(f"start index {k} out of range")
    p0 = order.index(k - 1)

    root = TreeNode(cert.inner_points[order[p0]])
    node = root
    p = p0
    for _ in range(N * M):
        q = (p - 1) % N
        kq = cert.legs[q][1]
        X_leaf = TreeNode(inp.X[order[q]])
        P_next = TreeNode(cert.inner_points[order[q]])
        node.lam = 1.0 / kq
        node.left = X_leaf
        node.right = P_next
        node = P_next
        p = q

    tree = SplitTree(root)
    tree.validate()
    return tree.to_laminate(), tree


def residual_mass(cert: TnCertificate, M: int) -> float:
    """Closed-form residual inner-point mass after M staircase cycles."""
    rho = float(np.prod([1.0 - 1.0 / kq for _, kq in cert.legs]))
    return rho ** M


def to_csv(nu: Laminate) -> str:
    """Atom table: weight, row-major entries, det, distances to L1/L2."""
    side = nu.matrices.shape[1]
    cols = ["weight"] + [f"m{i}{j}" for i in range(side)
                         for j in range(side)] + ["det", "dist_L1", "dist_L2"]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\r\n")
    for w, Mat in nu.atoms():
        row = [repr(float(w))]
        row += [repr(float(v)) for v in Mat.flatten()]
        row.append(repr(matops.det(Mat)))
        row.append(repr(matops.dist_to_L1(Mat)))
        row.append(repr(matops.dist_to_L2(Mat)))
        buf.write(",".join(row) + "\r\n")
    return buf.getvalue()


def laminate_from_json(d: dict) -> Laminate:
    if d.get("type") != "laminate":
        raise ValueError("not a laminate document")
    atoms = []
    for a in d["atoms"]:
        m = np.array(a["matrix"], float)
        side = int(round(np.sqrt(m.size)))
        atoms.append((float(a["weight"]), m.reshape(side, side)))
    return Laminate(atoms)
