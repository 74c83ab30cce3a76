"""Tests for laminates of finite order and splitting trees."""

import json

import numpy as np
import pytest

from splitgrad import laminate as lam
from splitgrad import matops as mo
from splitgrad import tnconfig as tn
from splitgrad.errors import (MassExceededError, NotOnSegmentError,
                              NotRankOneError, SingularError)


def diag_atom(*entries):
    return np.diag(np.array(entries, float))


def test_split_first_cascade_step():
    side = 4
    start = np.zeros((side, side))
    start[0, 0] = 0.5
    nu = lam.Laminate([(1.0, start)])
    lo = start.copy()
    lo[0, 0] = -1.0
    hi = start.copy()
    hi[0, 0] = 1.0
    out = lam.split(nu, 0, 1.0, 0.25, lo, hi)
    ws = sorted(out.weights)
    assert ws == [0.25, 0.75]
    assert np.allclose(lam.barycenter(out), start)


def test_split_zero_mass_is_identity():
    nu, _ = lam.example_nu(1)
    out = lam.split(nu, 0, 0.0, 0.5, np.eye(2), np.eye(2))
    assert out.size == nu.size
    assert np.allclose(sorted(out.weights), sorted(nu.weights))


def test_split_root_pair_is_rank_one():
    n = 2
    side = 2 * n
    root = np.zeros((side, side))
    root[0, 0] = 0.25
    root[n, 0] = 0.25
    bp = np.zeros((side, side))
    bp[0, 0] = 0.5
    bpp = np.zeros((side, side))
    bpp[n, 0] = 0.5
    nu = lam.Laminate([(1.0, root)])
    out = lam.split(nu, 0, 1.0, 0.5, bp, bpp)
    assert out.size == 2
    assert np.allclose(lam.barycenter(out), root)


def test_split_errors():
    nu = lam.Laminate([(1.0, np.eye(2))])
    with pytest.raises(NotRankOneError):
        lam.split(nu, 0, 1.0, 0.5, np.zeros((2, 2)), 2 * np.eye(2))
    shear = np.eye(2) + np.outer([1.0, 0.0], [0.0, 1.0])
    anti = 2 * np.eye(2) - shear
    with pytest.raises(NotOnSegmentError):
        lam.split(nu, 0, 1.0, 0.25, shear, anti)  # wrong lambda
    with pytest.raises(MassExceededError):
        lam.split(nu, 0, 1.5, 0.5, shear, anti)


def test_barycenter_single_dirac():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(lam.barycenter(lam.Laminate([(1.0, M)])), M)


@pytest.mark.parametrize("n", [1, 2])
def test_example_nu(n):
    nu, tree = lam.example_nu(n)
    side = 2 * n
    expected = np.zeros((side, side))
    expected[0, 0] = 0.25
    expected[n, 0] = 0.25
    assert np.array_equal(lam.barycenter(nu), expected)
    # every atom split with |det| = 1, exactly
    for w, M in nu.atoms():
        assert abs(abs(mo.det(M)) - 1.0) == 0.0
        assert mo.classify_split(M) in (mo.SplitClass.L1, mo.SplitClass.L2)
    mass_L1 = nu.mass_where(
        lambda M: mo.classify_split(M) is mo.SplitClass.L1)
    mass_L2 = nu.mass_where(
        lambda M: mo.classify_split(M) is mo.SplitClass.L2)
    assert mass_L1 > 0 and mass_L2 > 0
    assert mass_L1 + mass_L2 == pytest.approx(1.0, abs=1e-12)
    # the diagonal branch has barycenter e1 (x) e1 / 2
    nu1 = lam.SplitTree(tree.root.left).to_laminate()
    b1 = np.zeros((side, side))
    b1[0, 0] = 0.5
    assert np.array_equal(lam.barycenter(nu1), b1)
    tree.validate()
    assert tree.count_splits() == 1 + 2 * (2 ** side - 1)


def test_example_nu_weights_n1():
    nu, _ = lam.example_nu(1)
    assert sorted(np.round(nu.weights, 10)) == [0.0625] * 4 + [0.1875] * 4


def test_tree_leaves_reproduce_laminate():
    nu, tree = lam.example_nu(1)
    leaves = tree.leaves()
    rebuilt = lam.Laminate(leaves)
    assert rebuilt.size == nu.size
    for w, M in nu.atoms():
        match = [wr for wr, Mr in rebuilt.atoms()
                 if np.linalg.norm(Mr - M) < 1e-12]
        assert len(match) == 1
        assert match[0] == pytest.approx(w, abs=1e-15)


def test_pushforward():
    nu, tree = lam.example_nu(1)
    same = lam.pushforward_left(np.eye(2), nu)
    assert np.allclose(sorted(same.weights), sorted(nu.weights))
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    nu1 = lam.SplitTree(tree.root.left).to_laminate()
    nu2 = lam.pushforward_left(swap, nu1)
    expected = np.array([[0.0, 0.0], [0.5, 0.0]])
    assert np.array_equal(lam.barycenter(nu2), expected)
    # determinant multiplicativity
    rng = np.random.RandomState(6)
    P = rng.randn(2, 2) + 3 * np.eye(2)
    pushed = lam.pushforward_left(P, nu1)
    dets_in = sorted(mo.det(M) for _, M in nu1.atoms())
    dets_out = sorted(mo.det(M) / mo.det(P) for _, M in pushed.atoms())
    assert np.allclose(dets_in, dets_out, rtol=1e-12)
    with pytest.raises(SingularError):
        lam.pushforward_left(np.zeros((2, 2)), nu)


@pytest.mark.parametrize("k,M", [(1, 1), (1, 2), (3, 1), (2, 3)])
def test_staircase(k, M):
    cert = tn.certify(tn.t4_family(3.0))
    nu, tree = lam.staircase(cert, k, M)
    # barycenter telescopes back to the starting inner point
    assert np.linalg.norm(lam.barycenter(nu)
                          - cert.inner_points[k - 1]) <= 1e-12
    # atoms are the X_i plus a single residual inner point
    inner = [(w, Mat) for w, Mat in nu.atoms()
             if all(np.linalg.norm(Mat - X) > 1e-8 for X in cert.input.X)]
    assert len(inner) == 1
    w_res, M_res = inner[0]
    assert w_res == pytest.approx(lam.residual_mass(cert, M), rel=1e-10)
    assert any(np.linalg.norm(M_res - P) <= 1e-10
               for P in cert.inner_points)
    tree.validate()
    assert tree.count_splits() == 4 * M


def test_staircase_residual_decreasing():
    cert = tn.certify(tn.t4_family(3.0))
    masses = [lam.residual_mass(cert, M) for M in range(1, 6)]
    assert all(b < a for a, b in zip(masses, masses[1:]))
    # rho = prod(1 - 1/kappa) ~ 0.095 for the c = 3 staircase
    assert masses[-1] < 1e-4


def test_staircase_t5():
    cert = tn.certify(tn.t5_family(3.0, tn.SIGMA_1))
    nu, tree = lam.staircase(cert, 2, 1)
    assert np.linalg.norm(lam.barycenter(nu)
                          - cert.inner_points[1]) <= 1e-12
    assert tree.count_splits() == 5


def test_json_roundtrip_and_csv():
    nu, tree = lam.example_nu(1)
    nu2 = lam.laminate_from_json(json.loads(json.dumps(nu.to_json_dict())))
    assert np.allclose(sorted(nu2.weights), sorted(nu.weights))
    tree2 = lam.tree_from_json(json.loads(json.dumps(tree.to_json_dict())))
    assert tree2.count_splits() == tree.count_splits()
    tree2.validate()
    csv = lam.to_csv(nu)
    lines = csv.strip().split("\r\n")
    assert len(lines) == 1 + nu.size
    assert lines[0].startswith("weight,")


def test_laminate_merges_atoms():
    nu = lam.Laminate([(0.5, np.eye(2)), (0.5, np.eye(2) + 1e-12)])
    assert nu.size == 1
    assert nu.weights[0] == pytest.approx(1.0)
