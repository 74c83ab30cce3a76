"""Tests for T_N certification: criterion matrix, closed forms, kernels,
inner points, permutations, and the large T_5 rank condition."""

import itertools
import json

import numpy as np
import pytest

from splitgrad import matops as mo
from splitgrad import tnconfig as tn
from splitgrad.errors import DegenerateInputError, RankDeficientError


C3 = 3.0
A3 = (C3 - 1 / C3) ** 2          # 64/9
B3 = C3 + 1 / C3 - 2.0           # 4/3
DET_A_CLOSED = 2 * A3 ** 2 * (A3 * B3 ** 2 + 4 * A3 - 16 * B3)


def lam1_closed(eta):
    return np.array([1.0, eta,
                     (2 / A3) * ((A3 * B3 / 4 - 1) * eta + 1),
                     (2 * eta / A3) * (A3 * B3 / 4 - 1 + eta),
                     (A3 * B3 / 4 - 2) * eta])


def lam3_closed(nu):
    return np.array([1.0, nu, (B3 / 2) * nu, (B3 / 2) * nu ** 2,
                     (A3 * B3 / 4 - 1) * nu - 1])


def test_input_rejects_rank_one_connections():
    X = [np.eye(2), np.eye(2) + np.outer([1, 0], [0, 1]),
         np.diag([2.0, 0.5]), np.diag([3.0, 1 / 3.0])]
    with pytest.raises(ValueError):
        tn.TnInput(X)


def test_build_Amu_t4_pattern():
    inp = tn.t4_family(C3)
    A = tn.build_Amu(inp, 1.0)
    expected = np.array([[0, -A3, 2, 2],
                         [-A3, 0, 2, 2],
                         [2, 2, 0, -A3],
                         [2, 2, -A3, 0]])
    assert np.allclose(A, expected, rtol=1e-13)


def test_build_Amu_t5_entries():
    A = tn.build_Amu(tn.t5_family(C3), 1.0)
    expected = np.array([[0, -A3, 2, 2, -B3],
                         [-A3, 0, 2, 2, -B3],
                         [2, 2, 0, -A3, 2],
                         [2, 2, -A3, 0, 2],
                         [-B3, -B3, 2, 2, 0]])
    assert np.allclose(A, expected, rtol=1e-13)


def test_build_Amu_mu_zero_upper_triangular():
    inp = tn.t5_family(C3, tn.SIGMA_3)
    A0 = tn.build_Amu(inp, 0.0)
    pos = inp.inverse_positions
    for i in range(5):
        for j in range(5):
            if i == j or pos[i] < pos[j]:
                continue
            assert A0[i, j] == 0.0


def test_family_determinant_identities():
    inp4 = tn.t4_family(C3)
    assert mo.det(inp4.X[0] - inp4.X[2]) == pytest.approx(2.0, rel=1e-13)
    inp5 = tn.t5_family(C3)
    assert mo.det(inp5.X[0] - inp5.X[4]) == pytest.approx(-B3, rel=1e-13)
    assert np.allclose(inp5.X[2], [[0, -C3], [1 / C3, 0]])
    for X in inp5.X:
        assert mo.det(X) == pytest.approx(1.0, rel=1e-13)


def test_alpha_values_and_detA():
    detA = float(np.linalg.det(tn.build_Amu(tn.t5_family(C3), 1.0)))
    assert detA == pytest.approx(DET_A_CLOSED, rel=1e-12)
    assert detA == pytest.approx(13107200 / 6561, rel=1e-10)
    for sigma, expected in ((tn.SIGMA_1, -16 * A3),
                            (tn.SIGMA_2, -16 * A3),
                            (tn.SIGMA_3, -4 * A3 ** 2 * B3)):
        alpha, beta = tn.t5_alpha_beta(tn.t5_family(C3, sigma))
        assert alpha == pytest.approx(expected, rel=1e-12)
        assert beta == pytest.approx(-detA / (2 * alpha), rel=1e-12)


def test_mu_star_closed_forms():
    inp1 = tn.t5_family(C3, tn.SIGMA_1)
    inp3 = tn.t5_family(C3, tn.SIGMA_3)
    _, beta1 = tn.t5_alpha_beta(inp1)
    _, beta3 = tn.t5_alpha_beta(inp3)
    assert beta1 == pytest.approx(6400 / 729, rel=1e-12)
    assert beta3 == pytest.approx(100 / 27, rel=1e-12)
    eta = tn.t5_mu_star(inp1)
    nu = tn.t5_mu_star(inp3)
    assert eta == pytest.approx(1 + beta1 / 2
                                + 0.5 * np.sqrt(beta1 ** 2 + 4 * beta1))
    assert eta > nu > 1.0
    # direct residual check by LU
    for inp, mu in ((inp1, eta), (inp3, nu)):
        Amu = tn.build_Amu(inp, mu)
        assert abs(np.linalg.det(Amu)) \
            <= 1e-8 * np.linalg.norm(Amu) ** 5


def test_mu_star_none_when_beta_nonpositive():
    rng = np.random.RandomState(12)
    found = 0
    while found < 3:
        X = [rng.randn(2, 2) for _ in range(5)]
        try:
            inp = tn.TnInput(X)
            _, beta = tn.t5_alpha_beta(inp)
        except (ValueError, DegenerateInputError):
            continue
        if beta <= 0:
            assert tn.t5_mu_star(inp) is None
            found += 1


def test_kernel_closed_forms():
    inp1 = tn.t5_family(C3, tn.SIGMA_1)
    eta = tn.t5_mu_star(inp1)
    lam = tn.kernel_positive(tn.build_Amu(inp1, eta))
    assert np.allclose(lam, lam1_closed(eta), rtol=1e-9)

    inp2 = tn.t5_family(C3, tn.SIGMA_2)
    lam2 = tn.kernel_positive(tn.build_Amu(inp2, eta))
    assert np.allclose(lam2, lam1_closed(eta)[[0, 1, 3, 2, 4]], rtol=1e-9)

    inp3 = tn.t5_family(C3, tn.SIGMA_3)
    nu = tn.t5_mu_star(inp3)
    lam3 = tn.kernel_positive(tn.build_Amu(inp3, nu))
    assert np.allclose(lam3, lam3_closed(nu), rtol=1e-9)


def test_kernel_positive_edge_cases():
    with pytest.raises(RankDeficientError):
        tn.kernel_positive(np.zeros((5, 5)))
    with pytest.raises(RankDeficientError):
        tn.kernel_positive(np.diag([1.0, 2.0, 3.0, 0.0, 0.0]))
    # full rank: no kernel
    assert tn.kernel_positive(np.eye(5)) is None
    # rank 4 with sign-mixed kernel
    A = np.diag([1.0, 1.0, 1.0, 1.0, 0.0])
    A[4, 0] = 0.0
    v = np.array([1.0, -1.0, 0.0, 0.0, 1.0])
    Q, _ = np.linalg.qr(np.random.RandomState(1).randn(5, 5))
    B = Q @ np.diag([1, 2, 3, 4, 0]) @ np.linalg.inv(
        np.column_stack([v, np.random.RandomState(2).randn(5, 4)]))
    if tn.kernel_positive(B) is not None:  # kernel is v up to scale
        pytest.fail("sign-mixed kernel must be rejected")


def test_t4_kernel_matches_reduced_system():
    inp = tn.t4_family(C3)
    cert = tn.certify(inp)
    gamma = A3 ** 2 / 4
    mubar = (gamma - 2) / 2 + 0.5 * np.sqrt((gamma - 2) ** 2 - 4)
    r = A3 * mubar / (2 * (1 + mubar))
    assert cert.mu == pytest.approx(mubar, rel=1e-10)
    assert r == pytest.approx(3.2476, abs=2e-4)
    assert np.allclose(cert.lam, [1.0, mubar, r, mubar * r], rtol=1e-9)


def test_certify_t4_threshold_cases():
    assert tn.certify(tn.t4_family(3.0)) is not None   # a = 64/9 > 4
    assert tn.certify(tn.t4_family(2.0)) is None       # a = 2.25 < 4
    thr = tn.t4_threshold()
    assert abs(thr - (1 + np.sqrt(2.0))) <= 1e-6


def test_certificate_invariants_c3():
    for sigma in (tn.SIGMA_1, tn.SIGMA_2, tn.SIGMA_3):
        cert = tn.certify(tn.t5_family(C3, sigma))
        assert cert is not None
        N = cert.input.N
        Amu = tn.build_Amu(cert.input, cert.mu)
        lam_sig = cert.lam
        assert np.linalg.norm(Amu @ lam_sig) \
            <= 1e-9 * np.linalg.norm(Amu) * np.linalg.norm(lam_sig)
        for k in range(N):
            assert abs(mo.det(cert.inner_points[k] - cert.input.X[k])) \
                <= 1e-9
            # rank-one legs decompose
            assert mo.rank_one_decompose(
                cert.inner_points[k] - cert.input.X[k]) is not None
        assert np.linalg.norm(sum(C for C, _ in cert.legs)) <= 1e-9
        assert all(k > 1 for _, k in cert.legs)
        # det X_i = 1 for the family, so inner points have det 1
        for P in cert.inner_points:
            assert mo.det(P) == pytest.approx(1.0, rel=1e-10)


def test_permutation_covariance():
    sigma = tn.SIGMA_3
    cert_perm = tn.certify(tn.t5_family(C3, sigma))
    X = list(tn.t5_family(C3).X)
    reordered = [X[s - 1] for s in sigma]
    cert_id = tn.certify(tn.TnInput(reordered))
    assert cert_id is not None
    assert cert_id.mu == pytest.approx(cert_perm.mu, rel=1e-12)
    # inner point of the reordered tuple at position k equals the permuted
    # certificate's inner point at original index sigma(k)
    for k in range(5):
        orig = sigma[k] - 1
        assert np.allclose(cert_id.inner_points[k],
                           cert_perm.inner_points[orig], atol=1e-10)


def test_scaling_identities_random():
    rng = np.random.RandomState(21)
    for _ in range(50):
        X = [rng.randn(2, 2) for _ in range(5)]
        try:
            inp = tn.TnInput(X)
        except ValueError:
            continue
        mu = 10 ** rng.uniform(-0.5, 0.5)
        Amu = tn.build_Amu(inp, mu)
        Ainv = tn.build_Amu(inp, 1.0 / mu)
        assert np.allclose(Amu.T, mu * Ainv, rtol=1e-10)
        assert np.linalg.det(Amu) == pytest.approx(
            mu ** 5 * np.linalg.det(Ainv), rel=1e-10)
        assert abs(np.linalg.det(tn.build_Amu(inp, 0.0))) <= 1e-10 \
            * max(1.0, np.linalg.norm(Amu) ** 5)
        assert abs(np.linalg.det(tn.build_Amu(inp, -1.0))) <= 1e-9 \
            * max(1.0, np.linalg.norm(Amu) ** 5)


def test_general_scan_agrees_with_closed_form():
    rng = np.random.RandomState(33)
    base = tn.t5_family(C3, tn.SIGMA_1)
    hits = 0
    for _ in range(100):
        X = [M + 0.02 * rng.randn(2, 2) for M in base.X]
        try:
            inp = tn.TnInput(X, tn.SIGMA_1)
            mu_closed = tn.t5_mu_star(inp)
        except (ValueError, DegenerateInputError):
            continue
        if mu_closed is None:
            continue
        roots = tn._scan_mu_roots(inp, mu_max=1e4, samples=1000)
        assert any(abs(r - mu_closed) <= 1e-6 * mu_closed for r in roots)
        hits += 1
    assert hits >= 80


def test_large_t5_report():
    X = list(tn.t5_family(C3).X)
    rep = tn.is_large_t5(X)
    assert rep.verdict
    assert rep.ranks == (3, 3, 3, 3, 3)
    eta = rep.certificates[0].mu
    nu = rep.certificates[2].mu

    d1 = np.linalg.det(rep.B[0][:, [1, 3, 4]])
    d2 = np.linalg.det(rep.B[1][:, [0, 3, 4]])
    d3 = np.linalg.det(rep.B[2][:, [0, 1, 3]])
    d4 = np.linalg.det(rep.B[3][:, [0, 1, 2]])
    d5 = np.linalg.det(rep.B[4][:, [0, 1, 2]])
    cf1 = -(2 / A3) * (eta ** 2 - 1) * eta * (nu - 1)
    cf3 = -(2 / A3) * eta ** 2 * nu * (A3 * B3 / 4 - 2) * (eta - 1) \
        * (nu - eta)
    assert d1 == pytest.approx(cf1, rel=1e-8)
    assert d2 == pytest.approx(d1, rel=1e-10)
    assert d3 == pytest.approx(cf3, rel=1e-8)
    assert d4 == pytest.approx(-cf3, rel=1e-8)
    # the (3,3) entries cannot influence these determinants, hence
    # det B5 = det B4 = -det B3
    assert d5 == pytest.approx(-cf3, rel=1e-8)


def test_large_t5_degenerate():
    X = [np.eye(2)] * 4 + [np.diag([2.0, 0.5])]
    with pytest.raises((DegenerateInputError, ValueError)):
        tn.is_large_t5(X)


def test_certificate_json_roundtrip():
    cert = tn.certify(tn.t5_family(C3, tn.SIGMA_1))
    doc = json.loads(json.dumps(cert.to_json_dict()))
    back = tn.certificate_from_json(doc)
    assert back.mu == cert.mu
    assert np.array_equal(back.lam, cert.lam)
    for P, Q in zip(back.inner_points, cert.inner_points):
        assert np.array_equal(P, Q)
    assert back.input.sigma == cert.input.sigma


def test_all_t4_orderings_certify():
    # the four-matrix set certifies under every ordering fixing, e.g.,
    # position of X1 (orderings differing by cyclic shifts are equivalent)
    X = list(tn.t4_family(C3).X)
    count = 0
    for perm in itertools.permutations(range(1, 5)):
        cert = tn.certify(tn.TnInput(X, perm))
        if cert is not None:
            count += 1
    assert count == 24
