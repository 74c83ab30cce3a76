"""Tests for the closed-form map families."""

import numpy as np
import pytest

from splitgrad import analyzer as an
from splitgrad import families as fm
from splitgrad import matops as mo
from splitgrad.errors import BadSlopesError


def test_folding_identity_profile_is_split():
    fam = fm.folding_map(fm.identity_profile())
    pts = np.random.RandomState(0).rand(50, 2)
    assert np.allclose(fam.f(pts), pts, atol=1e-14)
    G = fam.grad(pts)
    assert np.allclose(G, np.eye(2))


def test_folding_absolute_value_profile():
    fam = fm.folding_map(fm.absolute_value_profile())
    pts = np.array([[0.7, 0.2], [0.1, 0.9], [0.4, 0.4]])
    vals = fam.f(pts)
    expected = np.stack([np.max(pts, axis=1), np.min(pts, axis=1)],
                        axis=-1)
    assert np.allclose(vals, expected, atol=1e-14)
    G = fam.grad(np.array([[0.7, 0.2], [0.1, 0.9]]))
    assert np.allclose(G[0], np.eye(2))
    assert np.allclose(G[1], [[0, 1], [1, 0]])
    # |det| = 1 a.e., sign follows the profile slope
    pts = np.random.RandomState(1).rand(100, 2)
    dets = np.linalg.det(fam.grad(pts))
    assert np.all(np.abs(np.abs(dets) - 1.0) < 1e-14)


def test_folding_bad_slopes():
    with pytest.raises(BadSlopesError):
        fm.folding_map(fm.PiecewiseLinear1D([-1, 0, 1], [0.5, 0, 1]))


def test_exact_gradients_match_finite_differences():
    for fam in (fm.folding_map(fm.absolute_value_profile()),
                fm.default_shear()):
        F_ex = an.sample(fam, (65, 65), use_exact=True)
        F_fd = an.sample(fam, (65, 65), use_exact=False)
        mask = F_ex.smooth_mask(0.1) & F_ex.interior_mask()
        err = np.abs(F_ex.samples - F_fd.samples).max(axis=(-2, -1))
        assert err[mask].max() < 5e-3   # O(h^2) at h ~ 1/65


def test_folding_split_iff_constant_slope():
    flat = an.sample(fm.folding_map(fm.identity_profile()), (32, 32))
    defect_flat, _ = an.split_defect(flat)
    assert defect_flat <= 1e-12
    mixed = an.sample(fm.folding_map(fm.absolute_value_profile()), (32, 32))
    defect_mixed, _ = an.split_defect(mixed)
    assert defect_mixed > 0.05


def test_f_eps_determinant_and_split():
    F = fm.folding_map(fm.absolute_value_profile())
    eps = 0.5
    fam = fm.f_eps(eps, F)
    field = an.sample(fam, (9, 3, 9, 3))
    mask = field.smooth_mask(0.05)
    dets = an.det_field(field)
    planar = an.sample(F, (9, 9))
    dF = np.linalg.det(planar.samples)
    # det grad f = det grad F * 2 eps^2 exactly at smooth nodes
    expected = np.broadcast_to(dF[:, None, :, None] * 2 * eps ** 2,
                               dets.shape)
    assert np.abs(dets[mask] - expected[mask]).max() <= 1e-13
    # eps = 0: split where grad F is split
    fam0 = fm.f_eps(0.0, F)
    field0 = an.sample(fam0, (9, 3, 9, 3))
    _, _, dL = an.dist_fields(field0)
    assert dL[mask].max() == 0.0


def test_f_eps_dist_bound_with_c_equals_2():
    F = fm.folding_map(fm.absolute_value_profile())
    for eps in (0.25, 1.0):
        fam = fm.f_eps(eps, F)
        field = an.sample(fam, (9, 3, 9, 3))
        fam0 = fm.f_eps(0.0, F)
        field0 = an.sample(fam0, (9, 3, 9, 3))
        _, _, dL = an.dist_fields(field)
        _, _, dL0 = an.dist_fields(field0)
        # the eps block has Frobenius norm 2 eps
        assert np.all(dL <= dL0 + 2.0 * eps + 1e-12)


def test_oscillation_family():
    fam = fm.default_oscillation(8)
    field = an.sample(fam, (1, 64, 64, 1))
    dets = an.det_field(field)
    assert np.abs(dets - 1.0).max() == 0.0
    _, _, dL = an.dist_fields(field)
    assert dL.max() <= fam.params["dist_bound"] + 1e-15
    # the only off-split entries
    G = field.samples
    assert np.abs(G[..., 1:, :] - np.broadcast_to(
        np.eye(4)[1:], G[..., 1:, :].shape)).max() == 0.0


def test_oscillation_measured_max_matches_symbolic():
    j = 8
    fam = fm.default_oscillation(j)
    field = an.sample(fam, (1, 64, 64, 1))
    _, _, dL = an.dist_fields(field)
    # dist = |h(j x2) phi'(x3)| / j with phi' = 1
    x2 = field.axes[1]
    expected = np.abs(np.sin(2 * np.pi * j * x2) / (2 * np.pi)).max() / j
    assert dL.max() == pytest.approx(expected, rel=1e-12)


def test_shear_composition_det_one():
    rng = np.random.RandomState(7)
    fam = fm.default_shear()
    pts = rng.rand(200, 2)
    dets = np.linalg.det(fam.grad(pts))
    assert np.abs(dets - 1.0).max() < 1e-15
    # phi = psi = 0 gives the identity
    triv = fm.shear_composition(lambda y: 0.0 * y, lambda y: 0.0 * y,
                                lambda x: 0.0 * x, lambda x: 0.0 * x)
    assert np.allclose(triv.f(pts), pts)


def test_shear_composition_not_split():
    field = an.sample(fm.default_shear(), (48, 48))
    defect, _ = an.split_defect(field)
    assert defect > 0.01
