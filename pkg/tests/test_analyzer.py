"""Tests for the grid diagnostics."""

import numpy as np
import pytest

from splitgrad import analyzer as an
from splitgrad import families as fm
from splitgrad import laminate as lam
from splitgrad import matops as mo
from splitgrad import synth as sy
from splitgrad.errors import DimensionTooSmallError


def test_sample_affine_constant_exact():
    fam = fm.identity_family(2)
    F = an.sample(fam, (8, 8))
    assert np.array_equal(F.samples,
                          np.broadcast_to(np.eye(2), (8, 8, 2, 2)))
    assert F.volume() == pytest.approx(1.0)


def test_sample_folding_values():
    fam = fm.folding_map(fm.absolute_value_profile())
    F = an.sample(fam, (32, 32))
    sm = F.smooth_mask(0.05)
    d1, d2, dL = an.dist_fields(F)
    assert dL[sm].max() == 0.0
    # gradient is I below the diagonal (x > y, h' = 1), swap above
    X, Y = np.meshgrid(F.axes[0], F.axes[1], indexing="ij")
    below = (X > Y) & sm
    above = (X < Y) & sm
    assert np.all(d1[below] == 0.0)
    assert np.all(d2[above] == 0.0)


def test_sample_fd_oscillation_second_order():
    fam = fm.default_oscillation(2)
    errs = []
    for m in (16, 32, 64):
        F = an.sample(fam, (4, m, m, 4), use_exact=False)
        assert F.fd_sampled
        Fe = an.sample(fam, (4, m, m, 4), use_exact=True)
        inner = F.interior_mask()
        err = np.abs(F.samples - Fe.samples).max(axis=(-2, -1))
        errs.append(err[inner].max())
    assert errs[1] <= 0.35 * errs[0]
    assert errs[2] <= 0.35 * errs[1]


def test_chi_field():
    fam = fm.identity_family(2)
    F = an.sample(fam, (8, 8))
    chi, mass = an.chi_field(F)
    assert mass == 0.0
    rot = fm.planar_rotation(np.pi / 2)
    chi, mass = an.chi_field(an.sample(rot, (8, 8)))
    assert mass == 1.0


def test_chi_matches_laminate_mass():
    nu, tree = lam.example_nu(1)
    pam = sy.realize(tree, sy.UNIT_SQUARE, 0.1)
    F = an.sample(pam, (128, 128))
    _, mass = an.chi_field(F)
    target = nu.mass_where(
        lambda M: mo.classify_split(M) is mo.SplitClass.L2)
    assert abs(mass - target) <= 0.05


def test_det_sublevel():
    fam = fm.identity_family(2)
    F = an.sample(fam, (8, 8))
    assert an.det_sublevel(F, [0.5])[0] == 0.0
    # folding realization: det = -1 on swap cells
    I2 = np.eye(2)
    SW = np.array([[0.0, 1.0], [1.0, 0.0]])
    pam = sy.simple_lamination(0.5 * (I2 + SW), I2, SW, 0.5,
                               sy.UNIT_SQUARE, 0.1)
    Fm = an.sample(pam, (96, 96))
    med = an.det_sublevel(Fm, [0.0])[0]
    assert med == pytest.approx(0.5, abs=0.05)
    meas = an.det_sublevel(Fm, [-2.0, -0.5, 0.5, 2.0])
    assert np.all(np.diff(meas) >= 0)
    assert meas[0] == 0.0
    assert meas[-1] == pytest.approx(1.0, abs=1e-12)


def test_minor_fields_block_diag():
    rng = np.random.RandomState(8)
    G = np.zeros((5, 5, 4, 4))
    G[..., :2, :2] = rng.randn(5, 5, 2, 2)
    G[..., 2:, 2:] = rng.randn(5, 5, 2, 2)
    F = an.GradientField([np.linspace(0, 1, 5)] * 4,
                         [np.full(5, 0.2)] * 4,
                         np.broadcast_to(G[:, :, None, None],
                                         (5, 5, 5, 5, 4, 4)).copy())
    mf = an.minor_fields(F)
    assert mf.straddle_residual == 0.0
    for M in mf.b.values():
        assert np.abs(M).max() == 0.0


def test_minor_fields_oscillation_a12():
    j = 4
    fam = fm.default_oscillation(j)
    F = an.sample(fam, (1, 48, 48, 1))
    mf = an.minor_fields(F)
    # a_{12} = d1 f1 d2 f2 - d2 f1 d1 f2 = h'(j x2) phi(x3)... with rows
    # (f1, f2): d1f1 = 1, d2f2 = 1, d2f1 = h' phi, d1f2 = 0
    a12 = mf.a[(0, 1)]
    x2 = F.axes[1]
    x3 = F.axes[2]
    expected = np.ones((1, len(x2), len(x3), 1))
    assert np.allclose(a12, expected)
    # only the straddling minor M_{2,3} = -h(j x2) phi'(x3) / j survives,
    # of order 1/j rather than zero (the field is only approximately split)
    assert 0 < mf.straddle_residual <= 1.0 / (2 * np.pi * j) + 1e-12


def test_minor_fields_requires_n2():
    fam = fm.identity_family(2)
    F = an.sample(fam, (4, 4))
    with pytest.raises(DimensionTooSmallError):
        an.minor_fields(F)


def test_eq24_exactly_one_block_survives():
    # nodes valued in L with det != 0: the a-minors or the b-minors of the
    # first two rows vanish, matching the chi label
    rng = np.random.RandomState(9)
    n = 2
    shape = (4, 4, 4, 4)
    S = np.zeros(shape + (4, 4))
    labels = rng.rand(*shape) < 0.5
    for idx in np.ndindex(*shape):
        blk = rng.randn(2, 2) + 2 * np.eye(2)
        blk2 = rng.randn(2, 2) + 2 * np.eye(2)
        M = np.zeros((4, 4))
        if labels[idx]:
            M[:2, 2:] = blk
            M[2:, :2] = blk2
        else:
            M[:2, :2] = blk
            M[2:, 2:] = blk2
        S[idx] = M
    F = an.GradientField([np.linspace(0, 1, 4)] * 4,
                         [np.full(4, 0.25)] * 4, S)
    mf = an.minor_fields(F)
    suma = sum(M ** 2 for M in mf.a.values())
    sumb = sum(M ** 2 for M in mf.b.values())
    chi, _ = an.chi_field(F)
    # chi = 1 (closer to L2) iff the a-block vanishes and b survives
    assert np.array_equal(chi.astype(bool), labels)
    assert np.all((suma == 0) == labels)
    assert np.all((sumb == 0) == ~labels)


def test_independence_residual():
    xs = np.linspace(0, 1, 33)
    fams = []
    for m in (17, 33, 65):
        ax, w = an.midpoint_axis(0.0, 1.0, m)
        F = an.GradientField([ax, ax], [w, w],
                             np.broadcast_to(np.eye(2), (m, m, 2, 2)).copy())
        pts = an.grid_points(F.axes)
        g_const = np.sin(3 * pts[..., 0])        # independent of axis 1
        fams.append(an.independence_residual(g_const, F, 1))
    # O(h^2) decay under refinement
    assert fams[1] <= 0.35 * fams[0]
    assert fams[2] <= 0.35 * fams[1]

    ax, w = an.midpoint_axis(0.0, 1.0, 33)
    F = an.GradientField([ax, ax], [w, w],
                         np.broadcast_to(np.eye(2), (33, 33, 2, 2)).copy())
    pts = an.grid_points(F.axes)
    g_dep = pts[..., 1]
    res = an.independence_residual(g_dep, F, 1)
    assert res > 0.5    # |int phi| / |phi|_L1 = 1 for a positive bump


def test_independence_residual_split_map_minor():
    fam = fm.default_oscillation(6)
    F = an.sample(fam, (1, 32, 32, 8))
    mf = an.minor_fields(F)
    a12 = mf.a[(0, 1)]
    res = an.independence_residual(a12, F, 3)
    assert res <= 1e-10   # a12 == 1 identically here


def test_compensated_products():
    # constant family: exact equality with the limit
    fam = fm.identity_family(4)
    F = an.sample(fam, (4, 4, 4, 4))
    rows = an.compensated_products([(1, F)], limit=F)
    assert rows[0]["int_phi_detA_detD"] == rows[1]["int_phi_detA_detD"]

    # oscillation family: int det A_j det D_j converges as j grows
    entries = []
    shape = (1, 64, 64, 1)
    for j in (2, 4, 8, 16):
        entries.append((j, an.sample(fm.default_oscillation(j), shape)))
    rows = an.compensated_products(entries)
    vals = [r["int_phi_detA_detD"] for r in rows]
    # det A_j = 1, det D_j = 1 for this family: the integral is constant
    assert np.allclose(vals, vals[0], rtol=1e-12)

    # eps family: det B_eps det C_eps -> 0
    fold = fm.folding_map(fm.absolute_value_profile())
    eps_entries = []
    for eps in (0.5, 0.25, 0.125):
        Fe = an.sample(fm.f_eps(eps, fold), (9, 3, 9, 3))
        eps_entries.append((eps, Fe))
    rows = an.compensated_products(eps_entries)
    bc = [abs(r["int_phi_detB_detC"]) for r in rows]
    assert bc[1] <= 0.3 * bc[0]
    assert bc[2] <= 0.3 * bc[1]


def test_split_defect_exact_split():
    fam = fm.folding_map(fm.identity_profile())
    F = an.sample(fam, (16, 16))
    defect, detail = an.split_defect(F)
    assert defect == 0.0


def test_split_defect_oscillation_bound():
    fam = fm.default_oscillation(8)
    F = an.sample(fam, (1, 64, 64, 1))
    defect, detail = an.split_defect(F)
    bound = 0.5 * (2 / np.pi) * 0.25
    assert defect >= 0.95 * bound
    assert detail["direct"] < detail["swapped"]


def test_split_defect_swap_invariance():
    rng = np.random.RandomState(10)
    m = 6
    S = rng.randn(m, m, m, m, 4, 4)
    ax, w = an.midpoint_axis(0.0, 1.0, m)
    F = an.GradientField([ax] * 4, [w] * 4, S)
    # swap the two factors: axes (x', x'') -> (x'', x') and blocks likewise
    S2 = np.transpose(S, (2, 3, 0, 1, 4, 5)).copy()
    S2 = S2[..., [2, 3, 0, 1], :][..., :, [2, 3, 0, 1]]
    F2 = an.GradientField([ax] * 4, [w] * 4, S2)
    d1, _ = an.split_defect(F)
    d2, _ = an.split_defect(F2)
    assert d1 == pytest.approx(d2, rel=1e-10)


def test_sequence_report():
    shape = (1, 48, 48, 1)
    entries = [(j, an.sample(fm.default_oscillation(j), shape))
               for j in (1, 2, 4, 8)]
    rep = an.sequence_report(entries, delta_ladder=(0.1, 0.5, 2.0))
    assert rep.flags["dist_L_decreasing"]
    dist1 = [r.dist_L[1] for r in rep.rows]
    assert dist1[-1] <= dist1[0] / 4
    # det = 1 everywhere: nothing below 0.5, everything below 2
    for r in rep.rows:
        assert r.sublevel[0.5] == 0.0
        assert r.sublevel[2.0] == pytest.approx(1.0, abs=1e-12)
    csv = rep.to_csv()
    assert len(csv.strip().split("\r\n")) == 5
    doc = rep.to_json_dict()
    assert doc["type"] == "sequence_report"
