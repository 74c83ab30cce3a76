"""Grid diagnostics for split and approximately split gradient fields.

A GradientField samples a block-matrix field on a tensor grid over a box
in R^{2n}.  Axes may be degenerate (a single node carrying the full axis
length as weight) when the field is constant along them; this keeps
four-dimensional families affordable by storing only the axes they
actually vary in.
"""

from __future__ import annotations

import dataclasses
import io
import itertools
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionTooSmallError
from .families import MapFamily

LQ_EXPONENTS = (1, 2)  # 2n is appended per field


@dataclasses.dataclass
class GradientField:
    """Block-matrix samples with midpoint quadrature weights."""

    axes: List[np.ndarray]
    axis_weights: List[np.ndarray]
    samples: np.ndarray             # (*grid_shape, 2n, 2n)
    fd_sampled: bool = False
    singular_dist: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.samples.shape[-1] != self.samples.shape[-2]:
            raise ValueError("samples must be square matrices")
        if self.samples.shape[-1] % 2:
            raise ValueError("samples must be 2n x 2n")
        if tuple(len(a) for a in self.axes) != self.grid_shape:
            raise ValueError("axes do not match sample grid")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    @property
    def n(self) -> int:
        return self.samples.shape[-1] // 2

    @property
    def grid_shape(self) -> Tuple[int, ...]:
        return self.samples.shape[:-2]

    @property
    def ndim_domain(self) -> int:
        return len(self.axes)

    def node_weights(self) -> np.ndarray:
        w = self.axis_weights[0]
        for aw in self.axis_weights[1:]:
            w = np.multiply.outer(w, aw)
        return w

    def volume(self) -> float:
        return float(np.prod([aw.sum() for aw in self.axis_weights]))

    def blocks(self):
        n = self.n
        S = self.samples
        return (S[..., :n, :n], S[..., :n, n:],
                S[..., n:, :n], S[..., n:, n:])

    def interior_mask(self) -> np.ndarray:
        """False on the outermost ring of every non-degenerate axis."""
        mask = np.ones(self.grid_shape, dtype=bool)
        for ax, m in enumerate(self.grid_shape):
            if m < 3:
                continue
            sl = [slice(None)] * len(self.grid_shape)
            sl[ax] = 0
            mask[tuple(sl)] = False
            sl[ax] = m - 1
            mask[tuple(sl)] = False
        return mask

    def smooth_mask(self, margin: float) -> np.ndarray:
        """True where the sample sits at least `margin` from the declared
        singular set (everywhere when no singular set is declared)."""
        if self.singular_dist is None:
            return np.ones(self.grid_shape, dtype=bool)
        return self.singular_dist > margin


def midpoint_axis(lo: float, hi: float, m: int
                  ) -> Tuple[np.ndarray, np.ndarray]:
    h = (hi - lo) / m
    return lo + (np.arange(m) + 0.5) * h, np.full(m, h)


def grid_points(axes: Sequence[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def sample(source, shape: Sequence[int],
           use_exact: bool = True) -> GradientField:
    """Sample a MapFamily (exact gradient or central differences) or a
    PiecewiseAffineMap (exact per-cell gradients) on a midpoint grid."""
    from .synth import PiecewiseAffineMap  # cycle-free local import

    if isinstance(source, PiecewiseAffineMap):
        fam = source.as_family()
    elif isinstance(source, MapFamily):
        fam = source
    else:
        raise TypeError("source must be a MapFamily or PiecewiseAffineMap")
    shape = tuple(int(m) for m in shape)
    if len(shape) != fam.dim:
        raise ValueError(f"grid shape {shape} does not match dim {fam.dim}")
    axes, weights = [], []
    for (lo, hi), m in zip(fam.domain, shape):
        ax, w = midpoint_axis(lo, hi, m)
        axes.append(ax)
        weights.append(w)
    pts = grid_points(axes)
    sing = None
    if fam.singular_distance is not None:
        sing = fam.singular_distance(pts)
    if use_exact and fam.grad is not None:
        return GradientField(axes, weights, fam.grad(pts),
                             fd_sampled=False, singular_dist=sing)
    if any(m == 1 for m in shape):
        raise ValueError("finite differences need at least 2 nodes per axis")
    vals = fam.f(pts)
    d = fam.dim
    G = np.empty(shape + (d, d))
    for comp in range(d):
        grads = np.gradient(vals[..., comp], *axes, edge_order=1)
        for ax in range(d):
            G[..., comp, ax] = grads[ax]
    return GradientField(axes, weights, G, fd_sampled=True,
                         singular_dist=sing)


# ---------------------------------------------------------------------------
# pointwise split diagnostics

def dist_fields(F: GradientField
                ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(dist to L1, dist to L2, dist to L) at every node."""
    A, B, C, D = F.blocks()
    d1 = np.sqrt((B ** 2).sum(axis=(-2, -1)) + (C ** 2).sum(axis=(-2, -1)))
    d2 = np.sqrt((A ** 2).sum(axis=(-2, -1)) + (D ** 2).sum(axis=(-2, -1)))
    return d1, d2, np.minimum(d1, d2)


def chi_field(F: GradientField) -> Tuple[np.ndarray, float]:
    """Indicator chi = 1 iff the node is strictly closer to L2.

    This is the approximate-sequence convention; the exact-split convention
    labels L1 by 1 instead, so only masses and constancy are asserted
    downstream, never the label itself.
    """
    d1, d2, _ = dist_fields(F)
    chi = (d2 < d1).astype(np.int8)
    w = F.node_weights()
    mass = float((w * chi).sum() / w.sum())
    return chi, mass


def det_field(F: GradientField) -> np.ndarray:
    return np.linalg.det(F.samples)


def det_sublevel(F: GradientField, deltas: Sequence[float]) -> np.ndarray:
    """Quadrature measure of {det grad f < delta} for each delta."""
    dets = det_field(F)
    w = F.node_weights()
    return np.array([float(w[dets < d].sum()) for d in deltas])


def lq_norm(values: np.ndarray, F: GradientField, q: float,
            exclude_ring: Optional[bool] = None) -> float:
    """Midpoint-quadrature L^q norm of a node field."""
    w = F.node_weights()
    if exclude_ring is None:
        exclude_ring = F.fd_sampled
    if exclude_ring:
        m = F.interior_mask()
        w = np.where(m, w, 0.0)
    return float((w * np.abs(values) ** q).sum() ** (1.0 / q))


# ---------------------------------------------------------------------------
# minors of the first two rows

@dataclasses.dataclass
class MinorFields:
    a: dict                 # (i, j) -> field, both columns in first block
    b: dict                 # both columns in second block
    straddle: dict          # mixed columns
    straddle_residual: float


def minor_fields(F: GradientField) -> MinorFields:
    """All 2 x 2 minors of the first two rows, partitioned by column blocks.

    The straddle residual is the summed L^1 norm of the mixed minors; it
    vanishes for split-valued fields.
    """
    n = F.n
    if n < 2:
        raise DimensionTooSmallError("minor partition needs n >= 2")
    S = F.samples
    r0, r1 = S[..., 0, :], S[..., 1, :]
    a, b, straddle = {}, {}, {}
    for i, j in itertools.combinations(range(2 * n), 2):
        M = r0[..., i] * r1[..., j] - r0[..., j] * r1[..., i]
        if j < n:
            a[(i, j)] = M
        elif i >= n:
            b[(i, j)] = M
        else:
            straddle[(i, j)] = M
    res = sum(lq_norm(M, F, 1, exclude_ring=False)
              for M in straddle.values())
    return MinorFields(a, b, straddle, float(res))


# ---------------------------------------------------------------------------
# weak-derivative residual against a bump dictionary

def _bump(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ti * ti))
    return out


def _bump_prime(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ti * ti)) \
        * (-2.0 * ti / (1.0 - ti * ti) ** 2)
    return out


def bump_dictionary(F: GradientField):
    """Tensor-product mollifier bumps: 3 centers and 2 scales per axis.

    Degenerate axes get the constant factor 1 (the field does not vary
    there).  Yields (phi, dphi_by_axis) as grids.
    """
    factors = []
    for ax, axis in enumerate(F.axes):
        if len(axis) == 1:
            factors.append([None])
            continue
        lo, hi = axis[0], axis[-1]
        span = hi - lo
        opts = []
        for frac in (0.25, 0.5, 0.75):
            for rel in (0.22, 0.4):
                c = lo + frac * span
                r = rel * span
                opts.append((c, r))
        factors.append(opts)
    for combo in itertools.product(*factors):
        parts, dparts = [], []
        for ax, opt in enumerate(combo):
            axis = F.axes[ax]
            if opt is None:
                parts.append(np.ones(1))
                dparts.append(np.zeros(1))
                continue
            c, r = opt
            t = (axis - c) / r
            parts.append(_bump(t))
            dparts.append(_bump_prime(t) / r)

        def outer(fs):
            out = fs[0]
            for f in fs[1:]:
                out = np.multiply.outer(out, f)
            return out

        phi = outer(parts)
        dphi = [outer(parts[:ax] + [dparts[ax]] + parts[ax + 1:])
                for ax in range(len(parts))]
        yield phi, dphi


def independence_residual(g: np.ndarray, F: GradientField,
                          axis: int) -> float:
    """Weak-derivative residual sup_phi |int g d_axis phi| / |phi|_L1.

    O(h^2) for fields independent of the axis; bounded away from zero
    otherwise (e.g. g = x_axis gives |int phi| / |phi|_L1 = 1).
    """
    if len(F.axes[axis]) == 1:
        raise ValueError("axis is degenerate on this grid")
    w = F.node_weights()
    best = 0.0
    for phi, dphi in bump_dictionary(F):
        mass = float((w * np.abs(phi)).sum())
        if mass <= 1e-12 * w.sum():
            continue
        val = abs(float((w * g * dphi[axis]).sum())) / mass
        best = max(best, val)
    return best


# ---------------------------------------------------------------------------
# compensated products along a sequence

def block_det_products(F: GradientField
                       ) -> Tuple[np.ndarray, np.ndarray]:
    A, B, C, D = F.blocks()
    return (np.linalg.det(A) * np.linalg.det(D),
            np.linalg.det(B) * np.linalg.det(C))


def compensated_products(entries: Sequence[Tuple[float, GradientField]],
                         limit: Optional[GradientField] = None,
                         phi: Optional[Callable] = None) -> List[dict]:
    """Tabulate int phi det A_j det D_j and int phi det B_j det C_j.

    The limit field's values are appended as the last row (label "limit").
    """
    rows = []

    def render(label, F):
        w = F.node_weights()
        if phi is None:
            ph = np.ones(F.grid_shape)
        else:
            ph = phi(grid_points(F.axes))
        ad, bc = block_det_products(F)
        rows.append({
            "label": label,
            "int_phi_detA_detD": float((w * ph * ad).sum()),
            "int_phi_detB_detC": float((w * ph * bc).sum()),
        })

    for label, F in entries:
        render(label, F)
    if limit is not None:
        render("limit", limit)
    return rows


# ---------------------------------------------------------------------------
# split defect

def _weighted_median_deviation(vals: np.ndarray, w: np.ndarray) -> float:
    """sum_i w_i |v_i - m| minimized over m (weighted median)."""
    order = np.argsort(vals, axis=-1)
    v = np.take_along_axis(vals, order, axis=-1)
    ww = np.take_along_axis(np.broadcast_to(w, vals.shape), order, axis=-1)
    cum = np.cumsum(ww, axis=-1)
    half = 0.5 * cum[..., -1:]
    idx = np.argmax(cum >= half, axis=-1)
    med = np.take_along_axis(v, idx[..., None], axis=-1)
    return float((ww * np.abs(v - med)).sum())


def _entry_defect(F: GradientField, row: int, col: int,
                  keep_axes: Tuple[int, ...]) -> float:
    """L1 distance of one gradient entry to functions of keep_axes only."""
    E = F.samples[..., row, col]
    d = F.ndim_domain
    reduce_axes = tuple(ax for ax in range(d) if ax not in keep_axes)
    if not reduce_axes:
        return 0.0
    perm = list(keep_axes) + list(reduce_axes)
    Ep = np.transpose(E, perm)
    keep_shape = Ep.shape[:len(keep_axes)]
    Ep = Ep.reshape(keep_shape + (-1,))
    w_red = F.axis_weights[reduce_axes[0]]
    for ax in reduce_axes[1:]:
        w_red = np.multiply.outer(w_red, F.axis_weights[ax])
    w_red = w_red.ravel()
    # outer weights over kept axes multiply each slice's deviation
    total = 0.0
    if keep_shape:
        w_keep = F.axis_weights[keep_axes[0]]
        for ax in keep_axes[1:]:
            w_keep = np.multiply.outer(w_keep, F.axis_weights[ax])
        flatk = Ep.reshape(-1, Ep.shape[-1])
        wk = w_keep.ravel()
        for i in range(flatk.shape[0]):
            total += wk[i] * _weighted_median_deviation(flatk[i], w_red)
    else:
        total = _weighted_median_deviation(Ep, w_red)
    return total


def _zero_defect(F: GradientField, row: int, col: int) -> float:
    return lq_norm(F.samples[..., row, col], F, 1, exclude_ring=False)


def split_defect(F: GradientField) -> Tuple[float, dict]:
    """Lower bound on the L^1 gradient distance to all split maps.

    For each pairing (direct: f = (f1(x'), f2(x'')); swapped) the bound
    replaces each gradient entry by its best approximation among functions
    of the allowed factor (entrywise weighted-median L^1 projection) and
    sums the residuals; forbidden entries contribute their full L^1 mass.
    Returns the smaller pairing's defect.
    """
    n = F.n
    d = F.ndim_domain
    first = tuple(range(n))
    second = tuple(range(n, d))
    totals = {}
    for pairing in ("direct", "swapped"):
        total = 0.0
        for row in range(2 * n):
            for col in range(2 * n):
                in_A = row < n and col < n
                in_B = row < n and col >= n
                in_C = row >= n and col < n
                if pairing == "direct":
                    if in_A:
                        total += _entry_defect(F, row, col, first)
                    elif row >= n and col >= n:
                        total += _entry_defect(F, row, col, second)
                    else:
                        total += _zero_defect(F, row, col)
                else:
                    if in_B:
                        total += _entry_defect(F, row, col, second)
                    elif in_C:
                        total += _entry_defect(F, row, col, first)
                    else:
                        total += _zero_defect(F, row, col)
        totals[pairing] = float(total)
    return min(totals.values()), totals


# ---------------------------------------------------------------------------
# sequence report

@dataclasses.dataclass
class SequenceRow:
    j: float
    dist_L: dict
    dist_L1: dict
    dist_L2: dict
    sublevel: dict
    chi_mass: float
    det_products: dict


@dataclasses.dataclass
class SequenceReport:
    rows: List[SequenceRow]
    delta_ladder: Tuple[float, ...]
    flags: dict

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "type": "sequence_report",
            "delta_ladder": list(self.delta_ladder),
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "flags": self.flags,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        qs = sorted(self.rows[0].dist_L) if self.rows else []
        header = (["j"] + [f"dist_L_q{q}" for q in qs]
                  + [f"dist_L1_q{q}" for q in qs]
                  + [f"dist_L2_q{q}" for q in qs]
                  + [f"measure_below_{d}" for d in self.delta_ladder]
                  + ["chi_mass", "int_detA_detD", "int_detB_detC"])
        buf.write(",".join(header) + "\r\n")
        for r in self.rows:
            row = [repr(float(r.j))]
            row += [repr(r.dist_L[q]) for q in qs]
            row += [repr(r.dist_L1[q]) for q in qs]
            row += [repr(r.dist_L2[q]) for q in qs]
            row += [repr(r.sublevel[d]) for d in self.delta_ladder]
            row.append(repr(r.chi_mass))
            row.append(repr(r.det_products["detA_detD"]))
            row.append(repr(r.det_products["detB_detC"]))
            buf.write(",".join(row) + "\r\n")
        return buf.getvalue()


def sequence_report(entries: Sequence[Tuple[float, GradientField]],
                    delta_ladder: Sequence[float] = (0.5, 0.25, 0.1, 0.01),
                    ) -> SequenceReport:
    """Hypothesis/conclusion statistics for a parametrized field sequence."""
    delta_ladder = tuple(sorted(delta_ladder))
    rows = []
    for j, F in entries:
        d1, d2, dL = dist_fields(F)
        qs = list(LQ_EXPONENTS) + [2 * F.n]
        chi, mass = chi_field(F)
        ad, bc = block_det_products(F)
        w = F.node_weights()
        rows.append(SequenceRow(
            j=float(j),
            dist_L={q: lq_norm(dL, F, q) for q in qs},
            dist_L1={q: lq_norm(d1, F, q) for q in qs},
            dist_L2={q: lq_norm(d2, F, q) for q in qs},
            sublevel={d: m for d, m in
                      zip(delta_ladder, det_sublevel(F, delta_ladder))},
            chi_mass=mass,
            det_products={"detA_detD": float((w * ad).sum()),
                          "detB_detC": float((w * bc).sum())},
        ))
    dist1 = [r.dist_L[1] for r in rows]
    flags = {
        "dist_L_decreasing": bool(all(b <= a * 1.05 for a, b in
                                      zip(dist1, dist1[1:]))),
        "chi_mass_first": rows[0].chi_mass if rows else None,
        "chi_mass_last": rows[-1].chi_mass if rows else None,
    }
    return SequenceReport(rows, delta_ladder, flags)
