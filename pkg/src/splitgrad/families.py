"""Closed-form map families used as analyzer fixtures.

Every family carries a vectorized evaluation closure, an exact gradient
where available, its domain box, and a distance-to-singular-set closure so
grid diagnostics can exclude an O(h) neighborhood of creases.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import BadSlopesError


@dataclasses.dataclass
class MapFamily:
    """A map R^d -> R^d with optional exact gradient.

    f maps arrays of shape (..., d) to (..., d); grad returns (..., d, d).
    singular_distance returns a per-point distance to the singular set
    (None means the map is smooth everywhere).
    """

    name: str
    dim: int
    domain: Tuple[Tuple[float, float], ...]
    f: Callable[[np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    singular_distance: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: dict = dataclasses.field(default_factory=dict)


class PiecewiseLinear1D:
    """Scalar piecewise-linear function from a breakpoint table.

    Extends linearly beyond the first/last breakpoint with the end slopes.
    """

    def __init__(self, ts: Sequence[float], vs: Sequence[float]):
        ts = np.asarray(ts, float)
        vs = np.asarray(vs, float)
        if ts.ndim != 1 or ts.shape != vs.shape or len(ts) < 2:
            raise ValueError("need matching 1-d breakpoint/value arrays")
        if np.any(np.diff(ts) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        self.ts = ts
        self.vs = vs
        self.slopes = np.diff(vs) / np.diff(ts)

    def __call__(self, t):
        t = np.asarray(t, float)
        idx = np.clip(np.searchsorted(self.ts, t, side="right") - 1,
                      0, len(self.slopes) - 1)
        return self.vs[idx] + self.slopes[idx] * (t - self.ts[idx])

    def derivative(self, t):
        t = np.asarray(t, float)
        idx = np.clip(np.searchsorted(self.ts, t, side="right") - 1,
                      0, len(self.slopes) - 1)
        return self.slopes[idx]

    def interior_breakpoints(self) -> np.ndarray:
        """Breakpoints where the slope actually changes."""
        out = []
        for k in range(1, len(self.ts) - 1):
            if abs(self.slopes[k] - self.slopes[k - 1]) > 1e-12:
                out.append(self.ts[k])
        return np.array(out)


def folding_map(h: PiecewiseLinear1D,
                domain=((0.0, 1.0), (0.0, 1.0))) -> MapFamily:
    """Planar folding map built from a profile with slopes +-1.

    f(x, y) = ((x + y + h(x - y)) / 2, (x + y - h(x - y)) / 2); the a.e.
    gradient is the identity where h' = 1 and the swap where h' = -1, so the
    map is split only for constant h'.
    """
    if np.any(np.abs(np.abs(h.slopes) - 1.0) > 1e-12):
        raise BadSlopesError("profile slopes must all be +1 or -1")
    creases = h.interior_breakpoints()

    def f(pts):
        pts = np.asarray(pts, float)
        x, y = pts[..., 0], pts[..., 1]
        hv = h(x - y)
        return 0.5 * np.stack([x + y + hv, x + y - hv], axis=-1)

    def grad(pts):
        pts = np.asarray(pts, float)
        hp = h.derivative(pts[..., 0] - pts[..., 1])
        G = np.empty(pts.shape[:-1] + (2, 2))
        G[..., 0, 0] = 0.5 * (1 + hp)
        G[..., 0, 1] = 0.5 * (1 - hp)
        G[..., 1, 0] = 0.5 * (1 - hp)
        G[..., 1, 1] = 0.5 * (1 + hp)
        return G

    def singdist(pts):
        pts = np.asarray(pts, float)
        t = pts[..., 0] - pts[..., 1]
        if creases.size == 0:
            return np.full(t.shape, np.inf)
        # distance between lines x - y = c scales by 1/sqrt(2)
        return np.min(np.abs(t[..., None] - creases), axis=-1) / np.sqrt(2.0)

    return MapFamily("folding", 2, tuple(domain), f, grad, singdist,
                     params={"breakpoints": h.ts.tolist(),
                             "values": h.vs.tolist()})


def absolute_value_profile(extent: float = 4.0) -> PiecewiseLinear1D:
    return PiecewiseLinear1D([-extent, 0.0, extent], [extent, 0.0, extent])


def identity_profile(extent: float = 4.0) -> PiecewiseLinear1D:
    return PiecewiseLinear1D([-extent, extent], [-extent, extent])


def f_eps(eps: float, F: MapFamily) -> MapFamily:
    """Four-dimensional extension of a planar map F with determinant
    det(grad F) * 2 eps^2.

    Components: (F_1(x1, x3), eps (x2 - x4), F_2(x1, x3),
    eps (x2 + x4)).  For eps = 0 the gradient is split wherever grad F is,
    while the map itself inherits any non-splitness of F.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if F.dim != 2:
        raise ValueError("F must be planar")
    if F.grad is None:
        raise ValueError("F must provide an exact gradient")

    def planar_pts(pts):
        return np.stack([pts[..., 0], pts[..., 2]], axis=-1)

    def f(pts):
        pts = np.asarray(pts, float)
        Fv = F.f(planar_pts(pts))
        out = np.empty_like(pts)
        out[..., 0] = Fv[..., 0]
        out[..., 1] = eps * (pts[..., 1] - pts[..., 3])
        out[..., 2] = Fv[..., 1]
        out[..., 3] = eps * (pts[..., 1] + pts[..., 3])
        return out

    def grad(pts):
        pts = np.asarray(pts, float)
        GF = F.grad(planar_pts(pts))
        G = np.zeros(pts.shape[:-1] + (4, 4))
        G[..., 0, 0] = GF[..., 0, 0]
        G[..., 0, 2] = GF[..., 0, 1]
        G[..., 2, 0] = GF[..., 1, 0]
        G[..., 2, 2] = GF[..., 1, 1]
        G[..., 1, 1] = eps
        G[..., 1, 3] = -eps
        G[..., 3, 1] = eps
        G[..., 3, 3] = eps
        return G

    singdist = None
    if F.singular_distance is not None:
        def singdist(pts):
            return F.singular_distance(planar_pts(np.asarray(pts, float)))

    dom = (F.domain[0], (0.0, 1.0), F.domain[1], (0.0, 1.0))
    return MapFamily(f"f_eps({F.name})", 4, dom, f, grad, singdist,
                     params={"eps": eps, "planar": F.name})


def oscillation_family(j: int,
                       h: Callable, dh: Callable,
                       phi: Callable, dphi: Callable,
                       sup_h: float, sup_dphi: float) -> MapFamily:
    """Unit-determinant oscillation in the first component.

    f(x) = (x1 + h(j x2) phi(x3) / j, x2, x3, x4).  The only off-split
    gradient entries are h'(j x2) phi(x3) and h(j x2) phi'(x3) / j, so the
    distance to the split cone is at most sup|h| sup|phi'| / j.
    """
    if j < 1:
        raise ValueError("j must be >= 1")

    def f(pts):
        pts = np.asarray(pts, float)
        out = pts.copy()
        out[..., 0] = pts[..., 0] + h(j * pts[..., 1]) * phi(pts[..., 2]) / j
        return out

    def grad(pts):
        pts = np.asarray(pts, float)
        G = np.zeros(pts.shape[:-1] + (4, 4))
        for i in range(4):
            G[..., i, i] = 1.0
        G[..., 0, 1] = dh(j * pts[..., 1]) * phi(pts[..., 2])
        G[..., 0, 2] = h(j * pts[..., 1]) * dphi(pts[..., 2]) / j
        return G

    dom = tuple((0.0, 1.0) for _ in range(4))
    return MapFamily(f"oscillation(j={j})", 4, dom, f, grad, None,
                     params={"j": j, "dist_bound": sup_h * sup_dphi / j})


def default_oscillation(j: int) -> MapFamily:
    """The oscillation family with h = sin(2 pi .)/(2 pi) and phi = id."""
    two_pi = 2.0 * np.pi
    return oscillation_family(
        j,
        h=lambda t: np.sin(two_pi * t) / two_pi,
        dh=lambda t: np.cos(two_pi * t),
        phi=lambda t: np.asarray(t, float),
        dphi=lambda t: np.ones_like(np.asarray(t, float)),
        sup_h=1.0 / two_pi,
        sup_dphi=1.0,
    )


def shear_composition(phi: Callable, dphi: Callable,
                      psi: Callable, dpsi: Callable,
                      domain=((0.0, 1.0), (0.0, 1.0))) -> MapFamily:
    """Composition of two unit shears; det grad = 1 identically.

    f(x, y) = (x + phi(y), y + psi(x + phi(y))).
    """
    def f(pts):
        pts = np.asarray(pts, float)
        u = pts[..., 0] + phi(pts[..., 1])
        return np.stack([u, pts[..., 1] + psi(u)], axis=-1)

    def grad(pts):
        pts = np.asarray(pts, float)
        y = pts[..., 1]
        u = pts[..., 0] + phi(y)
        dps = dpsi(u)
        dph = dphi(y)
        G = np.empty(pts.shape[:-1] + (2, 2))
        G[..., 0, 0] = 1.0
        G[..., 0, 1] = dph
        G[..., 1, 0] = dps
        G[..., 1, 1] = 1.0 + dps * dph
        return G

    return MapFamily("shear_composition", 2, tuple(domain), f, grad, None)


def default_shear() -> MapFamily:
    """shear_composition(sin, cos) used by the lift diagnostics."""
    return shear_composition(np.sin, np.cos, np.cos,
                             lambda u: -np.sin(u))


def planar_scaling(sx: float, sy: float) -> MapFamily:
    """Linear diagonal scaling; area-preserving only when sx * sy = 1."""
    def f(pts):
        pts = np.asarray(pts, float)
        return np.stack([sx * pts[..., 0], sy * pts[..., 1]], axis=-1)

    def grad(pts):
        pts = np.asarray(pts, float)
        G = np.zeros(pts.shape[:-1] + (2, 2))
        G[..., 0, 0] = sx
        G[..., 1, 1] = sy
        return G

    return MapFamily(f"scaling({sx},{sy})", 2,
                     ((0.0, 1.0), (0.0, 1.0)), f, grad, None,
                     params={"sx": sx, "sy": sy})


def planar_rotation(angle: float) -> MapFamily:
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s], [s, c]])

    def f(pts):
        return np.asarray(pts, float) @ R.T

    def grad(pts):
        pts = np.asarray(pts, float)
        return np.broadcast_to(R, pts.shape[:-1] + (2, 2)).copy()

    return MapFamily(f"rotation({angle})", 2,
                     ((0.0, 1.0), (0.0, 1.0)), f, grad, None,
                     params={"angle": angle})


def identity_family(dim: int = 2) -> MapFamily:
    def f(pts):
        return np.asarray(pts, float).copy()

    def grad(pts):
        pts = np.asarray(pts, float)
        G = np.zeros(pts.shape[:-1] + (dim, dim))
        for i in range(dim):
            G[..., i, i] = 1.0
        return G

    return MapFamily("identity", dim,
                     tuple((0.0, 1.0) for _ in range(dim)), f, grad, None)
