"""Heisenberg group arithmetic and lifts of area-preserving planar maps.

Coordinates (x1, x2, x3) multiply by x * y = (x1 + y1, x2 + y2,
x3 + y3 + x1 y2); the contact form is theta3 = dx3 - x1 dx2.  A planar map
h lifts naively to hhat(x) = (h(x1, x2), x3), which pulls theta3 back to
theta3 + pi^* alpha with

    alpha = x1 dx2 - h1 dh2,
    d alpha = (1 - det grad h) dx1 ^ dx2.

For area-preserving h the form alpha is closed; integrating a potential u
with du = -alpha and shearing vertically by u yields a lift preserving
theta3 exactly in the continuum and to quadrature accuracy on a grid.
The explicit coefficient formula for alpha is derived here, not quoted,
and is validated against the generic pullback routine in the tests.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import (NotAreaPreservingError, NotClosedError,
                     NotDifferentiableHereError)
from .families import MapFamily


def group_mul(x, y) -> np.ndarray:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    out = x + y
    out = np.array(out, float)
    out[..., 2] = x[..., 2] + y[..., 2] + x[..., 0] * y[..., 1]
    return out


def group_inv(x) -> np.ndarray:
    x = np.asarray(x, float)
    out = -x.copy()
    out[..., 2] = -x[..., 2] + x[..., 0] * x[..., 1]
    return out


def theta3_coeffs(x) -> np.ndarray:
    """Coefficients (w.r.t. dx1, dx2, dx3) of theta3 at x."""
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    out[..., 1] = -x[..., 0]
    out[..., 2] = 1.0
    return out


def theta3_pullback(F: Callable, J: Callable, x) -> np.ndarray:
    """Coefficients of F^* theta3 = dF3 - F1 dF2 at x, from the Jacobian."""
    x = np.asarray(x, float)
    Fv = np.asarray(F(x), float)
    Jv = np.asarray(J(x), float)
    return Jv[..., 2, :] - Fv[..., 0, None] * Jv[..., 1, :]


# ---------------------------------------------------------------------------
# the planar one-form alpha and its potential

@dataclasses.dataclass
class OneForm2:
    """Coefficients p dx1 + q dx2 sampled on a planar tensor grid."""

    xs: np.ndarray
    ys: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        if self.p.shape != (len(self.xs), len(self.ys)) \
                or self.q.shape != self.p.shape:
            raise ValueError("coefficient grids do not match the axes")


def planar_grid(fam: MapFamily, m: int) -> Tuple[np.ndarray, np.ndarray]:
    (x0, x1), (y0, y1) = fam.domain
    return np.linspace(x0, x1, m), np.linspace(y0, y1, m)


def alpha_of(h: MapFamily, xs: np.ndarray, ys: np.ndarray) -> OneForm2:
    """alpha = x1 dx2 - h1 dh2 sampled on the grid (exact gradient of h)."""
    if h.grad is None:
        raise ValueError("h must provide an exact gradient")
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X, Y], axis=-1)
    hv = h.f(pts)
    G = h.grad(pts)
    p = -hv[..., 0] * G[..., 1, 0]
    q = X - hv[..., 0] * G[..., 1, 1]
    return OneForm2(xs, ys, p, q)


def closedness_residual(alpha: OneForm2) -> float:
    """Max |d alpha| over interior cells: central-difference curl
    d1 q - d2 p."""
    dq_dx = np.gradient(alpha.q, alpha.xs, axis=0, edge_order=2)
    dp_dy = np.gradient(alpha.p, alpha.ys, axis=1, edge_order=2)
    curl = dq_dx - dp_dy
    return float(np.abs(curl[1:-1, 1:-1]).max())


def _cumtrapz(vals: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    dv = np.diff(coords)
    shape = [1] * vals.ndim
    shape[axis] = len(dv)
    dv = dv.reshape(shape)
    pair = (np.take(vals, range(1, vals.shape[axis]), axis=axis)
            + np.take(vals, range(0, vals.shape[axis] - 1), axis=axis))
    inc = 0.5 * pair * dv
    out = np.zeros_like(vals)
    idx = [slice(None)] * vals.ndim
    idx[axis] = slice(1, None)
    out[tuple(idx)] = np.cumsum(inc, axis=axis)
    return out


def potential(alpha: OneForm2, basepoint: Tuple[int, int] = (0, 0),
              closed_tol: float = 0.05) -> Tuple[np.ndarray, float]:
    """Grid potential u with du = -alpha, u(basepoint) = 0.

    Both axis orders are integrated from the grid origin; their maximum
    difference is the reported path-independence residual.  The basepoint
    only shifts u by a constant, so lifts from different basepoints differ
    by an exact constant.  Raises NotClosedError when the discrete curl
    exceeds closed_tol.
    """
    res = closedness_residual(alpha)
    if res > closed_tol:
        raise NotClosedError(
            f"closedness residual {res:.3e} exceeds {closed_tol:.3e}")
    Ux = _cumtrapz(-alpha.p, alpha.xs, axis=0)   # along x1 at y = y0
    U1 = Ux[:, :1] + _cumtrapz(-alpha.q, alpha.ys, axis=1)
    Uy = _cumtrapz(-alpha.q, alpha.ys, axis=1)   # along x2 at x = x0
    U2 = Uy[:1, :] + _cumtrapz(-alpha.p, alpha.xs, axis=0)
    path_residual = float(np.abs(U1 - U2).max())
    i, j = basepoint
    u = U1 - U1[i, j]
    return u, path_residual


# ---------------------------------------------------------------------------
# the lift and its diagnostics

@dataclasses.dataclass
class Lift:
    """Assembled lift fhat(x1,x2,x3) = (f(x1,x2), x3 + u(x1,x2))."""

    planar: MapFamily
    xs: np.ndarray
    ys: np.ndarray
    u: np.ndarray
    alpha: OneForm2
    theta3_residual: float
    path_residual: float
    closedness: float

    def u_interp(self, x, y) -> np.ndarray:
        """Bilinear interpolation of the potential."""
        xs, ys = self.xs, self.ys
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        i = np.clip(np.searchsorted(xs, x) - 1, 0, len(xs) - 2)
        j = np.clip(np.searchsorted(ys, y) - 1, 0, len(ys) - 2)
        tx = (x - xs[i]) / (xs[i + 1] - xs[i])
        ty = (y - ys[j]) / (ys[j + 1] - ys[j])
        u = self.u
        return ((1 - tx) * (1 - ty) * u[i, j] + tx * (1 - ty) * u[i + 1, j]
                + (1 - tx) * ty * u[i, j + 1] + tx * ty * u[i + 1, j + 1])

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float)
        fv = self.planar.f(pts[..., :2])
        x3 = pts[..., 2] + self.u_interp(pts[..., 0], pts[..., 1])
        return np.concatenate([fv, x3[..., None]], axis=-1)

    def diagnostics(self) -> dict:
        return {
            "theta3_residual": self.theta3_residual,
            "path_residual": self.path_residual,
            "closedness_residual": self.closedness,
            "grid": [len(self.xs), len(self.ys)],
        }


def lift(fam: MapFamily, m: int = 256,
         basepoint: Tuple[int, int] = (0, 0),
         det_tol: float = 1e-8) -> Lift:
    """Lift an area-preserving planar family over an m x m grid.

    Fiber preservation (pi o fhat = f o pi) and equivariance under vertical
    translation hold exactly by construction (x3 enters additively); the
    theta3 residual max |du + alpha| over interior nodes is the quadrature
    error of the potential and is reported for refinement studies.
    """
    if fam.grad is None:
        raise ValueError("family must provide an exact gradient")
    xs, ys = planar_grid(fam, m)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    dets = np.linalg.det(fam.grad(np.stack([X, Y], axis=-1)))
    worst = float(np.abs(dets - 1.0).max())
    if worst > det_tol:
        raise NotAreaPreservingError(
            f"max |det grad f - 1| = {worst:.3e}")
    form = alpha_of(fam, xs, ys)
    closed = closedness_residual(form)
    u, path_res = potential(form, basepoint)
    du_dx = np.gradient(u, xs, axis=0, edge_order=2)
    du_dy = np.gradient(u, ys, axis=1, edge_order=2)
    rx = du_dx + form.p
    ry = du_dy + form.q
    theta_res = float(np.sqrt(rx[1:-1, 1:-1] ** 2
                              + ry[1:-1, 1:-1] ** 2).max())
    return Lift(fam, xs, ys, u, form, theta_res, path_res, closed)


def pansu_block_check(lft: Lift, pts3, fd_step: float = 1e-5,
                      sing_margin: Optional[float] = None) -> dict:
    """Finite-difference block structure of the lift at given 3-points.

    Verifies that the differential maps the horizontal plane to itself
    (no dx3 dependence in the first two components), fixes the vertical
    direction, and that its horizontal block equals grad f at the base
    point.  Points too close to the declared singular set raise
    NotDifferentiableHereError.
    """
    pts3 = np.atleast_2d(np.asarray(pts3, float))
    fam = lft.planar
    if fam.singular_distance is not None:
        margin = sing_margin if sing_margin is not None else 10 * fd_step
        d = fam.singular_distance(pts3[:, :2])
        if np.any(d <= margin):
            raise NotDifferentiableHereError(
                "a query point is within the singular margin")
    h = fd_step
    J = np.empty((len(pts3), 3, 3))
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        J[:, :, axis] = (lft(pts3 + e) - lft(pts3 - e)) / (2 * h)
    G = fam.grad(pts3[:, :2])
    horiz_err = float(np.abs(J[:, :2, :2] - G).max())
    v1_leak = float(np.abs(J[:, :2, 2]).max())
    v2_fix = float(np.abs(J[:, 2, 2] - 1.0).max())
    # v1/v2 leakage is zero in exact arithmetic (x3 enters additively);
    # the tolerance covers central-difference cancellation only
    return {
        "horizontal_block_error": horiz_err,
        "v1_preservation_error": v1_leak,
        "v2_fix_error": v2_fix,
        "ok": bool(horiz_err < 1e-8 and v1_leak < 1e-9
                   and v2_fix < 1e-9),
    }


def lift_to_json_dict(lft: Lift) -> dict:
    return {
        "schema_version": 1,
        "type": "heisenberg_lift",
        "planar_family": lft.planar.name,
        "grid_x": lft.xs.tolist(),
        "grid_y": lft.ys.tolist(),
        "u": lft.u.tolist(),
        "diagnostics": lft.diagnostics(),
    }


def diagnostics_csv(rows: Sequence[dict]) -> str:
    import io
    keys = sorted({k for r in rows for k in r})
    buf = io.StringIO()
    buf.write(",".join(keys) + "\r\n")
    for r in rows:
        buf.write(",".join(repr(r[k]) if isinstance(r.get(k), float)
                           else str(r.get(k, "")) for k in keys) + "\r\n")
    return buf.getvalue()
