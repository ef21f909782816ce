"""Implicit surfaces in 3-space with the metric induced from the Euclidean ambient.

A surface is the zero level set of a smooth scalar function F with nonvanishing
gradient on the level set.  All vector calculus on the surface (tangential
gradients, tangential Hessians) is done in ambient coordinates: tangent vectors
are 3-vectors orthogonal to grad F, and scalar fields live on all of 3-space
and are restricted to the surface.

Every function here is vectorized over a leading batch axis: points are arrays
of shape (..., 3).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

PROJECTION_TOL = 1e-10
PROJECTION_MAX_ITER = 50


class NoConvergence(Exception):
    """Newton projection onto the surface failed to converge."""


@dataclass(frozen=True)
class SurfaceModel:
    """An implicit surface {F = 0} with bounding box and a curvature scale.

    feature_scale is the smallest radius of curvature of the surface (the tube
    radius for a torus, the radius for a sphere); finite-difference steps are
    taken relative to it.
    """

    name: str
    implicit_function: Callable[[np.ndarray], np.ndarray]
    implicit_gradient: Callable[[np.ndarray], np.ndarray]
    bounding_box: np.ndarray  # (2, 3): [mins, maxs]
    feature_scale: float

    def diameter(self) -> float:
        lo, hi = self.bounding_box
        return float(np.linalg.norm(hi - lo))

    def in_bounding_box(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.bounding_box
        return np.all((x >= lo) & (x <= hi), axis=-1)


@dataclass(frozen=True)
class SurfacePoint:
    """A point on (numerically: very near) the surface."""

    coordinates: np.ndarray
    residual: float


@dataclass(frozen=True)
class ScalarField:
    """Ambient scalar field with an analytic ambient gradient."""

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    ambient_gradient: Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# surface catalog: sphere and torus of revolution (arbitrary axis)
# ---------------------------------------------------------------------------

def sphere(radius: float = 1.0) -> SurfaceModel:
    r2 = radius * radius

    def F(x):
        return np.sum(x * x, axis=-1) - r2

    def dF(x):
        return 2.0 * x

    box = np.array([[-1.5, -1.5, -1.5], [1.5, 1.5, 1.5]]) * radius
    return SurfaceModel("sphere", F, dF, box, feature_scale=radius)


def torus(ring_radius: float, tube_radius: float,
          axis: tuple[float, float, float] = (0.0, 0.0, 1.0)) -> SurfaceModel:
    """Torus of revolution about an axis through the origin.

    With a = <x, axis> and rho the distance from x to the axis, the surface is
    (rho - R)^2 + a^2 = r^2.  The gradient is singular on the axis (rho = 0);
    projection from axis points raises NoConvergence.
    """
    R, r = float(ring_radius), float(tube_radius)
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)

    def F(x):
        a = x @ n
        rho = np.sqrt(np.maximum(np.sum(x * x, axis=-1) - a * a, 0.0))
        return (rho - R) ** 2 + a * a - r * r

    def dF(x):
        a = x @ n
        radial = x - a[..., None] * n
        rho = np.linalg.norm(radial, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            rad_hat = radial / rho[..., None]
        g = 2.0 * (rho - R)[..., None] * rad_hat + 2.0 * a[..., None] * n
        return g

    half = R + r + 0.5 * r
    box = np.array([[-half, -half, -half], [half, half, half]])
    return SurfaceModel(f"torus(R={R},r={r})", F, dF, box, feature_scale=r)


# ---------------------------------------------------------------------------
# projection and tangential calculus
# ---------------------------------------------------------------------------

def project_batch(surface: SurfaceModel, x: np.ndarray,
                  tol: float = PROJECTION_TOL,
                  max_iter: int = PROJECTION_MAX_ITER) -> np.ndarray:
    """Newton-project points onto the surface along grad F.

    Returns the projected array; rows that fail to converge come back as NaN.
    """
    y = np.array(x, dtype=float)
    flat = y.reshape(-1, 3)
    for _ in range(max_iter):
        f = surface.implicit_function(flat)
        active = np.abs(f) >= tol
        if not np.any(active):
            break
        g = surface.implicit_gradient(flat[active])
        gg = np.sum(g * g, axis=-1)
        bad = ~np.isfinite(gg) | (gg < 1e-16)
        step = np.where(bad[:, None], np.nan, (f[active] / np.where(gg > 0, gg, 1.0))[:, None] * g)
        flat[active] = flat[active] - step
    f = surface.implicit_function(flat)
    ok = np.isfinite(f) & (np.abs(f) < tol)
    flat[~ok] = np.nan
    return flat.reshape(y.shape)


def project(surface: SurfaceModel, x, tol: float = PROJECTION_TOL,
            max_iter: int = PROJECTION_MAX_ITER) -> SurfacePoint:
    """Project a single point; raises NoConvergence if Newton fails."""
    y = project_batch(surface, np.asarray(x, dtype=float), tol, max_iter)
    if not np.all(np.isfinite(y)):
        raise NoConvergence(f"projection onto {surface.name} failed from {x}")
    res = float(abs(surface.implicit_function(y)))
    return SurfacePoint(y, res)


def unit_normal(surface: SurfaceModel, x: np.ndarray) -> np.ndarray:
    g = surface.implicit_gradient(x)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def tangential_gradient(surface: SurfaceModel, field: ScalarField,
                        x: np.ndarray) -> np.ndarray:
    """Gradient of field restricted to the surface: ambient gradient minus
    its component along the surface normal."""
    g = field.ambient_gradient(x)
    n = unit_normal(surface, x)
    return g - np.sum(g * n, axis=-1, keepdims=True) * n


def tangent_basis(surface: SurfaceModel, x: np.ndarray,
                  rotate: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangent frame (t1, t2) with (t1, t2, n) right
    handed.  `rotate` spins the frame in the tangent plane (used to test frame
    invariance)."""
    n = unit_normal(surface, x)
    # seed with the coordinate axis least aligned with n
    seed = np.eye(3)[np.argmin(np.abs(n), axis=-1)]
    t1 = seed - np.sum(seed * n, axis=-1, keepdims=True) * n
    t1 = t1 / np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(n, t1)
    if rotate:
        c, s = np.cos(rotate), np.sin(rotate)
        t1, t2 = c * t1 + s * t2, -s * t1 + c * t2
    return t1, t2


def tangential_hessian(surface: SurfaceModel, field: ScalarField, x,
                       rotate: float = 0.0,
                       step: float | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Second-order central differences of the projected restriction of the
    field, in an orthonormal tangent frame.

    Returns (H, t1, t2) with H the symmetric 2x2 matrix of the surface Hessian
    at x in the frame (t1, t2).  At critical points of the restriction this is
    the intrinsic Hessian.
    """
    p = np.asarray(x, dtype=float)
    h = step if step is not None else 1e-4 * surface.feature_scale
    t1, t2 = tangent_basis(surface, p, rotate=rotate)

    def fval(a, b):
        q = project_batch(surface, p + a * h * t1 + b * h * t2)
        return float(field.value(q))

    f0 = fval(0, 0)
    fpp, fmm = fval(1, 1), fval(-1, -1)
    fpm, fmp = fval(1, -1), fval(-1, 1)
    fp0, fm0 = fval(1, 0), fval(-1, 0)
    f0p, f0m = fval(0, 1), fval(0, -1)

    h11 = (fp0 - 2 * f0 + fm0) / (h * h)
    h22 = (f0p - 2 * f0 + f0m) / (h * h)
    h12 = (fpp - fpm - fmp + fmm) / (4 * h * h)
    H = np.array([[h11, h12], [h12, h22]])
    return 0.5 * (H + H.T), t1, t2


def hessian_index(H: np.ndarray, tol: float | None = None) -> int:
    """Number of negative eigenvalues, with a relative degeneracy tolerance."""
    w = np.linalg.eigvalsh(H)
    scale = max(np.max(np.abs(w)), 1e-300)
    cut = (1e-8 * scale) if tol is None else tol
    return int(np.sum(w < -cut))


def second_derivative_along(surface: SurfaceModel, field: ScalarField, x,
                            direction: np.ndarray,
                            step: float | None = None) -> float:
    """Second derivative of the projected restriction along one unit tangent
    direction (used for the normal Hessian of critical circles)."""
    p = np.asarray(x, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    h = step if step is not None else 1e-4 * surface.feature_scale
    qp = project_batch(surface, p + h * d)
    qm = project_batch(surface, p - h * d)
    return float((field.value(qp) - 2.0 * field.value(p) + field.value(qm)) / (h * h))
