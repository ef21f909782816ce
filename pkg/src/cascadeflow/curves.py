"""Circles embedded in 3-space and periodic trigonometric polynomials.

Critical circles of the catalog surfaces are round circles (center, axis,
radius); auxiliary Morse functions on them are low-harmonic trigonometric
polynomials of the circle parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(du):
    """Wrap an angle difference into (-pi, pi]."""
    return (du + np.pi) % TWO_PI - np.pi


def _frame_for_axis(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    seed = np.eye(3)[int(np.argmin(np.abs(axis)))]
    e1 = seed - (seed @ axis) * axis
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


@dataclass(frozen=True)
class CircleGeometry:
    """Round circle: center + radius * (cos u * e1 + sin u * e2)."""

    center: np.ndarray
    axis: np.ndarray  # unit normal of the circle's plane
    radius: float
    e1: np.ndarray = field(init=False)
    e2: np.ndarray = field(init=False)

    def __post_init__(self):
        ax = np.asarray(self.axis, dtype=float)
        ax = ax / np.linalg.norm(ax)
        e1, e2 = _frame_for_axis(ax)
        object.__setattr__(self, "axis", ax)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "e1", e1)
        object.__setattr__(self, "e2", e2)

    def point(self, u):
        u = np.asarray(u, dtype=float)
        return (self.center
                + self.radius * (np.cos(u)[..., None] * self.e1
                                 + np.sin(u)[..., None] * self.e2))

    def param(self, x) -> np.ndarray:
        d = np.asarray(x, dtype=float) - self.center
        return np.arctan2(d @ self.e2, d @ self.e1) % TWO_PI

    def distance(self, x) -> np.ndarray:
        """Euclidean distance from x to the circle."""
        d = np.asarray(x, dtype=float) - self.center
        h = d @ self.axis
        radial = d - h[..., None] * self.axis
        rho = np.linalg.norm(radial, axis=-1)
        return np.sqrt((rho - self.radius) ** 2 + h * h)

    def nearest_point(self, x) -> np.ndarray:
        return self.point(self.param(x))

    def tangent(self, u):
        u = np.asarray(u, dtype=float)
        return -np.sin(u)[..., None] * self.e1 + np.cos(u)[..., None] * self.e2

    def arc(self, u0: float, u1: float, spacing: float) -> np.ndarray:
        """Sample the arc from u0 to u1 (signed sweep, not wrapped) at roughly
        the given chordal spacing."""
        sweep = u1 - u0
        n = max(int(abs(sweep) * self.radius / max(spacing, 1e-12)) + 2, 2)
        return self.point(np.linspace(u0, u1, n))


@dataclass(frozen=True)
class TrigPolynomial:
    """f(u) = const + sum_k a_k cos(k u) + b_k sin(k u), k = 1..len(a)."""

    const: float
    cos_coeffs: tuple[float, ...] = ()
    sin_coeffs: tuple[float, ...] = ()

    def _orders(self):
        n = max(len(self.cos_coeffs), len(self.sin_coeffs))
        a = np.zeros(n)
        b = np.zeros(n)
        a[: len(self.cos_coeffs)] = self.cos_coeffs
        b[: len(self.sin_coeffs)] = self.sin_coeffs
        return np.arange(1, n + 1), a, b

    def value(self, u):
        u = np.asarray(u, dtype=float)
        k, a, b = self._orders()
        ku = np.multiply.outer(u, k)
        return self.const + np.cos(ku) @ a + np.sin(ku) @ b

    def deriv(self, u):
        u = np.asarray(u, dtype=float)
        k, a, b = self._orders()
        ku = np.multiply.outer(u, k)
        return -np.sin(ku) @ (k * a) + np.cos(ku) @ (k * b)

    def deriv2(self, u):
        u = np.asarray(u, dtype=float)
        k, a, b = self._orders()
        ku = np.multiply.outer(u, k)
        return -np.cos(ku) @ (k * k * a) - np.sin(ku) @ (k * k * b)

    def min_value(self, samples: int = 2048) -> float:
        return float(np.min(self.value(np.linspace(0, TWO_PI, samples, endpoint=False))))

    def critical_points(self, samples: int = 2048, tol: float = 1e-12) -> list[tuple[float, int]]:
        """Zeros of f' on [0, 2pi), Newton refined.

        Returns (u, morse_index) pairs sorted by u; morse_index is 1 for a
        local max, 0 for a local min.  Raises if a zero of f' is degenerate.
        """
        u = np.linspace(0, TWO_PI, samples, endpoint=False)
        d = self.deriv(u)
        crossings = np.nonzero(np.sign(d) != np.sign(np.roll(d, -1)))[0]
        out = []
        for i in crossings:
            lo, hi = u[i], u[i] + TWO_PI / samples
            x = 0.5 * (lo + hi)
            for _ in range(60):
                fp, fpp = float(self.deriv(x)), float(self.deriv2(x))
                if abs(fpp) < 1e-12:
                    raise ValueError("degenerate critical point of circle function")
                step = fp / fpp
                x -= step
                if abs(step) < tol:
                    break
            x %= TWO_PI
            if all(abs(wrap_angle(x - y)) > 1e-8 for y, _ in out):
                out.append((x, 1 if float(self.deriv2(x)) < 0 else 0))
        out.sort(key=lambda p: p[0])
        return out
