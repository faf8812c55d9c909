"""Shared oracles for the test suite.

All reference values are produced by code paths independent of the library
internals they check: dense tensor quadrature, closed-form Gaussian algebra,
and finite differences.
"""

import numpy as np
import pytest

from kolmodens.model import PhasePoint
from kolmodens.proxy import frozen_density_batch
from kolmodens.quadrature import gauss_legendre


def kolmogorov_covariance(t, scale=1.0):
    """Closed-form pair covariance scale^2 * [[t, t^2/2], [t^2/2, t^3/3]]."""
    return scale**2 * np.array([[t, t * t / 2.0], [t * t / 2.0, t**3 / 3.0]])


def gaussian2(point, mean, cov):
    """Reference bivariate normal density (independent of library code)."""
    diff = np.asarray(point, dtype=float) - np.asarray(mean, dtype=float)
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    quad = (cov[1, 1] * diff[..., 0] ** 2 - 2 * cov[0, 1] * diff[..., 0] * diff[..., 1]
            + cov[0, 0] * diff[..., 1] ** 2) / det
    return np.exp(-0.5 * quad) / (2.0 * np.pi * np.sqrt(det))


def tensor_integral(fn, x_lo, x_hi, y_lo, y_hi, n=160):
    """2-d tensor Gauss-Legendre integral of fn over a box."""
    gx, wx = gauss_legendre(n, x_lo, x_hi)
    gy, wy = gauss_legendre(n, y_lo, y_hi)
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)
    vals = np.asarray(fn(pts)).reshape(n, n)
    return float(np.einsum("i,j,ij->", wx, wy, vals))


def central_difference(fn, order_x, order_y, x0, y0, h):
    """Mixed central difference of a scalar function of (x, y).

    Builds the tensor stencil of two composed central-difference operators;
    fn is called once on the full stencil batch.
    """

    def stencil(order):
        # coefficients of the composed central difference, step 1: the array
        # index k carries the coefficient of f(x + (k - order) h)
        c = np.array([1.0])
        for _ in range(order):
            c = (np.concatenate([[0.0, 0.0], c]) - np.concatenate([c, [0.0, 0.0]])) / 2.0
        offsets = np.arange(-order, order + 1, dtype=float)
        return offsets, c

    ox, cx = stencil(order_x)
    oy, cy = stencil(order_y)
    xs = x0 + h * ox
    ys = y0 + h * oy
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    vals = fn(xx.ravel(), yy.ravel()).reshape(xx.shape)
    return float(np.einsum("i,j,ij->", cx, cy, vals)) / h ** (order_x + order_y)


def richardson_derivative(fn, order_x, order_y, x0, y0, h):
    """Twice Richardson-extrapolated central difference (error O(h^6))."""
    d1 = central_difference(fn, order_x, order_y, x0, y0, h)
    d2 = central_difference(fn, order_x, order_y, x0, y0, h / 2.0)
    d3 = central_difference(fn, order_x, order_y, x0, y0, h / 4.0)
    r1 = (4.0 * d2 - d1) / 3.0
    r2 = (4.0 * d3 - d2) / 3.0
    return (16.0 * r2 - r1) / 15.0


def frozen_density_fn(field, t, to):
    """Scalar (x, y) -> p_tilde(t, (x, y), to) for d = 1, batch-vectorized."""
    to_v = to.vector if isinstance(to, PhasePoint) else np.asarray(to, float)

    def fn(xs, ys):
        frm = np.stack([np.asarray(xs, float), np.asarray(ys, float)], axis=-1)
        to_b = np.broadcast_to(to_v, frm.shape)
        return frozen_density_batch(field, t, frm, to_b)

    return fn


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
