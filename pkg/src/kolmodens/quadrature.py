"""Quadrature primitives: Gauss-Legendre panels and singular-endpoint time rules.

The time-space convolution of the parametrix series integrates functions that
blow up like (t-u)^(beta-1) at the right endpoint and may carry half-power
kinks (u^(1/2), u^gamma, ...) at the left endpoint.  Instead of adaptive
machinery we use fixed power-law substitutions that absorb those endpoint
behaviours, after which plain Gauss-Legendre behaves like a smooth rule.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre


@lru_cache(maxsize=64)
def _gl_cache(n: int):
    x, w = roots_legendre(n)
    return x, w


def gauss_legendre(n: int, a: float = 0.0, b: float = 1.0):
    """Nodes and weights of the n-point Gauss-Legendre rule on [a, b]."""
    if n < 1:
        raise ValueError(f"need at least one node, got {n}")
    x, w = _gl_cache(int(n))
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def singular_time_rule(t: float, beta: float, n: int):
    """Nodes/weights for integrals over [0, t] whose integrand behaves like
    (t-u)^(beta-1) * S(t-u) near u = t, with S smooth in sqrt(t-u).

    Two panels are used.  On [t/2, t] the substitution t-u = (t/2) v^(1/beta)
    turns the weight into a bounded factor (half powers of t-u become
    polynomial in v whenever 1/(2 beta) is an integer, and stay mild
    otherwise).  On [0, t/2] the substitution u = (t/2) w^2 removes u^(1/2)
    kinks that iterated convolutions produce at the left endpoint.

    Returns (u, tau, w) with tau the time-to-go t - u carried separately:
    recomputing t - u from the returned u would cancel catastrophically at
    the clustered right-panel nodes, so integrands must use the given tau.
    sum(w * f(u, tau)) ~ integral of the raw integrand; weights include the
    Jacobians.  n is the node count per panel.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    if t <= 0.0:
        raise ValueError(f"horizon must be positive, got {t}")
    half = 0.5 * t

    # left panel: u = half * s^2
    s, ws = gauss_legendre(n, 0.0, 1.0)
    u_left = half * s * s
    tau_left = t - u_left
    w_left = ws * half * 2.0 * s

    # right panel: tau = half * v^(1/beta)
    v, wv = gauss_legendre(n, 0.0, 1.0)
    inv_b = 1.0 / beta
    tau_right = half * v**inv_b
    u_right = t - tau_right
    w_right = wv * half * inv_b * v ** (inv_b - 1.0)

    u = np.concatenate([u_left, u_right])
    tau = np.concatenate([tau_left, tau_right])
    w = np.concatenate([w_left, w_right])
    return u, tau, w


@lru_cache(maxsize=64)
def _hermite_cache(n: int):
    # probabilists' weight exp(-x^2/2); normalize so weights sum to 1
    from scipy.special import roots_hermitenorm

    x, w = roots_hermitenorm(n)
    return x, w / np.sqrt(2.0 * np.pi)


def gauss_hermite_pair(n: int):
    """Tensor rule for E[f(Z1, Z2)] with Z ~ N(0, I_2).

    Returns (nodes, weights) with nodes of shape (n*n, 2) and weights summing
    to one; exact for polynomials of degree < 2n in each variable.
    """
    if n < 1:
        raise ValueError(f"need at least one node, got {n}")
    x, w = _hermite_cache(int(n))
    xx, yy = np.meshgrid(x, x, indexing="ij")
    nodes = np.stack([xx.ravel(), yy.ravel()], axis=-1)
    weights = np.outer(w, w).ravel()
    return nodes, weights


def tensor_grid_2d(x_axis, y_axis):
    """Flattened tensor product of two axes: shape (nx*ny, 2), x-major."""
    xx, yy = np.meshgrid(np.asarray(x_axis), np.asarray(y_axis), indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=-1)
