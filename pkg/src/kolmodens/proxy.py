"""Closed-form Gaussian machinery for the degenerate pair (x, y).

Two densities live here.  The comparison density ``p_hat`` is the explicit
transition density of the pair (x + sqrt(2/c) W_t, y + integral of the first
component); it has the exact semigroup (Chapman-Kolmogorov) property and the
characteristic multiscale spread t^(1/2) in x, t^(3/2) in y.  The frozen
density ``p_tilde`` is the Gaussian law of the proxy process whose diffusion
coefficient is evaluated along the backward transport (x', y' - x' s) of the
terminal point; its covariance is a one-dimensional quadrature in time and its
spatial derivatives up to order four are computed analytically through the
Gaussian's Hermite structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError
from .model import CoefficientField, PhasePoint
from .quadrature import gauss_legendre

#: fixed Gauss-Legendre order for the covariance time integral; the integrand
#: is a polynomial-in-time transport of the (Holder) diffusion coefficient, so
#: a fixed smooth rule suffices.
COVARIANCE_GL_ORDER = 32

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ProxyParams:
    """Concentration constant and dimension of the comparison density."""

    c: float
    d: int = 1

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"concentration constant must be positive, got {self.c}")
        if self.d < 1:
            raise ValueError("dimension must be at least 1")


@dataclass(frozen=True)
class ResolventMatrix:
    """Block matrix [[I, 0], [s I, I]] propagating (x, y) -> (x, y + s x)."""

    s: float
    d: int
    entries: np.ndarray

    def __matmul__(self, other: "ResolventMatrix") -> "ResolventMatrix":
        if self.d != other.d:
            raise ValueError("dimension mismatch")
        return ResolventMatrix(self.s + other.s, self.d, self.entries @ other.entries)


@dataclass(frozen=True)
class FrozenCovariance:
    t: float
    freeze_point: PhasePoint
    entries: np.ndarray


def resolvent(s: float, d: int = 1) -> ResolventMatrix:
    """The flow matrix of the deterministic pair dynamics over a lag s."""
    if not math.isfinite(s):
        raise ValueError(f"lag must be finite, got {s}")
    m = np.eye(2 * d)
    m[d:, :d] = s * np.eye(d)
    return ResolventMatrix(float(s), d, m)


# ---------------------------------------------------------------------------
# comparison density p_hat
# ---------------------------------------------------------------------------

def proxy_log_density(c: float, d: int, t, frm, to):
    """log p_hat with broadcasting; frm/to have trailing dimension 2d."""
    frm = np.asarray(frm, dtype=float)
    to = np.asarray(to, dtype=float)
    t = np.asarray(t, dtype=float)
    x, y = frm[..., :d], frm[..., d:]
    xp, yp = to[..., :d], to[..., d:]
    dx2 = np.sum((xp - x) ** 2, axis=-1)
    dy = yp - y - 0.5 * (x + xp) * t[..., None]
    dy2 = np.sum(dy**2, axis=-1)
    log_norm = d * (math.log(c) + 0.5 * math.log(3.0)) - d * (LOG_2PI + 2.0 * np.log(t))
    return log_norm - c * (0.25 * dx2 / t + 3.0 * dy2 / t**3)


def proxy_density(c: float, d: int, t, frm, to):
    return np.exp(proxy_log_density(c, d, t, frm, to))


def kolmogorov_proxy_density(params: ProxyParams, t: float, frm: PhasePoint, to: PhasePoint) -> float:
    """Comparison density p_hat at horizon t between two phase points."""
    if t <= 0:
        raise ValueError(f"horizon must be positive, got {t}")
    return float(proxy_density(params.c, params.d, t, frm.vector, to.vector))


def proxy_mean(d: int, t: float, frm) -> np.ndarray:
    """Mode/mean of p_hat(t, frm, .): the free transport (x, y + x t)."""
    frm = np.asarray(frm, dtype=float)
    out = frm.copy()
    out[..., d:] += t * frm[..., :d]
    return out


def proxy_pair_covariance(c: float, t: float) -> np.ndarray:
    """Per-coordinate 2x2 covariance of p_hat: (2/c) [[t, t^2/2], [t^2/2, t^3/3]]."""
    return (2.0 / c) * np.array([[t, t * t / 2.0], [t * t / 2.0, t**3 / 3.0]])


# ---------------------------------------------------------------------------
# frozen covariance and density
# ---------------------------------------------------------------------------

def covariance_batch(field: CoefficientField, tau, freeze, gl_order: int = COVARIANCE_GL_ORDER):
    """C_tau for a batch of freeze points (N, 2d); tau scalar or (N,).

    C_tau integrates the block [[a, s a], [s a, s^2 a]] with the diffusion
    matrix a evaluated at the transported point (x', y' - x' s), s in [0, tau].
    For spatially constant sigma the polynomial integral is taken in closed
    form (the fixed-order rule would reproduce it exactly).
    """
    freeze = np.asarray(freeze, dtype=float)
    single = freeze.ndim == 1
    if single:
        freeze = freeze[None, :]
    d = field.d
    n = freeze.shape[0]
    tau_arr = np.broadcast_to(np.asarray(tau, dtype=float), (n,))
    if np.any(tau_arr <= 0):
        raise ValueError("horizon must be positive")

    out = np.empty((n, 2 * d, 2 * d))
    if field.sigma_constant:
        a0 = field.a(freeze[:1])[0]                           # (d, d)
        t1 = tau_arr[:, None, None]
        out[:, :d, :d] = a0 * t1
        out[:, :d, d:] = a0 * (t1 * t1 / 2.0)
        out[:, d:, :d] = out[:, :d, d:]
        out[:, d:, d:] = a0 * (t1 * t1 * t1 / 3.0)
        return out[0] if single else out

    base, wts = gauss_legendre(gl_order, 0.0, 1.0)
    s = tau_arr[:, None] * base[None, :]                      # (N, K)
    xp = freeze[:, None, :d]                                  # (N, 1, d)
    yp = freeze[:, None, d:]
    pts = np.empty((n, gl_order, 2 * d))
    pts[:, :, :d] = xp
    pts[:, :, d:] = yp - xp * s[..., None]
    a = field.a(pts)                                          # (N, K, d, d)
    if not np.isfinite(a).all():
        bad = np.argwhere(~np.isfinite(a).reshape(n, gl_order, -1).all(axis=2))
        i, k = (int(bad[0, 0]), int(bad[0, 1])) if bad.size else (0, 0)
        raise QuadratureFailure(float(s[i, k]), pts[i, k])
    w = wts[None, :] * tau_arr[:, None]                       # (N, K)
    if d == 1:
        av = a[:, :, 0, 0]
        out[:, 0, 0] = np.sum(w * av, axis=1)
        out[:, 0, 1] = np.sum(w * s * av, axis=1)
        out[:, 1, 0] = out[:, 0, 1]
        out[:, 1, 1] = np.sum(w * s * s * av, axis=1)
        return out[0] if single else out
    c01 = np.einsum("nk,nkij->nij", w * s, a)
    out[:, :d, :d] = np.einsum("nk,nkij->nij", w, a)
    out[:, :d, d:] = c01
    out[:, d:, :d] = c01
    out[:, d:, d:] = np.einsum("nk,nkij->nij", w * s * s, a)
    return out[0] if single else out


class QuadratureFailure(EvaluationError):
    """Non-finite covariance integrand; carries the offending time node."""

    def __init__(self, u, point):
        self.u = u
        self.point = np.asarray(point)
        super().__init__(f"non-finite diffusion matrix at transported point {self.point} (s={u})")


def frozen_covariance(field: CoefficientField, t: float, freeze: PhasePoint,
                      gl_order: int = COVARIANCE_GL_ORDER) -> FrozenCovariance:
    """Covariance of the frozen proxy at horizon t, frozen at ``freeze``."""
    if t <= 0:
        raise ValueError(f"horizon must be positive, got {t}")
    c = covariance_batch(field, t, freeze.vector, gl_order)
    return FrozenCovariance(t, freeze, c)


def mean_residual(d: int, t, frm, to):
    """Gaussian argument of the frozen density: (x - x', y + t x - y')."""
    frm = np.asarray(frm, dtype=float)
    to = np.asarray(to, dtype=float)
    t = np.asarray(t, dtype=float)
    mx = frm[..., :d] - to[..., :d]
    my = frm[..., d:] + t[..., None] * frm[..., :d] - to[..., d:]
    return np.concatenate([mx, my], axis=-1)


def _quad_and_logdet(cov, m):
    """m^T cov^{-1} m and log det cov, batched; closed form for 2x2 blocks."""
    if cov.shape[-1] == 2:
        c00, c01, c11 = cov[..., 0, 0], cov[..., 0, 1], cov[..., 1, 1]
        det = c00 * c11 - c01 * c01
        if np.any(det <= 0) or np.any(c00 <= 0):
            raise EvaluationError("frozen covariance is not positive definite at positive horizon")
        quad = (c11 * m[..., 0] ** 2 - 2.0 * c01 * m[..., 0] * m[..., 1] + c00 * m[..., 1] ** 2) / det
        return quad, np.log(det)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise EvaluationError("frozen covariance is not positive definite at positive horizon") from exc
    sol = np.linalg.solve(cov, m[..., None])[..., 0]
    quad = np.sum(m * sol, axis=-1)
    _, logdet = np.linalg.slogdet(cov)
    return quad, logdet


def inverse_batch(cov):
    """Batched inverse with a closed-form 2x2 fast path."""
    if cov.shape[-1] == 2:
        c00, c01, c11 = cov[..., 0, 0], cov[..., 0, 1], cov[..., 1, 1]
        det = c00 * c11 - c01 * c01
        inv = np.empty_like(cov)
        inv[..., 0, 0] = c11 / det
        inv[..., 0, 1] = -c01 / det
        inv[..., 1, 0] = -c01 / det
        inv[..., 1, 1] = c00 / det
        return inv
    return np.linalg.inv(cov)


def gauss_log_density(cov, m):
    """log of the centered Gaussian density with covariance cov at m."""
    quad, logdet = _quad_and_logdet(cov, m)
    k = cov.shape[-1]
    return -0.5 * (quad + logdet + k * LOG_2PI)


def frozen_density_batch(field: CoefficientField, t, frm, to,
                         gl_order: int = COVARIANCE_GL_ORDER, cov=None):
    """p_tilde over batches; the freeze point is always the terminal ``to``."""
    frm = np.asarray(frm, dtype=float)
    to = np.asarray(to, dtype=float)
    if cov is None:
        cov = covariance_batch(field, t, to, gl_order)
    m = mean_residual(field.d, t, frm, to)
    return np.exp(gauss_log_density(cov, m))


def frozen_density(field: CoefficientField, t: float, frm: PhasePoint, to: PhasePoint,
                   gl_order: int = COVARIANCE_GL_ORDER) -> float:
    """Frozen-proxy Gaussian density p_tilde(t, frm, to), frozen at ``to``."""
    if t <= 0:
        raise ValueError(f"horizon must be positive, got {t}")
    return float(frozen_density_batch(field, t, frm.vector, to.vector, gl_order))


# ---------------------------------------------------------------------------
# analytic derivatives (Hermite structure), order <= 4
# ---------------------------------------------------------------------------

def _pair_partitions(indices):
    """All partitions of the index tuple into singletons and pairs."""
    if not indices:
        yield ()
        return
    first, rest = indices[0], indices[1:]
    for part in _pair_partitions(rest):
        yield ((first,),) + part
    for j, other in enumerate(rest):
        reduced = rest[:j] + rest[j + 1 :]
        for part in _pair_partitions(reduced):
            yield ((first, other),) + part


def gaussian_derivative_factor(inv_cov, m, directions):
    """Polynomial factor F with D_{v1} ... D_{vk} exp(-m^T A m / 2) = F * exp(...).

    inv_cov is A (batched), m the Gaussian argument (batched), directions a
    list of constant vectors v_i.  Derivatives of the exponent are
    s_i = -v_i^T A m and q_ij = -v_i^T A v_j; the factor sums over all
    partitions of {1..k} into singletons and pairs (third derivatives of the
    exponent vanish).
    """
    k = len(directions)
    if k == 0:
        return np.ones(m.shape[:-1])
    h = np.einsum("...ij,...j->...i", inv_cov, m)
    s = [-np.einsum("...i,i->...", h, v) for v in directions]
    q = {}
    for i in range(k):
        for j in range(i, k):
            val = -np.einsum("...ij,i,j->...", inv_cov, directions[i], directions[j])
            q[(i, j)] = q[(j, i)] = val
    total = np.zeros(m.shape[:-1])
    for part in _pair_partitions(tuple(range(k))):
        term = np.ones(m.shape[:-1])
        for block in part:
            term = term * (s[block[0]] if len(block) == 1 else q[block])
        total = total + term
    return total


def _normalize_multi_index(alpha, d):
    """Accept (ax, ay) with ints (d=1) or length-d sequences; return arrays."""
    if len(alpha) != 2:
        raise ValueError("alpha must be a pair (x multi-index, y multi-index)")
    out = []
    for part in alpha:
        arr = np.atleast_1d(np.asarray(part, dtype=int))
        if arr.size == 1 and d > 1:
            raise ValueError(f"multi-index must have length d={d}")
        if arr.size != d or (arr < 0).any():
            raise ValueError(f"multi-index must be {d} nonnegative integers, got {part}")
        out.append(arr)
    return out[0], out[1]


def direction_vectors(alpha_x, alpha_y, d: int, t: float):
    """Directional vectors realizing a mixed (x, y) multi-index derivative.

    Differentiating the frozen density in x_i moves the Gaussian argument
    along (e_i, t e_i) because the mean map transports x into y; a y_j
    derivative moves it along (0, e_j).
    """
    dirs = []
    for i in range(d):
        v = np.zeros(2 * d)
        v[i] = 1.0
        v[d + i] = t
        dirs.extend([v] * int(alpha_x[i]))
    for j in range(d):
        v = np.zeros(2 * d)
        v[d + j] = 1.0
        dirs.extend([v] * int(alpha_y[j]))
    return dirs


def frozen_density_derivative(field: CoefficientField, t: float, frm: PhasePoint,
                              to: PhasePoint, alpha, gl_order: int = COVARIANCE_GL_ORDER) -> float:
    """Mixed spatial derivative D^alpha_(x,y) p_tilde(t, frm, to), |alpha| <= 4.

    The derivative acts on the starting point (x, y) with the freeze point
    held fixed at ``to``; it is evaluated analytically, never by nested finite
    differences.
    """
    if t <= 0:
        raise ValueError(f"horizon must be positive, got {t}")
    d = field.d
    ax, ay = _normalize_multi_index(alpha, d)
    order = int(ax.sum() + ay.sum())
    if order > 4:
        raise ValueError(f"derivative order must be <= 4, got {order}")
    cov = covariance_batch(field, t, to.vector[None, :], gl_order)
    m = mean_residual(d, t, frm.vector[None, :], to.vector[None, :])
    dens = np.exp(gauss_log_density(cov, m))
    dirs = direction_vectors(ax, ay, d, t)
    factor = gaussian_derivative_factor(inverse_batch(cov), m, dirs)
    return float(factor[0] * dens[0])
