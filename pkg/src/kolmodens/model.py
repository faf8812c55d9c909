"""Coefficient fields of the degenerate diffusion and their perturbation norms.

The state is a pair (x, y) in R^d x R^d: x receives drift and noise, y
integrates x.  A coefficient field bundles the drift b and diffusion sigma
evaluators with the regularity constants (gamma, kappa, K1, K2, Lambda) under
which the density theory applies.  Assumption checks are refutation-only
samplers: they can exhibit a counterexample but never prove a bound holds on
the whole space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import EvaluationError


@dataclass(frozen=True, eq=False)
class PhasePoint:
    """State (x, y) of the non-degenerate / degenerate pair."""

    x: np.ndarray
    y: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, PhasePoint):
            return NotImplemented
        return np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)

    def __hash__(self):
        return hash((self.x.tobytes(), self.y.tobytes()))

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
            raise ValueError(f"x and y must be 1-d of equal length, got {x.shape} and {y.shape}")
        if x.size < 1:
            raise ValueError("dimension must be at least 1")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ValueError("phase point entries must be finite")

    @property
    def d(self) -> int:
        return self.x.size

    @property
    def vector(self) -> np.ndarray:
        """Concatenated (x, y) as a length-2d array."""
        return np.concatenate([self.x, self.y])

    @classmethod
    def from_vector(cls, v) -> "PhasePoint":
        v = np.asarray(v, dtype=float)
        if v.ndim != 1 or v.size % 2:
            raise ValueError(f"expected a flat vector of even length, got shape {v.shape}")
        d = v.size // 2
        return cls(v[:d], v[d:])


@dataclass(frozen=True)
class CoefficientField:
    """Drift/diffusion evaluators plus the regularity constants they declare.

    Evaluators are vectorized: ``b(p)`` maps (..., 2d) -> (..., d) and
    ``sigma(p)`` maps (..., 2d) -> (..., d, d).  ``concurrent`` marks whether
    they may be called from several threads at once.
    """

    d: int
    b: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    gamma: float = 1.0
    kappa: float = 0.0
    k1: float = 0.0
    k2: float = 1.0
    lam: float = 1.0
    name: str = ""
    concurrent: bool = True
    #: sigma does not depend on the state; enables the closed-form covariance
    sigma_constant: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be at least 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.lam < 1.0:
            raise ValueError(f"ellipticity constant must be >= 1, got {self.lam}")
        for attr in ("kappa", "k1", "k2"):
            if getattr(self, attr) < 0:
                raise ValueError(f"{attr} must be nonnegative")

    def a(self, p) -> np.ndarray:
        """Diffusion matrix sigma sigma^T, exactly symmetrized."""
        s = np.asarray(self.sigma(np.asarray(p, dtype=float)))
        m = s @ np.swapaxes(s, -1, -2)
        return 0.5 * (m + np.swapaxes(m, -1, -2))

    def with_name(self, name: str) -> "CoefficientField":
        return replace(self, name=name)


@dataclass(frozen=True)
class PerturbationPair:
    """Base and perturbed fields sharing the assumption constants.

    q is the integrability index of the drift-difference norm; the density
    stability bound requires q > 4d (q = inf means the sup norm).
    """

    base: CoefficientField
    perturbed: CoefficientField
    epsilon: float
    q: float = math.inf

    def __post_init__(self):
        if self.base.d != self.perturbed.d:
            raise ValueError("base and perturbed fields must share the dimension")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        if math.isfinite(self.q) and self.q <= 4 * self.base.d:
            raise ValueError(f"q must exceed 4d = {4 * self.base.d} when finite, got {self.q}")

    @property
    def d(self) -> int:
        return self.base.d

    def swapped(self) -> "PerturbationPair":
        return PerturbationPair(self.perturbed, self.base, self.epsilon, self.q)


@dataclass(frozen=True)
class PerturbationNorms:
    """Holder-norm sigma difference, L^q drift difference, and their sum."""

    delta_sigma_gamma: float
    delta_b_q: float

    def __post_init__(self):
        if self.delta_sigma_gamma < 0 or self.delta_b_q < 0:
            raise ValueError("perturbation norms must be nonnegative")

    @property
    def delta_total(self) -> float:
        return self.delta_sigma_gamma + self.delta_b_q


@dataclass(frozen=True)
class NormSampling:
    """Box, sample sizes, and seed for the norm/assumption estimators."""

    box_radius: float = 4.0
    n_pairs: int = 4000
    resolution: int = 161
    seed: int = 0

    def __post_init__(self):
        if self.box_radius <= 0:
            raise ValueError("box_radius must be positive")
        if self.n_pairs < 1 or self.resolution < 2:
            raise ValueError("n_pairs must be >= 1 and resolution >= 2")


@dataclass(frozen=True)
class AssumptionCheck:
    passed: bool
    worst_value: float
    worst_point: np.ndarray
    limit: float


@dataclass(frozen=True)
class AssumptionReport:
    """Sampled verdicts on boundedness, ellipticity and Holder continuity.

    A failed check carries a genuine counterexample; a passed check only says
    no violation was found among the sampled points, so it can refute but
    never prove an assumption.
    """

    bounded_drift: AssumptionCheck
    bounded_sigma: AssumptionCheck
    elliptic: AssumptionCheck
    holder: AssumptionCheck
    n_samples: int
    box_radius: float
    seed: int
    note: str = field(default="sampling can refute an assumption but cannot prove it")

    @property
    def all_passed(self) -> bool:
        return all(
            c.passed for c in (self.bounded_drift, self.bounded_sigma, self.elliptic, self.holder)
        )


def _require_finite(values, what, points):
    values = np.asarray(values)
    if np.isfinite(values).all():
        return values
    bad = np.argwhere(~np.isfinite(values).reshape(values.shape[0], -1).all(axis=1))
    idx = int(bad[0, 0]) if bad.size else 0
    raise EvaluationError(f"{what} returned a non-finite value at point {np.asarray(points)[idx]}")


def diffusion_matrix(field: CoefficientField, p: PhasePoint) -> np.ndarray:
    """sigma sigma^T at p; symmetric by construction (bit-level)."""
    v = p.vector
    a = field.a(v)
    _require_finite(a[None, ...], "sigma", v[None, :])
    return a


def _sample_box(rng, n, d, radius):
    return rng.uniform(-radius, radius, size=(n, 2 * d))


def _magnitude(values):
    """Euclidean/Frobenius magnitude over the non-batch axes."""
    values = np.asarray(values, dtype=float)
    return np.sqrt(np.sum(values.reshape(values.shape[0], -1) ** 2, axis=1))


def _pair_stream(rng, n_pairs, d, radius):
    """Point pairs mixing global draws with short-range displacements.

    Even indices pair two independent uniform points; odd indices displace the
    first point by a log-uniform step, which probes the local Holder scale.
    Each pair consumes a fixed number of draws, so a longer stream extends a
    shorter one (estimates are monotone in n_pairs for a fixed seed).
    """
    u = rng.uniform(-radius, radius, size=(n_pairs, 2 * d))
    v_global = rng.uniform(-radius, radius, size=(n_pairs, 2 * d))
    direction = rng.standard_normal(size=(n_pairs, 2 * d))
    log_step = rng.uniform(np.log(1e-4 * radius), np.log(radius), size=n_pairs)
    norm = np.linalg.norm(direction, axis=1, keepdims=True)
    norm[norm == 0.0] = 1.0
    v_local = u + direction / norm * np.exp(log_step)[:, None]
    v = np.where((np.arange(n_pairs) % 2 == 0)[:, None], v_global, v_local)
    return u, v


def _holder_distance(u, v, d, gamma):
    dx = np.linalg.norm(u[:, :d] - v[:, :d], axis=1)
    dy = np.linalg.norm(u[:, d:] - v[:, d:], axis=1)
    return (dx + dy) ** gamma


def holder_seminorm_estimate(
    f, gamma: float, n_pairs: int, box_radius: float, seed: int, d: int = 1
) -> float:
    """Sampled lower bound on the Holder seminorm sup |f(u)-f(v)| / dist^gamma.

    The distance is the additive form (|x-x'| + |y-y'|)^gamma.  Coincident
    pairs are skipped.  For a fixed seed the estimate is nondecreasing in
    n_pairs.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    u, v = _pair_stream(rng, n_pairs, d, box_radius)
    dist = _holder_distance(u, v, d, gamma)
    keep = dist > 0.0
    if not keep.any():
        return 0.0
    fu = np.asarray(f(u[keep]), dtype=float)
    fv = np.asarray(f(v[keep]), dtype=float)
    _require_finite(fu, "f", u[keep])
    diff = _magnitude(fu - fv)
    return float(np.max(diff / dist[keep]))


def lq_norm_estimate(f, q: float, box_radius: float, resolution: int, d: int = 1) -> float:
    """Grid estimate of ||f||_{L^q} over the state-space box [-r, r]^{2d}.

    q = inf gives the grid sup of |f|; finite q > 1 gives the midpoint-rule
    Riemann sum (sum |f|^q cell_volume)^(1/q).  The caller asserts that f is
    supported in (or decays within) the box.
    """
    if q <= 1:
        raise ValueError(f"q must exceed 1, got {q}")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    h = 2.0 * box_radius / resolution
    axis = -box_radius + h * (np.arange(resolution) + 0.5)
    grids = np.meshgrid(*([axis] * (2 * d)), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    mag = _magnitude(_require_finite(np.asarray(f(pts), dtype=float), "f", pts))
    if math.isinf(q):
        return float(np.max(mag))
    cell = h ** (2 * d)
    return float(np.sum(mag**q * cell) ** (1.0 / q))


def verify_assumptions(
    field: CoefficientField, n_samples: int, box_radius: float, seed: int
) -> AssumptionReport:
    """Sample the box for violations of the boundedness, ellipticity and
    Holder conditions declared by the field."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    d = field.d
    pts = _sample_box(rng, n_samples, d, box_radius)

    slack = 1.0 + 1e-9  # forgive pure roundoff at the boundary

    bmag = _magnitude(_require_finite(np.asarray(field.b(pts), dtype=float), "b", pts))
    i = int(np.argmax(bmag))
    drift = AssumptionCheck(bool(bmag[i] <= field.k1 * slack + 1e-300), float(bmag[i]), pts[i], field.k1)

    smag = _magnitude(_require_finite(np.asarray(field.sigma(pts), dtype=float), "sigma", pts))
    i = int(np.argmax(smag))
    sig = AssumptionCheck(bool(smag[i] <= field.k2 * slack), float(smag[i]), pts[i], field.k2)

    eig = np.linalg.eigvalsh(field.a(pts))
    worst_hi = np.max(eig, axis=1)
    worst_lo = np.min(eig, axis=1)
    # the witness is whichever side violates [1/lam, lam] the most (in ratio)
    hi_ratio = worst_hi / field.lam
    lo_ratio = (1.0 / field.lam) / np.maximum(worst_lo, 1e-300)
    ratio = np.maximum(hi_ratio, lo_ratio)
    i = int(np.argmax(ratio))
    bad_value = float(worst_hi[i] if hi_ratio[i] >= lo_ratio[i] else worst_lo[i])
    elliptic = AssumptionCheck(bool(ratio[i] <= slack), bad_value, pts[i], field.lam)

    u, v = _pair_stream(rng, max(n_samples, 2), d, box_radius)
    dist = _holder_distance(u, v, d, field.gamma)
    keep = dist > 0.0
    quot = np.zeros(keep.sum())
    if keep.any():
        su = np.asarray(field.sigma(u[keep]), dtype=float)
        sv = np.asarray(field.sigma(v[keep]), dtype=float)
        quot = _magnitude(su - sv) / dist[keep]
    if quot.size:
        i = int(np.argmax(quot))
        holder = AssumptionCheck(bool(quot[i] <= field.kappa * slack + 1e-300), float(quot[i]), u[keep][i], field.kappa)
    else:
        holder = AssumptionCheck(True, 0.0, pts[0], field.kappa)

    return AssumptionReport(drift, sig, elliptic, holder, n_samples, box_radius, seed)


def perturbation_norms(pair: PerturbationPair, sampling: NormSampling) -> PerturbationNorms:
    """Estimate Delta_sigma_gamma (sup + Holder seminorm of sigma - sigma_eps)
    and Delta_b_q (L^q norm of b - b_eps) on the sampling box."""
    d = pair.d

    def sig_diff(p):
        return np.asarray(pair.base.sigma(p), dtype=float) - np.asarray(
            pair.perturbed.sigma(p), dtype=float
        )

    def b_diff(p):
        return np.asarray(pair.base.b(p), dtype=float) - np.asarray(
            pair.perturbed.b(p), dtype=float
        )

    gamma = pair.base.gamma
    sup = lq_norm_estimate(sig_diff, math.inf, sampling.box_radius, sampling.resolution, d)
    semi = holder_seminorm_estimate(
        sig_diff, gamma, sampling.n_pairs, sampling.box_radius, sampling.seed, d
    )
    delta_b = lq_norm_estimate(b_diff, pair.q, sampling.box_radius, sampling.resolution, d)
    return PerturbationNorms(sup + semi, delta_b)
