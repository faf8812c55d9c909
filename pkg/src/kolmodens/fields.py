"""Registry of closed-form coefficient families and perturbation builders.

Fields are assembled from named drift and sigma families selected by string
identifier plus a parameter dict (this is the only construction path the
experiment config uses; no dynamic code loading).  Every family is vectorized
over a leading batch of points of shape (..., 2d) and supplies the assumption
constants it satisfies, which the caller may override but not weaken silently.
"""

from __future__ import annotations

import math

import numpy as np

from .model import CoefficientField, PerturbationPair


def _as_points(p, d):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 2 * d:
        raise ValueError(f"expected trailing dimension {2 * d}, got {p.shape[-1]}")
    return p


# ---------------------------------------------------------------------------
# drift families
# ---------------------------------------------------------------------------

def _drift_zero(d, params):
    def b(p):
        p = _as_points(p, d)
        return np.zeros(p.shape[:-1] + (d,))

    return b, {"k1": 0.0}


def _drift_constant(d, params):
    value = np.broadcast_to(np.asarray(params.get("value", 0.0), dtype=float), (d,)).copy()

    def b(p):
        p = _as_points(p, d)
        return np.broadcast_to(value, p.shape[:-1] + (d,)).copy()

    return b, {"k1": float(np.linalg.norm(value))}


def _drift_affine_clamped(d, params):
    """Affine map of the state, hard-clipped to [-bound, bound] per component."""
    intercept = float(params.get("intercept", 0.0))
    slope_x = float(params.get("slope_x", 1.0))
    slope_y = float(params.get("slope_y", 0.0))
    bound = float(params.get("bound", 1.0))
    if bound <= 0:
        raise ValueError("affine-clamped drift needs a positive bound")

    def b(p):
        p = _as_points(p, d)
        raw = intercept + slope_x * p[..., :d] + slope_y * p[..., d:]
        return np.clip(raw, -bound, bound)

    return b, {"k1": bound * math.sqrt(d)}


def _drift_gauss_bump(d, params):
    """amplitude * exp(-|p - center|^2 / width^2) along a fixed direction."""
    amp = float(params.get("amplitude", 1.0))
    width = float(params.get("width", 1.0))
    center = np.broadcast_to(np.asarray(params.get("center", 0.0), dtype=float), (2 * d,)).copy()
    direction = np.broadcast_to(np.asarray(params.get("direction", 1.0), dtype=float), (d,)).copy()
    if width <= 0:
        raise ValueError("gauss-bump drift needs a positive width")

    def b(p):
        p = _as_points(p, d)
        r2 = np.sum((p - center) ** 2, axis=-1)
        return amp * np.exp(-r2 / width**2)[..., None] * direction

    return b, {"k1": abs(amp) * float(np.linalg.norm(direction))}


# ---------------------------------------------------------------------------
# sigma families (scalar profile times the identity matrix)
# ---------------------------------------------------------------------------

def _eye_profile(d, profile):
    eye = np.eye(d)

    def sigma(p):
        return profile(p)[..., None, None] * eye

    return sigma


def _sigma_constant(d, params):
    value = float(params.get("value", 1.0))
    if value <= 0:
        raise ValueError("constant sigma must be positive")

    def profile(p):
        p = _as_points(p, d)
        return np.full(p.shape[:-1], value)

    a = value * value
    return _eye_profile(d, profile), {
        "k2": value * math.sqrt(d),
        "kappa": 0.0,
        "gamma": 1.0,
        "lam": max(a, 1.0 / a, 1.0),
        "sigma_constant": True,
    }


def _sigma_trig_holder(d, params):
    """base + amplitude * |sin(freq * (x_mean + y_mean))|^exponent times I.

    With exponent = gamma in (0, 1] the profile is exactly gamma-Holder; the
    seminorm constant below follows from |sin u - sin v| <= |u - v| and
    | |s|^g - |s'|^g | <= |s - s'|^g.
    """
    base = float(params.get("base", 1.0))
    amp = float(params.get("amplitude", 0.25))
    freq = float(params.get("freq", 1.0))
    exponent = float(params.get("exponent", 1.0))
    if not 0.0 < exponent <= 1.0:
        raise ValueError("trig-holder exponent must lie in (0, 1]")
    if base <= 0 or base - abs(amp) <= 0:
        raise ValueError("trig-holder profile must stay positive: need base > |amplitude|")

    def profile(p):
        p = _as_points(p, d)
        phase = freq * (np.mean(p[..., :d], axis=-1) + np.mean(p[..., d:], axis=-1))
        if exponent == 1.0:
            osc = np.sin(phase)
        else:
            osc = np.abs(np.sin(phase)) ** exponent
        return base + amp * osc

    lo, hi = base - abs(amp), base + abs(amp)
    kappa = abs(amp) * (abs(freq) ** exponent) * math.sqrt(d)
    return _eye_profile(d, profile), {
        "k2": hi * math.sqrt(d),
        "kappa": kappa,
        "gamma": exponent,
        "lam": max(hi * hi, 1.0 / (lo * lo), 1.0),
    }


def _sigma_gauss_bump(d, params):
    base = float(params.get("base", 1.0))
    amp = float(params.get("amplitude", 0.25))
    width = float(params.get("width", 1.0))
    center = np.broadcast_to(np.asarray(params.get("center", 0.0), dtype=float), (2 * d,)).copy()
    if width <= 0:
        raise ValueError("gauss-bump sigma needs a positive width")
    if base <= 0 or base + min(amp, 0.0) <= 0:
        raise ValueError("gauss-bump sigma profile must stay positive")

    def profile(p):
        p = _as_points(p, d)
        r2 = np.sum((p - center) ** 2, axis=-1)
        return base + amp * np.exp(-r2 / width**2)

    lo, hi = min(base, base + amp), max(base, base + amp)
    # sup |grad| of the bump is |amp| * sqrt(2/e) / width
    kappa = abs(amp) * math.sqrt(2.0 / math.e) / width * math.sqrt(d)
    return _eye_profile(d, profile), {
        "k2": hi * math.sqrt(d),
        "kappa": kappa,
        "gamma": 1.0,
        "lam": max(hi * hi, 1.0 / (lo * lo), 1.0),
    }


DRIFT_FAMILIES = {
    "zero": _drift_zero,
    "constant": _drift_constant,
    "affine-clamped": _drift_affine_clamped,
    "gauss-bump": _drift_gauss_bump,
}

SIGMA_FAMILIES = {
    "constant": _sigma_constant,
    "trig-holder": _sigma_trig_holder,
    "gauss-bump": _sigma_gauss_bump,
}


def build_field(d: int, sigma_spec: dict, drift_spec: dict | None = None, name: str = "", **overrides) -> CoefficientField:
    """Assemble a CoefficientField from named families.

    sigma_spec / drift_spec are {"family": name, **params}.  Constants derived
    from the family parameters may be overridden by keyword (gamma, kappa, k1,
    k2, lam).
    """
    drift_spec = drift_spec or {"family": "zero"}
    sig_name = sigma_spec.get("family")
    dr_name = drift_spec.get("family")
    if sig_name not in SIGMA_FAMILIES:
        raise ValueError(f"unknown sigma family {sig_name!r}; known: {sorted(SIGMA_FAMILIES)}")
    if dr_name not in DRIFT_FAMILIES:
        raise ValueError(f"unknown drift family {dr_name!r}; known: {sorted(DRIFT_FAMILIES)}")
    sig_params = {k: v for k, v in sigma_spec.items() if k != "family"}
    dr_params = {k: v for k, v in drift_spec.items() if k != "family"}
    sigma, sig_meta = SIGMA_FAMILIES[sig_name](d, sig_params)
    b, dr_meta = DRIFT_FAMILIES[dr_name](d, dr_params)

    constants = {
        "gamma": sig_meta.get("gamma", 1.0),
        "kappa": sig_meta.get("kappa", 0.0),
        "k1": dr_meta.get("k1", 0.0),
        "k2": sig_meta.get("k2", 1.0),
        "lam": sig_meta.get("lam", 1.0),
        "sigma_constant": sig_meta.get("sigma_constant", False),
    }
    constants.update(overrides)
    return CoefficientField(d=d, b=b, sigma=sigma, name=name or f"{sig_name}+{dr_name}", **constants)


# ---------------------------------------------------------------------------
# perturbation families (Theorem-1 experiment batteries)
# ---------------------------------------------------------------------------

def _perturb_sigma(field: CoefficientField, extra_profile, extra_kappa, extra_sup,
                   extra_constant=False):
    base_sigma = field.sigma
    eye = np.eye(field.d)
    d = field.d

    def sigma(p):
        p = np.asarray(p, dtype=float)
        return np.asarray(base_sigma(p)) + extra_profile(p)[..., None, None] * eye

    k2 = field.k2 + extra_sup * math.sqrt(d)
    lam = max(field.lam * 1.5, (math.sqrt(field.lam) + extra_sup) ** 2)
    return CoefficientField(
        d=d, b=field.b, sigma=sigma, gamma=field.gamma,
        kappa=field.kappa + extra_kappa, k1=field.k1, k2=k2, lam=lam,
        name=field.name + "+sigma-perturbed",
        sigma_constant=field.sigma_constant and extra_constant,
    )


def _perturb_drift(field: CoefficientField, extra_drift, extra_sup):
    base_b = field.b

    def b(p):
        p = np.asarray(p, dtype=float)
        return np.asarray(base_b(p)) + extra_drift(p)

    return CoefficientField(
        d=field.d, b=b, sigma=field.sigma, gamma=field.gamma, kappa=field.kappa,
        k1=field.k1 + extra_sup, k2=field.k2, lam=field.lam,
        name=field.name + "+drift-perturbed",
        sigma_constant=field.sigma_constant,
    )


def make_perturbation(
    base: CoefficientField, family: str, epsilon: float, q: float = math.inf, **params
) -> PerturbationPair:
    """Build a PerturbationPair from a named perturbation family.

    Families: "sigma-shift" (constant shift of sigma by epsilon * I),
    "sigma-bump" (Gaussian bump added to the sigma profile), "drift-bump"
    (bounded Gaussian drift bump, sup-norm regime) and "drift-bump-lq"
    (the same bump measured in a finite L^q norm, q > 4d).
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    d = base.d
    width = float(params.get("width", 1.0))
    center = np.broadcast_to(np.asarray(params.get("center", 0.0), dtype=float), (2 * d,)).copy()

    if family == "sigma-shift":
        def prof(p):
            p = np.asarray(p, dtype=float)
            return np.full(p.shape[:-1], epsilon)

        pert = _perturb_sigma(base, prof, extra_kappa=0.0, extra_sup=epsilon,
                              extra_constant=True)
        return PerturbationPair(base, pert, epsilon, q=math.inf)

    if family == "sigma-bump":
        def prof(p):
            p = np.asarray(p, dtype=float)
            r2 = np.sum((p - center) ** 2, axis=-1)
            return epsilon * np.exp(-r2 / width**2)

        kappa = epsilon * math.sqrt(2.0 / math.e) / width * math.sqrt(d)
        pert = _perturb_sigma(base, prof, extra_kappa=kappa, extra_sup=epsilon)
        return PerturbationPair(base, pert, epsilon, q=math.inf)

    if family in ("drift-bump", "drift-bump-lq"):
        direction = np.broadcast_to(
            np.asarray(params.get("direction", 1.0), dtype=float), (d,)
        ).copy()

        def extra(p):
            p = np.asarray(p, dtype=float)
            r2 = np.sum((p - center) ** 2, axis=-1)
            return epsilon * np.exp(-r2 / width**2)[..., None] * direction

        sup = epsilon * float(np.linalg.norm(direction))
        pert = _perturb_drift(base, extra, sup)
        q_eff = q if family == "drift-bump-lq" else math.inf
        if family == "drift-bump-lq" and math.isinf(q_eff):
            q_eff = 8 * d + 1
        return PerturbationPair(base, pert, epsilon, q=q_eff)

    raise ValueError(
        f"unknown perturbation family {family!r}; known: "
        "['sigma-shift', 'sigma-bump', 'drift-bump', 'drift-bump-lq']"
    )


PERTURBATION_FAMILIES = ("sigma-shift", "sigma-bump", "drift-bump", "drift-bump-lq")
