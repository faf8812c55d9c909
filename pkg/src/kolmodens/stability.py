"""Empirical density-stability analysis under coefficient perturbations.

The target statement: the pointwise density difference between a base and a
perturbed model is bounded by (constant) x (perturbation norm) x (comparison
density).  This module computes difference grids with shared discretization
for both fields (common quadrature nodes for the series route, common random
numbers for the Monte Carlo route, so discretization bias cancels in the
difference), normalizes by Delta * p_hat, calibrates the comparison constants
(c, C) on ladders, and sweeps the perturbation size to test linearity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import CalibrationError
from .fields import make_perturbation
from .model import (
    CoefficientField,
    NormSampling,
    PerturbationNorms,
    PerturbationPair,
    PhasePoint,
    perturbation_norms,
)
from .parallel import parallel_map
from .parametrix import ConvolutionScheme, lemma1_bound, parametrix_series
from .proxy import proxy_density
from .simulate import GridSpec, kde_on_grid, simulate_terminal_pair

PROXY_FLOOR = 1e-12  # ratios are only formed where p_hat exceeds this


@dataclass(frozen=True)
class MCConfig:
    """Monte Carlo settings for the density_difference / report pipelines."""

    n_paths: int = 100_000
    n_steps: int = 200
    n_blocks: int = 32
    n_boot: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.n_paths < 100:
            raise ValueError("n_paths must be >= 100")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")


@dataclass(frozen=True)
class DifferenceGrid:
    """Pointwise |p - p_eps| on a grid, produced with shared discretization."""

    t: float
    start: PhasePoint
    grid: GridSpec
    p_base: np.ndarray
    p_pert: np.ndarray
    method: str
    band: np.ndarray | None = None  # combined noise band (Monte Carlo only)

    @property
    def diff(self) -> np.ndarray:
        return np.abs(self.p_base - self.p_pert)

    @property
    def sup_diff(self) -> float:
        return float(self.diff.max())


@dataclass(frozen=True)
class StabilityReport:
    """Ratio statistics of the stability bound over an epsilon sweep.

    The grids (diff, ratio, densities) belong to the detail epsilon (the
    largest in the sweep); epsilon_sweep lists (epsilon, C_empirical) for every
    size, and slope is the log-log regression slope of sup |p - p_eps| vs
    epsilon.
    """

    family: str
    method: str
    t: float
    start: PhasePoint
    grid: GridSpec
    c_used: float
    norms: PerturbationNorms
    p_base: np.ndarray
    p_pert: np.ndarray
    diff: np.ndarray
    proxy: np.ndarray
    ratio: np.ndarray
    C_empirical: float
    epsilon_sweep: list
    slope: float
    q: float
    threshold: float = PROXY_FLOOR
    discretization: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "family": self.family,
            "method": self.method,
            "t": self.t,
            "start": {"x": self.start.x.tolist(), "y": self.start.y.tolist()},
            "grid": {
                "x_min": self.grid.x_min, "x_max": self.grid.x_max, "n_x": self.grid.n_x,
                "y_min": self.grid.y_min, "y_max": self.grid.y_max, "n_y": self.grid.n_y,
            },
            "c_used": self.c_used,
            "q": None if math.isinf(self.q) else self.q,
            "norms": {
                "delta_sigma_gamma": self.norms.delta_sigma_gamma,
                "delta_b_q": self.norms.delta_b_q,
                "delta_total": self.norms.delta_total,
            },
            "C_empirical": self.C_empirical,
            "epsilon_sweep": [[e, c] for e, c in self.epsilon_sweep],
            "slope": self.slope,
            "threshold": self.threshold,
            "discretization": self.discretization,
            "p_base": self.p_base.tolist(),
            "p_pert": self.p_pert.tolist(),
            "diff": self.diff.tolist(),
            "proxy": self.proxy.tolist(),
            "ratio": self.ratio.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def to_csv(self, path) -> None:
        xs, ys = self.grid.x_axis, self.grid.y_axis
        with open(path, "w") as fh:
            fh.write("t,x,y,p_base,p_pert,diff,proxy,ratio\n")
            for i, x in enumerate(xs):
                for j, y in enumerate(ys):
                    row = (self.t, x, y, self.p_base[i, j], self.p_pert[i, j],
                           self.diff[i, j], self.proxy[i, j], self.ratio[i, j])
                    fh.write(",".join(format(v, ".17g") for v in row) + "\n")


# ---------------------------------------------------------------------------
# difference grids
# ---------------------------------------------------------------------------

def _series_on_grid(field, t, start, grid, order, scheme):
    nodes = grid.nodes()

    def one(node):
        target = PhasePoint([node[0]], [node[1]])
        return parametrix_series(field, t, start, target, order, scheme).value

    vals = parallel_map(one, list(nodes))
    return np.asarray(vals).reshape(grid.n_x, grid.n_y)


def _series_difference(pair, t, start, grid, order, scheme):
    nodes = grid.nodes()

    def one(node):
        target = PhasePoint([node[0]], [node[1]])
        vb = parametrix_series(pair.base, t, start, target, order, scheme).value
        vp = parametrix_series(pair.perturbed, t, start, target, order, scheme).value
        return vb, vp

    vals = parallel_map(one, list(nodes))
    p_base = np.asarray([v[0] for v in vals]).reshape(grid.n_x, grid.n_y)
    p_pert = np.asarray([v[1] for v in vals]).reshape(grid.n_x, grid.n_y)
    return p_base, p_pert


def _mc_difference(pair, t, start, grid, mc: MCConfig):
    term_b, term_p = simulate_terminal_pair([pair.base, pair.perturbed], start, t,
                                            mc.n_paths, mc.n_steps, mc.seed)
    # shared bandwidth from the base sample keeps the estimator identical for
    # both fields; with epsilon = 0 the difference then vanishes exactly
    n = term_b.shape[0]
    hx = term_b[:, 0].std(ddof=1) * n ** (-1 / 6)
    hy = term_b[:, 1].std(ddof=1) * n ** (-1 / 6)
    vb, se_b, _ = kde_on_grid(term_b, grid, bandwidth=(hx, hy),
                              n_blocks=mc.n_blocks, n_boot=mc.n_boot, boot_seed=mc.seed)
    vp, se_p, _ = kde_on_grid(term_p, grid, bandwidth=(hx, hy),
                              n_blocks=mc.n_blocks, n_boot=mc.n_boot, boot_seed=mc.seed)
    return vb, vp, se_b + se_p


def density_difference(pair: PerturbationPair, t: float, start: PhasePoint, grid: GridSpec,
                       method: str = "series", order: int = 2,
                       scheme: ConvolutionScheme | None = None,
                       mc: MCConfig | None = None) -> DifferenceGrid:
    """|p - p_eps| on the grid, with both fields discretized identically.

    The series route reuses one quadrature node tree for base and perturbed
    field; the Monte Carlo route drives both fields with the same noise
    increments and a shared kernel bandwidth.
    """
    if t <= 0:
        raise ValueError("horizon must be positive")
    if method == "series":
        scheme = scheme or ConvolutionScheme()
        p_base, p_pert = _series_difference(pair, t, start, grid, order, scheme)
        return DifferenceGrid(t, start, grid, p_base, p_pert, method)
    if method == "monte-carlo":
        mc = mc or MCConfig()
        p_base, p_pert, band = _mc_difference(pair, t, start, grid, mc)
        return DifferenceGrid(t, start, grid, p_base, p_pert, method, band=band)
    raise ValueError(f"unknown method {method!r}; use 'series' or 'monte-carlo'")


# ---------------------------------------------------------------------------
# ratio reports
# ---------------------------------------------------------------------------

def _proxy_on_grid(c_used, t, start, grid):
    nodes = grid.nodes()
    vals = proxy_density(c_used, 1, t, start.vector, nodes)
    return np.asarray(vals).reshape(grid.n_x, grid.n_y)


def _ratio(diffgrid: DifferenceGrid, norms: PerturbationNorms, c_used: float, threshold: float):
    if norms.delta_total <= 0:
        raise ValueError("delta_total must be positive to form the stability ratio")
    proxy = _proxy_on_grid(c_used, diffgrid.t, diffgrid.start, diffgrid.grid)
    mask = proxy >= threshold
    ratio = np.zeros_like(proxy)
    ratio[mask] = diffgrid.diff[mask] / (norms.delta_total * proxy[mask])
    c_emp = float(ratio[mask].max())
    return proxy, ratio, c_emp


def stability_ratio(pair: PerturbationPair, t: float, start: PhasePoint, grid: GridSpec,
                    method: str = "series", c_used: float = 0.5,
                    sampling: NormSampling = NormSampling(), order: int = 2,
                    scheme: ConvolutionScheme | None = None, mc: MCConfig | None = None,
                    threshold: float = PROXY_FLOOR, family: str = "custom") -> StabilityReport:
    """Single-perturbation stability report: ratio grid and its supremum."""
    norms = perturbation_norms(pair, sampling)
    dg = density_difference(pair, t, start, grid, method, order, scheme, mc)
    proxy, ratio, c_emp = _ratio(dg, norms, c_used, threshold)
    disc = {"order": order, "method": method}
    if method == "series":
        sch = scheme or ConvolutionScheme()
        disc.update(time_nodes=sch.time_nodes, space_rule=sch.space_rule,
                    space_nodes=sch.space_nodes, seed=sch.seed, proposal_c=sch.proposal_c)
    else:
        m = mc or MCConfig()
        disc.update(n_paths=m.n_paths, n_steps=m.n_steps, seed=m.seed)
    return StabilityReport(
        family=family, method=method, t=t, start=start, grid=grid, c_used=c_used,
        norms=norms, p_base=dg.p_base, p_pert=dg.p_pert, diff=dg.diff, proxy=proxy,
        ratio=ratio, C_empirical=c_emp, epsilon_sweep=[(pair.epsilon, c_emp)],
        slope=float("nan"), q=pair.q, threshold=threshold, discretization=disc,
    )


def stability_report(base: CoefficientField, family: str, epsilons, t: float,
                     start: PhasePoint, grid: GridSpec, method: str = "series",
                     q: float = math.inf, c_used: float = 0.5,
                     sampling: NormSampling = NormSampling(), order: int = 2,
                     scheme: ConvolutionScheme | None = None, mc: MCConfig | None = None,
                     threshold: float = PROXY_FLOOR, **family_params) -> StabilityReport:
    """Epsilon sweep for one perturbation family.

    For each epsilon the perturbed field is built from the named family, the
    difference grid is computed with shared discretization, and the ratio
    supremum C_empirical is recorded; grids of the largest epsilon are kept
    for inspection.  slope is the log-log slope of sup |p - p_eps| vs epsilon.
    """
    epsilons = sorted(float(e) for e in epsilons)
    if not epsilons or epsilons[0] <= 0:
        raise ValueError("epsilons must be positive")
    sweep = []
    sups = []
    detail = None
    for eps in epsilons:
        pair = make_perturbation(base, family, eps, q=q, **family_params)
        norms = perturbation_norms(pair, sampling)
        dg = density_difference(pair, t, start, grid, method, order, scheme, mc)
        proxy, ratio, c_emp = _ratio(dg, norms, c_used, threshold)
        sweep.append((eps, c_emp))
        sups.append(dg.sup_diff)
        detail = (norms, dg, proxy, ratio, c_emp, pair.q)

    slope = float(np.polyfit(np.log(epsilons), np.log(sups), 1)[0]) if len(epsilons) > 1 else float("nan")
    norms, dg, proxy, ratio, c_emp, q_eff = detail
    disc = {"order": order, "method": method}
    if method == "series":
        sch = scheme or ConvolutionScheme()
        disc.update(time_nodes=sch.time_nodes, space_rule=sch.space_rule,
                    space_nodes=sch.space_nodes, seed=sch.seed, proposal_c=sch.proposal_c)
    else:
        m = mc or MCConfig()
        disc.update(n_paths=m.n_paths, n_steps=m.n_steps, seed=m.seed)
    return StabilityReport(
        family=family, method=method, t=t, start=start, grid=grid, c_used=c_used,
        norms=norms, p_base=dg.p_base, p_pert=dg.p_pert, diff=dg.diff, proxy=proxy,
        ratio=ratio, C_empirical=c_emp, epsilon_sweep=sweep, slope=slope, q=q_eff,
        threshold=threshold, discretization=disc,
    )


# ---------------------------------------------------------------------------
# constant calibration
# ---------------------------------------------------------------------------

C_CANDIDATES = tuple(round(0.9 - 0.1 * i, 1) for i in range(9))       # 0.9 ... 0.1
BIG_C_LADDER = tuple(float(v) for v in np.logspace(0.0, 3.0, 25))


def calibrate_proxy_constants(field: CoefficientField, t_list, grid: GridSpec,
                              start: PhasePoint, method: str = "series", order: int = 2,
                              scheme: ConvolutionScheme | None = None,
                              mc: MCConfig | None = None):
    """Largest concentration c (descending ladder) and smallest envelope C on a
    log ladder with density <= C * p_hat_c across the (t, grid) battery."""
    scheme = scheme or ConvolutionScheme()
    densities = []
    for t in t_list:
        if method == "series":
            densities.append((t, _series_on_grid(field, t, start, grid, order, scheme)))
        elif method == "monte-carlo":
            from .simulate import mc_density

            m = mc or MCConfig()
            dg = mc_density(field, start, t, m.n_paths, m.n_steps, grid, m.seed,
                            n_blocks=m.n_blocks, n_boot=m.n_boot)
            densities.append((t, dg.values))
        else:
            raise ValueError(f"unknown method {method!r}")

    for c in C_CANDIDATES:
        needed = 0.0
        for t, p in densities:
            proxy = _proxy_on_grid(c, t, start, grid)
            pos = proxy > 0.0
            if np.any(~pos & (p > 1e-300)):
                needed = math.inf  # density mass where the proxy underflowed
                break
            if pos.any():
                needed = max(needed, float(np.max(p[pos] / proxy[pos])))
        if needed <= BIG_C_LADDER[-1]:
            c_big = next(v for v in BIG_C_LADDER if v >= needed)
            return c, c_big
    raise CalibrationError(
        "no (c, C) on the ladders dominates the density over this battery; "
        "shrink the evaluation grid toward the bulk"
    )


def lemma1_constant_fit(battery, gamma: float, proxy_c: float | None = None,
                        fit_ranks=(0, 1)):
    """Smallest envelope constant C >= 1 fitted on low ranks of a term battery.

    battery is a list of (t, start, target, SeriesResult).  With proxy_c given,
    the envelope carries the comparison-density factor p_hat_c(t, start,
    target); otherwise the bare scalar envelope is fitted, as in the
    acceptance battery.  Solving |term_r| <= C^(r+1) * envelope_r for C at each
    battery entry and taking the maximum yields the fitted constant.
    """
    needed = 1.0
    for t, start, target, result in battery:
        weight = 1.0
        if proxy_c is not None:
            weight = float(proxy_density(proxy_c, start.d, t, start.vector, target.vector))
        for r in fit_ranks:
            if r >= len(result.terms):
                continue
            envelope = lemma1_bound(r, t, gamma, 1.0) * weight
            if envelope <= 0:
                continue
            needed = max(needed, (abs(result.terms[r]) / envelope) ** (1.0 / (r + 1)))
    return needed


# ---------------------------------------------------------------------------
# series vs Monte Carlo cross-validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrossValidation:
    grid: GridSpec
    mc_values: np.ndarray
    mc_stderr: np.ndarray
    smoothed_series: np.ndarray
    series_tolerance: float
    bulk_mask: np.ndarray

    @property
    def agreement_fraction(self) -> float:
        band = 3.0 * self.mc_stderr + self.series_tolerance
        ok = np.abs(self.mc_values - self.smoothed_series) <= band
        return float(ok[self.bulk_mask].mean())


def _smooth_series_on_grid(field, t, start, grid, bandwidth, order, scheme, refine=2):
    """Series density convolved with the KDE product kernel on the grid.

    A kernel density estimate targets the smoothed density, so the fair
    comparison smooths the series prediction with the same kernel.  The series
    is evaluated on a refined/extended grid and convolved discretely.
    """
    hx, hy = bandwidth
    dx = (grid.x_axis[1] - grid.x_axis[0]) / refine
    dy = (grid.y_axis[1] - grid.y_axis[0]) / refine
    pad_x = int(math.ceil(4.0 * hx / dx))
    pad_y = int(math.ceil(4.0 * hy / dy))
    fx = grid.x_axis[0] + dx * np.arange(-pad_x, refine * (grid.n_x - 1) + pad_x + 1)
    fy = grid.y_axis[0] + dy * np.arange(-pad_y, refine * (grid.n_y - 1) + pad_y + 1)
    fine = GridSpec(fx[0], fx[-1], fx.size, fy[0], fy[-1], fy.size)
    dens = _series_on_grid(field, t, start, fine, order, scheme)

    kx = np.exp(-0.5 * (dx * np.arange(-pad_x, pad_x + 1) / hx) ** 2)
    kx /= kx.sum()
    ky = np.exp(-0.5 * (dy * np.arange(-pad_y, pad_y + 1) / hy) ** 2)
    ky /= ky.sum()
    sm = np.apply_along_axis(lambda col: np.convolve(col, kx, mode="valid"), 0, dens)
    sm = np.apply_along_axis(lambda row: np.convolve(row, ky, mode="valid"), 1, sm)
    return sm[::refine, ::refine]


def cross_validate(field: CoefficientField, start: PhasePoint, t: float, grid: GridSpec,
                   order: int = 2, scheme: ConvolutionScheme | None = None,
                   mc: MCConfig | None = None, bulk_quantile: float = 0.05) -> CrossValidation:
    """Compare the series density against the Monte Carlo KDE on the bulk.

    The series prediction is smoothed with the KDE kernel before comparison;
    the acceptance band combines three bootstrap standard errors with a series
    quadrature tolerance estimated by node coarsening at the grid center.
    """
    from .simulate import mc_density

    scheme = scheme or ConvolutionScheme()
    mc = mc or MCConfig()
    dg = mc_density(field, start, t, mc.n_paths, mc.n_steps, grid, mc.seed,
                    n_blocks=mc.n_blocks, n_boot=mc.n_boot)
    smoothed = _smooth_series_on_grid(field, t, start, grid, dg.bandwidth, order, scheme)

    center = PhasePoint([0.5 * (grid.x_min + grid.x_max)], [0.5 * (grid.y_min + grid.y_max)])
    probe = parametrix_series(field, t, start, center, order, scheme, with_error_estimate=True)
    series_tol = 3.0 * (probe.error_estimate or 0.0) + probe.tail_estimate * float(
        np.max(_proxy_on_grid(1.0, t, start, grid))
    )
    bulk = smoothed >= bulk_quantile * smoothed.max()
    return CrossValidation(grid=grid, mc_values=dg.values, mc_stderr=dg.stderr,
                           smoothed_series=smoothed, series_tolerance=series_tol,
                           bulk_mask=bulk)
