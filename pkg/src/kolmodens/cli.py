"""Experiment runner: config-driven pipelines with reproducible artifacts.

One JSON config document selects a command (proxy-eval, series, simulate,
stability, report) and its inputs; every numeric precondition of the library
operations reachable from the config is checked up front, with field-level
messages, before any computation starts.  Artifacts are CSV/JSON files plus a
manifest carrying the config hash, seed, library versions and artifact
hashes; identical config and seed reproduce byte-identical artifacts for any
thread count.  Wall time goes to a separate timing file so the manifest
itself stays deterministic.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, KolmodensError
from .fields import DRIFT_FAMILIES, PERTURBATION_FAMILIES, SIGMA_FAMILIES, build_field
from .model import NormSampling, PhasePoint
from .parallel import set_max_threads
from .parametrix import ConvolutionScheme, parametrix_series
from .proxy import proxy_density, proxy_mean
from .simulate import GridSpec, mc_density
from .stability import MCConfig, stability_report

COMMANDS = ("proxy-eval", "series", "simulate", "stability", "report")
OUT_ENV = "KOLMODENS_OUT"
_FMT = ".17g"


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, normalized experiment description."""

    raw: dict
    command: str
    seed: int
    out_dir: str | None
    d: int
    t: float
    start: PhasePoint | None
    proxy_c: float
    field_spec: dict | None
    perturbation: dict | None
    grid: GridSpec | None
    scheme: ConvolutionScheme | None
    order: int
    mc: MCConfig | None
    method: str
    c_used: float
    threshold: float
    sampling: NormSampling
    report_source: str | None
    extras: dict = dc_field(default_factory=dict)

    def canonical(self) -> str:
        """Canonical serialized form; parsing it back yields the same string."""
        return json.dumps(self.raw, sort_keys=True, indent=2) + "\n"


def _problem(problems, path, message):
    problems.append(f"{path}: {message}")


def _get_number(cfg, path, problems, default=None, minimum=None, maximum=None,
                exclusive_min=None, required=False):
    cur = cfg
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            if required:
                _problem(problems, path, "missing required value")
            return default
        cur = cur[part]
    if isinstance(cur, bool) or not isinstance(cur, (int, float)):
        _problem(problems, path, f"expected a number, got {cur!r}")
        return default
    v = float(cur)
    if exclusive_min is not None and v <= exclusive_min:
        _problem(problems, path, f"must exceed {exclusive_min}, got {v}")
        return default
    if minimum is not None and v < minimum:
        _problem(problems, path, f"must be >= {minimum}, got {v}")
        return default
    if maximum is not None and v > maximum:
        _problem(problems, path, f"must be <= {maximum}, got {v}")
        return default
    return v


def _parse_start(cfg, d, problems):
    raw = cfg.get("start", [0.0, 0.0] if d == 1 else None)
    if raw is None:
        _problem(problems, "start", "missing required value")
        return None
    try:
        if isinstance(raw, dict):
            return PhasePoint(raw["x"], raw["y"])
        arr = np.asarray(raw, dtype=float)
        if d == 1 and arr.shape == (2,):
            return PhasePoint([arr[0]], [arr[1]])
        return PhasePoint(arr[:d], arr[d:])
    except Exception as exc:
        _problem(problems, "start", str(exc))
        return None


def _parse_field(cfg, key, d, problems):
    spec = cfg.get(key)
    if spec is None:
        return None
    sigma_spec = spec.get("sigma", {"family": "constant", "value": 1.0})
    drift_spec = spec.get("drift", {"family": "zero"})
    if sigma_spec.get("family") not in SIGMA_FAMILIES:
        _problem(problems, f"{key}.sigma.family",
                 f"unknown family {sigma_spec.get('family')!r}; known: {sorted(SIGMA_FAMILIES)}")
        return None
    if drift_spec.get("family") not in DRIFT_FAMILIES:
        _problem(problems, f"{key}.drift.family",
                 f"unknown family {drift_spec.get('family')!r}; known: {sorted(DRIFT_FAMILIES)}")
        return None
    overrides = {k: spec[k] for k in ("gamma", "kappa", "k1", "k2", "lam") if k in spec}
    try:
        build_field(d, sigma_spec, drift_spec, **overrides)
    except Exception as exc:
        _problem(problems, key, str(exc))
        return None
    return {"sigma": sigma_spec, "drift": drift_spec, **overrides}


def _parse_grid(cfg, d, t, proxy_c, start, problems):
    g = cfg.get("grid", {})
    n_x = int(_get_number(cfg, "grid.n_x", problems, default=21, minimum=2) or 21)
    n_y = int(_get_number(cfg, "grid.n_y", problems, default=21, minimum=2) or 21)
    if d != 1:
        _problem(problems, "grid", "evaluation grids are two-dimensional; d = 1 only")
        return None
    if start is None or t is None:
        return None
    center = g.get("center", "proxy-mean")
    if center == "proxy-mean":
        center = proxy_mean(1, t, start.vector)
    else:
        center = np.asarray(center, dtype=float)
        if center.shape != (2,):
            _problem(problems, "grid.center", "expected [x, y] or 'proxy-mean'")
            return None
    spans = g.get("spans", "auto")
    if spans == "auto":
        mult = _get_number(cfg, "grid.span_multiple", problems, default=2.5, exclusive_min=0.0)
        sx = math.sqrt(2.0 * t / proxy_c)
        sy = math.sqrt(2.0 * t**3 / (3.0 * proxy_c))
        spans = (mult * sx, mult * sy)
    else:
        spans = tuple(float(v) for v in spans)
        if len(spans) != 2 or min(spans) <= 0:
            _problem(problems, "grid.spans", "expected two positive spans or 'auto'")
            return None
    try:
        return GridSpec.centered(center, spans, n_x, n_y)
    except ValueError as exc:
        _problem(problems, "grid", str(exc))
        return None


def _parse_scheme(cfg, problems, seed):
    s = cfg.get("scheme", {})
    kwargs = {}
    kwargs["time_nodes"] = int(_get_number(cfg, "scheme.time_nodes", problems, default=5, minimum=1) or 5)
    rule = s.get("space_rule", "gauss-hermite")
    if rule not in ("gauss-hermite", "monte-carlo"):
        _problem(problems, "scheme.space_rule", f"unknown rule {rule!r}")
        rule = "gauss-hermite"
    kwargs["space_rule"] = rule
    kwargs["space_nodes"] = int(_get_number(cfg, "scheme.space_nodes", problems, default=6, minimum=1) or 6)
    beta = s.get("beta")
    if beta is not None:
        beta = _get_number(cfg, "scheme.beta", problems, exclusive_min=0.0, maximum=1.0)
    kwargs["beta"] = beta
    kwargs["proposal_c"] = _get_number(cfg, "scheme.proposal_c", problems, default=1.0, exclusive_min=0.0) or 1.0
    kwargs["depth_decay"] = _get_number(cfg, "scheme.depth_decay", problems, default=0.7, exclusive_min=0.0, maximum=1.0) or 0.7
    kwargs["seed"] = seed
    try:
        return ConvolutionScheme(**kwargs)
    except ValueError as exc:
        _problem(problems, "scheme", str(exc))
        return None


def validate_config(raw: dict, seed_override: int | None = None) -> ExperimentConfig:
    """Normalize and validate a config dict; raises ConfigError listing every
    violated operation precondition reachable from the config."""
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["config: expected a JSON object"])
    command = raw.get("command")
    if command not in COMMANDS:
        _problem(problems, "command", f"must be one of {list(COMMANDS)}, got {command!r}")
        raise ConfigError(problems)

    seed = raw.get("seed", 0)
    if seed_override is not None:
        seed = seed_override
    if isinstance(seed, bool) or not isinstance(seed, int):
        _problem(problems, "seed", f"expected an integer, got {seed!r}")
        seed = 0

    d = int(_get_number(raw, "d", problems, default=1, minimum=1) or 1)
    t = _get_number(raw, "t", problems, default=1.0, exclusive_min=0.0)
    proxy_c = _get_number(raw, "proxy.c", problems, default=1.0, exclusive_min=0.0, maximum=1.0)
    start = _parse_start(raw, d, problems)

    field_spec = _parse_field(raw, "field", d, problems)
    if command in ("series", "simulate", "stability") and field_spec is None:
        if "field" not in raw:
            _problem(problems, "field", "missing required value")

    perturbation = None
    if command == "stability":
        p = raw.get("perturbation")
        if not isinstance(p, dict):
            _problem(problems, "perturbation", "missing required value")
        else:
            fam = p.get("family")
            if fam not in PERTURBATION_FAMILIES:
                _problem(problems, "perturbation.family",
                         f"unknown family {fam!r}; known: {list(PERTURBATION_FAMILIES)}")
            eps = p.get("epsilons", [0.01, 0.02, 0.05, 0.1])
            if not (isinstance(eps, list) and eps and
                    all(isinstance(e, (int, float)) and e > 0 for e in eps)):
                _problem(problems, "perturbation.epsilons", "expected a list of positive numbers")
            q = p.get("q")
            if q is not None and q != "inf":
                if not isinstance(q, (int, float)):
                    _problem(problems, "perturbation.q", f"expected a number or 'inf', got {q!r}")
                elif q <= 4 * d:
                    _problem(problems, "perturbation.q",
                             f"the stability bound requires q > 4d = {4 * d}, got {q}")
            perturbation = p

    grid = _parse_grid(raw, d, t, proxy_c or 1.0, start, problems) \
        if command in ("proxy-eval", "series", "simulate", "stability") else None
    scheme = _parse_scheme(raw, problems, seed) if command in ("series", "stability") else None
    if scheme is not None and d > 1 and scheme.space_rule == "gauss-hermite":
        _problem(problems, "scheme.space_rule", "gauss-hermite needs d = 1; use monte-carlo")
    order = int(_get_number(raw, "scheme.order", problems, default=2, minimum=0) or 2)

    mc = None
    if command in ("simulate", "stability"):
        n_paths = int(_get_number(raw, "mc.n_paths", problems, default=100_000, minimum=100) or 100_000)
        n_steps = int(_get_number(raw, "mc.n_steps", problems, default=200, minimum=1) or 200)
        n_blocks = int(_get_number(raw, "mc.n_blocks", problems, default=32, minimum=2) or 32)
        n_boot = int(_get_number(raw, "mc.n_boot", problems, default=200, minimum=8) or 200)
        try:
            mc = MCConfig(n_paths=n_paths, n_steps=n_steps, n_blocks=n_blocks,
                          n_boot=n_boot, seed=seed)
        except ValueError as exc:
            _problem(problems, "mc", str(exc))

    method = raw.get("method", "series")
    if command == "stability" and method not in ("series", "monte-carlo"):
        _problem(problems, "method", f"must be 'series' or 'monte-carlo', got {method!r}")

    c_used = _get_number(raw, "stability.c_used", problems, default=0.5,
                         exclusive_min=0.0, maximum=1.0) or 0.5
    threshold = _get_number(raw, "stability.threshold", problems, default=1e-12,
                            exclusive_min=0.0) or 1e-12
    sampling = NormSampling(
        box_radius=_get_number(raw, "stability.sampling.box_radius", problems,
                               default=4.0, exclusive_min=0.0) or 4.0,
        n_pairs=int(_get_number(raw, "stability.sampling.n_pairs", problems,
                                default=4000, minimum=1) or 4000),
        resolution=int(_get_number(raw, "stability.sampling.resolution", problems,
                                   default=121, minimum=2) or 121),
        seed=seed,
    )

    report_source = None
    if command == "report":
        report_source = raw.get("report", {}).get("source")
        if not report_source:
            _problem(problems, "report.source", "missing path to a stability report JSON")

    if problems:
        raise ConfigError(problems)

    normalized = dict(raw)
    normalized["seed"] = seed
    return ExperimentConfig(
        raw=normalized, command=command, seed=seed, out_dir=raw.get("out_dir"),
        d=d, t=t, start=start, proxy_c=proxy_c, field_spec=field_spec,
        perturbation=perturbation, grid=grid, scheme=scheme, order=order, mc=mc,
        method=method, c_used=c_used, threshold=threshold, sampling=sampling,
        report_source=report_source,
    )


def load_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# artifact writing
# ---------------------------------------------------------------------------

def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(format(float(v), _FMT) for v in row) + "\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _build_field_from_spec(spec, d):
    overrides = {k: spec[k] for k in ("gamma", "kappa", "k1", "k2", "lam") if k in spec}
    return build_field(d, spec["sigma"], spec.get("drift", {"family": "zero"}), **overrides)


def _run_proxy_eval(cfg: ExperimentConfig, out: Path):
    nodes = cfg.grid.nodes()
    vals = proxy_density(cfg.proxy_c, 1, cfg.t, cfg.start.vector, nodes)
    rows = [(cfg.t, n[0], n[1], v) for n, v in zip(nodes, vals)]
    _write_csv(out / "proxy_eval.csv", "t,x,y,value", rows)
    return ["proxy_eval.csv"]


def _run_series(cfg: ExperimentConfig, out: Path):
    fld = _build_field_from_spec(cfg.field_spec, cfg.d)
    nodes = cfg.grid.nodes()
    rows, term_rows = [], []
    for n in nodes:
        target = PhasePoint([n[0]], [n[1]])
        res = parametrix_series(fld, cfg.t, cfg.start, target, cfg.order, cfg.scheme)
        rows.append((cfg.t, n[0], n[1], res.value, res.tail_estimate))
        for r, (term, bound) in enumerate(zip(res.terms, res.bound_terms)):
            term_rows.append((cfg.t, n[0], n[1], r, term, bound))
    _write_csv(out / "series.csv", "t,x,y,value,tail_estimate", rows)
    _write_csv(out / "series_terms.csv", "t,x,y,r,term,bound", term_rows)
    return ["series.csv", "series_terms.csv"]


def _run_simulate(cfg: ExperimentConfig, out: Path):
    fld = _build_field_from_spec(cfg.field_spec, cfg.d)
    dg = mc_density(fld, cfg.start, cfg.t, cfg.mc.n_paths, cfg.mc.n_steps,
                    cfg.grid, cfg.seed, n_blocks=cfg.mc.n_blocks, n_boot=cfg.mc.n_boot)
    dg.to_csv(out / "density.csv")
    dg.to_json(out / "density.json")
    return ["density.csv", "density.json"]


def _run_stability(cfg: ExperimentConfig, out: Path):
    fld = _build_field_from_spec(cfg.field_spec, cfg.d)
    p = cfg.perturbation
    q = p.get("q")
    q = math.inf if q in (None, "inf") else float(q)
    extra = {k: p[k] for k in ("width", "center", "direction") if k in p}
    rep = stability_report(
        fld, p["family"], p.get("epsilons", [0.01, 0.02, 0.05, 0.1]), cfg.t, cfg.start,
        cfg.grid, method=cfg.method, q=q, c_used=cfg.c_used, sampling=cfg.sampling,
        order=cfg.order, scheme=cfg.scheme, mc=cfg.mc, threshold=cfg.threshold, **extra,
    )
    rep.to_json(out / "stability_report.json")
    rep.to_csv(out / "stability_grid.csv")
    return ["stability_report.json", "stability_grid.csv"]


def render_report(source) -> str:
    with open(source) as fh:
        rep = json.load(fh)
    lines = [
        f"stability report (schema {rep['schema_version']})",
        f"family={rep['family']} method={rep['method']} t={rep['t']} c_used={rep['c_used']}",
        f"delta_total={rep['norms']['delta_total']:.6g} "
        f"(sigma: {rep['norms']['delta_sigma_gamma']:.6g}, drift: {rep['norms']['delta_b_q']:.6g})",
        "epsilon sweep (epsilon -> C_empirical):",
    ]
    for eps, c in rep["epsilon_sweep"]:
        lines.append(f"  {eps:g} -> {c:.6g}")
    lines.append(f"log-log slope of sup|p - p_eps| vs epsilon: {rep['slope']:.4f}")
    lines.append(f"C_empirical (largest epsilon): {rep['C_empirical']:.6g}")
    return "\n".join(lines) + "\n"


def _run_report(cfg: ExperimentConfig, out: Path):
    text = render_report(cfg.report_source)
    (out / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return ["summary.txt"]


_RUNNERS = {
    "proxy-eval": _run_proxy_eval,
    "series": _run_series,
    "simulate": _run_simulate,
    "stability": _run_stability,
    "report": _run_report,
}


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Execute the configured command and write artifacts plus the manifest."""
    start_time = time.monotonic()
    out = Path(out_dir or cfg.out_dir or os.environ.get(OUT_ENV, "."))
    out.mkdir(parents=True, exist_ok=True)

    canonical = cfg.canonical()
    (out / "config.json").write_text(canonical)
    names = _RUNNERS[cfg.command](cfg, out)

    import scipy

    manifest = {
        "schema_version": 1,
        "command": cfg.command,
        "seed": cfg.seed,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "versions": {
            "kolmodens": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
        "artifacts": [{"name": n, "sha256": _sha256(out / n)} for n in sorted(names)],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    (out / "timing.json").write_text(json.dumps(
        {"wall_time_seconds": time.monotonic() - start_time}) + "\n")
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kolmodens",
        description="Transition densities of degenerate Kolmogorov diffusions: "
                    "proxy evaluation, parametrix series, Monte Carlo, and "
                    "perturbation-stability experiments.",
    )
    parser.add_argument("--config", required=True, help="path to the JSON experiment config")
    parser.add_argument("--out", default=None, help=f"output directory (default: config out_dir, then ${OUT_ENV}, then cwd)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--threads", type=int, default=None, help="cap worker threads (results are identical for any value)")
    args = parser.parse_args(argv)

    set_max_threads(args.threads)
    try:
        raw = load_config(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = validate_config(raw, seed_override=args.seed)
    except ConfigError as exc:
        print("invalid config:", file=sys.stderr)
        for p in exc.problems:
            print(f"  {p}", file=sys.stderr)
        return 2
    try:
        manifest = run_experiment(cfg, out_dir=args.out)
    except KolmodensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"command": cfg.command, "artifacts": [a["name"] for a in manifest["artifacts"]]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
