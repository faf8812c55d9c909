"""Independent density oracle: Euler paths and kernel density estimation.

The scheme advances the noisy component with a plain Euler-Maruyama step and
transports the degenerate component with the trapezoid of consecutive x
values, which integrates the linear subsystem exactly and respects the t^(3/2)
spread of the integrated coordinate.  Paths are simulated in fixed-size chunks
whose RNG streams come from seed-splitting, so results do not depend on how
chunks are scheduled across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import EvaluationError
from .model import CoefficientField, PhasePoint
from .parallel import ordered_sum, parallel_map

CHUNK_PATHS = 16384  # fixed chunk size; changing it changes RNG streams


@dataclass(frozen=True)
class PathGrid:
    """One simulated trajectory on a uniform time grid."""

    n_steps: int
    dt: float
    states: np.ndarray  # (n_steps + 1, 2d), rows are (x..., y...)
    seed: int

    def __post_init__(self):
        if self.states.shape[0] != self.n_steps + 1:
            raise ValueError("states must hold n_steps + 1 rows")

    def as_phase_points(self):
        return [PhasePoint.from_vector(row) for row in self.states]

    @property
    def terminal(self) -> PhasePoint:
        return PhasePoint.from_vector(self.states[-1])


@dataclass(frozen=True)
class GridSpec:
    """Rectangular evaluation grid in the (x, y) plane (d = 1)."""

    x_min: float
    x_max: float
    n_x: int
    y_min: float
    y_max: float
    n_y: int

    def __post_init__(self):
        if self.n_x < 2 or self.n_y < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("grid bounds must be increasing")

    @property
    def x_axis(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def y_axis(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.n_y)

    def nodes(self) -> np.ndarray:
        """All grid nodes as (n_x * n_y, 2), x-major."""
        xx, yy = np.meshgrid(self.x_axis, self.y_axis, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=-1)

    @classmethod
    def centered(cls, center, spans, n_x: int, n_y: int) -> "GridSpec":
        cx, cy = float(center[0]), float(center[1])
        sx, sy = float(spans[0]), float(spans[1])
        return cls(cx - sx, cx + sx, n_x, cy - sy, cy + sy, n_y)


@dataclass(frozen=True)
class DensityGrid:
    """Kernel density estimate of the terminal law on a rectangular grid."""

    t: float
    x_axis: np.ndarray
    y_axis: np.ndarray
    values: np.ndarray         # (n_x, n_y)
    stderr: np.ndarray         # bootstrap pointwise standard errors
    bandwidth: tuple
    n_paths: int
    mass: float
    mass_tolerance: float

    def to_rows(self):
        for i, x in enumerate(self.x_axis):
            for j, y in enumerate(self.y_axis):
                yield self.t, x, y, self.values[i, j], self.stderr[i, j]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,x,y,value,stderr\n")
            for row in self.to_rows():
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "t": self.t,
            "x_axis": self.x_axis.tolist(),
            "y_axis": self.y_axis.tolist(),
            "values": self.values.tolist(),
            "stderr": self.stderr.tolist(),
            "bandwidth": list(self.bandwidth),
            "n_paths": self.n_paths,
            "mass": self.mass,
            "mass_tolerance": self.mass_tolerance,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# path simulation
# ---------------------------------------------------------------------------

def _evolve(fields, starts, dt, n_steps, rng, record=False):
    """Advance one or more fields through shared noise increments.

    starts is a list of (n, d)-pairs [(x, y), ...], one per field; all fields
    see the same standard normal draws (common random numbers).
    """
    d = fields[0].d
    xs = [np.array(s[0], dtype=float) for s in starts]
    ys = [np.array(s[1], dtype=float) for s in starts]
    sqdt = math.sqrt(dt)
    paths = [np.empty((n_steps + 1, 2 * d)) for _ in fields] if record else None
    if record:
        for p, x, y in zip(paths, xs, ys):
            p[0, :d], p[0, d:] = x, y
    for k in range(n_steps):
        xi = rng.standard_normal(size=xs[0].shape)
        for idx, fld in enumerate(fields):
            x, y = xs[idx], ys[idx]
            state = np.concatenate([x, y], axis=-1)
            drift = np.asarray(fld.b(state), dtype=float)
            sig = np.asarray(fld.sigma(state), dtype=float)
            x_new = x + drift * dt + np.einsum("...ij,...j->...i", sig, xi) * sqdt
            y_new = y + 0.5 * (x + x_new) * dt
            if not (np.isfinite(x_new).all() and np.isfinite(y_new).all()):
                raise EvaluationError(f"simulation diverged at step {k + 1} for field {fld.name!r}")
            xs[idx], ys[idx] = x_new, y_new
            if record:
                paths[idx][k + 1, :d], paths[idx][k + 1, d:] = x_new, y_new
    if record:
        return paths
    return [np.concatenate([x, y], axis=-1) for x, y in zip(xs, ys)]


def simulate_path(field: CoefficientField, initial: PhasePoint, t: float,
                  n_steps: int, seed: int) -> PathGrid:
    """Single Euler trajectory; deterministic given (field, initial, t, n_steps, seed)."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if t <= 0:
        raise ValueError("horizon must be positive")
    dt = t / n_steps
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    paths = _evolve([field], [(initial.x, initial.y)], dt, n_steps, rng, record=True)
    return PathGrid(n_steps=n_steps, dt=dt, states=paths[0], seed=seed)


def _chunk_seeds(seed, n_paths, chunk=CHUNK_PATHS):
    n_chunks = (n_paths + chunk - 1) // chunk
    sizes = [min(chunk, n_paths - i * chunk) for i in range(n_chunks)]
    return list(zip(np.random.SeedSequence(seed).spawn(n_chunks), sizes))


def simulate_terminal_pair(fields, initial: PhasePoint, t: float, n_paths: int,
                           n_steps: int, seed: int):
    """Terminal states for several fields under common random numbers.

    Returns one (n_paths, 2d) array per field; the chunk partition is fixed,
    so the result is independent of the thread count.
    """
    if n_steps < 1 or n_paths < 1:
        raise ValueError("n_paths and n_steps must be >= 1")
    if t <= 0:
        raise ValueError("horizon must be positive")
    dt = t / n_steps
    d = fields[0].d

    def run(args):
        seq, size = args
        rng = np.random.default_rng(seq)
        starts = [(np.tile(initial.x, (size, 1)), np.tile(initial.y, (size, 1)))
                  for _ in fields]
        return _evolve(fields, starts, dt, n_steps, rng)

    results = parallel_map(run, _chunk_seeds(seed, n_paths))
    return [np.concatenate([r[i] for r in results], axis=0) for i in range(len(fields))]


def simulate_terminal(field: CoefficientField, initial: PhasePoint, t: float,
                      n_paths: int, n_steps: int, seed: int) -> np.ndarray:
    """Terminal states (n_paths, 2d) of the Euler scheme."""
    return simulate_terminal_pair([field], initial, t, n_paths, n_steps, seed)[0]


def default_n_steps(t: float) -> int:
    """Step count keeping dt <= t/200 (bias well below Monte Carlo noise)."""
    return 200


# ---------------------------------------------------------------------------
# kernel density estimation
# ---------------------------------------------------------------------------

def _kde_block(term, x_axis, y_axis, hx, hy):
    """Separable Gaussian product KDE of one sample block on the grid."""
    gx = np.exp(-0.5 * ((x_axis[None, :] - term[:, 0:1]) / hx) ** 2) / (hx * math.sqrt(2 * math.pi))
    gy = np.exp(-0.5 * ((y_axis[None, :] - term[:, 1:2]) / hy) ** 2) / (hy * math.sqrt(2 * math.pi))
    return gx.T @ gy


def kde_on_grid(terminals, grid: GridSpec, bandwidth=None, n_blocks: int = 32,
                n_boot: int = 200, boot_seed: int = 0):
    """Product-kernel density on the grid with a block-bootstrap error band.

    bandwidth defaults to the per-axis rule (std * n^(-1/6), std * n^(-1/6));
    the multiscale spread of the pair enters through the sample deviations
    themselves.  Returns (values, stderr, (hx, hy)).
    """
    term = np.asarray(terminals, dtype=float)
    if term.shape[1] != 2:
        raise ValueError("kde_on_grid handles the d = 1 plane only")
    n = term.shape[0]
    sx, sy = term[:, 0].std(ddof=1), term[:, 1].std(ddof=1)
    if sx == 0.0 or sy == 0.0:
        raise EvaluationError("degenerate sample spread: all paths identical on one axis")
    if bandwidth is None:
        bandwidth = (sx * n ** (-1 / 6), sy * n ** (-1 / 6))
    hx, hy = bandwidth

    x_axis, y_axis = grid.x_axis, grid.y_axis
    blocks = np.array_split(term, n_blocks)
    block_grids = parallel_map(lambda b: _kde_block(b, x_axis, y_axis, hx, hy), blocks)
    counts = np.array([len(b) for b in blocks], dtype=float)
    values = ordered_sum(block_grids) / n

    block_means = np.stack([g / c for g, c in zip(block_grids, counts)], axis=0)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=boot_seed, spawn_key=(915,)))
    weights = counts / n
    boot = np.empty((n_boot,) + values.shape)
    for bidx in range(n_boot):
        pick = rng.integers(0, len(blocks), size=len(blocks))
        boot[bidx] = np.einsum("b,bxy->xy", weights[pick], block_means[pick]) / weights[pick].sum()
    stderr = boot.std(axis=0, ddof=1)
    return values, stderr, (hx, hy)


def mc_density(field: CoefficientField, initial: PhasePoint, t: float, n_paths: int,
               n_steps: int, grid: GridSpec, seed: int, n_blocks: int = 32,
               n_boot: int = 200) -> DensityGrid:
    """Monte Carlo density estimate of the terminal law on the grid (d = 1)."""
    if n_paths < 100:
        raise ValueError("n_paths must be >= 100")
    if field.d != 1:
        raise ValueError("mc_density grids are two-dimensional; d = 1 only")
    term = simulate_terminal(field, initial, t, n_paths, n_steps, seed)
    values, stderr, (hx, hy) = kde_on_grid(term, grid, n_blocks=n_blocks,
                                           n_boot=n_boot, boot_seed=seed)

    x_axis, y_axis = grid.x_axis, grid.y_axis
    dxw = x_axis[1] - x_axis[0]
    dyw = y_axis[1] - y_axis[0]
    mass = float(values.sum() * dxw * dyw)
    # expected in-grid kernel mass (grid truncation), plus Riemann slack
    in_x = ndtr((x_axis[-1] - term[:, 0]) / hx) - ndtr((x_axis[0] - term[:, 0]) / hx)
    in_y = ndtr((y_axis[-1] - term[:, 1]) / hy) - ndtr((y_axis[0] - term[:, 1]) / hy)
    expected = float(np.mean(in_x * in_y))
    tol = abs(1.0 - expected) + 0.01

    return DensityGrid(t=t, x_axis=x_axis, y_axis=y_axis, values=values, stderr=stderr,
                       bandwidth=(hx, hy), n_paths=n_paths, mass=mass, mass_tolerance=tol)
