"""Accuracy diagnostics: directional widths, relative size, and interior
sampling of candidate polytopes."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import FleetSpec, Polytope
from .eam import FeasibleSetSpec, fleet_support, spec_support
from .lp import LpProblem, SolverError, solve_lp

logger = logging.getLogger(__name__)

RATIO_FLOOR = 1e-12


def support_of(obj, direction: np.ndarray) -> float:
    """Support function of a polytope, fleet, or lifted set."""
    direction = np.asarray(direction, dtype=float)
    if isinstance(obj, Polytope):
        sol = solve_lp(LpProblem(c=direction, A_ub=obj.A, b_ub=obj.b, sense="max"))
        if not sol.optimal:
            raise SolverError(f"support LP failed: {sol.status.value}")
        return sol.objective
    if isinstance(obj, FleetSpec):
        return fleet_support(obj, direction)
    if isinstance(obj, FeasibleSetSpec):
        return spec_support(obj, direction)
    raise TypeError(f"unsupported set type {type(obj)!r}")


def directional_width(obj, direction: np.ndarray) -> float:
    """Maximum extent of a set along a direction: the sum of the supports
    in +/- direction, normalized by the direction's length."""
    direction = np.asarray(direction, dtype=float)
    norm = float(np.linalg.norm(direction))
    if norm == 0:
        raise ValueError("direction must be nonzero")
    return (support_of(obj, direction) + support_of(obj, -direction)) / norm


@dataclass(frozen=True)
class DirectionSample:
    direction: np.ndarray
    width_apx: float
    width_ext: float
    ratio: float


@dataclass(frozen=True)
class RelativeSizeReport:
    seed: int
    samples: tuple[DirectionSample, ...]
    geometric_mean: float
    floored: int
    resampled: int

    @property
    def n(self) -> int:
        return len(self.samples)


def sample_binary_directions(T: int, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    """n distinct nonzero binary directions, uniform without replacement."""
    total = 2 ** T - 1
    if n > total:
        raise ValueError(f"only {total} nonzero binary directions exist for T={T}")
    seen: set[int] = set()
    out = []
    while len(out) < n:
        code = int(rng.integers(1, total + 1))
        if code in seen:
            continue
        seen.add(code)
        u = np.array([(code >> t) & 1 for t in range(T)], dtype=float)
        out.append(u)
    return out


def relative_size(apx: Polytope, ext, n_dirs: int = 50, seed: int = 0,
                  degenerate_tol: float = 1e-9) -> RelativeSizeReport:
    """Geometric mean over random binary directions of the width ratio
    between a candidate polytope and the exact set (1 means exact).

    Directions where the exact set has (numerically) zero width are
    resampled and logged; ratio values are floored before taking logs so a
    zero-width candidate direction cannot blow up the mean.
    """
    if n_dirs < 1:
        raise ValueError("need at least one direction")
    rng = np.random.default_rng(seed)
    samples: list[DirectionSample] = []
    floored = 0
    resampled = 0
    seen: set[tuple] = set()
    total = 2 ** apx.T - 1
    while len(samples) < n_dirs:
        if len(seen) >= total:
            raise SolverError("exhausted all directions while resampling degenerate widths")
        u = sample_binary_directions(apx.T, 1, rng)[0]
        key = tuple(u.astype(int))
        if key in seen:
            continue
        seen.add(key)
        w_ext = directional_width(ext, u)
        if w_ext < degenerate_tol:
            resampled += 1
            logger.info("degenerate exact width in direction %s; resampled", key)
            continue
        w_apx = directional_width(apx, u)
        ratio = w_apx / w_ext
        if ratio < RATIO_FLOOR:
            ratio = RATIO_FLOOR
            floored += 1
        samples.append(DirectionSample(u, w_apx, w_ext, ratio))
    gmean = float(np.exp(np.mean([np.log(s.ratio) for s in samples])))
    return RelativeSizeReport(seed=seed, samples=tuple(samples), geometric_mean=gmean,
                              floored=floored, resampled=resampled)


def chebyshev_center(poly: Polytope) -> np.ndarray:
    """Point maximizing the minimum row slack, normalized by row norms."""
    if poly.b is None:
        raise ValueError("polytope has no bounds")
    norms = np.linalg.norm(poly.A, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero row in polytope")
    T = poly.T
    # variables [P, s]: maximize s subject to a_j P + ||a_j|| s <= b_j
    A = np.hstack([poly.A, norms[:, None]])
    c = np.zeros(T + 1)
    c[-1] = 1.0
    sol = solve_lp(LpProblem(c=c, A_ub=A, b_ub=poly.b, sense="max"))
    if not sol.optimal:
        raise SolverError(f"center LP failed: {sol.status.value}")
    if sol.x[-1] < 0:
        raise SolverError("polytope is empty")
    return sol.x[:T].copy()


def hit_and_run(poly: Polytope, n: int, seed: int = 0, thin: int | None = None,
                burn_in: int | None = None) -> np.ndarray:
    """Interior points of a bounded polytope by hit-and-run sampling.

    Starts at the max-slack center, takes `thin` random chord steps between
    samples after a burn-in. Deterministic for a fixed seed.
    """
    if poly.b is None:
        raise ValueError("polytope has no bounds")
    T = poly.T
    thin = thin if thin is not None else max(2 * T, 10)
    burn_in = burn_in if burn_in is not None else 5 * thin
    rng = np.random.default_rng(seed)
    x = chebyshev_center(poly)
    A, b = poly.A, poly.b
    out = np.empty((n, T))
    steps = 0
    collected = 0
    total_steps = burn_in + n * thin
    while collected < n:
        d = rng.standard_normal(T)
        d /= np.linalg.norm(d)
        Ad = A @ d
        res = b - A @ x
        with np.errstate(divide="ignore"):
            hi = np.where(Ad > 1e-12, res / Ad, np.inf).min()
            lo = np.where(Ad < -1e-12, res / Ad, -np.inf).max()
        if not np.isfinite(hi) or not np.isfinite(lo):
            raise SolverError("hit-and-run requires a bounded polytope")
        if hi <= lo:
            continue
        x = x + rng.uniform(lo, hi) * d
        steps += 1
        if steps > burn_in and (steps - burn_in) % thin == 0:
            out[collected] = x
            collected += 1
        if steps > 10 * total_steps:
            raise SolverError("hit-and-run failed to mix")
    return out
