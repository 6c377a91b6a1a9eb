"""Domain types shared across the package: time grids, per-device
power-energy envelopes, polytopes in aggregate-power space, fleets, and the
seeded synthetic fleet generator.

Sign convention: device power is grid-side consumption in kW (charging
positive). Energy values are cumulative grid-side kWh measured from the start
of the horizon, so every profile starts at cumulative energy zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

DER_KINDS = ("ev", "dess", "pv")


class StructuralError(ValueError):
    """Malformed inputs (wrong lengths, bad counts) as opposed to an
    envelope that is well-formed but infeasible."""


@dataclass(frozen=True)
class TimeGrid:
    """Discretization of the scheduling horizon into T slots of delta_t hours."""

    T: int
    delta_t: float = 1.0

    def __post_init__(self):
        if not isinstance(self.T, (int, np.integer)) or self.T < 1:
            raise StructuralError(f"T must be a positive integer, got {self.T!r}")
        if not (self.delta_t > 0) or not math.isfinite(self.delta_t):
            raise StructuralError(f"delta_t must be positive, got {self.delta_t!r}")

    @property
    def horizon_hours(self) -> float:
        return self.T * self.delta_t


def _as_profile(v, T: int, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (T,):
        raise StructuralError(f"{name} must have length {T}, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise StructuralError(f"{name} must be finite")
    a = a.copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DerEnvelope:
    """Feasible power profiles of one device.

    p is feasible iff p_lo <= p <= p_hi slot-wise and the running energy
    delta_t * cumsum(p) stays within [e_lo, e_hi] at every slot.
    """

    p_lo: np.ndarray
    p_hi: np.ndarray
    e_lo: np.ndarray
    e_hi: np.ndarray
    kind: str = "generic"

    @classmethod
    def build(cls, p_lo, p_hi, e_lo, e_hi, grid: TimeGrid, kind: str = "generic") -> "DerEnvelope":
        T = grid.T
        env = cls(
            _as_profile(p_lo, T, "p_lo"),
            _as_profile(p_hi, T, "p_hi"),
            _as_profile(e_lo, T, "e_lo"),
            _as_profile(e_hi, T, "e_hi"),
            kind,
        )
        report = validate_envelope(env, grid)
        if not report.ok:
            raise ValueError(f"infeasible envelope: {report.message}")
        return env

    @property
    def T(self) -> int:
        return self.p_lo.shape[0]


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    message: str = ""


def validate_envelope(env: DerEnvelope, grid: TimeGrid) -> ValidationReport:
    """Check bound ordering and feasibility of an envelope.

    Feasibility is decided by an exact interval forward pass: the set of
    reachable cumulative energies at each slot is an interval, so the
    envelope admits a profile iff no intersection with [e_lo, e_hi] is
    empty along the way. Reports name the first violated slot (1-based).
    """
    T = grid.T
    for name in ("p_lo", "p_hi", "e_lo", "e_hi"):
        a = getattr(env, name)
        if a.shape != (T,):
            raise StructuralError(f"{name} has length {a.shape[0]}, grid expects {T}")

    for t in range(T):
        if env.p_lo[t] > env.p_hi[t]:
            return ValidationReport(False, f"p_lo > p_hi at t={t + 1}")
        if env.e_lo[t] > env.e_hi[t]:
            return ValidationReport(False, f"e_lo > e_hi at t={t + 1}")

    lo, hi = 0.0, 0.0
    dt = grid.delta_t
    for t in range(T):
        lo = max(lo + dt * env.p_lo[t], env.e_lo[t])
        hi = min(hi + dt * env.p_hi[t], env.e_hi[t])
        if lo > hi + 1e-9 * max(1.0, abs(lo), abs(hi)):
            return ValidationReport(False, f"infeasible at t={t + 1}")
    return ValidationReport(True)


def envelope_rows(env: DerEnvelope, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """H-representation [I; -I; dt*L; -dt*L] p <= [p_hi; -p_lo; e_hi; -e_lo]
    of one envelope, where L is the lower-triangular all-ones matrix."""
    T = grid.T
    eye = np.eye(T)
    tri = np.tri(T) * grid.delta_t
    D = np.vstack([eye, -eye, tri, -tri])
    f = np.concatenate([env.p_hi, -env.p_lo, env.e_hi, -env.e_lo])
    return D, f


def is_binary_direction(u: np.ndarray) -> bool:
    u = np.asarray(u)
    return u.ndim == 1 and np.all((u == 0) | (u == 1)) and bool(np.any(u == 1))


@dataclass(frozen=True)
class Polytope:
    """Aggregate-power polytope {P : A P <= b}.

    For prototype-tagged polytopes every row of A is +u or -u for some
    nonzero binary u, and in this package those u are contiguous slot
    windows. b may be None for a bare template whose bounds are not yet
    initialized.
    """

    A: np.ndarray
    b: np.ndarray | None = None
    tag: str = "general"

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        if self.b is not None:
            b = np.asarray(self.b, dtype=float)
            if b.shape != (A.shape[0],):
                raise StructuralError("b length does not match row count")
            b.setflags(write=False)
            object.__setattr__(self, "b", b)

    @property
    def T(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def with_bounds(self, b) -> "Polytope":
        return Polytope(self.A, np.asarray(b, dtype=float), self.tag)

    def contains(self, P: np.ndarray, tol: float = 1e-7) -> bool:
        if self.b is None:
            raise ValueError("polytope has no bounds")
        scale = np.maximum(1.0, np.abs(self.b))
        return bool(np.all(self.A @ P <= self.b + tol * scale))


@dataclass(frozen=True)
class FleetSpec:
    """A time grid plus the envelopes of every device in the fleet."""

    grid: TimeGrid
    ders: tuple[DerEnvelope, ...]

    def __post_init__(self):
        if len(self.ders) < 1:
            raise StructuralError("fleet must contain at least one DER")
        for env in self.ders:
            if env.T != self.grid.T:
                raise StructuralError("all envelopes must share the grid horizon")
        object.__setattr__(self, "ders", tuple(self.ders))

    @property
    def N(self) -> int:
        return len(self.ders)


@dataclass(frozen=True)
class GeneratorConfig:
    """Distribution parameters for the synthetic fleet generator.

    Hours are wall-clock; the horizon starts at start_hour and slots wrap
    around midnight. Values produce overnight-charging EV envelopes and a
    midday PV hump.
    """

    start_hour: float = 18.0
    ev_rated_kw: float = 7.0
    ev_capacity_kwh: float = 50.0
    ev_efficiency: float = 0.95
    ev_arrival_mean: float = 18.0
    ev_arrival_std: float = 2.0
    ev_departure_mean: float = 7.0  # next morning
    ev_departure_std: float = 1.5
    ev_soc0_range: tuple[float, float] = (0.2, 0.6)
    ev_soc_target: float = 0.9
    dess_rated_kw: float = 10.0
    dess_capacity_kwh: float = 80.0
    dess_efficiency_range: tuple[float, float] = (0.92, 0.97)
    dess_soc0_range: tuple[float, float] = (0.3, 0.7)
    pv_capacity_kw: float = 20.0
    pv_sign: float = 1.0


@dataclass(frozen=True)
class FleetScenario:
    """Reproducible generator output: same seed, bit-identical envelopes."""

    seed: int
    counts: dict[str, int]
    grid: TimeGrid
    config: GeneratorConfig
    fleet: FleetSpec = field(repr=False)


def pv_shape(hour: float) -> float:
    """Normalized clear-sky output at a wall-clock hour (peak 1 at noon)."""
    h = hour % 24.0
    if 6.0 <= h <= 18.0:
        return math.sin(math.pi * (h - 6.0) / 12.0)
    return 0.0


def _truncnorm(rng: np.random.Generator, mean: float, std: float, lo: float, hi: float) -> float:
    for _ in range(64):
        v = rng.normal(mean, std)
        if lo <= v <= hi:
            return v
    return min(max(mean, lo), hi)


def _slot_hours(grid: TimeGrid, start_hour: float) -> np.ndarray:
    """Start hour of each slot on an unwrapped clock (monotone increasing)."""
    return start_hour + grid.delta_t * np.arange(grid.T)


def _overlap_fraction(slot_start: float, dt: float, lo: float, hi: float) -> float:
    a = max(slot_start, lo)
    b = min(slot_start + dt, hi)
    return max(0.0, b - a) / dt


def _ev_envelope(rng: np.random.Generator, grid: TimeGrid, cfg: GeneratorConfig) -> DerEnvelope:
    dt = grid.delta_t
    slots = _slot_hours(grid, cfg.start_hour)
    end = slots[-1] + dt

    arrival = _truncnorm(rng, cfg.ev_arrival_mean, cfg.ev_arrival_std,
                         cfg.ev_arrival_mean - 3 * cfg.ev_arrival_std,
                         cfg.ev_arrival_mean + 3 * cfg.ev_arrival_std)
    departure = _truncnorm(rng, cfg.ev_departure_mean + 24.0, cfg.ev_departure_std,
                           cfg.ev_departure_mean + 24.0 - 3 * cfg.ev_departure_std,
                           cfg.ev_departure_mean + 24.0 + 3 * cfg.ev_departure_std)
    # wrap into the horizon window
    arrival = min(max(arrival, slots[0]), end)
    departure = min(max(departure, arrival + dt), end)

    soc0 = rng.uniform(*cfg.ev_soc0_range)
    p_hi = np.array([cfg.ev_rated_kw * _overlap_fraction(s, dt, arrival, departure) for s in slots])
    p_lo = np.zeros(grid.T)

    headroom = (1.0 - soc0) * cfg.ev_capacity_kwh / cfg.ev_efficiency
    e_req = (cfg.ev_soc_target - soc0) * cfg.ev_capacity_kwh / cfg.ev_efficiency
    reachable = float(dt * p_hi.sum())
    if e_req > min(reachable, headroom):
        new_req = min(reachable, headroom)
        logger.warning("EV window too short for target SoC; relaxing required energy "
                       "%.2f -> %.2f kWh", e_req, new_req)
        e_req = new_req

    cum_hi = dt * np.cumsum(p_hi)
    e_hi = np.minimum(cum_hi, e_req)
    future = dt * (np.cumsum(p_hi[::-1])[::-1] - p_hi)  # charge capability after slot t
    e_lo = np.maximum(0.0, e_req - future)
    return DerEnvelope.build(p_lo, p_hi, e_lo, e_hi, grid, kind="ev")


def _dess_envelope(rng: np.random.Generator, grid: TimeGrid, cfg: GeneratorConfig) -> DerEnvelope:
    dt = grid.delta_t
    T = grid.T
    eff = rng.uniform(*cfg.dess_efficiency_range)
    e0 = rng.uniform(*cfg.dess_soc0_range) * cfg.dess_capacity_kwh

    rated = cfg.dess_rated_kw
    p_lo = np.full(T, -rated)
    p_hi = np.full(T, rated)

    charge_room = (cfg.dess_capacity_kwh - e0) / eff  # grid kWh until full
    discharge_room = e0 * eff  # grid kWh until empty
    t = np.arange(1, T + 1)
    back = dt * rated * (T - t)  # must be able to return to zero net energy
    e_hi = np.minimum.reduce([np.full(T, charge_room), dt * rated * t, back])
    e_lo = np.maximum.reduce([np.full(T, -discharge_room), -dt * rated * t, -back])
    return DerEnvelope.build(p_lo, p_hi, e_lo, e_hi, grid, kind="dess")


def _pv_envelope(rng: np.random.Generator, grid: TimeGrid, cfg: GeneratorConfig) -> DerEnvelope:
    dt = grid.delta_t
    slots = _slot_hours(grid, cfg.start_hour)
    out = cfg.pv_capacity_kw * np.array([pv_shape(s + 0.5 * dt) for s in slots])
    p_a = cfg.pv_sign * out
    p_lo = np.minimum(p_a, 0.0)
    p_hi = np.maximum(p_a, 0.0)
    e_hi = dt * np.cumsum(p_hi)
    e_lo = dt * np.cumsum(p_lo)
    return DerEnvelope.build(p_lo, p_hi, e_lo, e_hi, grid, kind="pv")


def generate_fleet(n_ev: int, n_dess: int, n_pv: int, grid: TimeGrid, seed: int,
                   config: GeneratorConfig | None = None) -> FleetScenario:
    """Draw a reproducible synthetic fleet.

    Devices are generated in a fixed order (EVs, then DESS, then PV) from a
    single seeded stream, so regeneration with the same arguments is
    bit-identical.
    """
    for n in (n_ev, n_dess, n_pv):
        if n < 0:
            raise StructuralError("DER counts must be nonnegative")
    if n_ev + n_dess + n_pv == 0:
        raise StructuralError("fleet must contain at least one DER")
    cfg = config or GeneratorConfig()
    rng = np.random.default_rng(seed)
    ders: list[DerEnvelope] = []
    ders += [_ev_envelope(rng, grid, cfg) for _ in range(n_ev)]
    ders += [_dess_envelope(rng, grid, cfg) for _ in range(n_dess)]
    ders += [_pv_envelope(rng, grid, cfg) for _ in range(n_pv)]
    fleet = FleetSpec(grid, tuple(ders))
    return FleetScenario(seed=seed, counts={"ev": n_ev, "dess": n_dess, "pv": n_pv},
                         grid=grid, config=cfg, fleet=fleet)
