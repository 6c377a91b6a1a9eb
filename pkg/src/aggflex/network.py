"""Linearized radial power flow and the two-level aggregation framework.

The distribution feeder is modeled with the LinDistFlow equations over
squared voltages: active/reactive nodal balances, per-line voltage drops,
a fixed root voltage, and voltage limits elsewhere. Flexible nodal power
comes either from aggregator polytopes (the two-level mode) or directly
from device envelopes. The substation feasibility set is expressed as a
lifted form and fed to the same inner-approximation machinery as fleets.

Sign conventions (worked single-line example): loads are positive
consumption, line flow is oriented parent -> child, and the root injection
P0 is the power drawn from the upstream grid. For one line with impedance
(r, x) feeding a load (P, Q), the child's squared voltage is
V = 1 - 2 (r P + x Q) and P0 = P.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .approx import ApproxResult, ApproxSettings, PrototypeKind, run_inner_approx
from .core import (FleetSpec, GeneratorConfig, Polytope, StructuralError, TimeGrid,
                   envelope_rows, generate_fleet)
from .eam import FeasibleSetSpec
from .lp import LpProblem, Status, solve_lp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DistributionNetwork:
    """Radial feeder rooted at node 0 (the substation).

    Lines are (i, j, r_pu, x_pu); orientation is normalized to
    parent -> child during validation. Voltage limits are on squared
    voltages and apply to non-root nodes; the root voltage is fixed at 1.
    """

    n_nodes: int
    lines: tuple
    v_min_sq: float
    v_max_sq: float
    p_fix: np.ndarray  # (n_nodes, T) p.u.
    q_fix: np.ndarray
    tan_gamma: np.ndarray  # per node
    mva_base: float = 1.0

    def __post_init__(self):
        if len(self.lines) != self.n_nodes - 1:
            raise StructuralError("a radial network needs exactly n_nodes - 1 lines")
        if not self.v_min_sq <= self.v_max_sq:
            raise StructuralError("v_min must not exceed v_max")
        adj: dict[int, list[tuple[int, int]]] = {i: [] for i in range(self.n_nodes)}
        for k, (i, j, r, x) in enumerate(self.lines):
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise StructuralError(f"line {k} references a missing node")
            adj[i].append((j, k))
            adj[j].append((i, k))
        parent = {0: None}
        order = [0]
        seen = {0}
        stack = [0]
        oriented = list(self.lines)
        while stack:
            i = stack.pop()
            for j, k in adj[i]:
                if j in seen:
                    continue
                seen.add(j)
                parent[j] = (i, k)
                a, b_, r, x = self.lines[k]
                oriented[k] = (i, j, r, x)
                order.append(j)
                stack.append(j)
        if len(seen) != self.n_nodes:
            raise StructuralError("network is not connected (non-radial or orphan nodes)")
        object.__setattr__(self, "lines", tuple(oriented))
        object.__setattr__(self, "_parent", parent)
        for name in ("p_fix", "q_fix"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape[0] != self.n_nodes:
                raise StructuralError(f"{name} must have one row per node")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "tan_gamma", np.asarray(self.tan_gamma, dtype=float))

    @property
    def T(self) -> int:
        return self.p_fix.shape[1]

    @property
    def kw_base(self) -> float:
        return 1000.0 * self.mva_base


def assemble_lift(net: DistributionNetwork, grid: TimeGrid,
                  aggregators: dict[int, Polytope] | None = None,
                  fleets: dict[int, FleetSpec] | None = None,
                  agg_bounds_unit: str = "kw") -> FeasibleSetSpec:
    """Lifted substation feasibility set over the feeder.

    Exactly one of `aggregators` (node -> polytope over that node's
    flexible power) or `fleets` (node -> device envelopes, replacing the
    polytopes with raw device rows) must be given. Fleet/polytope power is
    in kW unless agg_bounds_unit='pu'; network quantities are p.u. on
    net.mva_base.
    """
    if (aggregators is None) == (fleets is None):
        raise ValueError("provide exactly one of aggregators or fleets")
    if grid.T != net.T:
        raise StructuralError("network load profiles do not match the grid horizon")
    T = grid.T
    n = net.n_nodes
    L = len(net.lines)
    flex_nodes = sorted((aggregators or fleets).keys())
    for i in flex_nodes:
        if not 0 <= i < n:
            raise StructuralError(f"aggregator node {i} does not exist")
    a_idx = {node: k for k, node in enumerate(flex_nodes)}
    n_agg = len(flex_nodes)
    scale = 1.0 / net.kw_base if agg_bounds_unit == "kw" else 1.0

    n_der = 0
    der_slices: dict[int, slice] = {}
    if fleets is not None:
        for node in flex_nodes:
            fl = fleets[node]
            if fl.grid.T != T:
                raise StructuralError("fleet horizon does not match the grid")
            der_slices[node] = slice(n_der, n_der + fl.N)
            n_der += fl.N

    # variable layout (entity-major, slot-minor)
    def span(count):
        nonlocal offset
        s = slice(offset, offset + count * T)
        offset += count * T
        return s

    offset = 0
    s_pl = span(L)      # line active flows
    s_ql = span(L)      # line reactive flows
    s_v = span(n)       # squared voltages
    s_pf = span(n_agg)  # nodal flexible active power
    s_qf = span(n_agg)  # nodal flexible reactive power
    s_der = span(n_der) if n_der else None
    n_x = offset

    def var(sl: slice, ent: int, t: int) -> int:
        return sl.start + ent * T + t

    children: dict[int, list[int]] = {i: [] for i in range(n)}
    parent_line: dict[int, int] = {}
    for k, (i, j, r, x) in enumerate(net.lines):
        children[i].append(k)
        parent_line[j] = k

    rows_i: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    rhs: list[float] = []
    r_count = 0

    def add(entries, b):
        nonlocal r_count
        for col, v in entries:
            rows_i.append(r_count)
            cols.append(col)
            vals.append(v)
        rhs.append(b)
        r_count += 1

    # root balance rows become C (P0 = flows out of root + root loads)
    C_entries = []
    for t in range(T):
        ent = [(var(s_pl, k, t), 1.0) for k in children[0]]
        if 0 in a_idx:
            ent.append((var(s_pf, a_idx[0], t), 1.0))
        C_entries.append(ent)

    # nodal active balance, non-root: -P_parent + sum P_child + flex = -p_fix
    for i in range(1, n):
        for t in range(T):
            ent = [(var(s_pl, parent_line[i], t), -1.0)]
            ent += [(var(s_pl, k, t), 1.0) for k in children[i]]
            if i in a_idx:
                ent.append((var(s_pf, a_idx[i], t), 1.0))
            add(ent, -net.p_fix[i, t])
    # nodal reactive balance, non-root
    for i in range(1, n):
        for t in range(T):
            ent = [(var(s_ql, parent_line[i], t), -1.0)]
            ent += [(var(s_ql, k, t), 1.0) for k in children[i]]
            if i in a_idx:
                ent.append((var(s_qf, a_idx[i], t), 1.0))
            add(ent, -net.q_fix[i, t])
    # voltage drops: V_i - V_j - 2 r P - 2 x Q = 0
    for k, (i, j, r, x) in enumerate(net.lines):
        for t in range(T):
            add([(var(s_v, i, t), 1.0), (var(s_v, j, t), -1.0),
                 (var(s_pl, k, t), -2.0 * r), (var(s_ql, k, t), -2.0 * x)], 0.0)
    # constant power-factor coupling of flexible power
    for node in flex_nodes:
        a = a_idx[node]
        for t in range(T):
            add([(var(s_qf, a, t), 1.0), (var(s_pf, a, t), -net.tan_gamma[node])], 0.0)
    # root voltage
    for t in range(T):
        add([(var(s_v, 0, t), 1.0)], 1.0)
    # device-level definition of nodal flexible power
    if fleets is not None:
        for node in flex_nodes:
            a = a_idx[node]
            for t in range(T):
                ent = [(var(s_pf, a, t), 1.0)]
                ent += [(var(s_der, der_slices[node].start + d, t), -1.0)
                        for d in range(fleets[node].N)]
                add(ent, 0.0)

    E = sp.csr_matrix((vals, (rows_i, cols)), shape=(r_count, n_x))
    g = np.array(rhs)

    # inequalities: voltage limits, then flexibility rows
    rows_i, cols, vals, rhs = [], [], [], []
    r_count = 0
    for i in range(1, n):
        for t in range(T):
            add([(var(s_v, i, t), 1.0)], net.v_max_sq)
            add([(var(s_v, i, t), -1.0)], -net.v_min_sq)
    if aggregators is not None:
        for node in flex_nodes:
            poly = aggregators[node]
            if poly.b is None:
                raise ValueError(f"aggregator polytope at node {node} has no bounds")
            if poly.T != T:
                raise StructuralError("aggregator polytope horizon mismatch")
            a = a_idx[node]
            for row, bound in zip(poly.A, poly.b):
                ent = [(var(s_pf, a, t), float(row[t])) for t in np.nonzero(row)[0]]
                add(ent, float(bound) * scale)
    else:
        for node in flex_nodes:
            fl = fleets[node]
            for d, env in enumerate(fl.ders):
                Dn, fn = envelope_rows(env, grid)
                base = der_slices[node].start + d
                for rr, bound in zip(Dn, fn):
                    ent = [(var(s_der, base, t), float(rr[t])) for t in np.nonzero(rr)[0]]
                    add(ent, float(bound) * scale)

    D = sp.csr_matrix((vals, (rows_i, cols)), shape=(r_count, n_x))
    f = np.array(rhs)

    rows_i, cols, vals = [], [], []
    for t, ent in enumerate(C_entries):
        for col, v in ent:
            rows_i.append(t)
            cols.append(col)
            vals.append(v)
    C = sp.csr_matrix((vals, (rows_i, cols)), shape=(T, n_x))
    h = -net.p_fix[0].copy()

    meta = {
        "lines": s_pl, "lines_q": s_ql, "voltages": s_v,
        "flex_nodes": flex_nodes,
        "pflex": {node: slice(s_pf.start + a_idx[node] * T, s_pf.start + (a_idx[node] + 1) * T)
                  for node in flex_nodes},
        "kw_base": net.kw_base if agg_bounds_unit == "kw" else 1.0,
    }
    if fleets is not None:
        meta["der_slices"] = der_slices
    return FeasibleSetSpec(T=T, n_x=n_x, C=C, h=h, E=E, g=g, D=D, f=f, meta=meta)


def substation_support(lift: FeasibleSetSpec, direction: np.ndarray) -> float:
    """Support of the substation set in a direction (one LP over the lift)."""
    from .eam import spec_support

    return spec_support(lift, direction)


def check_lift_feasible(lift: FeasibleSetSpec) -> bool:
    """Whether any network-feasible operation exists."""
    from .eam import membership_witness

    prob = LpProblem(c=np.zeros(lift.n_x), A_ub=lift.D, b_ub=lift.f,
                     A_eq=lift.E, b_eq=lift.g)
    return solve_lp(prob).status is Status.OPTIMAL


def aggregator_profiles(lift: FeasibleSetSpec, x: np.ndarray) -> dict[int, np.ndarray]:
    """Per-aggregator flexible power (kW) from a lift solution vector."""
    kw = lift.meta.get("kw_base", 1.0)
    return {node: x[sl] * kw for node, sl in lift.meta["pflex"].items()}


@dataclass
class DoubleApproxResult:
    aggregator_results: dict[int, ApproxResult]
    substation: ApproxResult
    lift: FeasibleSetSpec

    @property
    def certified_inner(self) -> bool:
        return (self.substation.certified_inner
                and all(r.certified_inner for r in self.aggregator_results.values()))


def double_inner_approx(fleets: dict[int, FleetSpec], net: DistributionNetwork,
                        agg_kind: PrototypeKind | str, sub_kind: PrototypeKind | str,
                        settings: ApproxSettings | None = None,
                        agg_settings: ApproxSettings | None = None) -> DoubleApproxResult:
    """Two-level construction: one inner polytope per aggregator fleet, then
    an inner polytope of the substation set that treats those polytopes as
    the flexibility at their nodes. Points of the substation polytope can be
    split into aggregator profiles, each of which splits into device
    profiles."""
    settings = settings or ApproxSettings()
    agg_settings = agg_settings or settings
    grid = next(iter(fleets.values())).grid
    agg_results: dict[int, ApproxResult] = {}
    for node in sorted(fleets):
        logger.info("aggregator %d: inner approximation (%s)", node, agg_kind)
        agg_results[node] = run_inner_approx(fleets[node], agg_kind, agg_settings)
    polys = {node: r.polytope for node, r in agg_results.items()}
    lift = assemble_lift(net, grid, aggregators=polys)
    logger.info("substation level: inner approximation (%s)", sub_kind)
    sub = run_inner_approx(lift, sub_kind, settings, grid=grid)
    return DoubleApproxResult(aggregator_results=agg_results, substation=sub, lift=lift)


# ------------------------------------------------------- bundled feeder ----

# Classic 12.66 kV 33-node radial test feeder: (from, to, r_ohm, x_ohm) with
# nodes renumbered from 0, and static loads (kW, kvar) per node.
FEEDER33_KV = 12.66
FEEDER33_LINES = (
    (0, 1, 0.0922, 0.0470), (1, 2, 0.4930, 0.2511), (2, 3, 0.3660, 0.1864),
    (3, 4, 0.3811, 0.1941), (4, 5, 0.8190, 0.7070), (5, 6, 0.1872, 0.6188),
    (6, 7, 0.7114, 0.2351), (7, 8, 1.0300, 0.7400), (8, 9, 1.0440, 0.7400),
    (9, 10, 0.1966, 0.0650), (10, 11, 0.3744, 0.1238), (11, 12, 1.4680, 1.1550),
    (12, 13, 0.5416, 0.7129), (13, 14, 0.5910, 0.5260), (14, 15, 0.7463, 0.5450),
    (15, 16, 1.2890, 1.7210), (16, 17, 0.7320, 0.5740), (1, 18, 0.1640, 0.1565),
    (18, 19, 1.5042, 1.3554), (19, 20, 0.4095, 0.4784), (20, 21, 0.7089, 0.9373),
    (2, 22, 0.4512, 0.3083), (22, 23, 0.8980, 0.7091), (23, 24, 0.8960, 0.7011),
    (5, 25, 0.2030, 0.1034), (25, 26, 0.2842, 0.1447), (26, 27, 1.0590, 0.9337),
    (27, 28, 0.8042, 0.7006), (28, 29, 0.5075, 0.2585), (29, 30, 0.9744, 0.9630),
    (30, 31, 0.3105, 0.3619), (31, 32, 0.3410, 0.5302),
)
FEEDER33_LOADS_KW = (
    0, 100, 90, 120, 60, 60, 200, 200, 60, 60, 45, 60, 60, 120, 60, 60, 60,
    90, 90, 90, 90, 90, 90, 420, 420, 60, 60, 60, 120, 200, 150, 210, 60,
)
FEEDER33_LOADS_KVAR = (
    0, 60, 40, 80, 30, 20, 100, 100, 20, 20, 30, 35, 35, 80, 10, 20, 20,
    40, 40, 40, 40, 40, 50, 200, 200, 25, 25, 20, 70, 600, 70, 100, 40,
)

# Normalized daily demand shape by wall-clock hour (peak 1.0 at 19:00).
DAILY_LOAD_SHAPE = (
    0.62, 0.60, 0.58, 0.57, 0.57, 0.58, 0.62, 0.68, 0.74, 0.78, 0.80, 0.82,
    0.83, 0.82, 0.80, 0.80, 0.83, 0.88, 0.95, 1.00, 0.98, 0.90, 0.78, 0.68,
)


def make_feeder33(grid: TimeGrid, mva_base: float = 1.0, load_multiplier: float = 3.0,
                  impedance_divider: float = 3.0, v_min: float = 0.90,
                  v_max: float = 1.10, start_hour: float = 18.0) -> DistributionNetwork:
    """Bundled 33-node feeder: loads scaled up, impedances scaled down, and
    the stated voltage band, with loads modulated by a daily shape."""
    z_base = FEEDER33_KV ** 2 / mva_base
    lines = tuple(
        (i, j, r / impedance_divider / z_base, x / impedance_divider / z_base)
        for (i, j, r, x) in FEEDER33_LINES
    )
    T = grid.T
    shape = np.array([DAILY_LOAD_SHAPE[int(start_hour + t * grid.delta_t) % 24]
                      for t in range(T)])
    kw_base = 1000.0 * mva_base
    p_fix = np.outer(np.array(FEEDER33_LOADS_KW, dtype=float) * load_multiplier / kw_base, shape)
    q_fix = np.outer(np.array(FEEDER33_LOADS_KVAR, dtype=float) * load_multiplier / kw_base, shape)
    return DistributionNetwork(
        n_nodes=33, lines=lines, v_min_sq=v_min ** 2, v_max_sq=v_max ** 2,
        p_fix=p_fix, q_fix=q_fix, tan_gamma=np.zeros(33), mva_base=mva_base)


def feeder33_aggregator_nodes(n_nodes: int = 33) -> list[int]:
    """Every even-indexed non-root node (half of the feeder nodes)."""
    return [i for i in range(2, n_nodes, 2)]


def make_feeder33_scenario(grid: TimeGrid, seed: int = 0, ev_per_agg: int = 4,
                           dess_per_agg: int = 1, pv_per_agg: int = 1,
                           mva_base: float = 1.0,
                           config: GeneratorConfig | None = None):
    """Bundled feeder plus one seeded fleet per aggregator node."""
    net = make_feeder33(grid, mva_base=mva_base,
                        start_hour=(config or GeneratorConfig()).start_hour)
    fleets = {
        node: generate_fleet(ev_per_agg, dess_per_agg, pv_per_agg, grid,
                             seed=seed * 1000 + node, config=config).fleet
        for node in feeder33_aggregator_nodes()
    }
    return net, fleets
