"""Iterative inner approximation of the aggregate flexibility set.

A fixed prototype matrix of signed binary row directions is selected, its
bound vector is initialized at the exact set's support values (an outer
polytope), and the bounds are then shrunk iteratively: find the binary
direction where the candidate polytope sticks out the most (a MILP with T
binaries), project the witness point back onto the exact set, and lower the
bounds active at the witness so the projected point lands on the boundary.
The loop alternates between positive and negative directions and stops when
the largest remaining gap is below the tolerance, which certifies the
polytope as an inner approximation up to that tolerance.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import FleetSpec, Polytope, TimeGrid
from .eam import FeasibleSetSpec, closest_feasible, fleet_feasible_set, init_bounds
from .lp import LpProblem, MilpProblem, SolverError, Status, solve_lp, solve_milp

logger = logging.getLogger(__name__)

TOL_ACTIVE = 1e-6


class PrototypeKind(str, enum.Enum):
    POWER = "power"
    POWER_ENERGY = "power-energy"
    ENERGY_CHANGE = "energy-change"


def build_prototype(kind: PrototypeKind | str, grid: TimeGrid) -> Polytope:
    """Bare prototype template (coefficient rows only, no bounds).

    Rows are +/- indicator vectors of contiguous slot windows:
      power          single slots,              2T rows;
      power-energy   slots plus prefixes t>=2,  4T-2 rows;
      energy-change  every window [t1, t2],     T(T+1) rows.
    Window sums are raw powers; the slot length is folded into the bounds.
    Positive rows come first, mirrored by the negated block.
    """
    kind = PrototypeKind(kind)
    T = grid.T
    rows: list[np.ndarray] = []
    if kind is PrototypeKind.POWER:
        rows = [_window(T, t, t) for t in range(1, T + 1)]
    elif kind is PrototypeKind.POWER_ENERGY:
        rows = [_window(T, t, t) for t in range(1, T + 1)]
        rows += [_window(T, 1, t) for t in range(2, T + 1)]
    else:
        rows = [_window(T, t1, t2) for t1 in range(1, T + 1) for t2 in range(t1, T + 1)]
    A = np.vstack(rows)
    return Polytope(np.vstack([A, -A]), tag=kind.value)


def _window(T: int, t1: int, t2: int) -> np.ndarray:
    u = np.zeros(T)
    u[t1 - 1:t2] = 1.0
    return u


@dataclass(frozen=True)
class GapResult:
    gap: float
    direction: np.ndarray
    witness: np.ndarray  # vertex of the candidate polytope attaining the gap


@dataclass
class IterationRecord:
    k: int
    sense: str
    gap: float
    direction: np.ndarray | None = None
    P1: np.ndarray | None = None
    P0: np.ndarray | None = None
    active_set: np.ndarray | None = None
    rows_modified: int = 0


@dataclass
class ApproxResult:
    polytope: Polytope
    b_init: np.ndarray
    trace: list[IterationRecord] = field(default_factory=list)
    certified_inner: bool = False
    modifications: int = 0

    @property
    def final_gaps(self) -> tuple[float, float]:
        pos = [r.gap for r in self.trace if r.sense == "pos"]
        neg = [r.gap for r in self.trace if r.sense == "neg"]
        return (pos[-1] if pos else -np.inf, neg[-1] if neg else -np.inf)


def big_m_for(spec: FeasibleSetSpec | FleetSpec, b0: np.ndarray | None = None,
              proto: Polytope | None = None) -> float:
    """Valid linearization constant: a bound on any slot of any profile in
    the initial polytope, padded by 10 percent."""
    if isinstance(spec, FleetSpec):
        total = sum(float(np.max(np.maximum(np.abs(e.p_lo), np.abs(e.p_hi))))
                    for e in spec.ders)
        return 1.1 * max(total, 1.0)
    if b0 is None or proto is None:
        raise ValueError("lifted sets need the initialized bounds to size M")
    single = np.abs(proto.A).sum(axis=1) == 1
    if not np.any(single):
        raise ValueError("prototype has no single-slot rows to bound profiles")
    return 1.1 * max(float(np.max(np.abs(b0[single]))), 1.0)


def gap_direction(spec: FeasibleSetSpec, proto: Polytope, b_prev: np.ndarray,
                  sense: str, M: float) -> GapResult:
    """Largest protrusion of the candidate polytope beyond the exact set
    over all nonzero binary directions, for one sense.

    The bilevel problem is flattened by dualizing the exact set's support
    LP over the lift and linearizing the binary-times-continuous products
    with big-M rows, leaving a MILP with T binaries. The duals of the lift
    equalities are free; the inequality duals are nonnegative.
    """
    if sense not in ("pos", "neg"):
        raise ValueError("sense must be 'pos' or 'neg'")
    T, n_x = spec.T, spec.n_x
    m1, m2 = spec.m_ineq, spec.m_eq
    Nc = proto.A.shape[0]
    sgn = 1.0 if sense == "pos" else -1.0

    # variable layout: [u | P1 | omega | y | lam | mu]
    iu = slice(0, T)
    n = 4 * T + m1 + m2

    c = np.zeros(n)
    c[3 * T:4 * T] = 1.0
    if m1:
        c[4 * T:4 * T + m1] = spec.f
    if m2:
        c[4 * T + m1:] = spec.g
    c[2 * T:3 * T] = spec.h

    I = sp.eye(T, format="csr")
    Ct = sp.csr_matrix(spec.C).T.tocsr()
    Dt = sp.csr_matrix(spec.D).T.tocsr() if m1 else None
    Et = sp.csr_matrix(spec.E).T.tocsr() if m2 else None

    def blk(u=None, p=None, o=None, y=None, lam=None, mu=None, rows=T):
        parts = [u, p, o, y]
        if m1:
            parts.append(lam)
        if m2:
            parts.append(mu)
        widths = [T, T, T, T] + ([m1] if m1 else []) + ([m2] if m2 else [])
        parts = [b if b is not None else sp.csr_matrix((rows, w))
                 for b, w in zip(parts, widths)]
        return sp.hstack(parts, format="csr")

    # coupling sgn*u + omega = 0, and dual feasibility C'o + D'lam + E'mu = 0
    A_eq = sp.vstack([
        blk(u=sgn * I, o=I),
        blk(o=Ct, lam=Dt, mu=Et, rows=n_x),
    ], format="csr")
    b_eq = np.zeros(T + n_x)

    # witness membership, then big-M products: y = -sgn * u o P1
    Ap = sp.csr_matrix(proto.A)
    A_ub = sp.vstack([
        blk(p=Ap, rows=Nc),
        blk(u=-M * I, y=I),
        blk(u=-M * I, y=-I),
        blk(u=M * I, p=sgn * I, y=I),
        blk(u=M * I, p=-sgn * I, y=-I),
    ], format="csr")
    b_ub = np.concatenate([b_prev, np.zeros(2 * T), np.full(2 * T, M)])

    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    if m1:
        lb[4 * T:4 * T + m1] = 0.0
    lb[iu] = 0.0
    ub[iu] = 1.0

    base = LpProblem(c=c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, lb=lb, ub=ub)
    milp = MilpProblem(base, binary_idx=tuple(range(T)), cap=max(32, T))
    sol = solve_milp(milp)
    if sol.status is Status.INFEASIBLE:
        raise SolverError("gap MILP infeasible: candidate polytope is empty")
    if not sol.optimal:
        raise SolverError(f"gap MILP failed: {sol.status.value} {sol.message}")
    u = sol.x[iu].copy()
    gap = -sol.objective
    witness = _vertex_witness(proto, b_prev, u, sense)
    return GapResult(gap=gap, direction=u, witness=witness)


def _vertex_witness(proto: Polytope, b: np.ndarray, u: np.ndarray, sense: str) -> np.ndarray:
    """Re-solve the witness as a basic solution so the active set at it has
    full rank (the MILP may return a non-vertex point of the optimal face)."""
    sol = solve_lp(LpProblem(c=u, A_ub=proto.A, b_ub=b,
                             sense="max" if sense == "pos" else "min"))
    if not sol.optimal:
        raise SolverError(f"witness LP failed: {sol.status.value}")
    return sol.x


def active_rows(proto: Polytope, b: np.ndarray, P1: np.ndarray,
                tol: float = TOL_ACTIVE) -> np.ndarray:
    """Indices of rows tight at P1, with a magnitude-scaled tolerance."""
    res = b - proto.A @ P1
    scale = np.maximum(1.0, np.abs(b))
    return np.where(res <= tol * scale)[0]


def modify_bounds(proto: Polytope, b_prev: np.ndarray, P1: np.ndarray, P0: np.ndarray,
                  active: np.ndarray, M: float | None = None) -> np.ndarray:
    """Shrink the bounds of the rows active at P1 so that P0 lies on the
    boundary of the updated polytope with at least T of them active.

    Maximizes the sum of the retained bounds subject to: no bound increases,
    the updated polytope stays nonempty (witnessed by an explicit point
    variable constrained by every row), and at least T active rows pass at
    or below P0. A second lexicographic pass breaks ties deterministically
    by preferring to keep multi-slot rows as high as possible.
    """
    J = np.asarray(active, dtype=int)
    if J.size == 0:
        raise ValueError("empty active set: the witness must be a boundary point")
    T = proto.T
    A_J = proto.A[J]
    aP0 = A_J @ P0
    if M is None:
        M = 1.1 * float(np.max(np.abs(b_prev) + np.abs(proto.A @ P0))) + 1.0

    nJ = J.size
    # variables: [b_J | z_J | P_free]
    ib = slice(0, nJ)
    iz = slice(nJ, 2 * nJ)
    ix = slice(2 * nJ, 2 * nJ + T)
    n = 2 * nJ + T

    ub_rows = []
    ub_rhs = []
    # active rows at their new bounds: a_j P_free - b_j <= 0
    row = sp.lil_matrix((nJ, n))
    row[:, ix] = sp.csr_matrix(A_J)
    row[:, ib] = -sp.eye(nJ, format="csr")
    ub_rows.append(row.tocsr())
    ub_rhs.append(np.zeros(nJ))
    # remaining rows at their previous bounds
    mask = np.ones(proto.A.shape[0], dtype=bool)
    mask[J] = False
    if np.any(mask):
        row = sp.lil_matrix((int(mask.sum()), n))
        row[:, ix] = sp.csr_matrix(proto.A[mask])
        ub_rows.append(row.tocsr())
        ub_rhs.append(b_prev[mask])
    # b_j - M z_j <= a_j P0 + M (1 - z_j)  =>  b_j + M z_j <= a_j P0 + M... rewritten:
    # a_j P0 >= b_j - M(1 - z_j)  =>  b_j + M z_j <= a_j P0 + M
    row = sp.lil_matrix((nJ, n))
    row[:, ib] = sp.eye(nJ, format="csr")
    row[:, iz] = M * sp.eye(nJ, format="csr")
    ub_rows.append(row.tocsr())
    ub_rhs.append(aP0 + M)
    # at least T certified-active rows
    row = sp.lil_matrix((1, n))
    row[0, iz] = -1.0
    ub_rows.append(row.tocsr())
    ub_rhs.append(np.array([-float(T)]))

    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    ub[ib] = b_prev[J]
    lb[iz] = 0.0
    ub[iz] = 1.0

    c = np.zeros(n)
    c[ib] = 1.0
    base = LpProblem(c=c, A_ub=sp.vstack(ub_rows, format="csr"),
                     b_ub=np.concatenate(ub_rhs), lb=lb, ub=ub, sense="max")
    milp = MilpProblem(base, binary_idx=tuple(range(nJ, 2 * nJ)), cap=max(32, nJ))
    sol = solve_milp(milp)
    if not sol.optimal:
        raise SolverError(f"bound-modification MILP failed: {sol.status.value}")

    multi = np.abs(A_J).sum(axis=1) >= 2
    if np.any(multi) and not np.all(multi):
        primary = sol.objective
        tie = 1e-9 * max(1.0, abs(primary))
        row = sp.lil_matrix((1, n))
        row[0, ib] = -1.0
        A_ub2 = sp.vstack(ub_rows + [row.tocsr()], format="csr")
        b_ub2 = np.concatenate(ub_rhs + [np.array([-(primary - tie)])])
        c2 = np.zeros(n)
        c2[np.arange(nJ)[multi]] = 1.0
        base2 = LpProblem(c=c2, A_ub=A_ub2, b_ub=b_ub2, lb=lb, ub=ub, sense="max")
        sol2 = solve_milp(MilpProblem(base2, binary_idx=tuple(range(nJ, 2 * nJ)),
                                      cap=max(32, nJ)))
        if sol2.optimal:
            sol = sol2

    b_new = b_prev.copy()
    b_new[J] = np.minimum(sol.x[ib], b_prev[J])
    return b_new


@dataclass(frozen=True)
class ApproxSettings:
    eps: float = 1e-4
    max_modifications: int = 200
    tol_active: float = TOL_ACTIVE

    def gap_trigger(self, scale: float) -> float:
        """Numerical floor below which a computed gap is treated as zero."""
        return min(self.eps / 2, max(1e-8 * max(1.0, scale), 1e-9))


def run_inner_approx(spec_or_fleet, kind: PrototypeKind | str,
                     settings: ApproxSettings | None = None,
                     grid: TimeGrid | None = None) -> ApproxResult:
    """Full inner-approximation run for a fleet or a lifted set.

    Follows the published step order exactly: solve the positive-direction
    gap problem, modify the bounds if it protrudes, then the negative one,
    then test convergence on the pair of gaps just measured; repeat.
    Returns an uncertified result (with a warning) if the modification
    budget runs out.
    """
    settings = settings or ApproxSettings()
    if isinstance(spec_or_fleet, FleetSpec):
        fleet = spec_or_fleet
        grid = fleet.grid
        spec = fleet_feasible_set(fleet)
        proto = build_prototype(kind, grid)
        b0 = init_bounds(fleet, proto)
        M = big_m_for(fleet)
    else:
        spec = spec_or_fleet
        if grid is None:
            grid = TimeGrid(spec.T)
        proto = build_prototype(kind, grid)
        b0 = init_bounds(spec, proto)
        M = big_m_for(spec, b0, proto)

    scale = float(np.max(np.abs(b0))) if b0.size else 1.0
    trigger = settings.gap_trigger(scale)
    b = b0.copy()
    trace: list[IterationRecord] = []
    mods = 0
    certified = False

    while True:
        d_pos = _gap_step(spec, proto, b, "pos", M, settings, trace, mods)
        if d_pos.gap > trigger:
            b, mods = _modify_step(spec, proto, b, d_pos, settings, trace, mods)
        d_neg = _gap_step(spec, proto, b, "neg", M, settings, trace, mods)
        if d_neg.gap > trigger:
            b, mods = _modify_step(spec, proto, b, d_neg, settings, trace, mods)
        if max(d_pos.gap, d_neg.gap) < settings.eps:
            certified = True
            break
        if mods >= settings.max_modifications:
            logger.warning("inner approximation stopped uncertified after %d modifications "
                           "(gaps %.3e / %.3e)", mods, d_pos.gap, d_neg.gap)
            break

    return ApproxResult(polytope=proto.with_bounds(b), b_init=b0, trace=trace,
                        certified_inner=certified, modifications=mods)


def _gap_step(spec, proto, b, sense, M, settings, trace, mods) -> GapResult:
    res = gap_direction(spec, proto, b, sense, M)
    trace.append(IterationRecord(k=mods, sense=sense, gap=res.gap,
                                 direction=res.direction, P1=res.witness))
    return res


def _modify_step(spec, proto, b, gap_res: GapResult, settings, trace, mods):
    P1 = gap_res.witness
    P0 = closest_feasible(spec, P1)
    J = active_rows(proto, b, P1, settings.tol_active)
    b_new = modify_bounds(proto, b, P1, P0, J)
    changed = int(np.sum(b_new < b - 1e-12 * np.maximum(1.0, np.abs(b))))
    rec = trace[-1]
    rec.P0 = P0
    rec.active_set = J
    rec.rows_modified = changed
    return b_new, mods + 1
