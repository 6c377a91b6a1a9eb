"""Oracle access to the exact aggregate feasibility set.

The exact set of schedulable aggregate profiles has one constraint pair per
nonzero binary direction, which is exponential in the horizon length. This
module never materializes that list; it works with the equivalent lifted
form {P : exists x with C x - P = h, E x = g, D x <= f} and with support
functions, which are additive over fleets (the aggregate set is a Minkowski
sum of per-device envelopes).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import DerEnvelope, FleetSpec, Polytope, TimeGrid, envelope_rows
from .lp import LpProblem, LpSolution, Status, SolverError, project_l2, solve_lp


@dataclass(frozen=True)
class FeasibleSetSpec:
    """Lifted H-representation of an aggregate feasibility set.

    P belongs to the set iff some lift vector x satisfies
        C x - P = h,    E x = g,    D x <= f.
    For a plain fleet, x stacks the per-device profiles, C sums them
    (h = 0) and D/f hold the envelope rows. Networked variants carry the
    power-flow equalities in E/g. `meta` holds interpretation slices for
    the lift vector and is ignored by the math.
    """

    T: int
    n_x: int
    C: object
    h: np.ndarray
    E: object = None
    g: np.ndarray | None = None
    D: object = None
    f: np.ndarray | None = None
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float))
        if self.g is not None:
            object.__setattr__(self, "g", np.asarray(self.g, dtype=float))
        if self.f is not None:
            object.__setattr__(self, "f", np.asarray(self.f, dtype=float))

    @property
    def m_ineq(self) -> int:
        return 0 if self.f is None else self.f.shape[0]

    @property
    def m_eq(self) -> int:
        return 0 if self.g is None else self.g.shape[0]


def fleet_feasible_set(fleet: FleetSpec) -> FeasibleSetSpec:
    """Lifted form of a fleet: x = [p_1; ...; p_N], C = [I ... I]."""
    T = fleet.grid.T
    N = fleet.N
    C = sp.hstack([sp.eye(T)] * N, format="csr")
    D_blocks = []
    f_parts = []
    for env in fleet.ders:
        Dn, fn = envelope_rows(env, fleet.grid)
        D_blocks.append(sp.csr_matrix(Dn))
        f_parts.append(fn)
    D = sp.block_diag(D_blocks, format="csr")
    f = np.concatenate(f_parts)
    meta = {"der_slices": [slice(n * T, (n + 1) * T) for n in range(N)]}
    return FeasibleSetSpec(T=T, n_x=N * T, C=C, h=np.zeros(T), D=D, f=f, meta=meta)


def _envelope_problem(env: DerEnvelope, grid: TimeGrid, direction: np.ndarray) -> LpProblem:
    tri = np.tri(grid.T) * grid.delta_t
    return LpProblem(c=direction, A_ub=np.vstack([tri, -tri]),
                     b_ub=np.concatenate([env.e_hi, -env.e_lo]),
                     lb=env.p_lo, ub=env.p_hi, sense="max")


def der_support(env: DerEnvelope, direction: np.ndarray, grid: TimeGrid) -> float:
    """max direction . p over one envelope (exact, via LP)."""
    direction = np.asarray(direction, dtype=float)
    if not np.any(direction):
        return 0.0
    sol = solve_lp(_envelope_problem(env, grid, direction))
    if not sol.optimal:
        raise SolverError(f"envelope support LP failed: {sol.status.value}")
    return sol.objective


def fleet_support(fleet: FleetSpec, direction: np.ndarray) -> float:
    """Support of the aggregate set: sum of per-device supports
    (support functions are additive over Minkowski sums)."""
    return float(sum(der_support(env, direction, fleet.grid) for env in fleet.ders))


def spec_support(spec: FeasibleSetSpec, direction: np.ndarray) -> float:
    """Support of a lifted set in a P-space direction, by one LP over the lift."""
    direction = np.asarray(direction, dtype=float)
    c = np.asarray((sp.csr_matrix(spec.C).T @ direction)).ravel()
    prob = LpProblem(c=c, A_ub=spec.D, b_ub=spec.f, A_eq=spec.E, b_eq=spec.g, sense="max")
    sol = solve_lp(prob)
    if sol.status is Status.UNBOUNDED:
        raise SolverError("support LP unbounded: the lifted set has a missing bound")
    if not sol.optimal:
        raise SolverError(f"support LP failed: {sol.status.value}")
    # P = C x - h
    return sol.objective - float(direction @ spec.h)


def membership_witness(spec: FeasibleSetSpec, P: np.ndarray) -> np.ndarray | None:
    """A lift vector realizing aggregate profile P, or None if infeasible."""
    P = np.asarray(P, dtype=float)
    A_eq = sp.csr_matrix(spec.C)
    b_eq = P + spec.h
    if spec.E is not None:
        A_eq = sp.vstack([A_eq, sp.csr_matrix(spec.E)], format="csr")
        b_eq = np.concatenate([b_eq, spec.g])
    prob = LpProblem(c=np.zeros(spec.n_x), A_ub=spec.D, b_ub=spec.f, A_eq=A_eq, b_eq=b_eq)
    sol = solve_lp(prob)
    if sol.status is Status.INFEASIBLE:
        return None
    if not sol.optimal:
        raise SolverError(f"membership LP failed: {sol.status.value}")
    return sol.x


def disaggregate(fleet: FleetSpec, P: np.ndarray) -> np.ndarray | None:
    """Split an aggregate profile into per-device profiles.

    Returns an (N, T) array with rows inside each envelope and columns
    summing to P, or None when P is not schedulable. This is the
    membership oracle for the exact aggregate set.
    """
    P = np.asarray(P, dtype=float)
    if P.shape != (fleet.grid.T,):
        raise ValueError(f"profile must have length {fleet.grid.T}")
    spec = fleet_feasible_set(fleet)
    x = membership_witness(spec, P)
    if x is None:
        return None
    return x.reshape(fleet.N, fleet.grid.T)


def closest_feasible(spec: FeasibleSetSpec, P1: np.ndarray) -> np.ndarray:
    """Euclidean projection of P1 onto the aggregate set (in P-space).

    Solved over the lift with variables (x, P): minimize ||P - P1|| subject
    to C x - P = h and the lift constraints.
    """
    P1 = np.asarray(P1, dtype=float)
    T, n_x = spec.T, spec.n_x
    C = sp.csr_matrix(spec.C)
    A_eq_parts = [sp.hstack([C, -sp.eye(T)], format="csr")]
    b_eq_parts = [spec.h]
    if spec.E is not None:
        A_eq_parts.append(sp.hstack([sp.csr_matrix(spec.E), sp.csr_matrix((spec.m_eq, T))],
                                    format="csr"))
        b_eq_parts.append(spec.g)
    A_ub = None if spec.D is None else sp.hstack(
        [sp.csr_matrix(spec.D), sp.csr_matrix((spec.m_ineq, T))], format="csr")
    cons = LpProblem(c=np.zeros(n_x + T), A_ub=A_ub, b_ub=spec.f,
                     A_eq=sp.vstack(A_eq_parts, format="csr"),
                     b_eq=np.concatenate(b_eq_parts))
    return project_l2(P1, cons, coords=np.arange(n_x, n_x + T))


def init_bounds(spec_or_fleet, proto: Polytope) -> np.ndarray:
    """Initial bound vector: the support of the exact set in each prototype
    row direction, so the starting polytope contains the exact set.

    For fleets the supports are computed device by device (additive); for
    lifted sets each row costs one LP over the lift.
    """
    A = proto.A
    if A.shape[0] == 0:
        return np.zeros(0)
    if isinstance(spec_or_fleet, FleetSpec):
        fleet = spec_or_fleet
        b0 = np.zeros(A.shape[0])
        for env in fleet.ders:
            b0 += _envelope_supports(env, fleet.grid, A)
        return b0
    spec: FeasibleSetSpec = spec_or_fleet
    return np.array([spec_support(spec, row) for row in A])


def _envelope_supports(env: DerEnvelope, grid: TimeGrid, directions: np.ndarray) -> np.ndarray:
    """Support of one envelope in many directions (one small LP each)."""
    tri = np.tri(grid.T) * grid.delta_t
    A_ub = np.vstack([tri, -tri])
    b_ub = np.concatenate([env.e_hi, -env.e_lo])
    out = np.zeros(directions.shape[0])
    for j, d in enumerate(directions):
        if not np.any(d):
            continue
        sol = solve_lp(LpProblem(c=d, A_ub=A_ub, b_ub=b_ub, lb=env.p_lo, ub=env.p_hi,
                                 sense="max"))
        if not sol.optimal:
            raise SolverError(f"envelope support LP failed: {sol.status.value}")
        out[j] = sol.objective
    return out
