"""Linear and mixed-integer programming kernel.

A thin, deterministic layer over HiGHS (via scipy.optimize) exposing the
problem/solution types used throughout the package, plus a Euclidean
projection routine backed by the Clarabel QP solver. Duals follow the
Lagrangian convention: inequality rows (A_ub x <= b_ub) carry multipliers
>= 0 regardless of sense, equality multipliers are free, and for a
minimization the KKT stationarity reads c + A_ub' lam + A_eq' mu = 0
(c - ... for a maximization).
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

TOL_FEAS = 1e-7
TOL_GAP = 1e-7
TOL_PROJ = 1e-6
DEFAULT_BINARY_CAP = 32


class SolverError(RuntimeError):
    """Numerical or internal solver failure (never a silent wrong answer)."""


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ERROR = "error"


def _as_matrix(M, n_cols: int):
    if M is None:
        return None
    if sp.issparse(M):
        return M.tocsr()
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return None
    if M.shape[1] != n_cols:
        raise ValueError(f"matrix has {M.shape[1]} columns, expected {n_cols}")
    return M


@dataclass(frozen=True)
class LpProblem:
    """min/max c'x  s.t.  A_ub x <= b_ub, A_eq x = b_eq, lb <= x <= ub.

    Unset bounds default to free variables (not the scipy convention).
    """

    c: np.ndarray
    A_ub: object = None
    b_ub: np.ndarray | None = None
    A_eq: object = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    sense: str = "min"
    name: str = ""

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise ValueError("cost vector must be a finite 1-D array")
        object.__setattr__(self, "c", c)
        n = c.shape[0]
        object.__setattr__(self, "A_ub", _as_matrix(self.A_ub, n))
        object.__setattr__(self, "A_eq", _as_matrix(self.A_eq, n))
        for attr, M in (("b_ub", self.A_ub), ("b_eq", self.A_eq)):
            rhs = getattr(self, attr)
            rhs = None if rhs is None or np.size(rhs) == 0 else np.asarray(rhs, dtype=float).ravel()
            object.__setattr__(self, attr, rhs)
            m = 0 if M is None else M.shape[0]
            if (rhs is None) != (M is None) or (rhs is not None and rhs.shape[0] != m):
                raise ValueError(f"{attr} does not match its matrix")
        lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        if lb.shape != (n,) or ub.shape != (n,):
            raise ValueError("bounds must match the number of variables")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")

    @property
    def n(self) -> int:
        return self.c.shape[0]


@dataclass(frozen=True)
class LpSolution:
    status: Status
    x: np.ndarray | None = None
    objective: float | None = None
    duals_ub: np.ndarray | None = None
    duals_eq: np.ndarray | None = None
    duals_lb: np.ndarray | None = None
    duals_var_ub: np.ndarray | None = None
    message: str = ""
    mip_gap: float | None = None

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass(frozen=True)
class MilpProblem:
    """An LpProblem plus designated binary variables.

    The cap guards against accidentally exponential instances; callers
    that legitimately need more binaries pass an explicit cap.
    """

    base: LpProblem
    binary_idx: tuple[int, ...] = ()
    cap: int = DEFAULT_BINARY_CAP

    def __post_init__(self):
        idx = tuple(int(i) for i in self.binary_idx)
        if len(set(idx)) != len(idx):
            raise ValueError("duplicate binary indices")
        if any(i < 0 or i >= self.base.n for i in idx):
            raise ValueError("binary index out of range")
        if len(idx) > self.cap:
            raise ValueError(f"{len(idx)} binaries exceed the cap of {self.cap}")
        object.__setattr__(self, "binary_idx", idx)


_LINPROG_STATUS = {0: Status.OPTIMAL, 2: Status.INFEASIBLE, 3: Status.UNBOUNDED}


def solve_lp(problem: LpProblem, check: bool = False) -> LpSolution:
    """Solve an LP; deterministic for identical input.

    With check=True the returned duals are verified against the primal
    objective (strong duality within TOL_GAP, relative).
    """
    negate = problem.sense == "max"
    c = -problem.c if negate else problem.c
    bounds = np.column_stack([problem.lb, problem.ub])
    res = linprog(c, A_ub=problem.A_ub, b_ub=problem.b_ub, A_eq=problem.A_eq,
                  b_eq=problem.b_eq, bounds=bounds, method="highs")
    if res.status == 4:
        # presolve occasionally misclassifies big-M structures; retry without it
        res = linprog(c, A_ub=problem.A_ub, b_ub=problem.b_ub, A_eq=problem.A_eq,
                      b_eq=problem.b_eq, bounds=bounds, method="highs",
                      options={"presolve": False})
    status = _LINPROG_STATUS.get(res.status, Status.ERROR)
    if status is not Status.OPTIMAL:
        return LpSolution(status=status, message=res.message)

    obj = float(res.fun)
    duals_ub = None if problem.A_ub is None else -np.asarray(res.ineqlin.marginals)
    duals_eq = None if problem.A_eq is None else -np.asarray(res.eqlin.marginals)
    duals_lb = np.asarray(res.lower.marginals)
    duals_var_ub = -np.asarray(res.upper.marginals)
    sol = LpSolution(Status.OPTIMAL, np.asarray(res.x), -obj if negate else obj,
                     duals_ub, duals_eq, duals_lb, duals_var_ub, res.message)
    if check:
        gap = duality_gap(problem, sol)
        scale = max(1.0, abs(sol.objective))
        if gap > TOL_GAP * scale * 10:
            raise SolverError(f"duality gap {gap:.3e} exceeds tolerance")
    return sol


def duality_gap(problem: LpProblem, sol: LpSolution) -> float:
    """|primal - dual| objective mismatch of an optimal solution."""
    if not sol.optimal:
        raise ValueError("duality gap is defined for optimal solutions only")
    dual = 0.0
    if sol.duals_ub is not None:
        dual -= float(sol.duals_ub @ problem.b_ub)
    if sol.duals_eq is not None:
        dual -= float(sol.duals_eq @ problem.b_eq)
    lb = np.where(np.isfinite(problem.lb), problem.lb, 0.0)
    ub = np.where(np.isfinite(problem.ub), problem.ub, 0.0)
    dual += float(sol.duals_lb @ lb) - float(sol.duals_var_ub @ ub)
    primal = sol.objective if problem.sense == "min" else -sol.objective
    return abs(primal - dual)


_MILP_STATUS = {0: Status.OPTIMAL, 2: Status.INFEASIBLE, 3: Status.UNBOUNDED}


def solve_milp(problem: MilpProblem, rel_gap: float = 0.0,
               time_limit: float | None = None) -> LpSolution:
    """Solve a MILP by LP-based branch and bound (HiGHS) to proven
    optimality within rel_gap. Binaries are returned exactly integral."""
    base = problem.base
    negate = base.sense == "max"
    c = -base.c if negate else base.c
    n = base.n

    constraints = []
    if base.A_ub is not None:
        constraints.append(LinearConstraint(sp.csr_matrix(base.A_ub), -np.inf, base.b_ub))
    if base.A_eq is not None:
        constraints.append(LinearConstraint(sp.csr_matrix(base.A_eq), base.b_eq, base.b_eq))

    integrality = np.zeros(n)
    lb = base.lb.copy()
    ub = base.ub.copy()
    for i in problem.binary_idx:
        integrality[i] = 1
        lb[i] = max(lb[i], 0.0)
        ub[i] = min(ub[i], 1.0)

    options = {"mip_rel_gap": rel_gap}
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = milp(c=c, constraints=constraints, integrality=integrality,
               bounds=Bounds(lb, ub), options=options)
    if res.status == 4:
        # presolve occasionally misclassifies big-M structures; retry without it
        res = milp(c=c, constraints=constraints, integrality=integrality,
                   bounds=Bounds(lb, ub), options={**options, "presolve": False})
    status = _MILP_STATUS.get(res.status, Status.ERROR)
    if res.status == 1 and res.x is not None:  # budget hit with incumbent
        status = Status.ERROR
    if res.x is None:
        return LpSolution(status=status if status is not Status.OPTIMAL else Status.ERROR,
                          message=res.message)
    x = np.asarray(res.x, dtype=float).copy()
    for i in problem.binary_idx:
        x[i] = float(round(x[i]))
    obj = float(res.fun)
    return LpSolution(status, x, -obj if negate else obj, message=res.message,
                      mip_gap=getattr(res, "mip_gap", None))


def enumerate_milp(problem: MilpProblem):
    """Reference solve by exhaustive enumeration of binary assignments.

    Exponential in the number of binaries; intended for cross-checks on
    small instances.
    """
    base = problem.base
    idx = problem.binary_idx
    best = None
    best_x = None
    better = (lambda a, b: a < b) if base.sense == "min" else (lambda a, b: a > b)
    for mask in range(2 ** len(idx)):
        lb = base.lb.copy()
        ub = base.ub.copy()
        for j, i in enumerate(idx):
            v = float((mask >> j) & 1)
            lb[i] = ub[i] = v
        fixed = LpProblem(base.c, base.A_ub, base.b_ub, base.A_eq, base.b_eq,
                          lb, ub, base.sense)
        sol = solve_lp(fixed)
        if sol.optimal and (best is None or better(sol.objective, best)):
            best, best_x = sol.objective, sol.x
    if best is None:
        return LpSolution(Status.INFEASIBLE)
    return LpSolution(Status.OPTIMAL, best_x, best)


class ProjectionError(RuntimeError):
    pass


def project_l2(point: np.ndarray, constraints: LpProblem,
               coords: np.ndarray | None = None, return_full: bool = False):
    """Euclidean projection of a point onto the constraint set of an LP.

    Minimizes ||x[coords] - point||_2 over {A_ub x <= b_ub, A_eq x = b_eq,
    lb <= x <= ub} (the objective vector of `constraints` is ignored).
    coords defaults to all variables. Solved as a convex QP to well below
    TOL_PROJ accuracy.
    """
    import clarabel

    n = constraints.n
    point = np.asarray(point, dtype=float).ravel()
    coords = np.arange(n) if coords is None else np.asarray(coords, dtype=int)
    if point.shape != coords.shape:
        raise ValueError("point length must match the projected coordinates")

    P = sp.coo_matrix((np.full(coords.size, 2.0), (coords, coords)), shape=(n, n)).tocsc()
    q = np.zeros(n)
    q[coords] = -2.0 * point

    blocks = []
    rhs = []
    cones = []
    if constraints.A_eq is not None:
        blocks.append(sp.csc_matrix(constraints.A_eq))
        rhs.append(constraints.b_eq)
        cones.append(clarabel.ZeroConeT(constraints.A_eq.shape[0]))
    ineq_blocks = []
    ineq_rhs = []
    if constraints.A_ub is not None:
        ineq_blocks.append(sp.csc_matrix(constraints.A_ub))
        ineq_rhs.append(constraints.b_ub)
    fin_ub = np.where(np.isfinite(constraints.ub))[0]
    if fin_ub.size:
        ineq_blocks.append(sp.coo_matrix((np.ones(fin_ub.size), (np.arange(fin_ub.size), fin_ub)),
                                         shape=(fin_ub.size, n)).tocsc())
        ineq_rhs.append(constraints.ub[fin_ub])
    fin_lb = np.where(np.isfinite(constraints.lb))[0]
    if fin_lb.size:
        ineq_blocks.append(sp.coo_matrix((-np.ones(fin_lb.size), (np.arange(fin_lb.size), fin_lb)),
                                         shape=(fin_lb.size, n)).tocsc())
        ineq_rhs.append(-constraints.lb[fin_lb])
    if ineq_blocks:
        blocks.append(sp.vstack(ineq_blocks, format="csc"))
        rhs.append(np.concatenate(ineq_rhs))
        cones.append(clarabel.NonnegativeConeT(blocks[-1].shape[0]))
    if not blocks:
        x = np.zeros(n)
        x[coords] = point
        return (point.copy(), x) if return_full else point.copy()

    A = sp.vstack(blocks, format="csc")
    b = np.concatenate(rhs)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = 1e-10
    settings.tol_gap_rel = 1e-10
    settings.tol_feas = 1e-10
    settings.max_iter = 200_000
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        raise ProjectionError("constraint set is empty")
    if status not in ("Solved", "AlmostSolved"):
        raise ProjectionError(f"projection failed: {status}")
    x = np.asarray(sol.x)
    proj = x[coords].copy()
    return (proj, x) if return_full else proj


def dump_lp(problem: LpProblem, stream=None) -> str:
    """Plain-text dump of an LP instance for external cross-checking.

    Format: one header line `<sense> <n>`, the cost vector, then one line
    per row as `<coeffs...> <op> <rhs>` with op in {<=, ==}, then bounds.
    """
    out = stream or io.StringIO()
    out.write(f"{problem.sense} {problem.n}\n")
    out.write(" ".join(repr(v) for v in problem.c) + "\n")

    def rows(M, rhs, op):
        if M is None:
            return
        dense = M.toarray() if sp.issparse(M) else M
        for row, r in zip(dense, rhs):
            out.write(" ".join(repr(v) for v in row) + f" {op} {r!r}\n")

    rows(problem.A_ub, problem.b_ub, "<=")
    rows(problem.A_eq, problem.b_eq, "==")
    out.write("bounds\n")
    for lo, hi in zip(problem.lb, problem.ub):
        out.write(f"{lo!r} {hi!r}\n")
    return out.getvalue() if stream is None else ""
