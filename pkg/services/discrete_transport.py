"""Discrete-discrete transport as a linear program and its dual-optimal face."""
import logging
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from lib.transport.exceptions import FaceExtractionError, InvalidArgumentError

logger = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-9
SUPPORT_TOL = 1e-10
DUALITY_TOL = 1e-8
EXACT_MAX_CELLS = 16

# linprog status codes
_OPTIMAL, _INFEASIBLE, _UNBOUNDED = 0, 2, 3


@dataclass(eq=False)
class TransportPlanLP:
    cost_matrix: np.ndarray
    plan: np.ndarray
    primal_value: float
    dual_u: np.ndarray
    dual_v: np.ndarray
    p: np.ndarray
    q: np.ndarray

    @property
    def support(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.plan > SUPPORT_TOL)
        return list(zip(rows.tolist(), cols.tolist()))

    def residuals(self) -> dict:
        """Marginal, feasibility, slackness and duality gaps of the solution."""
        slack = self.cost_matrix - self.dual_u[:, None] - self.dual_v[None, :]
        on_support = self.plan > SUPPORT_TOL
        return {
            "row_sums": float(np.max(np.abs(self.plan.sum(axis=1) - self.p))),
            "col_sums": float(np.max(np.abs(self.plan.sum(axis=0) - self.q))),
            "dual_feasibility": float(max(0.0, -slack.min())),
            "complementary_slackness": float(np.max(np.abs(slack[on_support]))) if on_support.any() else 0.0,
            "duality_gap": abs(self.primal_value - float(self.p @ self.dual_u + self.q @ self.dual_v)),
        }

    def to_dict(self) -> dict:
        return {
            "cost_matrix": self.cost_matrix.tolist(),
            "plan": self.plan.tolist(),
            "primal_value": self.primal_value,
            "dual_u": self.dual_u.tolist(),
            "dual_v": self.dual_v.tolist(),
            "p": self.p.tolist(),
            "q": self.q.tolist(),
        }


@dataclass(eq=False)
class DualOptimalFace:
    """Dual optima as a constraint system in (u, v).

    u_i + v_j <= c_ij everywhere, with equality on the base plan's support,
    and the gauge sum_i u_i = 0.
    """
    cost_matrix: np.ndarray
    base_plan_support: list[tuple[int, int]]
    p: np.ndarray
    q: np.ndarray
    primal_value: float

    @property
    def m(self) -> int:
        return self.cost_matrix.shape[0]

    @property
    def l(self) -> int:
        return self.cost_matrix.shape[1]

    def constraints(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(A_ub, b_ub, A_eq, b_eq) over the stacked variable (u, v)."""
        m, l = self.m, self.l
        support = set(self.base_plan_support)
        rows_ub, b_ub, rows_eq, b_eq = [], [], [], []
        for i in range(m):
            for j in range(l):
                row = np.zeros(m + l)
                row[i] = 1.0
                row[m + j] = 1.0
                if (i, j) in support:
                    rows_eq.append(row)
                    b_eq.append(self.cost_matrix[i, j])
                else:
                    rows_ub.append(row)
                    b_ub.append(self.cost_matrix[i, j])
        gauge = np.zeros(m + l)
        gauge[:m] = 1.0
        rows_eq.append(gauge)
        b_eq.append(0.0)
        A_ub = np.array(rows_ub) if rows_ub else np.zeros((0, m + l))
        return A_ub, np.array(b_ub), np.array(rows_eq), np.array(b_eq)

    def c_transform(self, u) -> np.ndarray:
        """v_j = min_i (c_ij - u_i)."""
        return np.min(self.cost_matrix - np.asarray(u, dtype=float)[:, None], axis=0)

    def reevaluate(self, u) -> float:
        """Dual objective of (u, c-transform of u)."""
        u = np.asarray(u, dtype=float)
        return float(self.p @ u + self.q @ self.c_transform(u))

    def contains(self, u, tol: float = 1e-9) -> bool:
        """u is dual optimal iff (u, u^c) attains the primal value."""
        u = np.asarray(u, dtype=float)
        return abs(float(u.sum())) <= tol * max(1, self.m) and self.reevaluate(u) >= self.primal_value - tol

    def to_dict(self) -> dict:
        return {
            "cost_matrix": self.cost_matrix.tolist(),
            "base_plan_support": [list(pair) for pair in self.base_plan_support],
            "p": self.p.tolist(),
            "q": self.q.tolist(),
            "primal_value": self.primal_value,
            "gauge": "sum-zero",
        }


def _check_weights(name: str, w) -> np.ndarray:
    w = np.asarray(w, dtype=float).ravel()
    if w.size == 0 or np.any(w <= 0) or abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise InvalidArgumentError(name, w.tolist(), reason="weights must be positive and sum to 1")
    return w


def solve_discrete(p, q, cost_matrix) -> TransportPlanLP:
    """Optimal plan and a complementary dual pair for finite marginals.

    The primal and the dual are solved as separate HiGHS programs; the dual
    carries the gauge sum_i u_i = 0 so that its solution is a vertex.

    Raises:
        InvalidArgumentError: If weights are not positive summing to 1 or shapes mismatch
        FaceExtractionError: If the solver does not report an optimum
    """
    p = _check_weights("p", p)
    q = _check_weights("q", q)
    C = np.asarray(cost_matrix, dtype=float)
    m, l = p.size, q.size
    if C.shape != (m, l):
        raise InvalidArgumentError("cost_matrix", C.shape, reason=f"expected shape ({m}, {l})")
    if not np.all(np.isfinite(C)):
        raise InvalidArgumentError("cost_matrix", reason="entries must be finite")

    # plan is flattened row-major: x[i * l + j]
    A_rows = np.kron(np.eye(m), np.ones((1, l)))
    A_cols = np.kron(np.ones((1, m)), np.eye(l))
    primal = linprog(C.ravel(), A_eq=np.vstack([A_rows, A_cols]), b_eq=np.concatenate([p, q]),
                     bounds=(0, None), method="highs")
    if primal.status != _OPTIMAL:
        logger.error(f"Primal transport LP failed: {primal.message}")
        raise FaceExtractionError(primal.status, f"primal LP: {primal.message}")
    plan = np.clip(primal.x.reshape(m, l), 0.0, None)

    # max p.u + q.v  s.t.  u_i + v_j <= c_ij,  sum u = 0
    A_ub = np.hstack([np.kron(np.eye(m), np.ones((l, 1))), np.kron(np.ones((m, 1)), np.eye(l))])
    gauge = np.concatenate([np.ones(m), np.zeros(l)])[None, :]
    dual = linprog(-np.concatenate([p, q]), A_ub=A_ub, b_ub=C.ravel(), A_eq=gauge, b_eq=[0.0],
                   bounds=(None, None), method="highs")
    if dual.status != _OPTIMAL:
        logger.error(f"Dual transport LP failed: {dual.message}")
        raise FaceExtractionError(dual.status, f"dual LP: {dual.message}")

    sol = TransportPlanLP(
        cost_matrix=C, plan=plan, primal_value=float(np.sum(C * plan)),
        dual_u=dual.x[:m].copy(), dual_v=dual.x[m:].copy(), p=p, q=q,
    )
    gap = sol.residuals()["duality_gap"]
    if gap > DUALITY_TOL:
        logger.warning(f"Duality gap {gap:.2e} above {DUALITY_TOL:.0e}")
    logger.debug(f"Discrete LP {m}x{l}: value={sol.primal_value:.12g}, support={len(sol.support)}")
    return sol


def _rational(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(float(x)))


def _tree_plan(cells, p, q) -> Optional[dict]:
    """Basic solution on `cells` by peeling leaves of the bipartite tree; None if not a feasible tree."""
    rem_p, rem_q = list(p), list(q)
    cells = list(cells)
    plan = {}
    while cells:
        rows = Counter(i for i, _ in cells)
        cols = Counter(j for _, j in cells)
        leaf = next((cell for cell in cells if rows[cell[0]] == 1 or cols[cell[1]] == 1), None)
        if leaf is None:
            return None
        i, j = leaf
        mass = rem_p[i] if rows[i] == 1 else rem_q[j]
        if mass < 0:
            return None
        plan[leaf] = mass
        rem_p[i] -= mass
        rem_q[j] -= mass
        cells.remove(leaf)
    if any(rem_p) or any(rem_q):
        return None
    return plan


def exact_transport_value(p, q, cost_matrix, max_cells: int = EXACT_MAX_CELLS) -> Fraction:
    """Optimal transport cost in exact rational arithmetic, by enumerating basic plans.

    Weights are read through their shortest decimal form and renormalized
    exactly; costs are taken at their exact binary value.

    Raises:
        InvalidArgumentError: If the problem has more than max_cells cells
    """
    C = np.asarray(cost_matrix, dtype=float)
    if C.ndim != 2 or C.size > max_cells:
        raise InvalidArgumentError("cost_matrix", C.shape, reason=f"exact enumeration allows {max_cells} cells")
    m, l = C.shape
    p = [_rational(x) for x in np.ravel(p)]
    q = [_rational(x) for x in np.ravel(q)]
    if len(p) != m or len(q) != l:
        raise InvalidArgumentError("cost_matrix", C.shape, reason=f"expected shape ({len(p)}, {len(q)})")
    p = [x / sum(p) for x in p]
    q = [x / sum(q) for x in q]
    costs = {(i, j): Fraction(float(C[i, j])) for i in range(m) for j in range(l)}

    best = None
    for cells in combinations(sorted(costs), m + l - 1):
        plan = _tree_plan(cells, p, q)
        if plan is None:
            continue
        value = sum(costs[cell] * mass for cell, mass in plan.items())
        if best is None or value < best:
            best = value
    return best


def extract_dual_face(sol: TransportPlanLP) -> DualOptimalFace:
    return DualOptimalFace(
        cost_matrix=sol.cost_matrix, base_plan_support=sol.support,
        p=sol.p, q=sol.q, primal_value=sol.primal_value,
    )


def sup_over_opt(face: DualOptimalFace, x) -> float:
    """max of x.u over the face.

    Raises:
        FaceExtractionError: If the program is unbounded or infeasible
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (face.m,):
        raise InvalidArgumentError("x", x.shape, reason=f"expected {face.m} components")
    A_ub, b_ub, A_eq, b_eq = face.constraints()
    objective = -np.concatenate([x, np.zeros(face.l)])
    res = linprog(objective, A_ub=A_ub if A_ub.size else None, b_ub=b_ub if A_ub.size else None,
                  A_eq=A_eq, b_eq=b_eq, bounds=(None, None), method="highs")
    if res.status == _UNBOUNDED:
        logger.error("Sup over the dual face is unbounded")
        raise FaceExtractionError(res.status, "unbounded in the sum-zero gauge")
    if res.status != _OPTIMAL:
        logger.error(f"Sup over the dual face failed: {res.message}")
        raise FaceExtractionError(res.status, res.message)
    return float(-res.fun)


def face_point(face: DualOptimalFace, x) -> np.ndarray:
    """A maximizer u of x.u over the face."""
    A_ub, b_ub, A_eq, b_eq = face.constraints()
    x = np.asarray(x, dtype=float).ravel()
    res = linprog(-np.concatenate([x, np.zeros(face.l)]), A_ub=A_ub if A_ub.size else None,
                  b_ub=b_ub if A_ub.size else None, A_eq=A_eq, b_eq=b_eq, bounds=(None, None), method="highs")
    if res.status != _OPTIMAL:
        raise FaceExtractionError(res.status, res.message)
    return res.x[:face.m]


def is_singleton(face: DualOptimalFace, tol: float = 1e-9) -> bool:
    """True when the face projects to one point u (checked along every axis)."""
    for k in range(face.m):
        e = np.zeros(face.m)
        e[k] = 1.0
        if sup_over_opt(face, e) + sup_over_opt(face, -e) > tol:
            return False
    return True
