"""Offline optimum computations used as references for the online router.

Two solvers share one problem shape (n queries, M models, budgets):

* ``solve_milp_bruteforce`` enumerates every integral assignment
  (each query to one model or to none) and keeps the best feasible one,
  so it is exact for tiny instances.
* ``solve_relaxed_lp`` solves the fractional relaxation with an in-repo
  revised simplex and returns primal values together with dual
  certificates (one price per budget row, one per query row).

The LP has a very particular block structure: M budget rows coupling
everything, plus one "at most one model" row per query touching only
that query's variables.  The simplex below exploits it by designating,
for every query row, one basic column as that row's key; eliminating
the keys leaves an M x M working basis, so each iteration costs O(nM)
for pricing plus a 5x5-ish solve instead of touching an
(n + M) x (n + M) inverse.  Entering columns are chosen by largest
reduced cost, with an automatic switch to smallest-index selection
(both for the entering and the leaving side) whenever the objective
stalls, which protects against cycling on degenerate instances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ann_index import _VectorStore
from .core import BudgetVector, Query

__all__ = [
    "AllocationProblem",
    "AllocationSolution",
    "OfflineOptima",
    "solve_milp_bruteforce",
    "solve_relaxed_lp",
    "round_lp_solution",
    "offline_optima",
]

_ENUM_LIMIT = 10_000_000
_FEAS_TOL = 1e-9


@dataclass(frozen=True)
class AllocationProblem:
    """One offline allocation instance.

    ``values`` and ``costs`` are (n_queries, n_models); ``budgets`` is the
    per-model spending cap.  ``integral`` states whether assignments must
    be whole; ``alpha`` scales the objective (value coefficients are
    alpha * values).
    """

    values: np.ndarray
    costs: np.ndarray
    budgets: BudgetVector
    integral: bool = False
    alpha: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "costs", np.asarray(self.costs, dtype=np.float64))
        if self.values.ndim != 2 or self.values.shape != self.costs.shape:
            raise ValueError("values and costs must be matching 2d arrays")
        if self.budgets.n_models != self.values.shape[1]:
            raise ValueError("budget vector does not match model count")
        if np.any(self.costs < 0):
            raise ValueError("costs must be nonnegative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def n_queries(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_models(self) -> int:
        return int(self.values.shape[1])


@dataclass
class AllocationSolution:
    """Solver output.

    ``x`` is the (n, M) assignment matrix (binary for the enumerator,
    fractional for the LP).  ``assignment`` gives, for integral
    solutions, each query's model or -1.  ``gamma`` and ``beta`` are the
    LP dual prices for budget rows and query rows.  ``status`` is
    "optimal" or a failure marker, with supporting ``residuals``.
    """

    x: np.ndarray
    objective: float
    assignment: np.ndarray | None = None
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    status: str = "optimal"
    residuals: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# exhaustive integral solver


def solve_milp_bruteforce(problem: AllocationProblem) -> AllocationSolution:
    """Exact integral optimum by enumeration.

    Assignments are encoded per query as a digit in {0..M}: 0 keeps the
    query unrouted, digit k >= 1 routes it to model k-1.  All (M+1)^n
    digit strings are scanned in lexicographic order and the first
    feasible maximizer is kept, so objective ties resolve to the
    lexicographically smallest assignment under that encoding.
    """
    n, m = problem.n_queries, problem.n_models
    combos = (m + 1) ** n
    if combos > _ENUM_LIMIT:
        raise ValueError(
            f"instance has {combos} assignments, enumeration cap is {_ENUM_LIMIT}"
        )
    c = problem.alpha * problem.values
    g = problem.costs
    b = problem.budgets.per_model
    # value of digit d for query q, with digit 0 worth nothing
    cpad = np.zeros((m + 1, n))
    cpad[1:, :] = c.T

    best_val = -np.inf
    best_code = 0
    block = 1 << 16
    weights = (m + 1) ** np.arange(n - 1, -1, -1, dtype=np.int64)
    for start in range(0, combos, block):
        codes = np.arange(start, min(start + block, combos), dtype=np.int64)
        value = np.zeros(len(codes))
        spend = np.zeros((m, len(codes)))
        feasible = np.ones(len(codes), dtype=bool)
        for q in range(n):
            digit = (codes // weights[q]) % (m + 1)
            value += cpad[digit, q]
            for i in range(m):
                spend[i] += np.where(digit == i + 1, g[q, i], 0.0)
        for i in range(m):
            feasible &= spend[i] <= b[i]
        value[~feasible] = -np.inf
        k = int(np.argmax(value))
        if value[k] > best_val:
            best_val = float(value[k])
            best_code = int(codes[k])

    assignment = np.empty(n, dtype=np.int64)
    code = best_code
    for q in range(n):
        assignment[q] = (code // weights[q]) % (m + 1) - 1
    x = np.zeros((n, m))
    routed = assignment >= 0
    x[np.nonzero(routed)[0], assignment[routed]] = 1.0
    return AllocationSolution(x=x, objective=best_val, assignment=assignment)


# ---------------------------------------------------------------------------
# LP relaxation: block-structured revised simplex


class _SimplexState:
    """Basis bookkeeping for the key-column simplex.

    ``key_model[j]`` names the key column of query row j: model index for
    an assignment variable, -1 for the row's slack.  The M non-key basic
    columns live in ``slots`` as (kind, j, i) with kind "x", "s" or "u".
    """

    def __init__(self, n: int, m: int):
        self.n = n
        self.m = m
        self.key_model = np.full(n, -1, dtype=np.int64)
        self.slot_kind = ["s"] * m
        self.slot_j = [-1] * m
        self.slot_i = list(range(m))
        self.x_nonkey = np.zeros((n, m), dtype=bool)
        self.s_basic = np.ones(m, dtype=bool)
        self.u_nonkey = np.zeros(n, dtype=bool)

    def column_id(self, kind: str, j: int, i: int) -> int:
        # global ordering used by the smallest-index pivot rule
        if kind == "x":
            return j * self.m + i
        if kind == "s":
            return self.n * self.m + i
        return self.n * self.m + self.m + j


def _key_budget_vec(state: _SimplexState, g: np.ndarray, j: int) -> np.ndarray:
    out = np.zeros(state.m)
    km = state.key_model[j]
    if km >= 0:
        out[km] = g[j, km]
    return out


def solve_relaxed_lp(problem: AllocationProblem,
                     max_iterations: int | None = None) -> AllocationSolution:
    """Fractional allocation optimum with dual certificates.

    Maximizes sum(alpha * values * x) subject to per-model spending caps
    and per-query assignment mass at most one.  The returned duals
    satisfy feasibility and strong duality to within 1e-6 relative on
    instances the solver reports as "optimal".
    """
    n, m = problem.n_queries, problem.n_models
    if n * m > 2_000_000:
        raise ValueError(f"instance has {n * m} variables, dense-solver cap is 2e6")
    c = problem.alpha * problem.values
    g = problem.costs
    b = problem.budgets.per_model.astype(np.float64)

    state = _SimplexState(n, m)
    rows = np.arange(n)
    c_scale = float(np.max(np.abs(c))) if c.size else 1.0
    rc_tol = 1e-9 * (1.0 + c_scale)
    piv_tol = 1e-11
    if max_iterations is None:
        max_iterations = 50 * (n + m) + 1000

    bland = False
    stall = 0
    last_obj = -np.inf
    status = "optimal"

    for _ in range(max_iterations):
        # working basis from the current key designation
        key_mask = state.key_model >= 0
        key_rows = rows[key_mask]
        key_cols = state.key_model[key_mask]
        bbar = b.copy()
        np.subtract.at(bbar, key_cols, g[key_rows, key_cols])

        W = np.zeros((m, m))
        for s in range(m):
            kind = state.slot_kind[s]
            if kind == "x":
                j, i = state.slot_j[s], state.slot_i[s]
                W[i, s] += g[j, i]
                W[:, s] -= _key_budget_vec(state, g, j)
            elif kind == "u":
                W[:, s] -= _key_budget_vec(state, g, state.slot_j[s])
            else:
                W[state.slot_i[s], s] = 1.0
        try:
            y = np.linalg.solve(W, bbar)
        except np.linalg.LinAlgError:
            status = "numerical"
            break

        # key values on rows that carry non-key basic columns
        kappa: dict[int, float] = {}
        for s in range(m):
            if state.slot_kind[s] in ("x", "u"):
                j = state.slot_j[s]
                kappa[j] = kappa.get(j, 1.0) - float(y[s])

        # duals
        cbar = np.zeros(m)
        for s in range(m):
            kind = state.slot_kind[s]
            if kind == "x":
                j, i = state.slot_j[s], state.slot_i[s]
                ck = c[j, state.key_model[j]] if state.key_model[j] >= 0 else 0.0
                cbar[s] = c[j, i] - ck
            elif kind == "u":
                j = state.slot_j[s]
                cbar[s] = -(c[j, state.key_model[j]] if state.key_model[j] >= 0 else 0.0)
        try:
            gamma = np.linalg.solve(W.T, cbar)
        except np.linalg.LinAlgError:
            status = "numerical"
            break
        beta = np.zeros(n)
        beta[key_mask] = c[key_rows, key_cols] - gamma[key_cols] * g[key_rows, key_cols]

        obj = float(np.sum(c[key_rows, key_cols]))
        for j, kap in kappa.items():
            km = state.key_model[j]
            if km >= 0:
                obj += c[j, km] * (kap - 1.0)
        for s in range(m):
            if state.slot_kind[s] == "x":
                obj += c[state.slot_j[s], state.slot_i[s]] * float(y[s])

        if obj > last_obj + 1e-12 * (1.0 + abs(obj)):
            stall = 0
            bland = False
        else:
            stall += 1
            if stall > 40:
                bland = True
        last_obj = obj

        # pricing
        rc_x = c - g * gamma[None, :] - beta[:, None]
        basic_x = state.x_nonkey.copy()
        basic_x[key_rows, key_cols] = True
        rc_x[basic_x] = -np.inf
        rc_u = -beta.copy()
        rc_u[~key_mask] = -np.inf          # u is the key there
        rc_u[state.u_nonkey] = -np.inf
        rc_s = -gamma.copy()
        rc_s[state.s_basic] = -np.inf

        bx = float(np.max(rc_x)) if rc_x.size else -np.inf
        bu = float(np.max(rc_u)) if rc_u.size else -np.inf
        bs = float(np.max(rc_s)) if rc_s.size else -np.inf
        if max(bx, bu, bs) <= rc_tol:
            break

        if not bland:
            if bx >= bu and bx >= bs:
                flat = int(np.argmax(rc_x))
                entering = ("x", flat // m, flat % m)
            elif bu >= bs:
                entering = ("u", int(np.argmax(rc_u)), -1)
            else:
                entering = ("s", -1, int(np.argmax(rc_s)))
        else:
            # smallest-index selection; x column ids are exactly the
            # row-major flat positions, so argmax on the mask finds them
            entering = None
            best_id = None
            pos_x = rc_x > rc_tol
            if pos_x.any():
                flat = int(np.argmax(pos_x.ravel()))
                best_id, entering = flat, ("x", flat // m, flat % m)
            pos_s = np.nonzero(rc_s > rc_tol)[0]
            if pos_s.size:
                cid = state.column_id("s", -1, int(pos_s[0]))
                if best_id is None or cid < best_id:
                    best_id, entering = cid, ("s", -1, int(pos_s[0]))
            pos_u = np.nonzero(rc_u > rc_tol)[0]
            if pos_u.size:
                cid = state.column_id("u", int(pos_u[0]), -1)
                if best_id is None or cid < best_id:
                    best_id, entering = cid, ("u", int(pos_u[0]), -1)
            if entering is None:
                break

        kind_e = entering[0]
        if kind_e == "x":
            _, j_e, i_e = entering
            w_e = np.zeros(m)
            w_e[i_e] = g[j_e, i_e]
            w_e -= _key_budget_vec(state, g, j_e)
        elif kind_e == "u":
            j_e, i_e = entering[1], -1
            w_e = -_key_budget_vec(state, g, j_e)
        else:
            j_e, i_e = -1, entering[2]
            w_e = np.zeros(m)
            w_e[i_e] = 1.0
        try:
            d = np.linalg.solve(W, w_e)
        except np.linalg.LinAlgError:
            status = "numerical"
            break

        # key-value rates on affected rows
        delta: dict[int, float] = {}
        for s in range(m):
            if state.slot_kind[s] in ("x", "u"):
                j = state.slot_j[s]
                delta[j] = delta.get(j, 0.0) + float(d[s])
        if kind_e in ("x", "u"):
            delta[j_e] = delta.get(j_e, 0.0) - 1.0

        candidates: list[tuple[float, float, str, int]] = []
        for s in range(m):
            if d[s] > piv_tol:
                candidates.append((max(float(y[s]), 0.0) / float(d[s]),
                                   float(d[s]), "slot", s))
        for j, dj in delta.items():
            if dj < -piv_tol:
                kap = kappa.get(j, 1.0)
                candidates.append((max(kap, 0.0) / (-dj), -dj, "key", j))
        if not candidates:
            status = "unbounded"
            break
        t_star = min(cand[0] for cand in candidates)
        window = [cand for cand in candidates
                  if cand[0] <= t_star + 1e-9 * (1.0 + t_star)]
        if not bland:
            leave = max(window, key=lambda cand: cand[1])
        else:
            def leave_id(cand):
                if cand[2] == "slot":
                    s = cand[3]
                    return state.column_id(state.slot_kind[s], state.slot_j[s],
                                           state.slot_i[s])
                j = cand[3]
                km = state.key_model[j]
                if km >= 0:
                    return state.column_id("x", j, int(km))
                return state.column_id("u", j, -1)
            leave = min(window, key=leave_id)

        # basis exchange
        if leave[2] == "slot":
            s = leave[3]
            kind_l = state.slot_kind[s]
            if kind_l == "x":
                state.x_nonkey[state.slot_j[s], state.slot_i[s]] = False
            elif kind_l == "u":
                state.u_nonkey[state.slot_j[s]] = False
            else:
                state.s_basic[state.slot_i[s]] = False
            state.slot_kind[s] = kind_e
            state.slot_j[s] = j_e
            state.slot_i[s] = i_e
            if kind_e == "x":
                state.x_nonkey[j_e, i_e] = True
            elif kind_e == "u":
                state.u_nonkey[j_e] = True
            else:
                state.s_basic[i_e] = True
        else:
            j_l = leave[3]
            if kind_e in ("x", "u") and j_e == j_l:
                # entering column takes over as its own row's key
                state.key_model[j_l] = i_e if kind_e == "x" else -1
            else:
                promote = None
                promote_rank = None
                for s in range(m):
                    if state.slot_kind[s] in ("x", "u") and state.slot_j[s] == j_l:
                        if not bland:
                            rank = (-abs(float(d[s])),
                                    state.column_id(state.slot_kind[s], j_l,
                                                    state.slot_i[s]))
                        else:
                            rank = (state.column_id(state.slot_kind[s], j_l,
                                                    state.slot_i[s]),)
                        if promote_rank is None or rank < promote_rank:
                            promote, promote_rank = s, rank
                if promote is None:
                    status = "numerical"
                    break
                pk = state.slot_kind[promote]
                if pk == "x":
                    state.x_nonkey[j_l, state.slot_i[promote]] = False
                    state.key_model[j_l] = state.slot_i[promote]
                else:
                    state.u_nonkey[j_l] = False
                    state.key_model[j_l] = -1
                state.slot_kind[promote] = kind_e
                state.slot_j[promote] = j_e
                state.slot_i[promote] = i_e
                if kind_e == "x":
                    state.x_nonkey[j_e, i_e] = True
                elif kind_e == "u":
                    state.u_nonkey[j_e] = True
                else:
                    state.s_basic[i_e] = True
    else:
        status = "iteration_limit"

    return _extract_solution(problem, state, status)


def _extract_solution(problem: AllocationProblem, state: _SimplexState,
                      status: str) -> AllocationSolution:
    n, m = problem.n_queries, problem.n_models
    c = problem.alpha * problem.values
    g = problem.costs
    b = problem.budgets.per_model
    rows = np.arange(n)

    key_mask = state.key_model >= 0
    key_rows = rows[key_mask]
    key_cols = state.key_model[key_mask]
    bbar = b.astype(np.float64).copy()
    np.subtract.at(bbar, key_cols, g[key_rows, key_cols])
    W = np.zeros((m, m))
    cbar = np.zeros(m)
    for s in range(m):
        kind = state.slot_kind[s]
        if kind == "x":
            j, i = state.slot_j[s], state.slot_i[s]
            W[i, s] += g[j, i]
            W[:, s] -= _key_budget_vec(state, g, j)
            ck = c[j, state.key_model[j]] if state.key_model[j] >= 0 else 0.0
            cbar[s] = c[j, i] - ck
        elif kind == "u":
            j = state.slot_j[s]
            W[:, s] -= _key_budget_vec(state, g, j)
            cbar[s] = -(c[j, state.key_model[j]] if state.key_model[j] >= 0 else 0.0)
        else:
            W[state.slot_i[s], s] = 1.0
    try:
        y = np.linalg.solve(W, bbar)
        gamma = np.linalg.solve(W.T, cbar)
    except np.linalg.LinAlgError:
        y = np.zeros(m)
        gamma = np.zeros(m)
        status = "numerical"

    x = np.zeros((n, m))
    kappa = np.ones(n)
    for s in range(m):
        if state.slot_kind[s] in ("x", "u"):
            kappa[state.slot_j[s]] -= float(y[s])
    x[key_rows, key_cols] = np.maximum(kappa[key_rows], 0.0)
    for s in range(m):
        if state.slot_kind[s] == "x":
            x[state.slot_j[s], state.slot_i[s]] = max(float(y[s]), 0.0)

    beta = np.zeros(n)
    beta[key_mask] = c[key_rows, key_cols] - gamma[key_cols] * g[key_rows, key_cols]
    gamma = np.where(np.abs(gamma) < 1e-12, 0.0, gamma)
    beta = np.where(np.abs(beta) < 1e-12, 0.0, beta)

    objective = float(np.sum(c * x))
    dual_obj = float(np.dot(gamma, b) + np.sum(beta))
    residuals = {
        "budget_violation": float(np.max(np.maximum(g_times_x(g, x) - b, 0.0))),
        "row_violation": float(np.max(np.maximum(x.sum(axis=1) - 1.0, 0.0))),
        "duality_gap": abs(objective - dual_obj) / (1.0 + abs(objective)),
        "dual_infeasibility": float(np.max(np.maximum(
            c - g * gamma[None, :] - beta[:, None], 0.0))) if n else 0.0,
    }
    return AllocationSolution(
        x=x,
        objective=objective,
        gamma=gamma,
        beta=beta,
        status=status,
        residuals=residuals,
    )


def g_times_x(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-model spending of an assignment matrix."""
    return np.einsum("ji,ji->i", g, x)


# ---------------------------------------------------------------------------
# rounding and combined reference


def round_lp_solution(problem: AllocationProblem,
                      lp: AllocationSolution) -> AllocationSolution:
    """Turn a fractional solution into a feasible integral one.

    Queries with an essentially whole assignment keep it (jointly
    feasible because costs are nonnegative and the fractional solution
    respected the budgets).  The remaining fractionally served queries
    are then added greedily, highest fractional value first, to
    whichever of their models still fits, highest assignment mass first.
    """
    n, m = problem.n_queries, problem.n_models
    c = problem.alpha * problem.values
    g = problem.costs
    remaining = problem.budgets.per_model.astype(np.float64).copy()
    assignment = np.full(n, -1, dtype=np.int64)

    whole = lp.x > 1.0 - 1e-6
    for j in range(n):
        hits = np.nonzero(whole[j])[0]
        if hits.size:
            i = int(hits[0])
            assignment[j] = i
            remaining[i] -= g[j, i]

    frac_rows = [j for j in range(n)
                 if assignment[j] < 0 and float(lp.x[j].sum()) > 1e-9]
    frac_rows.sort(key=lambda j: (-float(np.dot(c[j], lp.x[j])), j))
    for j in frac_rows:
        order = sorted(range(m), key=lambda i: (-lp.x[j, i], i))
        for i in order:
            if lp.x[j, i] <= 1e-12:
                continue
            if g[j, i] <= remaining[i] + _FEAS_TOL:
                assignment[j] = i
                remaining[i] -= g[j, i]
                break

    x = np.zeros((n, m))
    routed = assignment >= 0
    x[np.nonzero(routed)[0], assignment[routed]] = 1.0
    return AllocationSolution(
        x=x,
        objective=float(np.sum(c[np.nonzero(routed)[0], assignment[routed]])),
        assignment=assignment,
    )


@dataclass(frozen=True)
class OfflineOptima:
    """Offline references for one episode configuration.

    ``true_optimum`` uses realized scores and costs; ``estimated_optimum``
    uses neighbor-averaged features (objective scale alpha = 1 in both).
    ``gap`` is the relative distance between the fractional optimum and
    an integral solution of the true-feature problem, and the binding
    arrays mark which model budgets are tight at the fractional optimum.
    """

    true_optimum: float
    estimated_optimum: float
    method: str
    gap: float
    binding_true: tuple[bool, ...]
    binding_estimated: tuple[bool, ...]
    true_solution: AllocationSolution
    estimated_solution: AllocationSolution


def _binding(problem: AllocationProblem, sol: AllocationSolution) -> tuple[bool, ...]:
    spend = g_times_x(problem.costs, sol.x)
    b = problem.budgets.per_model
    return tuple(bool(b[i] - spend[i] <= 1e-7 * (1.0 + b[i])) for i in range(len(b)))


def offline_optima(stream: Sequence[Query], searcher: _VectorStore,
                   budgets: BudgetVector, k: int = 5,
                   enum_limit: int = 100_000) -> OfflineOptima:
    """Compute both offline references for a test stream.

    The true-feature problem is solved exactly by enumeration when the
    assignment space fits under ``enum_limit`` and by the LP relaxation
    otherwise; the estimated-feature problem always uses the LP (its
    optimum is the denominator of relative performance, mirroring how
    the router only ever sees estimated features).
    """
    true_v = np.stack([q.scores for q in stream])
    true_g = np.stack([q.costs for q in stream])
    est = [searcher.estimate(q.embedding, k) for q in stream]
    est_v = np.stack([e.scores for e in est])
    est_g = np.stack([e.costs for e in est])

    true_lp = AllocationProblem(true_v, true_g, budgets)
    est_lp = AllocationProblem(est_v, est_g, budgets)
    lp_true = solve_relaxed_lp(true_lp)
    lp_est = solve_relaxed_lp(est_lp)

    m = budgets.n_models
    if (m + 1) ** len(stream) <= enum_limit:
        integral = solve_milp_bruteforce(
            AllocationProblem(true_v, true_g, budgets, integral=True))
        method = "milp"
        true_opt = integral.objective
    else:
        integral = round_lp_solution(true_lp, lp_true)
        method = "lp"
        true_opt = lp_true.objective
    gap = 0.0
    if lp_true.objective > 0:
        gap = (lp_true.objective - integral.objective) / lp_true.objective

    return OfflineOptima(
        true_optimum=float(true_opt),
        estimated_optimum=float(lp_est.objective),
        method=method,
        gap=float(gap),
        binding_true=_binding(true_lp, lp_true),
        binding_estimated=_binding(est_lp, lp_est),
        true_solution=lp_true if method == "lp" else integral,
        estimated_solution=lp_est,
    )
