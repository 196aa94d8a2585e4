"""Dense two-phase primal simplex.

Problems are stated as::

    maximize    c @ x
    subject to  eq_matrix @ x == eq_rhs
                ub_matrix @ x <= ub_rhs
                var_lower <= x <= var_upper      (infinite bounds allowed)

and converted to ``A z == b, z >= 0`` by substitution: finite lower bounds
shift the variable, an upper bound alone reflects it, free variables split
into a difference of two nonnegative parts, and doubly bounded variables get
an explicit ``<=`` row.  ``method="highs"`` hands the same problem to scipy's
HiGHS backend for instances too large for a dense tableau.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ArgumentError, NumericError

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9
DEGENERATE_SWITCH = 50


@dataclass
class LinearProgram:
    objective: np.ndarray
    eq_matrix: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None
    ub_matrix: np.ndarray | None = None
    ub_rhs: np.ndarray | None = None
    var_lower: np.ndarray | None = None
    var_upper: np.ndarray | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).ravel()
        n = self.objective.size
        self.eq_matrix, self.eq_rhs = _rows(self.eq_matrix, self.eq_rhs, n, "equality")
        self.ub_matrix, self.ub_rhs = _rows(self.ub_matrix, self.ub_rhs, n, "inequality")
        lo = np.zeros(n) if self.var_lower is None else np.asarray(self.var_lower, dtype=float).ravel()
        hi = np.full(n, np.inf) if self.var_upper is None else np.asarray(self.var_upper, dtype=float).ravel()
        if lo.shape != (n,) or hi.shape != (n,):
            raise ArgumentError("variable bounds must have one entry per variable")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo == np.inf) or np.any(hi == -np.inf):
            raise ArgumentError("invalid variable bounds")
        self.var_lower, self.var_upper = lo, hi

    @property
    def num_vars(self) -> int:
        return self.objective.size

    def describe(self) -> str:
        """Human-readable constraint listing, for debugging dumps."""
        lines = ["maximize " + _expr(self.objective)]
        for row, rhs in zip(_dense(self.eq_matrix), self.eq_rhs):
            lines.append(f"  {_expr(row)} = {rhs:.12g}")
        for row, rhs in zip(_dense(self.ub_matrix), self.ub_rhs):
            lines.append(f"  {_expr(row)} <= {rhs:.12g}")
        for j, (lo, hi) in enumerate(zip(self.var_lower, self.var_upper)):
            if lo != 0.0 or hi != np.inf:
                lines.append(f"  {lo:.12g} <= x{j} <= {hi:.12g}")
        return "\n".join(lines)


def _dense(matrix) -> np.ndarray:
    return matrix.toarray() if sp.issparse(matrix) else matrix


def _expr(row) -> str:
    terms = [f"{v:+.12g} x{j}" for j, v in enumerate(row) if v != 0.0]
    return " ".join(terms) if terms else "0"


def _rows(matrix, rhs, n, what):
    if matrix is None:
        return np.zeros((0, n)), np.zeros(0)
    rhs = np.asarray(rhs, dtype=float).ravel()
    if sp.issparse(matrix):
        # kept sparse for the HiGHS path; the dense simplex densifies on demand
        matrix = sp.csr_matrix(matrix, dtype=float)
    else:
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if rhs.size == 0 and matrix.shape[0] * matrix.shape[1] == 0:
        return np.zeros((0, n)), np.zeros(0)
    if matrix.shape != (rhs.size, n):
        raise ArgumentError(f"{what} block has shape {matrix.shape}, expected ({rhs.size}, {n})")
    if not np.all(np.isfinite(rhs)):
        raise ArgumentError(f"{what} right-hand side must be finite")
    return matrix, rhs


@dataclass
class LpSolution:
    status: str
    x: np.ndarray
    objective_value: float
    iterations: int = 0
    duals_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals_ub: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dual_objective: float = float("nan")

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _StandardForm:
    """``x = offset + transform @ z`` with ``A z == b``, ``z >= 0``."""

    def __init__(self, lp: LinearProgram):
        n = lp.num_vars
        cols = []  # (original var, sign)
        offset = np.zeros(n)
        bound_rows = []  # (std column, width)
        for j in range(n):
            lo, hi = lp.var_lower[j], lp.var_upper[j]
            if np.isfinite(lo):
                offset[j] = lo
                cols.append((j, 1.0))
                if np.isfinite(hi):
                    bound_rows.append((len(cols) - 1, hi - lo))
            elif np.isfinite(hi):
                offset[j] = hi
                cols.append((j, -1.0))
            else:
                cols.append((j, 1.0))
                cols.append((j, -1.0))
        nz = len(cols)
        transform = np.zeros((n, nz))
        for k, (j, sign) in enumerate(cols):
            transform[j, k] = sign
        self.offset, self.transform = offset, transform
        self.infeasible_bounds = any(width < -FEAS_TOL for _, width in bound_rows)

        eq, ub = _dense(lp.eq_matrix), _dense(lp.ub_matrix)
        a_eq = eq @ transform
        b_eq = lp.eq_rhs - eq @ offset
        a_ub = ub @ transform
        b_ub = lp.ub_rhs - ub @ offset
        if bound_rows:
            extra = np.zeros((len(bound_rows), nz))
            for i, (k, _) in enumerate(bound_rows):
                extra[i, k] = 1.0
            a_ub = np.vstack([a_ub, extra])
            b_ub = np.concatenate([b_ub, [max(w, 0.0) for _, w in bound_rows]])
        self.n_eq, self.n_ub_user = lp.eq_rhs.size, lp.ub_rhs.size
        self.n_ub = b_ub.size
        m = self.n_eq + self.n_ub
        # columns: z (nz) | slacks (n_ub)
        a = np.zeros((m, nz + self.n_ub))
        a[: self.n_eq, :nz] = a_eq
        a[self.n_eq :, :nz] = a_ub
        a[self.n_eq :, nz:] = np.eye(self.n_ub)
        b = np.concatenate([b_eq, b_ub])
        self.sign = np.where(b < 0, -1.0, 1.0)
        self.a = a * self.sign[:, None]
        self.b = b * self.sign
        self.c = np.concatenate([lp.objective @ transform, np.zeros(self.n_ub)])
        self.const = float(lp.objective @ offset)
        self.nz = nz


class _Tableau:
    def __init__(self, a, b, basis):
        self.a0, self.b0 = a, b
        self.basis = list(basis)
        self.iterations = 0
        self.refactor()

    def refactor(self):
        bmat = self.a0[:, self.basis]
        if bmat.shape[0] == bmat.shape[1] and np.array_equal(bmat, np.eye(bmat.shape[0])):
            self.t = np.hstack([self.a0, self.b0[:, None]])
            return
        try:
            inv = np.linalg.inv(bmat) if self.basis else np.zeros((0, 0))
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"singular basis during refactorization: {exc}") from exc
        self.t = np.hstack([inv @ self.a0, (inv @ self.b0)[:, None]])
        self.t[:, self.basis] = np.eye(len(self.basis))

    def pivot(self, r, j):
        t = self.t
        t[r] /= t[r, j]
        col = t[:, j].copy()
        col[r] = 0.0
        rows = np.flatnonzero(col)  # tableaus from MDP LPs are mostly sparse
        t[rows] -= np.outer(col[rows], t[r])
        self.basis[r] = j
        self.iterations += 1

    def run(self, cost, max_iter, allowed=None):
        """Maximize ``cost @ z`` from the current basis; returns status string."""
        m, width = self.t.shape
        ncols = width - 1
        mask = np.ones(ncols, dtype=bool) if allowed is None else allowed
        bland = False
        degenerate = 0
        start = self.iterations
        while True:
            if self.iterations - start > max_iter:
                raise NumericError(f"simplex exceeded {max_iter} pivots (cycling guard)")
            cb = cost[self.basis]
            d = cost - cb @ self.t[:, :ncols]
            d[self.basis] = 0.0
            d[~mask] = 0.0
            candidates = np.flatnonzero(d > FEAS_TOL)
            if candidates.size == 0:
                return "optimal"
            j = int(candidates[0]) if bland else int(candidates[np.argmax(d[candidates])])
            col = self.t[:, j]
            rows = np.flatnonzero(col > PIVOT_TOL)
            if rows.size == 0:
                return "unbounded"
            rhs = np.maximum(self.t[rows, -1], 0.0)
            ratios = rhs / col[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * max(1.0, best)]
            if bland:
                r = int(min(ties, key=lambda i: self.basis[i]))
            else:
                r = int(ties[np.argmax(np.abs(col[ties]))])
            if best <= 1e-12:
                degenerate += 1
                if degenerate > DEGENERATE_SWITCH:
                    bland = True
            else:
                degenerate = 0
            self.pivot(r, j)


def solve(lp: LinearProgram, method: str = "simplex", max_iter: int | None = None) -> LpSolution:
    """Solve ``lp``; status is one of optimal / infeasible / unbounded."""
    if method == "highs":
        return _solve_highs(lp)
    if method != "simplex":
        raise ArgumentError(f"unknown LP method {method!r}")
    sf = _StandardForm(lp)
    n = lp.num_vars
    if sf.infeasible_bounds:
        return LpSolution("infeasible", np.full(n, np.nan), float("nan"))
    a, b = sf.a, sf.b
    m, ncols = a.shape

    # empty rows: consistent ones are dropped, others make the LP infeasible
    empty = np.all(a == 0.0, axis=1)
    if np.any(empty & (np.abs(b) > FEAS_TOL)):
        return LpSolution("infeasible", np.full(n, np.nan), float("nan"))
    keep = np.flatnonzero(~empty)
    a, b, row_sign = a[keep], b[keep], sf.sign[keep]
    m = keep.size
    if max_iter is None:
        max_iter = 50 * (m + ncols) + 1000

    # initial basis: slack where it carries +1, artificial otherwise
    init_basis = []
    art_rows = []
    for i, orig in enumerate(keep):
        if orig >= sf.n_eq and row_sign[i] > 0:
            init_basis.append(sf.nz + orig - sf.n_eq)
        else:
            init_basis.append(ncols + len(art_rows))
            art_rows.append(i)
    n_art = len(art_rows)
    art = np.zeros((m, n_art))
    for k, i in enumerate(art_rows):
        art[i, k] = 1.0
    full = np.hstack([a, art])
    tab = _Tableau(full, b, init_basis)

    if n_art:
        cost1 = np.zeros(ncols + n_art)
        cost1[ncols:] = -1.0
        tab.run(cost1, max_iter)
        tab.refactor()
        infeas = float(np.sum(tab.t[:, -1][np.array(tab.basis) >= ncols]))
        if infeas > FEAS_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
            return LpSolution("infeasible", np.full(n, np.nan), float("nan"), tab.iterations)
        # drive artificials out of the basis; drop redundant rows
        r = 0
        while r < len(tab.basis):
            if tab.basis[r] >= ncols:
                row = tab.t[r, :ncols]
                cand = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                if cand.size:
                    tab.pivot(r, int(cand[np.argmax(np.abs(row[cand]))]))
                else:
                    tab.t = np.delete(tab.t, r, axis=0)
                    tab.a0 = np.delete(tab.a0, r, axis=0)
                    tab.b0 = np.delete(tab.b0, r)
                    del tab.basis[r]
                    keep = np.delete(keep, r)
                    row_sign = np.delete(row_sign, r)
                    continue
            r += 1
        tab.a0 = tab.a0[:, :ncols]
        tab.refactor()

    cost2 = sf.c
    status = tab.run(cost2, max_iter)
    if status == "unbounded":
        return LpSolution("unbounded", np.full(n, np.nan), float("inf"), tab.iterations)
    tab.refactor()
    z = np.zeros(ncols)
    z[tab.basis] = np.maximum(tab.t[:, -1], 0.0)
    x = sf.offset + sf.transform @ z[: sf.nz]
    obj = float(lp.objective @ x)

    # duals from the final basis: B^T y = c_B
    y = np.zeros(len(tab.basis))
    if tab.basis:
        y = np.linalg.solve(tab.a0[:, tab.basis].T, cost2[tab.basis])
    y_full = np.zeros(sf.sign.size)
    y_full[keep] = y * row_sign
    dual_obj = float(y_full @ (sf.b * sf.sign)) + sf.const
    return LpSolution(
        "optimal",
        x,
        obj,
        tab.iterations,
        duals_eq=y_full[: sf.n_eq],
        duals_ub=y_full[sf.n_eq : sf.n_eq + sf.n_ub_user],
        dual_objective=dual_obj,
    )


def _solve_highs(lp: LinearProgram) -> LpSolution:
    from scipy.optimize import linprog

    bounds = list(zip(
        [None if not np.isfinite(v) else v for v in lp.var_lower],
        [None if not np.isfinite(v) else v for v in lp.var_upper],
    ))
    res = linprog(
        -lp.objective,
        A_ub=lp.ub_matrix if lp.ub_rhs.size else None,
        b_ub=lp.ub_rhs if lp.ub_rhs.size else None,
        A_eq=lp.eq_matrix if lp.eq_rhs.size else None,
        b_eq=lp.eq_rhs if lp.eq_rhs.size else None,
        bounds=bounds,
        method="highs",
    )
    n = lp.num_vars
    if res.status == 2:
        return LpSolution("infeasible", np.full(n, np.nan), float("nan"), res.nit)
    if res.status == 3:
        return LpSolution("unbounded", np.full(n, np.nan), float("inf"), res.nit)
    if res.status != 0:
        raise NumericError(f"HiGHS failed: {res.message}")
    duals_eq = -res.eqlin.marginals if lp.eq_rhs.size else np.zeros(0)
    duals_ub = -res.ineqlin.marginals if lp.ub_rhs.size else np.zeros(0)
    lo, hi = lp.var_lower, lp.var_upper
    bound_part = np.sum(np.where(np.isfinite(lo), lo, 0.0) * res.lower.marginals) + np.sum(
        np.where(np.isfinite(hi), hi, 0.0) * res.upper.marginals
    )
    dual_obj = float(duals_eq @ lp.eq_rhs + duals_ub @ lp.ub_rhs - bound_part)
    return LpSolution("optimal", res.x, float(lp.objective @ res.x), res.nit, duals_eq, duals_ub, dual_obj)
