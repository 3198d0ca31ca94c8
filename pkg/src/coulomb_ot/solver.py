"""Exact and entropic solvers for the discrete transport problem.

Arcs of infinite cost (the diagonal under the Coulomb cost) are never part of
the arc set, so every returned plan has finite cost.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp

from ._graph import relax
from .cost import CostModel
from .measures import DiscreteMeasure

log = logging.getLogger(__name__)

MASS_FLOOR = 1e-14
DENSE_LP_LIMIT = 80_000


class InfeasibleError(RuntimeError):
    """Every coupling of the two marginals has infinite cost."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class Plan:
    """Sparse coupling stored as parallel arrays ``rows``, ``cols``, ``mass``."""

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    cost_value: float = float("nan")

    def __post_init__(self):
        order = np.lexsort((self.cols, self.rows))
        rows = np.asarray(self.rows, np.int64)[order]
        cols = np.asarray(self.cols, np.int64)[order]
        mass = np.asarray(self.mass, float)[order]
        if np.any(mass <= 0):
            raise ValueError("plan masses must be positive")
        for name, arr in (("rows", rows), ("cols", cols), ("mass", mass)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def build(cls, rows, cols, mass, mu, nu, cost):
        rows = np.asarray(rows, np.int64)
        cols = np.asarray(cols, np.int64)
        mass = np.asarray(mass, float)
        keep = mass > MASS_FLOOR
        rows, cols, mass = rows[keep], cols[keep], mass[keep]
        value = float(np.sum(mass * cost.eval(mu.points[rows], nu.points[cols])))
        return cls(rows, cols, mass, mu, nu, value)

    def __len__(self):
        return len(self.mass)

    @property
    def entries(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.mass.tolist()))

    @property
    def sources(self):
        return self.mu.points[self.rows]

    @property
    def targets(self):
        return self.nu.points[self.cols]

    def row_sums(self):
        return np.bincount(self.rows, self.mass, minlength=self.mu.size)

    def col_sums(self):
        return np.bincount(self.cols, self.mass, minlength=self.nu.size)

    def marginal_error(self):
        return max(
            float(np.abs(self.row_sums() - self.mu.weights).max()),
            float(np.abs(self.col_sums() - self.nu.weights).max()),
        )

    def recompute_cost(self, cost):
        return float(np.sum(self.mass * cost.eval(self.sources, self.targets)))

    def dense(self):
        out = np.zeros((self.mu.size, self.nu.size))
        np.add.at(out, (self.rows, self.cols), self.mass)
        return out

    def main_target(self):
        """Per source atom, the target receiving the largest share of its mass."""
        best = np.full(self.mu.size, -1, dtype=np.int64)
        top = np.full(self.mu.size, -1.0)
        for i, j, m in zip(self.rows, self.cols, self.mass):
            if m > top[i]:
                top[i], best[i] = m, j
        return best

    def barycentric_map(self):
        """Mass-weighted mean target of each source atom."""
        w = self.row_sums()
        out = np.zeros((self.mu.size, self.nu.dim))
        np.add.at(out, self.rows, self.mass[:, None] * self.targets)
        return out / w[:, None]

    def support_set(self):
        return set(zip(self.rows.tolist(), self.cols.tolist()))

    def transpose(self):
        return Plan(self.cols, self.rows, self.mass, self.nu, self.mu, self.cost_value)

    def restrict(self, keep):
        keep = np.asarray(keep)
        return Plan(self.rows[keep], self.cols[keep], self.mass[keep], self.mu, self.nu, float("nan"))


@dataclass
class SolveReport:
    primal_cost: float
    dual_cost: float
    dual_gap: float
    iterations: int
    method: str
    u: np.ndarray = field(repr=False, default=None)
    v: np.ndarray = field(repr=False, default=None)
    marginal_error: float = 0.0

    def to_dict(self):
        return {
            "primal_cost": self.primal_cost,
            "dual_cost": self.dual_cost,
            "dual_gap": self.dual_gap,
            "iterations": self.iterations,
            "method": self.method,
            "marginal_error": self.marginal_error,
        }


def _equal_weights(mu, nu):
    n = mu.size
    return (
        n == nu.size
        and np.allclose(mu.weights, 1.0 / n, rtol=0, atol=1e-15)
        and np.allclose(nu.weights, 1.0 / n, rtol=0, atol=1e-15)
    )


def _assignment_duals(C, perm):
    """Dual pair for an optimal permutation via shortest paths on its support."""
    n = len(perm)
    diag = C[np.arange(n), perm]
    # node k = support entry (k, perm[k]); arc k -> l costs C[l, perm[k]] - C[k, perm[k]]
    W = C[:, perm].T - diag[:, None]
    dist, _, rounds, _ = relax(W)
    v = np.empty(n)
    v[perm] = diag - dist
    u = np.min(C - v[None, :], axis=1)
    return u, v, rounds


def solve_lp(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostModel, *,
             symmetrize: bool = False, max_size: int = 4096, seed_eta: float | None = None):
    """Exact solution of the discrete transport LP.

    Equal-weight instances of equal size go to the Hungarian-type assignment
    solver; others to HiGHS, either on the full arc set or, above
    ``DENSE_LP_LIMIT`` arcs, by column generation seeded from an entropic plan.
    ``symmetrize=True`` (only for ``mu`` equal to ``nu``) averages the plan with
    its transpose, which is again optimal because the cost is symmetric.
    """
    if mu.size > max_size or nu.size > max_size:
        raise ValueError(f"instance {mu.size}x{nu.size} exceeds max_size={max_size}")
    if symmetrize and not mu.same_as(nu):
        raise ValueError("symmetrized mode requires mu == nu")
    C = cost.matrix(mu.points, nu.points)
    a, b = mu.weights, nu.weights
    if _equal_weights(mu, nu):
        try:
            r, perm = linear_sum_assignment(C)
        except ValueError as exc:
            raise InfeasibleError("no finite-cost assignment exists") from exc
        u, v, rounds = _assignment_duals(C, perm)
        rows, cols, mass, method = r, perm, np.full(len(r), 1.0 / len(r)), "lp"
        iterations = rounds
    elif np.isfinite(C).sum() <= DENSE_LP_LIMIT:
        I, J = np.nonzero(np.isfinite(C))
        res = _restricted_lp(a, b, C, I, J)
        rows, cols, mass = I, J, res.x
        u, v = res.eqlin.marginals[: len(a)], res.eqlin.marginals[len(a):]
        iterations, method = int(res.nit), "lp"
    else:
        rows, cols, mass, u, v, iterations = _column_generation(a, b, C, seed_eta)
        method = "lp"
    plan = Plan.build(rows, cols, mass, mu, nu, cost)
    if symmetrize:
        plan = symmetrized(plan, cost)
    dual = float(a @ u + b @ v)
    report = SolveReport(plan.cost_value, dual, plan.cost_value - dual, int(iterations), method,
                         np.asarray(u), np.asarray(v), plan.marginal_error())
    return plan, report


def symmetrized(plan: Plan, cost: CostModel) -> Plan:
    """Average of ``plan`` and its transpose (requires identical marginals)."""
    if not plan.mu.same_as(plan.nu):
        raise ValueError("symmetrization requires mu == nu")
    rows = np.concatenate([plan.rows, plan.cols])
    cols = np.concatenate([plan.cols, plan.rows])
    mass = np.concatenate([plan.mass, plan.mass]) * 0.5
    n = plan.mu.size
    key = rows * n + cols
    uniq, inv = np.unique(key, return_inverse=True)
    total = np.bincount(inv, mass)
    return Plan.build(uniq // n, uniq % n, total, plan.mu, plan.nu, cost)


def _restricted_lp(a, b, C, I, J):
    n, m = len(a), len(b)
    k = len(I)
    cols = np.arange(k)
    A = sparse.vstack([
        sparse.csr_matrix((np.ones(k), (I, cols)), shape=(n, k)),
        sparse.csr_matrix((np.ones(k), (J, cols)), shape=(m, k)),
    ]).tocsc()
    res = linprog(C[I, J], A_eq=A, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    if res.status == 2:
        raise InfeasibleError("no finite-cost coupling exists")
    if res.status != 0:
        raise RuntimeError(f"HiGHS failed: {res.message}")
    return res


def _log_plan(a, b, C, eta, iters):
    K = np.where(np.isfinite(C), -eta * C, -np.inf)
    la, lb = np.log(a), np.log(b)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    for _ in range(iters):
        f = la - logsumexp(K + g[None, :], axis=1)
        g = lb - logsumexp(K + f[:, None], axis=0)
    return K + f[:, None] + g[None, :]


def _column_generation(a, b, C, eta=None, k=10, max_rounds=60, tol=1e-11):
    finite = np.isfinite(C)
    if eta is None:
        spread = np.percentile(C[finite], 95) - C[finite].min()
        eta = 400.0 / max(spread, 1e-12)
    lg = _log_plan(a, b, C, eta, 300)
    n, m = C.shape
    k = min(k, n - 1, m - 1)
    mask = np.zeros(C.shape, bool)
    top = np.argpartition(-lg, k, axis=1)[:, :k]
    mask[np.arange(n)[:, None], top] = True
    topc = np.argpartition(-lg, k, axis=0)[:k, :]
    mask[topc, np.arange(m)[None, :]] = True
    mask &= finite
    total_it = 0
    for rnd in range(max_rounds):
        I, J = np.nonzero(mask)
        try:
            res = _restricted_lp(a, b, C, I, J)
        except InfeasibleError:
            # seed arcs too sparse: widen from the entropic plan
            k = min(2 * k, n - 1, m - 1)
            top = np.argpartition(-lg, k, axis=1)[:, :k]
            grown = mask.copy()
            grown[np.arange(n)[:, None], top] = True
            grown &= finite
            if np.array_equal(grown, mask):
                if mask.sum() == finite.sum():
                    raise
                mask = finite.copy()
            else:
                mask = grown
            continue
        total_it += int(res.nit)
        u, v = res.eqlin.marginals[:n], res.eqlin.marginals[n:]
        with np.errstate(invalid="ignore"):
            red = C - u[:, None] - v[None, :]
        viol = (red < -tol) & ~mask & finite
        log.debug("column generation round %d: %d arcs, %d violated", rnd, len(I), viol.sum())
        if not viol.any():
            return I, J, res.x, u, v, total_it
        redm = np.where(viol, red, np.inf)
        kk = min(k, m - 1)
        add = np.argpartition(redm, kk, axis=1)[:, :kk]
        rows = np.arange(n)[:, None]
        mask[rows, add] |= viol[rows, add]
    raise ConvergenceError("column generation did not reach optimality", float(-red[viol].min()))


def solve_entropic(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostModel, eta: float,
                   tol: float = 1e-9, max_iter: int = 100_000):
    """Log-domain iterative scaling for ``min <P, C> - H(P) / eta``.

    The kernel is ``exp(-eta * C)`` with infinite-cost arcs removed.  The
    reported dual value is that of the scaled potentials ``f / eta, g / eta``;
    the gap is ``-(1/eta) sum P log P >= 0``.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    C = cost.matrix(mu.points, nu.points)
    finite = np.isfinite(C)
    if not finite.any():
        raise InfeasibleError("no finite-cost arc")
    a, b = mu.weights, nu.weights
    K = np.where(finite, -eta * C, -np.inf)
    la, lb = np.log(a), np.log(b)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    err = np.inf
    it = 0
    while it < max_iter:
        it += 1
        f = la - logsumexp(K + g[None, :], axis=1)
        g = lb - logsumexp(K + f[:, None], axis=0)
        if not np.all(np.isfinite(f)) or not np.all(np.isfinite(g)):
            raise InfeasibleError("entropic kernel has an empty row or column")
        if it % 10 == 0 or it == 1:
            P = np.exp(K + f[:, None] + g[None, :])
            err = float(np.abs(P.sum(axis=1) - a).sum())
            if err < tol:
                break
    else:
        raise ConvergenceError(f"no convergence in {max_iter} iterations", err)
    P = np.exp(K + f[:, None] + g[None, :])
    I, J = np.nonzero(P > MASS_FLOOR)
    plan = Plan.build(I, J, P[I, J], mu, nu, cost)
    u, v = f / eta, g / eta
    dual = float(a @ u + b @ v)
    primal = float(np.sum(P[finite] * C[finite]))
    report = SolveReport(primal, dual, primal - dual, it, f"entropic(eta={eta!r})", u, v,
                         plan.marginal_error())
    return plan, report


@dataclass
class MonotonicityReport:
    pairs_checked: int
    violations: list
    max_violation: float

    @property
    def ok(self):
        return not self.violations


def verify_c_monotonicity(plan: Plan, cost: CostModel, samples: int | None = None,
                          seed: int = 0, atol: float = 1e-9, max_report: int = 100):
    """Check ``c(x,y) + c(x',y') <= c(x,y') + c(x',y) + atol`` over pairs of support entries.

    ``samples=None`` (or at least the number of pairs) checks all pairs.
    Violations are returned as pairs of plan entry indices.
    """
    S = len(plan)
    X, Y = plan.sources, plan.targets
    diag = cost.eval(X, Y)
    total = S * (S - 1) // 2
    viol, worst = [], 0.0
    if samples is None or samples >= total:
        checked = total
        for s in range(0, S, 512):
            block = cost.matrix(X[s:s + 512], Y)
            lhs = diag[s:s + 512, None] + diag[None, :]
            rhs = block + cost.matrix(X, Y[s:s + 512]).T
            excess = lhs - rhs
            k = np.arange(s, min(s + 512, S))
            excess = np.where(np.arange(S)[None, :] > k[:, None], excess, -np.inf)
            bad = np.argwhere(excess > atol)
            if bad.size:
                worst = max(worst, float(excess[excess > atol].max()))
                for p, q in bad[: max_report - len(viol)]:
                    viol.append((int(k[p]), int(q)))
    else:
        rng = np.random.default_rng(seed)
        p = rng.integers(0, S, samples)
        q = rng.integers(0, S, samples)
        keep = p != q
        p, q = p[keep], q[keep]
        checked = int(keep.sum())
        excess = diag[p] + diag[q] - cost.eval(X[p], Y[q]) - cost.eval(X[q], Y[p])
        bad = np.flatnonzero(excess > atol)
        if bad.size:
            worst = float(excess[bad].max())
            viol = [(int(p[t]), int(q[t])) for t in bad[:max_report]]
    return MonotonicityReport(checked, viol, worst)
