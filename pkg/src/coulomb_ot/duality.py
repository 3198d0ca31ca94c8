"""Kantorovich potentials from an optimal plan, c-transforms and map recovery."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._graph import NegativeCycleError, relax
from .cost import CostDomainError, CostModel, c_exponential, semiconcavity_constant
from .measures import DiscreteMeasure
from .solver import Plan


class NotCMonotoneError(NegativeCycleError):
    """The support graph has a negative cycle, so the plan is not optimal."""


@dataclass(eq=False)
class PotentialPair:
    """``psi`` on source atoms, ``phi`` on target atoms, with ``psi + phi <= c``."""

    psi: np.ndarray
    phi: np.ndarray
    K: float
    base: tuple
    chain_length: int = 0
    cost: str = ""

    def to_dict(self):
        return {
            "psi": self.psi.tolist(),
            "phi": self.phi.tolist(),
            "K": self.K if np.isfinite(self.K) else None,
            "base": list(self.base),
            "cost": self.cost,
        }

    @classmethod
    def from_dict(cls, d):
        K = float("inf") if d.get("K") is None else float(d["K"])
        return cls(np.asarray(d["psi"], float), np.asarray(d["phi"], float), K,
                   tuple(d["base"]), 0, d.get("cost", ""))

    def slack(self, plan: Plan, cost: CostModel):
        """Return ``(max over all pairs of psi+phi-c, max |psi+phi-c| on support)``."""
        C = cost.matrix(plan.mu.points, plan.nu.points)
        with np.errstate(invalid="ignore"):
            S = self.psi[:, None] + self.phi[None, :] - C
        feas = float(np.nanmax(np.where(np.isfinite(C), S, -np.inf)))
        eq = float(np.abs(S[plan.rows, plan.cols]).max())
        return feas, eq


def _points(m):
    return m.points if isinstance(m, DiscreteMeasure) else np.atleast_2d(np.asarray(m, float))


def c_transform(f, cost: CostModel, sources, targets):
    """``f^c(x_i) = min_j [c(x_i, y_j) - f_j]`` for ``f`` given on ``targets``.

    The cost is symmetric, so swapping the roles of the two point sets gives
    the transform in the other direction.
    """
    X, Y = _points(sources), _points(targets)
    f = np.asarray(f, float)
    out = np.empty(len(X))
    for s in range(0, len(X), 1024):
        out[s:s + 1024] = np.min(cost.matrix(X[s:s + 1024], Y) - f[None, :], axis=1)
    return out


def ruschendorf_potentials(plan: Plan, cost: CostModel, max_chain: int | None = None,
                           base: int = 0) -> PotentialPair:
    """Potentials from chains of support entries.

    Node ``k`` of the support graph is entry ``(x_k, y_k)``; the arc ``k -> l``
    weighs ``c(x_l, y_k) - c(x_k, y_k)``.  The chain infimum from the base entry
    is a shortest path, so ``psi(x_l)`` is its length, ``phi(y_l) = c(x_l, y_l) -
    psi(x_l)`` and finally ``psi`` is replaced by the c-transform of ``phi`` so
    the pair is feasible on every arc.  The base entry gets ``psi = 0``.
    """
    X, Y = plan.sources, plan.targets
    S = len(plan)
    if not 0 <= base < S:
        raise ValueError(f"base entry {base} out of range")
    Csup = cost.matrix(X, Y)  # Csup[l, k] = c(x_l, y_k)
    diag = np.diag(Csup).copy()
    W = Csup.T - diag[:, None]
    try:
        dist, _, rounds, settled = relax(W, base=base, max_rounds=max_chain)
    except NegativeCycleError as exc:
        raise NotCMonotoneError(
            f"support is not c-monotone: negative cycle through entries {exc.cycle}", exc.cycle
        ) from None
    if not np.all(np.isfinite(dist)):
        raise ValueError("support graph is not connected from the base entry")
    phi = np.full(plan.nu.size, np.inf)
    np.minimum.at(phi, plan.cols, diag - dist)
    if np.any(~np.isfinite(phi)):
        raise ValueError("some target atom carries no plan mass")
    psi = c_transform(phi, cost, plan.mu, plan.nu)
    i0, j0 = int(plan.rows[base]), int(plan.cols[base])
    return PotentialPair(psi, phi, semiconcavity_constant(cost), (i0, j0), rounds, str(cost))


def _axis_triples(m: DiscreteMeasure):
    """Yield ``(axis, left, center, right)`` index arrays of grid-adjacent triples."""
    if m.grid is None:
        raise ValueError("measure has no regular grid")
    g = m.grid
    table = g.lookup()
    for axis in range(m.dim):
        idx = g.index
        lo = idx.copy()
        hi = idx.copy()
        lo[:, axis] -= 1
        hi[:, axis] += 1
        ok = (lo[:, axis] >= 0) & (hi[:, axis] < g.shape[axis])
        center = np.flatnonzero(ok)
        left = table[tuple(lo[ok].T)]
        right = table[tuple(hi[ok].T)]
        both = (left >= 0) & (right >= 0)
        yield axis, left[both], center[both], right[both]


@dataclass
class SemiconcavityReport:
    K: float
    max_excess: float
    tol: float
    worst_index: int
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return self.max_excess <= self.tol


def semiconcavity_probe(psi, m: DiscreteMeasure, K: float, tol: float = 1e-8):
    """Check that second differences of ``psi - K|x|^2/2`` along grid axes are ``<= tol``.

    The tolerance is scaled by ``max(1, max|psi|)``.
    """
    psi = np.asarray(psi, float)
    if len(psi) != m.size:
        raise ValueError("psi must have one value per atom")
    if not np.isfinite(K):
        raise ValueError("semi-concavity needs a finite K (use the modified cost)")
    scale = max(1.0, float(np.abs(psi).max()))
    worst, where, bad = -np.inf, -1, []
    for axis, l, c, r in _axis_triples(m):
        h = m.grid.spacing[axis]
        second = psi[l] - 2 * psi[c] + psi[r] - K * h**2
        if len(second):
            k = int(np.argmax(second))
            if second[k] > worst:
                worst, where = float(second[k]), int(c[k])
            bad.extend(int(i) for i in c[second > tol * scale])
    return SemiconcavityReport(K, worst, tol * scale, where, sorted(set(bad)))


def grid_gradient(values, m: DiscreteMeasure):
    """Central differences with one-sided fallback; returns ``(grad, one_sided_mask)``."""
    if m.grid is None:
        raise ValueError("measure has no regular grid")
    g = m.grid
    table = g.lookup()
    grad = np.full((m.size, m.dim), np.nan)
    one_sided = np.zeros(m.size, bool)
    for axis in range(m.dim):
        h = g.spacing[axis]
        lo = g.index.copy()
        hi = g.index.copy()
        lo[:, axis] -= 1
        hi[:, axis] += 1
        left = np.full(m.size, -1)
        right = np.full(m.size, -1)
        okl = lo[:, axis] >= 0
        okr = hi[:, axis] < g.shape[axis]
        left[okl] = table[tuple(lo[okl].T)]
        right[okr] = table[tuple(hi[okr].T)]
        both = (left >= 0) & (right >= 0)
        grad[both, axis] = (values[right[both]] - values[left[both]]) / (2 * h)
        fwd = ~both & (right >= 0)
        grad[fwd, axis] = (values[right[fwd]] - values[fwd]) / h
        bwd = ~both & (left >= 0)
        grad[bwd, axis] = (values[bwd] - values[left[bwd]]) / h
        one_sided |= ~both
    return grad, one_sided


@dataclass
class MapTable:
    predicted: np.ndarray
    assigned: np.ndarray
    residual: np.ndarray
    flags: list

    def flagged(self):
        return [i for i, f in enumerate(self.flags) if f]


def map_from_potential(psi, sources: DiscreteMeasure, plan: Plan, flag_tol: float | None = None,
                       delta: float | None = None) -> MapTable:
    """Predict targets ``x + p / |p|^{3/2}`` with ``p`` the finite-difference gradient of ``psi``.

    Residuals are distances to the plan's barycentric target.  Flags:
    ``"zero-gradient"``, ``"boundary"`` (one-sided stencil) and
    ``"large-residual"`` (above ``flag_tol``, default two grid spacings).
    """
    psi = np.asarray(psi, float)
    grad, one_sided = grid_gradient(psi, sources)
    assigned = plan.barycentric_map()
    if flag_tol is None:
        flag_tol = 2.0 * sources.spacing
    pred = np.full_like(assigned, np.nan)
    res = np.full(sources.size, np.nan)
    flags = []
    for i in range(sources.size):
        reason = []
        try:
            pred[i] = c_exponential(sources.points[i], grad[i], delta)
            res[i] = float(np.linalg.norm(pred[i] - assigned[i]))
        except CostDomainError:
            reason.append("zero-gradient" if not np.any(grad[i]) else "capped-region")
        if one_sided[i]:
            reason.append("boundary")
        if np.isfinite(res[i]) and res[i] > flag_tol:
            reason.append("large-residual")
        flags.append(",".join(reason))
    return MapTable(pred, assigned, res, flags)
