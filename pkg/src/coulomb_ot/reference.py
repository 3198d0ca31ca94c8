"""Closed-form solutions and exhaustive oracles."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cost import CostModel
from .measures import DiscreteMeasure
from .solver import InfeasibleError, Plan, _restricted_lp


@dataclass(frozen=True)
class ReferenceSolution:
    kind: str
    map: Callable | np.ndarray
    cost_value: float


def uniform_1d_map(L: float, x):
    """Optimal Coulomb map of the uniform law on ``[0, L]``: shift by ``L/2`` cyclically.

    ``x <= L/2`` goes to ``x + L/2``, the rest to ``x - L/2``.
    """
    if not L > 0:
        raise ValueError("L must be positive")
    x = np.asarray(x, float)
    if np.any(x < 0) or np.any(x > L):
        raise ValueError(f"x must lie in [0, {L}]")
    out = np.where(x <= L / 2, x + L / 2, x - L / 2)
    return float(out) if out.ndim == 0 else out


def uniform_1d(L: float = 1.0) -> ReferenceSolution:
    """Every particle travels ``L/2``, so the cost is ``2 / L``."""
    return ReferenceSolution("uniform-1d", lambda x: uniform_1d_map(L, x), 2.0 / L)


def two_point() -> ReferenceSolution:
    """``mu = nu = (delta_0 + delta_1)/2``: the atoms swap.

    Each of the two matched pairs costs 1, so the pair sum is 2 and the
    mass-weighted cost is 1.
    """
    table = np.array([[0.0, 1.0], [1.0, 0.0]])
    return ReferenceSolution("two-point", table, 1.0)


def brute_force_assignment(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostModel):
    """Minimum over all ``n!`` permutations of an equal-weight instance (``n <= 8``).

    Ties keep the first permutation in lexicographic order.
    """
    n = mu.size
    if nu.size != n:
        raise ValueError("brute force needs equally many atoms")
    if n > 8:
        raise ValueError("brute force limited to n <= 8")
    if not (np.allclose(mu.weights, 1.0 / n) and np.allclose(nu.weights, 1.0 / n)):
        raise ValueError("brute force needs equal weights")
    C = cost.matrix(mu.points, nu.points)
    rows = np.arange(n)
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(n)):
        val = C[rows, perm].sum()
        if val < best:
            best, best_perm = val, perm
    if best_perm is None:
        raise InfeasibleError("no finite-cost assignment")
    plan = Plan.build(rows, np.array(best_perm), np.full(n, 1.0 / n), mu, nu, cost)
    return plan, float(best / n)


@dataclass
class RadialPlan:
    radii: np.ndarray
    masses: np.ndarray
    plan: np.ndarray
    image_radius: np.ndarray
    r_star: float
    cost_value: float
    pairing: str


def radial_mass_table(m: DiscreteMeasure, width: float, center=None):
    """Bin a measure into shells ``[k w, (k+1) w)`` about ``center``; returns ``(radii, masses)``."""
    c = np.zeros(m.dim) if center is None else np.asarray(center, float)
    r = np.linalg.norm(m.points - c, axis=1)
    k = np.floor(r / width).astype(np.int64)
    mass = np.bincount(k, m.weights)
    radii = (np.arange(len(mass)) + 0.5) * width
    keep = mass > 0
    return radii[keep], mass[keep]


def radial_reduction_oracle(radii, masses, pairing: str = "antipodal") -> RadialPlan:
    """Exact shell-to-shell LP for a radially symmetric ``mu = nu``.

    Shell cost is ``1/(r + s)`` for antipodal pairing (image on the opposite
    ray) and ``1/|r - s|`` on the same ray (infinite for ``r = s``);
    ``"best"`` takes the smaller of the two.  ``r_star`` is where the mean
    image radius crosses the diagonal, interpolated between shell centres:
    inner shells map outward and outer shells inward.
    """
    r = np.asarray(radii, float)
    w = np.asarray(masses, float)
    if r.ndim != 1 or r.shape != w.shape or len(r) == 0:
        raise ValueError("radial table must be two equal-length 1D arrays")
    if np.any(w < 0) or not abs(w.sum() - 1.0) < 1e-9 or np.any(np.diff(r) <= 0) or r[0] < 0:
        raise ValueError("degenerate radial table: need increasing radii and masses summing to 1")
    with np.errstate(divide="ignore"):
        anti = 1.0 / (r[:, None] + r[None, :])
        same = 1.0 / np.abs(r[:, None] - r[None, :])
    if pairing == "antipodal":
        C = anti
    elif pairing == "same-ray":
        C = same
    elif pairing == "best":
        C = np.minimum(anti, same)
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    I, J = np.nonzero(np.isfinite(C))
    res = _restricted_lp(w, w, C, I, J)
    P = np.zeros_like(C)
    P[I, J] = res.x
    P[P < 1e-14] = 0.0
    image = (P @ r) / np.where(w > 0, w, 1.0)
    return RadialPlan(r, w, P, image, _crossing(r, image), float(res.fun), pairing)


def _crossing(r, image):
    gap = image - r
    if len(r) == 1:
        return float(r[0])
    for k in range(len(r) - 1):
        if gap[k] > 0 >= gap[k + 1]:
            t = gap[k] / (gap[k] - gap[k + 1])
            return float(r[k] + t * (r[k + 1] - r[k]))
    return float("nan")
