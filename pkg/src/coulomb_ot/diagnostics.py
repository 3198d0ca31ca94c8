"""Local regularity diagnostics for an optimal Coulomb plan.

Most quantities can be evaluated either in raw coordinates or in the affine
frame of a support point ``(x0, y0)`` built by :func:`build_normalization`:

    xh = S (x - x0),   yh = Q (y - y0),
    S = (-A)^{1/2},    Q = -(-A)^{-1/2} M,

where ``A = D^2 psi(x0) - D_xx c(x0, y0)`` and ``M = D_yx c(x0, y0)``.  In this
frame the mixed Hessian of the transformed cost at the base point is ``-I``
and a smooth map has ``yh ~ xh`` to first order.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import sqrtm
from scipy.optimize import linear_sum_assignment, linprog

from .cost import CostModel
from .duality import PotentialPair, grid_gradient
from .measures import DiscreteMeasure, ball_volume, nonconcentration_radius
from .solver import Plan, _restricted_lp

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


# -- configuration and frames -------------------------------------------------


@dataclass
class DiagnosticsConfig:
    """Knobs for :func:`diagnose`; ``delta=None`` picks ``0.9 * r0 / 2``."""

    eps_nonconc: float = 0.5
    delta: float | None = None
    radii: tuple = (0.02, 0.04, 0.08)
    theta: float = 5.0
    eps0: float = 0.5
    eps: float = 0.5
    Lambda0: float = 50.0
    M_const: float = 50.0
    lambda_const: float = 50.0
    C_defect: float = 1.0
    stability: float = 0.1
    alpha: float = 1.0
    max_points: int = 400
    seed: int = 0

    def __post_init__(self):
        self.radii = tuple(sorted(float(r) for r in self.radii))
        if not self.radii or self.radii[0] <= 0:
            raise ValueError("radii must be positive")
        if not 0 < self.eps_nonconc < 1:
            raise ValueError("eps_nonconc must lie in (0, 1)")
        if self.theta <= 0:
            raise ValueError("theta must be positive")

    def resolve_delta(self, mu, nu):
        r0 = nonconcentration_radius(mu, nu, self.eps_nonconc)
        delta = 0.9 * r0 / 2 if self.delta is None else self.delta
        if not delta < r0 / 2:
            raise ValueError(f"delta={delta!r} must be below r0/2={r0 / 2!r}")
        return r0, delta


@dataclass
class Frame:
    """Affine coordinates centred at a support point; ``S`` acts on x, ``Q`` on y."""

    x0: np.ndarray
    y0: np.ndarray
    S: np.ndarray
    Q: np.ndarray
    mass_scale: float = 1.0

    @classmethod
    def raw(cls, x0, y0):
        x0 = np.atleast_1d(np.asarray(x0, float))
        y0 = np.atleast_1d(np.asarray(y0, float))
        d = len(x0)
        return cls(x0, y0, np.eye(d), np.eye(d), 1.0)

    def fx(self, x):
        return (np.atleast_2d(x) - self.x0) @ self.S.T

    def fy(self, y):
        return (np.atleast_2d(y) - self.y0) @ self.Q.T

    def back_x(self, xh):
        return np.atleast_2d(xh) @ np.linalg.inv(self.S).T + self.x0

    def back_y(self, yh):
        return np.atleast_2d(yh) @ np.linalg.inv(self.Q).T + self.y0

    def mixed_hessian(self, cost, x, y):
        """``D_yx`` of the transformed cost at raw points ``x, y``."""
        Sinv = np.linalg.inv(self.S)
        Qinv = np.linalg.inv(self.Q)
        return Qinv.T @ cost.hessian_blocks(x, y)[2] @ Sinv


@dataclass
class Normalization:
    index: int
    x0: np.ndarray
    y0: np.ndarray
    A: np.ndarray
    M_mat: np.ndarray
    frame: Frame | None
    base_check: float
    stable: bool
    projected: bool
    degenerate: bool
    hessian_change: float

    @property
    def accepted(self):
        return self.frame is not None and self.stable and not self.degenerate and self.base_check <= 1e-6


def _ball(points, center, R):
    return np.linalg.norm(np.atleast_2d(points) - center, axis=1) < R


def _entry_coords(plan, frame):
    if frame is None:
        return plan.sources, plan.targets, plan.mass
    return frame.fx(plan.sources), frame.fy(plan.targets), plan.mass * frame.mass_scale


# -- support --------------------------------------------------------------------


def support_gap(plan: Plan) -> float:
    """Smallest distance ``|x - y|`` over the support of ``plan``."""
    if len(plan) == 0:
        raise ValueError("empty plan")
    return float(np.linalg.norm(plan.sources - plan.targets, axis=1).min())


# -- energies -------------------------------------------------------------------


@dataclass
class EnergyValue:
    value: float
    mass: float
    empty: bool


def local_energy_plus(plan: Plan, x0, R: float, recentering="none", frame: Frame | None = None,
                      y0=None) -> EnergyValue:
    """Forward energy ``R^{-(d+2)} sum_{x in B_R(x0)} m |yh - xh|^2``.

    ``recentering``:

    ``"none"``
        raw coordinates, integrand ``|y - x|^2``;
    ``"affine"``
        coordinates of ``frame`` (ball taken around ``xh = 0``), integrand
        ``|yh - xh|^2``;
    ``"best-fit"``
        raw ball, integrand ``|y - y0 - B (x - x0)|^2`` with ``B`` the
        least-squares affine fit over the ball.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    d = plan.mu.dim
    x0 = np.atleast_1d(np.asarray(x0, float))
    if recentering == "affine":
        if frame is None:
            raise ValueError("affine recentering needs a frame")
        X, Y, m = _entry_coords(plan, frame)
        inside = _ball(X, np.zeros(d), R)
        resid = Y[inside] - X[inside]
    elif recentering == "none":
        X, Y, m = plan.sources, plan.targets, plan.mass
        inside = _ball(X, x0, R)
        resid = Y[inside] - X[inside]
    elif recentering == "best-fit":
        X, Y, m = plan.sources, plan.targets, plan.mass
        inside = _ball(X, x0, R)
        if y0 is None:
            y0 = plan.barycentric_map()[_nearest(plan.mu.points, x0)]
        dx = X[inside] - x0
        dy = Y[inside] - y0
        if inside.sum() > d:
            w = np.sqrt(m[inside])[:, None]
            B = np.linalg.lstsq(w * dx, w * dy, rcond=None)[0].T
        else:
            B = np.eye(d)
        resid = dy - dx @ B.T
    else:
        raise ValueError(f"unknown recentering {recentering!r}")
    if not inside.any():
        return EnergyValue(0.0, 0.0, True)
    val = float(np.sum(m[inside] * np.sum(resid**2, axis=1))) / R ** (d + 2)
    return EnergyValue(val, float(m[inside].sum()), False)


def local_energy_two_sided(plan: Plan, x0, y0, R: float, frame: Frame | None = None) -> float:
    """Energy over the infinite cross ``(B_R(x0) x R^d) u (R^d x B_R(y0))``.

    Raw coordinates when ``frame`` is None, otherwise the frame's coordinates
    (the cross is then centred at the origin of both copies).
    """
    d = plan.mu.dim
    if frame is None:
        X, Y, m = plan.sources, plan.targets, plan.mass
        cx, cy = np.atleast_1d(np.asarray(x0, float)), np.atleast_1d(np.asarray(y0, float))
    else:
        X, Y, m = _entry_coords(plan, frame)
        cx = cy = np.zeros(d)
    cross = _ball(X, cx, R) | _ball(Y, cy, R)
    if not cross.any():
        return 0.0
    return float(np.sum(m[cross] * np.sum((Y[cross] - X[cross]) ** 2, axis=1))) / R ** (d + 2)


def cross_energy_check(plan, x0, y0, R, frame=None, rtol=1e-12):
    """Test ``E_{2R} <= 2 * 3^{d+2} * E^+_{6R}``; returns ``(lhs, rhs, ok)``."""
    d = plan.mu.dim
    lhs = local_energy_two_sided(plan, x0, y0, 2 * R, frame)
    rec = "none" if frame is None else "affine"
    rhs = 2 * 3 ** (d + 2) * local_energy_plus(plan, x0, 6 * R, rec, frame).value
    return lhs, rhs, lhs <= rhs * (1 + rtol) + 1e-300


# -- data term ------------------------------------------------------------------


def _w2_quantile_1d(lo_a, hi_a, mass_a, lo_b, hi_b, mass_b):
    """Exact W2^2 between two piecewise-constant densities on intervals, same total mass."""
    def knots(lo, hi, mass):
        order = np.argsort(lo)
        lo, hi, mass = lo[order], hi[order], mass[order]
        t = np.concatenate([[0.0], np.cumsum(mass)])
        return t, lo, hi

    ta, la, ha = knots(lo_a, hi_a, mass_a)
    tb, lb, hb = knots(lo_b, hi_b, mass_b)
    total = min(ta[-1], tb[-1])
    t = np.unique(np.concatenate([ta, tb]))
    t = t[t <= total]

    # on each sub-interval both quantiles are affine; use left/right limits
    tl, tr = t[:-1], t[1:]
    mid = 0.5 * (tl + tr)

    def ends(tk, lo, hi):
        k = np.clip(np.searchsorted(tk, mid, side="right") - 1, 0, len(lo) - 1)
        width = tk[k + 1] - tk[k]
        fl = (tl - tk[k]) / width
        fr = (tr - tk[k]) / width
        return lo[k] + fl * (hi[k] - lo[k]), lo[k] + fr * (hi[k] - lo[k])

    al, ar = ends(ta, la, ha)
    bl, br = ends(tb, lb, hb)
    p, q = al - bl, ar - br
    return float(np.sum((tr - tl) * (p * p + p * q + q * q) / 3.0))


def _cells_1d(m: DiscreteMeasure, frame_scale=1.0, center=0.0, mass_scale=1.0):
    x = m.points[:, 0]
    half = 0.5 * m.cell_volume
    lo = (x - half - center) * frame_scale
    hi = (x + half - center) * frame_scale
    lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
    return lo, hi, m.weights * mass_scale


def _data_half_1d(m, c, R, scale, mass_scale):
    lo, hi, w = _cells_1d(m, scale, c, mass_scale)
    clo, chi = np.maximum(lo, -R), np.minimum(hi, R)
    keep = chi > clo
    if not keep.any():
        return None
    frac = (chi[keep] - clo[keep]) / (hi[keep] - lo[keep])
    mass = w[keep] * frac
    total = float(mass.sum())
    ratio = total / (2 * R)
    w2 = _w2_quantile_1d(clo[keep], chi[keep], mass, np.array([-R]), np.array([R]), np.array([total]))
    return w2 / R**3 + (ratio - 1.0) ** 2


def _data_half_nd(m, c, R, S, mass_scale, max_atoms):
    P = (m.points - c) @ S.T
    inside = np.linalg.norm(P, axis=1) < R
    if not inside.any():
        return None
    P = P[inside]
    w = m.weights[inside] * mass_scale
    vol = m.cell_volume[inside] * abs(np.linalg.det(S))
    total, volume = float(w.sum()), float(vol.sum())
    d = m.dim
    if len(P) > max_atoms:
        # pool onto a coarser lattice so the LP stays small
        step = R * (2.0 ** d * math.pi ** (d / 2) / max_atoms) ** (1.0 / d) * 1.2
        key = np.floor(P / step).astype(np.int64)
        _, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        k = inv.max() + 1
        wsum = np.bincount(inv, w, k)
        vsum = np.bincount(inv, vol, k)
        src = np.stack([np.bincount(inv, w * P[:, a], k) for a in range(d)], 1) / wsum[:, None]
        ref = np.stack([np.bincount(inv, vol * P[:, a], k) for a in range(d)], 1) / vsum[:, None]
        a, b = wsum, vsum / vsum.sum() * total
    else:
        src = ref = P
        a, b = w, vol / volume * total
    C = np.sum((src[:, None, :] - ref[None, :, :]) ** 2, axis=2)
    I, J = np.nonzero(np.ones_like(C, dtype=bool))
    res = linprog(C[I, J], A_eq=_transport_constraints(len(a), len(b), I, J),
                  b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    w2 = float(res.fun) if res.status == 0 else float("nan")
    ratio = total / volume
    return w2 / R ** (d + 2) + (ratio - 1.0) ** 2


def _transport_constraints(n, m, I, J):
    from scipy import sparse

    k = len(I)
    cols = np.arange(k)
    return sparse.vstack([
        sparse.csr_matrix((np.ones(k), (I, cols)), shape=(n, k)),
        sparse.csr_matrix((np.ones(k), (J, cols)), shape=(m, k)),
    ]).tocsc()


def data_term(mu: DiscreteMeasure, nu: DiscreteMeasure, x0, y0, R: float,
              frame: Frame | None = None, max_atoms: int = 512) -> float:
    """``D_R``: scaled W2^2 of each marginal to its local uniform average plus mass-ratio defects.

    Atoms are read as constant densities on their cells.  In one dimension
    the cells are clipped to the ball and W2 is exact (quantile coupling);
    in higher dimension the cells whose centre lies in the ball are compared
    by an exact LP with the same cells carrying volume-proportional mass.
    With ``frame`` the measures are pushed to the frame and rescaled by its
    ``mass_scale``.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    x0 = np.atleast_1d(np.asarray(x0, float))
    y0 = np.atleast_1d(np.asarray(y0, float))
    d = mu.dim
    Sx = np.eye(d) if frame is None else frame.S
    Sy = np.eye(d) if frame is None else frame.Q
    ms = 1.0 if frame is None else frame.mass_scale
    parts = []
    for m, c, S in ((mu, x0, Sx), (nu, y0, Sy)):
        if d == 1:
            val = _data_half_1d(m, c[0], R, float(S[0, 0]), ms)
        else:
            val = _data_half_nd(m, c, R, S, ms, max_atoms)
        if val is None:
            raise ValueError("ball contains no mass")
        parts.append(val)
    return float(sum(parts))


# -- normalization ----------------------------------------------------------------


def _nearest(points, x):
    return int(np.argmin(np.linalg.norm(points - np.atleast_1d(x), axis=1)))


def _grid_hessian(values, m: DiscreteMeasure, i: int, step: int):
    """Second-difference Hessian at atom ``i`` with stencil ``step`` cells; None off-grid."""
    g = m.grid
    table = g.lookup()
    d = m.dim
    base = g.index[i]

    def val(offset):
        idx = base + offset
        if np.any(idx < 0) or np.any(idx >= np.asarray(g.shape)):
            return None
        k = table[tuple(idx)]
        return None if k < 0 else values[k]

    H = np.zeros((d, d))
    f0 = values[i]
    for a in range(d):
        e = np.zeros(d, np.int64)
        e[a] = step
        fp, fm = val(e), val(-e)
        if fp is None or fm is None:
            return None
        H[a, a] = (fp - 2 * f0 + fm) / (step * g.spacing[a]) ** 2
        for b in range(a + 1, d):
            f = np.zeros(d, np.int64)
            f[b] = step
            vals = [val(e + f), val(e - f), val(-e + f), val(-e - f)]
            if any(v is None for v in vals):
                return None
            H[a, b] = H[b, a] = (vals[0] - vals[1] - vals[2] + vals[3]) / (
                4 * step**2 * g.spacing[a] * g.spacing[b])
    return H


def build_normalization(plan: Plan, potentials: PotentialPair, x0_index: int,
                        cost: CostModel, stability: float = 0.1) -> Normalization:
    """Matrices ``A``, ``M`` and the affine frame at source atom ``x0_index``.

    ``D^2 psi`` is a Richardson combination of second differences with
    stencils of one and two cells; the point counts as stable when the two
    stencils differ by less than ``stability`` times the size of ``A``.
    """
    mu = plan.mu
    if mu.grid is None:
        raise ValueError("normalization needs sources on a regular grid")
    i = int(x0_index)
    x0 = mu.points[i]
    y0 = plan.barycentric_map()[i]
    d = mu.dim
    c0 = CostModel.coulomb(d)
    M = c0.hessian_blocks(x0, y0)[2]
    Dxx = cost.hessian_xx(x0, y0)
    H1 = _grid_hessian(potentials.psi, mu, i, 1)
    H2 = _grid_hessian(potentials.psi, mu, i, 2)
    nan = np.full((d, d), np.nan)
    if H1 is None or H2 is None:
        return Normalization(i, x0, y0, nan, M, None, np.inf, False, False, True, np.inf)
    H = (4 * H1 - H2) / 3
    A = H - Dxx
    A = 0.5 * (A + A.T)
    scale = max(np.linalg.norm(A, 2), 1e-300)
    change = float(np.linalg.norm(H1 - H2, 2) / scale)
    stable = change < stability
    eig, vec = np.linalg.eigh(A)
    projected = bool(eig.max() > 1e-8 * scale)
    if projected:
        eig = np.minimum(eig, 0.0)
        A = (vec * eig) @ vec.T
    degenerate = bool(np.abs(eig).min() <= 1e-8 * scale)
    if degenerate:
        return Normalization(i, x0, y0, A, M, None, np.inf, stable, projected, True, change)
    S = np.real(sqrtm(-A))
    S = 0.5 * (S + S.T)
    Q = -np.linalg.solve(S, M)
    rho0 = mu.density[i]
    mass_scale = abs(np.linalg.det(S)) / rho0
    frame = Frame(x0.copy(), y0.copy(), S, Q, mass_scale)
    check = float(np.abs(frame.mixed_hessian(cost, x0, y0) + np.eye(d)).max())
    return Normalization(i, x0, y0, A, M, frame, check, stable, projected, False, change)


# -- Hölder smallness of the cost ---------------------------------------------------


def _ball_samples(center, R, d, k, rng):
    """``k`` points of the open ball: the centre, axis points and uniform draws."""
    pts = [np.zeros(d)]
    for a in range(d):
        for s in (-1, 1):
            e = np.zeros(d)
            e[a] = s * 0.999 * R
            pts.append(e)
    extra = max(k - len(pts), 0)
    if extra:
        g = rng.standard_normal((extra, d))
        g /= np.linalg.norm(g, axis=1)[:, None]
        r = R * rng.random(extra) ** (1.0 / d) * 0.999
        pts.extend(g * r[:, None])
    return np.asarray(pts) + center


def _kernel_samples(frame, cost, R, Rx, Ry, k, seed):
    rng = np.random.default_rng(seed)
    d = len(frame.x0)
    xs = frame.back_x(_ball_samples(np.zeros(d), Rx, d, k, rng))
    ys = frame.back_y(_ball_samples(np.zeros(d), Ry, d, k, rng))
    xh, yh = frame.fx(xs), frame.fy(ys)
    pairs = [(a, b) for a in range(len(xs)) for b in range(len(ys))]
    K = np.array([frame.mixed_hessian(cost, xs[a], ys[b]) for a, b in pairs])
    P = np.array([xh[a] for a, _ in pairs])
    Qp = np.array([yh[b] for _, b in pairs])
    return K, P, Qp


def holder_seminorm(K, P, Qp, alpha):
    """Sampled ``sup |k - k'| / (|x - x'|^a + |y - y'|^a)`` over distinct sample pairs."""
    best = 0.0
    n = len(K)
    flat = K.reshape(n, -1)
    for s in range(n):
        num = np.linalg.norm((K[s + 1:] - K[s]), ord=2, axis=(1, 2)) if K.shape[1] > 1 else \
            np.abs(flat[s + 1:, 0] - flat[s, 0])
        den = (np.linalg.norm(P[s + 1:] - P[s], axis=1) ** alpha
               + np.linalg.norm(Qp[s + 1:] - Qp[s], axis=1) ** alpha)
        ok = den > 0
        if ok.any():
            best = max(best, float(np.max(num[ok] / den[ok])))
    return best


@dataclass
class HolderReport:
    R: float
    K_R: float
    c0_sq: float
    bound: float
    ok: bool


def cost_holder_check(frame: Frame, cost: CostModel, R: float, alpha: float = 1.0,
                      a: float = 2.0, samples: int = 9, seed: int = 0) -> HolderReport:
    """``K_aR`` and the C0 bound ``|k + I|^2 on B_R x B_aR <= ((1+a^al)/a^al)^2 K_aR``.

    ``k`` is the mixed Hessian of the transformed cost; the seminorm and the
    sup are taken over the same sampled points (both include the base point).
    """
    K, P, Qp = _kernel_samples(frame, cost, R, a * R, a * R, samples, seed)
    semi = holder_seminorm(K, P, Qp, alpha)
    K_aR = (a * R) ** (2 * alpha) * semi**2
    inside = np.linalg.norm(P, axis=1) < R
    d = len(frame.x0)
    dev = K[inside] + np.eye(d)
    c0 = float(np.max(np.linalg.norm(dev, ord=2, axis=(1, 2)))) ** 2 if d > 1 else \
        float(np.max(np.abs(dev.reshape(-1)))) ** 2
    bound = ((1 + a**alpha) / a**alpha) ** 2 * K_aR
    return HolderReport(R, K_aR, c0, bound, c0 <= bound * (1 + 1e-12) + 1e-300)


def k_R(frame, cost, R, alpha=1.0, samples=9, seed=0):
    """``K_R = R^{2 alpha} [D_yx c~]^2`` over sampled ``B_R x B_R``."""
    K, P, Qp = _kernel_samples(frame, cost, R, R, R, samples, seed)
    return R ** (2 * alpha) * holder_seminorm(K, P, Qp, alpha) ** 2


def mixed_hessian_deviation(frame, cost, Rx, Ry, samples=9, seed=0):
    """Sampled ``sup |D_yx c~ + I|`` over ``B_Rx x B_Ry`` in frame coordinates."""
    K, _, _ = _kernel_samples(frame, cost, max(Rx, Ry), Rx, Ry, samples, seed)
    d = len(frame.x0)
    return float(np.max(np.linalg.norm(K + np.eye(d), ord=2, axis=(1, 2))))


# -- displacement -------------------------------------------------------------------


@dataclass
class QualitativeReport:
    R: float
    Lambda0: float
    Lambda_min: float
    ok: bool


def displacement_check_qualitative(plan, x0, y0, R, Lambda0, frame: Frame | None = None):
    """Inclusion ``(B_5R(x0) x R^d) n supp <= B_5R(x0) x B_{Lambda0 R}(y0)``."""
    if frame is None:
        X, Y = plan.sources, plan.targets
        cx, cy = np.atleast_1d(x0), np.atleast_1d(y0)
    else:
        X, Y, _ = _entry_coords(plan, frame)
        cx = cy = np.zeros(plan.mu.dim)
    near = _ball(X, cx, 5 * R)
    lam = float(np.max(np.linalg.norm(Y[near] - cy, axis=1)) / R) if near.any() else 0.0
    return QualitativeReport(R, Lambda0, lam, lam < Lambda0)


@dataclass
class QuantitativeReport:
    R: float
    M_const: float
    M_min: float
    energy: float
    ok: bool
    inverse_inclusion: bool
    hessian_deviation: float
    hypotheses_ok: bool
    witnesses: list = field(default_factory=list)


def displacement_check_quantitative(plan, x0, y0, R, eps, M_const, frame: Frame | None = None,
                                    cost: CostModel | None = None, Lambda: float | None = None,
                                    energies=None):
    """``|x - x0 - (y - y0)| <= M R (E+_6R + D_6R)^{1/(d+2)}`` on ``B_4R(x0)``.

    Also records the inverse inclusion
    ``(R^d x B_2R(y0)) n supp <= B_4R(x0) x B_2R(y0)`` and, with a frame and
    a cost, the hypothesis ``|D_yx c~ + I| <= eps`` on ``B_5R x B_{Lambda R}``.
    ``energies`` may pass a precomputed ``E+_6R + D_6R``.
    """
    d = plan.mu.dim
    if frame is None:
        X, Y = plan.sources, plan.targets
        cx, cy = np.atleast_1d(x0), np.atleast_1d(y0)
    else:
        X, Y, _ = _entry_coords(plan, frame)
        cx = cy = np.zeros(d)
    if energies is None:
        rec = "none" if frame is None else "affine"
        e_plus = local_energy_plus(plan, x0, 6 * R, rec, frame).value
        energies = e_plus + data_term(plan.mu, plan.nu, x0, y0, 6 * R, frame)
    near = _ball(X, cx, 4 * R)
    lhs = np.linalg.norm((X[near] - cx) - (Y[near] - cy), axis=1)
    scale = R * energies ** (1.0 / (d + 2))
    top = float(lhs.max()) if lhs.size else 0.0
    if top == 0.0:
        m_min = 0.0
    elif scale == 0.0:
        m_min = float("inf")
    else:
        m_min = top / scale
    ok = m_min <= M_const
    wit = []
    if not ok:
        idx = np.flatnonzero(near)[lhs > M_const * scale]
        wit = [int(k) for k in idx[:20]]
    into = _ball(Y, cy, 2 * R)
    inverse_ok = bool(np.all(_ball(X[into], cx, 4 * R)))
    dev = float("nan")
    if frame is not None and cost is not None:
        lam = Lambda if Lambda is not None else max(
            displacement_check_qualitative(plan, x0, y0, R, np.inf, frame).Lambda_min, 1.0)
        dev = mixed_hessian_deviation(frame, cost, 5 * R, lam * R)
    hyp = (energies <= eps) and (np.isnan(dev) or dev <= eps)
    return QuantitativeReport(R, M_const, m_min, float(energies), ok, inverse_ok, dev, hyp, wit)


def cone_search(plan: Plan, x, e, R, y0):
    """A support entry with ``x'`` in the cone annulus ``S_R(x, e)`` and ``y'`` in ``B_7R(y0)``.

    The cone has half-angle pi/4 around ``e``; the annulus is
    ``R/2 <= |x' - x| < R``.  Returns the entry index or None; among several
    candidates the one best aligned with ``e`` (then lowest index) wins.
    """
    e = np.atleast_1d(np.asarray(e, float))
    if not np.isclose(np.linalg.norm(e), 1.0, atol=1e-12):
        raise ValueError("e must be a unit vector")
    x = np.atleast_1d(np.asarray(x, float))
    diff = plan.sources - x
    dist = np.linalg.norm(diff, axis=1)
    ring = (dist >= R / 2) & (dist < R)
    cosang = np.full(len(dist), -np.inf)
    cosang[ring] = diff[ring] @ e / dist[ring]
    ok = ring & (cosang >= math.cos(math.pi / 4) - 1e-15) & _ball(plan.targets, np.atleast_1d(y0), 7 * R)
    if not ok.any():
        return None
    cand = np.flatnonzero(ok)
    return int(cand[np.argmax(cosang[cand])])


@dataclass
class GradientReport:
    R: float
    lambda_const: float
    lambda_min: float
    ok: bool


def gradient_boundedness_check(plan, x0, y0, R, lambda_const, cost: CostModel,
                               frame: Frame | None = None):
    """``|grad_x c_bar(x, y)| <= lambda R`` for support entries with ``x`` in ``B_5R(x0)``.

    ``c_bar(x, y) = c(x, y) - c(x, y0) - c(x0, y) + c(x0, y0)``; with a frame the
    gradient is taken in frame coordinates (chain rule through ``S``).
    """
    x0 = np.atleast_1d(np.asarray(x0, float))
    y0 = np.atleast_1d(np.asarray(y0, float))
    if frame is None:
        pts = plan.sources
        near = _ball(pts, x0, 5 * R)
        J = np.eye(len(x0))
    else:
        pts = frame.fx(plan.sources)
        near = _ball(pts, np.zeros(len(x0)), 5 * R)
        J = np.linalg.inv(frame.S)
    worst = 0.0
    for k in np.flatnonzero(near):
        x, y = plan.sources[k], plan.targets[k]
        g = cost.grad_x(x, y) - cost.grad_x(x, y0)
        worst = max(worst, float(np.linalg.norm(J.T @ g)))
    lam = worst / R
    return GradientReport(R, lambda_const, lam, lam <= lambda_const)


# -- almost-minimality ----------------------------------------------------------------


@dataclass
class DefectReport:
    R: float
    defect: float
    hessian_deviation: float
    energy_2R: float
    quad_cost: float
    rematch_cost: float
    ok: bool


def almost_minimality_defect(plan, x0, y0, R, frame: Frame | None = None,
                             cost: CostModel | None = None, C: float = 1.0, slack: float = 1e-9):
    """``Delta_R = C |D_yx c~ + I|_{B_2R x B_2R} E_2R^{1/2}`` and the direct rematch test.

    The restriction of the plan to the cross of width ``2R`` is compared, in
    half squared distance, with the quadratic-optimal coupling of its own
    marginals; it passes when the excess is at most ``R^{d+2} Delta_R`` (with
    a relative ``slack`` for rounding).
    """
    d = plan.mu.dim
    if frame is None:
        X, Y, m = plan.sources, plan.targets, plan.mass
        cx, cy = np.atleast_1d(x0), np.atleast_1d(y0)
    else:
        X, Y, m = _entry_coords(plan, frame)
        cx = cy = np.zeros(d)
    cross = _ball(X, cx, 2 * R) | _ball(Y, cy, 2 * R)
    if not cross.any():
        raise ValueError("restriction to the cross is empty")
    E2 = local_energy_two_sided(plan, x0, y0, 2 * R, frame)
    if frame is not None and cost is not None:
        dev = mixed_hessian_deviation(frame, cost, 2 * R, 2 * R)
    elif cost is not None:
        dev = mixed_hessian_deviation(Frame.raw(cx, cy), cost, 2 * R, 2 * R)
    else:
        dev = 0.0
    defect = C * dev * math.sqrt(E2)
    Xs, Ys, ms = X[cross], Y[cross], m[cross]
    quad = 0.5 * float(np.sum(ms * np.sum((Ys - Xs) ** 2, axis=1)))
    Cq = 0.5 * np.sum((Xs[:, None, :] - Ys[None, :, :]) ** 2, axis=2)
    if np.allclose(ms, ms[0], rtol=1e-12, atol=0):
        r, c = linear_sum_assignment(Cq)
        rematch = float(ms[0] * Cq[r, c].sum())
    else:
        I, J = np.nonzero(np.ones_like(Cq, dtype=bool))
        res = _restricted_lp(ms, ms, Cq, I, J)
        rematch = float(res.fun)
    excess = quad - rematch
    ok = excess <= R ** (d + 2) * defect + slack * max(abs(quad), 1.0)
    return DefectReport(R, defect, dev, E2, quad, rematch, bool(ok))


# -- Monge-Ampère ------------------------------------------------------------------------


def map_jacobian(plan: Plan):
    """Finite-difference Jacobian of the barycentric map at every source atom.

    Grid measures use central differences along grid axes; one-dimensional
    measures without a grid use ``np.gradient`` on the sorted atoms.
    """
    mu = plan.mu
    T = plan.barycentric_map()
    d = mu.dim
    if mu.grid is not None:
        J = np.empty((mu.size, d, d))
        for a in range(d):
            J[:, a, :], _ = grid_gradient(T[:, a], mu)
        return J
    if d != 1:
        raise ValueError("map Jacobian needs a grid in dimension > 1")
    order = np.argsort(mu.points[:, 0])
    J = np.empty((mu.size, 1, 1))
    J[order, 0, 0] = np.gradient(T[order, 0], mu.points[order, 0])
    return J


def monge_ampere_residual(plan: Plan, indices=None):
    """``|det DT(x) - rho0(x) / rho1(T(x))|`` at the given source atoms."""
    J = map_jacobian(plan)
    T = plan.barycentric_map()
    idx = np.arange(plan.mu.size) if indices is None else np.asarray(indices)
    rho0 = plan.mu.density[idx]
    nearest = [_nearest(plan.nu.points, T[i]) for i in idx]
    rho1 = plan.nu.density[nearest]
    det = np.linalg.det(J[idx])
    return np.abs(det - rho0 / rho1)


# -- singular set ------------------------------------------------------------------------


@dataclass
class SingularSet:
    indices: list
    reasons: dict
    threshold: float
    median_increment: float


def detect_singular_set(plan: Plan, potentials: PotentialPair | None = None,
                        config: DiagnosticsConfig | None = None, extra_flags: dict | None = None):
    """Flag source atoms across which the assignment jumps.

    For every pair of grid neighbours the increment ``|T(x_i) - T(x_k)|`` is
    compared with ``theta`` times the median increment; both atoms of a
    jumping pair are flagged.  ``extra_flags`` (index -> reason) merges in
    failures found by other checks.
    """
    config = config or DiagnosticsConfig()
    mu = plan.mu
    if mu.grid is None:
        raise ValueError("singular-set detection needs sources on a regular grid")
    T = plan.barycentric_map()
    table = mu.grid.lookup()
    pairs = []
    for axis in range(mu.dim):
        nb = mu.grid.index.copy()
        nb[:, axis] += 1
        ok = nb[:, axis] < mu.grid.shape[axis]
        src = np.flatnonzero(ok)
        dst = table[tuple(nb[ok].T)]
        keep = dst >= 0
        pairs.append(np.stack([src[keep], dst[keep]], 1))
    pairs = np.concatenate(pairs) if pairs else np.zeros((0, 2), np.int64)
    inc = np.linalg.norm(T[pairs[:, 0]] - T[pairs[:, 1]], axis=1)
    med = float(np.median(inc)) if inc.size else 0.0
    thr = config.theta * med
    reasons: dict = {}
    for (i, k), v in zip(pairs, inc):
        if v > thr:
            reasons.setdefault(int(i), "jump")
            reasons.setdefault(int(k), "jump")
    for i, why in (extra_flags or {}).items():
        reasons[int(i)] = reasons[int(i)] + ";" + why if int(i) in reasons else why
    return SingularSet(sorted(reasons), reasons, thr, med)


# -- full report ---------------------------------------------------------------------------


@dataclass
class PointRecord:
    index: int
    x0: list
    y0: list
    A: list | None
    M_mat: list
    accepted: bool
    base_check: float
    E_plus: dict = field(default_factory=dict)
    E_two_sided: dict = field(default_factory=dict)
    D_data: dict = field(default_factory=dict)
    K_R: dict = field(default_factory=dict)
    delta_R: dict = field(default_factory=dict)
    displacement_ok: dict = field(default_factory=dict)
    monge_ampere: float | None = None
    singular: bool = False


@dataclass
class DiagnosticsReport:
    support_gap: float
    r0: float
    delta: float
    gap_exceeds_delta: bool
    points: list
    singular_set: list
    singular_reasons: dict
    config: dict

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "support_gap": self.support_gap,
            "r0": self.r0,
            "delta": self.delta,
            "gap_exceeds_delta": self.gap_exceeds_delta,
            "singular_set": self.singular_set,
            "singular_reasons": {str(k): v for k, v in self.singular_reasons.items()},
            "config": self.config,
            "points": [asdict(p) for p in self.points],
        }

    def to_json(self):
        return json.dumps(_clean(self.to_dict()), indent=2, sort_keys=True)

    def singular_csv(self, mu: DiscreteMeasure):
        cols = ",".join(f"x{a}" for a in range(mu.dim))
        lines = [f"index,{cols},flag_reason"]
        for i in self.singular_set:
            coords = ",".join(repr(float(v)) for v in mu.points[i])
            lines.append(f"{i},{coords},{self.singular_reasons[i]}")
        return "\n".join(lines) + "\n"

    def scales_csv(self):
        lines = ["index,R,E_plus,E_two_sided,D_R,K_R"]
        for p in self.points:
            for R in sorted(p.E_plus, key=float):
                vals = [p.E_plus.get(R), p.E_two_sided.get(R), p.D_data.get(R), p.K_R.get(R)]
                lines.append(",".join([str(p.index), R] + [_fmt(v) for v in vals]))
        return "\n".join(lines) + "\n"


def _fmt(v):
    return "" if v is None else repr(float(v))


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _interior(mu):
    g = mu.grid
    lo = (g.index > 1).all(axis=1)
    hi = (g.index < np.asarray(g.shape) - 2).all(axis=1)
    return np.flatnonzero(lo & hi)


def _diagnose_point(plan, potentials, cost, config, i, ma_i):
    mu, nu = plan.mu, plan.nu
    norm = build_normalization(plan, potentials, int(i), cost, config.stability)
    frame = norm.frame if norm.accepted else None
    rec = PointRecord(int(i), norm.x0.tolist(), norm.y0.tolist(),
                      None if np.isnan(norm.A).any() else norm.A.tolist(),
                      norm.M_mat.tolist(), norm.accepted, norm.base_check,
                      monge_ampere=float(ma_i))
    for R in config.radii:
        key = repr(R)
        kind = "affine" if frame is not None else "none"
        rec.E_plus[key] = local_energy_plus(plan, norm.x0, R, kind, frame).value
        rec.E_two_sided[key] = local_energy_two_sided(plan, norm.x0, norm.y0, R, frame)
        try:
            rec.D_data[key] = data_term(mu, nu, norm.x0, norm.y0, R, frame)
        except ValueError:
            rec.D_data[key] = None
        if frame is None:
            rec.displacement_ok[key] = False
            continue
        rec.K_R[key] = k_R(frame, cost, R, config.alpha, seed=config.seed)
        try:
            rec.delta_R[key] = almost_minimality_defect(
                plan, norm.x0, norm.y0, R, frame, cost, config.C_defect).defect
        except ValueError:
            rec.delta_R[key] = None
        qual = displacement_check_qualitative(plan, norm.x0, norm.y0, R, config.Lambda0, frame)
        e6 = local_energy_plus(plan, norm.x0, 6 * R, "affine", frame).value
        try:
            d6 = data_term(mu, nu, norm.x0, norm.y0, 6 * R, frame)
        except ValueError:
            d6 = float("inf")
        quant = displacement_check_quantitative(
            plan, norm.x0, norm.y0, R, config.eps, config.M_const, frame, cost,
            Lambda=qual.Lambda_min, energies=e6 + d6)
        rec.displacement_ok[key] = bool(qual.ok and quant.ok and quant.inverse_inclusion)
    return rec


def diagnose(plan: Plan, potentials: PotentialPair, cost: CostModel,
             config: DiagnosticsConfig | None = None, workers: int = 1) -> DiagnosticsReport:
    """Run every per-point check at interior grid atoms (subsampled to ``max_points``).

    Atoms whose normalization is rejected join the singular set with reason
    ``"normalization"`` next to the assignment jumps.  Per-point work is
    spread over ``workers`` threads; results keep the atom order.
    """
    config = config or DiagnosticsConfig()
    mu, nu = plan.mu, plan.nu
    r0, delta = config.resolve_delta(mu, nu)
    gap = support_gap(plan)
    pts = _interior(mu)
    if len(pts) > config.max_points:
        pts = pts[np.linspace(0, len(pts) - 1, config.max_points).round().astype(int)]
    ma = monge_ampere_residual(plan, pts)
    args = [(plan, potentials, cost, config, int(i), ma[k]) for k, i in enumerate(pts)]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda a: _diagnose_point(*a), args))
    else:
        records = [_diagnose_point(*a) for a in args]
    failures = {rec.index: "normalization" for rec in records if not rec.accepted}
    sing = detect_singular_set(plan, potentials, config, failures)
    for rec in records:
        rec.singular = rec.index in sing.reasons
    return DiagnosticsReport(gap, r0, delta, gap > delta, records, sing.indices, sing.reasons,
                             _clean(asdict(config)))
