"""Discrete marginals and their non-concentration moduli."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gamma

MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Grid:
    """Regular tensor grid carrying a measure; atoms may cover only part of it.

    ``index[k]`` is the multi-index of atom ``k`` in a grid of ``shape`` cells
    with lower corner ``origin`` and cell widths ``spacing``.
    """

    shape: tuple
    origin: np.ndarray
    spacing: np.ndarray
    index: np.ndarray

    def lookup(self):
        """Dense array mapping grid multi-indices to atom numbers (``-1`` = empty)."""
        table = np.full(self.shape, -1, dtype=np.int64)
        table[tuple(self.index.T)] = np.arange(len(self.index))
        return table

    def neighbor(self, k, axis, step):
        """Atom number ``step`` cells from atom ``k`` along ``axis``, or ``-1``."""
        idx = self.index[k].copy()
        idx[axis] += step
        if idx[axis] < 0 or idx[axis] >= self.shape[axis]:
            return -1
        return int(self._table[tuple(idx)])

    def __post_init__(self):
        object.__setattr__(self, "_table", self.lookup())


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted atoms, each standing for a cell of Lebesgue volume ``cell_volume``."""

    points: np.ndarray
    weights: np.ndarray
    cell_volume: np.ndarray
    grid: Grid | None = None
    spec: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        vol = np.broadcast_to(np.asarray(self.cell_volume, dtype=float), w.shape).copy()
        if pts.ndim != 2 or len(pts) != len(w):
            raise ValueError("points must be an (n, d) array matching weights")
        if len(w) == 0:
            raise ValueError("measure has no atoms")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        if np.any(vol <= 0):
            raise ValueError("cell volumes must be positive")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("atom positions must be pairwise distinct")
        for name, arr in (("points", pts), ("weights", w), ("cell_volume", vol)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def size(self):
        return len(self.weights)

    @property
    def density(self):
        return self.weights / self.cell_volume

    @property
    def spacing(self):
        """Largest grid spacing, or the typical nearest-atom distance off-grid."""
        if self.grid is not None:
            return float(np.max(self.grid.spacing))
        if self.dim == 1:
            x = np.sort(self.points[:, 0])
            return float(np.max(np.diff(x))) if len(x) > 1 else 1.0
        return float(np.max(self.cell_volume) ** (1.0 / self.dim))

    def diameter(self):
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        half = 0.5 * self.spacing
        return float(np.linalg.norm(hi - lo + 2 * half))

    def same_as(self, other):
        return (
            self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )


@dataclass(frozen=True, eq=False)
class DensitySpec:
    """Recipe for a marginal: a density on a box (optionally cut to a ball)."""

    kind: str
    density: Callable[[np.ndarray], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    holder_alpha: float = 1.0
    density_lower_bound: float = 1.0
    density_upper_bound: float = 1.0
    ball_radius: float | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("uniform-interval", "uniform-box", "radial-profile", "custom-grid"):
            raise ValueError(f"unknown density kind {self.kind!r}")
        if not 0 < self.holder_alpha <= 1:
            raise ValueError("holder_alpha must lie in (0, 1]")
        if not 0 < self.density_lower_bound <= self.density_upper_bound < math.inf:
            raise ValueError("need 0 < density_lower_bound <= density_upper_bound < inf")
        object.__setattr__(self, "lower", np.atleast_1d(np.asarray(self.lower, float)))
        object.__setattr__(self, "upper", np.atleast_1d(np.asarray(self.upper, float)))
        if self.lower.shape != self.upper.shape or np.any(self.upper <= self.lower):
            raise ValueError("box bounds must satisfy lower < upper")

    @property
    def dim(self):
        return len(self.lower)

    def describe(self):
        return {"kind": self.kind, **self.params}

    @classmethod
    def uniform_interval(cls, L=1.0):
        return cls(
            "uniform-interval",
            lambda x: np.full(len(x), 1.0 / L),
            [0.0],
            [L],
            density_lower_bound=1.0 / L,
            density_upper_bound=1.0 / L,
            params={"L": L},
        )

    @classmethod
    def uniform_box(cls, lengths):
        lengths = np.atleast_1d(np.asarray(lengths, float))
        vol = float(np.prod(lengths))
        return cls(
            "uniform-box",
            lambda x: np.full(len(x), 1.0 / vol),
            np.zeros_like(lengths),
            lengths,
            density_lower_bound=1.0 / vol,
            density_upper_bound=1.0 / vol,
            params={"lengths": lengths.tolist()},
        )

    @classmethod
    def radial_profile(cls, profile, dim, radius, holder_alpha=1.0):
        """Radially symmetric density cut to the ball of ``radius``.

        ``profile`` is a callable of ``r`` or an ``(k, 2)`` table of
        ``(r, value)`` pairs, linearly interpolated.  It need not be normalized.
        """
        if callable(profile):
            f = profile
            desc = getattr(profile, "__name__", "callable")
        else:
            table = np.asarray(profile, float)
            f = lambda r: np.interp(r, table[:, 0], table[:, 1])  # noqa: E731
            desc = table.tolist()
        probe = f(np.linspace(0.0, radius, 2001))
        if np.any(probe <= 0) or not np.all(np.isfinite(probe)):
            raise ValueError("radial profile must be finite and positive on [0, radius]")
        return cls(
            "radial-profile",
            lambda x: f(np.linalg.norm(x, axis=1)),
            np.full(dim, -radius),
            np.full(dim, radius),
            holder_alpha=holder_alpha,
            density_lower_bound=float(probe.min()),
            density_upper_bound=float(probe.max()),
            ball_radius=radius,
            params={"profile": desc, "dim": dim, "radius": radius},
        )

    @classmethod
    def custom_grid(cls, density, lower, upper, holder_alpha=1.0, bounds=None, name="custom"):
        lower = np.atleast_1d(np.asarray(lower, float))
        upper = np.atleast_1d(np.asarray(upper, float))
        if bounds is None:
            probe = density(_box_centers(lower, upper, 64))
            bounds = (float(probe.min()), float(probe.max()))
        lo, hi = bounds
        return cls(
            "custom-grid",
            density,
            lower,
            upper,
            holder_alpha=holder_alpha,
            density_lower_bound=max(lo, np.finfo(float).tiny),
            density_upper_bound=hi,
            params={"name": name, "lower": lower.tolist(), "upper": upper.tolist()},
        )


def random_holder_spec(rng, alpha=1.0, terms=3, name="random"):
    """Random density on ``[0, 1]``: ``1 + sum_k a_k |x - t_k|^alpha`` (alpha-Hölder, >= 1)."""
    a = rng.uniform(0.2, 1.0, terms)
    t = rng.uniform(0.0, 1.0, terms)

    def rho(x):
        return 1.0 + np.sum(a[None, :] * np.abs(x[:, :1] - t[None, :]) ** alpha, axis=1)

    hi = 1.0 + float(a.sum())
    spec = DensitySpec.custom_grid(rho, [0.0], [1.0], holder_alpha=alpha, bounds=(1.0, hi), name=name)
    spec.params.update({"a": a.tolist(), "t": t.tolist(), "alpha": alpha})
    return spec


def _box_centers(lower, upper, n):
    axes = [lo + (hi - lo) * (np.arange(n) + 0.5) / n for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def discretize(spec: DensitySpec, n: int) -> DiscreteMeasure:
    """Midpoint discretization with ``n`` cells per axis, weights renormalized."""
    if n < 2:
        raise ValueError("resolution must be at least 2")
    d = spec.dim
    spacing = (spec.upper - spec.lower) / n
    mesh = np.meshgrid(*[np.arange(n)] * d, indexing="ij")
    index = np.stack([m.reshape(-1) for m in mesh], axis=1)
    points = spec.lower + (index + 0.5) * spacing
    if spec.ball_radius is not None:
        keep = np.linalg.norm(points, axis=1) <= spec.ball_radius
        index, points = index[keep], points[keep]
    vol = float(np.prod(spacing))
    rho = np.asarray(spec.density(points), float)
    if rho.shape != (len(points),) or not np.all(np.isfinite(rho)) or np.any(rho < 0):
        raise ValueError("density is not integrable: non-finite or negative values")
    mass = rho * vol
    total = mass.sum()
    if not total > 0:
        raise ValueError("density has zero total mass")
    grid = Grid(tuple([n] * d), spec.lower.copy(), spacing, index)
    return DiscreteMeasure(points, mass / total, np.full(len(points), vol), grid, spec.describe())


def discretize_quantiles(spec: DensitySpec, n: int, fine: int = 200_000) -> DiscreteMeasure:
    """Equal-mass atoms of a 1D density, one per quantile cell.

    Atom ``k`` sits at the midpoint of quantile cell ``[F^-1(k/n), F^-1((k+1)/n)]``.
    The CDF is tabulated with the trapezoidal rule on ``fine`` points.
    """
    if spec.dim != 1:
        raise ValueError("quantile discretization is one-dimensional")
    a, b = float(spec.lower[0]), float(spec.upper[0])
    x = np.linspace(a, b, fine + 1)
    rho = np.asarray(spec.density(x[:, None]), float)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    edges = np.interp(np.arange(n + 1) / n, cdf, x)
    centers = np.interp((np.arange(n) + 0.5) / n, cdf, x)
    return DiscreteMeasure(
        centers[:, None],
        np.full(n, 1.0 / n),
        np.diff(edges),
        None,
        {**spec.describe(), "quantile": True},
    )


def ball_volume(r, d):
    return math.pi ** (d / 2) / gamma(d / 2 + 1) * r**d


def modulus_abs_continuity(m: DiscreteMeasure, volume_budget: float) -> float:
    """Largest mass packed into total volume ``volume_budget`` (densest cells first)."""
    if not volume_budget > 0:
        raise ValueError("volume budget must be positive")
    order = np.argsort(-m.density, kind="stable")
    vol = m.cell_volume[order]
    mass = m.weights[order]
    cum_vol = np.cumsum(vol)
    k = int(np.searchsorted(cum_vol, volume_budget, side="right"))
    if k >= len(vol):
        return float(mass.sum())
    full = float(mass[:k].sum())
    left = volume_budget - (cum_vol[k - 1] if k else 0.0)
    return min(1.0, full + left * float(m.density[order][k]))


def nonconcentration_radius(mu: DiscreteMeasure, nu: DiscreteMeasure, eps: float, iters: int = 40) -> float:
    """Largest ``r`` with ``omega_mu(|B_r|) + omega_nu(|B_r|) <= 1 - eps``.

    Bisection on ``[grid spacing, support diameter]``.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    d = mu.dim

    def ok(r):
        v = ball_volume(r, d)
        return modulus_abs_continuity(mu, v) + modulus_abs_continuity(nu, v) <= 1.0 - eps

    lo = min(mu.spacing, nu.spacing)
    hi = max(mu.diameter(), nu.diameter())
    if not ok(lo):
        raise ValueError("no radius above the grid spacing satisfies the non-concentration "
                         "bound; the discretization is too concentrated")
    if ok(hi):
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo
