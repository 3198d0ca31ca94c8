"""Coulomb cost ``1/|x - y|`` and its diagonal-capped modification.

The modified cost replaces ``1/r`` on ``r <= delta`` by the cubic

    h(r) = r**3 / delta**4 - 2 r**2 / delta**3 + 2 / delta

which matches value, slope and curvature of ``1/r`` at ``r = delta``.  Both
costs are radial, ``c(x, y) = h(|x - y|)``, so every derivative is built from
``h``, ``h'`` and ``h''``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CostDomainError(ValueError):
    """Raised when a derivative or map is requested where it is undefined."""


class SingularHessianError(CostDomainError):
    """Raised when the mixed Hessian is not invertible."""


def spline_h(r, delta):
    """Scalar profile of the modified cost, plain arithmetic only.

    Works with floats, numpy scalars or ``mpmath.mpf`` values, which is what
    the high-precision derivative checks rely on.
    """
    if r <= delta:
        return r**3 / delta**4 - 2 * r**2 / delta**3 + 2 / delta
    return 1 / r


def profile(r, delta=None):
    """Return ``(h, h', h'')`` evaluated elementwise at radii ``r``.

    ``delta=None`` selects the Coulomb profile, which is ``+inf`` at ``r = 0``.
    """
    r = np.asarray(r, dtype=float)
    shape = r.shape
    r = r.reshape(-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = 1.0 / r
        dh = -1.0 / r**2
        d2h = 2.0 / r**3
    if delta is not None:
        inner = r <= delta
        ri = r[inner]
        h[inner] = ri**3 / delta**4 - 2 * ri**2 / delta**3 + 2 / delta
        dh[inner] = 3 * ri**2 / delta**4 - 4 * ri / delta**3
        d2h[inner] = 6 * ri / delta**4 - 4 / delta**3
    return h.reshape(shape), dh.reshape(shape), d2h.reshape(shape)


@dataclass(frozen=True)
class CostModel:
    """Radial transport cost: ``kind`` is ``"coulomb"`` or ``"modified"``."""

    kind: str = "coulomb"
    delta: float | None = None
    dim: int = 1

    def __post_init__(self):
        if self.kind not in ("coulomb", "modified"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.kind == "modified":
            if self.delta is None or not self.delta > 0:
                raise ValueError("modified cost needs delta > 0")
        elif self.delta is not None:
            raise ValueError("coulomb cost takes no delta")
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")

    @classmethod
    def coulomb(cls, dim=1):
        return cls("coulomb", None, dim)

    @classmethod
    def modified(cls, delta, dim=1):
        return cls("modified", float(delta), dim)

    @classmethod
    def parse(cls, text, dim=1):
        """Parse ``"coulomb"`` or ``"modified:delta=0.1"``."""
        name, _, rest = text.partition(":")
        if name == "coulomb" and not rest:
            return cls.coulomb(dim)
        if name == "modified":
            opts = dict(kv.split("=", 1) for kv in rest.split(":") if kv)
            if set(opts) != {"delta"}:
                raise ValueError(f"bad cost spec {text!r}")
            return cls.modified(float(opts["delta"]), dim)
        raise ValueError(f"bad cost spec {text!r}")

    def __str__(self):
        return "coulomb" if self.kind == "coulomb" else f"modified:delta={self.delta!r}"

    def as_modified(self, delta):
        return CostModel.modified(delta, self.dim)

    def profile(self, r):
        return profile(r, self.delta)

    # -- values -----------------------------------------------------------

    def eval(self, x, y):
        """Cost between points (broadcasts over leading axes)."""
        diff = np.atleast_1d(np.asarray(y, float)) - np.atleast_1d(np.asarray(x, float))
        r = np.linalg.norm(diff, axis=-1)
        return self.profile(r)[0]

    def matrix(self, X, Y, chunk=2048):
        """Dense cost matrix ``C[i, j] = c(X[i], Y[j])``."""
        X = np.atleast_2d(np.asarray(X, float))
        Y = np.atleast_2d(np.asarray(Y, float))
        out = np.empty((len(X), len(Y)))
        for s in range(0, len(X), chunk):
            diff = X[s:s + chunk, None, :] - Y[None, :, :]
            r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            out[s:s + chunk] = self.profile(r)[0]
        return out

    # -- derivatives --------------------------------------------------------

    def _geometry(self, x, y):
        x = np.atleast_1d(np.asarray(x, float))
        y = np.atleast_1d(np.asarray(y, float))
        diff = x - y
        r = float(np.linalg.norm(diff))
        if r == 0.0:
            if self.kind == "coulomb":
                raise CostDomainError("Coulomb cost is singular on the diagonal")
            return diff, r, None
        return diff, r, diff / r

    def grad_x(self, x, y):
        diff, r, e = self._geometry(x, y)
        if e is None:
            return np.zeros_like(diff)
        _, dh, _ = self.profile(r)
        return dh * e

    def grad_y(self, x, y):
        return -self.grad_x(x, y)

    def hessian_xx(self, x, y):
        diff, r, e = self._geometry(x, y)
        d = diff.shape[-1]
        if e is None:
            return -4.0 / self.delta**3 * np.eye(d)
        _, dh, d2h = self.profile(r)
        return dh / r * np.eye(d) + (d2h - dh / r) * np.outer(e, e)

    def hessian_blocks(self, x, y):
        """Return ``(Dxx, Dxy, Dyx, Dyy)``; for radial costs ``Dxy = Dyx = -Dxx``."""
        dxx = self.hessian_xx(x, y)
        return dxx, -dxx, -dxx, dxx.copy()

    def mixed_hessian(self, x, y):
        return -self.hessian_xx(x, y)

    def det_mixed_hessian(self, x, y):
        """Determinant of ``D_xy c``; closed form ``-2 / r**(3d)`` where ``c = 1/r``."""
        diff, r, e = self._geometry(x, y)
        if e is None:
            raise CostDomainError("mixed Hessian determinant requested at x = y")
        d = diff.shape[-1]
        if self.kind == "coulomb" or r > self.delta:
            return -2.0 / r ** (3 * d)
        _, dh, d2h = self.profile(r)
        # eigenvalues of -Dxx: -h'' along e, -h'/r across
        return float((-d2h) * (-dh / r) ** (d - 1))

    def inverse_mixed_hessian(self, x, y, rtol=1e-9):
        """Closed-form inverse of ``D_yx c``, valid for ``0 < |x - y| != 2 delta / 3``."""
        diff, r, e = self._geometry(x, y)
        if e is None:
            raise CostDomainError("inverse mixed Hessian requested at x = y")
        if self.kind == "modified" and abs(r - 2.0 * self.delta / 3.0) <= rtol * self.delta:
            raise SingularHessianError(
                f"D_yx c is singular at |x - y| = 2 delta / 3 = {2 * self.delta / 3!r}"
            )
        _, dh, d2h = self.profile(r)
        d = diff.shape[-1]
        coeff = (d2h * r - dh) / (d2h * r)
        return -(r / dh) * (np.eye(d) - coeff * np.outer(e, e))


def c_exponential(x, p, delta=None):
    """Solve ``grad_x c0(x, y) = p`` for ``y``: ``y = x + p / |p|**1.5``.

    With ``delta`` given, results landing in the capped region
    ``|y - x| <= delta`` are rejected, since there the modified cost no longer
    agrees with ``1/r``.
    """
    x = np.atleast_1d(np.asarray(x, float))
    p = np.atleast_1d(np.asarray(p, float))
    norm = float(np.linalg.norm(p))
    if norm == 0.0:
        raise CostDomainError("c-exponential undefined for zero momentum")
    y = x + p / norm**1.5
    if delta is not None and norm**-0.5 <= delta:
        raise CostDomainError(
            f"c-exponential lands at distance {norm ** -0.5!r} <= delta = {delta!r}"
        )
    return y


def semiconcavity_constant(cost, n=4001, safety=1e-3):
    """Estimate ``sup ||D_xx c||`` on a log grid of radii, padded by ``safety``.

    Returns ``inf`` for the Coulomb cost, whose Hessian blows up at the diagonal.
    """
    if cost.kind == "coulomb":
        return float("inf")
    r = np.concatenate([[0.0], np.geomspace(1e-6 * cost.delta, 1e3 * cost.delta, n)])
    _, dh, d2h = profile(r[1:], cost.delta)
    dh_over_r = dh / r[1:]
    norms = np.abs(d2h) if cost.dim == 1 else np.maximum(np.abs(d2h), np.abs(dh_over_r))
    sup = max(float(norms.max()), 4.0 / cost.delta**3)
    return sup * (1.0 + safety)
