"""Absorbing-scattering media on a grid, plus stock phantoms.

A medium couples a total cross-section field ``sigma(x)`` with a
rotation-invariant scattering kernel ``k(x, v.v') = kappa(x) * a(v.v')``
where the angular factor is a cosine polynomial ``a(mu) = sum_p c_p T_p(mu)``
(Chebyshev basis, so on the circle ``T_p(cos dtheta) = cos(p dtheta)``).
With the isotropic normalization ``c = (1/(2*pi),)`` the scattering rate
``sigma_nu = integral of k dv'`` equals ``kappa(x)`` exactly under any
ordinate weights that sum to 2*pi.

Construction validates subcriticality: ``sigma - sigma_nu >= margin > 0``
everywhere, reporting the violating node. Pure-scattering media (margin
exactly zero) are permitted only with ``allow_zero_margin=True``; they arise
in the small-Knudsen studies where absorption is switched off.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev

from .geometry import Grid
from .profiles import smooth_bump

ISOTROPIC = (1.0 / (2.0 * np.pi),)


class AdmissibilityError(ValueError):
    pass


def _as_field(value, n, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must be scalar or shape ({n},), got {arr.shape}")
    return arr.copy()


class Medium:
    """Immutable material data bound to a grid.

    Parameters
    ----------
    grid : Grid
    sigma : scalar or (n_nodes,) total cross-section, nonnegative
    kappa : scalar or (n_nodes,) scattering profile, nonnegative; default 0
    angular : cosine-polynomial coefficients of the angular factor
    kn : Knudsen number bookkeeping value carried into reports
    allow_zero_margin : accept sigma - sigma_nu == 0 (pure scattering)
    """

    def __init__(self, grid: Grid, sigma, kappa=None, angular=ISOTROPIC, kn=1.0,
                 allow_zero_margin=False):
        self.grid = grid
        n = grid.n_nodes
        self.sigma = _as_field(sigma, n, "sigma")
        self.kappa = _as_field(0.0 if kappa is None else kappa, n, "kappa")
        self.angular = np.asarray(angular, dtype=float)
        self.kn = float(kn)
        if self.angular.ndim != 1 or self.angular.size == 0:
            raise ValueError("angular must be a nonempty coefficient vector")
        if np.any(self.sigma < 0.0):
            raise AdmissibilityError("sigma must be nonnegative everywhere")
        if np.any(self.kappa < 0.0):
            raise AdmissibilityError("kappa must be nonnegative everywhere")

        # angular kernel values at all ordinate pairs
        V = grid.ordinates
        mu = np.clip(V @ V.T, -1.0, 1.0)
        self.angular_values = chebyshev.chebval(mu, self.angular)  # (nv, nv)
        kmin = self.angular_values.min() * self.kappa.max()
        if kmin < -1e-12:
            raise AdmissibilityError(
                f"kernel is negative at quadrature pairs (min k = {kmin:.3e})")
        # outgoing-ordinate weighted matrix for the scattering integral
        self.scatter_matrix = self.angular_values * grid.weights[None, :]
        self.row_rates = self.scatter_matrix.sum(axis=1)  # sigma_nu(x,v_i)/kappa(x)

        self.margin = float(np.min(self.sigma - self.kappa * self.row_rates.max()))
        self.allow_zero_margin = bool(allow_zero_margin)
        floor = -1e-13 if allow_zero_margin else 0.0
        if self.margin <= floor:
            bad = int(np.argmin(self.sigma - self.kappa * self.row_rates.max()))
            where = grid.nodes[bad] if grid.dim == 2 else grid.centers[bad]
            raise AdmissibilityError(
                f"medium is not subcritical: min(sigma - sigma_nu) = {self.margin:.6e} "
                f"at node {bad}, x = {where}")
        self.bound_c1 = float(max(self.sigma.max(),
                                  self.kappa.max() * max(self.angular_values.max(), 0.0)))

    # -- scattering -----------------------------------------------------------

    def sigma_nu(self):
        """Scattering rate field per ordinate: (nv, n_nodes)."""
        return self.row_rates[:, None] * self.kappa[None, :]

    def sigma_a(self):
        """Absorption part sigma - max_v sigma_nu (a plain field)."""
        return self.sigma - self.kappa * self.row_rates.max()

    def scattering_integral(self, f):
        """Quadrature of k(x, v.v') f(x, v') over outgoing ordinates.

        ``f`` has shape (nv, n_nodes) or (nv, n_nodes, batch); the result
        matches. Exact for constant fields under the isotropic kernel.
        """
        f = np.asarray(f, dtype=float)
        out = np.tensordot(self.scatter_matrix, f, axes=(1, 0))
        return out * (self.kappa[:, None] if f.ndim == 3 else self.kappa)[None, ...]

    def contraction_bound(self):
        """Upper bound for the source-iteration rate: sup sigma_nu / inf sigma."""
        smin = self.sigma.min()
        if smin <= 0.0:
            return np.inf
        return float((self.kappa * self.row_rates.max()).max() / smin)

    # -- serialization --------------------------------------------------------

    def save(self, path):
        """Flat numeric dump: header scalars, sigma nodes (node order), kappa
        nodes, then angular coefficients."""
        mode = {"uniform": 0.0, "rational": 1.0, "gauss": 2.0}[self.grid.ordinate_mode]
        head = np.array([self.grid.dim, self.grid.nx, self.grid.nv, mode,
                         self.kn, self.angular.size], dtype=float)
        flat = np.concatenate([head, self.sigma, self.kappa, self.angular])
        np.savetxt(path, flat, fmt="%.17g")

    @classmethod
    def load(cls, path, allow_zero_margin=False):
        flat = np.loadtxt(path)
        dim, nx, nv, mode, kn, ncoef = flat[:6]
        mode_name = {0: "uniform", 1: "rational", 2: "gauss"}[int(mode)]
        grid = Grid(int(nx), int(nv), dim=int(dim), ordinate_mode=mode_name)
        n = grid.n_nodes
        sigma = flat[6:6 + n]
        kappa = flat[6 + n:6 + 2 * n]
        coeffs = flat[6 + 2 * n:6 + 2 * n + int(ncoef)]
        return cls(grid, sigma, kappa, tuple(coeffs), kn=kn,
                   allow_zero_margin=allow_zero_margin)


class Phantom:
    """Continuous test medium: a named sigma profile plus isotropic scattering.

    ``kind`` is one of ``constant``, ``smooth-bump``, ``two-inclusion``. The
    sigma profile can be sampled on any lattice (``sigma_at``), so the same
    truth serves both the forward grid and a coarser recovery grid.
    """

    def __init__(self, kind="smooth-bump", sigma0=1.0, scatter=0.2,
                 amp=0.5, center=(0.5, 0.5), radius=0.3,
                 amp2=-0.3, center2=(0.25, 0.7), radius2=0.15):
        if kind not in ("constant", "smooth-bump", "two-inclusion"):
            raise ValueError(f"unknown phantom kind {kind!r}")
        self.kind = kind
        self.sigma0 = float(sigma0)
        self.scatter = float(scatter)
        self.amp, self.center, self.radius = float(amp), np.asarray(center, float), float(radius)
        self.amp2, self.center2, self.radius2 = float(amp2), np.asarray(center2, float), float(radius2)

    def sigma_at(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.full(pts.shape[:-1], self.sigma0)
        if self.kind in ("smooth-bump", "two-inclusion"):
            r = np.linalg.norm(pts - self.center, axis=-1) / self.radius
            out = out + self.amp * smooth_bump(r)
        if self.kind == "two-inclusion":
            r2 = np.linalg.norm(pts - self.center2, axis=-1) / self.radius2
            out = out + self.amp2 * smooth_bump(r2)
        return out

    def medium(self, grid: Grid, kn=1.0):
        return Medium(grid, self.sigma_at(grid.nodes), self.scatter, ISOTROPIC, kn=kn)

    def sigma_dis(self, grid: Grid):
        """Truth sampled at that grid's nodes."""
        return self.sigma_at(grid.nodes)


def standard_phantom(scatter=0.2):
    """The default smooth medium used across studies."""
    return Phantom("smooth-bump", sigma0=1.0, scatter=scatter, amp=0.5,
                   center=(0.5, 0.5), radius=0.3)
