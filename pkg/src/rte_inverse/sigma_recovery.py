"""Recovery of the total cross-section from ballistic boundary data.

Each experiment contributes one row of a discrete X-ray transform: the
trapezoid quadrature of its source chord, scattered onto bilinear hat
functions of a (usually coarser) recovery lattice. The data vector holds
the measured log-attenuations a_j = ln(source / phi_R1). The regularized
least-squares problem

    (R^T R + lambda I) Sigma = R^T a

is solved by a dense Cholesky factorization with one step of iterative
refinement. Lambda comes either from the closed-form rate formula (needs
the range-certificate norm, so truth must be known), from a
discrepancy-principle search (practical default: match the data residual to
the separation error estimated out of the scattered background next to each
counterpart node), or is fixed by the caller.

A filtered back-projection path over uniform parallel-beam sinograms is
included as an independent cross-check of the algebraic reconstruction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .geometry import GeometryError, Grid, exit_time
from .transport import bilinear_coefficients


@dataclass
class XRaySystem:
    matrix: np.ndarray  # (n_rows, n_unknowns)
    data: np.ndarray  # (n_rows,)
    valid: np.ndarray  # bool rows kept (positive counterpart reading)
    grid: Grid  # recovery lattice the columns live on
    lam: float = 0.0
    delta: float = 0.1
    z: np.ndarray = field(default=None, repr=False)

    def kept(self):
        return self.matrix[self.valid], self.data[self.valid]


def assemble_xray_row(grid: Grid, point, direction, step=None):
    """Chord-integral weights of one full chord on the recovery lattice.

    The chord through ``point`` along ``direction`` is clipped to the domain
    and sampled with the trapezoid rule; each sample deposits its weight on
    the four surrounding lattice nodes. The row is nonnegative and sums to
    the chord length exactly (the hats partition unity).
    """
    if step is None:
        step = grid.dx
    point = np.asarray(point, dtype=float)
    v = np.asarray(direction, dtype=float)
    tau_b = exit_time(point, v, sign=-1)
    tau_f = exit_time(point, v, sign=1)
    start = point - tau_b * v
    length = float(tau_b + tau_f)
    n = int(np.ceil(length / step - 1e-12)) + 1
    if n < 2:
        raise GeometryError(f"degenerate chord of length {length:.3e}")
    t = np.linspace(0.0, length, n)
    pts = np.clip(start[None, :] + t[:, None] * v[None, :], 0.0, 1.0)
    wq = np.full(n, length / (n - 1))
    wq[0] *= 0.5
    wq[-1] *= 0.5
    idx, w = bilinear_coefficients(grid, pts)
    row = np.zeros(grid.n_nodes)
    np.add.at(row, idx.ravel(), (wq[:, None] * w).ravel())
    return row


def assemble_system(grid: Grid, forward_grid: Grid, experiments, step=None,
                    delta=0.1):
    """X-ray system from separated experiments; invalid rows are flagged.

    ``grid`` is the recovery lattice (columns); ``forward_grid`` supplies the
    source directions the experiments were run with. Rows whose counterpart
    reading is nonpositive stay in the matrix but are masked out of solves.
    """
    rows, data, valid = [], [], []
    for exp in experiments:
        rows.append(assemble_xray_row(
            grid, exp.spec.point,
            direction=forward_grid.ordinates[exp.spec.ordinate], step=step))
        reading = exp.phi_r1[exp.counterpart_index]
        good = reading > 0.0 and exp.source_value > 0.0
        valid.append(good)
        data.append(np.log(exp.source_value / reading) if good else np.nan)
    n_bad = len(valid) - int(np.sum(valid))
    if n_bad:
        warnings.warn(f"{n_bad} experiment(s) with nonpositive ballistic "
                      "reading excluded from the X-ray system")
    return XRaySystem(matrix=np.asarray(rows), data=np.asarray(data),
                      valid=np.asarray(valid, dtype=bool), grid=grid, delta=delta)


def tikhonov_solve(R, a, lam):
    """Normal-equations solve by Cholesky with one refinement step.

    Raises for a singular system at lam = 0 with a hint to regularize. The
    returned solution satisfies ||(R^T R + lam I) x - R^T a|| <= 1e-10 ||R^T a||.
    """
    R = np.asarray(R, dtype=float)
    a = np.asarray(a, dtype=float)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    G = R.T @ R + lam * np.eye(R.shape[1])
    b = R.T @ a
    try:
        c, low = linalg.cho_factor(G)
    except linalg.LinAlgError as err:
        raise np.linalg.LinAlgError(
            "normal equations are singular; choose lambda > 0") from err
    x = linalg.cho_solve((c, low), b)
    x += linalg.cho_solve((c, low), b - G @ x)
    resid = np.linalg.norm(G @ x - b)
    scale = np.linalg.norm(b)
    if scale > 0 and resid > 1e-10 * scale:
        raise np.linalg.LinAlgError(
            f"refinement failed to certify the solve (residual {resid:.3e})")
    return x


def _svd_filter(R, a, lam):
    u, s, vt = np.linalg.svd(R, full_matrices=False)
    return vt.T @ (s / (s**2 + lam) * (u.T @ a))


def lambda_from_theorem(eps, eps1, delta, dx, z_norm):
    """Closed-form regularization weight (eps1**(-2-delta) eps**4 + dx**2) / ||z||."""
    if min(eps, eps1, dx) <= 0 or delta < 0:
        raise ValueError("eps, eps1, dx must be positive and delta nonnegative")
    if z_norm <= 0:
        raise ValueError("certificate norm must be positive")
    return (eps1 ** (-2.0 - delta) * eps ** 4 + dx ** 2) / z_norm


def range_certificate(R, sigma_dis):
    """Least-squares z with R^T z ~ sigma_dis; returns (z, relative residual)."""
    z, *_ = np.linalg.lstsq(np.asarray(R).T, np.asarray(sigma_dis), rcond=None)
    resid = np.linalg.norm(R.T @ z - sigma_dis)
    scale = np.linalg.norm(sigma_dis)
    return z, float(resid / scale) if scale > 0 else float(resid)


def estimate_separation_error(grid: Grid, experiments):
    """Data-side estimate of the scattered contamination of each a_j.

    The ballistic spike occupies exactly one outflow node per experiment
    (chords are node-aligned), so the neighbors one node along the wall on
    the same ordinate read pure scattered light. Their mean approximates the
    background sitting under the counterpart reading; the induced log-error
    is -ln(1 - bg/reading).
    """
    man = grid.boundary("+")
    errs = np.zeros(len(experiments))
    for i, exp in enumerate(experiments):
        idx = exp.counterpart_index
        j, w = int(man.ordinate[idx]), int(man.wall[idx])
        start, stop = man.block(j, w)
        along = int(man.along[idx])
        neigh = [start + along + d for d in (-1, 1)
                 if 0 <= along + d < stop - start]
        reading = exp.phi_r1[idx]
        if not neigh or reading <= 0:
            continue
        bg = float(np.mean(exp.phi[neigh]))
        frac = min(max(bg / reading, 0.0), 0.9)
        errs[i] = -np.log1p(-frac)
    return errs


def discrepancy_lambda(R, a, target, lam_lo=1e-12, lam_hi=1e3, iters=80):
    """Smallest lambda whose data residual ||R x(lam) - a|| reaches target.

    The residual is nondecreasing in lambda; bisection on its logarithm.
    Returns lam_lo or lam_hi when the target is outside the bracket.
    """
    R = np.asarray(R, dtype=float)
    a = np.asarray(a, dtype=float)

    def resid(lam):
        return np.linalg.norm(R @ _svd_filter(R, a, lam) - a)

    if resid(lam_lo) >= target:
        return lam_lo
    if resid(lam_hi) <= target:
        return lam_hi
    lo, hi = np.log(lam_lo), np.log(lam_hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if resid(np.exp(mid)) < target:
            lo = mid
        else:
            hi = mid
    return float(np.exp(0.5 * (lo + hi)))


def error_report(sigma_rec, sigma_dis):
    d = np.asarray(sigma_rec, float) - np.asarray(sigma_dis, float)
    l2 = float(np.linalg.norm(d))
    ref = float(np.linalg.norm(sigma_dis))
    return {"l2": l2,
            "rel_l2": l2 / ref if ref > 0 else l2,
            "max": float(np.abs(d).max())}


# -- filtered back-projection cross-check --------------------------------------

def sinogram_offsets(n_offsets):
    smax = np.sqrt(2.0) / 2.0
    return np.linspace(-smax, smax, n_offsets)


def make_parallel_sinogram(sigma_fn, n_angles, n_offsets, oversample=4):
    """Parallel-beam chord integrals of a callable sigma over the unit square.

    Angles are uniform on [0, pi); offsets span the circumscribed radius
    about the center. ``sigma_fn`` maps (n, 2) points to values.
    """
    angles = np.pi * np.arange(n_angles) / n_angles
    offsets = sinogram_offsets(n_offsets)
    c = np.array([0.5, 0.5])
    sino = np.zeros((n_angles, n_offsets))
    smax = offsets[-1]
    n_t = oversample * n_offsets
    t = np.linspace(-smax, smax, n_t)
    for k, th in enumerate(angles):
        d = np.array([np.cos(th), np.sin(th)])
        e = np.array([-np.sin(th), np.cos(th)])
        pts = (c[None, None, :] + offsets[None, :, None] * e[None, None, :]
               + t[:, None, None] * d[None, None, :])
        inside = np.all((pts >= 0.0) & (pts <= 1.0), axis=-1)
        vals = np.where(inside, sigma_fn(pts.reshape(-1, 2)).reshape(n_t, n_offsets), 0.0)
        sino[k] = np.trapezoid(vals, t, axis=0)
    return sino


def fbp_reconstruct(sino, grid: Grid, offsets=None):
    """Ramp-filtered back-projection of a uniform parallel-beam sinogram.

    Returns the reconstructed field on the lattice nodes of ``grid``. Fewer
    than 8 angles triggers a streaking warning.
    """
    sino = np.asarray(sino, dtype=float)
    n_angles, n_off = sino.shape
    if n_angles < 8:
        warnings.warn(f"only {n_angles} angles: expect severe streaking")
    if offsets is None:
        offsets = sinogram_offsets(n_off)
    ds = offsets[1] - offsets[0]
    npad = 1 << int(np.ceil(np.log2(2 * n_off)))
    ramp = np.abs(np.fft.fftfreq(npad, d=ds))
    filt = np.real(np.fft.ifft(np.fft.fft(sino, n=npad, axis=1) * ramp[None, :],
                               axis=1))[:, :n_off]
    angles = np.pi * np.arange(n_angles) / n_angles
    rel = grid.nodes - np.array([0.5, 0.5])[None, :]
    out = np.zeros(grid.n_nodes)
    for k, th in enumerate(angles):
        s = rel @ np.array([-np.sin(th), np.cos(th)])
        out += np.interp(s, offsets, filt[k], left=0.0, right=0.0)
    return out * (np.pi / n_angles)


def save_sinogram(path, sino):
    """Flat text format: first line 'n_angles n_offsets', then row-major values."""
    sino = np.asarray(sino, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{sino.shape[0]} {sino.shape[1]}\n")
        for v in sino.ravel():
            fh.write(f"{v:.17g}\n")


def load_sinogram(path):
    with open(path) as fh:
        head = fh.readline().split()
        n_angles, n_off = int(head[0]), int(head[1])
        vals = np.array([float(line) for line in fh if line.strip()])
    if vals.size != n_angles * n_off:
        raise ValueError(f"sinogram payload has {vals.size} values, "
                         f"expected {n_angles * n_off}")
    return vals.reshape(n_angles, n_off)
