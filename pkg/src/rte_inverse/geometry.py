"""Unit-domain grids, angular ordinate sets, boundary manifolds, ray tracing.

The spatial domain is fixed: the unit square in 2D, discretized by the
vertex lattice with ``nx`` cells per axis (spacing ``dx = 1/nx``, so nodes
sit at ``i*dx`` including both walls), or the unit interval for slab
problems (``nx`` cell centers). Angular ordinates come in two 2D flavors:

* ``uniform``  : equally spaced angles on the unit circle, equal weights;
* ``rational`` : directions ``(q, p)/|(q, p)|`` built from small integer
  slopes, so that every direction admits chords that enter and exit the
  domain exactly at lattice boundary nodes (the property the measurement
  designer relies on); weights are circular midpoint gaps.

Slab ordinates are Gauss-Legendre nodes on [-1, 1]. Both 2D modes keep
``sum(weights) == 2*pi`` within 1e-12 and the slab weights sum to 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# |n.v| below this is grazing incidence: the pair is excluded from both
# boundary manifolds and never carries boundary data.
GRAZE_TOL = 1e-10

# positions closer than this are the same point (node snapping)
POSITION_TOL = 1e-12

# wall id -> (name, outward normal, along-axis, fixed-axis, fixed coordinate)
WALL_DEFS = (
    ("left", (-1.0, 0.0), 1, 0, 0.0),
    ("right", (1.0, 0.0), 1, 0, 1.0),
    ("bottom", (0.0, -1.0), 0, 1, 0.0),
    ("top", (0.0, 1.0), 0, 1, 1.0),
)


class GeometryError(ValueError):
    pass


def exit_time(x, v, sign=1):
    """Travel time from ``x`` along ``sign*v`` to the boundary of the unit box.

    ``x`` may be a single point or an array of points with trailing axis of
    length ``dim``; ``v`` is one direction vector. Exact closed form: the
    smallest positive axis-crossing time. Points must lie in the closed
    domain (validated to 1e-12).
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape[-1] != v.shape[-1]:
        raise GeometryError(f"dimension mismatch: point {x.shape} vs direction {v.shape}")
    if np.any(x < -1e-12) or np.any(x > 1.0 + 1e-12):
        raise GeometryError("point outside the closed unit domain")
    w = sign * v
    t = np.full(x.shape, np.inf)
    fwd = w > 1e-14
    bwd = w < -1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(fwd, (1.0 - x) / np.where(fwd, w, 1.0), t)
        t = np.where(bwd, -x / np.where(bwd, w, 1.0), t)
    out = np.min(t, axis=-1)
    out = np.maximum(out, 0.0)  # clamp negative roundoff at the wall itself
    if out.ndim == 0:
        return float(out)
    return out


def counterpart(x, v):
    """Exit point of the forward chord through ``(x, v)``, paired with ``v``.

    For an inflow boundary point this is the matching outflow point of the
    straight ray; applying it twice with the reversed direction returns the
    original point (involution).
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    tau = np.asarray(exit_time(x, v, sign=1))
    return x + tau[..., None] * v, v


@dataclass
class Chord:
    """Backward chord sample: points ``x - t*v`` for t in [0, tau_minus]."""

    points: np.ndarray  # (n, dim)
    t: np.ndarray  # (n,) monotone from 0 to the chord length
    length: float
    step: float  # realized uniform spacing, <= requested step


def trace_chord(x, v, step):
    """Uniformly sample the backward chord from ``x`` along ``-v``.

    Returns node count ``ceil(tau_minus/step) + 1`` with both endpoints
    included; the realized spacing never exceeds ``step``.
    """
    if step <= 0:
        raise GeometryError("step must be positive")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    tau = exit_time(x, v, sign=-1)
    n = int(math.ceil(tau / step - 1e-12)) + 1 if tau > 0 else 1
    if n < 2:
        t = np.zeros(1) if tau == 0.0 else np.array([0.0, tau])
        if tau > 0:
            n = 2
        else:
            return Chord(points=x[None, :].copy(), t=t, length=0.0, step=0.0)
    t = np.linspace(0.0, tau, n)
    pts = x[None, :] - t[:, None] * v[None, :]
    np.clip(pts, 0.0, 1.0, out=pts)  # roundoff guard at the walls
    return Chord(points=pts, t=t, length=float(tau), step=float(tau / (n - 1)))


def _rational_directions(nv):
    """Symmetric direction set from integer slopes; exact under 90-degree rotation."""
    levels = {8: (1,), 16: (1, 2), 32: (1, 2, 4), 64: (1, 2, 4, 8)}
    if nv not in levels:
        raise GeometryError(f"rational ordinate mode supports nv in {sorted(levels)}, got {nv}")
    pairs = sorted(
        {(p, q) for q in levels[nv] for p in range(q + 1) if math.gcd(p, q) == 1},
        key=lambda pq: pq[0] / pq[1],
    )
    octant = []
    for p, q in pairs:
        h = math.hypot(q, p)
        octant.append((q / h, p / h))
    # reflect the open part of the octant about the diagonal to finish the quadrant
    quad = octant + [(y, x) for (x, y) in reversed(octant[1:-1])]
    dirs = []
    for k in range(4):
        for (x, y) in quad:
            for _ in range(k):
                x, y = -y, x
            dirs.append((x, y))
    return np.array(dirs, dtype=float)


def _ordinates_2d(nv, mode):
    if mode == "uniform":
        ang = 2.0 * np.pi * np.arange(nv) / nv
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        w = np.full(nv, 2.0 * np.pi / nv)
        return dirs, w
    if mode == "rational":
        dirs = _rational_directions(nv)
        ang = np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2.0 * np.pi)
        order = np.argsort(ang)
        dirs, ang = dirs[order], ang[order]
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2.0 * np.pi]]))
        w = 0.5 * (gaps + np.roll(gaps, 1))
        w *= 2.0 * np.pi / w.sum()  # pin the circle measure exactly
        return dirs, w
    raise GeometryError(f"unknown ordinate mode {mode!r}")


@dataclass
class BoundaryManifold:
    """Flattened set of (boundary node, ordinate) pairs on one side of the flow.

    ``side`` is ``'-'`` for inflow (v.n < 0) or ``'+'`` for outflow
    (v.n > 0); grazing pairs (|n.v| < GRAZE_TOL) appear in neither. Entries
    are grouped in contiguous blocks, one block per (ordinate, wall), nodes
    ordered by the along-wall coordinate. ``dxi`` carries the product
    |n.v| * surface weight * angular weight and is strictly positive.
    """

    side: str
    ordinate: np.ndarray  # (n_b,) ordinate index
    wall: np.ndarray  # (n_b,) wall id into WALL_DEFS
    node: np.ndarray  # (n_b,) spatial node id
    along: np.ndarray  # (n_b,) integer index along the wall
    pos: np.ndarray  # (n_b, 2)
    dxi: np.ndarray  # (n_b,)
    blocks: dict = field(repr=False)  # (ordinate, wall) -> (start, stop)

    def __len__(self):
        return self.ordinate.size

    def block(self, ordinate, wall):
        return self.blocks.get((ordinate, wall))

    def walls_for(self, ordinate):
        return [w for (o, w) in self.blocks if o == ordinate]

    def find_node(self, ordinate, point, tol):
        """Index of the manifold node nearest ``point`` on ordinate's walls.

        Returns ``(index, distance)``; raises if no wall of this ordinate
        comes within ``tol``.
        """
        point = np.asarray(point, dtype=float)
        best, best_d = -1, np.inf
        for w in self.walls_for(ordinate):
            start, stop = self.blocks[(ordinate, w)]
            d = np.linalg.norm(self.pos[start:stop] - point[None, :], axis=1)
            i = int(np.argmin(d))
            if d[i] < best_d:
                best, best_d = start + i, float(d[i])
        if best < 0 or best_d > tol:
            raise GeometryError(
                f"no boundary node within {tol:g} of {point} on ordinate {ordinate} (best {best_d:g})"
            )
        return best, best_d


class Grid:
    """Product discretization of the unit domain and the ordinate set.

    2D: ``(nx+1)**2`` lattice nodes, ``nv`` unit directions with quadrature
    weights on the circle. Slab (dim=1): ``nx`` cell centers on [0, 1] and
    Gauss-Legendre ordinates on [-1, 1]. Immutable after construction.
    """

    def __init__(self, nx, nv, dim=2, ordinate_mode="uniform"):
        if nx < 2:
            raise GeometryError("nx must be at least 2")
        self.dim = int(dim)
        self.nx = int(nx)
        self.nv = int(nv)
        self.dx = 1.0 / self.nx
        if self.dx * self.nx != 1.0:
            raise GeometryError(f"dx*nx must reproduce the unit extent exactly, nx={nx}")
        self.ordinate_mode = ordinate_mode
        if self.dim == 2:
            self.n_side = self.nx + 1
            axis = np.linspace(0.0, 1.0, self.n_side)
            xg, yg = np.meshgrid(axis, axis, indexing="xy")
            # node id = iy*n_side + ix, first coordinate fastest
            self.nodes = np.stack([xg.ravel(), yg.ravel()], axis=1)
            self.n_nodes = self.nodes.shape[0]
            self.axis = axis
            self.ordinates, self.weights = _ordinates_2d(self.nv, ordinate_mode)
            measure = 2.0 * np.pi
        elif self.dim == 1:
            if ordinate_mode not in ("gauss", "uniform"):
                raise GeometryError("slab ordinate_mode must be 'gauss' or 'uniform'")
            self.centers = (np.arange(self.nx) + 0.5) * self.dx
            self.n_nodes = self.nx
            if ordinate_mode == "gauss":
                vn, wn = np.polynomial.legendre.leggauss(self.nv)
            else:
                vn = -1.0 + (2.0 * np.arange(self.nv) + 1.0) / self.nv
                wn = np.full(self.nv, 2.0 / self.nv)
            self.ordinates, self.weights = vn, wn
            measure = 2.0
        else:
            raise GeometryError("dim must be 1 (slab) or 2")
        if abs(self.weights.sum() - measure) > 1e-12:
            raise GeometryError("ordinate weights fail to reproduce the angular measure")
        self._manifolds = {}

    # -- 2D lattice helpers -------------------------------------------------

    def node_id(self, ix, iy):
        return iy * self.n_side + ix

    def wall_nodes(self, wall):
        """Spatial node ids along a wall, ordered by the along-wall coordinate."""
        _, _, along_axis, fixed_axis, fixed = WALL_DEFS[wall]
        idx_fixed = 0 if fixed == 0.0 else self.nx
        ids = np.arange(self.n_side)
        if fixed_axis == 0:
            return ids * self.n_side + idx_fixed
        return idx_fixed * self.n_side + ids

    def surface_weights(self):
        """Trapezoid weights along one wall (dx inside, dx/2 at the corners)."""
        w = np.full(self.n_side, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    def boundary(self, side):
        """The inflow ('-') or outflow ('+') manifold; built once and cached."""
        if side not in ("-", "+"):
            raise GeometryError("side must be '-' or '+'")
        if side in self._manifolds:
            return self._manifolds[side]
        if self.dim != 2:
            raise GeometryError("boundary manifolds are a 2D feature")
        sgn = -1.0 if side == "-" else 1.0
        ords, walls, nodes, alongs, poss, dxis = [], [], [], [], [], []
        blocks = {}
        surf = self.surface_weights()
        offset = 0
        for j, v in enumerate(self.ordinates):
            for w, (_name, normal, _along_axis, _fixed_axis, _fixed) in enumerate(WALL_DEFS):
                ndotv = v[0] * normal[0] + v[1] * normal[1]
                if sgn * ndotv <= GRAZE_TOL:
                    continue
                ids = self.wall_nodes(w)
                blocks[(j, w)] = (offset, offset + self.n_side)
                offset += self.n_side
                ords.append(np.full(self.n_side, j, dtype=np.int32))
                walls.append(np.full(self.n_side, w, dtype=np.int32))
                nodes.append(ids.astype(np.int32))
                alongs.append(np.arange(self.n_side, dtype=np.int32))
                poss.append(self.nodes[ids])
                dxis.append(abs(ndotv) * surf * self.weights[j])
        man = BoundaryManifold(
            side=side,
            ordinate=np.concatenate(ords),
            wall=np.concatenate(walls),
            node=np.concatenate(nodes),
            along=np.concatenate(alongs),
            pos=np.concatenate(poss, axis=0),
            dxi=np.concatenate(dxis),
            blocks=blocks,
        )
        if np.any(man.dxi <= 0.0):
            raise GeometryError("boundary measure weights must be strictly positive")
        self._manifolds[side] = man
        return man

    def __repr__(self):
        return f"Grid(dim={self.dim}, nx={self.nx}, nv={self.nv}, mode={self.ordinate_mode!r})"
