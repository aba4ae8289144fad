"""Concentrated-source experiments and separation of the outgoing data.

An experiment shines mollified (or single-node) inflow data anchored at a
boundary point and ordinate, solves the transport problem, and reads the
outgoing trace ``phi`` on the outflow manifold. The trace is split exactly
into three parts:

* ``phi_r1``: the value at the counterpart node of the anchor (the exit of
  the ballistic chord), zero elsewhere;
* ``phi_r2``: values on the single-scatter set, the outflow pairs (x, v)
  whose backward ray meets the source chord inside the domain;
* ``phi_r3``: everything else.

The split is a partition, so the three parts sum to ``phi`` node-wise. The
mollified functionals E1, E2, E3 window the reference components (from the
collision-order decomposition) around the counterpart with the same smooth
bump used for sources; their relative sizes quantify how separable the
ballistic signal is.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import SolveResult, decompose_neumann, solve_forward
from .geometry import GeometryError, Grid, counterpart, exit_time
from .medium import Medium
from .profiles import smooth_bump
from .transport import TransportOperators, restrict


@dataclass
class SourceSpec:
    """Inflow data anchored at (point, ordinate) with mollifier width eps.

    ``eps`` below the node spacing selects delta mode: a single entry of
    value one at the anchor node. Otherwise the data is the product bump
    psi(|x - x0|/eps) * psi(|v - v0|/eps) over all inflow pairs.
    """

    ordinate: int
    point: tuple
    eps: float = 0.0

    def delta_mode(self, grid: Grid):
        return self.eps < grid.dx


@dataclass
class MollifiedReadout:
    eps1: float
    e1: float
    e2: float
    e3: float


@dataclass
class Experiment:
    spec: SourceSpec
    f_minus: np.ndarray  # (n_inflow,)
    phi: np.ndarray  # (n_outflow,)
    phi1: np.ndarray
    phi2: np.ndarray
    phi3: np.ndarray
    phi_r1: np.ndarray
    phi_r2: np.ndarray
    phi_r3: np.ndarray
    counterpart_index: int  # outflow manifold entry of the snapped exit node
    counterpart_point: np.ndarray
    scatter_mask: np.ndarray  # bool (n_outflow,), single-scatter membership
    source_value: float  # inflow datum at the anchor node
    solve: SolveResult = field(repr=False, default=None)


def make_source(grid: Grid, spec: SourceSpec):
    """Evaluate the source profile on the inflow manifold."""
    man = grid.boundary("-")
    anchor = np.asarray(spec.point, dtype=float)
    idx, dist = man.find_node(spec.ordinate, anchor, tol=grid.dx / 2)
    if dist > 1e-9:
        raise GeometryError(f"source anchor {anchor} is off the boundary lattice")
    out = np.zeros(len(man))
    if spec.delta_mode(grid):
        out[idx] = 1.0
        return out
    v0 = grid.ordinates[spec.ordinate]
    dx_sp = np.linalg.norm(man.pos - anchor[None, :], axis=1)
    dv = np.linalg.norm(grid.ordinates[man.ordinate] - v0[None, :], axis=1)
    return smooth_bump(dx_sp / spec.eps) * smooth_bump(dv / spec.eps)


def single_scatter_set(grid: Grid, spec: SourceSpec):
    """Outflow pairs whose backward ray crosses the source chord.

    For each outflow entry (z, v) with v not the source ordinate, solve
    z - s v = x0 + t v0 and accept when both ray parameters are nonnegative
    and the crossing lies in the domain, all within dx/2 slack. Anti-parallel
    directions (the retro-reflected line) are accepted by perpendicular
    distance to the chord.
    """
    man = grid.boundary("+")
    x0 = np.asarray(spec.point, dtype=float)
    v0 = grid.ordinates[spec.ordinate]
    slack = grid.dx / 2
    V = grid.ordinates[man.ordinate]  # (n, 2)
    rhs = man.pos - x0[None, :]
    # z - s v = x0 + t v0  =>  s v + t v0 = z - x0
    det = V[:, 0] * v0[1] - V[:, 1] * v0[0]
    mask = np.zeros(len(man), dtype=bool)
    ok = np.abs(det) >= 1e-9
    safe_det = np.where(ok, det, 1.0)
    s = np.where(ok, (rhs[:, 0] * v0[1] - rhs[:, 1] * v0[0]) / safe_det, 0.0)
    t = np.where(ok, (V[:, 0] * rhs[:, 1] - V[:, 1] * rhs[:, 0]) / safe_det, -1.0)
    cross = man.pos - s[:, None] * V
    inside = np.all((cross >= -slack) & (cross <= 1.0 + slack), axis=1)
    mask[ok & (s >= -slack) & (t >= -slack) & inside] = True
    # anti-parallel ordinates: accept points within slack of the chord line
    anti = (~ok) & (np.einsum("ij,j->i", V, v0) < 0.0)
    if np.any(anti):
        perp = np.abs(rhs[:, 0] * v0[1] - rhs[:, 1] * v0[0])
        along = rhs @ v0
        tau0 = exit_time(x0, v0, sign=1)
        on_chord = (perp <= slack) & (along >= -slack) & (along <= tau0 + slack)
        mask[anti & on_chord] = True
    mask[man.ordinate == spec.ordinate] = False
    return mask


def extract_components(grid: Grid, spec: SourceSpec, phi):
    """Partition phi into counterpart / single-scatter / remainder parts."""
    man = grid.boundary("+")
    exit_point, _v = counterpart(np.asarray(spec.point, float), grid.ordinates[spec.ordinate])
    try:
        idx, _d = man.find_node(spec.ordinate, exit_point, tol=grid.dx)
    except GeometryError as err:
        raise GeometryError(
            "counterpart misses the outflow lattice; grid and ordinates are "
            f"misaligned for this source ({err})") from err
    mask = single_scatter_set(grid, spec)
    mask[idx] = False
    phi_r1 = np.zeros_like(phi)
    phi_r1[idx] = phi[idx]
    phi_r2 = np.where(mask, phi, 0.0)
    phi_r3 = phi - phi_r1 - phi_r2
    return phi_r1, phi_r2, phi_r3, idx, exit_point, mask


def run_experiments(ops: TransportOperators, medium: Medium, specs,
                    tol=1e-12, max_iter=10_000):
    """Solve one batched forward problem for many sources and separate each."""
    grid = ops.grid
    sources = np.stack([make_source(grid, s) for s in specs], axis=1)
    res = solve_forward(ops, medium, sources, tol=tol, max_iter=max_iter)
    if not res.converged:
        raise RuntimeError(
            f"forward solver stalled: diff {res.last_diff:.3e} after {res.iterations} iterations")
    parts = decompose_neumann(ops, medium, sources, f=res.f)
    phi = restrict(grid, parts.f, "+")
    phi1 = restrict(grid, parts.f1, "+")
    phi2 = restrict(grid, parts.f2, "+")
    phi3 = restrict(grid, parts.f3, "+")
    man_in = grid.boundary("-")
    out = []
    for i, spec in enumerate(specs):
        r1, r2, r3, idx, xstar, mask = extract_components(grid, spec, phi[:, i])
        a_idx, _ = man_in.find_node(spec.ordinate, np.asarray(spec.point, float),
                                    tol=grid.dx / 2)
        out.append(Experiment(
            spec=spec, f_minus=sources[:, i], phi=phi[:, i],
            phi1=phi1[:, i], phi2=phi2[:, i], phi3=phi3[:, i],
            phi_r1=r1, phi_r2=r2, phi_r3=r3,
            counterpart_index=idx, counterpart_point=xstar,
            scatter_mask=mask, source_value=float(sources[a_idx, i]),
            solve=SolveResult(res.f[..., i], res.iterations, res.last_diff,
                              res.converged)))
    return out


def run_experiment(ops: TransportOperators, medium: Medium, spec: SourceSpec,
                   tol=1e-12, max_iter=10_000):
    return run_experiments(ops, medium, [spec], tol=tol, max_iter=max_iter)[0]


def mollified_functionals(grid: Grid, exp: Experiment, eps1):
    """Window the reference components around the counterpart: E1, E2, E3.

    Each value is the outflow-manifold quadrature (measure |n.v| dS dv) of
    the component times psi(|x - x*|/eps1) * psi(|v - v0|/eps1). Below the
    node spacing the window degenerates to the counterpart node alone.
    """
    man = grid.boundary("+")
    if eps1 < grid.dx:
        w = np.zeros(len(man))
        w[exp.counterpart_index] = man.dxi[exp.counterpart_index]
    else:
        v0 = grid.ordinates[exp.spec.ordinate]
        dx_sp = np.linalg.norm(man.pos - exp.counterpart_point[None, :], axis=1)
        dv = np.linalg.norm(grid.ordinates[man.ordinate] - v0[None, :], axis=1)
        w = smooth_bump(dx_sp / eps1) * smooth_bump(dv / eps1) * man.dxi
    return MollifiedReadout(
        eps1=float(eps1),
        e1=float(w @ exp.phi1),
        e2=float(w @ exp.phi2),
        e3=float(w @ exp.phi3))


def design_chords(grid: Grid, n_angles, n_offsets, min_length=None):
    """Node-aligned parallel-beam source specs: n_angles families, n_offsets each.

    Families are undirected chord directions of the ordinate set whose
    boundary-to-boundary chords land exactly on lattice nodes (rational
    ordinate mode guarantees this for every direction). Within a family the
    anchors are spread evenly over the admissible inflow nodes, skipping
    chords shorter than ``min_length`` (default 4 dx).
    """
    man_in = grid.boundary("-")
    man_out = grid.boundary("+")
    if min_length is None:
        min_length = 4 * grid.dx
    # one representative ordinate per undirected direction
    families = []
    seen = []
    for j, v in enumerate(grid.ordinates):
        if any(abs(v @ u) > 1.0 - 1e-12 for u in seen):
            continue
        seen.append(v)
        families.append(j)
    if len(families) < n_angles:
        raise GeometryError(
            f"ordinate set offers {len(families)} chord families, need {n_angles}")
    families = families[:n_angles]
    specs = []
    for j in families:
        v = grid.ordinates[j]
        cands = []
        for i in range(len(man_in)):
            if man_in.ordinate[i] != j:
                continue
            p = man_in.pos[i]
            tau = exit_time(p, v, sign=1)
            if tau < min_length:
                continue
            exit_p, _ = counterpart(p, v)
            try:
                _, d = man_out.find_node(j, exit_p, tol=grid.dx / 2)
            except GeometryError:
                continue
            if d > 1e-9:
                continue
            cands.append(i)
        if len(cands) < n_offsets:
            raise GeometryError(
                f"family {j} admits only {len(cands)} node-aligned chords, "
                f"need {n_offsets}")
        picks = np.unique(np.round(np.linspace(0, len(cands) - 1, n_offsets)).astype(int))
        k = 0
        while picks.size < n_offsets:  # fill collisions deterministically
            if k not in picks:
                picks = np.sort(np.append(picks, k))
            k += 1
        for c in picks[:n_offsets]:
            specs.append(SourceSpec(ordinate=j, point=tuple(man_in.pos[cands[c]]),
                                    eps=0.0))
    return specs
