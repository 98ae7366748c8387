"""Residual indicators, online basis construction, and adaptive enrichment.

Residual functionals are realized through diagonal partition-of-unity
scalings (hat values at edge midpoints and cell centers): exact L2
multiplication is not representable in the lowest-order spaces, while the
scaling keeps support, zero boundary traces, and the partition property.
Velocity dual norms use the Riesz map of the patch-interior velocity mass;
pressure dual norms are diagonal and exact.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import grid as _grid
from . import util
from .coarse_system import energy_error, solve_coarse
from .offline_basis import BasisField, assemble_constrained_saddle
from .kernels import factor_saddle


@dataclass
class NodeResidual:
    node: int               # index into the partition's node list
    patch: _grid.Region     # support neighborhood (layer 0)
    rho: np.ndarray         # velocity functional on patch interior edges
    r: np.ndarray           # pressure functional on patch cells


@dataclass
class ResidualData:
    pou: object
    entries: list


def compute_residuals(sys, pou, u_ms, p_ms, f_integrals):
    """Per-node localized residual functionals for the current solution."""
    base_v = sys.A @ u_ms - sys.B.T @ p_ms
    base_p = np.asarray(f_integrals, dtype=float) - sys.B @ u_ms
    entries = []
    for k in range(pou.num_nodes):
        Jx, Jy = pou.nodes[k]
        patch = _grid.node_patch(sys.mesh, Jx, Jy)
        dv = pou.edge_scaling(k)
        dp = pou.cell_scaling(k)
        ie = patch.interior_edges
        entries.append(NodeResidual(
            node=k, patch=patch,
            rho=dv[ie] * base_v[ie],
            r=dp[patch.cells] * base_p[patch.cells]))
    return ResidualData(pou=pou, entries=entries)


def dual_norms(sys, resid):
    """Per-node dual norms (velocity via patch Riesz solve, pressure diagonal)."""
    Ra = np.zeros(len(resid.entries))
    rs = np.zeros(len(resid.entries))
    for k, ent in enumerate(resid.entries):
        ie = ent.patch.interior_edges
        if ie.size:
            A_w = sys.A[ie][:, ie].tocsc()
            x = spla.splu(A_w).solve(ent.rho)
            Ra[k] = np.sqrt(max(float(ent.rho @ x), 0.0))
        cells = ent.patch.cells
        rs[k] = np.sqrt(float(np.sum(ent.r ** 2 / sys.S[cells])))
    return Ra, rs


def mark(eta_sq, theta):
    """Smallest index set whose squared indicators reach theta of the total.

    Sorted descending with ties broken by ascending node index; an all-zero
    indicator list marks nothing (signals convergence).
    """
    if not (0.0 < theta <= 1.0):
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    eta_sq = np.asarray(eta_sq, dtype=float)
    total = float(eta_sq.sum())
    if total <= 0.0:
        return np.array([], dtype=np.int64)
    if theta == 1.0:
        return np.flatnonzero(eta_sq > 0.0)
    order = np.lexsort((np.arange(eta_sq.size), -eta_sq))
    csum = np.cumsum(eta_sq[order])
    k = int(np.argmax(csum >= theta * total)) + 1
    return order[:k]


def _online_field(item):
    state = util.shared_state()
    sys, aux, layers = state["sys"], state["aux"], state["layers"]
    ent = state["resid"].entries[item]
    region = _grid.grow_elements(sys.mesh, ent.patch.elements, layers)
    handle = factor_saddle(assemble_constrained_saddle(region, aux, sys))
    # the correction pair is driven by the error equations, so the velocity
    # functional enters with the opposite sign to the mass functional
    rhs_v = np.zeros(region.interior_edges.size)
    rhs_v[np.searchsorted(region.interior_edges, ent.patch.interior_edges)] = -ent.rho
    rhs_p = np.zeros(region.cells.size)
    rhs_p[np.searchsorted(region.cells, ent.patch.cells)] = ent.r
    beta, q = handle.solve(rhs_v, rhs_p, rtol=1e-10)
    return BasisField(kind="online", tag=(item, -1), layers=layers,
                      region_elements=region.elements, edges=region.interior_edges,
                      values=beta, cells=region.cells, pressure=q)


def online_basis(node, layers, resid, aux, sys):
    """Online velocity basis field for one marked node (companion pressure is
    diagnostic only and never enriches any space)."""
    if layers < 1:
        raise ValueError("online oversampling needs at least one layer")
    state = {"sys": sys, "aux": aux, "layers": layers, "resid": resid}
    return util.parallel_map(_online_field, [node], workers=1, state=state)[0]


@dataclass
class OnlineState:
    space: object                 # CoarseSpace, enriched in place
    theta: float
    layers: int
    tol: float
    max_iterations: int
    max_dof: int | None = None
    m: int = 0
    history: list = field(default_factory=list)
    eta_history: list = field(default_factory=list)
    marked_history: list = field(default_factory=list)
    solutions: list = field(default_factory=list)


def iterate(sys, aux, space, pou, source, *, theta, layers, tol=1e-12,
            max_iterations=4, max_dof=None, reference=None, workers=1,
            keep_solutions=False):
    """Enrichment loop: solve, estimate, mark, construct, enrich, repeat.

    Emits one history row per iteration level m:
    (m, dof, e_u, eta_sq_sum, marked_count, wall_seconds).  Stops on the
    indicator tolerance, the dof budget, an empty marking, or the iteration
    budget.  e_u is NaN when no reference solution is supplied.
    """
    if layers < 1:
        raise ValueError("online oversampling needs at least one layer")
    state = OnlineState(space=space, theta=theta, layers=layers, tol=tol,
                        max_iterations=max_iterations, max_dof=max_dof)
    f_int = sys.cell_integrals(source.values)
    pending = None
    for m in range(max_iterations + 1):
        t0 = time.perf_counter()
        if pending is not None:
            par = {"sys": sys, "aux": aux, "layers": layers, "resid": pending[1]}
            new_fields = util.parallel_map(
                _online_field, pending[0], workers=workers, state=par)
            space.append(new_fields)

        sol = solve_coarse(space, f_int, iteration=m)
        resid = compute_residuals(sys, pou, sol.u, sol.p, f_int)
        Ra, rs = dual_norms(sys, resid)
        eta_sq = Ra ** 2 + rs ** 2
        total = float(eta_sq.sum())
        e_u = np.nan
        if reference is not None:
            e_u = energy_error(sys, sol.u, reference.u)
        if not np.isfinite(sol.u).all() or (reference is not None
                                            and not np.isfinite(e_u)):
            raise ArithmeticError(f"non-finite solution state at iteration {m}")

        marked = np.array([], dtype=np.int64)
        if (total > tol and m < max_iterations
                and (max_dof is None or space.dim < max_dof)):
            marked = mark(eta_sq, theta)

        state.m = m
        state.eta_history.append(eta_sq)
        state.marked_history.append(marked)
        if keep_solutions:
            state.solutions.append(sol)
        state.history.append({
            "m": m, "dof": space.dim, "e_u": e_u, "eta_sq_sum": total,
            "marked_count": int(marked.size),
            "wall_seconds": time.perf_counter() - t0,
        })
        if marked.size == 0:
            break
        pending = (list(marked), resid)
    return state
