"""Lowest-order mixed discretization on the fine grid.

Velocity dofs are edge normal components (constant per edge, oriented +x/+y),
pressure dofs are cellwise constants.  With cellwise-constant coefficients all
integrals are exact; within a cell the velocity mass matrix couples each edge
to itself and its opposite partner through the 2x2 block h^2 [[1/3, 1/6],
[1/6, 1/3]] scaled by 1/kappa.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fields import SourceField
from .kernels import SaddleOperator, factor_saddle


@dataclass
class FineSystem:
    """Assembled fine-grid operators; immutable once built."""

    mesh: object
    kappa: np.ndarray          # (num_cells,)
    kappa_tilde: np.ndarray    # (num_cells,)
    A: sp.csr_matrix           # velocity mass, all edges
    B: sp.csr_matrix           # divergence, cells x all edges
    S: np.ndarray              # diagonal of the weighted pressure mass
    lumped: bool = False

    def cell_integrals(self, f_cells):
        """Per-cell source integrals (f, 1_c) for cellwise-constant f."""
        return np.asarray(f_cells, dtype=float) * self.mesh.h ** 2

    def a_energy(self, v, cells=None):
        """Quadratic form of the velocity mass restricted to a cell set."""
        if cells is None:
            return float(v @ (self.A @ v))
        ce = self.mesh.cell_edges[cells]
        k = self.mesh.h ** 2 / self.kappa[cells]
        vL, vR, vB, vT = v[ce[:, 0]], v[ce[:, 1]], v[ce[:, 2]], v[ce[:, 3]]
        if self.lumped:
            e = (vL**2 + vR**2 + vB**2 + vT**2) / 2.0
        else:
            e = (vL**2 + vR**2 + vB**2 + vT**2) / 3.0 + (vL * vR + vB * vT) / 3.0
        return float(np.sum(k * e))

    def a_norm(self, v, cells=None):
        return np.sqrt(max(self.a_energy(v, cells), 0.0))

    def s_norm(self, q, cells=None):
        if cells is None:
            return float(np.sqrt(np.sum(self.S * q * q)))
        return float(np.sqrt(np.sum(self.S[cells] * q[cells] ** 2)))

    def v_norm(self, v, cells=None):
        """Graph norm: a-energy plus the weighted-divergence energy."""
        div = self.B @ v
        if cells is None:
            dpart = float(np.sum(div * div / self.S))
        else:
            dpart = float(np.sum(div[cells] ** 2 / self.S[cells]))
        return float(np.sqrt(self.a_energy(v, cells) + dpart))

    def cell_velocity(self, u):
        """Cell-centered velocity averages (ux, uy), each (nx, nx)."""
        ce = self.mesh.cell_edges
        nx = self.mesh.nx
        ux = 0.5 * (u[ce[:, 0]] + u[ce[:, 1]])
        uy = 0.5 * (u[ce[:, 2]] + u[ce[:, 3]])
        return ux.reshape(nx, nx), uy.reshape(nx, nx)


def assemble(mesh, kappa_cells, kappa_tilde_cells, lumped=False):
    """Assemble A, B, S for cellwise-constant kappa and kappa-tilde."""
    kappa = np.asarray(kappa_cells, dtype=float)
    kt = np.asarray(kappa_tilde_cells, dtype=float)
    if kappa.shape != (mesh.num_cells,) or kt.shape != (mesh.num_cells,):
        raise ValueError("field arrays must match the fine cell count")

    ce = mesh.cell_edges
    L, R, Bo, To = ce[:, 0], ce[:, 1], ce[:, 2], ce[:, 3]
    k = mesh.h ** 2 / kappa
    if lumped:
        rows = np.concatenate([L, R, Bo, To])
        cols = rows
        vals = np.concatenate([k / 2] * 4)
    else:
        rows = np.concatenate([L, R, L, R, Bo, To, Bo, To])
        cols = np.concatenate([L, R, R, L, Bo, To, To, Bo])
        vals = np.concatenate([k / 3, k / 3, k / 6, k / 6] * 2)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.num_edges, mesh.num_edges))

    cells = np.arange(mesh.num_cells)
    h = mesh.h
    rows = np.concatenate([cells] * 4)
    cols = np.concatenate([R, L, To, Bo])
    vals = np.concatenate([np.full(mesh.num_cells, h), np.full(mesh.num_cells, -h)] * 2)
    B = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.num_cells, mesh.num_edges))

    return FineSystem(mesh=mesh, kappa=kappa, kappa_tilde=kt, A=A, B=B,
                      S=kt * h ** 2, lumped=lumped)


@dataclass
class FineSolution:
    u: np.ndarray  # (num_edges,) normal components, zero on the boundary
    p: np.ndarray  # (num_cells,) zero-mean pressures


def solve_fine(sys, source, pin=None):
    """Reference mixed solve with zero boundary flux.

    One pressure dof is pinned for the solve and the mean removed afterwards;
    local conservation holds to the solver tolerance.
    """
    if not isinstance(source, SourceField):
        source = SourceField(np.asarray(source, dtype=float), sys.mesh.h ** 2)
    F = source.integrals()
    interior = sys.mesh.interior_edges
    A_ii = sys.A[interior][:, interior].tocsc()
    B_i = sys.B[:, interior].tocsc()
    if pin is None:
        pin = sys.mesh.num_cells - 1
    handle = factor_saddle(SaddleOperator(A=A_ii, B=B_i, pin=pin))
    u_i, p = handle.solve(None, F, rtol=1e-12)
    p = p - p.mean()
    u = np.zeros(sys.mesh.num_edges)
    u[interior] = u_i
    return FineSolution(u=u, p=p)
