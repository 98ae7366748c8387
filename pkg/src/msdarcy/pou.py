"""Bilinear partition-of-unity hats on the coarse grid.

One function per coarse node, evaluated where the solver needs it: fine-grid
nodes, fine-cell centers (values and gradients), and fine-edge midpoints.
Evaluations are computed from integer fine-grid offsets so supports have
exact zero boundaries.

Interior mode folds every boundary hat into its nearest interior node, so the
family stays indexed by the interior nodes while keeping the partition
property on the whole domain: each folded hat's support lies inside the
receiving node's neighborhood, and without the fold the residual data in the
boundary band would be masked out of the enrichment entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import grid as _grid


def _hat_1d(dist, n):
    """Hat factor 1 - |dist|/n on [-n, n], zero outside; dist in fine-cell units."""
    t = np.abs(np.asarray(dist, dtype=float)) / n
    return np.where(t < 1.0, 1.0 - t, 0.0)


def _hat_1d_deriv(dist, n, T):
    """Derivative of the hat factor w.r.t. the physical coordinate (units 1/length)."""
    d = np.asarray(dist, dtype=float)
    out = np.zeros_like(d)
    out[(d > -n) & (d < 0)] = T
    out[(d > 0) & (d < n)] = -T
    return out


@dataclass
class PartitionOfUnity:
    """Immutable after build; shared reads are safe."""

    mesh: _grid.TwoLevelMesh
    mode: str                    # "all" | "interior"
    nodes: np.ndarray            # (M, 2) coarse node coords (Jx, Jy)
    chi_fine_nodes: sp.csr_matrix   # (M, (nx+1)^2) values at fine grid nodes
    chi_centers: sp.csr_matrix      # (M, num_cells) values at cell centers
    chi_midpoints: sp.csr_matrix    # (M, num_edges) values at edge midpoints
    grad_x: sp.csr_matrix           # (M, num_cells) d(chi)/dx at cell centers
    grad_y: sp.csr_matrix           # (M, num_cells) d(chi)/dy at cell centers

    @property
    def num_nodes(self):
        return self.nodes.shape[0]

    def grad_sq_sum(self):
        """Sum over nodes of |grad chi|^2 per fine cell, dense (num_cells,)."""
        gx = self.grad_x.multiply(self.grad_x).sum(axis=0)
        gy = self.grad_y.multiply(self.grad_y).sum(axis=0)
        return np.asarray(gx + gy).ravel()

    def edge_scaling(self, local_index):
        """Diagonal velocity-dof scaling by chi at edge midpoints, dense (num_edges,).

        Entries lie in [0, 1], vanish outside the node's support patch and
        are exactly zero on its boundary edges.
        """
        return np.asarray(self.chi_midpoints[local_index].todense()).ravel()

    def cell_scaling(self, local_index):
        """Diagonal pressure-dof scaling by chi at cell centers, dense (num_cells,)."""
        return np.asarray(self.chi_centers[local_index].todense()).ravel()


def build_pou(mesh, mode="all"):
    """Build one of three hat families.

    "all": plain hats over every coarse node (partition of unity).
    "interior": boundary hats folded into their nearest interior node, so the
    family is indexed by interior nodes and still sums to one (the residual
    localization family).
    "interior_plain": unfolded hats at interior nodes only; sums to less than
    one near the boundary but keeps nonvanishing gradients everywhere, which
    the weight field needs.
    """
    if mode not in ("all", "interior", "interior_plain"):
        raise ValueError(f"unknown partition-of-unity mode {mode!r}")
    if mode in ("interior", "interior_plain") and mesh.T < 2:
        raise ValueError("interior-only mode needs T >= 2 (no interior nodes on T=1)")
    nodes = (mesh.interior_node_coords if mode == "interior_plain"
             else mesh.all_node_coords)

    nx, n, T = mesh.nx, mesh.n, mesh.T
    n_fnodes = (nx + 1) ** 2

    fn_rows, fn_cols, fn_vals = [], [], []
    cc_rows, cc_cols, cc_vals = [], [], []
    gx_vals, gy_vals = [], []
    em_rows, em_cols, em_vals = [], [], []

    for k, (Jx, Jy) in enumerate(nodes):
        cx, cy = Jx * n, Jy * n   # node position in fine-cell units
        x_lo, x_hi = max(0, cx - n), min(nx, cx + n)
        y_lo, y_hi = max(0, cy - n), min(nx, cy + n)

        # fine grid nodes of the support window
        jx = np.arange(x_lo, x_hi + 1)
        jy = np.arange(y_lo, y_hi + 1)
        JX, JY = np.meshgrid(jx, jy)
        vals = _hat_1d(JX - cx, n) * _hat_1d(JY - cy, n)
        nz = vals > 0.0
        fn_rows.append(np.full(nz.sum(), k))
        fn_cols.append((JY[nz] * (nx + 1) + JX[nz]).ravel())
        fn_vals.append(vals[nz].ravel())

        # cell centers (half-integer coordinates, scaled by 2 to stay integral)
        ix = np.arange(max(0, x_lo), min(nx, x_hi))
        iy = np.arange(max(0, y_lo), min(nx, y_hi))
        IX, IY = np.meshgrid(ix, iy)
        dx2 = 2 * IX + 1 - 2 * cx   # 2*(center - node)
        dy2 = 2 * IY + 1 - 2 * cy
        tx = _hat_1d(dx2, 2 * n)
        ty = _hat_1d(dy2, 2 * n)
        cids = (IY * nx + IX).ravel()
        cc_rows.append(np.full(cids.size, k))
        cc_cols.append(cids)
        cc_vals.append((tx * ty).ravel())
        gx_vals.append((_hat_1d_deriv(dx2, 2 * n, T) * ty).ravel())
        gy_vals.append((tx * _hat_1d_deriv(dy2, 2 * n, T)).ravel())

        # horizontal edge midpoints (x half-integer, y integer)
        ex = np.arange(max(0, x_lo), min(nx, x_hi))
        ey = np.arange(y_lo, y_hi + 1)
        EX, EY = np.meshgrid(ex, ey)
        vals = _hat_1d(2 * EX + 1 - 2 * cx, 2 * n) * _hat_1d(EY - cy, n)
        nz = vals > 0.0
        em_rows.append(np.full(nz.sum(), k))
        em_cols.append(mesh.h_edge_id(EX[nz], EY[nz]).ravel())
        em_vals.append(vals[nz].ravel())

        # vertical edge midpoints (x integer, y half-integer)
        ex = np.arange(x_lo, x_hi + 1)
        ey = np.arange(max(0, y_lo), min(nx, y_hi))
        EX, EY = np.meshgrid(ex, ey)
        vals = _hat_1d(EX - cx, n) * _hat_1d(2 * EY + 1 - 2 * cy, 2 * n)
        nz = vals > 0.0
        em_rows.append(np.full(nz.sum(), k))
        em_cols.append(mesh.v_edge_id(EX[nz], EY[nz]).ravel())
        em_vals.append(vals[nz].ravel())

    M = len(nodes)
    if mode == "interior":
        # fold each hat into the row of the nearest interior node (duplicate
        # coordinates in the sparse constructor sum up)
        Tm = mesh.T - 1
        jx = np.clip(nodes[:, 0], 1, Tm)
        jy = np.clip(nodes[:, 1], 1, Tm)
        fold = (jy - 1) * Tm + (jx - 1)
        out_rows = Tm * Tm
        out_nodes = mesh.interior_node_coords
    else:
        fold = np.arange(M)
        out_rows = M
        out_nodes = np.asarray(nodes)

    def build(rows, cols, vals, ncols):
        row_idx = fold[np.concatenate(rows)]
        return sp.csr_matrix(
            (np.concatenate(vals), (row_idx, np.concatenate(cols))),
            shape=(out_rows, ncols))

    return PartitionOfUnity(
        mesh=mesh,
        mode=mode,
        nodes=out_nodes,
        chi_fine_nodes=build(fn_rows, fn_cols, fn_vals, n_fnodes),
        chi_centers=build(cc_rows, cc_cols, cc_vals, mesh.num_cells),
        chi_midpoints=build(em_rows, em_cols, em_vals, mesh.num_edges),
        grad_x=build(cc_rows, cc_cols, gx_vals, mesh.num_cells),
        grad_y=build(cc_rows, cc_cols, gy_vals, mesh.num_cells),
    )
