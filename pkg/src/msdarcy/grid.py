"""Two-level Cartesian mesh over the unit square.

A coarse T x T grid of square blocks, each refined into n x n fine cells.
Pressure dofs sit on fine cells (row-major, y ascending); velocity dofs on
fine edges, family-major: all horizontal edges (normal +y) first, then all
vertical edges (normal +x), row-major within each family.  The ordering is
fixed so dump files are bit-stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


def build_mesh(T, n):
    """Build the two-level mesh with T x T coarse blocks of n x n fine cells."""
    if T < 1 or n < 1:
        raise ValueError(f"mesh requires T >= 1 and n >= 1, got T={T}, n={n}")
    return TwoLevelMesh(int(T), int(n))


@dataclass
class TwoLevelMesh:
    """Immutable after construction; safe for shared concurrent reads."""

    T: int
    n: int

    @property
    def H(self):
        return 1.0 / self.T

    @property
    def h(self):
        return 1.0 / (self.T * self.n)

    @property
    def nx(self):
        """Fine cells per side."""
        return self.T * self.n

    @property
    def num_elements(self):
        return self.T * self.T

    @property
    def num_interior_nodes(self):
        return (self.T - 1) ** 2

    @property
    def num_cells(self):
        return self.nx * self.nx

    @property
    def num_h_edges(self):
        return self.nx * (self.nx + 1)

    @property
    def num_edges(self):
        return 2 * self.nx * (self.nx + 1)

    # -- index maps (all accept scalars or arrays) --------------------------

    def cell_id(self, ix, iy):
        return iy * self.nx + ix

    def h_edge_id(self, ix, iy):
        # horizontal edge at y = iy*h spanning x in [ix*h, (ix+1)*h]
        return iy * self.nx + ix

    def v_edge_id(self, ix, iy):
        # vertical edge at x = ix*h spanning y in [iy*h, (iy+1)*h]
        return self.num_h_edges + iy * (self.nx + 1) + ix

    def element_id(self, Ix, Iy):
        return Iy * self.T + Ix

    @cached_property
    def cell_edges(self):
        """(num_cells, 4) int array of [left, right, bottom, top] edge ids."""
        nx = self.nx
        ix, iy = np.meshgrid(np.arange(nx), np.arange(nx))
        ix = ix.ravel()
        iy = iy.ravel()
        return np.column_stack([
            self.v_edge_id(ix, iy),
            self.v_edge_id(ix + 1, iy),
            self.h_edge_id(ix, iy),
            self.h_edge_id(ix, iy + 1),
        ])

    @cached_property
    def edge_cells(self):
        """(num_edges, 2) int array of [minus-side, plus-side] cells, -1 if absent.

        The plus side is the cell the edge normal (+y or +x) points into.
        """
        nx = self.nx
        out = np.full((self.num_edges, 2), -1, dtype=np.int64)
        # horizontal: below/above
        ix, iy = np.meshgrid(np.arange(nx), np.arange(nx + 1))
        ix = ix.ravel()
        iy = iy.ravel()
        eid = self.h_edge_id(ix, iy)
        below = iy >= 1
        above = iy <= nx - 1
        out[eid[below], 0] = self.cell_id(ix[below], iy[below] - 1)
        out[eid[above], 1] = self.cell_id(ix[above], iy[above])
        # vertical: left/right
        ix, iy = np.meshgrid(np.arange(nx + 1), np.arange(nx))
        ix = ix.ravel()
        iy = iy.ravel()
        eid = self.v_edge_id(ix, iy)
        left = ix >= 1
        right = ix <= nx - 1
        out[eid[left], 0] = self.cell_id(ix[left] - 1, iy[left])
        out[eid[right], 1] = self.cell_id(ix[right], iy[right])
        return out

    @cached_property
    def interior_edges(self):
        """Edges with a cell on both sides: the discrete zero-normal-trace space."""
        ec = self.edge_cells
        return np.flatnonzero((ec[:, 0] >= 0) & (ec[:, 1] >= 0))

    @cached_property
    def edge_midpoints(self):
        nx, h = self.nx, self.h
        mid = np.empty((self.num_edges, 2))
        ix, iy = np.meshgrid(np.arange(nx), np.arange(nx + 1))
        eid = self.h_edge_id(ix.ravel(), iy.ravel())
        mid[eid, 0] = (ix.ravel() + 0.5) * h
        mid[eid, 1] = iy.ravel() * h
        ix, iy = np.meshgrid(np.arange(nx + 1), np.arange(nx))
        eid = self.v_edge_id(ix.ravel(), iy.ravel())
        mid[eid, 0] = ix.ravel() * h
        mid[eid, 1] = (iy.ravel() + 0.5) * h
        return mid

    @cached_property
    def cell_centers(self):
        nx, h = self.nx, self.h
        ix, iy = np.meshgrid(np.arange(nx), np.arange(nx))
        return np.column_stack([(ix.ravel() + 0.5) * h, (iy.ravel() + 0.5) * h])

    @cached_property
    def cell_element(self):
        """Coarse element id of every fine cell."""
        nx, n = self.nx, self.n
        ix, iy = np.meshgrid(np.arange(nx), np.arange(nx))
        return self.element_id(ix.ravel() // n, iy.ravel() // n)

    def element_cells(self, element):
        """Sorted fine cell ids of one coarse element."""
        Ix, Iy = element % self.T, element // self.T
        ix = np.arange(Ix * self.n, (Ix + 1) * self.n)
        iy = np.arange(Iy * self.n, (Iy + 1) * self.n)
        IX, IY = np.meshgrid(ix, iy)
        return np.sort(self.cell_id(IX.ravel(), IY.ravel()))

    # -- coarse nodes --------------------------------------------------------

    @cached_property
    def interior_node_coords(self):
        """(N_c, 2) int array of (Jx, Jy) for interior coarse nodes, row-major."""
        Tm = self.T - 1
        jx, jy = np.meshgrid(np.arange(1, self.T), np.arange(1, self.T))
        return np.column_stack([jx.ravel(), jy.ravel()])

    @cached_property
    def all_node_coords(self):
        jx, jy = np.meshgrid(np.arange(self.T + 1), np.arange(self.T + 1))
        return np.column_stack([jx.ravel(), jy.ravel()])

    def node_elements(self, Jx, Jy):
        """Coarse elements whose closure contains node (Jx, Jy): up to 4."""
        els = []
        for Iy in (Jy - 1, Jy):
            for Ix in (Jx - 1, Jx):
                if 0 <= Ix < self.T and 0 <= Iy < self.T:
                    els.append(self.element_id(Ix, Iy))
        return np.array(sorted(els), dtype=np.int64)


@dataclass
class Region:
    """A connected union of coarse elements; fine index sets derived lazily."""

    mesh: TwoLevelMesh
    elements: np.ndarray  # sorted unique coarse element ids

    @cached_property
    def element_mask(self):
        mask = np.zeros(self.mesh.num_elements, dtype=bool)
        mask[self.elements] = True
        return mask

    @cached_property
    def cells(self):
        """Sorted fine cell ids covered by the region."""
        return np.flatnonzero(self.element_mask[self.mesh.cell_element])

    @cached_property
    def cell_mask(self):
        mask = np.zeros(self.mesh.num_cells, dtype=bool)
        mask[self.cells] = True
        return mask

    @cached_property
    def edges_touching(self):
        """Edges with at least one adjacent cell inside the region."""
        ec = self.mesh.edge_cells
        inside = np.zeros(self.mesh.num_cells + 1, dtype=bool)
        inside[self.cells] = True  # index -1 stays False via the sentinel slot
        return np.flatnonzero(inside[ec[:, 0]] | inside[ec[:, 1]])

    @cached_property
    def interior_edges(self):
        """Edges strictly inside: both adjacent cells in the region.

        Realizes the zero-normal-trace condition on the region boundary.
        """
        ec = self.mesh.edge_cells
        inside = np.zeros(self.mesh.num_cells + 1, dtype=bool)
        inside[self.cells] = True
        ok = inside[ec[:, 0]] & inside[ec[:, 1]] & (ec[:, 0] >= 0) & (ec[:, 1] >= 0)
        return np.flatnonzero(ok)

    def covers_domain(self):
        return len(self.elements) == self.mesh.num_elements


def _dilate(mask2d):
    """Grow a boolean element mask by one layer (8-neighborhood)."""
    out = mask2d.copy()
    out[1:, :] |= mask2d[:-1, :]
    out[:-1, :] |= mask2d[1:, :]
    out[:, 1:] |= mask2d[:, :-1]
    out[:, :-1] |= mask2d[:, 1:]
    out[1:, 1:] |= mask2d[:-1, :-1]
    out[1:, :-1] |= mask2d[:-1, 1:]
    out[:-1, 1:] |= mask2d[1:, :-1]
    out[:-1, :-1] |= mask2d[1:, 1:]
    return out


def grow_elements(mesh, elements, layers):
    """Enlarge an element set by the given number of coarse layers."""
    mask = np.zeros((mesh.T, mesh.T), dtype=bool)
    mask.ravel()[elements] = True
    for _ in range(layers):
        mask = _dilate(mask)
    return Region(mesh, np.flatnonzero(mask.ravel()))


def oversample_element(mesh, element, layers):
    """Oversampled region around one coarse element: layers=0 is the element itself."""
    if not (0 <= element < mesh.num_elements):
        raise ValueError(f"element index {element} out of range")
    if layers < 0:
        raise ValueError("layer count must be >= 0")
    return grow_elements(mesh, np.array([element]), layers)


def node_patch(mesh, Jx, Jy):
    """Union of coarse elements sharing coarse node (Jx, Jy); internal helper."""
    return Region(mesh, mesh.node_elements(Jx, Jy))


def node_neighborhood(mesh, interior_index, layers):
    """Oversampled neighborhood of an interior coarse node.

    layers=0 yields the up-to-4 elements sharing the node; each layer then
    grows the region as in oversample_element, clipped at the boundary.
    """
    if not (0 <= interior_index < mesh.num_interior_nodes):
        raise ValueError(
            f"interior node index {interior_index} out of range "
            f"(mesh has {mesh.num_interior_nodes} interior nodes)")
    if layers < 0:
        raise ValueError("layer count must be >= 0")
    Jx, Jy = mesh.interior_node_coords[interior_index]
    return grow_elements(mesh, mesh.node_elements(Jx, Jy), layers)


def whole_domain(mesh):
    return Region(mesh, np.arange(mesh.num_elements))


def restrict_dofs(region):
    """(interior velocity edge ids, pressure cell ids) of a region, both sorted."""
    return region.interior_edges, region.cells
