"""Constraint-energy-minimizing multiscale velocity basis.

Each auxiliary pressure mode gets one velocity basis field, solved on an
oversampled region around its element: an energy minimization constrained
through the projection onto the auxiliary space, realized as a saddle system
whose pressure block is the Gram factor of the projected s-inner product.
The companion pressure is kept for equation-residual diagnostics only; it
never enriches any approximation space.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import grid as _grid
from . import util
from .kernels import SaddleOperator, factor_saddle


@dataclass
class BasisField:
    """One velocity basis field with exact region support."""

    kind: str                   # "offline" | "online"
    tag: tuple                  # (element, mode) offline, (node, -1) online
    layers: int
    region_elements: np.ndarray
    edges: np.ndarray           # region interior edges (support, sorted)
    values: np.ndarray          # edge normal components on `edges`
    cells: np.ndarray           # region cells
    pressure: np.ndarray        # companion pressure on `cells` (diagnostics)

    def dense(self, num_edges):
        out = np.zeros(num_edges)
        out[self.edges] = self.values
        return out


def region_aux_factor(region, aux, sys):
    """Gram factor W with W W^T realizing the projected s-inner product.

    Rows follow the region's cell ordering; one column per auxiliary mode of
    an element inside the region.
    """
    cells = region.cells
    rows, cols, vals = [], [], []
    col = 0
    for element in region.elements:
        em = aux.elements[element]
        loc = np.searchsorted(cells, em.cells)
        w_block = sys.S[em.cells, None] * em.vectors
        for j in range(aux.J):
            rows.append(loc)
            cols.append(np.full(loc.size, col))
            vals.append(w_block[:, j])
            col += 1
    return sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(cells.size, col))


def assemble_constrained_saddle(region, aux, sys):
    """Saddle operator [A_r, -B_r^T; B_r, P_r] with P_r = W W^T on a region."""
    edges = region.interior_edges
    cells = region.cells
    A_r = sys.A[edges][:, edges].tocsc()
    B_r = sys.B[cells][:, edges].tocsc()
    W = region_aux_factor(region, aux, sys)
    return SaddleOperator(A=A_r, B=B_r, W=W)


def _mode_rhs(region, aux, sys, element, j):
    """Pressure right-hand side (S p_j restricted) for one auxiliary mode."""
    em = aux.elements[element]
    rhs = np.zeros(region.cells.size)
    loc = np.searchsorted(region.cells, em.cells)
    rhs[loc] = sys.S[em.cells] * em.vectors[:, j]
    return rhs


def _element_fields(element):
    state = util.shared_state()
    aux, sys, layers = state["aux"], state["sys"], state["layers"]
    region = _grid.oversample_element(sys.mesh, element, layers)
    handle = factor_saddle(assemble_constrained_saddle(region, aux, sys))
    fields = []
    for j in range(aux.J):
        rhs = _mode_rhs(region, aux, sys, element, j)
        psi, q = handle.solve(None, rhs, rtol=1e-10)
        fields.append(BasisField(
            kind="offline", tag=(element, j), layers=layers,
            region_elements=region.elements, edges=region.interior_edges,
            values=psi, cells=region.cells, pressure=q))
    return fields


def solve_cem_basis(element, j, layers, aux, sys):
    """One localized basis field (velocity, companion pressure) for mode (element, j)."""
    region = _grid.oversample_element(sys.mesh, element, layers)
    handle = factor_saddle(assemble_constrained_saddle(region, aux, sys))
    rhs = _mode_rhs(region, aux, sys, element, j)
    psi, q = handle.solve(None, rhs, rtol=1e-10)
    return BasisField(kind="offline", tag=(element, j), layers=layers,
                      region_elements=region.elements, edges=region.interior_edges,
                      values=psi, cells=region.cells, pressure=q)


def build_offline_space(aux, sys, layers, workers=1):
    """All N x J localized basis fields, element-major then mode order."""
    if layers < 1:
        raise ValueError("offline oversampling needs at least one layer")
    state = {"aux": aux, "sys": sys, "layers": layers}
    per_element = util.parallel_map(
        _element_fields, range(sys.mesh.num_elements), workers=workers, state=state)
    return [f for fields in per_element for f in fields]


def solve_global_lift(aux, sys, p_aux_cells):
    """Global constrained solve mapping an auxiliary pressure field to
    (velocity, companion pressure) on the whole domain; test-scale helper."""
    region = _grid.whole_domain(sys.mesh)
    handle = factor_saddle(assemble_constrained_saddle(region, aux, sys))
    rhs = sys.S[region.cells] * np.asarray(p_aux_cells)[region.cells]
    psi, q = handle.solve(None, rhs, rtol=1e-10)
    return BasisField(kind="offline", tag=(-1, -1), layers=2 * sys.mesh.T,
                      region_elements=region.elements, edges=region.interior_edges,
                      values=psi, cells=region.cells, pressure=q)


FORMAT_VERSION = 1


def field_checksum(kappa_cells):
    return hashlib.sha256(np.ascontiguousarray(kappa_cells).tobytes()).hexdigest()


def save_basis(path, fields, mesh, J, layers, checksum):
    """Versioned binary dump of a basis collection (skips offline recomputation)."""
    def pack(arrays):
        ptr = np.cumsum([0] + [a.size for a in arrays])
        data = np.concatenate(arrays) if arrays else np.array([])
        return data, ptr

    edges_data, edges_ptr = pack([f.edges for f in fields])
    values_data, _ = pack([f.values for f in fields])
    cells_data, cells_ptr = pack([f.cells for f in fields])
    pressure_data, _ = pack([f.pressure for f in fields])
    region_data, region_ptr = pack([f.region_elements for f in fields])
    np.savez_compressed(
        path,
        format_version=np.int64(FORMAT_VERSION),
        T=np.int64(mesh.T), n=np.int64(mesh.n),
        J=np.int64(J), layers=np.int64(layers),
        checksum=np.bytes_(checksum.encode()),
        kinds=np.array([f.kind for f in fields]),
        tags=np.array([f.tag for f in fields], dtype=np.int64).reshape(len(fields), 2),
        field_layers=np.array([f.layers for f in fields], dtype=np.int64),
        edges_data=edges_data, edges_ptr=edges_ptr,
        values_data=values_data,
        cells_data=cells_data, cells_ptr=cells_ptr,
        pressure_data=pressure_data,
        region_data=region_data, region_ptr=region_ptr,
    )


def load_basis(path, mesh, J, layers, checksum):
    """Load a basis dump, validating the header against the current setup."""
    with np.load(path) as z:
        if int(z["format_version"]) != FORMAT_VERSION:
            raise ValueError(f"unsupported basis dump version {int(z['format_version'])}")
        header = (int(z["T"]), int(z["n"]), int(z["J"]), int(z["layers"]),
                  bytes(z["checksum"]).decode())
        if header != (mesh.T, mesh.n, J, layers, checksum):
            raise ValueError(
                "basis dump header does not match the current mesh/field "
                f"(dump {header})")
        fields = []
        eptr, cptr, rptr = z["edges_ptr"], z["cells_ptr"], z["region_ptr"]
        for k in range(len(z["kinds"])):
            es, ee = eptr[k], eptr[k + 1]
            cs, ce = cptr[k], cptr[k + 1]
            rs, re = rptr[k], rptr[k + 1]
            fields.append(BasisField(
                kind=str(z["kinds"][k]), tag=tuple(int(t) for t in z["tags"][k]),
                layers=int(z["field_layers"][k]),
                region_elements=z["region_data"][rs:re].astype(np.int64),
                edges=z["edges_data"][es:ee].astype(np.int64),
                values=z["values_data"][es:ee].astype(float),
                cells=z["cells_data"][cs:ce].astype(np.int64),
                pressure=z["pressure_data"][cs:ce].astype(float)))
    return fields
