"""Per-element spectral pressure modes and the projection onto their span.

Each coarse element carries a generalized eigenproblem on the pressure Schur
complement of its local mixed operator (zero normal trace on the element
boundary), weighted by the local s-inner product.  The retained low modes
span the auxiliary pressure space; the smallest excluded eigenvalue across
elements is the spectral gap that governs decay and contraction rates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import grid as _grid
from .kernels import gen_eig_sym


@dataclass
class ElementModes:
    element: int
    cells: np.ndarray          # fine cells, sorted
    eigenvalues: np.ndarray    # retained, ascending
    next_eigenvalue: float     # first excluded; +inf if the local space is exhausted
    vectors: np.ndarray        # (len(cells), J), s-orthonormal
    degenerate: bool = False   # no interior edges (n = 1): all modes at zero


@dataclass
class AuxBasis:
    mesh: object
    J: int
    s_diag: np.ndarray                  # global weighted pressure mass diagonal
    elements: list = field(default_factory=list)
    spectral_gap: float = np.inf        # min over elements of the first excluded eigenvalue

    @property
    def dim(self):
        return len(self.elements) * self.J

    @property
    def Q(self):
        """Sparse (num_cells, dim) matrix of zero-extended aux modes."""
        if not hasattr(self, "_Q"):
            rows, cols, vals = [], [], []
            for i, em in enumerate(self.elements):
                for j in range(self.J):
                    rows.append(em.cells)
                    cols.append(np.full(em.cells.size, i * self.J + j))
                    vals.append(em.vectors[:, j])
            self._Q = sp.csc_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(self.mesh.num_cells, self.dim))
        return self._Q

    def coefficients(self, q):
        """s-inner products of a cell field with every aux mode."""
        return self.Q.T @ (self.s_diag * q)

    def project(self, q):
        """s-orthogonal projection onto the auxiliary space."""
        return self.Q @ self.coefficients(q)


def local_spectral(sys, element, count):
    """Ascending eigenpairs of the element's pressure Schur complement.

    Returns (eigenvalues, vectors, cells, degenerate); vectors are per-cell
    values on the element, s-orthonormal, extended by zero elsewhere.
    """
    region = _grid.oversample_element(sys.mesh, element, 0)
    cells = region.cells
    edges = region.interior_edges
    s_loc = sys.S[cells]
    if count > cells.size:
        raise ValueError(
            f"requested {count} modes but the element has only {cells.size} cells")
    if edges.size == 0:
        # single-cell element: zero operator, flagged degenerate
        M = np.zeros((cells.size, cells.size))
        w, X = gen_eig_sym(M, s_loc, count)
        return w, X, cells, True
    A_ii = sys.A[edges][:, edges].tocsc()
    B_i = sys.B[cells][:, edges].tocsr()
    lu = spla.splu(A_ii)
    X = lu.solve(B_i.T.toarray())
    M = B_i @ X
    M = (M + M.T) / 2.0
    w, vecs = gen_eig_sym(M, s_loc, count)
    return w, vecs, cells, False


def build_aux(mesh, sys, J):
    """Auxiliary basis with a uniform number of modes per coarse element."""
    local_dim = mesh.n ** 2
    if not (1 <= J <= local_dim):
        raise ValueError(f"J must be in [1, {local_dim}] for n={mesh.n}, got {J}")
    count = min(J + 1, local_dim)
    aux = AuxBasis(mesh=mesh, J=J, s_diag=sys.S)
    gap = np.inf
    for element in range(mesh.num_elements):
        w, vecs, cells, degenerate = local_spectral(sys, element, count)
        nxt = float(w[J]) if count > J else np.inf
        aux.elements.append(ElementModes(
            element=element, cells=cells, eigenvalues=np.array(w[:J]),
            next_eigenvalue=nxt, vectors=vecs[:, :J], degenerate=degenerate))
        gap = min(gap, nxt)
    aux.spectral_gap = float(gap)
    return aux


def write_spectrum(aux, path):
    """CSV of per-element retained eigenvalues plus the first excluded one."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["element"]
                        + [f"lambda_{j + 1}" for j in range(aux.J)]
                        + [f"lambda_{aux.J + 1}"])
        for em in aux.elements:
            writer.writerow([em.element]
                            + [repr(float(v)) for v in em.eigenvalues]
                            + [repr(float(em.next_eigenvalue))])
