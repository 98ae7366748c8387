"""Assembly and solve of the multiscale saddle system, expansion, errors.

The coarse pair couples the velocity basis with the auxiliary pressure modes
plus divergence companions: every offline field carries its divergence inside
the weighted image of the auxiliary space by construction, and an enrichment
field must extend the pressure side by the weighted image of its own
divergence or the added freedom is invisible to the mass constraints and the
constrained energy minimization drifts away from the reference solution.

Conditioning is managed at append time: offline columns are kept sparse and
scaled to unit energy; online columns are stored orthonormalized in the
energy inner product against the whole current basis (near-dependent
late-iteration corrections would otherwise push the Gram matrix past float64).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import SolverError

# relative residual accepted from the dense coarse solve
COARSE_RTOL = 1e-9
# pressure companion kept when its s-orthogonal remainder exceeds this
# fraction of its raw size (offline divergences project to ~0 by construction)
COMPANION_TOL = 1e-6
# and when its own field actuates it at least this strongly: the weight field
# balances the energy and weighted-divergence scales, so for a unit-energy
# field this is dimensionless; below it the new constraint is numerically
# uncontrollable and its multiplier would blow up
COMPANION_MIN_ACTUATION = 1e-2
# velocity column kept unless essentially reproduced by the current basis
VELOCITY_DROP_TOL = 1e-13


class CoarseSpace:
    """Velocity basis and pressure test space with incremental coarse blocks."""

    def __init__(self, sys, aux, fields=None):
        self.sys = sys
        self.aux = aux
        self.fields = []
        self.dropped = []
        ne = sys.mesh.num_edges
        self.Psi_off = sp.csc_matrix((ne, 0))   # sparse offline columns
        self.Psi_on = np.zeros((ne, 0))         # dense orthonormalized online columns
        self.A_off = np.zeros((0, 0))           # offline Gram block (online block is I)
        self.companions = np.zeros((sys.mesh.num_cells, 0))  # s-orthonormal extras
        self.B_c = np.zeros((aux.dim, 0))
        self._n_off = 0
        self._A_off_cho = None
        if fields:
            self.append(fields)

    @property
    def dim(self):
        return len(self.fields)

    @property
    def pressure_dim(self):
        return self.aux.dim + self.companions.shape[1]

    def velocity_matvec(self, alpha):
        k = self._n_off
        out = self.Psi_off @ alpha[:k]
        if alpha.size > k:
            out = out + self.Psi_on @ alpha[k:]
        return np.asarray(out).ravel()

    def _project_out_basis(self, w):
        """Remove the a-orthogonal projection onto the current basis span.

        Offline columns are normalized but not mutually orthogonal, so the
        projection goes through their Gram factor; online columns are stored
        orthonormal.
        """
        Aw = self.sys.A @ w
        if self._n_off:
            if self._A_off_cho is None:
                self._A_off_cho = scipy.linalg.cho_factor(self.A_off)
            z = scipy.linalg.cho_solve(self._A_off_cho,
                                       np.asarray(self.Psi_off.T @ Aw).ravel())
            w = w - np.asarray(self.Psi_off @ z).ravel()
            Aw = self.sys.A @ w
        if self.Psi_on.shape[1]:
            w = w - self.Psi_on @ (self.Psi_on.T @ Aw)
        return w

    def expand_pressure(self, beta):
        R = self.aux.dim
        p = self.aux.Q @ beta[:R]
        if beta.size > R:
            p = p + self.companions @ beta[R:]
        return np.asarray(p).ravel()

    def _append_pressure_companion(self, div_w):
        """Weighted divergence of a new field, s-orthonormalized into the
        pressure space; dropped when the basis already spans it."""
        S = self.sys.S
        xi = np.asarray(div_w).ravel() / S
        raw = np.sqrt(max(float(xi @ (S * xi)), 0.0))
        if raw == 0.0:
            return
        for _ in range(2):  # twice-is-enough re-orthogonalization
            xi = xi - self.aux.Q @ (self.aux.Q.T @ (S * xi))
            if self.companions.shape[1]:
                xi = xi - self.companions @ (self.companions.T @ (S * xi))
        nrm = np.sqrt(max(float(xi @ (S * xi)), 0.0))
        if nrm < COMPANION_TOL * raw or nrm < COMPANION_MIN_ACTUATION:
            return
        xi = xi / nrm
        self.companions = np.hstack([self.companions, xi[:, None]])
        row = self.velocity_dot_pressure(xi)
        self.B_c = np.vstack([self.B_c, row[None, :]])

    def velocity_dot_pressure(self, xi):
        """b(psi_k, xi) for every current basis column."""
        Btxi = self.sys.B.T @ xi
        off = np.asarray(self.Psi_off.T @ Btxi).ravel()
        on = self.Psi_on.T @ Btxi if self.Psi_on.shape[1] else np.zeros(0)
        return np.concatenate([off, on])

    def _append_B_column(self, w):
        Bw = self.sys.B @ w
        col_aux = self.aux.Q.T @ Bw
        col_comp = self.companions.T @ Bw if self.companions.shape[1] else np.zeros(0)
        col = np.concatenate([col_aux, col_comp])
        self.B_c = np.hstack([self.B_c, col[:, None]])

    def _append_offline_batch(self, fields):
        ne = self.sys.mesh.num_edges
        kept, cols = [], []
        for f in fields:
            w = f.dense(ne)
            na = self.sys.a_norm(w)
            if na == 0.0:
                self.dropped.append(f)
                continue
            kept.append(f)
            cols.append(sp.csc_matrix((w / na)[:, None]))
        if not kept:
            return
        Psi_new = sp.hstack(cols, format="csc")
        X = (self.sys.A @ Psi_new).tocsc()
        diag = (Psi_new.T @ X).toarray()
        diag = (diag + diag.T) / 2.0
        cross = (self.Psi_off.T @ X).toarray()
        k, kb = self._n_off, len(kept)
        newA = np.empty((k + kb, k + kb))
        newA[:k, :k] = self.A_off
        newA[:k, k:] = cross
        newA[k:, :k] = cross.T
        newA[k:, k:] = diag
        self.A_off = newA
        self._A_off_cho = None
        self.Psi_off = sp.hstack([self.Psi_off, Psi_new], format="csc")
        self._n_off += kb
        BP = (self.sys.B @ Psi_new).tocsc()
        cols_aux = (self.aux.Q.T @ BP).toarray()
        cols_comp = (self.companions.T @ BP if self.companions.shape[1]
                     else np.zeros((0, kb)))
        self.B_c = np.hstack([self.B_c, np.vstack([cols_aux, cols_comp])])
        for j, f in enumerate(kept):
            self._append_pressure_companion(np.asarray(BP[:, j].todense()).ravel())
            self.fields.append(f)

    def append(self, new_fields):
        """Enrich the velocity space (and the companion pressure directions).

        Offline fields must all precede online ones; they are batched for
        assembly speed.
        """
        new_fields = list(new_fields)
        offline = [f for f in new_fields if f.kind == "offline"]
        online = [f for f in new_fields if f.kind != "offline"]
        if offline:
            if self.Psi_on.shape[1]:
                raise SolverError("offline fields must precede online enrichment")
            self._append_offline_batch(offline)
        for f in online:
            w = f.dense(self.sys.mesh.num_edges)
            na = self.sys.a_norm(w)
            if na == 0.0:
                self.dropped.append(f)
                continue
            w = w / na
            for _ in range(2):  # twice-is-enough re-orthogonalization
                w = self._project_out_basis(w)
            rnorm = self.sys.a_norm(w)
            if rnorm < VELOCITY_DROP_TOL:
                self.dropped.append(f)
                continue
            w = w / rnorm
            self.Psi_on = np.hstack([self.Psi_on, w[:, None]])
            self._append_B_column(w)
            self._append_pressure_companion(self.sys.B @ w)
            self.fields.append(f)

    def coarse_blocks(self, f_cells_integrals):
        """(A_c, B_c, F_c, s-mean constraint vector) for the current pair."""
        K = self.dim
        A_c = np.zeros((K, K))
        k = self._n_off
        A_c[:k, :k] = self.A_off
        if K > k:
            A_c[k:, k:] = np.eye(K - k)
        F = np.asarray(f_cells_integrals, dtype=float)
        F_c = np.concatenate([
            self.aux.Q.T @ F,
            self.companions.T @ F if self.companions.shape[1] else np.zeros(0)])
        S1 = self.sys.S
        g = np.concatenate([
            self.aux.Q.T @ S1,
            self.companions.T @ S1 if self.companions.shape[1] else np.zeros(0)])
        return A_c, self.B_c, F_c, g


@dataclass
class MsSolution:
    alpha: np.ndarray   # velocity basis coefficients
    beta: np.ndarray    # pressure coefficients (aux modes, then companions)
    u: np.ndarray       # expanded fine edge fluxes
    p: np.ndarray       # expanded fine cell pressures
    iteration: int = 0


def assemble_coarse(space, f_cells_integrals):
    return space.coarse_blocks(f_cells_integrals)


def solve_coarse(space, f_cells_integrals, iteration=0):
    """Solve the multiscale saddle system and expand to fine vectors.

    The global constant pressure direction is fixed by one Lagrange
    constraint on the s-weighted mean.  A saturated basis may carry one
    exact linear dependence (the constant-mode combination lifts to the zero
    field); the solve falls back to a minimum-norm solution then, and any
    genuine inconsistency is reported as a construction bug.
    """
    A_c, B_c, F_c, g = space.coarse_blocks(f_cells_integrals)
    K = space.dim
    R = B_c.shape[0]
    if K == 0:
        raise SolverError("coarse space is empty")
    M = np.zeros((K + R + 1, K + R + 1))
    M[:K, :K] = A_c
    M[:K, K:K + R] = -B_c.T
    M[K:K + R, :K] = B_c
    M[K:K + R, -1] = g
    M[-1, K:K + R] = g
    rhs = np.zeros(K + R + 1)
    rhs[K:K + R] = F_c

    scale = max(np.linalg.norm(rhs), 1e-300)
    try:
        x = np.linalg.solve(M, rhs)
        rel = np.linalg.norm(M @ x - rhs) / scale
    except np.linalg.LinAlgError:
        rel = np.inf
    if not np.isfinite(rel) or rel > COARSE_RTOL:
        x, *_ = np.linalg.lstsq(M, rhs, rcond=1e-12)
        rel = np.linalg.norm(M @ x - rhs) / scale
        if not np.isfinite(rel) or rel > COARSE_RTOL:
            raise SolverError(
                f"coarse system is rank deficient beyond the constant pressure "
                f"mode (residual {rel:.3e}); this signals a basis construction bug")
    alpha = x[:K]
    beta = x[K:K + R]
    u = space.velocity_matvec(alpha)
    p = space.expand_pressure(beta)
    p = p - p.mean()
    return MsSolution(alpha=alpha, beta=beta, u=u, p=p, iteration=iteration)


def energy_error(sys, u_ms, u_ref):
    """Relative a-norm velocity error against the fine reference."""
    denom = sys.a_norm(u_ref)
    if denom == 0.0:
        raise SolverError("reference velocity has zero energy; "
                          "relative error is undefined")
    return sys.a_norm(u_ms - u_ref) / denom
