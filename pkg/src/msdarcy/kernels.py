"""Shared linear-algebra kernels.

Saddle systems [A, -B^T; B, P] are solved by eliminating the velocity block:
A is a velocity mass matrix whose graph decomposes into short 1D chains on
tensor grids, so its sparse LU is exact with near-zero fill, and the pressure
Schur complement S = B A^-1 B^T + P is applied matrix-free inside CG.  The
preconditioner replaces A by its diagonal; mass matrices are spectrally
equivalent to their diagonals with coefficient-independent constants, so CG
converges in a few dozen iterations regardless of contrast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, SingularOperatorError

SOLVE_RTOL = 1e-10          # contract: delivered relative residual
CG_RTOL = 1e-13             # per-sweep CG target
PIVOT_RTOL = 1e-12          # effective-singularity threshold on LU pivots


@dataclass
class SaddleOperator:
    """Block operator [A, -B^T; B, P] with P = P_explicit + W W^T.

    A: (nv, nv) symmetric positive definite, sparse.
    B: (np, nv) sparse divergence block.
    P: optional explicit sparse symmetric PSD block.
    W: optional (np, k) sparse factor contributing W W^T to P.
    pin: optional pressure index eliminated (fixed to zero), for P = 0 solves.
    """

    A: sp.spmatrix
    B: sp.spmatrix
    P: sp.spmatrix | None = None
    W: sp.spmatrix | None = None
    pin: int | None = None

    @property
    def nv(self):
        return self.A.shape[0]

    @property
    def npr(self):
        return self.B.shape[0]

    def apply(self, v, q):
        """Full block application; returns (A v - B^T q, B v + P q)."""
        r1 = self.A @ v - self.B.T @ q
        r2 = self.B @ v
        if self.P is not None:
            r2 = r2 + self.P @ q
        if self.W is not None:
            r2 = r2 + self.W @ (self.W.T @ q)
        return r1, r2


def _lu_or_singular(mat, what, witness_builder=None):
    try:
        lu = spla.splu(mat.tocsc())
    except RuntimeError as e:
        raise SingularOperatorError(
            f"{what} is exactly singular: {e}",
            witness=witness_builder() if witness_builder else None) from e
    du = np.abs(lu.U.diagonal())
    tiny = du <= PIVOT_RTOL * du.max() if du.size else np.array([], dtype=bool)
    nullity = int(tiny.sum())
    if nullity:
        raise SingularOperatorError(
            f"{what} is effectively singular (nullity {nullity})",
            witness=witness_builder() if witness_builder else None,
            nullity=nullity)
    return lu


def pcg(apply_op, b, apply_prec, rtol=CG_RTOL, max_iter=500):
    """Preconditioned conjugate gradients; returns (x, iterations).

    Deterministic: fixed starting point and update order.
    """
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b), 0
    x = np.zeros_like(b)
    r = b.copy()
    z = apply_prec(r)
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iter + 1):
        Ap = apply_op(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise SingularOperatorError(
                "conjugate-gradient breakdown: nonpositive curvature "
                "(operator not positive definite)", witness=p / np.linalg.norm(p))
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= rtol * nb:
            return x, it
        z = apply_prec(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"conjugate gradients did not reach rtol={rtol:g} in {max_iter} iterations")


class SaddleFactorization:
    """Reusable solve handle for one SaddleOperator."""

    def __init__(self, op, max_iter=500):
        self.op = op
        self.max_iter = max_iter
        nv, npr = op.nv, op.npr

        self.keep = np.arange(npr)
        if op.pin is not None:
            self.keep = np.delete(self.keep, op.pin)
        self._Bk = op.B[self.keep].tocsr() if op.pin is not None else op.B.tocsr()
        self._Pk = None
        if op.P is not None:
            Pk = op.P.tocsr()
            if op.pin is not None:
                Pk = Pk[self.keep][:, self.keep]
            self._Pk = Pk.tocsr()
        self._Wk = None
        if op.W is not None:
            Wk = op.W
            if op.pin is not None:
                Wk = Wk.tocsr()[self.keep]
            self._Wk = Wk.tocsc()

        self._luA = _lu_or_singular(op.A, "velocity block", self._dense_witness)
        self._Acsr = op.A.tocsr()

        # Schur-complement preconditioner with diag(A) in place of A
        dinv = 1.0 / op.A.diagonal()
        S0 = (self._Bk.multiply(dinv) @ self._Bk.T).tocsc()
        if self._Pk is not None:
            S0 = (S0 + self._Pk).tocsc()
        if self._Wk is not None:
            k = self._Wk.shape[1]
            self._proxy = sp.bmat(
                [[S0, self._Wk], [self._Wk.T, -sp.identity(k)]], format="csc")
            self._border = k
        else:
            self._proxy = S0
            self._border = 0
        self._luP = _lu_or_singular(
            self._proxy, "pressure Schur complement", self._dense_witness)

    def _dense_witness(self):
        """Null-direction witness of the full saddle operator, small systems only."""
        op = self.op
        dim = op.nv + op.npr
        if dim > 4000:
            return None
        top = sp.hstack([op.A, -op.B.T])
        Pfull = sp.csr_matrix((op.npr, op.npr))
        if op.P is not None:
            Pfull = Pfull + op.P
        if op.W is not None:
            Pfull = Pfull + op.W @ op.W.T
        bot = sp.hstack([op.B, Pfull])
        dense = sp.vstack([top, bot]).toarray()
        if self.op.pin is not None:
            idx = np.concatenate([np.arange(op.nv), op.nv + self.keep])
            dense = dense[np.ix_(idx, idx)]
        ns = scipy.linalg.null_space(dense, rcond=1e-10)
        if ns.shape[1] == 0:
            return None
        w = ns[:, 0]
        if self.op.pin is not None:
            full = np.zeros(dim)
            full[:op.nv] = w[:op.nv]
            full[op.nv + self.keep] = w[op.nv:]
            return full
        return w

    def _solveA(self, x):
        # one refinement pass: plain LU accuracy degrades with the contrast
        v = self._luA.solve(x)
        v += self._luA.solve(x - self._Acsr @ v)
        return v

    def _schur_apply(self, q):
        out = self._Bk @ self._solveA(self._Bk.T @ q)
        if self._Pk is not None:
            out = out + self._Pk @ q
        if self._Wk is not None:
            out = out + self._Wk @ (self._Wk.T @ q)
        return out

    def _prec_apply(self, r):
        if self._border:
            z = self._luP.solve(np.concatenate([r, np.zeros(self._border)]))
            return z[:r.shape[0]]
        return self._luP.solve(r)

    def _residual(self, v, q, f1, f2):
        r1, r2 = self.op.apply(v, q)
        r1 = f1 - r1
        r2 = f2 - r2
        if self.op.pin is not None:
            r2[self.op.pin] = 0.0  # pinned equation is dropped, not enforced
        return r1, r2

    def solve(self, f1, f2, rtol=SOLVE_RTOL):
        """Solve [A, -B^T; B, P] (v, q) = (f1, f2) to the given relative residual.

        Defect correction over the full block system: high contrast limits the
        forward accuracy of a single Schur sweep (fluxes recovered from
        pressures lose about log10(contrast) digits), while corrections are
        computed from tiny defects and do not inherit that amplification.
        """
        op = self.op
        f1 = np.zeros(op.nv) if f1 is None else np.asarray(f1, dtype=float)
        f2 = np.zeros(op.npr) if f2 is None else np.asarray(f2, dtype=float)

        v = np.zeros(op.nv)
        q = np.zeros(op.npr)
        rel = np.inf
        for sweep in range(6):
            r1, r2 = self._residual(v, q, f1, f2)
            scale1 = max(np.linalg.norm(f1), np.linalg.norm(op.A @ v),
                         np.linalg.norm(op.B.T @ q), 1e-300)
            scale2 = max(np.linalg.norm(f2), np.linalg.norm(op.B @ v), 1e-300)
            rel = max(np.linalg.norm(r1) / scale1, np.linalg.norm(r2) / scale2)
            if rel <= 0.3 * rtol or (sweep > 0 and rel <= rtol):
                return v, q
            g = r2[self.keep] - self._Bk @ self._solveA(r1)
            dqk, _ = pcg(self._schur_apply, g, self._prec_apply,
                         max_iter=self.max_iter)
            dq = np.zeros(op.npr)
            dq[self.keep] = dqk
            dv = self._solveA(r1 + op.B.T @ dq)
            v += dv
            q += dq
        r1, r2 = self._residual(v, q, f1, f2)
        scale1 = max(np.linalg.norm(f1), np.linalg.norm(op.A @ v),
                     np.linalg.norm(op.B.T @ q), 1e-300)
        scale2 = max(np.linalg.norm(f2), np.linalg.norm(op.B @ v), 1e-300)
        rel = max(np.linalg.norm(r1) / scale1, np.linalg.norm(r2) / scale2)
        if rel > rtol:
            raise ConvergenceError(
                f"saddle solve stalled at relative residual {rel:.3e} "
                f"(target {rtol:g})")
        return v, q


def factor_saddle(op, max_iter=500):
    """Factor a saddle operator into a reusable solve handle.

    Raises SingularOperatorError (with a null-direction witness on small
    systems) when a block is exactly or effectively singular.
    """
    return SaddleFactorization(op, max_iter=max_iter)


def gen_eig_sym(M, s_diag, count=None):
    """Ascending eigenpairs of M x = lambda S x with S = diag(s_diag) > 0.

    M must be symmetric to 1e-12 relative (assembly is exact up to rounding,
    so a looser gate would mask assembly bugs).  Eigenvectors come back
    S-orthonormal with a deterministic sign convention; eigenvalues in
    [-1e-12, 0) * scale are rounding debris of a PSD pencil and are clamped
    to zero.
    """
    M = np.asarray(M, dtype=float)
    s = np.asarray(s_diag, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or s.shape != (M.shape[0],):
        raise ValueError("shape mismatch between M and s_diag")
    if not np.all(s > 0.0):
        raise ValueError("s_diag must be strictly positive")
    scale = np.abs(M).max()
    asym = np.abs(M - M.T).max()
    if scale > 0.0 and asym > 1e-12 * scale:
        raise ValueError(
            f"operator is not symmetric: max asymmetry {asym:.3e} "
            f"(relative {asym / scale:.3e})")
    m = M.shape[0]
    if count is None:
        count = m
    if count > m:
        raise ValueError(f"requested {count} eigenpairs of a {m}-dimensional pencil")

    d = 1.0 / np.sqrt(s)
    Mt = (d[:, None] * ((M + M.T) / 2.0)) * d[None, :]
    w, V = scipy.linalg.eigh(Mt)
    lam_scale = np.abs(w).max() if w.size else 0.0
    w[(w < 0.0) & (w >= -1e-12 * lam_scale)] = 0.0
    X = d[:, None] * V

    # deterministic sign: largest-magnitude component positive
    piv = np.abs(X).argmax(axis=0)
    flip = X[piv, np.arange(m)] < 0.0
    X[:, flip] *= -1.0

    X = X[:, :count]
    w = w[:count]

    mnorm = max(np.linalg.norm(M), 1e-300)
    resid = M @ X - s[:, None] * X * w[None, :]
    worst = np.linalg.norm(resid, axis=0).max() if count else 0.0
    if worst > 1e-8 * mnorm:
        raise ConvergenceError(
            f"eigen residual {worst:.3e} exceeds 1e-8 * ||M|| = {1e-8 * mnorm:.3e}")
    gram = X.T @ (s[:, None] * X)
    if count and np.abs(gram - np.eye(count)).max() > 1e-8:
        raise ConvergenceError("eigenvectors lost S-orthonormality")
    return w, X
