"""Sparse direct solves and the eigenvalue diagnostics built on them.

Everything here is generic linear algebra: a factor-once direct solver with
one step of iterative refinement, extreme generalized eigenvalue estimation
by (inverse) power iteration, and the inf-sup constant of a saddle pair via
the pressure Schur complement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

RESIDUAL_TOL = 1e-10
REFINE_MAXITER = 10
EIG_TOL = 1e-6
EIG_MAXITER = 500
EIG_SEED = 42


class SolverError(Exception):
    """Numerically singular factorization or residual tolerance failure."""


def _as_csr(A) -> sp.csr_matrix:
    if sp.issparse(A):
        return A.tocsr()
    return sp.csr_matrix(np.atleast_2d(np.asarray(A, dtype=float)))


def is_symmetric(A, tol: float = 1e-12) -> bool:
    A = _as_csr(A)
    diff = abs(A - A.T)
    scale = max(abs(A).max(), 1e-300)
    return diff.max() <= tol * scale


class DirectFactor:
    """LU factorization of a sparse square matrix, reusable across solves.

    Each solve applies one step of iterative refinement and checks the
    relative residual against RESIDUAL_TOL.
    """

    def __init__(self, A):
        self.A = _as_csr(A)
        n, m = self.A.shape
        if n != m:
            raise SolverError(f"matrix is {n} x {m}, expected square")
        try:
            self.lu = spla.splu(self.A.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        scale = np.linalg.norm(b)
        if scale == 0.0:
            return np.zeros(b.shape)
        x = self.lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SolverError("factorization produced non-finite values")
        residual = np.linalg.norm(b - self.A @ x)
        for _ in range(REFINE_MAXITER):
            if residual <= RESIDUAL_TOL * scale:
                return x
            better = x + self.lu.solve(b - self.A @ x)
            improved = np.linalg.norm(b - self.A @ better)
            if improved >= residual:
                break
            x, residual = better, improved
        if residual > RESIDUAL_TOL * scale:
            raise SolverError(
                f"residual {residual:.3e} above {RESIDUAL_TOL:.0e} * |b| after refinement")
        return x


def solve_direct(A, b: np.ndarray) -> np.ndarray:
    """Solve A x = b to a relative residual of RESIDUAL_TOL."""
    return DirectFactor(A).solve(b)


def eig_extreme(A, B, which: str, tol: float = EIG_TOL, maxiter: int = EIG_MAXITER,
                seed: int = EIG_SEED):
    """Extreme generalized eigenvalue of A x = theta B x (A symmetric, B SPD).

    which = "max" runs power iteration on B^{-1} A; which = "min" runs
    inverse iteration on A^{-1} B, which targets the eigenvalue nearest
    zero (the minimum for the positive definite pencils used here).  The
    iteration stops once a residual bound certifies the Rayleigh quotient
    to the requested relative accuracy.  Clustered extremes (uniform
    meshes produce near-multiple top eigenvalues) stall the plain
    iteration; those are handed to Lanczos and its Ritz pair is certified
    with the same bound.  Returns (theta, converged); the best estimate
    comes back with converged = False when nothing certifies.
    """
    if which not in ("min", "max"):
        raise ValueError(f"which must be 'min' or 'max', got {which!r}")
    A = _as_csr(A)
    B = _as_csr(B)
    if A.shape != B.shape:
        raise ValueError("operator and metric dimensions differ")
    n = A.shape[0]
    if n == 0:
        raise ValueError("empty system")
    if n == 1:
        return float(A[0, 0] / B[0, 0]), True

    # both branches iterate on F^{-1} M and track rho = (x, Mx) / (x, Fx);
    # for "max" rho is theta itself, for "min" it is 1/theta
    F, M = (B, A) if which == "max" else (A, B)
    factor = DirectFactor(F)

    def certify(x):
        # |rho - lambda| <= |r|_{F^{-1}} / |x|_F for r = Mx - rho Fx
        mx = M @ x
        fx = F @ x
        rho = (x @ mx) / (x @ fx)
        r = mx - rho * fx
        bound = np.sqrt(max(r @ (factor.lu.solve(mx) - rho * x), 0.0)
                        / (x @ fx))
        return rho, bound <= tol * abs(rho)

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    rho = 0.0
    for _ in range(maxiter):
        mx = M @ x
        y = factor.lu.solve(mx)
        fx = F @ x
        rho = (x @ mx) / (x @ fx)
        r = mx - rho * fx
        bound = np.sqrt(max(r @ (y - rho * x), 0.0) / (x @ fx))
        if bound <= tol * abs(rho):
            return float(rho if which == "max" else 1.0 / rho), True
        norm = np.linalg.norm(y)
        if norm == 0.0:
            # M x vanished identically: the pencil is degenerate at zero
            return 0.0, True
        x = y / norm
    try:
        _, vecs = spla.eigsh(M, k=1, M=F, which="LA", v0=x)
        lanczos, ok = certify(vecs[:, 0])
        if ok and lanczos >= rho:
            return float(lanczos if which == "max" else 1.0 / lanczos), True
        rho = max(rho, lanczos)
    except Exception:
        pass
    return float(rho if which == "max" else 1.0 / rho), False


@dataclass(frozen=True)
class InfSupResult:
    """Outcome of the saddle-stability estimate.

    gamma is sqrt of the smallest Schur eigenvalue above the nullspace
    cutoff (the constant-pressure mode always sits below it); n_kernel
    counts the modes treated as nullspace.  degenerate marks pairs with no
    velocity dofs or an entirely null Schur complement.
    """

    gamma: float
    theta_min: float
    theta_max: float
    n_kernel: int
    degenerate: bool


def infsup_estimate(B_div, A_vel, M_press) -> InfSupResult:
    """Inf-sup constant of a velocity/pressure pair.

    Solves B A^{-1} B^T q = theta M q densely (the pressure space is the
    small side) and reports gamma = sqrt(theta_min) over the complement of
    the nullspace, which holds the constant mode plus any spurious ones.
    """
    B_div = _as_csr(B_div)
    M = _as_csr(M_press).toarray()
    n_press, n_vel = B_div.shape
    if n_vel == 0 or B_div.count_nonzero() == 0:
        return InfSupResult(0.0, 0.0, 0.0, n_press, True)

    factor = DirectFactor(A_vel)
    X = factor.lu.solve(B_div.T.toarray())
    S = B_div @ X
    S = 0.5 * (S + S.T)
    theta = scipy.linalg.eigh(S, M, eigvals_only=True)
    theta_max = float(theta[-1])
    cutoff = max(1e-12, 1e-10 * theta_max)
    above = theta[theta > cutoff]
    n_kernel = int(theta.size - above.size)
    if above.size == 0:
        return InfSupResult(0.0, 0.0, theta_max, n_kernel, True)
    theta_min = float(above[0])
    return InfSupResult(float(np.sqrt(theta_min)), theta_min, theta_max,
                        n_kernel, False)
