"""Neumann resolvent ``(-Δ_h + μ) v = ν u`` and its discrete Green-kernel floor."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import PreconditionError, SolverError
from .model import Domain, ScalarField, integrate


def neg_laplacian(x: np.ndarray, h: float) -> np.ndarray:
    """Apply ``-Δ_h`` with reflecting (zero-flux) boundary in flux form.

    Written as a sum of face differences so constants map to exactly zero.
    """
    out = np.zeros_like(x)
    c = 1.0 / (h * h)
    for axis in range(x.ndim):
        g = np.diff(x, axis=axis) * c
        lo = [slice(None)] * x.ndim
        hi = [slice(None)] * x.ndim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        out[tuple(lo)] -= g
        out[tuple(hi)] += g
    return out


def neumann_laplacian_matrix(domain: Domain) -> sp.csr_matrix:
    """Sparse ``-Δ_h`` (3-point in 1D, 5-point in 2D), symmetric positive semidefinite."""
    c = 1.0 / domain.h**2

    def tri(n):
        main = np.full(n, 2.0 * c)
        main[0] = main[-1] = c
        off = np.full(n - 1, -c)
        return sp.diags([off, main, off], [-1, 0, 1], format="csr")

    if domain.dim == 1:
        return tri(domain.cells[0])
    nx, ny = domain.cells
    return (sp.kron(tri(nx), sp.identity(ny)) + sp.kron(sp.identity(nx), tri(ny))).tocsr()


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    domain: Domain
    mu: float
    matrix: sp.csr_matrix
    method: str = "direct"
    _lu: object = field(default=None, repr=False)

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(self.domain.shape)
        return self.mu * v + neg_laplacian(v, self.domain.h)

    @property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()


def assemble(domain: Domain, mu: float, method: str = "auto") -> EllipticOperator:
    if not mu > 0:
        raise PreconditionError("mu must be positive")
    if method == "auto":
        method = "direct" if domain.dim == 1 or domain.size <= 64 * 64 else "cg"
    if method not in ("direct", "cg"):
        raise PreconditionError(f"unknown elliptic method {method!r}")
    A = (neumann_laplacian_matrix(domain) + mu * sp.identity(domain.size, format="csr")).tocsr()
    lu = spla.splu(A.tocsc()) if method == "direct" else None
    return EllipticOperator(domain, float(mu), A, method, lu)


def _pcg(op: EllipticOperator, b: np.ndarray, tol_abs: float, x0=None):
    """Jacobi-preconditioned CG with an infinity-norm stop on the true residual."""
    A = op.matrix
    dinv = 1.0 / op.diagonal
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    maxiter = 10 * op.domain.size
    for it in range(maxiter):
        res = np.max(np.abs(r))
        if res <= tol_abs:
            return x, it, res
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if it % 50 == 49:
            r = b - A @ x
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = float(np.max(np.abs(b - A @ x)))
    if res <= tol_abs:
        return x, maxiter, res
    raise SolverError(f"CG did not converge in {maxiter} iterations", residual=res)


def solve_v(op: EllipticOperator, u: ScalarField, nu: float, tol: float = 1e-10) -> ScalarField:
    """Return v with ``||A v - ν u||_inf <= tol * max(1, ||ν u||_inf)``."""
    if not tol > 0:
        raise PreconditionError("tol must be positive")
    rhs = nu * np.asarray(u.values, dtype=float)
    bound = tol * max(1.0, float(np.max(np.abs(rhs))))
    flat = rhs.ravel()
    if op.method == "direct":
        v = op._lu.solve(flat)
        r = flat - op.apply(v).ravel()
        if np.max(np.abs(r)) > bound:
            v = v + op._lu.solve(r)
            r = flat - op.apply(v).ravel()
        res = float(np.max(np.abs(r)))
        if res > bound:
            raise SolverError(f"direct solve residual {res:.3e} exceeds {bound:.3e}", residual=res)
    else:
        v, _, _ = _pcg(op, flat, bound)
    return ScalarField(op.domain, v.reshape(op.domain.shape))


@dataclass(frozen=True)
class GreenFloor:
    """Minimum of the discrete Green response; ``certified`` iff every source column was swept."""

    value: float
    certified: bool
    columns: int

    def __float__(self):
        return self.value


def delta0_h(domain: Domain, mu: float, nu: float, max_columns: int = 4096,
             sampled_columns: int = 256, seed: int = 0) -> GreenFloor:
    """min over (x, y) of g_y(x), where ``A g_y = ν e_y / w_y``.

    Guarantees ``v(x) >= value * integrate(u)`` for nonnegative u when certified.
    """
    op = assemble(domain, mu, method="direct")
    n = domain.size
    if n <= max_columns:
        cols = np.arange(n)
        certified = True
    else:
        rng = np.random.default_rng(seed)
        corners = np.ravel_multi_index(
            np.array(np.meshgrid(*[[0, c - 1] for c in domain.cells], indexing="ij")).reshape(domain.dim, -1),
            domain.shape,
        )
        cols = np.unique(np.concatenate([corners, rng.choice(n, size=sampled_columns, replace=False)]))
        certified = False
    best = np.inf
    scale = nu / domain.weight
    for start in range(0, len(cols), 256):
        chunk = cols[start:start + 256]
        E = np.zeros((n, len(chunk)))
        E[chunk, np.arange(len(chunk))] = 1.0
        G = op._lu.solve(E)
        best = min(best, float(G.min()))
    return GreenFloor(scale * best, certified, len(cols))


def kernel_bound_holds(v: ScalarField, u: ScalarField, delta0: float, slack: float = 1e-10) -> bool:
    return v.min() >= delta0 * integrate(u) - slack
