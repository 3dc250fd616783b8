"""Bilinear finite elements on the fine grid and an SPD solver.

Element node order is (0,0), (1,0), (0,1), (1,1).  With a piecewise
constant coefficient the element integrals are exact closed forms, so
assembly is free of quadrature error.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .mesh import SIDES, Grid
from .validation import check_cell_field, check_permeability

# stiffness of a square bilinear element, independent of its size in 2D
REF_STIFFNESS = np.array(
    [
        [4.0, -1.0, -1.0, -2.0],
        [-1.0, 4.0, -2.0, -1.0],
        [-1.0, -2.0, 4.0, -1.0],
        [-2.0, -1.0, -1.0, 4.0],
    ]
) / 6.0

# mass of the unit square; scale by the cell area
REF_MASS = np.array(
    [
        [4.0, 2.0, 2.0, 1.0],
        [2.0, 4.0, 1.0, 2.0],
        [2.0, 1.0, 4.0, 2.0],
        [1.0, 2.0, 2.0, 4.0],
    ]
) / 36.0

_IU, _JU = np.triu_indices(4)


class NonConvergenceError(RuntimeError):
    """Raised when the conjugate gradient iteration cap is exceeded."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def _assemble(cell_nodes, weights, ref, n_dofs):
    # upper triangle only; the lower half is mirrored so A == A.T bitwise
    rows = cell_nodes[:, _IU].ravel()
    cols = cell_nodes[:, _JU].ravel()
    vals = (weights[:, None] * ref[_IU, _JU][None, :]).ravel()
    upper = sp.coo_matrix((vals, (rows, cols)), shape=(n_dofs, n_dofs)).tocsr()
    upper.sum_duplicates()
    strict = sp.triu(upper, k=1, format="csr")
    A = (upper + strict.T).tocsr()
    A.sort_indices()
    return A


def _cells_and_nodes(grid: Grid, cells, local: bool):
    cells = np.arange(grid.n_cells) if cells is None else np.asarray(cells, dtype=np.int64)
    cn = grid.cell_nodes[cells]
    if not local:
        return cells, cn, None, grid.n_nodes
    nodes = np.unique(cn)
    return cells, np.searchsorted(nodes, cn), nodes, nodes.size


def assemble_stiffness(grid: Grid, kappa, cells=None, local: bool = False):
    """Assemble ``int kappa grad u . grad v`` over ``cells`` (all by default).

    With ``local=True`` the matrix is indexed by the sorted fine nodes
    touched by ``cells`` and ``(A, nodes)`` is returned.
    """
    kappa = check_permeability(grid, kappa)
    cells, cn, nodes, n = _cells_and_nodes(grid, cells, local)
    A = _assemble(cn, kappa[cells], REF_STIFFNESS, n)
    return (A, nodes) if local else A


def assemble_weighted_mass(grid: Grid, w, cells=None, local: bool = False):
    """Assemble ``int w u v``; ``w`` is a non-negative per-cell weight."""
    w = check_cell_field(grid, w, name="weight", positive=False)
    cells, cn, nodes, n = _cells_and_nodes(grid, cells, local)
    M = _assemble(cn, w[cells] * grid.h**2, REF_MASS, n)
    return (M, nodes) if local else M


def apply_dirichlet(A, b, nodes, values):
    """Symmetric elimination of prescribed nodal values.

    Constrained rows and columns are zeroed with a unit diagonal and the
    right-hand side is corrected so the solution takes ``values`` there.
    """
    nodes = np.asarray(nodes, dtype=np.int64).ravel()
    values = np.broadcast_to(np.asarray(values, dtype=np.float64), nodes.shape)
    b = np.array(b, dtype=np.float64)
    if nodes.size == 0:
        return A.copy(), b
    order = np.argsort(nodes, kind="stable")
    sn, sv = nodes[order], values[order]
    dup = sn[1:] == sn[:-1]
    if np.any(dup & (sv[1:] != sv[:-1])):
        raise ValueError("conflicting Dirichlet values for a repeated node")
    keep = np.concatenate([[True], ~dup])
    nodes, values = sn[keep], sv[keep]
    if nodes.min() < 0 or nodes.max() >= A.shape[0]:
        raise IndexError("Dirichlet node out of range")

    g = np.zeros(A.shape[0])
    g[nodes] = values
    free = np.ones(A.shape[0])
    free[nodes] = 0.0
    rhs = b - (A @ g if b.ndim == 1 else (A @ g)[:, None])
    P = sp.diags(free)
    Ad = (P @ A @ P + sp.diags(1.0 - free)).tocsr()
    Ad.eliminate_zeros()
    Ad.sort_indices()
    if b.ndim == 1:
        rhs[nodes] = values
    else:
        rhs[nodes, :] = values[:, None]
    return Ad, rhs


def solve_spd(A, b, rel_tol: float = 1e-10, x0=None, maxiter=None):
    """Jacobi-preconditioned conjugate gradients.

    ``b`` may be a vector or a matrix whose columns are independent
    right-hand sides; each column iterates with its own step sizes until
    ``||A x - b|| <= rel_tol * ||b||``.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=np.float64)
    vec = b.ndim == 1
    B = b[:, None] if vec else b
    n = A.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    dinv = 1.0 / A.diagonal()
    if not np.all(np.isfinite(dinv)) or np.any(dinv <= 0):
        raise ValueError("matrix diagonal must be strictly positive")

    X_out = np.zeros_like(B) if x0 is None else np.array(x0, dtype=np.float64).reshape(B.shape)
    R_all = B - A @ X_out
    target = rel_tol * np.linalg.norm(B, axis=0)
    res = np.linalg.norm(R_all, axis=0)
    idx = np.flatnonzero(res > target)
    # working arrays hold only unconverged columns; compacted when one converges
    X, R, tgt = X_out[:, idx], R_all[:, idx], target[idx]
    Z = dinv[:, None] * R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    it = 0
    while idx.size:
        if it >= maxiter:
            res[idx] = np.linalg.norm(R, axis=0)
            raise NonConvergenceError(
                f"CG did not converge in {maxiter} iterations "
                f"(max residual {np.max(res):.3e})",
                residual=res,
            )
        AP = A @ P
        alpha = rz / np.einsum("ij,ij->j", P, AP)
        X += alpha * P
        R -= alpha * AP
        Z = dinv[:, None] * R
        rz_new = np.einsum("ij,ij->j", R, Z)
        P = Z + (rz_new / rz) * P
        rz = rz_new
        it += 1
        rn = np.linalg.norm(R, axis=0)
        done = rn <= tgt
        if np.any(done):
            X_out[:, idx[done]] = X[:, done]
            res[idx[done]] = rn[done]
            keep = ~done
            idx, X, R, P, rz, tgt = idx[keep], X[:, keep], R[:, keep], P[:, keep], rz[keep], tgt[keep]
    return X_out[:, 0] if vec else X_out


def load_vector(grid: Grid, f_nodal):
    """``(f, v)`` for nodal source values, via the unit mass matrix."""
    f_nodal = np.asarray(f_nodal, dtype=np.float64)
    if f_nodal.shape != (grid.n_nodes,):
        raise ValueError(f"source must have {grid.n_nodes} nodal values, got {f_nodal.shape}")
    return unit_mass(grid) @ f_nodal


def unit_mass(grid: Grid):
    cache = grid.__dict__.setdefault("_fem_cache", {})
    if "mass" not in cache:
        cache["mass"] = assemble_weighted_mass(grid, np.ones(grid.n_cells))
    return cache["mass"]


def unit_stiffness(grid: Grid):
    cache = grid.__dict__.setdefault("_fem_cache", {})
    if "stiff" not in cache:
        cache["stiff"] = assemble_stiffness(grid, np.ones(grid.n_cells))
    return cache["stiff"]


def fine_solve(grid: Grid, kappa, f_nodal, bc=SIDES, rel_tol: float = 1e-10):
    """Reference fine-scale solution with homogeneous data on the ``bc`` sides."""
    A = assemble_stiffness(grid, kappa)
    b = load_vector(grid, f_nodal)
    bnodes = grid.boundary_nodes(bc)
    Ad, bd = apply_dirichlet(A, b, bnodes, 0.0)
    return solve_spd(Ad, bd, rel_tol=rel_tol)
