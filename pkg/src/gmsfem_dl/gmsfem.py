"""Offline GMsFEM: partition of unity, snapshots, spectral bases, coarse model.

The spectral basis of a coarse neighborhood ``w_i`` is built in the span
of its snapshot functions ``Psi``.  With ``A`` the kappa-weighted stiffness
and ``S`` the mass weighted by ``kappa_tilde = kappa * sum_j |grad chi_j|^2``
(both restricted to ``w_i``), the reduced pencil ``(Psi^T A Psi,
Psi^T S Psi)`` is diagonalized, the eigenvectors of the smallest
eigenvalues are s-normalized and sign-fixed, and the resulting functions
are multiplied node-wise by ``chi_i``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from sklearn.base import BaseEstimator

from . import rng
from .fem import assemble_stiffness, assemble_weighted_mass, load_vector, solve_spd
from .mesh import SIDES, CoarseNeighborhood, Grid, GridSpec, build_grid, neighborhood
from .validation import check_nodal, check_permeability


class DegenerateSnapshotError(np.linalg.LinAlgError):
    pass


class SingularCoarseSystemError(np.linalg.LinAlgError):
    def __init__(self, message, smallest_eigenvalue):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


# ---------------------------------------------------------------- partition of unity


@dataclass
class PartitionOfUnity:
    """Per-block values of the four corner functions on the block's fine nodes."""

    grid: Grid = field(repr=False)
    chi: np.ndarray = field(repr=False)  # (n_blocks, 4, (r+1)^2)

    def function(self, j: int) -> np.ndarray:
        """Global nodal values of ``chi_j``."""
        g = self.grid
        jx, jy = g.coarse_node_coords(j)
        out = np.zeros(g.n_nodes)
        for by in (jy - 1, jy):
            for bx in (jx - 1, jx):
                if 0 <= bx < g.nxc and 0 <= by < g.nxc:
                    b = g.block_index(bx, by)
                    c = (jx - bx) + 2 * (jy - by)
                    out[g.block_nodes(b)] = self.chi[b, c]
        return out

    def on_nodes(self, j: int, nodes: np.ndarray) -> np.ndarray:
        return self.function(j)[nodes]

    def total(self) -> np.ndarray:
        return sum(self.function(j) for j in range(self.grid.n_coarse_nodes))


def _hat_data(r: int) -> np.ndarray:
    """Bilinear corner values on the (r+1)^2 nodes of a block, (4, (r+1)^2)."""
    t = np.arange(r + 1) / r
    xi, eta = np.meshgrid(t, t)
    xi, eta = xi.ravel(), eta.ravel()
    return np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta])


def _block_pou(grid: Grid, kappa, b: int, tol: float) -> np.ndarray:
    r = grid.refine
    A, _ = assemble_stiffness(grid, kappa, cells=grid.block_cells(b), local=True)
    ix, iy = np.meshgrid(np.arange(r + 1), np.arange(r + 1))
    bnd = ((ix == 0) | (ix == r) | (iy == 0) | (iy == r)).ravel()
    inner = np.flatnonzero(~bnd)
    outer = np.flatnonzero(bnd)
    hats = _hat_data(r)
    chi = np.zeros_like(hats)
    chi[:, outer] = hats[:, outer]
    A = A.tocsr()
    A_ii = A[inner][:, inner]
    A_ib = A[inner][:, outer]
    rhs = -(A_ib @ hats[:3, outer].T)
    chi[:3, inner] = solve_spd(A_ii, rhs, rel_tol=tol).T
    # the lift of sum(hats) = 1 is 1, so the last corner closes the partition exactly
    chi[3, inner] = 1.0 - (chi[0, inner] + chi[1, inner] + chi[2, inner])
    return chi


def build_pou(grid: Grid, kappa, blocks=None, base: PartitionOfUnity | None = None, tol=1e-10):
    """MsFEM partition of unity: kappa-harmonic lifts of bilinear hat data per block.

    Only ``blocks`` are recomputed when ``base`` is given.
    """
    kappa = check_permeability(grid, kappa)
    r = grid.refine
    if base is None:
        chi = np.zeros((grid.n_blocks, 4, (r + 1) ** 2))
        blocks = range(grid.n_blocks)
    else:
        chi = base.chi.copy()
        blocks = range(grid.n_blocks) if blocks is None else blocks
    for b in blocks:
        chi[b] = _block_pou(grid, kappa, b, tol)
    return PartitionOfUnity(grid, chi)


def kappa_tilde(grid: Grid, kappa, pou: PartitionOfUnity, blocks=None, base=None) -> np.ndarray:
    """Per-cell ``kappa * sum_j |grad chi_j|^2`` with the gradient taken at the cell center.

    The center gradient of a bilinear function equals the mean of its four
    Gauss-point gradients.
    """
    kappa = check_permeability(grid, kappa)
    r, h = grid.refine, grid.h
    out = np.zeros(grid.n_cells) if base is None else np.array(base, dtype=np.float64)
    blocks = range(grid.n_blocks) if blocks is None else blocks
    for b in blocks:
        v = pou.chi[b].reshape(4, r + 1, r + 1)  # [corner, y, x]
        gx = ((v[:, :-1, 1:] - v[:, :-1, :-1]) + (v[:, 1:, 1:] - v[:, 1:, :-1])) / (2 * h)
        gy = ((v[:, 1:, :-1] - v[:, :-1, :-1]) + (v[:, 1:, 1:] - v[:, :-1, 1:])) / (2 * h)
        cells = grid.block_cells(b)
        out[cells] = kappa[cells] * np.sum(gx**2 + gy**2, axis=0).ravel()
    return out


# ---------------------------------------------------------------- snapshots


@dataclass
class SnapshotSpace:
    node_id: int
    nodes: np.ndarray = field(repr=False)  # fine nodes of the neighborhood
    vectors: np.ndarray = field(repr=False)  # (n_nodes_w, n_snap)
    boundary_data: np.ndarray = field(repr=False)
    mode: str = "full"


def _neighborhood_cells(grid: Grid, hood: CoarseNeighborhood) -> np.ndarray:
    return np.concatenate([grid.block_cells(b) for b in hood.block_ids])


def build_snapshots(grid: Grid, kappa, hood: CoarseNeighborhood, mode="full", n_random=20,
                    seed=0, tol=1e-10) -> SnapshotSpace:
    """Kappa-harmonic extensions of boundary data on ``hood``.

    ``mode="full"`` uses one unit vector per boundary fine node;
    ``mode="randomized"`` uses ``n_random`` Rademacher vectors drawn from a
    stream seeded by ``(seed, node_id)``.
    """
    kappa = check_permeability(grid, kappa)
    cells = _neighborhood_cells(grid, hood)
    A, nodes = assemble_stiffness(grid, kappa, cells=cells, local=True)
    bidx = np.searchsorted(nodes, hood.boundary_fine_nodes)
    iidx = np.setdiff1d(np.arange(nodes.size), bidx, assume_unique=True)
    nb = bidx.size
    if mode == "full":
        G = np.eye(nb)
    elif mode == "randomized":
        if not 1 <= n_random <= nb:
            raise ValueError(f"randomized snapshot count must be in [1, {nb}], got {n_random}")
        G = rng.rademacher(rng.derive_seed(seed, hood.node_id), (nb, n_random))
    else:
        raise ValueError(f"unknown snapshot mode {mode!r}")
    A_ii = A[iidx][:, iidx]
    A_ib = A[iidx][:, bidx]
    psi = np.zeros((nodes.size, G.shape[1]))
    psi[bidx] = G
    psi[iidx] = solve_spd(A_ii, -(A_ib @ G), rel_tol=tol)
    return SnapshotSpace(hood.node_id, nodes, psi, G, mode)


# ---------------------------------------------------------------- spectral problem


@dataclass
class SpectralBasis:
    node_id: int
    nodes: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray
    coefficients: np.ndarray = field(repr=False)  # snapshot coordinates, s-orthonormal
    pre_vectors: np.ndarray = field(repr=False)  # before multiplication by chi_i
    vectors: np.ndarray = field(repr=False)  # phi_m on the neighborhood nodes
    sign_source: tuple = ()

    @property
    def n_basis(self) -> int:
        return self.vectors.shape[1]

    def fine_function(self, m: int, n_nodes: int) -> np.ndarray:
        out = np.zeros(n_nodes)
        out[self.nodes] = self.vectors[:, m]
        return out


def generalized_eigh(A, S):
    """Solve ``A v = lam S v`` for symmetric ``A`` and SPD ``S``.

    Cholesky reduction ``S = L L^T`` followed by a symmetric eigensolver on
    ``L^-1 A L^-T``.  Eigenvalues ascend and ``V^T S V = I``.
    """
    A = 0.5 * (A + A.T)
    S = 0.5 * (S + S.T)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise DegenerateSnapshotError("snapshot mass matrix is not positive definite") from exc
    Linv_A = sla.solve_triangular(L, A, lower=True)
    C = sla.solve_triangular(L, Linv_A.T, lower=True)
    C = 0.5 * (C + C.T)
    lam, Y = np.linalg.eigh(C)
    V = sla.solve_triangular(L.T, Y, lower=False)
    return lam, V


def _sign_by_largest(v: np.ndarray) -> float:
    k = int(np.argmax(np.abs(v)))  # argmax returns the lowest index among ties
    return -1.0 if v[k] < 0 else 1.0


def solve_spectral(grid: Grid, kappa, snaps: SnapshotSpace, pou: PartitionOfUnity, n_basis=2,
                   ktilde=None, reference=None, cond_limit=1e14) -> SpectralBasis:
    """Spectral basis of one neighborhood.

    ``reference`` optionally holds ``(n_nodes_w, >= n_basis)`` basis vectors
    of a reference realization; each new vector is flipped to have a
    non-negative inner product with its counterpart.  Without a reference,
    or on an exact tie, the largest-magnitude entry is made positive.
    """
    kappa = check_permeability(grid, kappa)
    if ktilde is None:
        ktilde = kappa_tilde(grid, kappa, pou)
    hood = neighborhood(grid, snaps.node_id)
    cells = _neighborhood_cells(grid, hood)
    A, nodes = assemble_stiffness(grid, kappa, cells=cells, local=True)
    S, _ = assemble_weighted_mass(grid, ktilde, cells=cells, local=True)
    if not np.array_equal(nodes, snaps.nodes):
        raise ValueError("snapshot space does not match the neighborhood")
    psi = snaps.vectors
    if n_basis > psi.shape[1]:
        raise ValueError(f"requested {n_basis} basis functions from {psi.shape[1]} snapshots")
    A_s = psi.T @ (A @ psi)
    S_s = psi.T @ (S @ psi)
    cond = np.linalg.cond(0.5 * (S_s + S_s.T))
    if not np.isfinite(cond) or cond > cond_limit:
        raise DegenerateSnapshotError(f"snapshot Gram matrix is ill-conditioned (cond={cond:.2e})")
    lam, V = generalized_eigh(A_s, S_s)
    lam, V = lam[:n_basis], V[:, :n_basis].copy()
    pre = psi @ V
    chi_i = pou.on_nodes(snaps.node_id, nodes)
    phi = chi_i[:, None] * pre
    sources = []
    for m in range(n_basis):
        sgn, src = 0.0, "largest"
        if reference is not None:
            ip = float(phi[:, m] @ reference[:, m])
            if ip != 0.0:
                sgn, src = (1.0 if ip > 0 else -1.0), "reference"
        if sgn == 0.0:
            sgn = _sign_by_largest(phi[:, m])
        if sgn < 0:
            V[:, m] = -V[:, m]
            pre[:, m] = -pre[:, m]
            phi[:, m] = -phi[:, m]
        sources.append(src)
    return SpectralBasis(snaps.node_id, nodes, lam, V, pre, phi, tuple(sources))


def eigen_diagnostics(grid: Grid, kappa, snaps: SnapshotSpace, basis: SpectralBasis, ktilde):
    """Residual, ordering and s-orthonormality of a computed spectral basis."""
    hood = neighborhood(grid, snaps.node_id)
    cells = _neighborhood_cells(grid, hood)
    A, _ = assemble_stiffness(grid, kappa, cells=cells, local=True)
    S, _ = assemble_weighted_mass(grid, ktilde, cells=cells, local=True)
    A_s = snaps.vectors.T @ (A @ snaps.vectors)
    S_s = snaps.vectors.T @ (S @ snaps.vectors)
    V, lam = basis.coefficients, basis.eigenvalues
    res = [
        np.linalg.norm(A_s @ V[:, m] - lam[m] * (S_s @ V[:, m]))
        / (np.linalg.norm(A_s, "fro") * np.linalg.norm(V[:, m]))
        for m in range(V.shape[1])
    ]
    gram = V.T @ S_s @ V
    return {
        "residual": float(max(res)),
        "ascending": bool(np.all(np.diff(lam) >= 0)),
        "orthonormality": float(np.max(np.abs(gram - np.eye(V.shape[1])))),
    }


# ---------------------------------------------------------------- coarse model


def block_dofs(grid: Grid, b: int, bases: dict) -> list:
    """``(node, m)`` labels of the bases that live on block ``b``, in (node, m) order."""
    return [(j, m) for j in sorted(grid.block_corner_nodes(b)) if j in bases
            for m in range(bases[j].n_basis)]


def assemble_local_matrix(grid: Grid, kappa, b: int, bases: dict, dofs=None):
    """``[A^K]_{(i,m),(j,n)} = int_K kappa grad phi_m^i . grad phi_n^j`` for block ``b``.

    Returns ``(labels, matrix)``; the matrix is symmetric bitwise.
    """
    kappa = check_permeability(grid, kappa)
    labels = block_dofs(grid, b, bases) if dofs is None else list(dofs)
    for j, m in labels:
        if j not in bases or m >= bases[j].n_basis:
            raise KeyError(f"missing basis ({j}, {m}) for block {b}")
    A, nodes = assemble_stiffness(grid, kappa, cells=grid.block_cells(b), local=True)
    Phi = np.zeros((nodes.size, len(labels)))
    for k, (j, m) in enumerate(labels):
        bj = bases[j]
        Phi[:, k] = bj.vectors[np.searchsorted(bj.nodes, nodes), m]
    M = Phi.T @ (A @ Phi)
    M = np.triu(M) + np.triu(M, 1).T
    return labels, M


@dataclass
class CoarseModel:
    dofs: list
    R: sp.csr_matrix = field(repr=False)
    A_c: np.ndarray = field(repr=False)
    b_c: np.ndarray = field(repr=False)
    local: dict = field(repr=False)  # block -> (labels, matrix)

    @property
    def n_c(self) -> int:
        return len(self.dofs)


def dof_table(grid: Grid, bases: dict, bc=SIDES) -> list:
    return [(j, m) for j in grid.dof_nodes(bc) for m in range(bases[j].n_basis)]


def downscaling_operator(grid: Grid, bases: dict, dofs: list) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for k, (j, m) in enumerate(dofs):
        b = bases[j]
        rows.append(b.nodes)
        cols.append(np.full(b.nodes.size, k))
        vals.append(b.vectors[:, m])
    R = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_nodes, len(dofs)),
    ).tocsr()
    R.sort_indices()
    return R


def scatter_local(dofs: list, local: dict) -> np.ndarray:
    index = {d: k for k, d in enumerate(dofs)}
    A_c = np.zeros((len(dofs), len(dofs)))
    for b in sorted(local):
        labels, M = local[b]
        if not labels:
            continue
        idx = np.array([index[d] for d in labels])
        A_c[np.ix_(idx, idx)] += M
    return A_c


def assemble_global(grid: Grid, bases: dict, local: dict, f_nodal, bc=SIDES) -> CoarseModel:
    """Coarse model from bases and per-block local matrices.

    ``A_c`` is the sum of scattered local matrices, ``b_c = R^T M f``.
    """
    dofs = dof_table(grid, bases, bc)
    R = downscaling_operator(grid, bases, dofs)
    A_c = scatter_local(dofs, local)
    b_c = R.T @ load_vector(grid, f_nodal)
    return CoarseModel(dofs, R, A_c, b_c, local)


def ms_solve(model: CoarseModel):
    """Solve ``A_c u_c = b_c`` by dense Cholesky and return ``(u_c, R u_c)``."""
    try:
        c = sla.cho_factor(model.A_c, lower=True)
    except np.linalg.LinAlgError as exc:
        lam = float(np.linalg.eigvalsh(0.5 * (model.A_c + model.A_c.T))[0])
        raise SingularCoarseSystemError(
            f"coarse matrix is not positive definite (smallest eigenvalue {lam:.3e})", lam
        ) from exc
    u_c = sla.cho_solve(c, model.b_c)
    return u_c, model.R @ u_c


# ---------------------------------------------------------------- estimator


class GMsFEM(BaseEstimator):
    """Offline GMsFEM discretization of ``-div(kappa grad u) = f``.

    Parameters
    ----------
    nx_coarse, refine : int
        Coarse cells per axis and fine cells per coarse cell per axis.
    n_basis : int
        Spectral basis functions per coarse neighborhood.
    snapshots : {"full", "randomized"}
        Snapshot space type.
    n_random : int
        Number of random boundary vectors when ``snapshots="randomized"``.
    seed : int
        Seed of the Rademacher boundary data.
    bc : tuple of str
        Sides carrying homogeneous Dirichlet data.
    tol : float
        Relative residual tolerance of the local CG solves.

    Attributes
    ----------
    grid_, pou_, kappa_tilde_, snapshots_, bases_, local_
    """

    def __init__(self, nx_coarse=10, refine=10, n_basis=2, snapshots="full", n_random=20,
                 seed=0, bc=SIDES, tol=1e-10):
        self.nx_coarse = nx_coarse
        self.refine = refine
        self.n_basis = n_basis
        self.snapshots = snapshots
        self.n_random = n_random
        self.seed = seed
        self.bc = bc
        self.tol = tol

    def _node_basis(self, kappa, j, reference):
        hood = neighborhood(self.grid_, j)
        snaps = build_snapshots(self.grid_, kappa, hood, self.snapshots, self.n_random,
                                self.seed, self.tol)
        ref = None if reference is None else reference.get(j)
        basis = solve_spectral(self.grid_, kappa, snaps, self.pou_, self.n_basis,
                               ktilde=self.kappa_tilde_, reference=ref)
        return snaps, basis

    def fit(self, kappa, y=None, sign_reference=None):
        """Compute every basis and local matrix for one permeability field.

        ``sign_reference`` maps coarse node ids to reference basis vectors
        (see :func:`solve_spectral`).
        """
        self.grid_ = build_grid(GridSpec(self.nx_coarse, self.refine))
        kappa = check_permeability(self.grid_, kappa)
        self.kappa_ = kappa
        self.pou_ = build_pou(self.grid_, kappa, tol=self.tol)
        self.kappa_tilde_ = kappa_tilde(self.grid_, kappa, self.pou_)
        self.snapshots_, self.bases_ = {}, {}
        for j in self.grid_.dof_nodes(self.bc):
            self.snapshots_[j], self.bases_[j] = self._node_basis(kappa, j, sign_reference)
        self.local_ = {
            b: assemble_local_matrix(self.grid_, kappa, b, self.bases_)
            for b in range(self.grid_.n_blocks)
        }
        return self

    def refit_blocks(self, kappa, blocks, sign_reference=None):
        """Return a copy refitted for a field that differs from ``kappa_`` only on ``blocks``.

        Only the partition of unity on ``blocks``, the bases of their
        degree-of-freedom corners and the local matrices of the blocks those
        bases touch are recomputed; everything else is shared.
        """
        g = self.grid_
        kappa = check_permeability(g, kappa)
        blocks = sorted({int(b) for b in blocks})
        outside = np.ones(g.n_cells, dtype=bool)
        for b in blocks:
            outside[g.block_cells(b)] = False
        if not np.array_equal(kappa[outside], self.kappa_[outside]):
            raise ValueError("field differs from the fitted one outside the given blocks")
        new = copy.copy(self)
        new.kappa_ = kappa
        new.pou_ = build_pou(g, kappa, blocks=blocks, base=self.pou_, tol=self.tol)
        new.kappa_tilde_ = kappa_tilde(g, kappa, new.pou_, blocks=blocks, base=self.kappa_tilde_)
        dof = set(g.dof_nodes(self.bc))
        nodes = sorted({j for b in blocks for j in g.block_corner_nodes(b)} & dof)
        new.snapshots_, new.bases_ = dict(self.snapshots_), dict(self.bases_)
        for j in nodes:
            new.snapshots_[j], new.bases_[j] = new._node_basis(kappa, j, sign_reference)
        touched = sorted({b for j in nodes for b in neighborhood(g, j).block_ids} | set(blocks))
        new.local_ = dict(self.local_)
        for b in touched:
            new.local_[b] = assemble_local_matrix(g, kappa, b, new.bases_)
        return new

    def coarse_model(self, f_nodal) -> CoarseModel:
        f_nodal = check_nodal(self.grid_, f_nodal, "source")
        return assemble_global(self.grid_, self.bases_, self.local_, f_nodal, self.bc)

    def solve(self, f_nodal):
        """Multiscale solution ``u_ms = R u_c`` on the fine nodes."""
        return ms_solve(self.coarse_model(f_nodal))[1]

    def basis_vector(self, j, m) -> np.ndarray:
        return self.bases_[j].vectors[:, m].copy()

    def sign_reference(self) -> dict:
        return {j: b.vectors.copy() for j, b in self.bases_.items()}
