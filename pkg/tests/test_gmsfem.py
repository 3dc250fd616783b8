import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.base import clone

from gmsfem_dl.fem import apply_dirichlet, assemble_stiffness, fine_solve, load_vector, unit_mass
from gmsfem_dl.gmsfem import (
    GMsFEM,
    CoarseModel,
    DegenerateSnapshotError,
    SingularCoarseSystemError,
    _hat_data,
    assemble_local_matrix,
    build_pou,
    build_snapshots,
    eigen_diagnostics,
    generalized_eigh,
    ms_solve,
    scatter_local,
    solve_spectral,
    kappa_tilde,
)
from gmsfem_dl.mesh import GridSpec, build_grid, neighborhood

from conftest import random_channel_field


def test_pou_constant_kappa_is_bilinear(small_grid):
    pou = build_pou(small_grid, np.ones(small_grid.n_cells))
    hats = _hat_data(small_grid.refine)
    for b in range(small_grid.n_blocks):
        assert np.allclose(pou.chi[b], hats, atol=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_pou_sums_to_one(small_grid, seed):
    pou = build_pou(small_grid, random_channel_field(small_grid, seed))
    assert np.max(np.abs(pou.total() - 1.0)) <= 1e-12


def test_pou_nodal_values_and_support(small_grid):
    pou = build_pou(small_grid, random_channel_field(small_grid, 4))
    g = small_grid
    for j in range(g.n_coarse_nodes):
        chi = pou.function(j)
        coarse = [g.coarse_node_fine_index(i) for i in range(g.n_coarse_nodes)]
        assert chi[g.coarse_node_fine_index(j)] == 1.0
        assert np.all(np.delete(chi[coarse], j) == 0.0)
        outside = np.setdiff1d(np.arange(g.n_nodes), neighborhood(g, j).fine_nodes)
        assert np.all(chi[outside] == 0.0)


def test_pou_nonnegative_for_channels(grid, generator):
    pou = build_pou(grid, generator.sample(0.3, 1e3))
    assert pou.chi.min() >= -1e-12


def test_full_snapshots_count_and_constant_lift(grid, generator):
    k = generator.sample(0.2, 1e3)
    hood = neighborhood(grid, 60)
    snaps = build_snapshots(grid, k, hood, "full")
    assert snaps.vectors.shape == (441, 80)
    assert np.allclose(snaps.vectors.sum(axis=1), 1.0, atol=1e-9)


def test_snapshot_harmonicity(grid, generator):
    k = generator.sample(-0.3, 1e3)
    hood = neighborhood(grid, 61)
    for mode in ("full", "randomized"):
        snaps = build_snapshots(grid, k, hood, mode, n_random=20, seed=5)
        cells = np.concatenate([grid.block_cells(b) for b in hood.block_ids])
        A, nodes = assemble_stiffness(grid, k, cells=cells, local=True)
        inner = np.searchsorted(nodes, hood.interior_fine_nodes)
        bnd = np.searchsorted(nodes, hood.boundary_fine_nodes)
        res = (A @ snaps.vectors)[inner]
        ref = np.abs(A[inner][:, bnd]) @ np.abs(snaps.vectors[bnd])
        assert np.max(np.linalg.norm(res, axis=0) / np.linalg.norm(ref, axis=0)) <= 1e-9


def test_randomized_snapshots_deterministic(grid, generator):
    k = generator.sample(0.1, 1e3)
    hood = neighborhood(grid, 72)
    a = build_snapshots(grid, k, hood, "randomized", n_random=20, seed=9)
    b = build_snapshots(grid, k, hood, "randomized", n_random=20, seed=9)
    assert a.vectors.shape == (441, 20)
    assert np.array_equal(a.vectors, b.vectors)
    assert set(np.unique(a.boundary_data)) == {-1.0, 1.0}


def test_too_many_random_snapshots(grid, generator):
    with pytest.raises(ValueError):
        build_snapshots(grid, generator.reference(), neighborhood(grid, 60), "randomized", n_random=81)


def test_generalized_eigh_examples():
    lam, V = generalized_eigh(np.diag([1.0, 4.0]), np.eye(2))
    assert np.allclose(lam, [1, 4])
    assert np.allclose(np.abs(V), np.eye(2))
    lam, V = generalized_eigh(np.diag([2.0, 2.0]), np.diag([1.0, 2.0]))
    assert np.allclose(lam, [1, 2])
    assert np.allclose(V.T @ np.diag([1.0, 2.0]) @ V, np.eye(2))


def test_generalized_eigh_random_residual():
    rs = np.random.default_rng(0)
    Q = rs.normal(size=(30, 30))
    A = Q @ Q.T
    P = rs.normal(size=(30, 30))
    S = P @ P.T + 30 * np.eye(30)
    lam, V = generalized_eigh(A, S)
    assert np.all(np.diff(lam) >= 0)
    for m in range(30):
        r = np.linalg.norm(A @ V[:, m] - lam[m] * S @ V[:, m]) / (np.linalg.norm(A) * np.linalg.norm(V[:, m]))
        assert r <= 1e-8
    assert np.max(np.abs(V.T @ S @ V - np.eye(30))) <= 1e-8


def test_degenerate_snapshots(grid, generator):
    k = generator.reference()
    snaps = build_snapshots(grid, k, neighborhood(grid, 60), "randomized", n_random=4)
    snaps.vectors = np.repeat(snaps.vectors[:, :1], 4, axis=1)
    pou = build_pou(grid, k)
    with pytest.raises(DegenerateSnapshotError):
        solve_spectral(grid, k, snaps, pou, n_basis=2)


def test_spectral_basis_properties(reference_fit, region):
    est = reference_fit
    for j in region.affected_nodes:
        d = eigen_diagnostics(est.grid_, est.kappa_, est.snapshots_[j], est.bases_[j], est.kappa_tilde_)
        assert d["residual"] <= 1e-8 and d["ascending"] and d["orthonormality"] <= 1e-8
        chi = est.pou_.on_nodes(j, est.bases_[j].nodes)
        assert np.array_equal(est.bases_[j].vectors, chi[:, None] * est.bases_[j].pre_vectors)


def test_sign_rule_deterministic_and_reference(grid, generator, reference_fit):
    k = generator.sample(0.35, 1e3)
    ref = reference_fit.sign_reference()
    a = reference_fit.refit_blocks(k, [55], ref)
    b = reference_fit.refit_blocks(k, [55], ref)
    for j in (60, 61, 71, 72):
        assert np.array_equal(a.bases_[j].vectors, b.bases_[j].vectors)
        assert np.all(np.einsum("ij,ij->j", a.bases_[j].vectors, ref[j]) >= 0)
        assert set(a.bases_[j].sign_source) == {"reference"}


def test_sign_rule_without_reference(reference_fit):
    for basis in reference_fit.bases_.values():
        for m in range(basis.n_basis):
            v = basis.vectors[:, m]
            assert v[np.argmax(np.abs(v))] > 0


def test_scaling_kappa(small_grid):
    k = random_channel_field(small_grid, 7)
    c = 4.0
    a = GMsFEM(4, 4).fit(k)
    b = GMsFEM(4, 4).fit(c * k)
    for j, basis in a.bases_.items():
        assert np.allclose(b.bases_[j].eigenvalues, basis.eigenvalues, rtol=1e-10)
        # s-normalization: s_i scales with c, so unit-s vectors scale by 1/sqrt(c)
        scaled = b.bases_[j].vectors * np.sqrt(c)
        assert np.max(np.abs(scaled - basis.vectors)) <= 1e-10 * np.max(np.abs(basis.vectors))


def test_local_matrix_shape_and_brute_force(reference_fit):
    est = reference_fit
    g = est.grid_
    labels, M = est.local_[55]
    assert M.shape == (8, 8) and np.array_equal(M, M.T)
    assert labels == [(j, m) for j in (60, 61, 71, 72) for m in (0, 1)]
    assert np.all(np.diag(M) >= 0)
    # independent oracle: element matrices cell by cell
    Kref = np.array([[4, -1, -1, -2], [-1, 4, -2, -1], [-1, -2, 4, -1], [-2, -1, -1, 4]]) / 6.0
    Phi = np.column_stack([est.bases_[j].fine_function(m, g.n_nodes) for j, m in labels])
    brute = np.zeros((8, 8))
    for c in g.block_cells(55):
        P = Phi[g.cell_nodes[c]]
        brute += est.kappa_[c] * P.T @ Kref @ P
    assert np.allclose(M, brute, rtol=1e-12, atol=1e-12 * np.abs(M).max())


def test_duplicate_basis_diagonal_is_energy(reference_fit):
    est = reference_fit
    labels, M = assemble_local_matrix(est.grid_, est.kappa_, 55, est.bases_, dofs=[(60, 0), (60, 0)])
    assert M[0, 0] == M[1, 1] == M[0, 1] and M[0, 0] >= 0


def test_missing_basis(reference_fit):
    with pytest.raises(KeyError):
        assemble_local_matrix(reference_fit.grid_, reference_fit.kappa_, 55, reference_fit.bases_,
                              dofs=[(0, 0)])


def test_coarse_model_dimensions_and_consistency(reference_fit):
    est = reference_fit
    f = np.ones(est.grid_.n_nodes)
    model = est.coarse_model(f)
    assert model.n_c == 162
    assert np.array_equal(model.A_c, model.A_c.T)
    A = assemble_stiffness(est.grid_, est.kappa_)
    RAR = (model.R.T @ (A @ model.R)).toarray()
    assert np.linalg.norm(model.A_c - RAR) / np.linalg.norm(model.A_c) <= 1e-10
    assert np.allclose(model.b_c, model.R.T @ load_vector(est.grid_, f), rtol=0, atol=0)
    labels = [d for d in model.dofs]
    assert labels == sorted(labels)


def test_zero_source(reference_fit):
    model = reference_fit.coarse_model(np.zeros(reference_fit.grid_.n_nodes))
    u_c, u = ms_solve(model)
    assert not model.b_c.any() and not u_c.any() and not u.any()


def test_galerkin_optimality(reference_fit):
    est = reference_fit
    f = np.ones(est.grid_.n_nodes)
    model = est.coarse_model(f)
    u_c, u = ms_solve(model)
    A = assemble_stiffness(est.grid_, est.kappa_)
    res = model.R.T @ (A @ u) - model.R.T @ load_vector(est.grid_, f)
    assert np.linalg.norm(res) <= 1e-9 * np.linalg.norm(model.b_c)


def test_singular_coarse_system():
    model = CoarseModel([(0, 0), (0, 1)], sp.csr_matrix((4, 2)), np.array([[1.0, 0.0], [0.0, -2.0]]),
                        np.ones(2), {})
    with pytest.raises(SingularCoarseSystemError) as info:
        ms_solve(model)
    assert info.value.smallest_eigenvalue == pytest.approx(-2.0)


def test_refit_matches_full_fit(grid, generator, reference_fit):
    k = generator.sample(-0.25, 1e3)
    ref = reference_fit.sign_reference()
    part = reference_fit.refit_blocks(k, [55], ref)
    full = GMsFEM().fit(k, sign_reference=ref)
    for j in full.bases_:
        assert np.array_equal(part.bases_[j].vectors, full.bases_[j].vectors)
    for b in full.local_:
        assert np.array_equal(part.local_[b][1], full.local_[b][1])
    assert np.array_equal(part.kappa_tilde_, full.kappa_tilde_)


def test_refit_rejects_exterior_change(grid, generator, reference_fit):
    k = generator.reference().copy()
    k[0] = 7.0
    with pytest.raises(ValueError):
        reference_fit.refit_blocks(k, [55])


def test_kappa_tilde_locality(grid, generator, reference_fit):
    k = generator.sample(0.4, 1e3)
    pou = build_pou(grid, k)
    kt = kappa_tilde(grid, k, pou)
    changed = np.flatnonzero(kt != reference_fit.kappa_tilde_)
    assert np.all(grid.cell_block[changed] == 55)


def test_constant_kappa_smooth_source_accuracy(grid):
    x, y = grid.node_coords.T
    f = 2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)
    k = np.ones(grid.n_cells)
    u_f = fine_solve(grid, k, f)
    M = unit_mass(grid)
    u = GMsFEM(n_basis=2).fit(k).solve(f)
    d = u - u_f
    assert np.sqrt(d @ M @ d / (u_f @ M @ u_f)) <= 0.05


def test_estimator_params():
    est = GMsFEM(n_basis=3, snapshots="randomized")
    c = clone(est)
    assert c.get_params()["n_basis"] == 3 and c.get_params()["snapshots"] == "randomized"
    with pytest.raises(ValueError):
        GMsFEM(nx_coarse=4, refine=4).fit(np.ones(3))
