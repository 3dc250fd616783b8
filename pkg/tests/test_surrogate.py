import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from gmsfem_dl.gmsfem import GMsFEM, ms_solve
from gmsfem_dl.io import FormatError
from gmsfem_dl.surrogate import (
    ArchPolicy,
    DatasetSplit,
    ExteriorMismatchError,
    GMsFEMSurrogate,
    NetworkBank,
    Normalization,
    OfflineData,
    OracleBank,
    TargetId,
    assemble_predicted,
    build_dataset,
    compute_offline,
    input_features,
    make_split,
    predict_model,
    predicted_solve,
    region_targets,
    source_vector,
    train_bank,
)

TINY = ArchPolicy(basis_hidden=2, basis_width=16, matrix_hidden=2, matrix_width=16, epochs=3, batch_size=8)


@pytest.fixture(scope="module")
def kappas(generator):
    return generator.generate()[:10]


@pytest.fixture(scope="module")
def offline(generator, region, kappas):
    return compute_offline(generator.reference(), kappas, region.k0)


@pytest.fixture(scope="module")
def data(grid, kappas, offline):
    return build_dataset(grid, kappas, offline, make_split(len(kappas), 8, 0))


@pytest.fixture(scope="module")
def bank(grid, region, data):
    return train_bank(grid, region, data, TINY, seed=3)


@pytest.mark.parametrize("n_total,n_train", [(2000, 1980), (2500, 2475)])
def test_split_sizes(n_total, n_train):
    s = make_split(n_total, n_train, 7)
    assert s.train.size == n_train and s.test.size == n_total - n_train
    assert np.intersect1d(s.train, s.test).size == 0
    assert np.array_equal(np.union1d(s.train, s.test), np.arange(n_total))
    t = make_split(n_total, n_train, 7)
    assert np.array_equal(s.test, t.test)
    assert not np.array_equal(s.test, make_split(n_total, n_train, 8).test)


def test_split_rejects_overlap():
    with pytest.raises(ValueError):
        DatasetSplit(np.array([0, 1]), np.array([1, 2]), 0)


@given(arrays(np.float64, (6, 4), elements=st.floats(-1e3, 1e3)))
@settings(max_examples=60)
def test_normalization_round_trip(V):
    norm = Normalization.fit(V)
    back = norm.inverse(norm.transform(V))
    assert np.allclose(back, V, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(V).max()))
    flat = np.ptp(V, axis=0) == 0
    assert np.all(norm.flagged[flat]) and np.all(norm.scale[norm.flagged] == 1.0)
    again = Normalization.from_json(norm.to_json())
    assert np.array_equal(again.mean, norm.mean) and np.array_equal(again.scale, norm.scale)


def test_standardized_training_inputs(data):
    Xtr = data.X[data.split.train]
    assert np.allclose(Xtr.mean(axis=0), 0, atol=1e-12)
    ok = ~data.x_norm.flagged
    assert np.allclose(Xtr[:, ok].std(axis=0), 1, atol=1e-12)


def test_input_features_are_log_patch(grid, region, kappas):
    X = input_features(grid, kappas, region.k0)
    assert X.shape == (len(kappas), grid.refine ** 2)
    assert np.array_equal(X[0], np.log10(kappas[0][grid.block_cells(region.k0)]))


def test_target_inventory(region):
    targets = region_targets(region, 2)
    assert len(targets) == 17
    assert sum(t.kind == "basis" for t in targets) == 8
    assert [TargetId.parse(str(t)) for t in targets] == targets


def test_target_shapes(offline, kappas):
    for t, v in offline.values.items():
        assert v.shape == (len(kappas), 441 if t.kind == "basis" else 36)


def test_default_architectures(grid, region):
    rs = np.random.default_rng(0)
    X = rs.normal(size=(4, 100))
    pol = dataclasses.replace(ArchPolicy(), epochs=1)
    b, m = region_targets(region, 2)[0], region_targets(region, 2)[-1]
    assert b.kind == "basis" and m.kind == "matrix"
    nb = pol.regressor(b, 0).fit(X, rs.normal(size=(4, 441))).net_
    nm = pol.regressor(m, 0).fit(X, rs.normal(size=(4, 36))).net_
    assert nb.sizes == (100,) + (256,) * 10 + (441,)
    assert nm.sizes == (100,) + (128,) * 10 + (36,)
    assert (nb.activation, nm.activation) == ("leaky_relu", "relu")


def test_zero_network_predicts_training_mean(bank, data, offline, kappas):
    zeroed = dataclasses.replace(bank, nets={})
    for t, net in bank.nets.items():
        w = [np.zeros_like(a) for a in net.weights]
        zeroed.nets[t] = dataclasses.replace(net, weights=w, biases=[np.zeros_like(a) for a in net.biases])
    pred = zeroed.predict_targets(kappas[:3])
    for t in bank.targets:
        mean = offline.values[t][data.split.train].mean(axis=0)
        assert np.allclose(pred[t], mean[None, :], rtol=1e-12, atol=1e-12 * np.abs(mean).max())


def test_per_target_seeds_differ(bank):
    assert len(set(bank.seeds.values())) == len(bank.targets)


def test_predicted_model_provenance(bank, offline, kappas):
    ext = offline.exterior
    model = predict_model(bank, kappas[0], ext)
    assert np.array_equal(model.A_c, model.A_c.T)
    touched = set(ext.region.affected_blocks)
    for b, (labels, M) in model.local.items():
        assert model.provenance[("block", b)] == ("predicted" if b in touched else "exact")
        if b not in touched:
            assert np.array_equal(M, ext.local[b][1]) and labels == ext.local[b][0]
    for j in ext.bases:
        expect = "predicted" if j in ext.region.affected_nodes else "exact"
        assert model.provenance[("basis", j)] == expect


def test_exterior_mismatch(bank, offline, kappas):
    ext = offline.exterior
    bad = kappas[0].copy()
    outside = np.setdiff1d(np.arange(ext.grid.n_cells), ext.grid.block_cells(ext.region.k0))
    bad[outside[0]] *= 2
    with pytest.raises(ExteriorMismatchError):
        predict_model(bank, bad, ext)
    with pytest.warns(UserWarning):
        predict_model(bank, bad, ext, override=True)


def test_zero_source_gives_zero_solution(offline, kappas):
    ext = offline.exterior
    oracle = OracleBank(offline, kappas)
    model = predict_model(oracle, kappas[1], ext, np.zeros(ext.grid.n_nodes))
    u_c, u = predicted_solve(model)
    assert not np.any(u_c) and not np.any(u)


@pytest.mark.parametrize("k", [0, 4, 9])
def test_oracle_matches_direct_gmsfem(offline, kappas, reference_fit, k):
    ext = offline.exterior
    f = source_vector(ext.grid)
    _, u = predicted_solve(predict_model(OracleBank(offline, kappas), kappas[k], ext, f))
    direct = GMsFEM().fit(kappas[k], sign_reference=reference_fit.sign_reference())
    _, u_ref = ms_solve(direct.coarse_model(f))
    assert np.linalg.norm(u - u_ref) <= 1e-10 * np.linalg.norm(u_ref)


def test_oracle_rejects_unknown_field(offline, kappas):
    with pytest.raises(KeyError):
        OracleBank(offline, kappas).predict_targets(kappas[0] * 1.5)


def test_assemble_without_values_is_exterior(offline, reference_fit):
    f = source_vector(offline.exterior.grid)
    model = assemble_predicted(offline.exterior, {}, f)
    ref = reference_fit.coarse_model(f)
    assert np.array_equal(model.A_c, ref.A_c) and np.array_equal(model.b_c, ref.b_c)


def test_offline_save_load(offline, tmp_path):
    offline.save(tmp_path / "off")
    back = OfflineData.load(tmp_path / "off")
    assert back.targets == offline.targets
    for t in offline.targets:
        assert np.array_equal(back.values[t], offline.values[t])
    assert np.array_equal(back.exterior.kappa, offline.exterior.kappa)


def test_bank_save_load(bank, kappas, tmp_path):
    man = bank.save(tmp_path / "bank")
    assert not man["partial"] and all(len(e["sha256"]) == 64 for e in man["targets"])
    back = NetworkBank.load(tmp_path / "bank")
    p, q = bank.predict_targets(kappas), back.predict_targets(kappas)
    assert all(np.array_equal(p[t], q[t]) for t in bank.targets)
    victim = tmp_path / "bank" / man["targets"][0]["archive"]
    raw = bytearray(victim.read_bytes())
    raw[-1] ^= 1
    victim.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        NetworkBank.load(tmp_path / "bank")


def test_training_is_deterministic(grid, region, data, bank):
    again = train_bank(grid, region, data, TINY, seed=3)
    assert all(again.nets[t].checksum() == bank.nets[t].checksum() for t in bank.targets)


def test_partial_bank_on_divergence(grid, region, data, kappas, tmp_path):
    blown = dataclasses.replace(data, X=data.X * 1e200)
    some = region_targets(region, 2)[:2]
    bank = train_bank(grid, region, blown, TINY, seed=0, targets=some)
    assert bank.partial and set(bank.failed) == set(some)
    with pytest.raises(RuntimeError):
        bank.predict_targets(kappas[:1])
    man = bank.save(tmp_path / "bank")
    assert man["partial"]
    assert NetworkBank.load(tmp_path / "bank").partial


def test_surrogate_estimator(kappas):
    est = GMsFEMSurrogate(policy=dataclasses.replace(TINY, epochs=400, basis_lr=1e-2, matrix_lr=1e-1),
                          random_state=1)
    params = est.get_params()
    assert params["k0"] == 55 and clone(est).get_params() == params
    est.fit(kappas[:6], reference=kappas[0])
    U = est.predict(kappas[:2])
    assert U.shape == (2, 101 * 101) and np.all(np.isfinite(U))
    assert est.bank_.split.test.size == 0


def test_constant_components_are_pinned(bank, offline, data, kappas):
    pred = bank.predict_targets(kappas)
    for t in bank.targets:
        train = offline.values[t][data.split.train]
        const = np.ptp(train, axis=0) == 0
        # the fitted mean of identical values is exact up to summation rounding
        c = train[0, const]
        assert np.all(np.abs(pred[t][:, const] - c) <= 8 * np.finfo(float).eps * np.abs(c))
