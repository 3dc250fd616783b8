"""Network surrogate of the GMsFEM discretization inside the target region.

The permeability patch of the target block ``K0`` is mapped by one network
per affected basis function and one per affected block matrix.  Predictions
replace the corresponding columns of ``R`` and local matrices of a
precomputed exterior model; everything else is copied unchanged.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.preprocessing import StandardScaler

from . import io as msio
from . import rng
from .fem import load_vector
from .gmsfem import GMsFEM, CoarseModel, dof_table, downscaling_operator, ms_solve, scatter_local
from .mesh import SIDES, Grid, GridSpec, TargetRegion, build_grid, neighborhood, target_region
from .neural import MLPRegressor, Mlp, TrainingDivergedError, forward
from .permeability import extract_patch
from .validation import check_ensemble, check_nodal, check_permeability


class ExteriorMismatchError(ValueError):
    pass


# ---------------------------------------------------------------- targets


@dataclass(frozen=True, order=True)
class TargetId:
    kind: str  # "basis" or "matrix"
    node: int = -1
    m: int = -1
    block: int = -1

    def __str__(self):
        if self.kind == "basis":
            return f"basis_n{self.node}_m{self.m}"
        return f"matrix_b{self.block}"

    @classmethod
    def parse(cls, text: str) -> "TargetId":
        if text.startswith("basis_n"):
            node, m = text[len("basis_n"):].split("_m")
            return cls("basis", node=int(node), m=int(m))
        if text.startswith("matrix_b"):
            return cls("matrix", block=int(text[len("matrix_b"):]))
        raise ValueError(f"bad target id {text!r}")


def region_targets(region: TargetRegion, n_basis: int) -> list:
    """Basis targets (node, m) for every affected node, then one matrix target per affected block."""
    basis = [TargetId("basis", node=j, m=m) for j in region.affected_nodes for m in range(n_basis)]
    return basis + [TargetId("matrix", block=b) for b in region.affected_blocks]


def upper(M) -> np.ndarray:
    return M[np.triu_indices(M.shape[0])]


def mirror(v, n: int) -> np.ndarray:
    """Symmetric matrix from its row-major upper triangle."""
    v = np.asarray(v, dtype=np.float64)
    if v.size != n * (n + 1) // 2:
        raise ValueError(f"upper triangle of a {n}x{n} matrix has {n * (n + 1) // 2} entries")
    M = np.zeros((n, n))
    M[np.triu_indices(n)] = v
    return np.triu(M) + np.triu(M, 1).T


def model_targets(est: GMsFEM, targets) -> dict:
    """Exact target vectors of one fitted discretization."""
    out = {}
    for t in targets:
        if t.kind == "basis":
            out[t] = est.bases_[t.node].vectors[:, t.m].copy()
        else:
            out[t] = upper(est.local_[t.block][1])
    return out


# ---------------------------------------------------------------- exterior model


@dataclass
class BasisVectors:
    node_id: int
    nodes: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)

    @property
    def n_basis(self) -> int:
        return self.vectors.shape[1]


@dataclass
class ExteriorModel:
    """Discretization of the reference field, reused outside the target region."""

    spec: GridSpec
    region: TargetRegion
    kappa: np.ndarray = field(repr=False)
    bases: dict = field(repr=False)
    local: dict = field(repr=False)
    bc: tuple = SIDES
    grid: Grid = field(default=None, repr=False)

    def __post_init__(self):
        if self.grid is None:
            self.grid = build_grid(self.spec)

    @classmethod
    def from_estimator(cls, est: GMsFEM, region: TargetRegion) -> "ExteriorModel":
        bases = {j: BasisVectors(j, b.nodes, b.vectors) for j, b in est.bases_.items()}
        return cls(GridSpec(est.nx_coarse, est.refine), region, est.kappa_, bases,
                   dict(est.local_), tuple(est.bc), est.grid_)

    @property
    def dofs(self) -> list:
        return dof_table(self.grid, self.bases, self.bc)

    def check_exterior(self, kappa, override=False):
        outside = np.ones(self.grid.n_cells, dtype=bool)
        outside[self.grid.block_cells(self.region.k0)] = False
        if not np.array_equal(kappa[outside], self.kappa[outside]):
            msg = "permeability differs from the exterior model outside the target block"
            if not override:
                raise ExteriorMismatchError(msg)
            warnings.warn(msg, stacklevel=3)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        dofs = self.dofs
        msio.write_array(d / "exterior_kappa.msarr", self.kappa)
        msio.write_array(d / "exterior_R.msarr", downscaling_operator(self.grid, self.bases, dofs).toarray())
        meta = {
            "nx_coarse": self.spec.nx_coarse,
            "refine": self.spec.refine,
            "bc": list(self.bc),
            "k0": self.region.k0,
            "dofs": [[int(j), int(m)] for j, m in dofs],
            "local": [
                {"block": int(b), "labels": [[int(j), int(m)] for j, m in lab], "matrix": M.tolist()}
                for b, (lab, M) in sorted(self.local.items())
            ],
        }
        (d / "exterior.json").write_text(json.dumps(meta))

    @classmethod
    def load(cls, directory) -> "ExteriorModel":
        d = Path(directory)
        meta = json.loads((d / "exterior.json").read_text())
        spec = GridSpec(meta["nx_coarse"], meta["refine"])
        grid = build_grid(spec)
        bc = tuple(meta["bc"])
        region = target_region(grid, meta["k0"], bc)
        R = msio.read_array(d / "exterior_R.msarr")
        cols = {}
        for k, (j, m) in enumerate(meta["dofs"]):
            cols.setdefault(j, []).append(k)
        bases = {}
        for j, ks in cols.items():
            nodes = neighborhood(grid, j).fine_nodes
            bases[j] = BasisVectors(j, nodes, R[np.ix_(nodes, ks)].copy())
        local = {
            e["block"]: ([tuple(x) for x in e["labels"]], np.array(e["matrix"], dtype=np.float64).reshape(
                len(e["labels"]), len(e["labels"])))
            for e in meta["local"]
        }
        kappa = msio.read_array(d / "exterior_kappa.msarr")
        return cls(spec, region, kappa, bases, local, bc, grid)


def source_vector(grid: Grid, kind="constant") -> np.ndarray:
    """Nodal source: ``1`` everywhere, or ``2 pi^2 sin(pi x) sin(pi y)``."""
    if kind == "constant":
        return np.ones(grid.n_nodes)
    if kind == "sine":
        x, y = grid.node_coords[:, 0], grid.node_coords[:, 1]
        return 2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)
    raise ValueError(f"unknown source {kind!r}")


# ---------------------------------------------------------------- offline stage


def _offline_chunk(ref: GMsFEM, kappas, k0, targets, sign_reference):
    rows = {t: [] for t in targets}
    for kappa in kappas:
        est = ref.refit_blocks(kappa, [k0], sign_reference=sign_reference)
        for t, v in model_targets(est, targets).items():
            rows[t].append(v)
    return {t: np.array(v) for t, v in rows.items()}


def _chunks(n, n_jobs):
    bounds = np.linspace(0, n, min(n, max(1, n_jobs)) + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


@dataclass
class OfflineData:
    exterior: ExteriorModel
    targets: list
    values: dict = field(repr=False)  # TargetId -> (n_samples, dim)

    @property
    def n_samples(self) -> int:
        return next(iter(self.values.values())).shape[0]

    def sample(self, k: int) -> dict:
        return {t: v[k] for t, v in self.values.items()}

    def save(self, directory) -> None:
        d = Path(directory)
        self.exterior.save(d)
        (d / "targets").mkdir(exist_ok=True)
        for t in self.targets:
            msio.write_array(d / "targets" / f"{t}.msarr", self.values[t])
        (d / "targets.json").write_text(json.dumps([str(t) for t in self.targets]))

    @classmethod
    def load(cls, directory) -> "OfflineData":
        d = Path(directory)
        exterior = ExteriorModel.load(d)
        targets = [TargetId.parse(s) for s in json.loads((d / "targets.json").read_text())]
        values = {t: msio.read_array(d / "targets" / f"{t}.msarr") for t in targets}
        return cls(exterior, targets, values)


def compute_offline(reference_kappa, kappas, k0, spec: GridSpec = GridSpec(), n_basis=2,
                    snapshots="full", n_random=20, seed=0, bc=SIDES, n_jobs=1) -> OfflineData:
    """Exact targets of every realization plus the exterior model of the reference field.

    Basis signs of every realization follow the reference field's bases.
    """
    ref = GMsFEM(spec.nx_coarse, spec.refine, n_basis, snapshots, n_random, seed, bc)
    ref.fit(reference_kappa)
    grid = ref.grid_
    kappas = check_ensemble(grid, kappas)
    region = target_region(grid, k0, bc)
    targets = region_targets(region, n_basis)
    sign_ref = ref.sign_reference()
    parts = _chunks(len(kappas), n_jobs)
    if len(parts) > 1:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_offline_chunk)(ref, kappas[s], k0, targets, sign_ref) for s in parts)
    else:
        results = [_offline_chunk(ref, kappas[s], k0, targets, sign_ref) for s in parts]
    values = {t: np.concatenate([r[t] for r in results]) for t in targets}
    return OfflineData(ExteriorModel.from_estimator(ref, region), targets, values)


# ---------------------------------------------------------------- datasets


@dataclass
class DatasetSplit:
    train: np.ndarray
    test: np.ndarray
    seed: int

    def __post_init__(self):
        if np.intersect1d(self.train, self.test).size:
            raise ValueError("train and test ids overlap")


def make_split(n_total: int, n_train: int, seed: int) -> DatasetSplit:
    if not 0 < n_train <= n_total:
        raise ValueError("need 0 < n_train <= n_total")
    perm = rng.permutation(rng.derive_seed(seed, 0x5B1), n_total)
    return DatasetSplit(np.sort(perm[:n_train]), np.sort(perm[n_train:]), int(seed))


@dataclass
class Normalization:
    """Per-component affine map ``z = (v - mean) / scale``."""

    mean: np.ndarray
    scale: np.ndarray
    flagged: np.ndarray  # zero-variance components left unscaled

    @classmethod
    def fit(cls, V) -> "Normalization":
        sc = StandardScaler().fit(V)
        return cls(sc.mean_.copy(), sc.scale_.copy(), sc.scale_ != np.sqrt(sc.var_))

    def transform(self, V):
        return (np.asarray(V, dtype=np.float64) - self.mean) / self.scale

    def inverse(self, Z):
        """Raw values; flagged components return their training constant."""
        V = np.asarray(Z, dtype=np.float64) * self.scale + self.mean
        V[..., self.flagged] = self.mean[self.flagged]
        return V

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "flagged": np.flatnonzero(self.flagged).tolist()}

    @classmethod
    def from_json(cls, d) -> "Normalization":
        mean = np.array(d["mean"], dtype=np.float64)
        flagged = np.zeros(mean.size, dtype=bool)
        flagged[d["flagged"]] = True
        return cls(mean, np.array(d["scale"], dtype=np.float64), flagged)


def input_features(grid: Grid, kappas, k0: int) -> np.ndarray:
    """Elementwise log10 of the ``K0`` patches, one row per realization."""
    return np.log10(extract_patch(grid, np.atleast_2d(kappas), k0))


@dataclass
class Datasets:
    """Standardized inputs and targets of all realizations and the shared split."""

    X: np.ndarray = field(repr=False)
    x_norm: Normalization = field(repr=False)
    Y: dict = field(repr=False)  # TargetId -> standardized (n, dim)
    y_norms: dict = field(repr=False)
    split: DatasetSplit = None
    targets: list = field(default_factory=list)

    def save(self, directory) -> None:
        d = Path(directory)
        (d / "Y").mkdir(parents=True, exist_ok=True)
        msio.write_array(d / "X.msarr", self.X)
        for t in self.targets:
            msio.write_array(d / "Y" / f"{t}.msarr", self.Y[t])
        meta = {
            "targets": [str(t) for t in self.targets],
            "input_transform": "log10 then per-pixel standardization",
            "input_norm": self.x_norm.to_json(),
            "output_norms": {str(t): self.y_norms[t].to_json() for t in self.targets},
            "split": {"seed": self.split.seed, "train": self.split.train.tolist(),
                      "test": self.split.test.tolist()},
        }
        (d / "dataset.json").write_text(json.dumps(meta, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "Datasets":
        d = Path(directory)
        meta = json.loads((d / "dataset.json").read_text())
        targets = [TargetId.parse(s) for s in meta["targets"]]
        sp = meta["split"]
        split = DatasetSplit(np.array(sp["train"], dtype=np.int64), np.array(sp["test"], dtype=np.int64),
                             sp["seed"])
        return cls(msio.read_array(d / "X.msarr"), Normalization.from_json(meta["input_norm"]),
                   {t: msio.read_array(d / "Y" / f"{t}.msarr") for t in targets},
                   {t: Normalization.from_json(meta["output_norms"][str(t)]) for t in targets},
                   split, targets)


def build_dataset(grid: Grid, kappas, offline: OfflineData, split: DatasetSplit) -> Datasets:
    kappas = check_ensemble(grid, kappas)
    if offline.n_samples != len(kappas):
        raise ValueError(f"offline results cover {offline.n_samples} of {len(kappas)} realizations")
    missing = [t for t in offline.targets if t not in offline.values]
    if missing:
        raise KeyError(f"missing offline results for {[str(t) for t in missing]}")
    raw = input_features(grid, kappas, offline.exterior.region.k0)
    x_norm = Normalization.fit(raw[split.train])
    Y, y_norms = {}, {}
    for t in offline.targets:
        y_norms[t] = Normalization.fit(offline.values[t][split.train])
        Y[t] = y_norms[t].transform(offline.values[t])
    return Datasets(x_norm.transform(raw), x_norm, Y, y_norms, split, list(offline.targets))


# ---------------------------------------------------------------- network bank


@dataclass(frozen=True)
class ArchPolicy:
    basis_hidden: int = 10
    basis_width: int = 256
    basis_activation: str = "leaky_relu"
    basis_optimizer: str = "adamax"
    basis_lr: float | None = None
    matrix_hidden: int = 10
    matrix_width: int = 128
    matrix_activation: str = "relu"
    matrix_optimizer: str = "adagrad_prox"
    matrix_lr: float | None = None
    alpha: float = 0.01
    epochs: int = 500
    batch_size: int = 64

    def regressor(self, target: TargetId, seed: int) -> MLPRegressor:
        k = target.kind
        hidden = getattr(self, f"{k}_hidden")
        width = getattr(self, f"{k}_width")
        return MLPRegressor((width,) * hidden, getattr(self, f"{k}_activation"), self.alpha,
                            getattr(self, f"{k}_optimizer"), getattr(self, f"{k}_lr"),
                            epochs=self.epochs, batch_size=self.batch_size, random_state=seed)


def _train_one(policy, target, seed, X, Y):
    reg = policy.regressor(target, seed)
    try:
        reg.fit(X, Y)
    except TrainingDivergedError as exc:
        return None, exc.report, str(exc)
    return reg, reg.loss_report_, None


@dataclass
class NetworkBank:
    """Per-target networks and the normalizations that wrap them."""

    region: TargetRegion
    grid: Grid = field(repr=False)
    targets: list = field(default_factory=list)
    nets: dict = field(default_factory=dict, repr=False)
    x_norm: Normalization = field(default=None, repr=False)
    y_norms: dict = field(default_factory=dict, repr=False)
    split: DatasetSplit = field(default=None, repr=False)
    seeds: dict = field(default_factory=dict)
    losses: dict = field(default_factory=dict, repr=False)
    failed: dict = field(default_factory=dict)
    policy: ArchPolicy = field(default_factory=ArchPolicy)

    @property
    def partial(self) -> bool:
        return bool(self.failed) or any(t not in self.nets for t in self.targets)

    def predict_targets(self, kappas) -> dict:
        """Raw-space target vectors for each realization (rows) of ``kappas``."""
        if self.partial:
            raise RuntimeError(f"bank is partial; failed targets: {sorted(map(str, self.failed))}")
        X = self.x_norm.transform(input_features(self.grid, kappas, self.region.k0))
        return {t: self.y_norms[t].inverse(forward(self.nets[t], X)) for t in self.targets}

    def save(self, directory) -> dict:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        entries = []
        for t in self.targets:
            entry = {"id": str(t), "seed": self.seeds.get(t), "output_norm": self.y_norms[t].to_json()}
            if t in self.nets:
                path = d / f"{t}.msnet"
                msio.write_network(path, self.nets[t], seed=self.seeds[t])
                entry["archive"] = path.name
                entry["sha256"] = msio.sha256_file(path)
                entry["final_loss"] = self.losses[t][-1]
            else:
                entry["failed"] = self.failed.get(t, "missing")
            entries.append(entry)
        manifest = {
            "nx_coarse": self.grid.nxc,
            "refine": self.grid.refine,
            "region": self.region.describe(),
            "input_transform": "log10 then per-pixel standardization",
            "input_norm": self.x_norm.to_json(),
            "split": {"seed": self.split.seed, "train": self.split.train.tolist(),
                      "test": self.split.test.tolist()},
            "policy": self.policy.__dict__,
            "partial": self.partial,
            "targets": entries,
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
        return manifest

    @classmethod
    def load(cls, directory, bc=SIDES) -> "NetworkBank":
        d = Path(directory)
        man = json.loads((d / "manifest.json").read_text())
        grid = build_grid(GridSpec(man["nx_coarse"], man["refine"]))
        region = target_region(grid, man["region"]["k0"], bc)
        sp = man["split"]
        bank = cls(region, grid, x_norm=Normalization.from_json(man["input_norm"]),
                   split=DatasetSplit(np.array(sp["train"], dtype=np.int64),
                                      np.array(sp["test"], dtype=np.int64), sp["seed"]),
                   policy=ArchPolicy(**man["policy"]))
        for e in man["targets"]:
            t = TargetId.parse(e["id"])
            bank.targets.append(t)
            bank.y_norms[t] = Normalization.from_json(e["output_norm"])
            bank.seeds[t] = e["seed"]
            if "archive" in e:
                path = d / e["archive"]
                if msio.sha256_file(path) != e["sha256"]:
                    raise msio.FormatError(f"checksum mismatch for {path.name}")
                bank.nets[t], _ = msio.read_network(path)
            else:
                bank.failed[t] = e["failed"]
        return bank


def train_bank(grid: Grid, region: TargetRegion, data: Datasets, policy: ArchPolicy = ArchPolicy(),
               seed: int = 0, n_jobs: int = 1, targets=None) -> NetworkBank:
    """Train one network per target on the training split.

    Target ``k`` (in region order) is trained with ``derive_seed(seed, k)``.
    Diverged targets are recorded and the bank is marked partial.
    """
    all_targets = list(data.targets)
    chosen = all_targets if targets is None else [t for t in all_targets if t in set(targets)]
    seeds = {t: rng.derive_seed(seed, all_targets.index(t)) for t in chosen}
    Xtr = data.X[data.split.train]
    jobs = [(t, seeds[t], data.Y[t][data.split.train]) for t in chosen]
    if n_jobs > 1:
        results = Parallel(n_jobs=n_jobs)(delayed(_train_one)(policy, t, s, Xtr, Y) for t, s, Y in jobs)
    else:
        results = [_train_one(policy, t, s, Xtr, Y) for t, s, Y in jobs]
    bank = NetworkBank(region, grid, list(chosen), x_norm=data.x_norm,
                       y_norms={t: data.y_norms[t] for t in chosen}, split=data.split,
                       seeds=seeds, policy=policy)
    for (t, _, _), (reg, report, err) in zip(jobs, results):
        bank.losses[t] = list(report.losses) if report is not None else []
        if reg is None:
            bank.failed[t] = err
        else:
            bank.nets[t] = reg.net_
    return bank


class OracleBank:
    """Stands in for a trained bank by returning the exact offline targets.

    Realizations are looked up bitwise in ``kappas``, the ensemble the
    offline data was computed for.
    """

    def __init__(self, offline: OfflineData, kappas=None):
        self.offline = offline
        self.targets = offline.targets
        self._kappas = None if kappas is None else np.atleast_2d(kappas)

    def predict_targets(self, kappas) -> dict:
        kappas = np.atleast_2d(kappas)
        idx = []
        for kappa in kappas:
            hits = np.flatnonzero(np.all(self._kappas == kappa, axis=1)) if self._kappas is not None else []
            if len(hits) == 0:
                raise KeyError("realization not in the oracle table")
            idx.append(hits[0])
        return {t: self.offline.values[t][idx] for t in self.targets}


# ---------------------------------------------------------------- predicted model


@dataclass
class PredictedModel(CoarseModel):
    provenance: dict = field(default_factory=dict)  # ("basis", j) / ("block", b) -> "exact" | "predicted"


def assemble_predicted(exterior: ExteriorModel, values: dict, f_nodal) -> PredictedModel:
    """Swap target values into the exterior model and assemble ``(R, A_c, b_c)``."""
    g = exterior.grid
    bases = dict(exterior.bases)
    local = dict(exterior.local)
    prov = {("basis", j): "exact" for j in bases}
    prov.update({("block", b): "exact" for b in local})
    cols = {}
    for t, v in values.items():
        if t.kind == "basis":
            cols.setdefault(t.node, {})[t.m] = np.asarray(v, dtype=np.float64)
    for j, by_m in cols.items():
        old = exterior.bases[j]
        vec = old.vectors.copy()
        for m, v in by_m.items():
            vec[:, m] = v
        bases[j] = BasisVectors(j, old.nodes, vec)
        prov[("basis", j)] = "predicted"
    for t, v in values.items():
        if t.kind == "matrix":
            labels = exterior.local[t.block][0]
            local[t.block] = (labels, mirror(v, len(labels)))
            prov[("block", t.block)] = "predicted"
    dofs = dof_table(g, bases, exterior.bc)
    R = downscaling_operator(g, bases, dofs)
    A_c = scatter_local(dofs, local)
    b_c = R.T @ load_vector(g, f_nodal)
    return PredictedModel(dofs, R, A_c, b_c, local, prov)


def predict_model(bank, kappa_new, exterior: ExteriorModel, f_nodal=None, override=False) -> PredictedModel:
    """Predicted reduced model of one realization.

    ``bank`` is anything with ``predict_targets(kappas) -> {TargetId: rows}``.
    The source defaults to ``f = 1``.
    """
    g = exterior.grid
    kappa_new = check_permeability(g, kappa_new)
    exterior.check_exterior(kappa_new, override)
    f_nodal = source_vector(g) if f_nodal is None else check_nodal(g, f_nodal, "source")
    values = {t: v[0] for t, v in bank.predict_targets(kappa_new[None, :]).items()}
    return assemble_predicted(exterior, values, f_nodal)


def predicted_solve(model: PredictedModel):
    """``(u_c, u_ms)``; raises ``SingularCoarseSystemError`` if ``A_c`` is not SPD."""
    return ms_solve(model)


# ---------------------------------------------------------------- estimator


class GMsFEMSurrogate(BaseEstimator):
    """Learns the map from the target-block permeability to the GMsFEM discretization.

    ``fit`` runs the offline stage on the given realizations and trains the
    network bank on all of them; ``predict`` returns predicted multiscale
    solutions.
    """

    def __init__(self, nx_coarse=10, refine=10, k0=55, n_basis=2, snapshots="full", n_random=20,
                 snapshot_seed=0, policy=None, source="constant", random_state=0, n_jobs=1):
        self.nx_coarse = nx_coarse
        self.refine = refine
        self.k0 = k0
        self.n_basis = n_basis
        self.snapshots = snapshots
        self.n_random = n_random
        self.snapshot_seed = snapshot_seed
        self.policy = policy
        self.source = source
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None, reference=None):
        spec = GridSpec(self.nx_coarse, self.refine)
        grid = build_grid(spec)
        X = check_ensemble(grid, X)
        reference = X[0] if reference is None else reference
        self.offline_ = compute_offline(reference, X, self.k0, spec, self.n_basis, self.snapshots,
                                        self.n_random, self.snapshot_seed, n_jobs=self.n_jobs)
        split = DatasetSplit(np.arange(len(X)), np.array([], dtype=np.int64), int(self.random_state))
        data = build_dataset(grid, X, self.offline_, split)
        self.exterior_ = self.offline_.exterior
        self.bank_ = train_bank(grid, self.exterior_.region, data, self.policy or ArchPolicy(),
                                self.random_state, self.n_jobs)
        return self

    def predict_model(self, kappa, f_nodal=None) -> PredictedModel:
        if f_nodal is None:
            f_nodal = source_vector(self.exterior_.grid, self.source)
        return predict_model(self.bank_, kappa, self.exterior_, f_nodal)

    def predict(self, X, f_nodal=None):
        X = np.atleast_2d(X)
        return np.stack([predicted_solve(self.predict_model(k, f_nodal))[1] for k in X])
