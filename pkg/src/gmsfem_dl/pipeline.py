"""End-to-end stages: ensemble, offline targets, datasets, bank, evaluation, report.

Every stage reads its inputs from and writes its outputs to one run
directory, so the command line can run them one at a time:

    ensemble.msperm      gen
    offline/             offline   exterior model + exact targets
    dataset/             dataset   standardized inputs/targets + split
    bank/                train     network archives + manifest
    eval/*.csv           eval      per-sample errors on the test split
    report.csv           report    mean tables in percent
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as msio
from .io import RunConfig
from .mesh import build_grid, target_region
from .metrics import ErrorReport, basis_error, matrix_error, solution_error
from .fem import assemble_stiffness
from .permeability import EnsembleGenerator
from .surrogate import (
    ArchPolicy,
    Datasets,
    NetworkBank,
    OfflineData,
    OracleBank,
    assemble_predicted,
    build_dataset,
    compute_offline,
    make_split,
    mirror,
    predicted_solve,
    source_vector,
    train_bank,
)

ENSEMBLE_FILE = "ensemble.msperm"
REPORT_TABLES = ("basis", "matrix", "solution")


def _grid_region(cfg: RunConfig):
    grid = build_grid(cfg.grid)
    return grid, target_region(grid, cfg.k0_block())


def policy_from(cfg: RunConfig) -> ArchPolicy:
    return ArchPolicy(basis_hidden=cfg.basis_hidden, basis_width=cfg.basis_width, basis_lr=cfg.basis_lr,
                      matrix_hidden=cfg.matrix_hidden, matrix_width=cfg.matrix_width,
                      matrix_lr=cfg.matrix_lr, epochs=cfg.epochs, batch_size=cfg.batch_size)


def generate(cfg: RunConfig):
    grid, region = _grid_region(cfg)
    gen = EnsembleGenerator(grid, region, cfg.ensemble)
    return gen, gen.generate()


def stage_gen(cfg: RunConfig, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _, kappas = generate(cfg)
    path = out / ENSEMBLE_FILE
    msio.write_ensemble(path, cfg.grid, kappas)
    return path


def load_ensemble(cfg: RunConfig, out) -> np.ndarray:
    spec, kappas = msio.read_ensemble(Path(out) / ENSEMBLE_FILE)
    if spec != cfg.grid:
        raise ValueError(f"ensemble grid {spec} does not match the configuration {cfg.grid}")
    return kappas


def run_offline(cfg: RunConfig, kappas, n_jobs=1) -> OfflineData:
    grid, region = _grid_region(cfg)
    gen = EnsembleGenerator(grid, region, cfg.ensemble)
    return compute_offline(gen.reference(), kappas, region.k0, cfg.grid, cfg.n_basis, cfg.snapshots,
                           cfg.n_random, cfg.seed, n_jobs=n_jobs)


def stage_offline(cfg: RunConfig, out, n_jobs=1) -> OfflineData:
    off = run_offline(cfg, load_ensemble(cfg, out), n_jobs)
    off.save(Path(out) / "offline")
    return off


def run_dataset(cfg: RunConfig, kappas, offline: OfflineData) -> Datasets:
    grid, _ = _grid_region(cfg)
    split = make_split(len(kappas), cfg.ensemble.n_train, cfg.seed)
    return build_dataset(grid, kappas, offline, split)


def stage_dataset(cfg: RunConfig, out) -> Datasets:
    out = Path(out)
    data = run_dataset(cfg, load_ensemble(cfg, out), OfflineData.load(out / "offline"))
    data.save(out / "dataset")
    return data


def run_train(cfg: RunConfig, data: Datasets, n_jobs=1) -> NetworkBank:
    grid, region = _grid_region(cfg)
    return train_bank(grid, region, data, policy_from(cfg), cfg.seed, n_jobs)


def stage_train(cfg: RunConfig, out, n_jobs=1) -> NetworkBank:
    out = Path(out)
    bank = run_train(cfg, Datasets.load(out / "dataset"), n_jobs)
    bank.save(out / "bank")
    return bank


def evaluate(bank, offline: OfflineData, kappas, test_ids, f_nodal) -> dict:
    """Per-sample basis, matrix and solution errors on ``test_ids``.

    Exact quantities come from the offline targets; the exact solution is
    assembled through the same path as the predicted one.
    """
    ext = offline.exterior
    grid = ext.grid
    test_ids = np.asarray(test_ids, dtype=np.int64)
    pred = bank.predict_targets(kappas[test_ids])
    basis_t = [t for t in offline.targets if t.kind == "basis"]
    matrix_t = [t for t in offline.targets if t.kind == "matrix"]
    reports = {
        "basis": ErrorReport([f"{t}_{m}" for t in basis_t for m in ("eL2", "eH1")]),
        "matrix": ErrorReport([f"{t}_{m}" for t in matrix_t for m in ("el2", "elinf", "eF")]),
        "solution": ErrorReport(["eL2", "ea"]),
    }
    for row, k in enumerate(test_ids):
        exact = offline.sample(k)
        guess = {t: v[row] for t, v in pred.items()}
        vals = []
        for t in basis_t:
            vals += basis_error(exact[t], guess[t], grid, nodes=ext.bases[t.node].nodes)
        reports["basis"].add(k, vals)
        vals = []
        for t in matrix_t:
            n = len(ext.local[t.block][0])
            vals += matrix_error(mirror(exact[t], n), mirror(guess[t], n))
        reports["matrix"].add(k, vals)
        u = predicted_solve(assemble_predicted(ext, exact, f_nodal))[1]
        u_pred = predicted_solve(assemble_predicted(ext, guess, f_nodal))[1]
        A = assemble_stiffness(grid, kappas[k])
        reports["solution"].add(k, solution_error(u, u_pred, kappas[k], grid, stiffness=A))
    return reports


def stage_eval(cfg: RunConfig, out, oracle=False) -> dict:
    out = Path(out)
    kappas = load_ensemble(cfg, out)
    offline = OfflineData.load(out / "offline")
    data = Datasets.load(out / "dataset")
    bank = OracleBank(offline, kappas) if oracle else NetworkBank.load(out / "bank")
    grid, _ = _grid_region(cfg)
    reports = evaluate(bank, offline, kappas, data.split.test, source_vector(grid, cfg.source))
    d = out / "eval"
    d.mkdir(exist_ok=True)
    for name, rep in reports.items():
        (d / f"{name}_errors.csv").write_text(rep.to_csv())
    return reports


def summary_rows(reports: dict) -> list:
    """``(table, quantity, metric, mean percent)`` rows of the mean tables."""
    rows = []
    for table in REPORT_TABLES:
        rep = reports[table]
        for col, mean in zip(rep.columns, rep.mean()):
            quantity, _, metric = col.rpartition("_")
            rows.append((table, quantity or "u_ms", metric, 100.0 * float(mean)))
    return rows


def report_csv(reports: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["table", "quantity", "metric", "mean_percent"])
    for table, quantity, metric, val in summary_rows(reports):
        w.writerow([table, quantity, metric, repr(val)])
    return buf.getvalue()


def stage_report(out) -> str:
    out = Path(out)
    reports = {t: ErrorReport.from_csv((out / "eval" / f"{t}_errors.csv").read_text())
               for t in REPORT_TABLES}
    text = report_csv(reports)
    (out / "report.csv").write_text(text)
    return text


@dataclass
class PipelineResult:
    kappas: np.ndarray
    offline: OfflineData
    data: Datasets
    bank: NetworkBank
    reports: dict


def run_pipeline(cfg: RunConfig, out=None, n_jobs=1) -> PipelineResult:
    """All stages in memory; with ``out`` every stage's files are written as well."""
    grid, _ = _grid_region(cfg)
    _, kappas = generate(cfg)
    offline = run_offline(cfg, kappas, n_jobs)
    data = run_dataset(cfg, kappas, offline)
    bank = run_train(cfg, data, n_jobs)
    reports = evaluate(bank, offline, kappas, data.split.test, source_vector(grid, cfg.source))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        msio.write_ensemble(out / ENSEMBLE_FILE, cfg.grid, kappas)
        offline.save(out / "offline")
        data.save(out / "dataset")
        bank.save(out / "bank")
        (out / "eval").mkdir(exist_ok=True)
        for name, rep in reports.items():
            (out / "eval" / f"{name}_errors.csv").write_text(rep.to_csv())
        (out / "report.csv").write_text(report_csv(reports))
    return PipelineResult(kappas, offline, data, bank, reports)
