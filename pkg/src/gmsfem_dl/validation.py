"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np


def check_cell_field(grid, values, name="field", positive=True):
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size != grid.n_cells:
        raise ValueError(f"{name} has {values.size} values, grid has {grid.n_cells} cells")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains non-finite values")
    if positive and np.any(values <= 0):
        raise ValueError(f"{name} must be strictly positive")
    if not positive and np.any(values < 0):
        raise ValueError(f"{name} must be non-negative")
    return values


def check_permeability(grid, kappa):
    """Validate a per-cell permeability field and return it as a flat float array."""
    return check_cell_field(grid, kappa, name="permeability", positive=True)


def check_ensemble(grid, kappas):
    kappas = np.asarray(kappas, dtype=np.float64)
    if kappas.ndim == 1:
        kappas = kappas[None, :]
    if kappas.ndim != 2 or kappas.shape[1] != grid.n_cells:
        raise ValueError(f"expected ensemble of shape (n, {grid.n_cells}), got {kappas.shape}")
    if not np.all(np.isfinite(kappas)) or np.any(kappas <= 0):
        raise ValueError("permeability ensemble must be finite and positive")
    return kappas


def check_nodal(grid, values, name="nodal values"):
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != grid.n_nodes:
        raise ValueError(f"{name} must have {grid.n_nodes} rows, got {values.shape}")
    return values
