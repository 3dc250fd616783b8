"""Relative error measures and CSV error tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .fem import assemble_stiffness, unit_mass, unit_stiffness
from .mesh import Grid


class ZeroNormError(ZeroDivisionError):
    pass


def _ratio(num, den, what):
    if not den > 0:
        raise ZeroNormError(f"reference {what} norm is zero")
    return float(np.sqrt(max(num, 0.0) / den))


def _as_fine(grid: Grid, v, nodes):
    v = np.asarray(v, dtype=np.float64)
    if nodes is None:
        return v
    out = np.zeros(grid.n_nodes)
    out[nodes] = v
    return out


def basis_error(phi, phi_pred, grid: Grid, nodes=None):
    """Relative L2 and H1-seminorm errors ``(e_L2, e_H1)`` of a basis function.

    Vectors are full nodal vectors, or values on ``nodes`` when given.
    The H1 seminorm carries no coefficient and ignores constant shifts.
    """
    phi = _as_fine(grid, phi, nodes)
    d = phi - _as_fine(grid, phi_pred, nodes)
    M, K = unit_mass(grid), unit_stiffness(grid)
    return (
        _ratio(d @ (M @ d), phi @ (M @ phi), "L2"),
        _ratio(d @ (K @ d), phi @ (K @ phi), "H1"),
    )


def matrix_error(A, A_pred):
    """Relative ``(e_l2, e_linf, e_F)`` errors of a symmetric local matrix.

    The entrywise l2 and l-infinity norms act on the independent entries
    (upper triangle, the network output); Frobenius uses the whole matrix.
    """
    A = np.asarray(A, dtype=np.float64)
    A_pred = np.asarray(A_pred, dtype=np.float64)
    if A.shape != A_pred.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {A_pred.shape}")
    iu = np.triu_indices(A.shape[0])
    a, d = A[iu], (A - A_pred)[iu]
    if not np.any(A):
        raise ZeroNormError("reference matrix is zero")
    return (
        float(np.linalg.norm(d) / np.linalg.norm(a)),
        float(np.max(np.abs(d)) / np.max(np.abs(a))),
        float(np.linalg.norm(A - A_pred) / np.linalg.norm(A)),
    )


def solution_error(u, u_pred, kappa, grid: Grid, stiffness=None):
    """Relative L2 and energy errors ``(e_L2, e_a)``; the energy uses ``kappa``."""
    u = np.asarray(u, dtype=np.float64)
    d = u - np.asarray(u_pred, dtype=np.float64)
    M = unit_mass(grid)
    A = assemble_stiffness(grid, kappa) if stiffness is None else stiffness
    return (
        _ratio(d @ (M @ d), u @ (M @ u), "L2"),
        _ratio(d @ (A @ d), u @ (A @ u), "energy"),
    )


@dataclass
class ErrorReport:
    """Per-sample error rows with named columns and an arithmetic mean row."""

    columns: list
    labels: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def add(self, label, values):
        values = [float(v) for v in values]
        if len(values) != len(self.columns):
            raise ValueError("row length does not match columns")
        if any(v < 0 or not np.isfinite(v) for v in values):
            raise ValueError("error values must be finite and non-negative")
        self.labels.append(str(label))
        self.rows.append(values)

    def mean(self) -> np.ndarray:
        return np.mean(np.asarray(self.rows, dtype=np.float64), axis=0)

    def column(self, name) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample"] + list(self.columns))
        for label, row in zip(self.labels, self.rows):
            w.writerow([label] + [repr(v) for v in row])
        if self.rows:
            w.writerow(["mean"] + [repr(float(v)) for v in self.mean()])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ErrorReport":
        rows = list(csv.reader(io.StringIO(text)))
        rep = cls(rows[0][1:])
        for r in rows[1:]:
            if r[0] == "mean":
                continue
            rep.add(r[0], [float(v) for v in r[1:]])
        return rep

    def __eq__(self, other):
        return (
            isinstance(other, ErrorReport)
            and self.columns == other.columns
            and self.labels == other.labels
            and self.rows == other.rows
        )
