"""Structured coarse/fine grids on the unit square.

Numbering is lexicographic with x fastest everywhere:

* fine node ``(ix, iy)``   -> ``iy * (N + 1) + ix`` with ``N = nx_coarse * refine``
* fine cell ``(cx, cy)``   -> ``cy * N + cx``
* coarse block ``(bx, by)`` -> ``by * nx_coarse + bx``
* coarse node ``(jx, jy)`` -> ``jy * (nx_coarse + 1) + jx``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class GridSpec:
    nx_coarse: int = 10
    refine: int = 10

    def __post_init__(self):
        if int(self.nx_coarse) < 2:
            raise ValueError(f"nx_coarse must be >= 2, got {self.nx_coarse}")
        if int(self.refine) < 2:
            raise ValueError(f"refine must be >= 2, got {self.refine}")


@dataclass(frozen=True)
class CoarseNeighborhood:
    node_id: int
    block_ids: tuple
    fine_nodes: np.ndarray = field(repr=False)
    boundary_fine_nodes: np.ndarray = field(repr=False)

    @property
    def interior_fine_nodes(self) -> np.ndarray:
        return np.setdiff1d(self.fine_nodes, self.boundary_fine_nodes, assume_unique=True)


@dataclass(frozen=True)
class TargetRegion:
    k0: int
    affected_nodes: tuple
    affected_neighborhoods: tuple = field(repr=False)
    affected_blocks: tuple

    def describe(self) -> dict:
        return {
            "k0": int(self.k0),
            "affected_nodes": [int(n) for n in self.affected_nodes],
            "affected_blocks": [int(b) for b in self.affected_blocks],
        }


class Grid:
    """Immutable two-level structured grid over (0, 1)^2."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.nxc = int(spec.nx_coarse)
        self.refine = int(spec.refine)
        self.n = self.nxc * self.refine
        self.h = 1.0 / self.n
        self.H = 1.0 / self.nxc

    def __repr__(self):
        return f"Grid(nx_coarse={self.nxc}, refine={self.refine})"

    # sizes
    @property
    def n_cells(self) -> int:
        return self.n * self.n

    @property
    def n_nodes(self) -> int:
        return (self.n + 1) ** 2

    @property
    def n_blocks(self) -> int:
        return self.nxc * self.nxc

    @property
    def n_coarse_nodes(self) -> int:
        return (self.nxc + 1) ** 2

    # index helpers
    def node_index(self, ix, iy):
        return np.asarray(iy) * (self.n + 1) + np.asarray(ix)

    def block_index(self, bx, by) -> int:
        return int(by) * self.nxc + int(bx)

    def block_coords(self, b: int) -> tuple:
        self._check_block(b)
        return int(b) % self.nxc, int(b) // self.nxc

    def coarse_node_coords(self, j: int) -> tuple:
        self._check_coarse_node(j)
        return int(j) % (self.nxc + 1), int(j) // (self.nxc + 1)

    def coarse_node_index(self, jx, jy) -> int:
        return int(jy) * (self.nxc + 1) + int(jx)

    def coarse_node_fine_index(self, j: int) -> int:
        jx, jy = self.coarse_node_coords(j)
        return int(self.node_index(jx * self.refine, jy * self.refine))

    def _check_block(self, b):
        if not 0 <= int(b) < self.n_blocks:
            raise IndexError(f"block id {b} out of range [0, {self.n_blocks})")

    def _check_coarse_node(self, j):
        if not 0 <= int(j) < self.n_coarse_nodes:
            raise IndexError(f"coarse node id {j} out of range [0, {self.n_coarse_nodes})")

    @cached_property
    def node_coords(self) -> np.ndarray:
        t = np.linspace(0.0, 1.0, self.n + 1)
        X, Y = np.meshgrid(t, t)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        """(n_cells, 4) node ids ordered (0,0), (1,0), (0,1), (1,1)."""
        cx, cy = np.meshgrid(np.arange(self.n), np.arange(self.n))
        n00 = self.node_index(cx.ravel(), cy.ravel())
        s = self.n + 1
        return np.column_stack([n00, n00 + 1, n00 + s, n00 + s + 1])

    @cached_property
    def cell_block(self) -> np.ndarray:
        cx, cy = np.meshgrid(np.arange(self.n), np.arange(self.n))
        return (cy.ravel() // self.refine) * self.nxc + cx.ravel() // self.refine

    def block_cells(self, b: int) -> np.ndarray:
        bx, by = self.block_coords(b)
        r = self.refine
        cx, cy = np.meshgrid(np.arange(bx * r, (bx + 1) * r), np.arange(by * r, (by + 1) * r))
        return (cy * self.n + cx).ravel()

    def block_nodes(self, b: int) -> np.ndarray:
        """Fine nodes of the closed block, row-major (x fastest)."""
        bx, by = self.block_coords(b)
        r = self.refine
        ix, iy = np.meshgrid(np.arange(bx * r, (bx + 1) * r + 1), np.arange(by * r, (by + 1) * r + 1))
        return self.node_index(ix, iy).ravel()

    def block_corner_nodes(self, b: int) -> tuple:
        """Coarse node ids at the corners (0,0), (1,0), (0,1), (1,1)."""
        bx, by = self.block_coords(b)
        c = self.coarse_node_index
        return (c(bx, by), c(bx + 1, by), c(bx, by + 1), c(bx + 1, by + 1))

    def rect_nodes(self, ix0, ix1, iy0, iy1):
        """Fine nodes of an index rectangle, and those on its boundary."""
        ix, iy = np.meshgrid(np.arange(ix0, ix1 + 1), np.arange(iy0, iy1 + 1))
        nodes = self.node_index(ix, iy).ravel()
        on_bnd = ((ix == ix0) | (ix == ix1) | (iy == iy0) | (iy == iy1)).ravel()
        return nodes, nodes[on_bnd]

    def boundary_nodes(self, sides=SIDES) -> np.ndarray:
        """Fine nodes on the given sides of the unit square."""
        ix, iy = np.meshgrid(np.arange(self.n + 1), np.arange(self.n + 1))
        ix, iy = ix.ravel(), iy.ravel()
        mask = np.zeros(ix.shape, dtype=bool)
        sides = set(sides)
        _check_sides(sides)
        if "left" in sides:
            mask |= ix == 0
        if "right" in sides:
            mask |= ix == self.n
        if "bottom" in sides:
            mask |= iy == 0
        if "top" in sides:
            mask |= iy == self.n
        return np.flatnonzero(mask)

    def coarse_node_on_sides(self, j: int, sides=SIDES) -> bool:
        jx, jy = self.coarse_node_coords(j)
        sides = set(sides)
        return (
            ("left" in sides and jx == 0)
            or ("right" in sides and jx == self.nxc)
            or ("bottom" in sides and jy == 0)
            or ("top" in sides and jy == self.nxc)
        )

    def dof_nodes(self, sides=SIDES) -> list:
        """Coarse nodes carrying basis functions, ascending."""
        return [j for j in range(self.n_coarse_nodes) if not self.coarse_node_on_sides(j, sides)]


def _check_sides(sides):
    bad = set(sides) - set(SIDES)
    if bad:
        raise ValueError(f"unknown boundary sides {sorted(bad)}")


def build_grid(spec: GridSpec) -> Grid:
    return Grid(spec)


def neighborhood(grid: Grid, node_id: int) -> CoarseNeighborhood:
    jx, jy = grid.coarse_node_coords(node_id)
    bxs = [bx for bx in (jx - 1, jx) if 0 <= bx < grid.nxc]
    bys = [by for by in (jy - 1, jy) if 0 <= by < grid.nxc]
    blocks = tuple(grid.block_index(bx, by) for by in bys for bx in bxs)
    r = grid.refine
    nodes, bnd = grid.rect_nodes(bxs[0] * r, (bxs[-1] + 1) * r, bys[0] * r, (bys[-1] + 1) * r)
    return CoarseNeighborhood(int(node_id), blocks, np.sort(nodes), np.sort(bnd))


def target_region(grid: Grid, k0: int, bc=SIDES) -> TargetRegion:
    """Coarse nodes, neighborhoods and blocks whose discretization depends on block ``k0``.

    Nodes on essential-boundary sides ``bc`` carry no degrees of freedom and
    are excluded.  ``affected_blocks`` lists ``k0`` first, the rest ascending.
    """
    grid._check_block(k0)
    _check_sides(bc)
    corners = sorted(grid.block_corner_nodes(k0))
    nodes = tuple(j for j in corners if not grid.coarse_node_on_sides(j, bc))
    hoods = tuple(neighborhood(grid, j) for j in nodes)
    others = sorted({b for w in hoods for b in w.block_ids} - {int(k0)})
    blocks = (int(k0),) + tuple(others) if nodes else ()
    return TargetRegion(int(k0), nodes, hoods, blocks)
