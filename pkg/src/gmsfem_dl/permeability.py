"""Channelized permeability ensembles with uncertainty confined to one block.

Every field has a fixed background, a straight channel crossing the whole
domain and a second channel that follows a sine bow between two fixed
points on the boundary of the target block ``k0`` and continues straight
outside it.  Only the cells of ``k0`` change from sample to sample.

Cell weights come from the Chebyshev (max-norm) distance ``d`` between a
cell center and the channel curve, measured in fine-cell widths:
``w = clip(width/2 + 1/2 - d, 0, 1)``.  A cell belongs to the channel mask
when ``d <= width/2``, which for ``width >= 1`` means the curve touches the
closed cell, so masks of continuous curves are 4-connected.  The soft
weight varies continuously with the channel geometry, so distinct bows
give distinct fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .mesh import Grid, TargetRegion
from .validation import check_permeability

_SAMPLES_PER_CELL = 64


@dataclass(frozen=True)
class ChannelSpec:
    kind: str
    start: tuple
    end: tuple
    amplitude: float = 0.0
    width: int = 1
    value: float = 1e3
    block_side: float = 0.1

    def __post_init__(self):
        if self.kind not in ("straight", "sine"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if int(self.width) < 1:
            raise ValueError("channel width must be >= 1 fine cell")
        if not self.value > 0:
            raise ValueError("channel value must be positive")
        if abs(self.amplitude) > 0.45:
            raise ValueError("sine amplitude must lie in [-0.45, 0.45]")
        if self.kind == "straight" and self.amplitude != 0:
            raise ValueError("straight channels have zero amplitude")

    def points(self, h: float) -> np.ndarray:
        """Dense samples of the curve, spacing well below ``h``."""
        p0 = np.asarray(self.start, dtype=np.float64)
        p1 = np.asarray(self.end, dtype=np.float64)
        chord = p1 - p0
        length = float(np.hypot(*chord))
        bow = abs(self.amplitude) * self.block_side
        n = int(np.ceil((length + 4 * bow) / h * _SAMPLES_PER_CELL)) + 1
        s = np.linspace(0.0, 1.0, n)
        pts = p0[None, :] + s[:, None] * chord[None, :]
        if self.kind == "sine" and self.amplitude != 0:
            normal = np.array([-chord[1], chord[0]]) / length
            pts = pts + (self.amplitude * self.block_side * np.sin(np.pi * s))[:, None] * normal[None, :]
        return pts


@dataclass(frozen=True)
class EnsembleConfig:
    experiment: int = 1
    n_total: int = 2000
    n_train: int = 1980
    seed: int = 0
    background: float = 1.0
    channel_value: float = 1e3
    value_lo: float = 1e2
    value_hi: float = 1e4
    configs: tuple = (-0.4, -0.2, 0.0, 0.2, 0.4)
    amplitude_range: tuple = (-0.4, 0.4)
    width: int = 1

    def __post_init__(self):
        if self.experiment not in (1, 2):
            raise ValueError("experiment must be 1 or 2")
        if self.n_total < 2:
            raise ValueError("n_total must be >= 2")
        if not 0 < self.n_train < self.n_total:
            raise ValueError("need 0 < n_train < n_total")
        if not self.background > 0:
            raise ValueError("background must be positive")
        if not self.value_lo < self.value_hi:
            raise ValueError("need value_lo < value_hi")
        if self.value_lo <= 0:
            raise ValueError("channel values must be positive")
        if self.experiment == 2 and len(self.configs) != 5:
            raise ValueError("experiment 2 uses 5 channel configurations")


def chebyshev_distance(grid: Grid, points: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Max-norm distance (in fine-cell widths) from cell centers to a point cloud."""
    n = grid.n
    cx = (cells % n + 0.5) * grid.h
    cy = (cells // n + 0.5) * grid.h
    out = np.full(cells.size, np.inf)
    chunk = max(1, 2_000_000 // max(points.shape[0], 1))
    for i in range(0, cells.size, chunk):
        sl = slice(i, i + chunk)
        dx = np.abs(cx[sl, None] - points[None, :, 0])
        dy = np.abs(cy[sl, None] - points[None, :, 1])
        out[sl] = np.min(np.maximum(dx, dy), axis=1)
    return out / grid.h


def _near_cells(grid: Grid, points: np.ndarray, margin: float, cells=None) -> np.ndarray:
    lo = points.min(axis=0) - margin * grid.h
    hi = points.max(axis=0) + margin * grid.h
    n = grid.n
    allc = np.arange(grid.n_cells) if cells is None else np.asarray(cells)
    cx = (allc % n + 0.5) * grid.h
    cy = (allc // n + 0.5) * grid.h
    keep = (cx >= lo[0]) & (cx <= hi[0]) & (cy >= lo[1]) & (cy <= hi[1])
    return allc[keep]


def channel_weight(grid: Grid, ch: ChannelSpec, cells=None) -> np.ndarray:
    """Soft channel coverage per fine cell (zero away from the curve)."""
    pts = ch.points(grid.h)
    half = int(ch.width) / 2.0
    near = _near_cells(grid, pts, half + 1.0, cells)
    w = np.zeros(grid.n_cells)
    d = chebyshev_distance(grid, pts, near)
    w[near] = np.clip(half + 0.5 - d, 0.0, 1.0)
    return w


def rasterize_channel(grid: Grid, ch: ChannelSpec, cells=None) -> np.ndarray:
    """Boolean fine-cell mask of cells within ``width/2`` (max-norm) of the curve."""
    pts = ch.points(grid.h)
    half = int(ch.width) / 2.0
    near = _near_cells(grid, pts, half + 1.0, cells)
    mask = np.zeros(grid.n_cells, dtype=bool)
    mask[near] = chebyshev_distance(grid, pts, near) <= half + 1e-12
    if not mask.any():
        raise ValueError("channel mask is empty")
    return mask


def extract_patch(grid: Grid, kappa, k0: int) -> np.ndarray:
    """Row-major values of the fine cells of block ``k0``."""
    kappa = np.asarray(kappa)
    return kappa[..., grid.block_cells(k0)].copy()


def insert_patch(grid: Grid, kappa, k0: int, patch) -> np.ndarray:
    out = np.array(kappa, dtype=np.float64, copy=True)
    out[..., grid.block_cells(k0)] = patch
    return out


@dataclass
class ChannelLayout:
    """Geometry of the two channels relative to the target block."""

    grid: Grid
    k0: int
    width: int = 1
    straight_offset: float = 0.25
    sine_offset: float = 0.55
    _k0_cells: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        bx, by = self.grid.block_coords(self.k0)
        H = self.grid.H
        self.x0, self.y0 = bx * H, by * H
        self._k0_cells = self.grid.block_cells(self.k0)

    def straight(self, value=1.0) -> ChannelSpec:
        x = self.x0 + self.straight_offset * self.grid.H
        return ChannelSpec("straight", (x, 0.0), (x, 1.0), width=self.width, value=value)

    def sine(self, amplitude, value=1.0) -> ChannelSpec:
        y = self.y0 + self.sine_offset * self.grid.H
        return ChannelSpec(
            "sine", (self.x0, y), (self.x0 + self.grid.H, y),
            amplitude=amplitude, width=self.width, value=value, block_side=self.grid.H,
        )

    def continuation(self) -> list:
        """Straight pieces of the bowed channel outside the target block."""
        y = self.y0 + self.sine_offset * self.grid.H
        H = self.grid.H
        pieces = []
        if self.x0 > 0:
            pieces.append(ChannelSpec("straight", (0.0, y), (self.x0, y), width=self.width))
        if self.x0 + H < 1.0:
            pieces.append(ChannelSpec("straight", (self.x0 + H, y), (1.0, y), width=self.width))
        return pieces

    def check_inside(self, amplitude):
        pts = self.sine(amplitude).points(self.grid.h)
        half = self.width / 2.0 * self.grid.h
        H = self.grid.H
        tol = 1e-12
        inside = (
            (pts[:, 1] >= self.y0 + half - tol) & (pts[:, 1] <= self.y0 + H - half + tol)
        )
        if not np.all(inside):
            raise ValueError(f"channel with amplitude {amplitude} leaves the target block")

    def weights(self, amplitude, cells=None) -> np.ndarray:
        specs = [self.straight(), self.sine(amplitude)] + self.continuation()
        return np.max([channel_weight(self.grid, s, cells) for s in specs], axis=0)


class EnsembleGenerator:
    """Draws permeability fields that differ only inside the target block."""

    def __init__(self, grid: Grid, region: TargetRegion, cfg: EnsembleConfig):
        self.grid = grid
        self.region = region
        self.cfg = cfg
        self.layout = ChannelLayout(grid, region.k0, width=cfg.width)
        self.k0_cells = grid.block_cells(region.k0)
        outside = np.ones(grid.n_cells, dtype=bool)
        outside[self.k0_cells] = False
        w0 = self.layout.weights(0.0)
        kappa = cfg.background + (cfg.channel_value - cfg.background) * w0
        # exterior is frozen at the zero-bow geometry
        self.exterior = kappa
        self._outside = outside

    def amplitudes(self) -> np.ndarray:
        cfg = self.cfg
        if cfg.experiment == 1:
            return np.linspace(cfg.amplitude_range[0], cfg.amplitude_range[1], cfg.n_total)
        return np.asarray(cfg.configs, dtype=np.float64)[self.config_labels()]

    def config_labels(self) -> np.ndarray:
        """Stratified configuration index per sample (experiment 2)."""
        labels = np.arange(self.cfg.n_total) % len(self.cfg.configs)
        perm = rng.permutation(rng.derive_seed(self.cfg.seed, 1), self.cfg.n_total)
        return labels[perm]

    def channel_values(self) -> np.ndarray:
        cfg = self.cfg
        if cfg.experiment == 1:
            return np.full(cfg.n_total, cfg.channel_value)
        u = rng.uniform(rng.derive_seed(cfg.seed, 2), cfg.n_total)
        lo, hi = np.log10(cfg.value_lo), np.log10(cfg.value_hi)
        return 10.0 ** (lo + u * (hi - lo))

    def sample(self, amplitude: float, value: float) -> np.ndarray:
        self.layout.check_inside(amplitude)
        w = self.layout.weights(amplitude, cells=self.k0_cells)[self.k0_cells]
        kappa = self.exterior.copy()
        kappa[self.k0_cells] = self.cfg.background + (value - self.cfg.background) * w
        return kappa

    def reference(self) -> np.ndarray:
        """Zero-bow field used to fix eigenvector signs."""
        return self.sample(0.0, self.cfg.channel_value)

    def generate(self) -> np.ndarray:
        amps = self.amplitudes()
        vals = self.channel_values()
        return np.stack([self.sample(a, v) for a, v in zip(amps, vals)])


def generate_ensemble(grid: Grid, region: TargetRegion, cfg: EnsembleConfig) -> np.ndarray:
    """(n_total, n_cells) array of permeability fields."""
    out = EnsembleGenerator(grid, region, cfg).generate()
    for k in out[:1]:
        check_permeability(grid, k)
    return out
