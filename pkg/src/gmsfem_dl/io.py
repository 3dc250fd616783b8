"""Binary containers, network archives and run configuration files.

Formats (all little-endian):

``MSPERM01`` ensemble
    8-byte magic, u32 nx_coarse, u32 refine, u32 n_samples, then every
    sample's per-cell float64 values in row-major cell order.
``MSARR001`` array
    8-byte magic, u32 rank, ``rank`` u32 dims, float64 data in C order.
``MSNET001`` network
    8-byte magic, u32 header length, UTF-8 JSON header (layer sizes,
    activation, slope, training config, seed), then float64 parameters
    in layer order ``W_1, b_1, W_2, b_2, ...`` with ``W_l`` row-major.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .mesh import GridSpec
from .neural import Mlp, TrainConfig
from .permeability import EnsembleConfig

ENSEMBLE_MAGIC = b"MSPERM01"
ARRAY_MAGIC = b"MSARR001"
NETWORK_MAGIC = b"MSNET001"


class FormatError(ValueError):
    pass


def _read_magic(buf: bytes, magic: bytes):
    if buf[:8] != magic:
        raise FormatError(f"bad magic {buf[:8]!r}, expected {magic!r}")


def write_ensemble(path, spec: GridSpec, kappas) -> None:
    kappas = np.asarray(kappas, dtype="<f8")
    n_cells = (spec.nx_coarse * spec.refine) ** 2
    if kappas.ndim != 2 or kappas.shape[1] != n_cells:
        raise ValueError(f"ensemble must have shape (n, {n_cells})")
    with open(path, "wb") as fh:
        fh.write(ENSEMBLE_MAGIC)
        fh.write(struct.pack("<3I", spec.nx_coarse, spec.refine, kappas.shape[0]))
        fh.write(np.ascontiguousarray(kappas).tobytes())


def read_ensemble(path):
    """Return ``(GridSpec, kappas)``."""
    buf = Path(path).read_bytes()
    _read_magic(buf, ENSEMBLE_MAGIC)
    nx, r, n = struct.unpack_from("<3I", buf, 8)
    n_cells = (nx * r) ** 2
    data = np.frombuffer(buf, dtype="<f8", offset=20)
    if data.size != n * n_cells:
        raise FormatError("ensemble payload size does not match its header")
    return GridSpec(nx, r), data.reshape(n, n_cells).astype(np.float64)


def write_array(path, arr) -> None:
    arr = np.asarray(arr, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(ARRAY_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_array(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    _read_magic(buf, ARRAY_MAGIC)
    (rank,) = struct.unpack_from("<I", buf, 8)
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    data = np.frombuffer(buf, dtype="<f8", offset=12 + 4 * rank)
    if data.size != int(np.prod(dims)):
        raise FormatError("array payload size does not match its header")
    return data.reshape(dims).astype(np.float64)


def write_network(path, net: Mlp, train_cfg: TrainConfig | None = None, seed: int = 0) -> None:
    header = {
        "sizes": list(net.sizes),
        "activation": net.activation,
        "alpha": net.alpha,
        "output_activation": "identity",
        "train": asdict(train_cfg) if train_cfg is not None else None,
        "seed": int(seed),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(NETWORK_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        for p in net.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def read_network(path):
    """Return ``(Mlp, header)``."""
    buf = Path(path).read_bytes()
    _read_magic(buf, NETWORK_MAGIC)
    (hl,) = struct.unpack_from("<I", buf, 8)
    header = json.loads(buf[12:12 + hl].decode())
    data = np.frombuffer(buf, dtype="<f8", offset=12 + hl).astype(np.float64)
    sizes = header["sizes"]
    weights, biases, off = [], [], 0
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        weights.append(data[off:off + d_in * d_out].reshape(d_out, d_in).copy())
        off += d_in * d_out
        biases.append(data[off:off + d_out].copy())
        off += d_out
    if off != data.size:
        raise FormatError("network payload size does not match its header")
    return Mlp(weights, biases, header["activation"], header["alpha"]), header


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- run configuration


@dataclass
class RunConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    k0: tuple = (5, 5)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    n_basis: int = 2
    snapshots: str = "full"
    n_random: int = 20
    source: str = "constant"
    basis_hidden: int = 10
    basis_width: int = 256
    matrix_hidden: int = 10
    matrix_width: int = 128
    epochs: int = 500
    batch_size: int = 64
    basis_lr: float | None = None
    matrix_lr: float | None = None
    seed: int = 0

    def k0_block(self) -> int:
        bx, by = self.k0
        return int(by) * self.grid.nx_coarse + int(bx)


def _tuple(text, cast=float):
    return tuple(cast(t) for t in text.replace(",", " ").split())


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "default") else float(text)


def experiment_defaults(experiment: int, seed: int = 0) -> RunConfig:
    """Run configuration of experiment 1 (full snapshots) or 2 (randomized)."""
    if experiment == 1:
        ens = EnsembleConfig(experiment=1, n_total=2000, n_train=1980, seed=seed)
        return RunConfig(ensemble=ens, snapshots="full", seed=seed)
    if experiment == 2:
        ens = EnsembleConfig(experiment=2, n_total=2500, n_train=2475, seed=seed)
        return RunConfig(ensemble=ens, snapshots="randomized", seed=seed)
    raise ValueError("experiment must be 1 or 2")


_SCHEMA = {
    "grid": {"nx_coarse": int, "refine": int, "k0": lambda t: _tuple(t, int)},
    "ensemble": {
        "n_total": int, "n_train": int, "background": float, "channel_value": float,
        "value_lo": float, "value_hi": float, "configs": _tuple,
        "amplitude_range": _tuple, "width": int,
    },
    "gmsfem": {"n_basis": int, "snapshots": str, "n_random": int, "source": str},
    "train": {
        "basis_hidden": int, "basis_width": int, "matrix_hidden": int, "matrix_width": int,
        "epochs": int, "batch_size": int, "basis_lr": _opt_float, "matrix_lr": _opt_float,
    },
}


def parse_config(text: str, experiment: int | None = None, seed: int | None = None) -> RunConfig:
    """Parse ``key = value`` lines grouped under ``[section]`` headers.

    Sections: ``[run]`` (experiment, seed), ``[grid]``, ``[ensemble]``,
    ``[gmsfem]``, ``[train]``.  Unknown sections or keys are errors.
    Explicit ``experiment``/``seed`` arguments override the file.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(text)
    run = dict(cp["run"]) if cp.has_section("run") else {}
    unknown = set(run) - {"experiment", "seed"}
    if unknown:
        raise ValueError(f"unknown keys in [run]: {sorted(unknown)}")
    exp = int(experiment if experiment is not None else run.get("experiment", 1))
    sd = int(seed if seed is not None else run.get("seed", 0))
    cfg = experiment_defaults(exp, sd)
    grid_kw, ens_kw = {}, {}
    for section in cp.sections():
        if section == "run":
            continue
        if section not in _SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in cp[section].items():
            if key not in _SCHEMA[section]:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            value = _SCHEMA[section][key](raw)
            if section == "grid" and key != "k0":
                grid_kw[key] = value
            elif section == "ensemble":
                ens_kw[key] = value
            else:
                setattr(cfg, key, value)
    if grid_kw:
        cfg.grid = GridSpec(**{**asdict(cfg.grid), **grid_kw})
    e = asdict(cfg.ensemble)
    e.update(ens_kw)
    e["seed"] = sd
    e["configs"] = tuple(e["configs"])
    e["amplitude_range"] = tuple(e["amplitude_range"])
    cfg.ensemble = EnsembleConfig(**e)
    if cfg.snapshots not in ("full", "randomized"):
        raise ValueError("snapshots must be 'full' or 'randomized'")
    if cfg.source not in ("constant", "sine"):
        raise ValueError("source must be 'constant' or 'sine'")
    return cfg


def load_config(path=None, experiment=None, seed=None) -> RunConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, experiment, seed)


def dump_config(cfg: RunConfig) -> str:
    e = cfg.ensemble
    fmt = lambda t: ", ".join(repr(v) for v in t)  # noqa: E731
    return "\n".join([
        "[run]",
        f"experiment = {e.experiment}",
        f"seed = {cfg.seed}",
        "",
        "[grid]",
        f"nx_coarse = {cfg.grid.nx_coarse}",
        f"refine = {cfg.grid.refine}",
        f"k0 = {cfg.k0[0]}, {cfg.k0[1]}",
        "",
        "[ensemble]",
        f"n_total = {e.n_total}",
        f"n_train = {e.n_train}",
        f"background = {e.background!r}",
        f"channel_value = {e.channel_value!r}",
        f"value_lo = {e.value_lo!r}",
        f"value_hi = {e.value_hi!r}",
        f"configs = {fmt(e.configs)}",
        f"amplitude_range = {fmt(e.amplitude_range)}",
        f"width = {e.width}",
        "",
        "[gmsfem]",
        f"n_basis = {cfg.n_basis}",
        f"snapshots = {cfg.snapshots}",
        f"n_random = {cfg.n_random}",
        f"source = {cfg.source}",
        "",
        "[train]",
        f"basis_hidden = {cfg.basis_hidden}",
        f"basis_width = {cfg.basis_width}",
        f"matrix_hidden = {cfg.matrix_hidden}",
        f"matrix_width = {cfg.matrix_width}",
        f"epochs = {cfg.epochs}",
        f"batch_size = {cfg.batch_size}",
        f"basis_lr = {cfg.basis_lr}",
        f"matrix_lr = {cfg.matrix_lr}",
        "",
    ])
