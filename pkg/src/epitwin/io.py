"""Snapshot CSV files and the binary EPTW weight container."""
from __future__ import annotations

import csv
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .model import COMPARTMENTS, GROUPS, GridSpec, StateField

MAGIC = b"EPTW"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Base class for unreadable or mismatched checkpoints."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class TensorNameError(CheckpointError):
    pass


class SnapshotFormatError(ValueError):
    pass


# ---------------------------------------------------------------- snapshots

def snapshot_columns(grid: GridSpec) -> list[str]:
    xyz = grid.cell_xyz()
    suffix = (lambda x, y, z: f"_x{x}_y{y}") if grid.nz == 1 else (lambda x, y, z: f"_x{x}_y{y}_z{z}")
    return [f"{c}_{g}{suffix(*xyz[cell])}" for c in COMPARTMENTS for g in GROUPS
            for cell in range(grid.n_cells)]


def save_snapshots(series, path, grid: GridSpec) -> None:
    """One row per state: time then every (compartment, group, cell) value."""
    header = ["time", *snapshot_columns(grid)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in series:
            if s.fields.size != len(header) - 1:
                raise SnapshotFormatError(f"state has {s.fields.size} values, grid expects {len(header) - 1}")
            w.writerow([repr(float(s.t)), *map(repr, s.fields.reshape(-1).tolist())])


def load_snapshots(path, grid: GridSpec) -> list[StateField]:
    expected = ["time", *snapshot_columns(grid)]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SnapshotFormatError(f"{path}: empty file") from None
        if header != expected:
            if len(header) != len(expected):
                raise SnapshotFormatError(
                    f"{path}: header has {len(header)} columns, expected {len(expected)}")
            bad = next(i for i, (a, b) in enumerate(zip(header, expected)) if a != b)
            raise SnapshotFormatError(f"{path}: column {bad} is {header[bad]!r}, expected {expected[bad]!r}")
        out = []
        for line, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise SnapshotFormatError(f"{path}:{line}: row has {len(row)} values, expected {len(expected)}")
            values = np.array(row, dtype=float)
            out.append(StateField(values[1:].reshape(4, 2, grid.n_cells), float(values[0])))
    return out


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, tensors: dict[str, np.ndarray], kind: str, meta: dict | None = None) -> None:
    """Magic, version, JSON header, little-endian f8 payload, CRC32 of the payload."""
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    payload = b"".join(chunks)
    header = json.dumps({"kind": kind, "meta": meta or {}, "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_checkpoint(path, kind: str | None = None, names=None):
    """Return (tensors, header). Raises a distinct error for each failure mode."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an EPTW container")
    try:
        version, hlen = struct.unpack_from("<II", blob, 4)
        if version != FORMAT_VERSION:
            raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
        header = json.loads(blob[12:12 + hlen])
        (plen,) = struct.unpack_from("<Q", blob, 12 + hlen)
        start = 20 + hlen
        payload = blob[start:start + plen]
        (crc,) = struct.unpack_from("<I", blob, start + plen)
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt container ({exc})") from exc
    if len(payload) != plen or zlib.crc32(payload) != crc:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    if kind is not None and header["kind"] != kind:
        raise TensorNameError(f"{path}: holds a {header['kind']!r} checkpoint, expected {kind!r}")
    tensors = {}
    for e in header["tensors"]:
        a = np.frombuffer(payload, dtype="<f8", count=e["count"], offset=e["offset"])
        tensors[e["name"]] = a.reshape(e["shape"]).astype(np.float64)
    if names is not None and set(names) != set(tensors):
        missing = sorted(set(names) - set(tensors))
        extra = sorted(set(tensors) - set(names))
        raise TensorNameError(f"{path}: tensor names differ (missing {missing}, unexpected {extra})")
    return tensors, header


# ---------------------------------------------------------------- model packing

def module_arrays(module, prefix: str = "") -> dict[str, np.ndarray]:
    # integer buffers (batch counters) are stored as f8 and cast back on load
    return {prefix + k: v.detach().numpy().astype(np.float64) for k, v in module.state_dict().items()}


def load_module_arrays(module, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    import torch

    state = module.state_dict()
    for k, v in state.items():
        state[k] = torch.from_numpy(np.array(arrays[prefix + k])).to(v.dtype).reshape(v.shape)
    module.load_state_dict(state)


def expected_names(module, prefix: str = "") -> set[str]:
    return {prefix + k for k in module.state_dict()}


def save_basis(path, basis) -> None:
    arrays = {"basis": basis.basis, "singular_values": basis.singular_values,
              "col_mean": basis.col_mean, "norm_mean": basis.norm_mean, "norm_std": basis.norm_std,
              "total_energy": np.array([basis.total_energy])}
    save_checkpoint(path, arrays, "rom_basis",
                    {"normalization_mode": basis.normalization_mode, "basis_id": basis.basis_id})


def load_basis(path):
    from .rom import RomBasis

    t, h = load_checkpoint(path, "rom_basis",
                           ["basis", "singular_values", "col_mean", "norm_mean", "norm_std", "total_energy"])
    return RomBasis(t["basis"], t["singular_values"], float(t["total_energy"][0]), t["col_mean"],
                    t["norm_mean"], t["norm_std"], h["meta"]["normalization_mode"])


def _optim_arrays(store, prefix):
    return {prefix + k: v for k, v in store.state_arrays().items()} if store is not None else {}


def _load_optim(store, arrays, prefix):
    sub = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix + "optim.")}
    if sub:
        store.load_state_arrays(sub)


def save_bdlstm(path, trained) -> None:
    from .config import hyper_dict

    arrays = module_arrays(trained.model, "net.") | _optim_arrays(trained.store, "")
    meta = {"hyper": hyper_dict(trained.hyper), "m": trained.model.m,
            "n_train_windows": trained.n_train_windows,
            "train_loss": trained.train_loss, "test_loss": trained.test_loss}
    save_checkpoint(path, arrays, "bdlstm", meta)


def load_bdlstm(path):
    from .config import hyper_from
    from .lstm import BdlstmModel, LstmHyper, TrainedBdlstm
    from .nn import WeightStore

    arrays, header = load_checkpoint(path, "bdlstm")
    meta = header["meta"]
    hyper = hyper_from(LstmHyper, meta["hyper"])
    model = BdlstmModel(meta["m"], hyper.hidden_size, hyper.window, hyper.dropout)
    _check_names(path, arrays, expected_names(model, "net."))
    load_module_arrays(model, arrays, "net.")
    model.trained = True
    model.eval()
    store = WeightStore.from_module(model, hyper.seed)
    _load_optim(store, arrays, "")
    return TrainedBdlstm(model, store, hyper, meta["train_loss"], meta["test_loss"], meta["n_train_windows"])


def save_ffn(path, model, hyper) -> None:
    from .config import hyper_dict

    arrays = module_arrays(model.net, "net.") | _optim_arrays(model.store, "")
    meta = {"hyper": hyper_dict(hyper), "m": model.net.m,
            "train_loss": model.train_loss, "test_loss": model.test_loss}
    save_checkpoint(path, arrays, "ffn", meta)


def load_ffn(path):
    from .config import hyper_from
    from .nn import FFN, FfnHyper, FfnModel, WeightStore

    arrays, header = load_checkpoint(path, "ffn")
    meta = header["meta"]
    hyper = hyper_from(FfnHyper, meta["hyper"])
    net = FFN(hyper.window, meta["m"], hyper.hidden)
    _check_names(path, arrays, expected_names(net, "net."))
    load_module_arrays(net, arrays, "net.")
    net.eval()
    store = WeightStore.from_module(net, hyper.seed)
    _load_optim(store, arrays, "")
    return FfnModel(net, store, meta["train_loss"], meta["test_loss"]), hyper


def save_gan(path, model) -> None:
    from .config import hyper_dict

    arrays = (module_arrays(model.generator, "generator.")
              | module_arrays(model.discriminator, "discriminator.")
              | _optim_arrays(model.g_store, "g.") | _optim_arrays(model.d_store, "d.")
              | {"pc_mean": model.pc_mean, "pc_std": model.pc_std,
                 "train_lo": model.train_lo, "train_hi": model.train_hi})
    meta = {"hyper": hyper_dict(model.hyper), "m": int(model.pc_mean.size),
            "channels": model.generator.ch, "d_loss": model.d_loss, "g_loss": model.g_loss}
    save_checkpoint(path, arrays, "gan", meta)


def load_gan(path):
    from .config import hyper_from
    from .gan import GanHyper, GanModel, new_gan
    from .nn import WeightStore

    arrays, header = load_checkpoint(path, "gan")
    meta = header["meta"]
    hyper = hyper_from(GanHyper, meta["hyper"])
    shell = new_gan(np.zeros((2, meta["m"])), hyper, meta["channels"])
    G, D = shell.generator, shell.discriminator
    _check_names(path, arrays, expected_names(G, "generator.") | expected_names(D, "discriminator.")
                 | {"pc_mean", "pc_std", "train_lo", "train_hi"})
    load_module_arrays(G, arrays, "generator.")
    load_module_arrays(D, arrays, "discriminator.")
    G.eval()
    D.eval()
    g_store, d_store = WeightStore.from_module(G, hyper.seed), WeightStore.from_module(D, hyper.seed + 1)
    _load_optim(g_store, arrays, "g.")
    _load_optim(d_store, arrays, "d.")
    return GanModel(G, D, arrays["pc_mean"], arrays["pc_std"], arrays["train_lo"], arrays["train_hi"],
                    hyper, meta["d_loss"], meta["g_loss"], g_store, d_store)


def _check_names(path, arrays, needed: set[str]) -> None:
    missing = sorted(needed - set(arrays))
    if missing:
        raise TensorNameError(f"{path}: missing tensors {missing[:5]}{'...' if len(missing) > 5 else ''}")
