"""Snapshot matrices and the PCA basis linking full states to latent vectors."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .model import COMPARTMENTS, GROUPS, StateField

NORMALIZATION_MODES = ("compartment", "none")


@dataclass
class SnapshotMatrix:
    data: np.ndarray  # (levels, n_vars)
    stride: int
    steps: np.ndarray  # solver step index of each row
    var_layout: np.ndarray  # (n_vars, 3): compartment, group, cell

    @property
    def n_levels(self) -> int:
        return self.data.shape[0]

    def state(self, row: int, t: float = 0.0) -> StateField:
        return StateField(self.data[row].reshape(4, 2, -1).copy(), t)


def var_layout(n_cells: int) -> np.ndarray:
    c, g, cell = np.meshgrid(np.arange(4), np.arange(2), np.arange(n_cells), indexing="ij")
    return np.stack([c.ravel(), g.ravel(), cell.ravel()], axis=1)


def build_snapshots(series, stride: int = 10) -> SnapshotMatrix:
    """Sample a simulation every ``stride`` steps.

    ``series`` holds the initial state followed by one state per step (a
    list of StateField or an array of flattened states). Rows are taken at
    steps 0, stride, 2*stride, ... strictly before the final step count, so
    3880 steps at stride 10 give 388 levels.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if len(series) == 0:
        raise ValueError("empty series")
    if isinstance(series, np.ndarray):
        flat = series
    else:
        flat = np.stack([s.fields.reshape(-1) for s in series])
    n_steps = flat.shape[0] - 1
    steps = np.arange(0, n_steps, stride)
    if steps.size == 0:
        raise ValueError("series has no time steps to sample")
    if flat.shape[1] % 8:
        raise ValueError("state length must be a multiple of 8")
    return SnapshotMatrix(flat[steps].copy(), stride, steps, var_layout(flat.shape[1] // 8))


@dataclass
class RomBasis:
    basis: np.ndarray  # (n_vars, M), orthonormal columns
    singular_values: np.ndarray  # (M,), non-increasing
    total_energy: float  # sum of all squared singular values
    col_mean: np.ndarray  # (n_vars,), centring in normalised units
    norm_mean: np.ndarray  # (8,), per compartment-group
    norm_std: np.ndarray  # (8,)
    normalization_mode: str

    @property
    def M(self) -> int:
        return self.basis.shape[1]

    @property
    def n_vars(self) -> int:
        return self.basis.shape[0]

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        return self.singular_values**2 / self.total_energy

    @property
    def mean_state(self) -> np.ndarray:
        return self._denormalize(self.col_mean)

    @property
    def basis_id(self) -> str:
        h = hashlib.sha256()
        for arr in (self.basis, self.singular_values, self.col_mean, self.norm_mean, self.norm_std):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        h.update(self.normalization_mode.encode())
        return h.hexdigest()[:16]

    def _var_scale(self):
        n_cells = self.n_vars // 8
        return (np.repeat(self.norm_mean, n_cells), np.repeat(self.norm_std, n_cells))

    def _normalize(self, x):
        mean, std = self._var_scale()
        return (x - mean) / std

    def _denormalize(self, x):
        mean, std = self._var_scale()
        return x * std + mean

    def _check(self, x, size, what):
        if x.shape[-1] != size:
            raise ValueError(f"{what} has length {x.shape[-1]}, expected {size}")

    def project(self, state_row) -> np.ndarray:
        """Latent coefficients of one state (or a stack of states)."""
        x = np.asarray(state_row, dtype=float)
        self._check(x, self.n_vars, "state")
        return (self._normalize(x) - self.col_mean) @ self.basis

    def reconstruct(self, latent) -> np.ndarray:
        z = np.asarray(latent, dtype=float)
        self._check(z, self.M, "latent")
        return self._denormalize(z @ self.basis.T + self.col_mean)


def _block_stats(data: np.ndarray):
    blocks = data.reshape(data.shape[0], 8, -1)
    mean = blocks.mean(axis=(0, 2))
    std = blocks.std(axis=(0, 2))
    return mean, std


def fit_pca(snapshots: SnapshotMatrix | np.ndarray, M: int = 15,
            normalization_mode: str = "compartment") -> RomBasis:
    """Truncated PCA of a snapshot matrix.

    ``"compartment"`` scales each compartment-group block by its own mean and
    standard deviation and then centres every variable; ``"none"`` takes the
    SVD of the raw snapshots, so projection is linear.
    """
    data = snapshots.data if isinstance(snapshots, SnapshotMatrix) else np.asarray(snapshots, float)
    rows, n_vars = data.shape
    if rows < 2:
        raise ValueError("need at least two snapshots")
    if not 1 <= M <= min(rows, n_vars):
        raise ValueError(f"M={M} must lie in [1, {min(rows, n_vars)}]")
    if normalization_mode == "compartment":
        if n_vars % 8:
            raise ValueError("compartment normalisation needs 8 blocks of variables")
        norm_mean, norm_std = _block_stats(data)
        for v, s in enumerate(norm_std):
            if not s > 0:
                name = f"{COMPARTMENTS[v // 2]}_{GROUPS[v % 2]}"
                raise ValueError(f"variable block {name} has zero variance")
        n_cells = n_vars // 8
        scaled = (data - np.repeat(norm_mean, n_cells)) / np.repeat(norm_std, n_cells)
        col_mean = scaled.mean(axis=0)
    elif normalization_mode == "none":
        norm_mean, norm_std = np.zeros(8), np.ones(8)
        scaled = data
        col_mean = np.zeros(n_vars)
    else:
        raise ValueError(f"unknown normalization mode {normalization_mode!r}")

    _, s, vt = np.linalg.svd(scaled - col_mean, full_matrices=False)
    basis = vt[:M].T.copy()
    pivot = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[pivot, np.arange(M)])
    basis *= np.where(signs == 0, 1.0, signs)
    return RomBasis(basis, s[:M].copy(), float(np.sum(s**2)), col_mean,
                    norm_mean, norm_std, normalization_mode)


@dataclass
class LatentSeries:
    coeffs: np.ndarray  # (levels, M)
    basis_id: str
    levels: np.ndarray | None = None

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("latent series contains non-finite values")
        if self.levels is None:
            self.levels = np.arange(self.coeffs.shape[0])


def to_latent(basis: RomBasis, snapshots: SnapshotMatrix) -> LatentSeries:
    return LatentSeries(basis.project(snapshots.data), basis.basis_id)


def pc_weight_matrix(basis: RomBasis) -> np.ndarray:
    """Diagonal principal-component weights (the singular values)."""
    return np.diag(basis.singular_values)
