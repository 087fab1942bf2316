"""Grid, parameter and state containers for the two-group SEIRS model.

Fields are stored as ``(4, 2, n_cells)`` arrays indexed by compartment
(S, E, I, R), group (Home, Mobile) and flattened cell index
``ix + nx * (iy + ny * iz)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

COMPARTMENTS = ("S", "E", "I", "R")
GROUPS = ("H", "M")
S, E, I, R = range(4)
HOME, MOBILE = 0, 1

BLOCKED, HOMES, TRAVEL = 1, 2, 3

T_ONE_DAY = 86400.0


class DomainError(ValueError):
    """Raised for inputs outside an operation's mathematical domain."""


def default_region_map(nx: int = 10, ny: int = 10, nz: int = 1) -> np.ndarray:
    """Cross-shaped layout of 5x5 region blocks.

    The four 2x2 corner groups of blocks are blocked (region 1), the centre
    block holds the homes (region 2) and the arms of the cross are travel
    cells (region 3).
    """
    ix = np.arange(nx) * 5 // nx
    iy = np.arange(ny) * 5 // ny
    bx, by = np.meshgrid(ix, iy, indexing="xy")  # shape (ny, nx)
    corner_x = (bx <= 1) | (bx >= 3)
    corner_y = (by <= 1) | (by >= 3)
    layer = np.full((ny, nx), TRAVEL, dtype=np.int64)
    layer[corner_x & corner_y] = BLOCKED
    layer[(bx == 2) & (by == 2)] = HOMES
    return np.tile(layer.ravel(), nz)


@dataclass(frozen=True)
class GridSpec:
    nx: int = 10
    ny: int = 10
    nz: int = 1
    domain_length: float = 1.0e5
    region_map: np.ndarray | None = None

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise DomainError("grid dimensions must be >= 1")
        if self.region_map is None:
            rmap = default_region_map(self.nx, self.ny, self.nz)
        else:
            rmap = np.asarray(self.region_map, dtype=np.int64).ravel()
        if rmap.size != self.n_cells:
            raise DomainError(
                f"region_map has {rmap.size} entries, expected {self.n_cells}"
            )
        if not np.isin(rmap, (BLOCKED, HOMES, TRAVEL)).all():
            raise DomainError("region ids must be 1, 2 or 3")
        rmap = rmap.copy()
        rmap.flags.writeable = False
        object.__setattr__(self, "region_map", rmap)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def spacing(self) -> tuple[float, float, float]:
        L = self.domain_length
        return L / self.nx, L / self.ny, L / self.nz

    @property
    def active(self) -> np.ndarray:
        return self.region_map != BLOCKED

    def cell_xyz(self) -> np.ndarray:
        """(n_cells, 3) integer cell coordinates."""
        idx = np.arange(self.n_cells)
        return np.stack(
            [idx % self.nx, (idx // self.nx) % self.ny, idx // (self.nx * self.ny)],
            axis=1,
        )

    def cell_index(self, ix: int, iy: int, iz: int = 0) -> int:
        return ix + self.nx * (iy + self.ny * iz)

    def __eq__(self, other):
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (
            (self.nx, self.ny, self.nz, self.domain_length)
            == (other.nx, other.ny, other.nz, other.domain_length)
            and np.array_equal(self.region_map, other.region_map)
        )

    __hash__ = None


def _pair(value) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (2,)).copy()
    return arr


@dataclass(frozen=True)
class ModelParams:
    """SEIRS coefficients in SI units (seconds, metres).

    ``None`` entries are filled with the test-case values on construction.
    Per-group quantities are length-2 arrays (Home, Mobile); ``nu`` is per
    compartment and group, shape (4, 2).
    """

    sigma: float = 1.0 / (4.5 * T_ONE_DAY)
    T_D: tuple[float, float] = (7.0 * T_ONE_DAY, 7.0 * T_ONE_DAY)
    R0: tuple[float, float] = (0.2, 10.0)
    xi: tuple[float, float] | None = None
    mu: tuple[float, float] | None = None
    nu: np.ndarray | None = None
    k_transient: float | None = None
    k_eigen_factor: float = 0.05
    Lambda_HH_region2: float | None = None
    r_ratio: float = 25.65
    epsilon: float = 1e-10
    T_one_day: float = T_ONE_DAY
    dt: float = 1000.0
    n_steps: int = 3880
    eigen_home_region: int = HOMES
    length_scale: float = 1.0e5
    home_diffusion: bool = False

    def __post_init__(self):
        day = self.T_one_day
        if not day > 0:
            raise DomainError("T_one_day must be positive")
        fill = {
            "xi": 1.0 / (365.0 * day),
            "mu": 1.0 / (60.0 * 365.0 * day),
            "k_transient": 2.5 * self.length_scale**2 / day,
            "Lambda_HH_region2": 1000.0 / day,
        }
        for name, value in fill.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        for name in ("T_D", "R0", "xi", "mu"):
            object.__setattr__(self, name, _pair(getattr(self, name)))
        if self.nu is None:
            nu = np.broadcast_to(self.mu, (4, 2)).copy()
        else:
            nu = np.broadcast_to(np.asarray(self.nu, dtype=float), (4, 2)).copy()
        object.__setattr__(self, "nu", nu)

        rates = [self.sigma, self.k_transient, self.k_eigen_factor,
                 self.Lambda_HH_region2, self.r_ratio]
        arrays = [self.T_D, self.R0, self.xi, self.mu, self.nu]
        if any(not np.isfinite(r) or r < 0 for r in rates) or any(
            not np.all(np.isfinite(a)) or np.any(a < 0) for a in arrays
        ):
            raise DomainError("all rates and coefficients must be finite and >= 0")
        if np.any(self.T_D <= 0):
            raise DomainError("T_D must be positive")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if self.eigen_home_region not in (BLOCKED, HOMES, TRAVEL):
            raise DomainError("eigen_home_region must be a region id")

    @property
    def gamma(self) -> np.ndarray:
        return 1.0 / self.T_D

    @property
    def beta(self) -> np.ndarray:
        """2x2 transmission matrix; cross-group terms are zero."""
        return np.diag(self.gamma * self.R0)

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def diffusion(self, grid: GridSpec, mode: str = "transient") -> np.ndarray:
        """Diffusion coefficient per (compartment, group, cell)."""
        k = self.k_transient
        if mode == "eigen":
            k = k * self.k_eigen_factor
        elif mode != "transient":
            raise ValueError(f"unknown mode {mode!r}")
        cell_k = np.where(grid.region_map == BLOCKED, 0.0, k)
        out = np.broadcast_to(cell_k, (4, 2, grid.n_cells)).copy()
        if not self.home_diffusion:
            # Home people stay put; group changes happen via transfer terms
            out[:, HOME] = 0.0
        return out


@dataclass
class StateField:
    """People counts per (compartment, group, cell) at time ``t`` (seconds)."""

    fields: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.fields = np.asarray(self.fields, dtype=float)
        if self.fields.ndim != 3 or self.fields.shape[:2] != (4, 2):
            raise ValueError(f"fields must have shape (4, 2, n_cells), got {self.fields.shape}")

    @property
    def n_cells(self) -> int:
        return self.fields.shape[2]

    def group_total(self) -> np.ndarray:
        """N_h per cell, shape (2, n_cells)."""
        return self.fields.sum(axis=0)

    def total(self) -> float:
        return float(self.fields.sum())

    def copy(self) -> "StateField":
        return StateField(self.fields.copy(), self.t)

    def flat(self) -> np.ndarray:
        return self.fields.reshape(-1)


def default_initial_state(grid: GridSpec, people: float = 2000.0,
                          exposed_fraction: float = 1e-3) -> StateField:
    fields = np.zeros((4, 2, grid.n_cells))
    homes = grid.region_map == HOMES
    fields[E, HOME, homes] = people * exposed_fraction
    fields[S, HOME, homes] = people - fields[E, HOME, homes]
    return StateField(fields, 0.0)


@dataclass(frozen=True)
class TransferCoeffs:
    """lam[c, h, h2, cell] multiplies u[c, h2] in the equation for u[c, h]."""

    lam: np.ndarray = field(repr=False)

    def __getitem__(self, key):
        return self.lam[key]
