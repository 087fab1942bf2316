"""Classical and spatially extended two-group SEIRS solvers.

The transient solver advances all eight fields with backward Euler. Nonlinear
terms (the infection term and the day/night transfer coefficients) are frozen
at the latest iterate and updated by Picard iteration; each Picard pass solves
the frozen linear system with block forward-backward Gauss-Seidel.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .model import (BLOCKED, E, HOME, HOMES, I, MOBILE, R, S, DomainError,
                    GridSpec, ModelParams, StateField, TransferCoeffs,
                    default_initial_state)

log = logging.getLogger(__name__)

HOME_AIM_BASE = 1000.0  # people; region-2 target swings between 1000 and 2000


class ConvergenceError(RuntimeError):
    """An iteration hit its limit before meeting tolerance."""

    def __init__(self, message, **diagnostics):
        super().__init__(f"{message} {diagnostics}" if diagnostics else message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SolverSettings:
    picard_tol: float = 1e-10
    picard_max: int = 50
    fbgs_tol: float = 1e-12
    fbgs_max: int = 500
    block_tol: float = 1e-10
    block_max: int = 200
    eigen_tol: float = 1e-10
    eigen_max: int = 20000


# ---------------------------------------------------------------- point model

@dataclass(frozen=True)
class ClassicalParams:
    beta: float
    sigma: float
    gamma: float
    xi: float = 0.0
    mu: float = 0.0
    nu: float = 0.0


def classical_rhs(state, params: ClassicalParams) -> np.ndarray:
    """Time derivatives (dS, dE, dI, dR) of the single-group SEIRS ODEs."""
    s, e, i, r = (float(x) for x in state)
    if not all(np.isfinite([s, e, i, r])):
        raise DomainError("state must be finite")
    n = s + e + i + r
    if not n > 0:
        raise DomainError("total population must be positive")
    p = params
    infection = p.beta * s * i / n
    return np.array([
        p.mu * n - infection + p.xi * r - p.nu * s,
        infection - p.sigma * e - p.nu * e,
        p.sigma * e - p.gamma * i - p.nu * i,
        p.gamma * i - p.xi * r - p.nu * r,
    ])


def r_day(t, T_one_day: float = 86400.0):
    """Day/night fraction, 0.5 at t = 0 and 1 a quarter of a day later."""
    if not T_one_day > 0:
        raise DomainError("T_one_day must be positive")
    return 0.5 * np.sin(2.0 * np.pi * np.asarray(t, dtype=float) / T_one_day) + 0.5


# -------------------------------------------------------- transfer terms

def transfer_coeffs_transient(region, N_H, t: float, params: ModelParams) -> TransferCoeffs:
    """Day/night Home<->Mobile transfer rates per cell.

    ``region`` and ``N_H`` may be scalars or per-cell arrays.
    """
    region = np.atleast_1d(np.asarray(region))
    N_H = np.broadcast_to(np.asarray(N_H, dtype=float), region.shape)
    homes = region == HOMES
    aim = np.where(homes, HOME_AIM_BASE * (1.0 - r_day(t, params.T_one_day))
                   + HOME_AIM_BASE, 0.0)
    lam_scale = np.where(homes, params.Lambda_HH_region2, 0.0)
    denom = np.maximum(np.maximum(params.epsilon, N_H), aim)
    F = (N_H - aim) / denom
    h2m = np.where(F >= 0.0, 1.0, 0.0)  # sign(0) = +1

    lam = np.empty((4, 2, 2) + region.shape)
    lam[:, HOME, HOME] = 0.01 * lam_scale * h2m * F
    lam[:, MOBILE, MOBILE] = -lam_scale * (1.0 - h2m) * F
    lam[:, HOME, MOBILE] = lam_scale * (1.0 - h2m) * F
    lam[:, MOBILE, HOME] = -0.01 * lam_scale * h2m * F
    return TransferCoeffs(lam)


def transfer_coeffs_eigen(region, params: ModelParams) -> TransferCoeffs:
    """Steady-state transfer rates; S and R carry the 1/epsilon diagonal."""
    if not params.epsilon > 0:
        raise DomainError("epsilon must be positive")
    region = np.atleast_1d(np.asarray(region))
    switch = (region == params.eigen_home_region).astype(float)
    day = params.T_one_day
    lam_hh = switch / day
    lam_mm = 10000.0 * (1.0 - switch) / day
    rr = params.r_ratio

    lam = np.empty((4, 2, 2) + region.shape)
    big = 1.0 / params.epsilon
    for c in (S, R):
        lam[c, HOME, HOME] = big
        lam[c, MOBILE, MOBILE] = big
    for c in (E, I):
        lam[c, HOME, HOME] = lam_hh + lam_mm
        lam[c, MOBILE, MOBILE] = lam_hh * rr
    lam[:, HOME, MOBILE] = -lam_hh * rr
    lam[:, MOBILE, HOME] = -lam_hh
    return TransferCoeffs(lam)


# ---------------------------------------------------------------- diffusion

def _face_structure(grid: GridSpec):
    """Neighbour indices (n_cells, 6) and 1/h^2 per face, with -1 / 0 for
    missing faces (domain edge or a blocked cell on either side)."""
    n = grid.n_cells
    xyz = grid.cell_xyz()
    dims = (grid.nx, grid.ny, grid.nz)
    nbr = np.full((n, 6), -1, dtype=np.int64)
    inv_h2 = np.zeros((n, 6))
    blocked = grid.region_map == BLOCKED
    strides = (1, grid.nx, grid.nx * grid.ny)
    for axis, h in enumerate(grid.spacing):
        for side, step in enumerate((-1, 1)):
            f = 2 * axis + side
            pos = xyz[:, axis] + step
            ok = (pos >= 0) & (pos < dims[axis])
            j = np.arange(n) + step * strides[axis]
            ok &= ~blocked
            ok[ok] &= ~blocked[j[ok]]
            nbr[ok, f] = j[ok]
            inv_h2[ok, f] = 1.0 / h**2
    return nbr, inv_h2


def _face_coefficients(k: np.ndarray, nbr: np.ndarray, inv_h2: np.ndarray) -> np.ndarray:
    """Arithmetic face average of k divided by h^2; k has shape (..., n_cells)."""
    safe = np.where(nbr >= 0, nbr, 0)
    k_face = 0.5 * (k[..., :, None] + k[..., safe])
    return np.where(nbr >= 0, k_face * inv_h2, 0.0)


def apply_diffusion(u, k, grid: GridSpec) -> np.ndarray:
    """Five-point (seven in 3-D) discretisation of div(k grad u), zero flux
    at the domain edge and into blocked cells."""
    u = np.asarray(u, dtype=float)
    k = np.broadcast_to(np.asarray(k, dtype=float), u.shape)
    nbr, inv_h2 = _face_structure(grid)
    a = _face_coefficients(k, nbr, inv_h2)
    safe = np.where(nbr >= 0, nbr, 0)
    return np.sum(a * (u[safe] - u[:, None]), axis=1)


# ------------------------------------------------------- reaction operator

def _reaction_terms(u, params: ModelParams, lam: np.ndarray, mode: str):
    """Removal rates (8, n) and in-cell couplings (8, 8, n) of the frozen
    operator; variable index is ``2 * compartment + group``.

    ``mode="transient"`` uses the infection rate beta I / N from ``u``;
    ``mode="eigen"`` linearises it to beta I and leaves the sigma E source of
    the I equations out (it is the eigenvalue operator).
    """
    n = u.shape[-1]
    removal = np.zeros((4, 2, n))
    couple = np.zeros((4, 2, 4, 2, n))
    beta = params.beta
    sigma, gamma, xi, mu, nu = params.sigma, params.gamma, params.xi, params.mu, params.nu
    for h in (HOME, MOBILE):
        o = 1 - h
        for c in range(4):
            removal[c, h] += nu[c, h] + lam[c, h, h]
            couple[c, h, c, o] -= lam[c, h, o]
            couple[S, h, c, h] += mu[h]  # births from the whole group
        removal[E, h] += sigma
        removal[I, h] += gamma[h]
        removal[R, h] += xi[h]
        couple[S, h, R, h] += xi[h]
        couple[R, h, I, h] += gamma[h]
        if mode == "transient":
            couple[I, h, E, h] += sigma
            N_h = u[:, h].sum(axis=0)
            with np.errstate(divide="ignore", invalid="ignore"):
                rate = np.where(N_h > 0, (beta[h] @ u[I]) / N_h, 0.0)
            removal[S, h] += rate
            couple[E, h, S, h] += rate
        else:
            for h2 in (HOME, MOBILE):
                couple[S, h, I, h2] -= beta[h, h2]
                couple[E, h, I, h2] += beta[h, h2]
    # fold self-coupling (births into S) into the diagonal
    diag_self = np.einsum("chchn->chn", couple).copy()
    removal -= diag_self
    idx = np.arange(4)[:, None], np.arange(2)[None, :]
    couple[idx[0], idx[1], idx[0], idx[1]] = 0.0
    return removal.reshape(8, n), couple.reshape(8, 8, n)


# ---------------------------------------------------------------- transient

@dataclass
class StepStats:
    picard_iterations: int = 0
    block_iterations: int = 0
    sweeps: int = 0


class TransientSolver:
    """Backward-Euler stepper with the grid structure precomputed."""

    def __init__(self, params: ModelParams, grid: GridSpec,
                 settings: SolverSettings | None = None):
        self.params = params
        self.grid = grid
        self.settings = settings or SolverSettings()
        self.nbr, inv_h2 = _face_structure(grid)
        k = params.diffusion(grid, "transient").reshape(8, -1)
        self.aface = _face_coefficients(k, self.nbr, inv_h2)
        self.face_sum = self.aface.sum(axis=2)
        self.cells = np.flatnonzero(grid.active).astype(np.int64)
        self.last_stats = StepStats()

    def step(self, state: StateField) -> StateField:
        p, st = self.params, self.settings
        dt = p.dt
        if not dt > 0:
            raise DomainError("dt must be positive")
        u_old = state.fields
        n = state.n_cells
        rhs = (u_old / dt).reshape(8, n)
        t_new = state.t + dt
        region = self.grid.region_map
        u = u_old.reshape(8, n).copy()
        stats = StepStats()
        omega = 1.0
        resid_prev = None
        for it in range(1, st.picard_max + 1):
            u_star = u.reshape(4, 2, n)
            lam = transfer_coeffs_transient(region, u_star[:, HOME].sum(axis=0),
                                            t_new, p).lam
            removal, couple = _reaction_terms(u_star, p, lam, "transient")
            diag = 1.0 / dt + removal + self.face_sum
            g = u.copy()
            status, blocks, sweeps = _kernels.block_fbgs(
                g, rhs, diag, self.aface, self.nbr, couple, self.cells,
                st.fbgs_tol, st.fbgs_max, st.block_tol, st.block_max)
            stats.block_iterations += blocks
            stats.sweeps += sweeps
            if status != 0:
                raise ConvergenceError(
                    "linear solve did not converge",
                    t=t_new, picard_iteration=it,
                    stage="field" if status == 1 else "block",
                    block_iterations=blocks)
            resid = g - u
            scale = np.max(np.abs(g))
            change = np.max(np.abs(resid))
            if change <= st.picard_tol * scale:
                stats.picard_iterations = it
                self.last_stats = stats
                return StateField(g.reshape(4, 2, n), t_new)
            # Irons-Tuck dynamic relaxation; the lagged day/night transfer
            # rates make plain Picard oscillate at dt * Lambda ~ 10.
            if resid_prev is not None:
                d = resid - resid_prev
                dd = float(np.vdot(d, d))
                if dd > 0.0:
                    omega = -omega * float(np.vdot(resid_prev, d)) / dd
            resid_prev = resid
            u = u + omega * resid
        raise ConvergenceError("Picard iteration did not converge", t=t_new,
                               iterations=st.picard_max,
                               last_relative_change=float(change / max(scale, 1e-300)))


def step_transient(state: StateField, params: ModelParams, grid: GridSpec,
                   settings: SolverSettings | None = None) -> StateField:
    return TransientSolver(params, grid, settings).step(state)


def simulate(params: ModelParams, grid: GridSpec, init: StateField | None = None,
             settings: SolverSettings | None = None, n_steps: int | None = None
             ) -> list[StateField]:
    """Integrate ``n_steps`` (default ``params.n_steps``) and return every
    state, starting with ``init``."""
    init = init or default_initial_state(grid)
    n_steps = params.n_steps if n_steps is None else n_steps
    if n_steps < 0:
        raise DomainError("n_steps must be >= 0")
    if init.n_cells != grid.n_cells:
        raise DomainError("initial state does not match the grid")
    solver = TransientSolver(params, grid, settings)
    series = [init.copy()]
    state = series[0]
    for k in range(n_steps):
        try:
            state = solver.step(state)
        except ConvergenceError as exc:
            exc.diagnostics["step"] = k + 1
            raise ConvergenceError(f"step {k + 1}: {exc}", **exc.diagnostics) from exc
        series.append(state)
    return series


# ---------------------------------------------------------------- eigenvalue

@dataclass
class EigenResult:
    lambda0: float
    R0: float
    mode: StateField
    residual_norm: float
    iterations: int
    history: list = field(default_factory=list, repr=False)


def eigen_operators(params: ModelParams, grid: GridSpec):
    """Sparse (A, B) over the active cells of all eight fields, such that the
    steady linearised system reads ``A x = lambda0 B x``.

    Returns ``(A, B, index)`` where ``index`` maps rows to flat positions of
    a ``(4, 2, n_cells)`` field array.
    """
    n = grid.n_cells
    lam = transfer_coeffs_eigen(grid.region_map, params).lam
    removal, couple = _reaction_terms(np.zeros((4, 2, n)), params, lam, "eigen")
    nbr, inv_h2 = _face_structure(grid)
    aface = _face_coefficients(params.diffusion(grid, "eigen").reshape(8, n), nbr, inv_h2)
    diag = removal + aface.sum(axis=2)

    cells = np.flatnonzero(grid.active)
    pos = -np.ones(n, dtype=np.int64)
    pos[cells] = np.arange(cells.size)
    m = cells.size
    rows, cols, vals = [], [], []
    for v in range(8):
        base = v * m
        rows.append(base + pos[cells]); cols.append(base + pos[cells]); vals.append(diag[v, cells])
        for f in range(nbr.shape[1]):
            j = nbr[cells, f]
            ok = j >= 0
            rows.append(base + pos[cells[ok]]); cols.append(base + pos[j[ok]])
            vals.append(-aface[v, cells[ok], f])
        for w in range(8):
            if w == v:
                continue
            cw = couple[v, w, cells]
            nz = cw != 0
            rows.append(base + pos[cells[nz]]); cols.append(w * m + pos[cells[nz]])
            vals.append(-cw[nz])
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(8 * m, 8 * m))
    brow, bcol, bval = [], [], []
    for h in (HOME, MOBILE):
        brow.append((2 * I + h) * m + np.arange(m))
        bcol.append((2 * E + h) * m + np.arange(m))
        bval.append(np.full(m, params.sigma))
    B = sp.csc_matrix((np.concatenate(bval), (np.concatenate(brow), np.concatenate(bcol))),
                      shape=(8 * m, 8 * m))
    index = (np.arange(8)[:, None] * n + cells[None, :]).ravel()
    return A, B, index


def apply_eigen_operator(fields: np.ndarray, params: ModelParams, grid: GridSpec):
    """Matrix-free ``(A x, B x)`` on a (4, 2, n_cells) field array, written
    term by term from the steady equations."""
    x = np.asarray(fields, dtype=float)
    lam = transfer_coeffs_eigen(grid.region_map, params).lam
    k = params.diffusion(grid, "eigen")
    beta, sigma, gamma, xi, mu, nu = (params.beta, params.sigma, params.gamma,
                                      params.xi, params.mu, params.nu)
    Ax = np.zeros_like(x)
    Bx = np.zeros_like(x)
    for h in (HOME, MOBILE):
        N_h = x[:, h].sum(axis=0)
        infection = sum(beta[h, h2] * x[I, h2] for h2 in (HOME, MOBILE))
        gain = {
            S: mu[h] * N_h - infection + xi[h] * x[R, h],
            E: infection - sigma * x[E, h],
            I: -gamma[h] * x[I, h],
            R: gamma[h] * x[I, h] - xi[h] * x[R, h],
        }
        for c in range(4):
            transfer = sum(lam[c, h, h2] * x[c, h2] for h2 in (HOME, MOBILE))
            rate = (gain[c] - nu[c, h] * x[c, h] - transfer
                    + apply_diffusion(x[c, h], k[c, h], grid))
            Ax[c, h] = -rate
        Bx[I, h] = sigma * x[E, h]
    Ax[:, :, ~grid.active] = 0.0
    Bx[:, :, ~grid.active] = 0.0
    return Ax, Bx


def solve_eigen(params: ModelParams, grid: GridSpec,
                settings: SolverSettings | None = None) -> EigenResult:
    """Dominant R0 mode by inverse power iteration on A x = lambda0 B x.

    Each sweep solves A y = B x (sparse LU, factorised once), takes
    R0 = |y|/|x| over the E and I fields, and renormalises.
    """
    st = settings or SolverSettings()
    A, B, index = eigen_operators(params, grid)
    m = A.shape[0] // 8
    ei = np.zeros(8 * m, dtype=bool)
    for c in (E, I):
        ei[2 * c * m:(2 * c + 2) * m] = True
    lu = spla.splu(A)

    x = np.where(ei, 1.0, 0.0)
    x /= np.linalg.norm(x[ei])
    r0_old = None
    history = []
    for it in range(1, st.eigen_max + 1):
        y = lu.solve(B @ x)
        r0 = float(np.linalg.norm(y[ei]))
        x = y / r0
        history.append(r0)
        if r0_old is not None and abs(1.0 / r0 - 1.0 / r0_old) <= st.eigen_tol / r0:
            break
        r0_old = r0
    else:
        raise ConvergenceError("power iteration stagnated", sweeps=st.eigen_max,
                               last_R0=history[-1])

    lambda0 = 1.0 / r0
    R0_value = 1.0 / lambda0
    residual = float(np.linalg.norm(A @ x - lambda0 * (B @ x)) / np.linalg.norm(x))
    full = np.zeros(8 * grid.n_cells)
    full[index] = x
    mode = StateField(full.reshape(4, 2, grid.n_cells), 0.0)
    log.info("eigen: R0=%.6g after %d sweeps, residual %.3g", R0_value, it, residual)
    return EigenResult(lambda0, R0_value, mode, residual, it, history)
