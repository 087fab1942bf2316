"""Numba-compiled Gauss-Seidel sweeps for the control-volume systems.

Every variable ``v`` at cell ``i`` satisfies

    diag[v, i] u[v, i] - sum_f aface[v, i, f] u[v, nbr[i, f]]
                       - sum_{w != v} couple[v, w, i] u[w, i] = rhs[v, i]

with ``nbr[i, f] == -1`` marking a missing face.
"""
import numba as nb
import numpy as np

_opts = {"cache": True, "nogil": True}


@nb.njit(**_opts)
def fbgs_field(u, b, diag, aface, nbr, cells, tol_abs, max_sweeps):
    """Forward-backward Gauss-Seidel on one scalar field, in place.

    Returns the number of sweeps used, or -1 when ``max_sweeps`` is hit.
    """
    n = cells.shape[0]
    nf = nbr.shape[1]
    for sweep in range(max_sweeps):
        delta = 0.0
        for direction in range(2):
            for jj in range(n):
                j = jj if direction == 0 else n - 1 - jj
                i = cells[j]
                acc = b[i]
                for f in range(nf):
                    k = nbr[i, f]
                    if k >= 0:
                        acc += aface[i, f] * u[k]
                new = acc / diag[i]
                d = abs(new - u[i])
                if d > delta:
                    delta = d
                u[i] = new
        if delta <= tol_abs:
            return sweep + 1
    return -1


@nb.njit(**_opts)
def block_fbgs(u, rhs, diag, aface, nbr, couple, cells,
               tol_var, max_var, tol_block, max_block):
    """Block forward-backward Gauss-Seidel over all variables, in place.

    Each variable is solved to ``tol_var`` (relative to the largest entry of
    ``u``) with the other variables frozen; the block pass repeats until no
    entry moves by more than ``tol_block`` relative.

    Returns ``(status, block_iterations, total_sweeps)``; status 0 is success,
    1 means a field solve stalled, 2 means the block iteration stalled.
    """
    nv, nc = u.shape
    b = np.empty(nc)
    prev = np.empty_like(u)
    total = 0
    for it in range(max_block):
        prev[:, :] = u
        scale = 0.0
        for v in range(nv):
            for i in range(nc):
                a = abs(u[v, i])
                if a > scale:
                    scale = a
        for direction in range(2):
            for vv in range(nv):
                v = vv if direction == 0 else nv - 1 - vv
                for i in range(nc):
                    acc = rhs[v, i]
                    for w in range(nv):
                        if w != v:
                            acc += couple[v, w, i] * u[w, i]
                    b[i] = acc
                sweeps = fbgs_field(u[v], b, diag[v], aface[v], nbr, cells,
                                    tol_var * scale, max_var)
                if sweeps < 0:
                    return 1, it + 1, total
                total += sweeps
        change = 0.0
        scale = 0.0
        for v in range(nv):
            for i in range(nc):
                d = abs(u[v, i] - prev[v, i])
                if d > change:
                    change = d
                a = abs(u[v, i])
                if a > scale:
                    scale = a
        if change <= tol_block * scale:
            return 0, it + 1, total
    return 2, max_block, total
