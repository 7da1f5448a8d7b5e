"""Exact panel integrals of separable weights against a parity field.

For weights ``a(x) * b(d)`` with known antiderivatives ``A`` and ``B`` this
computes, for every panel of a tensor grid,

    integral over [X_k, X_k+1] x [D_l, D_l+1] of a(x) b(d) (-1)^N(x, d)

with no discretization error in the parity. The sweep runs outward in depth.
Between two depth events the running integrals

    R_a(X) = integral_0^X a(x) s(x) dx,   s(x) = (-1)^#{active points, px <= x}

are constant, so each panel row just accumulates ``R_a(X_k) * dB``. When a
point becomes active, ``s`` flips on ``[px, inf)``, which maps
``R(X) -> 2 R(px) - R(X)`` for every breakpoint right of ``px``. The total
cost is ``O(P * (P + K))`` per field for ``P`` points and ``K`` columns,
independent of how finely the parity oscillates.
"""

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def _sweep(bx_A, col_pos, pt_pos, ev_kind, ev_index, ev_B, n_rows):
    """Core loop.

    Parameters
    ----------
    bx_A : (na, L) float64
        ``A_a`` minus ``A_a(0)`` at every x-breakpoint (columns merged with
        point abscissae, sorted).
    col_pos : (K+1,) int64
        Breakpoint index of each column edge.
    pt_pos : (P,) int64
        Breakpoint index of each point.
    ev_kind, ev_index : (E,) int64
        Depth events in ascending depth order: kind 0 = point activation
        (index into ``pt_pos``), kind 1 = row edge ``index``.
    ev_B : (nb, E) float64
        ``B_b`` at each event depth.
    n_rows : int
        Number of panel rows (row edges minus one).

    Returns
    -------
    out : (na, nb, K, n_rows) float64
    """
    na, L = bx_A.shape
    nb = ev_B.shape[0]
    ncol = col_pos.size
    R = bx_A.copy()
    acc = np.zeros((na, nb, ncol))
    out = np.zeros((na, nb, ncol - 1, n_rows))
    started = False
    for e in range(ev_kind.size):
        if e > 0 and started:
            for b in range(nb):
                dB = ev_B[b, e] - ev_B[b, e - 1]
                if dB != 0.0:
                    for a in range(na):
                        for k in range(ncol):
                            acc[a, b, k] += R[a, col_pos[k]] * dB
        if ev_kind[e] == 0:
            m = pt_pos[ev_index[e]]
            for a in range(na):
                rm2 = 2.0 * R[a, m]
                for j in range(m + 1, L):
                    R[a, j] = rm2 - R[a, j]
        else:
            row = ev_index[e]
            if started and row >= 1:
                for a in range(na):
                    for b in range(nb):
                        for k in range(ncol - 1):
                            out[a, b, k, row - 1] = acc[a, b, k + 1] - acc[a, b, k]
            for a in range(na):
                for b in range(nb):
                    for k in range(ncol):
                        acc[a, b, k] = 0.0
            started = True
            if row == n_rows:
                break
    return out


def separable_panel_integrals(px, pd, col_edges, row_edges, x_antiderivs, d_antiderivs):
    """Exact panel integrals of ``a(x) b(d) (-1)^N`` for all channel pairs.

    Parameters
    ----------
    px, pd : array_like
        Point abscissae and depths. Points beyond the last row edge are
        ignored; all points below it must be passed (they flip parity).
    col_edges, row_edges : array_like
        Sorted panel boundaries in x and depth; ``col_edges[0]`` must be 0.
    x_antiderivs, d_antiderivs : sequence of callables
        Antiderivatives ``A_a`` and ``B_b`` (vectorized).

    Returns
    -------
    ndarray, shape (len(x_antiderivs), len(d_antiderivs), K, L_rows)
    """
    px = np.asarray(px, dtype=float)
    pd = np.asarray(pd, dtype=float)
    X = np.asarray(col_edges, dtype=float)
    D = np.asarray(row_edges, dtype=float)
    if X[0] != 0.0:
        raise ValueError("column edges must start at 0")
    keep = pd <= D[-1]
    px, pd = px[keep], pd[keep]

    # merged x breakpoints; columns before points at equal x (order is immaterial
    # for the integrals because the tie interval has zero length)
    bx = np.concatenate([X, px])
    tag = np.concatenate([np.zeros(X.size, np.int64), np.ones(px.size, np.int64)])
    order = np.lexsort((tag, bx))
    pos = np.empty(order.size, np.int64)
    pos[order] = np.arange(order.size)
    col_pos = pos[: X.size]
    pt_pos = pos[X.size:]
    bxs = bx[order]
    bx_A = np.vstack([A(bxs) - A(0.0) for A in x_antiderivs])

    # depth events: rows before points at equal depth
    ev_d = np.concatenate([D, pd])
    ev_kind = np.concatenate([np.ones(D.size, np.int64), np.zeros(pd.size, np.int64)])
    ev_index = np.concatenate([np.arange(D.size), np.arange(pd.size)])
    eorder = np.lexsort((-ev_kind, ev_d))
    ev_d, ev_kind, ev_index = ev_d[eorder], ev_kind[eorder], ev_index[eorder]
    ev_B = np.vstack([B(ev_d) for B in d_antiderivs])
    return _sweep(
        np.ascontiguousarray(bx_A), col_pos, pt_pos,
        np.ascontiguousarray(ev_kind), np.ascontiguousarray(ev_index),
        np.ascontiguousarray(ev_B), D.size - 1,
    )


def power_antiderivative(p):
    """``A(x) = x**(p+1) / (p+1)`` for ``p > -1``."""
    q = p + 1.0
    return lambda x: np.asarray(x, dtype=float) ** q / q


def brute_force_panel_integrals(px, pd, col_edges, row_edges, x_antiderivs, d_antiderivs):
    """Reference for :func:`separable_panel_integrals` on tiny fields.

    Splits every panel along all point coordinates into cells of constant
    parity, counts the parity of each cell directly, and integrates the
    separable weight over each cell in closed form.
    """
    px = np.asarray(px, dtype=float)
    pd = np.asarray(pd, dtype=float)
    X = np.asarray(col_edges, dtype=float)
    D = np.asarray(row_edges, dtype=float)
    xs = np.unique(np.concatenate([X, px[(px > X[0]) & (px < X[-1])]]))
    ds = np.unique(np.concatenate([D, pd[(pd > D[0]) & (pd < D[-1])]]))
    xm = 0.5 * (xs[:-1] + xs[1:])
    dm = 0.5 * (ds[:-1] + ds[1:])
    counts = ((px[None, None, :] <= xm[:, None, None]) & (pd[None, None, :] <= dm[None, :, None])).sum(axis=2)
    par = 1.0 - 2.0 * (counts % 2)
    kx = np.searchsorted(X, xm) - 1
    kd = np.searchsorted(D, dm) - 1
    out = np.zeros((len(x_antiderivs), len(d_antiderivs), X.size - 1, D.size - 1))
    for a, A in enumerate(x_antiderivs):
        wa = np.diff(A(xs))
        for b, B in enumerate(d_antiderivs):
            wb = np.diff(B(ds))
            cell = par * wa[:, None] * wb[None, :]
            np.add.at(out[a, b], (kx[:, None].repeat(dm.size, 1), kd[None, :].repeat(xm.size, 0)), cell)
    return out
