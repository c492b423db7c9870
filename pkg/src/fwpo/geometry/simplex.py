"""Dense two-phase simplex for small linear programs.

Solves ``max <g, x>`` subject to ``A x <= b`` and ``E x = d`` with ``x`` free.
Free variables are split as ``x = x_plus - x_minus``.  Pivoting follows
Bland's rule (lowest eligible index enters, lowest basic index leaves on
ratio ties), which makes the returned vertex deterministic.
"""

import numpy as np

from .errors import InfeasibleError, UnboundedError

PIVOT_TOL = 1e-9


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row:
            f = T[r, col]
            if f != 0.0:
                T[r] -= f * T[row]
    basis[row] = col


def _run(T, basis, cost, allowed, max_iter):
    """Maximize ``cost @ x`` over the tableau; ``allowed`` masks entering columns."""
    ncols = T.shape[1] - 1
    for _ in range(max_iter):
        reduced = cost[:ncols] - cost[basis] @ T[:, :ncols]
        candidates = np.flatnonzero((reduced > PIVOT_TOL) & allowed)
        if candidates.size == 0:
            return
        col = candidates[0]
        column = T[:, col]
        positive = column > PIVOT_TOL
        if not positive.any():
            raise UnboundedError("linear program is unbounded in the objective direction")
        ratios = np.full(column.shape, np.inf)
        ratios[positive] = T[positive, -1] / column[positive]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + PIVOT_TOL * max(1.0, abs(best)))
        row = ties[np.argmin(basis[ties])]
        _pivot(T, basis, row, col)
    raise RuntimeError("simplex exceeded its iteration budget")


def simplex_solve(A, b, E, d, g, max_iter=5000):
    """Return a vertex of ``{A x <= b, E x = d}`` maximizing ``<g, x>``.

    ``A``/``E`` may be ``None`` (or have zero rows).  Raises
    :class:`InfeasibleError` or :class:`UnboundedError`.
    """
    g = np.asarray(g, dtype=float)
    n = g.size
    A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    E = np.zeros((0, n)) if E is None else np.atleast_2d(np.asarray(E, dtype=float))
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
    d = np.zeros(0) if d is None else np.asarray(d, dtype=float).ravel()
    if A.shape[1] != n or E.shape[1] != n or A.shape[0] != b.size or E.shape[0] != d.size:
        raise ValueError("inconsistent LP dimensions")
    m, q = A.shape[0], E.shape[0]

    # columns: x_plus (n) | x_minus (n) | slacks (m) | artificials (k)
    rows = np.zeros((m + q, 2 * n + m))
    rhs = np.concatenate([b, d])
    rows[:m, :n] = A
    rows[:m, n:2 * n] = -A
    rows[:m, 2 * n:] = np.eye(m)
    rows[m:, :n] = E
    rows[m:, n:2 * n] = -E
    flip = rhs < 0
    rows[flip] *= -1.0
    rhs = np.where(flip, -rhs, rhs)

    needs_art = np.ones(m + q, dtype=bool)
    needs_art[:m] = flip[:m]
    art_rows = np.flatnonzero(needs_art)
    k = art_rows.size
    nstruct = 2 * n + m
    T = np.zeros((m + q, nstruct + k + 1))
    T[:, :nstruct] = rows
    T[:, -1] = rhs
    basis = np.empty(m + q, dtype=int)
    basis[:m] = 2 * n + np.arange(m)
    for j, r in enumerate(art_rows):
        T[r, nstruct + j] = 1.0
        basis[r] = nstruct + j

    ncols = nstruct + k
    if k:
        cost1 = np.zeros(ncols)
        cost1[nstruct:] = -1.0
        _run(T, basis, cost1, np.ones(ncols, dtype=bool), max_iter)
        infeas = T[basis >= nstruct, -1].sum()
        if infeas > 1e-7 * max(1.0, np.abs(rhs).max()):
            raise InfeasibleError(f"linear constraints are infeasible (phase-1 residual {infeas:.3g})")
        # drive zero-level artificials out of the basis; drop redundant rows
        keep = np.ones(T.shape[0], dtype=bool)
        for r in range(T.shape[0]):
            if basis[r] >= nstruct:
                cols = np.flatnonzero(np.abs(T[r, :nstruct]) > PIVOT_TOL)
                if cols.size:
                    _pivot(T, basis, r, cols[0])
                else:
                    keep[r] = False
        T = T[keep]
        basis = basis[keep]
    T = np.delete(T, np.s_[nstruct:nstruct + k], axis=1)

    cost2 = np.zeros(nstruct)
    cost2[:n] = g
    cost2[n:2 * n] = -g
    _run(T, basis, cost2, np.ones(nstruct, dtype=bool), max_iter)

    values = np.zeros(nstruct)
    values[basis] = T[:, -1]
    return values[:n] - values[n:2 * n]
