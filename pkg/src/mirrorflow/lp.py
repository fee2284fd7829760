"""Dense two-phase simplex solver for small equality-form LPs.

Solves min c^T x s.t. A x = b, x >= 0 with Bland's rule (no cycling)
and a fresh basis factorization each iteration; problem sizes here are
tens of variables, so simplicity wins over sparse machinery. Kept free
of any flow code so it can serve as an independent optimality oracle.
"""

import numpy as np

from .errors import NoConvergenceError

PIVOT_TOL = 1e-9


class InfeasibleError(ValueError):
    pass


class UnboundedError(ValueError):
    pass


def _simplex_core(c, a, b, basis, max_iter):
    """Run simplex from a feasible basis; returns (basis, x, duals)."""
    m, n = a.shape
    basis = list(basis)
    for _ in range(max_iter):
        bmat = a[:, basis]
        xb = np.linalg.solve(bmat, b)
        duals = np.linalg.solve(bmat.T, c[basis])
        reduced = c - duals @ a
        reduced[basis] = 0.0
        entering = -1
        for j in range(n):
            if reduced[j] < -PIVOT_TOL:
                entering = j
                break
        if entering < 0:
            x = np.zeros(n)
            x[basis] = xb
            return basis, x, duals
        direction = np.linalg.solve(bmat, a[:, entering])
        mask = direction > PIVOT_TOL
        if not mask.any():
            raise UnboundedError("LP is unbounded below")
        ratios = np.full(m, np.inf)
        ratios[mask] = xb[mask] / direction[mask]
        best = np.min(ratios)
        # Bland tie-break: leave the smallest basis index.
        leaving_row = min(
            (basis[i], i) for i in range(m) if ratios[i] <= best + 1e-12
        )[1]
        basis[leaving_row] = entering
    raise NoConvergenceError(f"simplex did not terminate in {max_iter} iterations")


def solve_equality_lp(c, a, b, max_iter=20000):
    """Two-phase simplex; returns (x, objective, duals).

    The duals correspond to the equality constraints of the original
    system (signs restored after the phase-1 row flips).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = a.shape
    signs = np.where(b < 0, -1.0, 1.0)
    a1 = a * signs[:, None]
    b1 = b * signs

    aux = np.hstack([a1, np.eye(m)])
    c_aux = np.concatenate([np.zeros(n), np.ones(m)])
    basis, x_aux, _ = _simplex_core(c_aux, aux, b1, range(n, n + m), max_iter)
    if c_aux @ x_aux > 1e-7:
        raise InfeasibleError("equality system has no nonnegative solution")

    # Pivot leftover artificial variables out of the basis.
    for row, var in enumerate(list(basis)):
        if var < n:
            continue
        bmat = aux[:, basis]
        found = False
        for j in range(n):
            if j in basis:
                continue
            direction = np.linalg.solve(bmat, aux[:, j])
            if abs(direction[row]) > PIVOT_TOL:
                basis[row] = j
                found = True
                break
        if not found:
            raise InfeasibleError("redundant constraint row; remove it and retry")

    basis, x, duals = _simplex_core(c, a1, b1, basis, max_iter)
    return x[:n], float(c @ x[:n]), duals * signs


def basis_pursuit(design, target, max_iter=20000):
    """min ||w||_1 s.t. design @ w = target, via the split w = p - q.

    Returns (w, objective, duals); the duals form the usual certificate
    with |design^T duals| <= 1 and equality on the support.
    """
    design = np.asarray(design, dtype=float)
    n, d = design.shape
    a = np.hstack([design, -design])
    c = np.ones(2 * d)
    x, obj, duals = solve_equality_lp(c, a, np.asarray(target, dtype=float),
                                      max_iter=max_iter)
    w = x[:d] - x[d:]
    # The LP minimizes p + q >= |w|; at an optimal vertex they agree, and
    # design^T duals = sign(w) holds on the support.
    return w, obj, duals
