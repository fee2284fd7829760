"""Smooth constraints and the oblique projections they induce.

A constraint is a smooth map psi: R^d -> R^m whose zero set is the
feasible manifold. Flows restricted to that manifold use the oblique
projector P = I - J^T (J H^{-1} J^T)^{-1} J H^{-1}, built from the
constraint Jacobian J and the potential's Hessian H. The small m x m
system is solved by Gaussian elimination with partial pivoting, which
doubles as the rank check.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateInputError, SingularConstraintError
from .potentials import check_in_domain

# Pivots below this fraction of the largest entry are treated as zero.
PIVOT_RTOL = 1e-12


@dataclass(frozen=True)
class Constraint:
    """Constraint psi(w) = 0 with Jacobian, psi: R^d -> R^m."""

    name: str
    psi: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]


def simplex_constraint(total=1.0):
    """Affine mass constraint 1^T w - total = 0."""
    return Constraint(
        name="simplex",
        psi=lambda w: np.array([float(np.sum(w)) - total]),
        jacobian=lambda w: np.ones((1, np.asarray(w).size)),
    )


_CONSTRAINTS = {"simplex": simplex_constraint}


def get_constraint(name):
    """Look up a constraint by registry name."""
    try:
        return _CONSTRAINTS[name]()
    except KeyError:
        raise KeyError(
            f"unknown constraint {name!r}; valid names: {', '.join(sorted(_CONSTRAINTS))}"
        ) from None


def solve_pivoted(a, b):
    """Solve a x = b by Gaussian elimination with partial pivoting.

    Rejects pivots below PIVOT_RTOL times the largest entry of a, which
    catches rank-deficient constraint systems before they poison the
    projector. b may be a vector or a matrix of right-hand sides.
    """
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected square system, got {a.shape}")
    vec = b.ndim == 1
    if vec:
        b = b[:, None]
    scale = np.max(np.abs(a)) if n else 0.0
    if scale == 0.0:
        raise SingularConstraintError("all-zero constraint system")
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if np.abs(a[piv, col]) <= PIVOT_RTOL * scale:
            raise SingularConstraintError(
                f"pivot {a[piv, col]:.3e} below threshold at column {col}; "
                "constraint Jacobian is rank deficient"
            )
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        factors = a[col + 1:, col] / a[col, col]
        a[col + 1:, col:] -= factors[:, None] * a[col, col:]
        b[col + 1:] -= factors[:, None] * b[col]
    x = np.zeros_like(b)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1:] @ x[row + 1:]) / a[row, row]
    return x[:, 0] if vec else x


def projection_matrix(potential, constraint, w):
    """Oblique projector onto the constraint tangent space at w.

    P = I - J^T (J H^{-1} J^T)^{-1} J H^{-1} with J the constraint
    Jacobian and H the potential Hessian at w. Idempotent, and
    J H^{-1} P v = 0 for every v.
    """
    w = np.asarray(w, dtype=float)
    check_in_domain(potential, w)
    jac = np.atleast_2d(np.asarray(constraint.jacobian(w), dtype=float))
    hinv = 1.0 / potential.hessian_diag(w)
    j_hinv = jac * hinv[None, :]
    gram = j_hinv @ jac.T
    correction = solve_pivoted(gram, j_hinv)
    return np.eye(w.size) - jac.T @ correction


def reparam_projection_matrix(base_potential, constraint, qmap, u):
    """Projector for the pulled-back constraint psi(q(u)) = 0.

    The chain-rule Jacobian J_psi(q(u)) J_q(u) replaces J in the same
    oblique formula, with the base potential's Hessian at u.
    """
    u = np.asarray(u, dtype=float)
    check_in_domain(base_potential, u)
    w = qmap.apply(u)
    jac = np.atleast_2d(constraint.jacobian(w)) @ np.atleast_2d(qmap.jacobian(u))
    hinv = 1.0 / base_potential.hessian_diag(u)
    j_hinv = jac * hinv[None, :]
    gram = j_hinv @ jac.T
    correction = solve_pivoted(gram, j_hinv)
    return np.eye(u.size) - jac.T @ correction


def bregman_project_simplex(potential, w):
    """Relative-entropy projection of a positive vector onto the simplex.

    For the log-link potential this is plain L1 normalization.
    """
    if potential.name != "egu":
        raise ValueError(
            "the closed-form simplex projection is specific to the 'egu' potential"
        )
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise DegenerateInputError("negative mass cannot be projected onto the simplex")
    total = float(np.sum(w))
    if total <= 0.0:
        raise DegenerateInputError("zero vector has no simplex projection")
    return w / total


def save_matrix_csv(path, matrix):
    """Dump a matrix to CSV at full precision for debugging."""
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")
