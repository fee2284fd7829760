"""Centered finite-difference gradients and Jacobians.

Used by the test suite and by validation helpers to check user-supplied
derivatives against an O(h^2) approximation.
"""

import numpy as np


def central_gradient(f, x, h=1e-6):
    """Centered-difference gradient of a scalar function at x."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        grad[j] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def central_jacobian(f, x, h=1e-6):
    """Centered-difference Jacobian of a vector function at x.

    Returns an (m, n) array for f: R^n -> R^m.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    jac = np.zeros((f0.size, x.size))
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (np.atleast_1d(f(xp)) - np.atleast_1d(f(xm))) / (2.0 * h)
    return jac
