"""Convex potentials, link functions, and Bregman machinery.

A potential is a strictly convex separable function F with link f = grad F.
The link transports weights to the dual (mirror) space; its inverse brings
dual points back. Each potential carries its diagonal Hessian and an open
per-coordinate domain. The built-in registry covers the quadratic (plain
gradient descent), negative-entropy (unnormalized exponentiated gradient),
negative-log (Burg), two-outcome normalized, and tempered families.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, UnsupportedTemperatureError

# Below this distance from 1, the tempered family switches to the natural
# log/exp branch to avoid catastrophic cancellation.
TAU_LOG_BRANCH = 1e-8

# Strict-interior margin for domain checks.
DOMAIN_MARGIN = 1e-14


@dataclass(frozen=True)
class Potential:
    """Strictly convex separable potential with its link function.

    value:        w -> F(w), scalar
    link:         w -> f(w) = grad F(w), elementwise
    inv_link:     theta -> f^{-1}(theta)
    hessian_diag: w -> diagonal of the Hessian of F, strictly positive
    domain:       open interval (lo, hi) applied per coordinate
    tau:          temperature, set only for the tempered family
    """

    name: str
    value: Callable[[np.ndarray], float]
    link: Callable[[np.ndarray], np.ndarray]
    inv_link: Callable[[np.ndarray], np.ndarray]
    hessian_diag: Callable[[np.ndarray], np.ndarray]
    domain: tuple
    tau: Optional[float] = None


@dataclass(frozen=True)
class DualPotential:
    """Fenchel-dual partner of a potential.

    dual_link is the gradient of the conjugate evaluated in the mirror
    space; it coincides with the inverse link of the primal. The dual
    Hessian diagonal is an independent formula in the dual variable, so
    agreement with 1/H_F is a property to be tested, not an identity
    wired into the code.
    """

    primal: Potential
    dual_link: Callable[[np.ndarray], np.ndarray]
    dual_hessian_diag: Callable[[np.ndarray], np.ndarray]
    dual_domain: tuple


def check_in_domain(potential, w, margin=DOMAIN_MARGIN):
    """Raise DomainError unless w is strictly inside the potential domain."""
    w = np.asarray(w, dtype=float)
    lo, hi = potential.domain
    if np.isfinite(lo):
        bad = np.nonzero(w <= lo + margin)[0]
        if bad.size:
            i = int(bad[0])
            raise DomainError(
                f"coordinate {i} = {w[i]!r} not strictly above {lo} "
                f"for potential '{potential.name}'",
                coordinate=i,
            )
    if np.isfinite(hi):
        bad = np.nonzero(w >= hi - margin)[0]
        if bad.size:
            i = int(bad[0])
            raise DomainError(
                f"coordinate {i} = {w[i]!r} not strictly below {hi} "
                f"for potential '{potential.name}'",
                coordinate=i,
            )


def in_domain(potential, w, margin=DOMAIN_MARGIN):
    """Boolean version of check_in_domain."""
    w = np.asarray(w, dtype=float)
    lo, hi = potential.domain
    ok = np.isfinite(w).all()
    if np.isfinite(lo):
        ok = ok and bool((w > lo + margin).all())
    if np.isfinite(hi):
        ok = ok and bool((w < hi - margin).all())
    return ok


# ---------------------------------------------------------------------------
# Bregman divergence and momentum
# ---------------------------------------------------------------------------

def bregman_divergence(potential, w_tilde, w):
    """Convexity gap F(w~) - F(w) - f(w)^T (w~ - w); nonnegative."""
    w_tilde = np.asarray(w_tilde, dtype=float)
    w = np.asarray(w, dtype=float)
    check_in_domain(potential, w_tilde)
    check_in_domain(potential, w)
    gap = potential.value(w_tilde) - potential.value(w)
    return float(gap - potential.link(w) @ (w_tilde - w))


def bregman_momentum(potential, w, w_dot, w0):
    """Rate of change of the divergence to w0 along a curve through w.

    Equals (f(w) - f(w0))^T w_dot.
    """
    w = np.asarray(w, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    check_in_domain(potential, w)
    check_in_domain(potential, w0)
    return float((potential.link(w) - potential.link(w0)) @ np.asarray(w_dot, dtype=float))


def dual_momentum(potential, w, w_dot, w0):
    """Momentum evaluated through the dual potential.

    Maps the curve into the mirror space (theta = f(w), theta_dot =
    H_F(w) w_dot) and evaluates (theta - theta0)^T H_{F*}(theta)
    theta_dot. Must agree with bregman_momentum on the same arguments.
    """
    w = np.asarray(w, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    check_in_domain(potential, w)
    check_in_domain(potential, w0)
    dual = get_dual(potential)
    theta = potential.link(w)
    theta0 = potential.link(w0)
    theta_dot = potential.hessian_diag(w) * np.asarray(w_dot, dtype=float)
    return float((theta - theta0) @ (dual.dual_hessian_diag(theta) * theta_dot))


# ---------------------------------------------------------------------------
# Tempered logarithm / exponential
# ---------------------------------------------------------------------------

def log_tau(x, tau):
    """Tempered logarithm ((x^(1-tau) - 1) / (1-tau), natural log at tau=1).

    Defined for x >= 0 (strictly positive when tau >= 1).
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        i = int(np.nonzero(x < 0)[0][0])
        raise DomainError(f"tempered log undefined at negative coordinate {i}", coordinate=i)
    if tau >= 1.0 and np.any(x == 0):
        i = int(np.nonzero(x == 0)[0][0])
        raise DomainError(
            f"tempered log needs strictly positive input at tau={tau} (coordinate {i})",
            coordinate=i,
        )
    if abs(1.0 - tau) < TAU_LOG_BRANCH:
        return np.log(x)
    return (np.power(x, 1.0 - tau) - 1.0) / (1.0 - tau)


def exp_tau(x, tau):
    """Inverse of the tempered logarithm, clipped at zero.

    Evaluates [1 + (1-tau) x]_+^(1/(1-tau)); the positive-part bracket
    makes the map total on the reals for tau < 1. For tau > 1 the map
    diverges at the pole x = 1/(tau-1) and is +inf beyond it.
    """
    x = np.asarray(x, dtype=float)
    if abs(1.0 - tau) < TAU_LOG_BRANCH:
        return np.exp(x)
    base = 1.0 + (1.0 - tau) * x
    expo = 1.0 / (1.0 - tau)
    if tau < 1.0:
        return np.power(np.maximum(base, 0.0), expo)
    out = np.full_like(np.atleast_1d(base), np.inf)
    pos = np.atleast_1d(base) > 0.0
    out[pos] = np.power(np.atleast_1d(base)[pos], expo)
    return out.reshape(np.shape(base)) if np.ndim(base) else out[0]


def tempered_divergence(w_tilde, w, tau):
    """Tempered Bregman divergence in its beta-divergence form.

    ((w~^(2-tau) - w^(2-tau)) / (2-tau) - (w~ - w) w^(1-tau)) / (1-tau),
    summed over coordinates. Finite for w~ with zero coordinates when
    tau < 2, which the generic bregman_divergence (strict interior)
    refuses.
    """
    w_tilde = np.asarray(w_tilde, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w_tilde < 0) or np.any(w <= 0):
        raise DomainError("tempered divergence needs w~ >= 0 and w > 0")
    if abs(2.0 - tau) < TAU_LOG_BRANCH:
        raise UnsupportedTemperatureError("tau = 2 not covered; use the negative-log potential")
    if abs(1.0 - tau) < TAU_LOG_BRANCH:
        ratio = np.where(w_tilde > 0, w_tilde * np.log(np.maximum(w_tilde, 1e-300) / w), 0.0)
        return float(np.sum(ratio - w_tilde + w))
    beta = 2.0 - tau
    terms = (np.power(w_tilde, beta) - np.power(w, beta)) / beta
    terms = terms - (w_tilde - w) * np.power(w, 1.0 - tau)
    return float(np.sum(terms) / (1.0 - tau))


# ---------------------------------------------------------------------------
# Built-in potential registry
# ---------------------------------------------------------------------------

def gd_potential():
    """Squared-Euclidean potential; identity link (plain gradient descent)."""
    return Potential(
        name="gd",
        value=lambda w: 0.5 * float(np.sum(np.square(w))),
        link=lambda w: np.asarray(w, dtype=float).copy(),
        inv_link=lambda t: np.asarray(t, dtype=float).copy(),
        hessian_diag=lambda w: np.ones_like(np.asarray(w, dtype=float)),
        domain=(-np.inf, np.inf),
    )


def egu_potential():
    """Negative entropy; log link (unnormalized exponentiated gradient)."""
    return Potential(
        name="egu",
        value=lambda w: float(np.sum(w * np.log(w) - w)),
        link=np.log,
        inv_link=np.exp,
        hessian_diag=lambda w: 1.0 / np.asarray(w, dtype=float),
        domain=(0.0, np.inf),
    )


def burg_potential():
    """Negative-log potential; link -1/w."""
    return Potential(
        name="burg",
        value=lambda w: float(-np.sum(np.log(w))),
        link=lambda w: -1.0 / np.asarray(w, dtype=float),
        inv_link=lambda t: -1.0 / np.asarray(t, dtype=float),
        hessian_diag=lambda w: 1.0 / np.square(np.asarray(w, dtype=float)),
        domain=(0.0, np.inf),
    )


def _sigmoid(t):
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    out[~pos] = et / (1.0 + et)
    return out


def reduced_eg2_potential():
    """Two-outcome normalized potential on (0, 1); link log(w / (1-w)).

    The value is the binary entropy, whose gradient is exactly the
    declared link. Separable, so it also applies coordinatewise to
    vectors of independent two-outcome weights.
    """
    return Potential(
        name="reduced_eg2",
        value=lambda w: float(np.sum(w * np.log(w) + (1.0 - w) * np.log(1.0 - w))),
        link=lambda w: np.log(w / (1.0 - np.asarray(w, dtype=float))),
        inv_link=_sigmoid,
        hessian_diag=lambda w: 1.0 / (np.asarray(w, dtype=float) * (1.0 - np.asarray(w, dtype=float))),
        domain=(0.0, 1.0),
    )


def tempered_potential(tau):
    """Tempered potential with link log_tau and inverse exp_tau.

    tau=0 reproduces the squared-Euclidean divergence, tau=1 the
    relative entropy. tau=2 is excluded (that slot belongs to the
    negative-log potential).
    """
    if abs(2.0 - tau) < TAU_LOG_BRANCH:
        raise UnsupportedTemperatureError(
            "tau = 2 is not supported by the tempered family; use 'burg' instead"
        )
    tau = float(tau)

    def value(w):
        w = np.asarray(w, dtype=float)
        if abs(1.0 - tau) < TAU_LOG_BRANCH:
            return float(np.sum(w * np.log(w) + 1.0 - w))
        beta = 2.0 - tau
        return float(np.sum(w * log_tau(w, tau) + (1.0 - np.power(w, beta)) / beta))

    return Potential(
        name=f"tempered:{tau:g}",
        value=value,
        link=lambda w: log_tau(w, tau),
        inv_link=lambda t: exp_tau(t, tau),
        hessian_diag=lambda w: np.power(np.asarray(w, dtype=float), -tau),
        domain=(0.0, np.inf),
        tau=tau,
    )


_FIXED_POTENTIALS = {
    "gd": gd_potential,
    "egu": egu_potential,
    "burg": burg_potential,
    "reduced_eg2": reduced_eg2_potential,
}

# Names accepted by get_potential; a representative tempered member is
# included so "iterate over the registry" covers all five families.
REGISTRY_NAMES = ("gd", "egu", "burg", "reduced_eg2", "tempered:<tau>")

DEFAULT_REGISTRY = ("gd", "egu", "burg", "reduced_eg2", "tempered:0.5")


def get_potential(name):
    """Look up a potential by registry name, e.g. 'egu' or 'tempered:0.5'."""
    if name in _FIXED_POTENTIALS:
        return _FIXED_POTENTIALS[name]()
    if name.startswith("tempered:"):
        try:
            tau = float(name.split(":", 1)[1])
        except ValueError:
            raise KeyError(f"malformed tempered potential name {name!r}") from None
        return tempered_potential(tau)
    raise KeyError(
        f"unknown potential {name!r}; valid names: {', '.join(REGISTRY_NAMES)}"
    )


def get_dual(potential):
    """Fenchel-dual partner with independent dual-space formulas."""
    name = potential.name
    if name == "gd":
        return DualPotential(
            primal=potential,
            dual_link=lambda t: np.asarray(t, dtype=float).copy(),
            dual_hessian_diag=lambda t: np.ones_like(np.asarray(t, dtype=float)),
            dual_domain=(-np.inf, np.inf),
        )
    if name == "egu":
        return DualPotential(
            primal=potential,
            dual_link=np.exp,
            dual_hessian_diag=np.exp,
            dual_domain=(-np.inf, np.inf),
        )
    if name == "burg":
        return DualPotential(
            primal=potential,
            dual_link=lambda t: -1.0 / np.asarray(t, dtype=float),
            dual_hessian_diag=lambda t: 1.0 / np.square(np.asarray(t, dtype=float)),
            dual_domain=(-np.inf, 0.0),
        )
    if name == "reduced_eg2":
        return DualPotential(
            primal=potential,
            dual_link=_sigmoid,
            dual_hessian_diag=lambda t: _sigmoid(t) * (1.0 - _sigmoid(t)),
            dual_domain=(-np.inf, np.inf),
        )
    if name.startswith("tempered:"):
        tau = potential.tau
        if tau is None:
            tau = float(name.split(":", 1)[1])
        if abs(1.0 - tau) < TAU_LOG_BRANCH:
            lo, hi = -np.inf, np.inf
        elif tau < 1.0:
            lo, hi = -1.0 / (1.0 - tau), np.inf
        else:
            lo, hi = -np.inf, 1.0 / (tau - 1.0)
        return DualPotential(
            primal=potential,
            dual_link=lambda t: exp_tau(t, tau),
            dual_hessian_diag=lambda t: np.power(exp_tau(t, tau), tau),
            dual_domain=(lo, hi),
        )
    raise KeyError(f"no dual registered for potential {name!r}")


def dual_as_potential(potential):
    """Package the Fenchel dual as a Potential over the mirror space.

    The conjugate value is computed through the primal, F*(theta) =
    theta . f*(theta) - F(f*(theta)), so no new value formula enters.
    """
    dual = get_dual(potential)

    def value(theta):
        w = dual.dual_link(theta)
        return float(np.asarray(theta, dtype=float) @ w) - potential.value(w)

    return Potential(
        name=potential.name + "_dual",
        value=value,
        link=dual.dual_link,
        inv_link=potential.link,
        hessian_diag=dual.dual_hessian_diag,
        domain=dual.dual_domain,
        tau=potential.tau,
    )
