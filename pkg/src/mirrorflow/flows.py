"""Continuous-time flow integrators and discrete mirror updates.

The continuous flow is integrated in its metric (natural-gradient) form
w' = -eta H_F^{-1}(w) grad L(w), so a single stepper serves every
potential without inverting the link inside the loop. The mirror-space
route is available separately through integrate_dual, which steps the
dual variable theta = f(w) and maps back. Constrained problems use the
oblique projector from the geometry module, recomputed at every stage.

Discrete rules cover the explicit and implicit (prox) mirror steps and
the four classic normalized-update discretizations.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import geometry
from .errors import (
    DomainError,
    DomainExitError,
    NoConvergenceError,
    NumericalError,
    StepTooLargeError,
)
from .numdiff import central_gradient
from .potentials import check_in_domain, get_dual, in_domain

SCHEMES = ("euler", "rk4")

# Simplex feasibility slack accepted by the normalized discrete updates.
SIMPLEX_TOL = 1e-8


@dataclass
class FlowProblem:
    """A loss, an initial point, and the geometry to flow in.

    grad must be the exact gradient of loss; validate() checks it
    against centered finite differences at the start point.
    """

    loss: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    w0: np.ndarray
    eta: float
    horizon: float
    potential: object
    constraint: Optional[object] = None

    def __post_init__(self):
        self.w0 = np.atleast_1d(np.asarray(self.w0, dtype=float))
        if self.eta <= 0:
            raise ValueError("learning rate must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    def validate(self, grad_rtol=1e-4):
        """Check the start point and the analytic gradient."""
        check_in_domain(self.potential, self.w0)
        if self.constraint is not None:
            miss = np.max(np.abs(self.constraint.psi(self.w0)))
            if miss > 1e-10:
                raise ValueError(f"w0 violates the constraint by {miss:.3e}")
        fd = central_gradient(self.loss, self.w0, h=1e-6)
        g = self.grad(self.w0)
        scale = max(1.0, float(np.max(np.abs(g))))
        err = float(np.max(np.abs(g - fd)))
        if err > grad_rtol * scale:
            raise ValueError(
                f"grad disagrees with finite differences at w0 (error {err:.3e})"
            )


@dataclass
class Trajectory:
    """Time grid and states of one integrated flow."""

    times: np.ndarray
    states: np.ndarray
    dual_states: Optional[np.ndarray] = None

    @property
    def final_state(self):
        return self.states[-1]

    def to_csv(self, path):
        """Write `t,w_1,...,w_d` rows at 17 significant digits."""
        d = self.states.shape[1]
        header = "t," + ",".join(f"w_{i + 1}" for i in range(d))
        data = np.column_stack([self.times, self.states])
        np.savetxt(path, data, delimiter=",", fmt="%.17g",
                   header=header, comments="")


def _first_violation(w, lo, hi):
    if not np.all(np.isfinite(w)):
        return int(np.nonzero(~np.isfinite(w))[0][0])
    if np.isfinite(lo):
        bad = np.nonzero(w <= lo)[0]
        if bad.size:
            return int(bad[0])
    if np.isfinite(hi):
        bad = np.nonzero(w >= hi)[0]
        if bad.size:
            return int(bad[0])
    return None


def integrate_field(rhs, y0, step, horizon, scheme="rk4", record_every=1,
                    domain=(-np.inf, np.inf), post_step=None):
    """Integrate y' = rhs(y) with a fixed-step explicit scheme.

    Returns (times, states) with states recorded every record_every
    steps (the initial and final states always included). Raises
    DomainExitError when the state leaves the open interval `domain`,
    NumericalError when the right-hand side turns non-finite.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if step <= 0:
        raise ValueError("step must be positive")
    n_steps = max(1, int(round(horizon / step)))
    y = np.array(y0, dtype=float)
    lo, hi = domain
    times = [0.0]
    states = [y.copy()]
    half = 0.5 * step
    sixth = step / 6.0
    for i in range(n_steps):
        if scheme == "rk4":
            k1 = rhs(y)
            k2 = rhs(y + half * k1)
            k3 = rhs(y + half * k2)
            k4 = rhs(y + step * k3)
            y = y + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        else:
            y = y + step * rhs(y)
        t = (i + 1) * step
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite state at t = {t:g}")
        if post_step is not None:
            y = post_step(y)
        bad = _first_violation(y, lo, hi)
        if bad is not None:
            raise DomainExitError(
                f"flow left the domain at t = {t:g}, coordinate {bad}",
                time=t, coordinate=bad,
            )
        if (i + 1) % record_every == 0 or i + 1 == n_steps:
            times.append(t)
            states.append(y.copy())
    return np.array(times), np.array(states)


def integrate_cmd(problem, step, scheme="rk4", record_every=1, validate=True):
    """Integrate the mirror flow of a FlowProblem in metric form.

    With a constraint present the field is the projected one,
    w' = -eta P^T H^{-1} grad L, and for the log-link potential on the
    simplex the state is renormalized (the closed-form divergence
    projection) after every step to cancel drift.
    """
    if validate:
        problem.validate()
    pot = problem.potential
    grad = problem.grad
    eta = problem.eta
    cons = problem.constraint
    if cons is None:
        def rhs(w):
            return (-eta) * grad(w) / pot.hessian_diag(w)
    else:
        def rhs(w):
            proj = geometry.projection_matrix(pot, cons, w)
            return (-eta) * (proj.T @ (grad(w) / pot.hessian_diag(w)))
    post = None
    if cons is not None and cons.name == "simplex" and pot.name == "egu":
        def post(w):
            return geometry.bregman_project_simplex(pot, w)
    times, states = integrate_field(
        rhs, problem.w0, step, problem.horizon, scheme=scheme,
        record_every=record_every, domain=pot.domain, post_step=post,
    )
    return Trajectory(times=times, states=states)


def integrate_dual(problem, step, scheme="rk4", record_every=1, validate=True):
    """Integrate the same flow in the mirror space.

    Steps theta' = -eta grad L(f*(theta)) from theta0 = f(w0) and maps
    the recorded dual states back through f*. Must agree with
    integrate_cmd up to integration error.
    """
    if problem.constraint is not None:
        raise ValueError("the mirror-space integrator is unconstrained only")
    if validate:
        problem.validate()
    pot = problem.potential
    dual = get_dual(pot)
    grad = problem.grad
    eta = problem.eta
    f_star = dual.dual_link

    def rhs(theta):
        return (-eta) * grad(f_star(theta))

    theta0 = pot.link(problem.w0)
    times, thetas = integrate_field(
        rhs, theta0, step, problem.horizon, scheme=scheme,
        record_every=record_every, domain=dual.dual_domain,
    )
    primal = np.apply_along_axis(f_star, 1, thetas)
    bad = _first_violation(primal[-1], *pot.domain)
    if bad is not None:
        raise DomainExitError(
            f"dual flow maps outside the primal domain at coordinate {bad}",
            time=times[-1], coordinate=bad,
        )
    return Trajectory(times=times, states=primal, dual_states=thetas)


# ---------------------------------------------------------------------------
# Discrete updates
# ---------------------------------------------------------------------------

def step_md_explicit(potential, w, g, eta):
    """Explicit mirror step f(w+) = f(w) - eta g."""
    w = np.asarray(w, dtype=float)
    check_in_domain(potential, w)
    theta = potential.link(w) - eta * np.asarray(g, dtype=float)
    new = potential.inv_link(theta)
    if not (np.all(np.isfinite(new)) and in_domain(potential, new)):
        raise StepTooLargeError(
            f"explicit step of size {eta:g} leaves the domain of '{potential.name}'"
        )
    return new


def step_md_implicit(potential, w, problem, eta, tol=1e-10, max_iter=1000,
                     damping=0.5):
    """Implicit (prox) mirror step f(w+) = f(w) - eta grad L(w+).

    Solved by damped fixed-point iteration in the mirror space; the
    residual is measured there as well. Raises NoConvergenceError with
    the last residual when max_iter is exhausted.
    """
    w = np.asarray(w, dtype=float)
    check_in_domain(potential, w)
    grad = problem.grad
    theta_anchor = potential.link(w)
    theta = theta_anchor - eta * grad(w)
    residual = np.inf
    for _ in range(max_iter):
        cand = potential.inv_link(theta)
        if not (np.all(np.isfinite(cand)) and in_domain(potential, cand)):
            raise StepTooLargeError(
                "implicit step iterate left the domain; reduce eta"
            )
        target = theta_anchor - eta * grad(cand)
        residual = float(np.max(np.abs(theta - target)))
        if residual <= tol:
            return cand
        theta = (1.0 - damping) * theta + damping * target
    raise NoConvergenceError(
        f"implicit step did not reach tol={tol:g} after {max_iter} iterations "
        f"(residual {residual:.3e})",
        residual=residual,
    )


def step_prod(w, g, eta):
    """Unnormalized multiplicative update w * (1 - eta g), elementwise."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise DomainError("multiplicative update needs strictly positive weights")
    factors = 1.0 - eta * np.asarray(g, dtype=float)
    if np.any(factors <= 0):
        i = int(np.nonzero(factors <= 0)[0][0])
        raise StepTooLargeError(
            f"eta * g_{i} >= 1 drives coordinate {i} nonpositive"
        )
    return w * factors


def _check_simplex(w):
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise DomainError("simplex update needs strictly positive weights")
    if abs(float(np.sum(w)) - 1.0) > SIMPLEX_TOL:
        raise DomainError("weights are not on the unit simplex")
    return w


def step_eg_normalized(w, g, eta):
    """Multiplicative simplex update with explicit renormalization."""
    w = _check_simplex(w)
    scaled = w * np.exp(-eta * np.asarray(g, dtype=float))
    return scaled / float(np.sum(scaled))


def step_eg_approximated(w, g, eta):
    """First-order simplex update that conserves total mass exactly.

    Centers the gradient by its weighted mean before the multiplicative
    factor, so the output sums to one algebraically and no projection
    step is needed.
    """
    w = _check_simplex(w)
    g = np.asarray(g, dtype=float)
    centered = g - float(w @ g)
    new = w * (1.0 - eta * centered)
    if np.any(new <= 0):
        i = int(np.nonzero(new <= 0)[0][0])
        raise StepTooLargeError(f"centered step drives coordinate {i} nonpositive")
    return new


def step_projected_then_bregman(potential, constraint, w, g, eta):
    """Projected mirror step followed by the divergence projection.

    Applies f(w~) = f(w) - eta P(w) g with the oblique projector, then
    projects w~ back onto the feasible set. The closed-form projection
    exists for the log-link potential on the simplex.
    """
    w = np.asarray(w, dtype=float)
    check_in_domain(potential, w)
    if np.max(np.abs(constraint.psi(w))) > SIMPLEX_TOL:
        raise DomainError("start point is not feasible")
    proj = geometry.projection_matrix(potential, constraint, w)
    theta = potential.link(w) - eta * (proj @ np.asarray(g, dtype=float))
    cand = potential.inv_link(theta)
    if not (np.all(np.isfinite(cand)) and in_domain(potential, cand)):
        raise StepTooLargeError(
            f"projected step of size {eta:g} leaves the domain of '{potential.name}'"
        )
    if constraint.name == "simplex" and potential.name == "egu":
        return geometry.bregman_project_simplex(potential, cand)
    raise ValueError(
        "no closed-form divergence projection registered for "
        f"({potential.name!r}, {constraint.name!r})"
    )
