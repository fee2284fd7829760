"""Reparameterization maps and the flow-equivalence harness.

A mirror flow for a potential F in w-space can be simulated by the flow
of another potential G in u-space through a map w = q(u), provided the
inverse Hessians match through the Jacobian of q:

    H_F^{-1}(q(u)) = J_q(u) H_G^{-1}(u) J_q(u)^T  at every u.

check_condition samples that residual; the flow runners integrate both
sides so trajectories can be compared directly. Maps compose and invert
by the chain rule, which is how the multiplicative-update-as-negative-log
chain is built.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import geometry
from .errors import ConditionError, GridMismatchError, UnsupportedTemperatureError
from .flows import FlowProblem, Trajectory, integrate_cmd, integrate_field
from .potentials import (
    check_in_domain,
    get_potential,
    in_domain,
    tempered_potential,
)

CONDITION_TOL = 1e-9

# Half-width of the band excluded around Jacobian singularities when
# sampling condition points.
SINGULAR_BAND = 1e-3


@dataclass(frozen=True)
class ReparamMap:
    """Differentiable map u -> w with its Jacobian.

    jacobian returns the full (d, k) matrix; elementwise maps wrap their
    diagonal in np.diag. inverse, when declared, holds on the stated
    branch only (square maps).
    """

    name: str
    apply: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None


def quarter_square_map():
    """w = u^2 / 4; inverse fixed to the nonnegative branch u = 2 sqrt(w)."""
    return ReparamMap(
        name="quarter_square",
        apply=lambda u: 0.25 * np.square(u),
        jacobian=lambda u: np.diag(0.5 * np.asarray(u, dtype=float)),
        inverse=lambda w: 2.0 * np.sqrt(w),
    )


def exp_map():
    """w = exp(u), globally invertible."""
    return ReparamMap(
        name="exp",
        apply=np.exp,
        jacobian=lambda u: np.diag(np.exp(u)),
        inverse=np.log,
    )


def sine_map():
    """w = (1 + sin u) / 2 onto (0, 1); inverse on the principal branch."""
    return ReparamMap(
        name="half_sine",
        apply=lambda u: 0.5 * (1.0 + np.sin(u)),
        jacobian=lambda u: np.diag(0.5 * np.cos(u)),
        inverse=lambda w: np.arcsin(2.0 * np.asarray(w, dtype=float) - 1.0),
    )


def identity_map():
    return ReparamMap(
        name="identity",
        apply=lambda u: np.asarray(u, dtype=float).copy(),
        jacobian=lambda u: np.eye(np.asarray(u).size),
        inverse=lambda w: np.asarray(w, dtype=float).copy(),
    )


# --- power map of the tempered family -------------------------------------
#
# Elementwise forms are exposed separately so inner loops can avoid
# building diagonal matrices.

def _check_power_tau(tau):
    if abs(2.0 - tau) < 1e-8:
        raise UnsupportedTemperatureError("the power map is undefined at tau = 2")


def power_map_forward(u, tau):
    """w = ((2-tau)/2)^(2/(2-tau)) |u|^(2/(2-tau)), elementwise."""
    _check_power_tau(tau)
    expo = 2.0 / (2.0 - tau)
    coef = ((2.0 - tau) / 2.0) ** expo
    return coef * np.power(np.abs(u), expo)


def power_map_diag(u, tau):
    """Diagonal of the power-map Jacobian, sign(u) scaled by |u|^(tau/(2-tau))."""
    _check_power_tau(tau)
    expo = tau / (2.0 - tau)
    coef = ((2.0 - tau) / 2.0) ** expo
    u = np.asarray(u, dtype=float)
    return coef * np.sign(u) * np.power(np.abs(u), expo)


def power_map_inverse(w, tau):
    """Nonnegative branch of the power-map inverse."""
    _check_power_tau(tau)
    return (2.0 / (2.0 - tau)) * np.power(np.asarray(w, dtype=float), (2.0 - tau) / 2.0)


def power_map(tau):
    """The power map as a ReparamMap (nonnegative inverse branch)."""
    _check_power_tau(tau)
    return ReparamMap(
        name=f"power:{tau:g}",
        apply=lambda u: power_map_forward(u, tau),
        jacobian=lambda u: np.diag(power_map_diag(u, tau)),
        inverse=lambda w: power_map_inverse(w, tau),
    )


def compose(outer, inner):
    """Map x -> outer(inner(x)) with the chain-rule Jacobian."""
    inverse = None
    if outer.inverse is not None and inner.inverse is not None:
        inverse = lambda w: inner.inverse(outer.inverse(w))
    return ReparamMap(
        name=f"{outer.name}_of_{inner.name}",
        apply=lambda x: outer.apply(inner.apply(x)),
        jacobian=lambda x: np.atleast_2d(outer.jacobian(inner.apply(x)))
        @ np.atleast_2d(inner.jacobian(x)),
        inverse=inverse,
    )


def invert(qmap):
    """Inverse map on the declared branch; Jacobian by matrix inverse."""
    if qmap.inverse is None:
        raise ValueError(f"map {qmap.name!r} declares no inverse")

    def jacobian(w):
        u = qmap.inverse(w)
        return np.linalg.inv(np.atleast_2d(qmap.jacobian(u)))

    return ReparamMap(
        name=f"{qmap.name}_inverse",
        apply=qmap.inverse,
        jacobian=jacobian,
        inverse=qmap.apply,
    )


# ---------------------------------------------------------------------------
# Condition check
# ---------------------------------------------------------------------------

@dataclass
class ConditionReport:
    """Sampled residual of the Hessian-matching condition."""

    triple: str
    max_residual: float
    passed: bool
    n_samples: int

    def as_dict(self):
        return {
            "triple": self.triple,
            "max_residual": self.max_residual,
            "pass": self.passed,
            "n_samples": self.n_samples,
        }


def check_condition(target, base, qmap, samples, tol=CONDITION_TOL, label=None):
    """Evaluate the Hessian-matching residual at the given u samples.

    The residual at u is the largest entry of
    |H_F^{-1}(q(u)) - J_q H_G^{-1} J_q^T|; the check passes when the
    maximum over samples is at most tol.
    """
    worst = 0.0
    count = 0
    for u in samples:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        check_in_domain(base, u)
        w = qmap.apply(u)
        check_in_domain(target, w)
        jac = np.atleast_2d(qmap.jacobian(u))
        lhs = np.diag(1.0 / target.hessian_diag(w))
        rhs = (jac / base.hessian_diag(u)[None, :]) @ jac.T
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        count += 1
    return ConditionReport(
        triple=label or f"{target.name}/{base.name}/{qmap.name}",
        max_residual=worst,
        passed=worst <= tol,
        n_samples=count,
    )


# ---------------------------------------------------------------------------
# Flow runners
# ---------------------------------------------------------------------------

@dataclass
class PairedTrajectories:
    """u-space and pushed-forward w-space trajectories of one run."""

    u: Trajectory
    w: Trajectory


def _local_condition_guard(target, base, qmap, u0, override):
    if override:
        return
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    offsets = [np.zeros_like(u0)]
    scale = 0.02 * np.maximum(1.0, np.abs(u0))
    for i in range(u0.size):
        e = np.zeros_like(u0)
        e[i] = scale[i]
        offsets.extend([e, -e])
    samples = []
    for off in offsets:
        u = u0 + off
        if in_domain(base, u) and in_domain(target, qmap.apply(u)):
            samples.append(u)
    report = check_condition(target, base, qmap, samples)
    if not report.passed:
        raise ConditionError(
            f"Hessian-matching condition fails near u0 "
            f"(residual {report.max_residual:.3e}); pass override=True to run anyway",
            max_residual=report.max_residual,
        )


def reparam_flow(target, base, qmap, problem, u0, step, scheme="rk4",
                 record_every=1, override=False, validate=True):
    """Integrate the u-space flow of the composite loss and push it forward.

    The field is u' = -eta H_G^{-1}(u) J_q(u)^T grad L(q(u)). Refuses to
    run when the matching condition fails near u0 unless override is set.
    """
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    if validate:
        problem.validate()
    start_gap = float(np.max(np.abs(qmap.apply(u0) - problem.w0)))
    if start_gap > 1e-10:
        raise ValueError(f"q(u0) misses w0 by {start_gap:.3e}")
    _local_condition_guard(target, base, qmap, u0, override)
    eta = problem.eta
    grad = problem.grad

    def rhs(u):
        jac = np.atleast_2d(qmap.jacobian(u))
        return (-eta) * (jac.T @ grad(qmap.apply(u))) / base.hessian_diag(u)

    times, ustates = integrate_field(
        rhs, u0, step, problem.horizon, scheme=scheme,
        record_every=record_every, domain=base.domain,
    )
    wstates = np.apply_along_axis(qmap.apply, 1, ustates)
    return PairedTrajectories(
        u=Trajectory(times=times, states=ustates),
        w=Trajectory(times=times, states=wstates),
    )


def reparam_flow_constrained(target, base, qmap, constraint, problem, u0, step,
                             scheme="rk4", record_every=1, override=False,
                             validate=True):
    """Constrained variant using the pulled-back oblique projector.

    The field is u' = -eta H_G^{-1} P(u) J_q^T grad L(q(u)) with P the
    projector of the composite constraint psi(q(u)) = 0; the pushed
    trajectory stays on the feasible manifold up to integration drift.
    """
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    if validate:
        problem.validate()
    start_gap = float(np.max(np.abs(qmap.apply(u0) - problem.w0)))
    if start_gap > 1e-10:
        raise ValueError(f"q(u0) misses w0 by {start_gap:.3e}")
    miss = float(np.max(np.abs(constraint.psi(qmap.apply(u0)))))
    if miss > 1e-10:
        raise ValueError(f"q(u0) violates the constraint by {miss:.3e}")
    _local_condition_guard(target, base, qmap, u0, override)
    eta = problem.eta
    grad = problem.grad

    def rhs(u):
        jac = np.atleast_2d(qmap.jacobian(u))
        proj = geometry.reparam_projection_matrix(base, constraint, qmap, u)
        return (-eta) * (proj @ (jac.T @ grad(qmap.apply(u)))) / base.hessian_diag(u)

    times, ustates = integrate_field(
        rhs, u0, step, problem.horizon, scheme=scheme,
        record_every=record_every, domain=base.domain,
    )
    wstates = np.apply_along_axis(qmap.apply, 1, ustates)
    return PairedTrajectories(
        u=Trajectory(times=times, states=ustates),
        w=Trajectory(times=times, states=wstates),
    )


# ---------------------------------------------------------------------------
# Trajectory comparison
# ---------------------------------------------------------------------------

@dataclass
class EquivalenceReport:
    """Deviation between two trajectories on a shared time grid."""

    max_dev: float
    per_time_devs: np.ndarray
    times: np.ndarray

    def as_dict(self):
        return {
            "max_dev": self.max_dev,
            "per_time_devs": self.per_time_devs.tolist(),
            "times": self.times.tolist(),
        }


def equivalence_report(traj_a, traj_b):
    """Max-norm deviation over time; requires identical grids."""
    if traj_a.times.shape != traj_b.times.shape or np.max(
        np.abs(traj_a.times - traj_b.times)
    ) > 1e-12:
        raise GridMismatchError("trajectories do not share a time grid")
    devs = np.max(np.abs(traj_a.states - traj_b.states), axis=1)
    return EquivalenceReport(
        max_dev=float(np.max(devs)), per_time_devs=devs, times=traj_a.times.copy()
    )


# ---------------------------------------------------------------------------
# Registered triples
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReparamTriple:
    """A named (target, base, map) pairing with its sampling region.

    sample_box bounds the u-space sampling used by condition checks;
    singular_points lists u values around which a band of width
    SINGULAR_BAND is excluded (Jacobian singularities or boundary
    preimages). linear_losses_safe marks targets whose flows survive a
    linear loss over long horizons without leaving their domain.
    """

    name: str
    target: object
    base: object
    qmap: ReparamMap
    sample_box: tuple
    singular_points: tuple = ()
    constraint: Optional[object] = None
    linear_losses_safe: bool = False
    quadratic_center_range: tuple = (0.5, 2.5)
    quadratic_curvature_range: tuple = (3.0, 6.0)
    start_range: tuple = (0.5, 1.5)


def _tempered_triple(tau):
    return ReparamTriple(
        name=f"tempered_as_gd:{tau:g}",
        target=tempered_potential(tau),
        base=get_potential("gd"),
        qmap=power_map(tau),
        sample_box=(-3.0, 3.0),
        singular_points=(0.0,),
        linear_losses_safe=abs(tau - 1.0) < 1e-12,
    )


def _builtin_triples():
    gd = get_potential("gd")
    egu = get_potential("egu")
    burg = get_potential("burg")
    chained = compose(quarter_square_map(), invert(exp_map()))
    return {
        "egu_as_gd": ReparamTriple(
            name="egu_as_gd",
            target=egu,
            base=gd,
            qmap=quarter_square_map(),
            sample_box=(-3.0, 3.0),
            singular_points=(0.0,),
            linear_losses_safe=True,
        ),
        "burg_as_gd": ReparamTriple(
            name="burg_as_gd",
            target=burg,
            base=gd,
            qmap=exp_map(),
            sample_box=(-1.5, 1.1),
        ),
        "reduced_eg2_as_gd": ReparamTriple(
            name="reduced_eg2_as_gd",
            target=get_potential("reduced_eg2"),
            base=gd,
            qmap=sine_map(),
            sample_box=(-1.2, 1.2),
            quadratic_center_range=(0.2, 0.8),
            quadratic_curvature_range=(6.0, 12.0),
            start_range=(0.2, 0.8),
        ),
        "egu_as_burg": ReparamTriple(
            name="egu_as_burg",
            target=egu,
            base=burg,
            qmap=chained,
            sample_box=(1.1, 3.5),
            quadratic_center_range=(0.3, 1.5),
            start_range=(0.3, 1.5),
        ),
        "eg_as_gd_projected": ReparamTriple(
            name="eg_as_gd_projected",
            target=egu,
            base=gd,
            qmap=quarter_square_map(),
            sample_box=(-3.0, 3.0),
            singular_points=(0.0,),
            constraint=geometry.simplex_constraint(),
            linear_losses_safe=True,
        ),
    }


DEFAULT_TEMPERED_TAUS = (0.0, 0.25, 0.5, 0.75, 1.0)


def registered_triple_names(tempered_taus=DEFAULT_TEMPERED_TAUS):
    names = list(_builtin_triples())
    names.extend(f"tempered_as_gd:{tau:g}" for tau in tempered_taus)
    return names


def get_triple(name):
    """Look up a registered triple, e.g. 'egu_as_gd' or 'tempered_as_gd:0.5'."""
    builtin = _builtin_triples()
    if name in builtin:
        return builtin[name]
    if name.startswith("tempered_as_gd:"):
        try:
            tau = float(name.split(":", 1)[1])
        except ValueError:
            raise KeyError(f"malformed triple name {name!r}") from None
        return _tempered_triple(tau)
    raise KeyError(
        f"unknown triple {name!r}; valid names: "
        + ", ".join(registered_triple_names())
    )


def sample_condition_points(triple, n, rng, dim=4):
    """Draw u-space points in the triple's box, avoiding singular bands."""
    lo, hi = triple.sample_box
    points = []
    while len(points) < n:
        u = rng.uniform(lo, hi, size=dim)
        for c in triple.singular_points:
            near = np.abs(u - c) < SINGULAR_BAND
            u[near] = c + SINGULAR_BAND * np.where(u[near] >= c, 1.0, -1.0) * (
                1.0 + rng.uniform(0.0, 1.0, size=int(near.sum()))
            )
        points.append(u)
    return points


def check_triple(name, n_samples=100, seed=0, dim=4, tol=CONDITION_TOL):
    """Run the condition check for one registered triple."""
    triple = get_triple(name)
    rng = np.random.default_rng(seed)
    samples = sample_condition_points(triple, n_samples, rng, dim=dim)
    return check_condition(triple.target, triple.base, triple.qmap, samples,
                           tol=tol, label=name)


def sample_problem(triple, seed, d=10, eta=1.0, horizon=5.0):
    """Seeded convex loss and matched start points for one triple.

    Losses alternate between linear and diagonal-quadratic forms where
    the target potential tolerates linear losses over the horizon;
    otherwise diagonal quadratics centered inside the safe range are
    used so trajectories stay strictly inside the domain.

    Returns (problem, u0).
    """
    rng = np.random.default_rng(seed)
    if triple.constraint is not None:
        raw = rng.uniform(0.5, 1.5, size=d)
        w0 = raw / np.sum(raw)
    else:
        w0 = rng.uniform(*triple.start_range, size=d)
    use_linear = triple.linear_losses_safe and seed % 2 == 0
    if triple.constraint is not None:
        g = rng.uniform(-2.0, 2.0, size=d)
        loss = lambda w: float(g @ w)
        grad = lambda w: g
    elif use_linear:
        g = rng.uniform(0.1, 0.8, size=d)
        loss = lambda w: float(g @ w)
        grad = lambda w: g
    else:
        a = rng.uniform(*triple.quadratic_curvature_range, size=d)
        c = rng.uniform(*triple.quadratic_center_range, size=d)
        loss = lambda w: 0.5 * float(a @ np.square(w - c))
        grad = lambda w: a * (w - c)
    problem = FlowProblem(
        loss=loss, grad=grad, w0=w0, eta=eta, horizon=horizon,
        potential=triple.target, constraint=triple.constraint,
    )
    u0 = triple.qmap.inverse(w0)
    return problem, u0


def run_equivalence(name, seed, d=10, eta=1.0, horizon=5.0, step=1e-3,
                    scheme="rk4", target_override=None):
    """Integrate a triple's direct and reparameterized flows and compare.

    target_override substitutes a different potential into the direct
    flow only (deliberate-mismatch diagnostics); the reparameterized
    side always runs as registered.
    """
    triple = get_triple(name)
    problem, u0 = sample_problem(triple, seed, d=d, eta=eta, horizon=horizon)
    direct_problem = problem
    if target_override is not None:
        direct_problem = FlowProblem(
            loss=problem.loss, grad=problem.grad, w0=problem.w0,
            eta=problem.eta, horizon=problem.horizon,
            potential=target_override, constraint=problem.constraint,
        )
    direct = integrate_cmd(direct_problem, step, scheme=scheme)
    if triple.constraint is not None:
        paired = reparam_flow_constrained(
            triple.target, triple.base, triple.qmap, triple.constraint,
            problem, u0, step, scheme=scheme,
        )
    else:
        paired = reparam_flow(
            triple.target, triple.base, triple.qmap, problem, u0, step,
            scheme=scheme,
        )
    return equivalence_report(direct, paired.w), direct, paired
