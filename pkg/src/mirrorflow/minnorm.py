"""Two-sided tempered flows and the minimum-norm regression experiment.

Signed weights are carried as a difference of two nonnegative halves,
w = w_plus - w_minus, each driven through the tempered link with
opposite gradient signs. On an underdetermined least-squares problem
these flows interpolate between plain gradient descent (tau = 0) and the
multiplicative update (tau = 1), and converge to interpolating solutions
of minimum L_{2-tau} norm as the uniform start scale goes to zero.

Independent oracles (dense pseudoinverse solve, a self-contained simplex
LP, projected gradient descent on the norm objective) certify where the
flows land, and a KKT checker measures optimality residuals directly.
"""

import json
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import lp
from .errors import MirrorFlowError, NoConvergenceError, NumericalError
from .potentials import exp_tau, log_tau
from .reparam import power_map_diag, power_map_forward, power_map_inverse


@dataclass(frozen=True)
class RegressionInstance:
    """Underdetermined least-squares data: X (N x d, N < d), targets y."""

    X: np.ndarray
    y: np.ndarray
    seed: int
    sparsity: Optional[int] = None

    @property
    def n_rows(self):
        return self.X.shape[0]

    @property
    def n_cols(self):
        return self.X.shape[1]

    def residual(self, w):
        return self.X @ w - self.y

    def loss(self, w):
        r = self.residual(w)
        return 0.5 * float(r @ r)

    def grad(self, w):
        return self.X.T @ self.residual(w)


def make_instance(n_rows=10, n_cols=40, seed=0, sparsity=None):
    """Standard-normal design with a sparse unit-entry planted target.

    The planted vector has sparsity nonzero entries (default d/10), so
    the data reward norms that prefer sparse interpolants.
    """
    if n_rows >= n_cols:
        raise ValueError("instance must be underdetermined (N < d)")
    rng = np.random.default_rng(seed)
    k = sparsity if sparsity is not None else max(1, n_cols // 10)
    X = rng.standard_normal((n_rows, n_cols))
    support = rng.choice(n_cols, size=k, replace=False)
    w_star = np.zeros(n_cols)
    w_star[support] = 1.0
    y = X @ w_star
    if np.linalg.matrix_rank(X) < n_rows:
        raise ValueError("design matrix is rank deficient; change the seed")
    return RegressionInstance(X=X, y=y, seed=seed, sparsity=k)


def save_instance(inst, prefix):
    """Write (<prefix>_X.csv, <prefix>_y.csv, <prefix>.json)."""
    np.savetxt(f"{prefix}_X.csv", inst.X, delimiter=",", fmt="%.17g")
    np.savetxt(f"{prefix}_y.csv", inst.y[None, :], delimiter=",", fmt="%.17g")
    manifest = {
        "N": inst.n_rows,
        "d": inst.n_cols,
        "seed": inst.seed,
        "sparsity": inst.sparsity,
    }
    with open(f"{prefix}.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_instance(prefix):
    """Inverse of save_instance; accepts the prefix or the manifest path."""
    if prefix.endswith(".json"):
        prefix = prefix[:-5]
    with open(f"{prefix}.json") as fh:
        manifest = json.load(fh)
    X = np.loadtxt(f"{prefix}_X.csv", delimiter=",", ndmin=2)
    y = np.loadtxt(f"{prefix}_y.csv", delimiter=",").reshape(-1)
    if X.shape != (manifest["N"], manifest["d"]) or y.size != manifest["N"]:
        raise ValueError("instance files disagree with their manifest")
    return RegressionInstance(X=X, y=y, seed=manifest["seed"],
                              sparsity=manifest.get("sparsity"))


# ---------------------------------------------------------------------------
# Two-sided flows
# ---------------------------------------------------------------------------

@dataclass
class PmState:
    """Both nonnegative halves plus the running gradient integral.

    accumulated_integral holds eta * integral of X^T delta, the quantity
    the optimality multiplier is reconstructed from.
    """

    w_plus: np.ndarray
    w_minus: np.ndarray
    accumulated_integral: np.ndarray

    @property
    def weights(self):
        return self.w_plus - self.w_minus


@dataclass
class PmTrajectory:
    times: np.ndarray
    w_plus: np.ndarray
    w_minus: np.ndarray
    integrals: np.ndarray
    converged: bool

    @property
    def weights(self):
        return self.w_plus - self.w_minus

    @property
    def final_state(self):
        return PmState(
            w_plus=self.w_plus[-1].copy(),
            w_minus=self.w_minus[-1].copy(),
            accumulated_integral=self.integrals[-1].copy(),
        )


def _rk4_step(rhs, y, h):
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def tempered_egu_pm_flow(inst, tau, alpha, eta, step, horizon,
                         stepping="integral", record_every=None,
                         stop_rtol=1e-6, check_every=10):
    """Integrate the two-sided tempered flow on the least-squares loss.

    Both halves start at alpha * 1. With stepping="integral" the state is
    the accumulated gradient integral A(t) and the halves are recovered
    through the clipped inverse link, which keeps the exact memory of
    boundary crossings. stepping="primal" steps the halves directly in
    metric form (clamping overshoot at the boundary) and accumulates
    A(t) alongside; it exists as an independent cross-check route.

    Integration stops early once ||X w - y|| <= stop_rtol * ||y||.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("the two-sided flow is defined for 0 <= tau <= 1")
    if alpha <= 0:
        raise ValueError("start scale alpha must be positive")
    X = inst.X
    y = inst.y
    d = inst.n_cols
    ell0 = float(log_tau(np.array([alpha]), tau)[0])
    y_norm = float(np.linalg.norm(y))
    stop_abs = stop_rtol * max(y_norm, 1e-300)
    n_steps = max(1, int(round(horizon / step)))
    if record_every is None:
        record_every = max(1, n_steps // 2000)

    if stepping == "integral":
        def halves(acc):
            return exp_tau(ell0 - acc, tau), exp_tau(ell0 + acc, tau)

        def rhs(acc):
            wp, wm = halves(acc)
            return eta * (X.T @ (X @ (wp - wm) - y))

        state = np.zeros(d)

        def unpack(acc):
            wp, wm = halves(acc)
            return wp, wm, acc
    elif stepping == "primal":
        def rhs(z):
            wp = np.maximum(z[:d], 0.0)
            wm = np.maximum(z[d:2 * d], 0.0)
            g = eta * (X.T @ (X @ (wp - wm) - y))
            return np.concatenate([-np.power(wp, tau) * g,
                                   np.power(wm, tau) * g, g])

        state = np.concatenate([np.full(d, float(alpha)),
                                np.full(d, float(alpha)), np.zeros(d)])

        def unpack(z):
            return (np.maximum(z[:d], 0.0), np.maximum(z[d:2 * d], 0.0),
                    z[2 * d:])
    else:
        raise ValueError("stepping must be 'integral' or 'primal'")

    times = [0.0]
    wp0, wm0, acc0 = unpack(state)
    wps, wms, accs = [wp0], [wm0], [acc0]
    converged = False
    last = 0
    for i in range(n_steps):
        state = _rk4_step(rhs, state, step)
        if stepping == "primal":
            state[:2 * d] = np.maximum(state[:2 * d], 0.0)
        if not np.all(np.isfinite(state)):
            raise NumericalError(
                f"two-sided flow blew up at t = {(i + 1) * step:g} (tau={tau:g})"
            )
        record = (i + 1) % record_every == 0 or i + 1 == n_steps
        if (i + 1) % check_every == 0 or record:
            wp, wm, acc = unpack(state)
            if record:
                times.append((i + 1) * step)
                wps.append(wp)
                wms.append(wm)
                accs.append(acc)
                last = i + 1
            if np.linalg.norm(X @ (wp - wm) - y) <= stop_abs:
                converged = True
                if not record:
                    times.append((i + 1) * step)
                    wps.append(wp)
                    wms.append(wm)
                    accs.append(acc)
                break
    if not converged and last != n_steps and times[-1] < n_steps * step:
        wp, wm, acc = unpack(state)
        times.append(n_steps * step)
        wps.append(wp)
        wms.append(wm)
        accs.append(acc)
    return PmTrajectory(
        times=np.array(times), w_plus=np.array(wps), w_minus=np.array(wms),
        integrals=np.array(accs), converged=converged,
    )


@dataclass
class PmReparamTrajectory:
    times: np.ndarray
    u_plus: np.ndarray
    u_minus: np.ndarray
    tau: float
    converged: bool

    @property
    def weights(self):
        return (power_map_forward(self.u_plus, self.tau)
                - power_map_forward(self.u_minus, self.tau))

    @property
    def final_weights(self):
        return (power_map_forward(self.u_plus[-1], self.tau)
                - power_map_forward(self.u_minus[-1], self.tau))

    def final_pm_state(self):
        """Halves in weight space (no integral is carried in u-space)."""
        return PmState(
            w_plus=power_map_forward(self.u_plus[-1], self.tau),
            w_minus=power_map_forward(self.u_minus[-1], self.tau),
            accumulated_integral=None,
        )


def tempered_reparam_pm_flow(inst, tau, alpha, eta, step, horizon,
                             record_every=None, stop_rtol=1e-6,
                             check_every=10):
    """Plain gradient flow on the power-map parameters of both halves.

    u halves start on the positive branch with q(u(0)) = alpha * 1; the
    pushed-forward weights track the direct two-sided flow.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("the two-sided flow is defined for 0 <= tau <= 1")
    if alpha <= 0:
        raise ValueError("start scale alpha must be positive")
    X = inst.X
    y = inst.y
    d = inst.n_cols
    u0 = float(power_map_inverse(np.array([alpha]), tau)[0])
    y_norm = float(np.linalg.norm(y))
    stop_abs = stop_rtol * max(y_norm, 1e-300)
    n_steps = max(1, int(round(horizon / step)))
    if record_every is None:
        record_every = max(1, n_steps // 2000)

    def rhs(z):
        up = z[:d]
        um = z[d:]
        w = power_map_forward(up, tau) - power_map_forward(um, tau)
        g = eta * (X.T @ (X @ w - y))
        return np.concatenate([-power_map_diag(up, tau) * g,
                               power_map_diag(um, tau) * g])

    state = np.full(2 * d, u0)
    times = [0.0]
    ups, ums = [state[:d].copy()], [state[d:].copy()]
    converged = False
    for i in range(n_steps):
        state = _rk4_step(rhs, state, step)
        if not np.all(np.isfinite(state)):
            raise NumericalError(
                f"reparameterized flow blew up at t = {(i + 1) * step:g} (tau={tau:g})"
            )
        record = (i + 1) % record_every == 0 or i + 1 == n_steps
        if record:
            times.append((i + 1) * step)
            ups.append(state[:d].copy())
            ums.append(state[d:].copy())
        if (i + 1) % check_every == 0 or record:
            w = (power_map_forward(state[:d], tau)
                 - power_map_forward(state[d:], tau))
            if np.linalg.norm(X @ w - y) <= stop_abs:
                converged = True
                if not record:
                    times.append((i + 1) * step)
                    ups.append(state[:d].copy())
                    ums.append(state[d:].copy())
                break
    return PmReparamTrajectory(
        times=np.array(times), u_plus=np.array(ups), u_minus=np.array(ums),
        tau=tau, converged=converged,
    )


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def min_l2_solution(inst):
    """Minimum-Euclidean-norm interpolant by a dense normal solve."""
    X = inst.X
    return X.T @ np.linalg.solve(X @ X.T, inst.y)


def _null_projector(X):
    XtXXtInv = X.T @ np.linalg.inv(X @ X.T)
    return np.eye(X.shape[1]) - XtXXtInv @ X, XtXXtInv


def min_power_norm_solution(inst, beta, stat_tol=1e-6, restarts=5, seed=0,
                            max_iter=200000):
    """min sum |w|^beta s.t. X w = y, by projected gradient descent.

    The affine projection is exact each iteration; stationarity is the
    max-norm of the projected gradient. Restarted from several feasible
    points, best objective kept. Valid for 1 < beta <= 2.
    """
    if not 1.0 < beta <= 2.0:
        raise ValueError("power-norm oracle covers exponents in (1, 2]")
    X = inst.X
    proj, _ = _null_projector(X)
    w_part = min_l2_solution(inst)
    rng = np.random.default_rng(seed)

    def objective(w):
        return float(np.sum(np.power(np.abs(w), beta)))

    def gradient(w):
        return beta * np.sign(w) * np.power(np.abs(w), beta - 1.0)

    best_w = None
    best_val = np.inf
    for r in range(restarts):
        w = w_part if r == 0 else w_part + proj @ rng.standard_normal(inst.n_cols)
        val = objective(w)
        step = 0.5
        done = False
        for _ in range(max_iter):
            pg = proj @ gradient(w)
            if float(np.max(np.abs(pg))) <= stat_tol:
                done = True
                break
            sq = float(pg @ pg)
            while step > 1e-18:
                cand = w - step * pg
                cand_val = objective(cand)
                if cand_val <= val - 0.25 * step * sq:
                    break
                step *= 0.5
            w = w - step * pg
            val = objective(w)
            step = min(step * 1.3, 1e3)
            # keep exact feasibility against roundoff drift
            w = w_part + proj @ (w - w_part)
        if not done:
            raise NoConvergenceError(
                f"projected descent stalled above stationarity {stat_tol:g}",
                residual=float(np.max(np.abs(proj @ gradient(w)))),
            )
        if val < best_val:
            best_val = val
            best_w = w
    return best_w


def min_norm_oracle(inst, tau, seed=0):
    """Independent minimum-L_{2-tau}-norm interpolant for tau in [0, 1]."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("oracle covers temperatures in [0, 1]")
    if tau == 0.0:
        return min_l2_solution(inst)
    if tau == 1.0:
        w, _, _ = lp.basis_pursuit(inst.X, inst.y)
        return w
    return min_power_norm_solution(inst, 2.0 - tau, seed=seed)


def split_weights(w):
    """Split a signed vector into its nonnegative halves."""
    w = np.asarray(w, dtype=float)
    return PmState(
        w_plus=np.maximum(w, 0.0),
        w_minus=np.maximum(-w, 0.0),
        accumulated_integral=None,
    )


def norm_2mt(w, tau):
    """The L_{2-tau} norm."""
    beta = 2.0 - tau
    return float(np.sum(np.power(np.abs(w), beta)) ** (1.0 / beta))


# ---------------------------------------------------------------------------
# KKT residuals
# ---------------------------------------------------------------------------

@dataclass
class KktReport:
    feasibility: float
    stationarity: float
    slackness: float

    def as_dict(self):
        return {
            "feasibility": self.feasibility,
            "stationarity": self.stationarity,
            "slackness": self.slackness,
        }


def _fit_dual_vector(X, targets_rows, targets_vals):
    """Least-squares multiplier fit; returns X^T lambda as a d-vector."""
    if not targets_rows:
        return np.zeros(X.shape[1])
    A = np.stack(targets_rows)
    lam, *_ = np.linalg.lstsq(A, np.asarray(targets_vals), rcond=None)
    return X.T @ lam


def kkt_residuals(inst, tau, state, alpha=0.0, dual_vector=None):
    """Optimality residuals of a two-sided state for the norm problem.

    feasibility is the max-norm equation residual. The multiplier image
    v = X^T lambda comes from the accumulated integral when the state
    carries one (scaled by -(1-tau)), otherwise from a least-squares fit
    on the active coordinates. stationarity is the largest one-sided
    violation of the dual-feasibility inequalities; slackness the
    largest complementary product. alpha carries the start scale of the
    flow into the finite-scale correction term (0 for ideal solutions).

    For tau = 1 the conditions are checked on the log scale: the
    integral identity when the multiplier comes from the flow, the unit
    certificate (|v| <= 1, v = sign(w) on the support) when fitted.
    """
    X = inst.X
    wp = np.maximum(state.w_plus, 0.0)
    wm = np.maximum(state.w_minus, 0.0)
    w = wp - wm
    feasibility = float(np.max(np.abs(X @ w - inst.y)))
    from_flow = dual_vector is None and state.accumulated_integral is not None
    act_tol = 1e-10 * max(1.0, float(np.max(np.abs(w)))) if alpha == 0 else 10.0 * alpha

    if abs(tau - 1.0) < 1e-12:
        if from_flow:
            v = -state.accumulated_integral
            lp_ = np.log(np.maximum(wp, 1e-300) / alpha)
            lm_ = np.log(np.maximum(wm, 1e-300) / alpha)
            stationarity = float(max(np.max(np.abs(lp_ - v)),
                                     np.max(np.abs(lm_ + v))))
            slackness = float(np.max(np.abs(wp * wm - alpha ** 2)))
            return KktReport(feasibility, stationarity, slackness)
        if dual_vector is None:
            rows, vals = [], []
            for i in range(inst.n_cols):
                if abs(w[i]) > act_tol:
                    rows.append(X[:, i])
                    vals.append(np.sign(w[i]))
            v = _fit_dual_vector(X, rows, vals)
        else:
            v = dual_vector
        g_plus = v - 1.0
        g_minus = -v - 1.0
    else:
        offset = alpha ** (1.0 - tau)
        if from_flow:
            v = -(1.0 - tau) * state.accumulated_integral
        elif dual_vector is not None:
            v = dual_vector
        else:
            rows, vals = [], []
            for i in range(inst.n_cols):
                if wp[i] > act_tol:
                    rows.append(X[:, i])
                    vals.append(wp[i] ** (1.0 - tau) - offset)
                if wm[i] > act_tol:
                    rows.append(-X[:, i])
                    vals.append(wm[i] ** (1.0 - tau) - offset)
            v = _fit_dual_vector(X, rows, vals)
        g_plus = offset + v - np.power(wp, 1.0 - tau)
        g_minus = offset - v - np.power(wm, 1.0 - tau)

    stationarity = float(max(np.max(np.maximum(g_plus, 0.0)),
                             np.max(np.maximum(g_minus, 0.0))))
    slackness = float(max(np.max(np.abs(g_plus * wp)),
                          np.max(np.abs(g_minus * wm))))
    return KktReport(feasibility, stationarity, slackness)


# ---------------------------------------------------------------------------
# Norm sweep
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ("tau", "method", "norm", "oracle_norm", "feasibility",
                 "stationarity", "slackness", "runtime_s")


def norm_sweep(inst, taus, alpha, eta, step, horizon, stop_rtol=1e-6,
               oracle_seed=0):
    """Run both flow variants per temperature and compare against oracles.

    Returns a list of row dicts with the SWEEP_COLUMNS keys plus an
    'error' key (empty string when the row succeeded). Flow failures are
    captured per row so a sweep always returns a full table.
    """
    rows = []
    for tau in taus:
        oracle_norm = np.nan
        try:
            oracle = min_norm_oracle(inst, tau, seed=oracle_seed)
            oracle_norm = norm_2mt(oracle, tau)
        except (MirrorFlowError, ValueError) as exc:
            oracle_err = f"oracle: {exc}"
        else:
            oracle_err = ""
        for method in ("direct", "reparam"):
            row = {"tau": tau, "method": method, "norm": np.nan,
                   "oracle_norm": oracle_norm, "feasibility": np.nan,
                   "stationarity": np.nan, "slackness": np.nan,
                   "runtime_s": 0.0, "error": oracle_err}
            start = time.perf_counter()
            try:
                if method == "direct":
                    traj = tempered_egu_pm_flow(
                        inst, tau, alpha, eta, step, horizon,
                        stop_rtol=stop_rtol,
                    )
                    state = traj.final_state
                else:
                    rtraj = tempered_reparam_pm_flow(
                        inst, tau, alpha, eta, step, horizon,
                        stop_rtol=stop_rtol,
                    )
                    state = rtraj.final_pm_state()
                report = kkt_residuals(inst, tau, state, alpha=alpha)
                row["norm"] = norm_2mt(state.weights, tau)
                row["feasibility"] = report.feasibility
                row["stationarity"] = report.stationarity
                row["slackness"] = report.slackness
            except MirrorFlowError as exc:
                row["error"] = (row["error"] + "; " if row["error"] else "") + str(exc)
            row["runtime_s"] = time.perf_counter() - start
            rows.append(row)
    return rows


def write_sweep_csv(path, rows, timing=True):
    """Write sweep rows with the pinned column order.

    timing=False zeroes the runtime column so identical configurations
    produce byte-identical files.
    """
    lines = [",".join(SWEEP_COLUMNS)]
    for row in rows:
        rt = row["runtime_s"] if timing else 0.0
        lines.append(
            f"{row['tau']:g},{row['method']},{row['norm']:.12g},"
            f"{row['oracle_norm']:.12g},{row['feasibility']:.6g},"
            f"{row['stationarity']:.6g},{row['slackness']:.6g},{rt:.3f}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
