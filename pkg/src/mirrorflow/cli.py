"""Command-line experiment runner.

Subcommands: flow (integrate one problem and dump the trajectory),
equiv (direct vs reparameterized flow comparison), minnorm (two-sided
temperature sweep against the oracles), check (Hessian-matching
condition over the registry). Outputs are CSV or JSON written
atomically, each accompanied by a manifest echoing the effective
configuration. Exit codes: 0 success, 1 numerical failure, 2
configuration error, 3 tolerance failure.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import minnorm, reparam
from .errors import ConditionError, MirrorFlowError
from .flows import FlowProblem, integrate_cmd
from .geometry import get_constraint
from .potentials import REGISTRY_NAMES, get_potential

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2
EXIT_TOLERANCE = 3


class ConfigError(ValueError):
    pass


def _default_seed():
    try:
        return int(os.environ.get("MIRRORFLOW_SEED", "0"))
    except ValueError:
        return 0


def _write_atomic(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json_atomic(path, payload):
    _write_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_manifest(out_path, config):
    _write_json_atomic(f"{out_path}.manifest.json", {"config": config})


def _parse_vector(spec, what="vector"):
    """Comma-separated floats, or 'rand:<dim>:<seed>' for seeded normals."""
    if spec.startswith("rand:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"bad random {what} spec {spec!r}; use rand:<dim>:<seed>")
        try:
            dim, seed = int(parts[1]), int(parts[2])
        except ValueError:
            raise ConfigError(f"bad random {what} spec {spec!r}") from None
        if dim <= 0:
            raise ConfigError(f"{what} dimension must be positive")
        return np.random.default_rng(seed).standard_normal(dim)
    try:
        return np.array([float(v) for v in spec.split(",")])
    except ValueError:
        raise ConfigError(f"cannot parse {what} spec {spec!r}") from None


def _parse_loss(spec, dim_hint=None):
    """Loss mini-language: linear:<g>, quadratic:<a>, lsq:<instance>."""
    if ":" not in spec:
        raise ConfigError(f"bad loss spec {spec!r}; use linear:…, quadratic:… or lsq:…")
    kind, rest = spec.split(":", 1)
    if kind == "linear":
        g = _parse_vector(rest, "gradient")
        return (lambda w: float(g @ w)), (lambda w: g), g.size
    if kind == "quadratic":
        a = _parse_vector(rest, "curvature")
        if np.any(a <= 0):
            raise ConfigError("quadratic curvatures must be positive")
        return (lambda w: 0.5 * float(a @ np.square(w))), (lambda w: a * w), a.size
    if kind == "lsq":
        try:
            inst = minnorm.load_instance(rest)
        except OSError as exc:
            raise ConfigError(f"cannot load instance {rest!r}: {exc}") from None
        return inst.loss, inst.grad, inst.n_cols
    raise ConfigError(f"unknown loss kind {kind!r}")


def _apply_config_file(parser, argv):
    """Seed parser defaults from an optional key=value config file."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise ConfigError("--config needs a file path")
    path = argv[idx + 1]
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    overrides = {}
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"bad config line {line!r}; expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        overrides[key.replace("-", "_")] = value
    parser.set_defaults(**overrides)
    return [a for i, a in enumerate(argv) if i not in (idx, idx + 1)]


def _positive(value, name):
    if value is None or value <= 0:
        raise ConfigError(f"{name} must be positive (got {value!r})")
    return value


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_flow(args):
    try:
        potential = get_potential(args.potential)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    constraint = None
    if args.constraint:
        try:
            constraint = get_constraint(args.constraint)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
    loss, grad, loss_dim = _parse_loss(args.loss)
    w0 = _parse_vector(args.w0, "start point")
    if w0.size == 1 and loss_dim > 1:
        w0 = np.full(loss_dim, w0[0])
    if loss_dim not in (1, w0.size):
        raise ConfigError(
            f"loss dimension {loss_dim} does not match start point of size {w0.size}"
        )
    eta = _positive(float(args.eta), "eta")
    horizon = _positive(float(args.T), "T")
    step = _positive(float(args.step), "step")
    if args.scheme not in ("euler", "rk4"):
        raise ConfigError(f"unknown scheme {args.scheme!r}; choose euler or rk4")
    problem = FlowProblem(loss=loss, grad=grad, w0=w0, eta=eta,
                          horizon=horizon, potential=potential,
                          constraint=constraint)
    start = time.perf_counter()
    traj = integrate_cmd(problem, step, scheme=args.scheme,
                         record_every=args.record_every)
    wall = time.perf_counter() - start
    traj.to_csv(args.out)
    config = {
        "command": "flow", "potential": args.potential,
        "constraint": args.constraint, "loss": args.loss, "w0": args.w0,
        "eta": eta, "T": horizon, "step": step, "scheme": args.scheme,
        "record_every": args.record_every, "out": args.out,
    }
    _write_manifest(args.out, config)
    final = traj.final_state
    print("final state:", np.array2string(final, precision=8))
    print(f"final loss: {problem.loss(final):.10g}")
    print(f"wall time: {wall:.3f} s")
    return EXIT_OK


def cmd_equiv(args):
    try:
        reparam.get_triple(args.triple)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    override = None
    if args.potential_override:
        try:
            override = get_potential(args.potential_override)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
    eta = _positive(float(args.eta), "eta")
    horizon = _positive(float(args.T), "T")
    step = _positive(float(args.step), "step")
    tolerance = _positive(float(args.tolerance), "tolerance")
    d = int(args.d)
    _positive(d, "d")
    config = {
        "command": "equiv", "triple": args.triple, "seed": args.seed,
        "d": d, "eta": eta, "T": horizon, "step": step,
        "tolerance": tolerance, "potential_override": args.potential_override,
        "out": args.out,
    }
    try:
        report, _, _ = reparam.run_equivalence(
            args.triple, args.seed, d=d, eta=eta, horizon=horizon,
            step=step, target_override=override,
        )
    except ConditionError as exc:
        payload = {"triple": args.triple, "pass": False,
                   "condition_failure": str(exc),
                   "max_residual": exc.max_residual, "config": config}
        _write_json_atomic(args.out, payload)
        print(f"condition check failed: {exc}")
        return EXIT_TOLERANCE
    passed = report.max_dev <= tolerance
    payload = {"triple": args.triple, "max_dev": report.max_dev,
               "tolerance": tolerance, "pass": passed, "config": config}
    _write_json_atomic(args.out, payload)
    print(f"max deviation: {report.max_dev:.3e} (tolerance {tolerance:g})")
    return EXIT_OK if passed else EXIT_TOLERANCE


def cmd_minnorm(args):
    taus = []
    for part in str(args.taus).split(","):
        try:
            taus.append(float(part))
        except ValueError:
            raise ConfigError(f"bad temperature {part!r}") from None
        if not 0.0 <= taus[-1] <= 1.0:
            raise ConfigError("temperatures must lie in [0, 1]")
    n_rows = int(args.N)
    n_cols = int(args.d)
    _positive(n_rows, "N")
    _positive(n_cols, "d")
    if n_rows >= n_cols:
        raise ConfigError("the sweep needs an underdetermined instance (N < d)")
    alpha = _positive(float(args.alpha), "alpha")
    eta = _positive(float(args.eta), "eta")
    step = _positive(float(args.step), "step")
    horizon = _positive(float(args.T), "T")
    inst = minnorm.make_instance(n_rows=n_rows, n_cols=n_cols, seed=args.seed)
    rows = minnorm.norm_sweep(inst, taus, alpha, eta, step, horizon,
                              stop_rtol=args.stop_rtol)
    minnorm.write_sweep_csv(args.out, rows, timing=args.timing)
    config = {
        "command": "minnorm", "taus": args.taus, "N": n_rows, "d": n_cols,
        "seed": args.seed, "alpha": alpha, "eta": eta, "step": step,
        "T": horizon, "stop_rtol": args.stop_rtol, "timing": args.timing,
        "out": args.out,
    }
    _write_manifest(args.out, config)
    y_norm = float(np.linalg.norm(inst.y))
    failures = []
    for row in rows:
        label = f"tau={row['tau']:g}/{row['method']}"
        if row["error"]:
            failures.append(f"{label}: {row['error']}")
            continue
        if row["feasibility"] > args.residual_rtol * y_norm:
            failures.append(f"{label}: residual {row['feasibility']:.3e}")
        gap = abs(row["norm"] - row["oracle_norm"]) / max(row["oracle_norm"], 1e-300)
        if row["tau"] == 0.0 and gap > 1e-3:
            failures.append(f"{label}: norm gap {gap:.3e}")
        elif row["tau"] == 1.0 and gap > 1e-2:
            failures.append(f"{label}: norm gap {gap:.3e}")
        elif 0.0 < row["tau"] < 1.0 and max(row["stationarity"],
                                            row["slackness"]) > args.kkt_tol:
            failures.append(f"{label}: KKT residuals above {args.kkt_tol:g}")
        print(f"{label}: norm={row['norm']:.6g} oracle={row['oracle_norm']:.6g} "
              f"feas={row['feasibility']:.2e} ({row['runtime_s']:.2f} s)")
    if failures:
        for item in failures:
            print("FAIL", item)
        return EXIT_TOLERANCE
    return EXIT_OK


def cmd_check(args):
    names = [args.triple] if args.triple else reparam.registered_triple_names()
    reports = []
    worst_fail = None
    for name in names:
        try:
            rep = reparam.check_triple(name, n_samples=args.samples,
                                       seed=args.seed, dim=args.dim)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
        reports.append(rep.as_dict())
        status = "pass" if rep.passed else "FAIL"
        print(f"{name}: {status} (max residual {rep.max_residual:.3e})")
        if not rep.passed and (worst_fail is None
                               or rep.max_residual > worst_fail):
            worst_fail = rep.max_residual
    config = {"command": "check", "triple": args.triple,
              "samples": args.samples, "dim": args.dim, "seed": args.seed,
              "out": args.out}
    _write_json_atomic(args.out, {"reports": reports, "config": config})
    return EXIT_OK if worst_fail is None else EXIT_TOLERANCE


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="mirrorflow",
        description="Mirror-flow experiments: trajectories, equivalences, "
                    "condition checks, and minimum-norm sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    seed_default = _default_seed()

    p_flow = sub.add_parser("flow", help="integrate one flow and dump a CSV")
    p_flow.add_argument("--potential", required=True,
                        help=f"one of: {', '.join(REGISTRY_NAMES)}")
    p_flow.add_argument("--constraint", default=None)
    p_flow.add_argument("--loss", required=True,
                        help="linear:<spec>, quadratic:<spec>, or lsq:<instance>")
    p_flow.add_argument("--w0", required=True)
    p_flow.add_argument("--eta", default=1.0, type=float)
    p_flow.add_argument("--T", default=1.0, type=float)
    p_flow.add_argument("--step", default=1e-3, type=float)
    p_flow.add_argument("--scheme", default="rk4")
    p_flow.add_argument("--record-every", default=1, type=int)
    p_flow.add_argument("--out", default="trajectory.csv")
    p_flow.add_argument("--config", default=None, help="key=value defaults file")
    p_flow.set_defaults(func=cmd_flow)

    p_eq = sub.add_parser("equiv", help="compare direct and reparameterized flows")
    p_eq.add_argument("--triple", required=True)
    p_eq.add_argument("--seed", default=seed_default, type=int)
    p_eq.add_argument("--d", default=10, type=int)
    p_eq.add_argument("--eta", default=1.0, type=float)
    p_eq.add_argument("--T", default=5.0, type=float)
    p_eq.add_argument("--step", default=1e-3, type=float)
    p_eq.add_argument("--tolerance", default=1e-6, type=float)
    p_eq.add_argument("--potential-override", default=None,
                      help="substitute this potential into the direct flow")
    p_eq.add_argument("--out", default="equiv.json")
    p_eq.add_argument("--config", default=None)
    p_eq.set_defaults(func=cmd_equiv)

    p_mn = sub.add_parser("minnorm", help="temperature sweep on a seeded instance")
    p_mn.add_argument("--taus", default="0,0.5,1")
    p_mn.add_argument("--N", default=10, type=int)
    p_mn.add_argument("--d", default=40, type=int)
    p_mn.add_argument("--seed", default=seed_default, type=int)
    p_mn.add_argument("--alpha", default=1e-5, type=float)
    p_mn.add_argument("--eta", default=0.05, type=float)
    p_mn.add_argument("--step", default=0.1, type=float)
    p_mn.add_argument("--T", default=200000.0, type=float)
    p_mn.add_argument("--stop-rtol", default=1e-6, type=float)
    p_mn.add_argument("--residual-rtol", default=1e-4, type=float)
    p_mn.add_argument("--kkt-tol", default=1e-3, type=float)
    p_mn.add_argument("--no-timing", dest="timing", action="store_false",
                      help="zero the runtime column for byte-identical output")
    p_mn.add_argument("--out", default="sweep.csv")
    p_mn.add_argument("--config", default=None)
    p_mn.set_defaults(func=cmd_minnorm, timing=True)

    p_ck = sub.add_parser("check", help="Hessian-matching condition checks")
    p_ck.add_argument("--triple", default=None,
                      help="single triple; default checks the whole registry")
    p_ck.add_argument("--samples", default=100, type=int)
    p_ck.add_argument("--dim", default=4, type=int)
    p_ck.add_argument("--seed", default=seed_default, type=int)
    p_ck.add_argument("--out", default="check.json")
    p_ck.add_argument("--config", default=None)
    p_ck.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConditionError as exc:
        print(f"condition failure: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except MirrorFlowError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
