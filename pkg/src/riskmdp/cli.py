"""Command-line interface.

Subcommands: ``domain``, ``validate``, ``solve``, ``mmdp-solve``, ``qlearn``,
``simulate`` and ``convert``. Exit codes: 0 on success, 1 on a validation
error, 2 when the requested objective is unbounded, 3 on a usage error.

JSON output has sorted keys and floats printed with 17 significant digits,
so runs with the same ``--seed`` produce byte-identical files. Non-finite
floats are written as ``null``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import domains, mmdp, qlearn, simulate, trc
from .mdp import (
    MdpFormatError,
    MdpValidationError,
    StationaryPolicy,
    check_transient,
    discounted_to_transient,
    load_initial_csv,
    load_mdp_csv,
    read_transition_rows,
    save_mdp_csv,
    tables_from_rows,
    validate,
    write_transitions,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_UNBOUNDED = 2
EXIT_USAGE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises :class:`UsageError` (with the full help text) instead of exiting."""

    def error(self, message):
        raise UsageError(f"{self.format_help()}\n{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# JSON


def _to_plain(obj):
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _encode(obj, level: int) -> str:
    pad, inner = "  " * level, "  " * (level + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {_encode(obj[k], level + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + _encode(v, level + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, float):
        return format(obj, ".17g") if math.isfinite(obj) else "null"
    return json.dumps(obj)


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, 17 significant digits, ``null`` for non-finite floats."""
    return _encode(_to_plain(obj), 0) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_domain(args) -> int:
    if args.name == "gambler":
        model = domains.gamblers_ruin(domains.GamblerSpec(args.q, args.cap))
    elif args.name == "cliff":
        model = domains.cliff_walk(
            domains.CliffSpec(args.intended, args.slip, args.goal_reward, args.bonus_reward)
        )
    else:
        model = domains.chain_mdp(domains.ChainSpec(args.r, args.eps))
    if args.out:
        save_mdp_csv(model, args.out)
    else:
        write_transitions(model, sys.stdout)
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        model = load_mdp_csv(args.mdp, sink=args.sink)
    except (MdpFormatError, MdpValidationError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    report = validate(model)
    out = {
        "ok": report.ok,
        "findings": [
            {"severity": f.severity, "code": f.code, "message": f.message, "location": str(f.location)}
            for f in report.findings
        ],
    }
    if args.transient:
        tr = check_transient(model)
        out["transient"] = tr.transient
        out["worst_radius"] = tr.worst_radius
        out["n_policies"] = tr.n_policies
    _emit(dumps(out), args.out)
    if not report.ok or (args.transient and not out["transient"]):
        return EXIT_INVALID
    return EXIT_OK


def _cmd_solve(args) -> int:
    model = load_mdp_csv(args.mdp, sink=args.sink)
    if args.objective == "erm":
        if args.beta is None:
            raise UsageError("solve --objective erm requires --beta")
        sol = trc.solve_erm(model, args.beta, args.method)
        out = sol.to_json()
        out["objective_kind"] = "erm"
        _emit(dumps(out), args.out)
        if not sol.bounded:
            print("unbounded: the ERM objective is -inf at this risk level", file=sys.stderr)
            return EXIT_UNBOUNDED
        return EXIT_OK
    if args.alpha is None:
        raise UsageError("solve --objective evar requires --alpha")
    try:
        sol = trc.evar_solve(model, args.alpha, args.delta, beta0=args.beta0, method=args.method)
    except trc.UnboundedError as exc:
        print(f"unbounded: {exc}", file=sys.stderr)
        return EXIT_UNBOUNDED
    out = sol.to_json()
    out["objective_kind"] = "evar"
    _emit(dumps(out), args.out)
    return EXIT_OK


def _cmd_mmdp_solve(args) -> int:
    model = mmdp.load_mmdp_dir(args.dir, horizon=args.horizon, gamma=args.gamma)
    out = {"method": args.method}
    if args.method == "cadp":
        res = mmdp.cadp_solve(model)
        policy = res.policy
        out["history"] = res.history
        out["iterations"] = res.iterations
    elif args.method == "wsu":
        policy = mmdp.wsu_solve(model)
    else:
        policy = mmdp.mvp_solve(model)
    out["policy"] = policy.to_json()
    out["value"] = mmdp.mmdp_return(model, policy)
    _emit(dumps(out), args.out)
    return EXIT_OK


def _cmd_qlearn(args) -> int:
    model = load_mdp_csv(args.mdp, sink=args.sink)
    schedule = qlearn.StepSchedule(args.eta0, args.power, beta_scaled=not args.unscaled_step)
    samples = qlearn.SampleStream(model, "uniform", args.seed).take(args.samples)
    if args.objective == "erm":
        if not args.beta:
            raise UsageError("qlearn --objective erm requires --beta")
        betas = sorted(set(args.beta))
        zb = qlearn.z_bounds(samples, schedule=schedule)
        qt = qlearn.erm_qlearning(samples, betas, zb, schedule)
        out = {"betas": betas, "diverged": qt.diverged, "policies": {}, "values": {}}
        for b, dv in zip(betas, qt.diverged):
            if not dv:
                key = format(b, ".17g")
                out["policies"][key] = qlearn.greedy_policy(qt, b).actions
                out["values"][key] = qt.values()[:, qt.beta_index(b)]
        status = EXIT_UNBOUNDED if qt.diverged.all() else EXIT_OK
    else:
        if args.alpha is None:
            raise UsageError("qlearn --objective evar requires --alpha")
        try:
            sol, qt, zb = qlearn.evar_qlearning(
                model, args.alpha, args.delta, args.samples, schedule=schedule, samples=samples
            )
        except RuntimeError as exc:
            print(f"unbounded: {exc}", file=sys.stderr)
            return EXIT_UNBOUNDED
        out = sol.to_json()
        out["diverged"] = int(qt.diverged.sum())
        status = EXIT_OK
    out["samples"] = args.samples
    out["seed"] = args.seed
    out["z_bounds"] = {"c": zb.c, "d": zb.d, "x_min": zb.x_min, "x_max": zb.x_max, "r_inf": zb.r_inf}
    if args.qtable:
        Path(args.qtable).write_text(dumps(qt.to_json()))
    if status == EXIT_UNBOUNDED:
        print("unbounded: every risk level diverged", file=sys.stderr)
    _emit(dumps(out), args.out)
    return status


def _load_policy(path, n_states: int, n_actions: int) -> StationaryPolicy:
    doc = json.loads(Path(path).read_text())
    actions = doc["policy"] if isinstance(doc, dict) else doc
    actions = np.asarray(actions, dtype=int)
    if actions.shape != (n_states,):
        raise MdpValidationError(f"policy has {actions.size} entries, model has {n_states} states")
    return StationaryPolicy.deterministic(actions, n_actions)


def _cmd_simulate(args) -> int:
    model = load_mdp_csv(args.mdp, sink=args.sink)
    policy = _load_policy(args.policy, model.n_states, model.n_actions)
    if args.exact:
        dist = simulate.exact_return_distribution(model, policy, args.horizon_cap)
    else:
        dist = simulate.return_distribution(model, policy, args.episodes, args.seed, args.max_steps)
    if args.dist_out:
        simulate.write_distribution_csv(dist, args.dist_out)
    out = simulate.summary(dist, erm_levels=tuple(args.erm or ()), evar_levels=tuple(args.evar or ()))
    out["seed"] = args.seed
    out["truncated_fraction"] = dist.truncated_fraction
    _emit(dumps(out), args.out)
    return EXIT_OK


def _cmd_convert(args) -> int:
    rows = read_transition_rows(args.mdp)
    if not rows:
        raise MdpFormatError(f"{args.mdp}: no transitions")
    p, r, adm = tables_from_rows(rows)
    if not adm.all():
        raise MdpValidationError("every state needs every action in a discounted model")
    mu = load_initial_csv(args.initial, p.shape[0]) if args.initial else np.full(p.shape[0], 1.0 / p.shape[0])
    if args.reward_mode == "state_action":
        rewards = np.einsum("sat,sat->sa", p, r)
    else:
        rewards = r
    model = discounted_to_transient(p, rewards, mu, args.gamma, args.reward_mode)
    save_mdp_csv(model, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--threads", type=_positive_int, default=None, help="cap on native worker threads")
    common.add_argument("--out", default=None, help="output path (default: standard output)")

    parser = _Parser(prog="riskmdp", description="Risk-averse total-reward MDP toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("domain", parents=[common], help="generate a benchmark MDP as CSV")
    dsub = p.add_subparsers(dest="name", required=True, parser_class=_Parser)
    g = dsub.add_parser("gambler", parents=[common], help="gambler's ruin")
    g.add_argument("--q", type=float, default=0.68, help="win probability")
    g.add_argument("--cap", type=int, default=7, help="capital cap K")
    c = dsub.add_parser("cliff", parents=[common], help="slippery cliff walk")
    c.add_argument("--intended", type=float, default=0.91, help="probability of the chosen move")
    c.add_argument("--slip", type=float, default=0.03, help="probability of each other move")
    c.add_argument("--goal-reward", type=float, default=2.0)
    c.add_argument("--bonus-reward", type=float, default=0.004)
    ch = dsub.add_parser("chain", parents=[common], help="one-state chain")
    ch.add_argument("--r", type=float, default=-1.0, help="self-loop reward")
    ch.add_argument("--eps", type=float, default=0.5, help="self-loop probability")
    p.set_defaults(func=_cmd_domain)

    p = sub.add_parser("validate", parents=[common], help="check an MDP CSV")
    p.add_argument("mdp", help="MDP CSV file")
    p.add_argument("--sink", type=int, default=None)
    p.add_argument("--transient", action="store_true", help="also certify transience over all deterministic policies")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("solve", parents=[common], help="solve an ERM or EVaR total-reward objective")
    p.add_argument("mdp", help="MDP CSV file")
    p.add_argument("--sink", type=int, default=None)
    p.add_argument("--objective", choices=("erm", "evar"), required=True)
    p.add_argument("--beta", type=float, default=None, help="ERM risk level")
    p.add_argument("--alpha", type=float, default=None, help="EVaR risk level in (0, 1)")
    p.add_argument("--delta", type=float, default=0.01, help="EVaR precision (default 0.01)")
    p.add_argument("--beta0", type=float, default=None, help="first grid level (default: halving rule)")
    p.add_argument("--method", choices=("vi", "pi", "lp"), default="pi")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("mmdp-solve", parents=[common], help="plan for a multi-model MDP")
    p.add_argument("dir", help="directory with model_<k>.csv, weights.csv and meta")
    p.add_argument("--method", choices=("cadp", "wsu", "mvp"), default="cadp")
    p.add_argument("--horizon", type=int, default=None, help="override T from meta")
    p.add_argument("--gamma", type=float, default=None, help="override gamma from meta")
    p.set_defaults(func=_cmd_mmdp_solve)

    p = sub.add_parser("qlearn", parents=[common], help="model-free ERM or EVaR Q-learning")
    p.add_argument("mdp", help="MDP CSV file used as the simulator")
    p.add_argument("--sink", type=int, default=None)
    p.add_argument("--objective", choices=("erm", "evar"), required=True)
    p.add_argument("--beta", type=float, action="append", help="ERM risk level (repeatable)")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--samples", type=_positive_int, default=30000)
    p.add_argument("--eta0", type=float, default=qlearn.StepSchedule.eta0)
    p.add_argument("--power", type=float, default=qlearn.StepSchedule.power)
    p.add_argument("--unscaled-step", action="store_true", help="use the step eta instead of eta/beta")
    p.add_argument("--qtable", default=None, help="write the learned q table as JSON")
    p.set_defaults(func=_cmd_qlearn)

    p = sub.add_parser("simulate", parents=[common], help="return distribution of a policy")
    p.add_argument("mdp", help="MDP CSV file")
    p.add_argument("--sink", type=int, default=None)
    p.add_argument("--policy", required=True, help="policy JSON with a 'policy' action list")
    p.add_argument("--episodes", type=_positive_int, default=10000)
    p.add_argument("--max-steps", type=_positive_int, default=20000)
    p.add_argument("--exact", action="store_true", help="enumerate the distribution instead of sampling")
    p.add_argument("--horizon-cap", type=_positive_int, default=200)
    p.add_argument("--dist-out", default=None, help="write the distribution as CSV")
    p.add_argument("--erm", type=float, action="append", help="report ERM at this level (repeatable)")
    p.add_argument("--evar", type=float, action="append", help="report EVaR at this level (repeatable)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("convert", parents=[common], help="discounted MDP CSV to transient MDP CSV")
    p.add_argument("mdp", help="discounted MDP CSV without a sink")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--reward-mode", choices=("next_state", "state_action"), default="next_state")
    p.add_argument("--initial", default=None, help="initial distribution CSV (default uniform)")
    p.set_defaults(func=_cmd_convert)
    return parser


def _thread_cap(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("RISKMDP_THREADS")
    if env:
        try:
            return _positive_int(env)
        except (ValueError, argparse.ArgumentTypeError):
            raise UsageError(f"RISKMDP_THREADS must be a positive integer, got {env!r}") from None
    return None


def run(argv=None) -> int:
    """Run the CLI and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "convert" and not args.out:
            raise UsageError("convert requires --out")
        with threadpool_limits(limits=_thread_cap(args)):
            return args.func(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (MdpFormatError, MdpValidationError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
