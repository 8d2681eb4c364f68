"""Command-line front end.

Exit codes: 0 success (gap within --gap-tol), 2 gap above tolerance,
3 tractability condition fails under --strict (or ``check`` fails),
1 any error.
"""

import argparse
import hashlib
import logging
import os
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import io
from .envs import make_benchmark, parse_benchmark
from .errors import InvalidInputError, SchemaError
from .estimation import GenerativeModel, model_based_solve, full_information_gap, loglog_slope
from .game import MatrixGameSpec, RationalitySpec
from .markov import MarkovGameSpec, MarkovSolveConfig, backward_induction, evaluate_policy, markov_rqe_gap
from .risk import RiskSpec
from .solver import SolveConfig, check_tractability, solve_rqe

log = logging.getLogger("rqe")

OUTPUT_ENV = "RQE_OUTPUT_DIR"
EXIT_OK, EXIT_ERROR, EXIT_GAP, EXIT_INTRACTABLE = 0, 1, 2, 3


def _pkg_version():
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _floats(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise InvalidInputError(f"expected comma-separated numbers, got {text!r}") from None


def _per_player(values, n, name):
    if len(values) == 1:
        return values * n
    if len(values) != n:
        raise InvalidInputError(f"--{name} needs 1 or {n} values, got {len(values)}")
    return values


def _grid(text):
    try:
        w, h = (int(x) for x in str(text).lower().split("x"))
    except ValueError:
        raise InvalidInputError(f"--grid expects WIDTHxHEIGHT, got {text!r}") from None
    return w, h


# parameter resolution ---------------------------------------------------

def _risk_params(args, n, current):
    """Per-player RiskSpecs from flags, falling back to the game's own or KL(1)."""
    kinds = (args.risk.split(",") if args.risk else None)
    taus = _floats(args.tau) if args.tau else None
    if current is not None and kinds is None and taus is None:
        return current
    kinds = _per_player(kinds or [current[0].kind if current else "kl"], n, "risk")
    taus = _per_player(taus or ([r.tau for r in current] if current else [1.0]), n, "tau")
    return tuple(RiskSpec(k, t) for k, t in zip(kinds, taus))


def _rationality_params(args, n, current):
    kinds = (args.reg.split(",") if args.reg else None)
    eps = _floats(args.epsilon) if args.epsilon else None
    if current is not None and kinds is None and eps is None:
        return current
    kinds = _per_player(kinds or [current[0].kind if current else "logbarrier"], n, "reg")
    eps = _per_player(eps or ([r.epsilon for r in current] if current else [1.0]), n, "epsilon")
    return tuple(RationalitySpec(k, e) for k, e in zip(kinds, eps))


def _solver_config(args, base=None):
    cfg = base or {}
    if args.config:
        data = io.read_json(args.config)
        io.check_version(data, "solver_config")
        cfg = {k: v for k, v in data.items() if k not in ("schema_version", "kind")}
    fields = SolveConfig.__dataclass_fields__
    unknown = set(cfg) - set(fields)
    if unknown:
        raise SchemaError(f"{args.config}: unknown solver fields {sorted(unknown)}")
    for flag, key in (("step_size", "step_size"), ("iterations", "iterations"), ("seed", "seed"),
                      ("init", "init"), ("average_from", "average_from"), ("retries", "retries")):
        v = getattr(args, flag, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "gap_tol", None) is not None and getattr(args, "refine", True):
        cfg.setdefault("target_gap", args.gap_tol)
    return SolveConfig(**cfg)


def _load_matrix(args):
    source = args.game
    if source.startswith("bench:"):
        game = make_benchmark(source)
    else:
        game = io.load_game(source)
    if not isinstance(game, MatrixGameSpec):
        raise InvalidInputError(f"{source} is not a matrix game")
    risk = _risk_params(args, game.n, game.risk)
    rat = _rationality_params(args, game.n, game.rationality)
    return game.with_params(risk, rat, args.risk_mode)


def _load_markov(args):
    source = args.game
    if source.startswith("bench:"):
        bench = parse_benchmark(source)
        params = {}
        if bench.family.startswith("cliff"):
            if args.grid:
                params["width"], params["height"] = _grid(args.grid)
            if args.horizon:
                params["horizon"] = args.horizon
            for key in ("env_tau", "env_lambda"):
                if getattr(args, key) is not None:
                    params[key] = getattr(args, key)
            if args.tau:
                params["tau"] = _floats(args.tau)[0]
            if args.epsilon:
                params["epsilon"] = _floats(args.epsilon)[0]
        elif bench.family in ("tiny", "random-markov") and args.seed is not None:
            params["seed"] = args.seed
        game = make_benchmark(bench, **params)
    else:
        game = io.load_game(source)
    if not isinstance(game, MarkovGameSpec):
        raise InvalidInputError(f"{source} is not a Markov game")
    changes = {}
    if args.recursion_mode:
        changes["recursion_mode"] = args.recursion_mode
    if not source.startswith("bench:cliff"):
        if args.risk or args.tau:
            changes["pol_risk"] = _risk_params(args, game.n, game.pol_risk)
        if args.reg or args.epsilon:
            changes["rationality"] = _rationality_params(args, game.n, game.rationality)
    return game.replace(**changes) if changes else game


# output helpers ----------------------------------------------------------

def _out_dir(args):
    base = args.out or os.environ.get(OUTPUT_ENV)
    if base is None:
        stamp = hashlib.sha1(" ".join(args.argv).encode()).hexdigest()[:10]
        base = Path("rqe-runs") / f"{args.command}-{stamp}"
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out, args, inputs, config):
    manifest = {
        "schema_version": io.SCHEMA_VERSION,
        "kind": "run_manifest",
        "command": args.command,
        "argv": args.argv,
        "inputs": [str(Path(p).resolve()) if not str(p).startswith("bench:") else p for p in inputs],
        "config": config,
        "output_dir": str(out.resolve()),
        "seed": getattr(args, "seed", None),
        "package_version": _pkg_version(),
    }
    io.write_json(out / "manifest.json", manifest)


def _warn_players(n):
    if n > 2:
        log.warning("%d players: payoffs are reduced to pairwise blocks, exact only for additive games", n)


def _threads(n):
    if n:
        import numba

        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


# commands ----------------------------------------------------------------

def cmd_check(args):
    game = _load_matrix(args)
    rec = check_tractability(game)
    print(f"tractability: {'holds' if rec.holds else 'fails'} ({rec.condition})")
    print("margins: " + ", ".join(io.fmt(m) for m in rec.margins))
    print("xi: " + io.dumps(rec.xi.tolist()).replace("\n", ""))
    if rec.numeric:
        print("note: coupling weights estimated numerically")
    return EXIT_OK if rec.holds else EXIT_INTRACTABLE


def cmd_solve_matrix(args):
    game = _load_matrix(args)
    _warn_players(game.n)
    rec = check_tractability(game)
    if not rec.holds:
        log.warning("tractability condition fails: margins %s", rec.margins)
        if args.strict:
            return EXIT_INTRACTABLE
    config = _solver_config(args)
    report = solve_rqe(game, config)
    out = _out_dir(args)
    io.write_json(out / "report.json", {"schema_version": io.SCHEMA_VERSION, "kind": "solve_report",
                                        "game": args.game, "game_spec": io.matrix_game_to_dict(game),
                                        "config": config.to_dict(), **report.to_dict()})
    io.write_csv(out / "strategies.csv", ["player", "action", "probability"], io.strategies_rows(report.strategies))
    _write_manifest(out, args, [args.game] + ([args.config] if args.config else []), config.to_dict())
    for i, s in enumerate(report.strategies):
        print(f"player {i}: " + " ".join(f"{x:.6f}" for x in s))
    print(f"gap: {report.max_gap:.3e} (tolerance {args.gap_tol:g})")
    print(f"output: {out}")
    return EXIT_OK if report.max_gap <= args.gap_tol else EXIT_GAP


def _markov_config(args):
    return MarkovSolveConfig(_solver_config(args, {"compute_gaps": False}))


def cmd_solve_markov(args):
    game = _load_markov(args)
    _warn_players(game.n)
    # the condition depends on risk and rationality only, not on the payoffs
    rec = check_tractability(game.stage_game(np.zeros((game.n, 1, 1) + game.action_counts), 0, 0))
    if not rec.holds:
        log.warning("tractability condition fails for the stage games")
        if args.strict:
            return EXIT_INTRACTABLE
    config = _markov_config(args)
    policy, tables = backward_induction(game, config)
    out = _out_dir(args)
    gaps = None if args.skip_gaps else markov_rqe_gap(game, policy, tables)
    io.write_json(out / "policy.json", io.policy_to_dict(policy))
    header, rows = io.policy_rows(policy)
    io.write_csv(out / "policy.csv", header, rows)
    header, rows = io.value_rows(tables, gaps)
    io.write_csv(out / "values.csv", header, rows)
    max_gap = float(gaps.max()) if gaps is not None else None
    io.write_json(out / "report.json", {"schema_version": io.SCHEMA_VERSION, "kind": "markov_report",
                                        "game": args.game, "recursion_mode": game.recursion_mode,
                                        "config": config.solver.to_dict(), "max_gap": max_gap})
    _write_manifest(out, args, [args.game] + ([args.config] if args.config else []), config.solver.to_dict())
    print(f"solved H={game.horizon}, S={game.n_states}; output: {out}")
    if gaps is None:
        return EXIT_OK
    print(f"max gap: {max_gap:.3e} (tolerance {args.gap_tol:g})")
    return EXIT_OK if max_gap <= args.gap_tol else EXIT_GAP


def cmd_eval_markov(args):
    game = _load_markov(args)
    path = Path(args.policy)
    policy = io.policy_from_csv(path, game) if path.suffix == ".csv" else io.policy_from_dict(io.read_json(path))
    tables = evaluate_policy(game, policy)
    gaps = markov_rqe_gap(game, policy, tables)
    out = _out_dir(args)
    header, rows = io.value_rows(tables, gaps)
    io.write_csv(out / "values.csv", header, rows)
    io.write_json(out / "report.json", {"schema_version": io.SCHEMA_VERSION, "kind": "markov_eval",
                                        "game": args.game, "policy": str(path), "max_gap": float(gaps.max())})
    _write_manifest(out, args, [args.game, args.policy], {})
    print(f"max gap: {gaps.max():.3e} (tolerance {args.gap_tol:g}); output: {out}")
    return EXIT_OK if gaps.max() <= args.gap_tol else EXIT_GAP


def _manifest_game(spec, base):
    if isinstance(spec, str):
        if spec.startswith("bench:"):
            return make_benchmark(spec)
        p = Path(spec)
        return io.load_game(p if p.is_absolute() else base / p)
    if isinstance(spec, dict) and "bench" in spec:
        params = {k: v for k, v in spec.items() if k != "bench"}
        return make_benchmark(spec["bench"], **params)
    raise SchemaError("$.game: expected a path, a bench: id or {\"bench\": id, ...}")


def cmd_estimate(args):
    data = io.read_json(args.manifest)
    io.check_version(data, "estimation_manifest")
    reader = io._Reader(data)
    game = _manifest_game(reader.get("game"), Path(args.manifest).parent)
    if not isinstance(game, MarkovGameSpec):
        raise SchemaError("$.game: estimation needs a Markov game")
    n_grid = [int(n) for n in reader.get("n_grid")]
    seeds = reader.get("seeds")
    seeds = list(range(seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]
    solver = {"compute_gaps": False, **reader.get("solver", {})}
    config = MarkovSolveConfig(SolveConfig(**solver))
    fi = full_information_gap(game, config)
    out = _out_dir(args)
    rows, excess = [], {N: [] for N in n_grid}
    for seed in seeds:
        gen = GenerativeModel(game, seed)
        for N in n_grid:
            _, d = model_based_solve(gen, N, config, full_info_gap=fi, empirical_gap=True)
            rows.append([seed, N, d.max_l1_error, d.true_gap, d.empirical_gap, d.runtime_ms])
            excess[N].append(d.excess_gap)
            log.info("seed %d N %d: true gap %.3e", seed, N, d.true_gap)
    means = [float(np.mean(excess[N])) for N in n_grid]
    slope = loglog_slope(n_grid, means)
    rows.append(["slope", "", "", slope, "", ""])
    io.write_csv(out / "results.csv", ["seed", "N", "max_l1_error", "true_gap", "empirical_gap", "runtime_ms"], rows)
    io.write_csv(out / "summary.csv", ["N", "mean_excess_gap"], list(zip(n_grid, means)))
    _write_manifest(out, args, [args.manifest], {"n_grid": n_grid, "seeds": seeds, "solver": solver,
                                                 "full_info_gap": fi})
    print(f"full-information gap {fi:.3e}; log-log slope of mean excess gap {slope:.3f}; output: {out}")
    return EXIT_OK


def cmd_bench_make(args):
    bench = parse_benchmark(args.id)
    params = {}
    if bench.family.startswith("cliff"):
        if args.grid:
            params["width"], params["height"] = _grid(args.grid)
        if args.horizon:
            params["horizon"] = args.horizon
    elif bench.family in ("tiny", "random-markov", "random-matrix") and args.seed is not None:
        params["seed"] = args.seed
    game = make_benchmark(bench, **params)
    target = Path(args.out) if args.out else Path(f"{str(bench).split(':')[1]}.json")
    target.parent.mkdir(parents=True, exist_ok=True)
    io.save_game(target, game)
    print(f"wrote {target}")
    return EXIT_OK


def cmd_replay(args):
    data = io.read_json(Path(args.run_dir) / "manifest.json")
    io.check_version(data, "run_manifest")
    argv = list(data["argv"])
    if "--out" in argv:
        k = argv.index("--out")
        del argv[k:k + 2]
    target = args.out or str(Path(args.run_dir).resolve()) + "-replay"
    return main(argv + ["--out", target])


# parser ------------------------------------------------------------------

def _common(p, params=True):
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./rqe-runs/...)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    p.add_argument("--gap-tol", type=float, default=1e-2)
    p.add_argument("--strict", action="store_true", help="exit 3 when the tractability condition fails")
    p.add_argument("-v", "--verbose", action="count", default=0)
    if params:
        p.add_argument("--config", help="solver config JSON")
        p.add_argument("--risk", help="penalty kind(s): kl, rkl, tv")
        p.add_argument("--tau", help="risk level(s), comma separated")
        p.add_argument("--reg", help="regularizer(s): logbarrier, negentropy")
        p.add_argument("--epsilon", help="rationality weight(s), comma separated")
        p.add_argument("--risk-mode", choices=("aggregate", "action_dependent"), default=None)
        p.add_argument("--step-size", type=float, default=None)
        p.add_argument("--iterations", type=int, default=None)
        p.add_argument("--average-from", type=int, default=None)
        p.add_argument("--retries", type=int, default=None)
        p.add_argument("--init", choices=("uniform", "random"), default=None)
        p.add_argument("--no-refine", dest="refine", action="store_false",
                       help="do not rerun games whose gap misses --gap-tol")


def _markov_flags(p):
    p.add_argument("--recursion-mode", choices=("utility", "literal"), default=None)
    p.add_argument("--grid", help="cliff grid size WIDTHxHEIGHT")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--env-tau", type=float, default=None, help="KL environment risk level (cliff-kl)")
    p.add_argument("--env-lambda", type=float, default=None, help="TV environment weight (cliff-l1)")


def build_parser():
    parser = argparse.ArgumentParser(prog="rqe", description="Risk-averse quantal response equilibria.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-matrix", help="solve a matrix game")
    p.add_argument("game", help="game JSON file or bench: id")
    _common(p)
    p.set_defaults(func=cmd_solve_matrix)

    p = sub.add_parser("check", help="check the tractability condition")
    p.add_argument("game")
    _common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("solve-markov", help="backward induction on a Markov game")
    p.add_argument("game")
    _common(p)
    _markov_flags(p)
    p.add_argument("--skip-gaps", action="store_true", help="do not evaluate the per-state gaps")
    p.set_defaults(func=cmd_solve_markov)

    p = sub.add_parser("eval-markov", help="evaluate a policy on a Markov game")
    p.add_argument("game")
    p.add_argument("policy", help="policy CSV or JSON")
    _common(p)
    _markov_flags(p)
    p.set_defaults(func=cmd_eval_markov)

    p = sub.add_parser("estimate", help="model-based solving from samples")
    p.add_argument("manifest")
    _common(p, params=False)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bench", help="built-in benchmarks")
    bsub = p.add_subparsers(dest="bench_command", required=True)
    m = bsub.add_parser("make", help="write a benchmark game file")
    m.add_argument("id")
    m.add_argument("--out")
    m.add_argument("--seed", type=int, default=None)
    m.add_argument("--grid")
    m.add_argument("--horizon", type=int, default=None)
    m.add_argument("-v", "--verbose", action="count", default=0)
    m.set_defaults(func=cmd_bench_make)

    p = sub.add_parser("replay", help="rerun a run directory from its manifest")
    p.add_argument("run_dir")
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        _threads(getattr(args, "threads", None))
        return args.func(args)
    except (InvalidInputError, SchemaError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
