#!/usr/bin/env python3
"""hetcache command line: instances, sweeps, bound validation, exact solves, ILP export and checks.

Exit codes: 0 ok, 1 usage or config error, 2 infeasible / over the size limit /
violations found, 3 internal error.
"""
import argparse
import logging
import os
import sys

from delay_bounds import DelayBoundTable
from delivery_delay import DeliveryContext, dump_delay_csv, load_assignment, save_assignment
from errors import EXIT_INFEASIBLE, EXIT_INTERNAL, EXIT_OK, EXIT_USAGE, ConfigError, exit_code_for
from exact_solver import build_ilp, check_model_solution, check_solution, emit_ilp, search_space, solve_exhaustive
from experiments import (ExperimentSweep, build_case, build_network, popularity_for, run_bound_validation, run_sweep,
                         sweep_from_preset, write_sweep_csv, write_validation_csv)
from settings import (REPO_ROOT, SWEEP_PRESETS, atomic_write_text, load_config, parse_assignments, section,
                      setup_logging, worker_count)
from topology import load_instance, save_instance

log = logging.getLogger(__name__)

RESULTS_DIR = os.path.join(REPO_ROOT, "results")


class UsageParser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; here 2 means infeasible, so usage is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(raw: str) -> list[str]:
    return [x.strip() for x in (raw or "").split(",") if x.strip()]


def _numbers(raw: str) -> list:
    out = []
    for item in _csv_list(raw):
        try:
            out.append(int(item))
        except ValueError:
            try:
                out.append(float(item))
            except ValueError:
                raise ConfigError(f"not a number in --values: {item!r}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML config (default: HETCACHE_CONFIG or config/default_cell.yaml)")
    common.add_argument("--seed", type=int, default=0, help="Instance seed")
    common.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE", default=[],
                        help="Override a config key, e.g. --set U=10 or --set bounds.g_cap=1e6 (repeatable)")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: HETCACHE_LOG_LEVEL or INFO)")

    ap = UsageParser(description="Joint caching and channel allocation for D2D-assisted cells.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=UsageParser)

    gen = sub.add_parser("generate", parents=[common], help="Write a seeded network instance with its popularity model")
    gen.add_argument("--out", required=True, help="Instance YAML path")
    gen.add_argument("--curves", default="", help="Also write zeta(T), T=1..20, for every MBS and SBS link to this CSV")

    sw = sub.add_parser("sweep", parents=[common], help="Run a parameter sweep and write CSV rows")
    sw.add_argument("--preset", default="", help=f"Named sweep from {os.path.relpath(SWEEP_PRESETS, REPO_ROOT)}")
    sw.add_argument("--param", default="", help="Config key to sweep (ad hoc sweep)")
    sw.add_argument("--values", default="", help="Comma-separated values for --param")
    sw.add_argument("--seeds", type=int, default=None, help="Seeds per point, 0..n-1 (default: preset or 20)")
    sw.add_argument("--methods", default="", help="Comma-separated subset of optimal,heuristic,no_d2d")
    sw.add_argument("--out", default="", help="CSV path (default: results/<preset or param>.csv)")

    vb = sub.add_parser("validate-bounds", parents=[common], help="Monte Carlo check of the delay-bound grid")
    vb.add_argument("--trials", type=int, default=None, help="Trials per link (default: montecarlo.trials)")
    vb.add_argument("--no-moments", action="store_true", help="Skip the per-slot moment distribution check")
    vb.add_argument("--out", default=os.path.join(RESULTS_DIR, "bound_validation.csv"), help="CSV path")

    se = sub.add_parser("solve-exact", parents=[common], help="Exhaustive optimum on a tiny instance")
    se.add_argument("--instance", default="", help="Instance YAML (default: generate from config and seed)")
    se.add_argument("--out", default="", help="Assignment YAML path")
    se.add_argument("--delays", default="", help="Also write the G[u, f] matrix of the optimum to this CSV")

    il = sub.add_parser("emit-ilp", parents=[common], help="Write the linearised program as LP or MPS")
    il.add_argument("--instance", default="", help="Instance YAML (default: generate from config and seed)")
    il.add_argument("--format", choices=("lp", "mps"), default="lp")
    il.add_argument("--out", required=True, help="Model file path")

    ck = sub.add_parser("check", parents=[common], help="Check an assignment against every constraint")
    ck.add_argument("--instance", required=True, help="Instance YAML")
    ck.add_argument("--assignment", required=True, help="Assignment YAML")
    ck.add_argument("--ilp", action="store_true", help="Also substitute it into the linearised program")
    return ap


def _context(args, cfg: dict) -> DeliveryContext:
    if not getattr(args, "instance", ""):
        return build_case(cfg, args.seed)
    instance, popularity = load_instance(args.instance)
    if popularity is None:
        popularity = popularity_for(cfg, instance.num_users, instance.params.F, args.seed)
    return DeliveryContext(instance, popularity, DelayBoundTable.from_config(instance, cfg))


def cmd_generate(args, cfg: dict) -> int:
    instance, popularity = build_network(cfg, args.seed)
    save_instance(args.out, instance, popularity,
                  meta={"seed": args.seed, "preset": cfg.get("preset", "")})
    if args.curves:
        links = [(x, u, None) for x in range(1 + instance.num_sbs) for u in range(instance.num_users)]
        table = DelayBoundTable.from_config(instance, cfg)
        atomic_write_text(args.curves, table.dump_curves_csv(links, range(1, 21)))
    print(f"[hetcache] wrote {args.out} (N={instance.num_nodes}, U={instance.num_users}, F={instance.params.F})")
    return EXIT_OK


def cmd_sweep(args, cfg: dict) -> int:
    methods = _csv_list(args.methods) or None
    if args.preset:
        if args.param or args.values:
            raise ConfigError("--preset cannot be combined with --param/--values")
        sweep = sweep_from_preset(args.preset, seeds=args.seeds, methods=methods)
    elif args.param and args.values:
        sweep = ExperimentSweep(name=args.param, param=args.param, values=_numbers(args.values),
                                seeds=range(args.seeds if args.seeds is not None else 20),
                                methods=methods or ("heuristic", "no_d2d"))
    else:
        raise ConfigError("sweep needs --preset NAME or --param KEY --values a,b,c")
    out = args.out or os.path.join(RESULTS_DIR, f"{sweep.name}.csv")
    result = run_sweep(sweep, cfg, workers=worker_count(cfg))
    write_sweep_csv(out, result)
    print(f"[hetcache] wrote {out} ({len(result.points)} data rows, {result.errors} errors)")
    return EXIT_OK


def cmd_validate_bounds(args, cfg: dict) -> int:
    result = run_bound_validation(cfg, seed=args.seed, trials=args.trials, workers=worker_count(cfg),
                                  moments=not args.no_moments)
    write_validation_csv(args.out, result)
    print(f"[hetcache] wrote {args.out} ({len(result.rows)} rows, {len(result.flagged)} flagged)")
    if not result.passed:
        print("[hetcache] bound validation FAILED", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_solve_exact(args, cfg: dict) -> int:
    context = _context(args, cfg)
    solver = section(cfg, "solver")
    placements, partitions = search_space(context.instance)
    log.info("search space: %d placements x %d channel partitions", placements, partitions)
    result = solve_exhaustive(context, max_states=int(solver.get("max_states", 100_000_000)),
                              chunk=int(solver.get("chunk", 4096)))
    if args.out:
        save_assignment(args.out, result.assignment,
                        meta={"method": "optimal", "sdr": result.sdr, "seed": args.seed})
    if args.delays:
        dump_delay_csv(args.delays, result.delays)
    print(f"[hetcache] optimal SDR={result.sdr:.6f} explored={result.explored} ({result.elapsed_s:.2f}s)")
    return EXIT_OK


def cmd_emit_ilp(args, cfg: dict) -> int:
    context = _context(args, cfg)
    model = build_ilp(context, max_variables=int(section(cfg, "solver").get("max_ilp_variables", 500_000)))
    emit_ilp(model, args.out, fmt=args.format)
    print(f"[hetcache] wrote {args.out} ({len(model.variables)} variables, "
          f"{len(model.problem.constraints)} constraints)")
    return EXIT_OK


def cmd_check(args, cfg: dict) -> int:
    context = _context(args, cfg)
    assignment = load_assignment(args.assignment)
    try:
        assignment.check_shape(context.instance)
    except ValueError as exc:
        raise ConfigError(f"{args.assignment} does not fit {args.instance}: {exc}") from None
    report = check_solution(context, assignment)
    for v in report.violations:
        print(f"[hetcache] VIOLATED {v.constraint} {list(v.index)} slack={v.slack:.6g}")
    if report.detail:
        print(f"[hetcache] {report.detail}")
    implied = "n/a" if report.implied_sdr is None else f"{report.implied_sdr:.6f}"
    print(f"[hetcache] objective={report.objective:.6f} implied SDR={implied} violations={len(report.violations)}")
    feasible = report.feasible
    if args.ilp and feasible:
        if assignment.delivery is None:
            assignment = assignment.with_delivery(context.deliveries(context.delay_matrix(assignment)))
        model = build_ilp(context, max_variables=int(section(cfg, "solver").get("max_ilp_variables", 500_000)))
        ilp = check_model_solution(model, assignment)
        for v in ilp.violations:
            print(f"[hetcache] VIOLATED row {v.constraint} slack={v.slack:.6g}")
        print(f"[hetcache] ILP objective={ilp.objective:.6f} violated rows={len(ilp.violations)}")
        feasible = ilp.feasible
    return EXIT_OK if feasible else EXIT_INFEASIBLE


COMMANDS = {
    "generate": cmd_generate,
    "sweep": cmd_sweep,
    "validate-bounds": cmd_validate_bounds,
    "solve-exact": cmd_solve_exact,
    "emit-ilp": cmd_emit_ilp,
    "check": cmd_check,
}


def cli_entry(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        cfg = load_config(args.config, parse_assignments(args.overrides))
        return COMMANDS[args.cmd](args, cfg)
    except Exception as exc:
        code = exit_code_for(exc)
        if code == EXIT_INTERNAL:
            log.exception("internal error")
        else:
            log.error("%s", exc)
        return code


if __name__ == "__main__":
    raise SystemExit(cli_entry())
