#!/usr/bin/env python3
"""Seeded parameter sweeps and delay-bound validation runs, written as plot-ready CSV.

A sweep point is one (variant, value, seed) triple. Each point builds its own
network, popularity model and bound table, then runs every requested method
on that same case so methods are paired per seed. Points are independent and
may run in a worker pool; rows are always emitted in (variant, value, seed,
method) order so reruns with the same seeds produce the same file apart from
the runtime column.
"""
import csv
import io
import logging
import math
import multiprocessing
import os
import time

import attrs
import numpy as np

from caching_heuristic import heuristic_solution, no_d2d_solution
from delay_bounds import DelayBoundTable, LinkBoundParams, expected_delay_bound, zeta0, zeta1
from delivery_delay import DeliveryContext
from errors import ConfigError, SeriesTruncationError
from exact_solver import solve_exhaustive
from montecarlo import MomentCheckConfig, TrialConfig, sample_delay, check_slot_moments, write_report_csv
from popularity import build_popularity
from settings import (SWEEP_PRESETS, SWEEP_SCHEMA, apply_overrides, atomic_write_text, check_config, derive_seed,
                      load_yaml, section, validate_document)
from topology import RadioParams, generate

log = logging.getLogger(__name__)

METHODS = ("optimal", "heuristic", "no_d2d")
DEFAULT_METHODS = ("heuristic", "no_d2d")

SWEEP_FIELDS = ["row_type", "variant", "param", "value", "seed", "method",
                "sdr", "sdr_std", "mean_g", "runtime_s", "status", "detail"]
BOUND_FIELDS = ["kind", "theta", "interferer", "T", "empirical", "stderr", "bound", "margin", "flagged"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _coerce(base, value):
    """Sweep values arrive as numbers; integer config keys keep integer values."""
    if isinstance(base, int) and not isinstance(base, bool) and float(value).is_integer():
        return int(value)
    return value


# ---------- sweep definition ----------

@attrs.frozen(eq=False)
class ExperimentSweep:
    name: str
    param: str
    values: tuple = attrs.field(converter=tuple)
    seeds: tuple[int, ...] = attrs.field(converter=lambda v: tuple(int(s) for s in v))
    methods: tuple[str, ...] = attrs.field(default=DEFAULT_METHODS, converter=tuple)
    fixed: dict = attrs.field(factory=dict, converter=dict)
    variants: dict = attrs.field(factory=dict, converter=dict)
    out: str | None = None

    @values.validator
    def _values(self, _attribute, value):
        if not value:
            raise ConfigError(f"sweep {self.name!r} has no values")

    @seeds.validator
    def _seeds(self, _attribute, value):
        if not value:
            raise ConfigError(f"sweep {self.name!r} has no seeds")

    @methods.validator
    def _methods(self, _attribute, value):
        unknown = sorted(set(value) - set(METHODS))
        if unknown or not value:
            raise ConfigError(f"unknown methods {unknown} (choose from {', '.join(METHODS)})")

    def validate(self, base_cfg: dict) -> None:
        if self.param not in base_cfg:
            raise ConfigError(f"swept parameter {self.param!r} is not a config key")
        for name, overrides in self.variant_items():
            for key in list(overrides) + list(self.fixed):
                if key.partition(".")[0] not in base_cfg:
                    raise ConfigError(f"{name or 'sweep'} overrides unknown key {key!r}")

    def variant_items(self) -> list[tuple[str, dict]]:
        return list(self.variants.items()) or [("", {})]

    def point_config(self, base_cfg: dict, variant: str, value) -> dict:
        overrides = dict(self.fixed)
        overrides.update(self.variants.get(variant) or {})
        overrides[self.param] = _coerce(base_cfg.get(self.param), value)
        return check_config(apply_overrides(base_cfg, overrides))


def load_presets(path: str = SWEEP_PRESETS) -> dict:
    doc = load_yaml(path) or {}
    validate_document(doc, SWEEP_SCHEMA, "sweep presets")
    return doc


def sweep_from_preset(name: str, path: str = SWEEP_PRESETS, seeds: int | None = None,
                      methods=None, out: str | None = None) -> ExperimentSweep:
    presets = load_presets(path)
    if name not in presets:
        raise ConfigError(f"unknown sweep preset {name!r} (available: {', '.join(sorted(presets))})")
    p = presets[name]
    return ExperimentSweep(
        name=name,
        param=p["param"],
        values=p["values"],
        seeds=range(seeds if seeds is not None else p.get("seeds", 20)),
        methods=methods or p.get("methods") or DEFAULT_METHODS,
        fixed=p.get("fixed") or {},
        variants=p.get("variants") or {},
        out=out,
    )


# ---------- one sweep point ----------

@attrs.frozen
class PointResult:
    variant: str
    value: object
    seed: int
    method: str
    sdr: float | None = None
    mean_g: float | None = None
    runtime_s: float | None = None
    status: str = "ok"
    detail: str = ""


def popularity_for(cfg: dict, num_users: int, num_files: int, seed: int):
    pop = section(cfg, "popularity")
    return build_popularity(num_users, num_files, cfg["K"], cfg["beta"], seed=derive_seed(seed, "popularity"),
                            distinct_ranks=pop.get("distinct_ranks", True), class_probs=pop.get("class_probs"))


def build_network(cfg: dict, seed: int):
    """(instance, popularity) for one seed; topology and ranks draw from separate streams."""
    instance = generate(derive_seed(seed, "topology"), cfg["U"], cfg["S"], RadioParams.from_config(cfg))
    return instance, popularity_for(cfg, cfg["U"], cfg["F"], seed)


def build_case(cfg: dict, seed: int) -> DeliveryContext:
    instance, popularity = build_network(cfg, seed)
    return DeliveryContext(instance, popularity, DelayBoundTable.from_config(instance, cfg))


def _run_method(method: str, context: DeliveryContext, cfg: dict, seed: int) -> tuple[float, float, float]:
    """(SDR, request-weighted mean G, runtime seconds)."""
    if method == "optimal":
        solver = section(cfg, "solver")
        result = solve_exhaustive(context, max_states=int(solver.get("max_states", 100_000_000)),
                                  chunk=int(solver.get("chunk", 4096)))
        mean_g = float(np.sum(context.Q * result.delays) / context.num_users)
        return result.sdr, mean_g, result.elapsed_s
    solve = heuristic_solution if method == "heuristic" else no_d2d_solution
    solution = solve(context, cfg, seed=derive_seed(seed, "allocation"))
    return solution.sdr, solution.mean_delay(context.Q), solution.runtime_s


def run_point(cfg: dict, seed: int, methods, variant: str = "", value=None) -> list[PointResult]:
    """Every method on one seeded case; failures become error rows instead of exceptions."""
    try:
        context = build_case(cfg, seed)
    except Exception as exc:
        log.warning("case %s=%s seed %d failed to build: %s", variant or "-", value, seed, exc)
        return [PointResult(variant, value, seed, m, status="error", detail=f"{type(exc).__name__}: {exc}")
                for m in methods]

    out = []
    for method in methods:
        try:
            sdr, mean_g, runtime = _run_method(method, context, cfg, seed)
        except Exception as exc:
            log.warning("%s on %s=%s seed %d failed: %s", method, variant or "-", value, seed, exc)
            out.append(PointResult(variant, value, seed, method, status="error",
                                   detail=f"{type(exc).__name__}: {exc}"))
            continue
        out.append(PointResult(variant, value, seed, method, sdr=sdr, mean_g=mean_g, runtime_s=runtime))
    return out


def _run_job(job) -> list[PointResult]:
    cfg, seed, methods, variant, value = job
    return run_point(cfg, seed, methods, variant=variant, value=value)


# ---------- whole sweep ----------

@attrs.frozen(eq=False)
class SweepResult:
    sweep: ExperimentSweep
    base_cfg: dict = attrs.field(repr=False)
    points: tuple[PointResult, ...] = attrs.field(repr=False)

    @property
    def errors(self) -> int:
        return sum(1 for p in self.points if p.status != "ok")

    def aggregates(self) -> list[dict]:
        rows = []
        groups: dict[tuple, list[PointResult]] = {}
        for p in self.points:
            groups.setdefault((p.variant, _fmt(p.value), p.method), []).append(p)
        for (variant, value, method), members in groups.items():
            ok = [p for p in members if p.status == "ok"]
            sdr = np.array([p.sdr for p in ok], dtype=float)
            row = {"row_type": "aggregate", "variant": variant, "param": self.sweep.param, "value": value,
                   "seed": "", "method": method, "detail": f"{len(ok)}/{len(members)} seeds"}
            if ok:
                row.update(sdr=_fmt(float(sdr.mean())),
                           sdr_std=_fmt(float(sdr.std(ddof=1)) if sdr.size > 1 else 0.0),
                           mean_g=_fmt(float(np.mean([p.mean_g for p in ok]))),
                           runtime_s=_fmt(float(np.mean([p.runtime_s for p in ok]))),
                           status="ok" if len(ok) == len(members) else "partial")
            else:
                row["status"] = "error"
            rows.append(row)
        return rows

    def mean_sdr(self, variant: str, method: str) -> list[float]:
        """Mean SDR per swept value in sweep order; NaN where every seed failed."""
        out = []
        for value in self.sweep.values:
            sdr = [p.sdr for p in self.points
                   if p.variant == variant and p.method == method and p.status == "ok" and p.value == value]
            out.append(float(np.mean(sdr)) if sdr else math.nan)
        return out

    def meta_rows(self) -> list[dict]:
        pop = section(self.base_cfg, "popularity")
        meta = [
            ("preset", self.sweep.name),
            ("config_preset", self.base_cfg.get("preset", "")),
            ("param", self.sweep.param),
            ("seeds", len(self.sweep.seeds)),
            ("methods", " ".join(self.sweep.methods)),
            ("distinct_ranks", bool(pop.get("distinct_ranks", True))),
        ]
        meta += [(f"fixed.{k}", v) for k, v in sorted(self.sweep.fixed.items())]
        for name, overrides in sorted(self.sweep.variants.items()):
            meta += [(f"variant.{name}.{k}", v) for k, v in sorted(overrides.items())]
        return [{"row_type": "meta", "param": key, "value": _fmt(value)} for key, value in meta]

    def data_rows(self) -> list[dict]:
        return [{"row_type": "data", "variant": p.variant, "param": self.sweep.param, "value": _fmt(p.value),
                 "seed": p.seed, "method": p.method, "sdr": _fmt(p.sdr), "mean_g": _fmt(p.mean_g),
                 "runtime_s": _fmt(p.runtime_s), "status": p.status, "detail": p.detail}
                for p in self.points]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=SWEEP_FIELDS, restval="", lineterminator="\n")
        writer.writeheader()
        for row in self.meta_rows() + self.data_rows() + self.aggregates():
            writer.writerow(row)
        return buf.getvalue()


def run_sweep(sweep: ExperimentSweep, base_cfg: dict, workers: int = 1) -> SweepResult:
    sweep.validate(base_cfg)
    jobs = []
    skipped = []
    for variant, _overrides in sweep.variant_items():
        for value in sweep.values:
            try:
                cfg = sweep.point_config(base_cfg, variant, value)
            except ConfigError as exc:
                # an invalid point still gets its rows, one per seed and method
                skipped += [PointResult(variant, value, seed, m, status="error", detail=str(exc))
                            for seed in sweep.seeds for m in sweep.methods]
                continue
            jobs += [(cfg, seed, tuple(sweep.methods), variant, value) for seed in sweep.seeds]

    log.info("sweep %s: %s over %d values, %d variants, %d seeds, methods %s, %d workers",
             sweep.name, sweep.param, len(sweep.values), len(sweep.variant_items()), len(sweep.seeds),
             ",".join(sweep.methods), workers)
    started = time.perf_counter()
    if workers > 1 and len(jobs) > 1:
        with multiprocessing.Pool(min(workers, len(jobs))) as pool:
            batches = pool.map(_run_job, jobs, chunksize=1)
    else:
        batches = [_run_job(job) for job in jobs]

    order = {(v, _fmt(x)): (i, j) for i, (v, _o) in enumerate(sweep.variant_items())
             for j, x in enumerate(sweep.values)}
    rank = {m: k for k, m in enumerate(sweep.methods)}
    points = [p for batch in batches for p in batch] + skipped
    points.sort(key=lambda p: (order[(p.variant, _fmt(p.value))], p.seed, rank[p.method]))
    result = SweepResult(sweep=sweep, base_cfg=base_cfg, points=tuple(points))
    log.info("sweep %s done: %d rows, %d errors, %.1fs", sweep.name, len(points), result.errors,
             time.perf_counter() - started)
    return result


def write_sweep_csv(path: str, result: SweepResult) -> None:
    atomic_write_text(path, result.to_csv())
    log.info("wrote %s", path)


# ---------- bound validation ----------

@attrs.frozen
class BoundRow:
    kind: str
    theta: float
    interferer: float | None
    T: int | None
    empirical: float
    stderr: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - (self.empirical - 3.0 * self.stderr)

    @property
    def flagged(self) -> bool:
        return self.margin < 0.0

    def as_dict(self) -> dict:
        return {"kind": self.kind, "theta": _fmt(self.theta), "interferer": _fmt(self.interferer),
                "T": _fmt(self.T), "empirical": _fmt(self.empirical), "stderr": _fmt(self.stderr),
                "bound": _fmt(self.bound), "margin": _fmt(self.margin), "flagged": _fmt(self.flagged)}


@attrs.frozen(eq=False)
class BoundValidation:
    rows: tuple[BoundRow, ...]
    moments: object = None

    @property
    def flagged(self) -> list[BoundRow]:
        return [r for r in self.rows if r.flagged]

    @property
    def passed(self) -> bool:
        return not self.flagged and (self.moments is None or self.moments.passed)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=BOUND_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row.as_dict())
        return buf.getvalue()


def _link_rows(cfg: dict, theta: float, interferer: float | None, T_values, seed: int, trials: int | None,
               workers: int, bracket) -> list[BoundRow]:
    load = RadioParams.from_config(cfg).load
    interferers = () if interferer is None else (interferer,)
    params = LinkBoundParams(theta=theta, interferers=interferers, load=load)
    overrides = {} if trials is None else {"trials": trials}
    label = f"validate|{theta}|{interferer}"
    dist = sample_delay(TrialConfig.from_config(cfg, theta, interferers, seed=derive_seed(seed, label), **overrides),
                        workers=workers)
    zeta = zeta0 if interferer is None else zeta1
    kind = "zeta0" if interferer is None else "zeta1"
    rows = [BoundRow(kind=kind, theta=theta, interferer=interferer, T=int(T), empirical=dist.exceedance(int(T)),
                     stderr=dist.stderr(int(T)), bound=min(1.0, zeta(params, int(T), bracket=bracket)))
            for T in T_values]
    b = section(cfg, "bounds")
    try:
        G = expected_delay_bound(params, rel_tol=b.get("rel_tol", 1e-6), t_max=b.get("t_max", 10_000),
                                 bracket=bracket, grid_points=b.get("grid_points", 256)).value
    except SeriesTruncationError:
        G = math.inf
    rows.append(BoundRow(kind="mean_" + kind, theta=theta, interferer=interferer, T=None, empirical=dist.mean(),
                         stderr=dist.mean_stderr(), bound=G))
    return rows


def run_bound_validation(cfg: dict, seed: int = 0, trials: int | None = None, workers: int = 1,
                         moments: bool = True) -> BoundValidation:
    """Monte Carlo exceedance against clipped zeta bounds on the configured link grid.

    A row is flagged when bound < empirical - 3 * stderr. The `mean_*` rows
    compare the sample mean delay with the expected-delay bound G.
    """
    v = section(cfg, "validation")
    bracket = tuple(section(cfg, "bounds").get("t_bracket", (1e-6, 10.0 * math.log(2.0))))
    T_values = v.get("T", list(range(1, 11)))
    rows = []
    for theta in v.get("thetas", [1.0, 10.0, 100.0, 1000.0]):
        rows += _link_rows(cfg, float(theta), None, T_values, seed, trials, workers, bracket)
    # every useful link again with a single interferer of each strength
    for theta in v.get("thetas", [1.0, 10.0, 100.0, 1000.0]):
        for other in v.get("interferer_thetas", [1.0, 10.0, 100.0]):
            rows += _link_rows(cfg, float(theta), float(other), T_values, seed, trials, workers, bracket)

    report = None
    if moments:
        overrides = {} if trials is None else {"samples": trials}
        report = check_slot_moments(MomentCheckConfig.from_config(cfg, seed=derive_seed(seed, "moments"), **overrides))
    result = BoundValidation(rows=tuple(rows), moments=report)
    for r in result.flagged:
        log.warning("bound violated: %s theta=%g interferer=%s T=%s empirical=%.4g bound=%.4g",
                    r.kind, r.theta, r.interferer, r.T, r.empirical, r.bound)
    log.info("bound validation: %d rows, %d flagged%s", len(rows), len(result.flagged),
             "" if report is None else f", slot moments {'ok' if report.passed else 'FAILED'}")
    return result


def moments_path(path: str) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}_moments{ext or '.csv'}"


def write_validation_csv(path: str, result: BoundValidation) -> None:
    atomic_write_text(path, result.to_csv())
    if result.moments is not None:
        write_report_csv(moments_path(path), result.moments)
    log.info("wrote %s", path)


