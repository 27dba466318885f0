#!/usr/bin/env python3
"""Slot-by-slot Rayleigh block-fading simulation of single-file link delays.

Each slot draws fresh unit-mean exponential power gains for the useful link
and every interferer; a trial finishes in the first slot T where the summed
log2(1 + SINR) reaches the per-file load L/(tau B). Trials that have not
finished after max_slots are censored and recorded as max_slots + 1.
"""
import csv
import io
import logging
import math
import multiprocessing

import attrs
import numpy as np
from scipy import integrate, stats

from delay_bounds import LN2, log_mean_z
from settings import atomic_write_text

log = logging.getLogger(__name__)


def _at_least_one(_inst, attribute, value):
    if value < 1:
        raise ValueError(f"{attribute.name} must be >= 1, got {value}")


def _non_negative(_inst, attribute, value):
    if not (value >= 0 and math.isfinite(value)):
        raise ValueError(f"{attribute.name} must be finite and >= 0, got {value}")


@attrs.frozen
class TrialConfig:
    theta: float = attrs.field(converter=float)
    interferers: tuple[float, ...] = attrs.field(default=(), converter=lambda v: tuple(float(x) for x in v))
    load: float = attrs.field(default=0.01, converter=float, validator=_non_negative)
    trials: int = attrs.field(default=100_000, converter=int, validator=_at_least_one)
    max_slots: int = attrs.field(default=20_000, converter=int, validator=_at_least_one)
    seed: int = 0
    chunk: int = attrs.field(default=25_000, converter=int, validator=_at_least_one)

    @theta.validator
    def _theta(self, _attribute, value):
        # infinity is allowed: a noiseless link finishes in the first slot
        if not value > 0:
            raise ValueError(f"theta must be > 0, got {value}")

    @classmethod
    def from_config(cls, cfg: dict, theta: float, interferers=(), seed: int = 0, **overrides) -> "TrialConfig":
        mc = dict(cfg.get("montecarlo") or {})
        fields = {
            "theta": theta,
            "interferers": interferers,
            "load": cfg["L"] / (cfg["tau"] * cfg["B"]),
            "trials": mc.get("trials", 100_000),
            "max_slots": mc.get("max_slots", 20_000),
            "chunk": mc.get("chunk", 25_000),
            "seed": seed,
        }
        fields.update(overrides)
        return cls(**fields)


@attrs.frozen(eq=False)
class DelayDistribution:
    delays: np.ndarray = attrs.field(repr=False)
    max_slots: int

    @property
    def trials(self) -> int:
        return int(self.delays.size)

    @property
    def censored(self) -> int:
        return int(np.count_nonzero(self.delays > self.max_slots))

    def exceedance(self, T: int) -> float:
        """Empirical P[delay > T]."""
        return float(np.count_nonzero(self.delays > T)) / self.trials

    def stderr(self, T: int) -> float:
        p = self.exceedance(T)
        return math.sqrt(p * (1.0 - p) / self.trials)

    def mean(self) -> float:
        return float(self.delays.mean())

    def mean_stderr(self) -> float:
        if self.trials < 2:
            return 0.0
        return float(self.delays.std(ddof=1) / math.sqrt(self.trials))

    def dump_csv(self, path: str, T_values, bound=None) -> None:
        """Rows of (T, exceedance, stderr, bound); `bound` maps T to a bound value or is omitted."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["T", "exceedance", "stderr", "bound"])
        for T in T_values:
            writer.writerow([int(T), repr(self.exceedance(T)), repr(self.stderr(T)),
                             "" if bound is None else repr(float(bound(int(T))))])
        atomic_write_text(path, buf.getvalue())


# ---------- sampling ----------

def _sinr(rng: np.random.Generator, size: int, theta: float, interferers: np.ndarray) -> np.ndarray:
    gains = rng.exponential(size=(size, 1 + interferers.size))
    if interferers.size:
        return theta * gains[:, 0] / (1.0 + gains[:, 1:] @ interferers)
    return theta * gains[:, 0]


def _run_chunk(args) -> np.ndarray:
    theta, interferers, load, size, max_slots, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    interferers = np.asarray(interferers, dtype=float)
    delays = np.full(size, max_slots + 1, dtype=np.int64)
    if math.isinf(theta) or load == 0.0:
        delays[:] = 1
        return delays
    acc = np.zeros(size)
    active = np.arange(size)
    for slot in range(1, max_slots + 1):
        acc[active] += np.log2(1.0 + _sinr(rng, active.size, theta, interferers))
        done = acc[active] >= load
        delays[active[done]] = slot
        active = active[~done]
        if active.size == 0:
            break
    return delays


def sample_delay(config: TrialConfig, workers: int = 1) -> DelayDistribution:
    sizes = [config.chunk] * (config.trials // config.chunk)
    if config.trials % config.chunk:
        sizes.append(config.trials % config.chunk)
    streams = np.random.SeedSequence(config.seed).spawn(len(sizes))
    jobs = [(config.theta, config.interferers, config.load, n, config.max_slots, s) for n, s in zip(sizes, streams)]
    if workers > 1 and len(jobs) > 1:
        with multiprocessing.Pool(min(workers, len(jobs))) as pool:
            parts = pool.map(_run_chunk, jobs)
    else:
        parts = [_run_chunk(job) for job in jobs]
    delays = np.concatenate(parts)
    delays.setflags(write=False)
    dist = DelayDistribution(delays=delays, max_slots=config.max_slots)
    if dist.censored:
        log.warning("%d of %d trials did not finish within %d slots (theta=%.3g)",
                    dist.censored, dist.trials, config.max_slots, config.theta)
    return dist


# ---------- per-slot moment checks ----------

def _threshold(z, t: float):
    """SINR needed for Z = exp(-t log2(1 + SINR)) to fall to z."""
    return np.expm1(-LN2 / t * np.log(z))


def free_cdf(z, theta: float, t: float):
    return np.exp(-_threshold(z, t) / theta)


def free_pdf(z, theta: float, t: float):
    z = np.asarray(z, dtype=float)
    return free_cdf(z, theta, t) / theta * (LN2 / t) * z ** (-1.0 - LN2 / t)


def interfered_cdf(z, theta: float, interferers, t: float):
    v = _threshold(z, t)
    out = np.exp(-v / theta)
    for other in interferers:
        out = out * theta / (theta + other * v)
    return out


def interfered_pdf(z, theta: float, interferers, t: float):
    z = np.asarray(z, dtype=float)
    v = _threshold(z, t)
    rate = 1.0 / theta + sum(other / (theta + other * v) for other in interferers)
    return interfered_cdf(z, theta, interferers, t) * rate * (LN2 / t) * z ** (-1.0 - LN2 / t)


@attrs.frozen
class MomentCheckConfig:
    theta: float = 100.0
    t: float = 0.3
    interferers: tuple[float, ...] = attrs.field(default=(10.0,), converter=lambda v: tuple(float(x) for x in v))
    samples: int = 100_000
    seed: int = 0
    grid: tuple[float, ...] = tuple(np.round(np.linspace(0.01, 0.99, 99), 2).tolist())

    @classmethod
    def from_config(cls, cfg: dict, seed: int = 0, **overrides) -> "MomentCheckConfig":
        v = dict(cfg.get("validation") or {})
        fields = {
            "theta": v.get("moment_theta", 100.0),
            "t": v.get("moment_t", 0.3),
            "interferers": (v.get("moment_interferer", 10.0),),
            "samples": dict(cfg.get("montecarlo") or {}).get("trials", 100_000),
            "seed": seed,
        }
        fields.update(overrides)
        return cls(**fields)


@attrs.frozen
class MomentCheckReport:
    ks_free: float
    mean_sample: float
    mean_closed_form: float
    mean_quadrature: float
    ks_interfered: float
    worst_domination_ratio: float
    ks_tolerance: float = 0.01
    mean_tolerance: float = 0.01

    @property
    def mean_rel_error(self) -> float:
        return abs(self.mean_sample - self.mean_closed_form) / self.mean_closed_form

    @property
    def passed(self) -> bool:
        return (self.ks_free <= self.ks_tolerance and self.ks_interfered <= self.ks_tolerance
                and self.mean_rel_error <= self.mean_tolerance
                and math.isclose(self.mean_closed_form, self.mean_quadrature, rel_tol=1e-6)
                and self.worst_domination_ratio <= 1.0 + 1e-12)

    def as_rows(self) -> list[tuple[str, float]]:
        return [
            ("ks_free", self.ks_free),
            ("mean_sample", self.mean_sample),
            ("mean_closed_form", self.mean_closed_form),
            ("mean_quadrature", self.mean_quadrature),
            ("mean_rel_error", self.mean_rel_error),
            ("ks_interfered", self.ks_interfered),
            ("worst_domination_ratio", self.worst_domination_ratio),
        ]


def check_slot_moments(config: MomentCheckConfig) -> MomentCheckReport:
    """Sampled Z = exp(-t log2(1 + SINR)) against its closed-form cdf, mean and pdf bound."""
    theta, t = config.theta, config.t
    interferers = np.asarray(config.interferers, dtype=float)
    free_rng, int_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2))

    z_free = np.exp(-t * np.log2(1.0 + _sinr(free_rng, config.samples, theta, np.empty(0))))
    ks_free = stats.kstest(z_free, lambda z: free_cdf(z, theta, t)).statistic

    closed = math.exp(log_mean_z(theta, t))
    # Z lives on (0, 1], so E[Z] = int_0^1 P[Z > z] dz
    quadrature, _err = integrate.quad(lambda z: 1.0 - float(free_cdf(z, theta, t)), 0.0, 1.0,
                                      epsabs=0.0, epsrel=1e-10, limit=400)

    ks_int = 0.0
    worst = 0.0
    if interferers.size:
        z_int = np.exp(-t * np.log2(1.0 + _sinr(int_rng, config.samples, theta, interferers)))
        ks_int = stats.kstest(z_int, lambda z: interfered_cdf(z, theta, interferers, t)).statistic
        grid = np.asarray(config.grid)
        kappa = (1.0 + interferers.sum()) / theta ** (interferers.size - 1)
        ratio = interfered_pdf(grid, theta, interferers, t) / (free_pdf(grid, theta, t) * kappa)
        worst = float(np.max(ratio))

    report = MomentCheckReport(ks_free=float(ks_free), mean_sample=float(z_free.mean()), mean_closed_form=closed,
                            mean_quadrature=float(quadrature), ks_interfered=float(ks_int),
                            worst_domination_ratio=worst)
    log.info("per-slot moment check theta=%g t=%g: ks=%.4f mean err=%.2e domination=%.3f",
             theta, t, report.ks_free, report.mean_rel_error, report.worst_domination_ratio)
    return report


def write_report_csv(path: str, report: MomentCheckReport) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["check", "value"])
    for name, value in report.as_rows():
        writer.writerow([name, repr(value)])
    writer.writerow(["passed", int(report.passed)])
    atomic_write_text(path, buf.getvalue())
