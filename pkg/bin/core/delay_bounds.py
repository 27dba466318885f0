#!/usr/bin/env python3
"""Chernoff bounds on the slot count needed to push one file over a Rayleigh link.

For a link with mean SNR theta and per-file load lam = L/(tau B), the delay
exceeds T slots with probability at most

    zeta(T) = min_t  exp(t lam) * (kappa * E[Z](t)) ** T,   E[Z](t) = E[(1 + X)^(-t/ln2)]

where X ~ Exp(mean theta), E[Z](t) = e^(1/theta) Gamma(1 - t/ln2, 1/theta) / theta^(t/ln2),
and kappa = 1 for an interference-free link or (1 + sum theta') / theta^(|I|-1)
under interferers with mean SNRs theta'. Everything is evaluated in the log
domain: the exponent is t*lam + T*(log E[Z](t) + log kappa).

The expected delay of a file taking at least one slot is sum_{T>=0} P[delay > T],
so the stored bound is G = 1 + sum_{T>=1} min(1, zeta(T)).
"""
import csv
import functools
import io
import logging
import math

import attrs
import numpy as np
from numpy.polynomial import laguerre
from scipy.interpolate import CubicSpline

from errors import MissingBoundError, SeriesTruncationError
from special_math import log_upper_incomplete_gamma, minimize_over_t, truncated_series_sum

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
DEFAULT_BRACKET = (1e-6, 10.0 * LN2)
DEFAULT_GRID_POINTS = 256
DEFAULT_G_CAP = 1e9
# curves shared by the module-level zeta functions; tables keep their own
SHARED_CURVES = 256
ZETA_MEMO_SIZE = 65_536

# below this SNR E[Z] is integrated directly against the exponential density;
# the incomplete-gamma form cancels e^(1/theta) against a tiny Gamma there
_DIRECT_THETA = 0.1
_LAGUERRE_X, _LAGUERRE_W = laguerre.laggauss(80)


def _quantize(value: float) -> float:
    return float(f"{value:.12g}")


def _positive_finite(_inst, attribute, value):
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"{attribute.name} must be finite and > 0, got {value}")


def _positive_thetas(_inst, _attribute, value):
    if any(not (v > 0 and math.isfinite(v)) for v in value):
        raise ValueError(f"interferer SNRs must be finite and > 0, got {value}")


@attrs.frozen
class LinkBoundParams:
    theta: float = attrs.field(converter=float, validator=_positive_finite)
    interferers: tuple[float, ...] = attrs.field(default=(), converter=lambda v: tuple(float(x) for x in v),
                                                 validator=_positive_thetas)
    load: float = attrs.field(default=0.01, converter=float, validator=_positive_finite)

    @property
    def log_kappa(self) -> float:
        if not self.interferers:
            return 0.0
        return math.log1p(sum(self.interferers)) - (len(self.interferers) - 1) * math.log(self.theta)

    def key(self) -> tuple:
        return (_quantize(self.theta), tuple(sorted(_quantize(v) for v in self.interferers)), _quantize(self.load))


# ---------- per-slot moment ----------

def log_mean_z(theta: float, t: float) -> float:
    """log E[Z] for Z = exp(-t log2(1 + X)), X exponential with mean theta."""
    s = t / LN2
    if theta <= _DIRECT_THETA:
        # E[Z] - 1 = int (e^(-s log1p(theta x)) - 1) e^(-x) dx
        excess = float(np.dot(_LAGUERRE_W, np.expm1(-s * np.log1p(theta * _LAGUERRE_X))))
        return math.log1p(excess)
    return 1.0 / theta + log_upper_incomplete_gamma(1.0 - s, 1.0 / theta) - s * math.log(theta)


def mean_z(theta: float, t: float) -> float:
    return math.exp(log_mean_z(theta, t))


@attrs.frozen
class ZetaPoint:
    log_value: float
    t: float
    at_edge: bool

    @property
    def value(self) -> float:
        return 1.0 if self.log_value >= 0.0 else math.exp(self.log_value)


class ChernoffCurve:
    """log E[Z](t) on a geometric t-grid for one link SNR, shared by all interferer sets."""

    def __init__(self, theta: float, load: float, bracket=DEFAULT_BRACKET, grid_points: int = DEFAULT_GRID_POINTS):
        self.theta = float(theta)
        self.load = float(load)
        self.bracket = (float(bracket[0]), float(bracket[1]))
        self.ts = np.geomspace(self.bracket[0], self.bracket[1], grid_points)
        self.ell = np.array([log_mean_z(self.theta, float(t)) for t in self.ts])
        self._spline = CubicSpline(np.log(self.ts), self.ell)
        self._zeta_cached = functools.lru_cache(maxsize=ZETA_MEMO_SIZE)(self._zeta)

    def diverges(self, log_kappa: float) -> bool:
        """True when kappa * E[Z](t) >= 1 at every grid t, i.e. every zeta(T) clips to 1."""
        return bool(np.min(self.ell) + log_kappa >= 0.0)

    def zeta(self, T: int, log_kappa: float = 0.0) -> ZetaPoint:
        return self._zeta_cached(int(T), float(log_kappa))

    def memo_info(self):
        return self._zeta_cached.cache_info()

    def _zeta(self, T: int, log_kappa: float) -> ZetaPoint:
        exponents = self.ts * self.load + T * (self.ell + log_kappa)
        j = int(np.argmin(exponents))
        best, t_best = float(exponents[j]), float(self.ts[j])
        last = len(self.ts) - 1
        if 0 < j < last and best < 0.0:
            spline = self._spline

            def smooth(t: float) -> float:
                return t * self.load + T * (float(spline(math.log(t))) + log_kappa)

            refined = minimize_over_t(smooth, (float(self.ts[j - 1]), float(self.ts[j + 1])),
                                      grid_points=8, spacing="geometric")
            exact = refined.argmin * self.load + T * (log_mean_z(self.theta, refined.argmin) + log_kappa)
            if exact < best:
                best, t_best = exact, refined.argmin
        return ZetaPoint(log_value=best, t=t_best, at_edge=(j == last))

    def edge_remainder(self, n0: int, log_kappa: float) -> float | None:
        """sum_{n >= n0} min(1, zeta(n)) once the optimal t has reached the top of the bracket.

        The grid argmin is non-decreasing in n, so from there on zeta(n) = A r^n exactly.
        """
        point = self.zeta(n0, log_kappa)
        if not point.at_edge:
            return None
        log_a = self.ts[-1] * self.load
        log_r = float(self.ell[-1] + log_kappa)
        if log_r >= 0.0:
            return None
        n_clip = max(n0, math.floor(-log_a / log_r) + 1)
        while n_clip > n0 and log_a + (n_clip - 1) * log_r < 0.0:
            n_clip -= 1
        geometric = math.exp(log_a + n_clip * log_r) / -math.expm1(log_r)
        return float(n_clip - n0) + geometric


@functools.lru_cache(maxsize=SHARED_CURVES)
def _shared_curve(theta: float, load: float, bracket: tuple, grid_points: int) -> ChernoffCurve:
    return ChernoffCurve(theta, load, bracket, grid_points)


def curve_for(theta: float, load: float, bracket=DEFAULT_BRACKET, grid_points: int = DEFAULT_GRID_POINTS) -> ChernoffCurve:
    return _shared_curve(_quantize(theta), _quantize(load), tuple(float(b) for b in bracket), int(grid_points))


def shared_curve_info():
    return _shared_curve.cache_info()


# ---------- zeta bounds ----------

def zeta0(params: LinkBoundParams, T: int, bracket=DEFAULT_BRACKET) -> float:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return curve_for(params.theta, params.load, bracket).zeta(T).value


def zeta1(params: LinkBoundParams, T: int, bracket=DEFAULT_BRACKET) -> float:
    if not params.interferers:
        raise ValueError("zeta1 needs at least one interferer; use zeta0 for a clean link")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return curve_for(params.theta, params.load, bracket).zeta(T, params.log_kappa).value


def zeta(params: LinkBoundParams, T: int, bracket=DEFAULT_BRACKET) -> float:
    return zeta1(params, T, bracket) if params.interferers else zeta0(params, T, bracket)


@attrs.frozen
class DelayBound:
    value: float
    truncation: int
    converged: bool
    closed_tail: bool = False


def expected_delay_bound(params: LinkBoundParams, rel_tol: float = 1e-6, t_max: int = 10_000,
                         bracket=DEFAULT_BRACKET, grid_points: int = DEFAULT_GRID_POINTS,
                         curve: ChernoffCurve | None = None) -> DelayBound:
    if curve is None:
        curve = curve_for(params.theta, params.load, bracket, grid_points)
    log_kappa = params.log_kappa
    if curve.diverges(log_kappa):
        raise SeriesTruncationError(float(t_max), t_max)

    # series index T covers P[delay > T - 1]; the first term is P[delay >= 1] = 1
    def term(T: int) -> float:
        return 1.0 if T == 1 else curve.zeta(T - 1, log_kappa).value

    def remainder(T: int) -> float | None:
        return None if T == 1 else curve.edge_remainder(T - 1, log_kappa)

    total = truncated_series_sum(term, rel_tol=rel_tol, t_max=t_max, remainder=remainder)
    return DelayBound(value=total.value, truncation=total.truncation, converged=total.converged,
                      closed_tail=total.closed_tail)


# ---------- table ----------

class DelayBoundTable:
    """G_xu(empty) and G_xu({y}) for every transmitter x, receiving user u and single interferer y."""

    def __init__(self, instance, rel_tol: float = 1e-6, t_max: int = 10_000, bracket=DEFAULT_BRACKET,
                 grid_points: int = DEFAULT_GRID_POINTS, g_cap: float = DEFAULT_G_CAP):
        self.instance = instance
        self.rel_tol = rel_tol
        self.t_max = t_max
        self.bracket = (float(bracket[0]), float(bracket[1]))
        self.grid_points = grid_points
        self.g_cap = float(g_cap)
        self.load = instance.params.load
        self._entries: dict[tuple, DelayBound] = {}
        self._curves: dict[float, ChernoffCurve] = {}
        self._arrays: tuple[np.ndarray, np.ndarray] | None = None
        self.capped = 0

    @classmethod
    def from_config(cls, instance, cfg: dict) -> "DelayBoundTable":
        b = dict(cfg.get("bounds") or {})
        return cls(instance, rel_tol=b.get("rel_tol", 1e-6), t_max=b.get("t_max", 10_000),
                   bracket=tuple(b.get("t_bracket", DEFAULT_BRACKET)),
                   grid_points=b.get("grid_points", DEFAULT_GRID_POINTS), g_cap=b.get("g_cap", DEFAULT_G_CAP))

    @classmethod
    def build(cls, instance, **kwargs) -> "DelayBoundTable":
        """Table with every entry evaluated up front."""
        table = cls(instance, **kwargs)
        table.arrays()
        return table

    def _params(self, x: int, u: int, y: int | None) -> LinkBoundParams:
        inst = self.instance
        receiver = inst.user_node(u)
        if x == receiver:
            raise MissingBoundError(f"no link from user {u} to itself")
        interferers = ()
        if y is not None:
            if y in (x, receiver):
                raise MissingBoundError(f"interferer {y} coincides with transmitter or receiver of ({x}->{u})")
            interferers = (inst.theta(y, receiver),)
        return LinkBoundParams(theta=inst.theta(x, receiver), interferers=interferers, load=self.load)

    def curve(self, theta: float) -> ChernoffCurve:
        """Curve for one transmitter SNR; lives as long as the table."""
        key = _quantize(theta)
        curve = self._curves.get(key)
        if curve is None:
            curve = self._curves[key] = ChernoffCurve(key, _quantize(self.load), self.bracket, self.grid_points)
        return curve

    def bound(self, x: int, u: int, y: int | None = None) -> DelayBound:
        params = self._params(x, u, y)
        key = params.key()
        entry = self._entries.get(key)
        if entry is None:
            try:
                entry = expected_delay_bound(params, self.rel_tol, self.t_max, self.bracket, self.grid_points,
                                             curve=self.curve(params.theta))
            except SeriesTruncationError as exc:
                log.debug("no finite bound for theta=%.3g interferers=%s (%s); capping",
                          params.theta, params.interferers, exc)
                entry = DelayBound(value=self.g_cap, truncation=exc.truncation, converged=False)
                self.capped += 1
            if entry.value > self.g_cap:
                entry = attrs.evolve(entry, value=self.g_cap, converged=False)
                self.capped += 1
            self._entries[key] = entry
        return entry

    def free(self, x: int, u: int) -> float:
        return self.bound(x, u).value

    def interfered(self, x: int, u: int, y: int) -> float:
        return self.bound(x, u, y).value

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense (g_free[x, u], g_int[x, u, y]); structurally impossible entries hold 0."""
        if self._arrays is not None:
            return self._arrays
        inst = self.instance
        n, users = inst.num_nodes, inst.num_users
        g_free = np.zeros((n, users))
        g_int = np.zeros((n, users, n))
        for u in range(users):
            receiver = inst.user_node(u)
            for x in range(n):
                if x == receiver:
                    continue
                g_free[x, u] = self.free(x, u)
                for y in range(n):
                    if y not in (x, receiver):
                        g_int[x, u, y] = self.interfered(x, u, y)
        if self.capped:
            log.warning("%d link bounds had no finite value and were capped at %.3g slots", self.capped, self.g_cap)
        for arr in (g_free, g_int):
            arr.setflags(write=False)
        self._arrays = (g_free, g_int)
        return self._arrays

    def max_bound(self) -> float:
        g_free, g_int = self.arrays()
        return float(max(g_free.max(initial=0.0), g_int.max(initial=0.0)))

    def dump_curves_csv(self, links: list[tuple[int, int, int | None]], T_values) -> str:
        """CSV text of (x, u, y, T, zeta) rows for plotting."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x", "u", "y", "theta", "interferer_theta", "T", "zeta", "G"])
        for x, u, y in links:
            params = self._params(x, u, y)
            g = self.bound(x, u, y).value
            for T in T_values:
                writer.writerow([x, u, "" if y is None else y, repr(params.theta),
                                 repr(params.interferers[0]) if params.interferers else "",
                                 T, repr(self.curve(params.theta).zeta(int(T), params.log_kappa).value), repr(g)])
        return buf.getvalue()
