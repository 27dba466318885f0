#!/usr/bin/env python3
"""Numerical kernels behind the delay bounds.

Upper incomplete gamma for any real first argument, a bracketed 1-D
minimiser (grid scan + golden-section refinement) and a truncated series
summer with an optional closed-form remainder.
"""
import math
from collections.abc import Callable

import attrs
import numpy as np
from scipy import integrate, special

from errors import NumericalError, SeriesTruncationError

PHI_RATIO = 2.0 / (1.0 + math.sqrt(5.0))

# gammaincc loses relative accuracy for small a and underflows for large x
_SCIPY_MIN_A = 0.25
_SCIPY_MIN_Q = 1e-280


# ---------- incomplete gamma ----------

def _quad(fn, lo, hi) -> float:
    value, _err = integrate.quad(fn, lo, hi, epsabs=0.0, epsrel=1e-11, limit=400)
    return value


def _log_gamma_tail_from(a: float, x: float) -> float:
    # s = x + r:  Gamma(a, x) = x^(a-1) e^(-x) * int_0^inf (1 + r/x)^(a-1) e^(-r) dr
    body = _quad(lambda r: math.exp((a - 1.0) * math.log1p(r / x) - r), 0.0, math.inf)
    return (a - 1.0) * math.log(x) - x + math.log(body)


def _log_gamma_head(a: float, x: float) -> float:
    # int_x^1 s^(a-1) e^(-s) ds with s = e^v, scaled by the integrand maximum
    lo = math.log(x)
    v_star = lo if a <= 0 else min(max(math.log(a), lo), 0.0)
    peak = a * v_star - math.exp(v_star)
    body = _quad(lambda v: math.exp(a * v - math.exp(v) - peak), lo, 0.0)
    return peak + math.log(body)


def log_upper_incomplete_gamma(a: float, x: float) -> float:
    """log Gamma(a, x) for x > 0 and any real a."""
    a = float(a)
    x = float(x)
    if not x > 0.0 or not math.isfinite(x):
        raise ValueError(f"upper incomplete gamma needs finite x > 0, got {x}")
    if a >= _SCIPY_MIN_A:
        q = special.gammaincc(a, x)
        if q > _SCIPY_MIN_Q:
            return math.log(q) + special.gammaln(a)
    if x >= 1.0:
        return _log_gamma_tail_from(a, x)
    return float(np.logaddexp(_log_gamma_head(a, x), _log_gamma_tail_from(a, 1.0)))


def upper_incomplete_gamma(a: float, x: float) -> float:
    return math.exp(log_upper_incomplete_gamma(a, x))


# ---------- 1-D minimisation ----------

@attrs.frozen
class MinimizerResult:
    argmin: float
    value: float
    iterations: int
    converged: bool
    at_boundary: bool = False


def golden_section(fn: Callable[[float], float], lo: float, hi: float,
                   tol: float = 1e-6, max_iterations: int = 200) -> MinimizerResult:
    """Golden-section search on [lo, hi]; the endpoints themselves are never evaluated."""
    x1 = hi - PHI_RATIO * (hi - lo)
    x2 = lo + PHI_RATIO * (hi - lo)
    f1 = fn(x1)
    f2 = fn(x2)
    iteration = 0
    while iteration < max_iterations and abs(hi - lo) > tol:
        if f2 > f1:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - PHI_RATIO * (hi - lo)
            f1 = fn(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + PHI_RATIO * (hi - lo)
            f2 = fn(x2)
        iteration += 1
    argmin, value = (x1, f1) if f1 <= f2 else (x2, f2)
    converged = abs(hi - lo) <= tol and math.isfinite(value)
    return MinimizerResult(argmin=argmin, value=value, iterations=iteration, converged=converged)


def _grid(lo: float, hi: float, n: int, spacing: str) -> np.ndarray:
    if spacing == "geometric":
        if lo <= 0:
            raise ValueError("geometric grid needs a positive lower bracket edge")
        return np.geomspace(lo, hi, n)
    # open at lo, closed at hi
    return np.linspace(lo, hi, n + 1)[1:]


def minimize_over_t(objective: Callable[[float], float], bracket: tuple[float, float],
                    tol: float = 1e-6, grid_points: int = 100,
                    spacing: str = "linear") -> MinimizerResult:
    lo, hi = float(bracket[0]), float(bracket[1])
    if not hi > lo:
        raise ValueError(f"empty bracket ({lo}, {hi}]")
    points = _grid(lo, hi, grid_points, spacing)
    with np.errstate(all="ignore"):
        values = np.array([objective(float(t)) for t in points], dtype=float)
    finite = np.isfinite(values)
    if not finite.any():
        raise NumericalError("objective is non-finite on the whole bracket")
    j = int(np.argmin(np.where(finite, values, np.inf)))

    left = points[j - 1] if j > 0 else (points[0] if spacing == "geometric" else lo)
    right = points[j + 1] if j + 1 < len(points) else hi
    best_t, best_v = float(points[j]), float(values[j])
    iterations = 0
    converged = True
    if right > left:
        with np.errstate(all="ignore"):
            refined = golden_section(objective, float(left), float(right), tol=tol)
        iterations = refined.iterations
        converged = refined.converged
        if math.isfinite(refined.value) and refined.value <= best_v:
            best_t, best_v = refined.argmin, refined.value

    edge = 10.0 * tol
    at_boundary = (best_t - lo) <= edge or (hi - best_t) <= edge
    return MinimizerResult(argmin=best_t, value=best_v, iterations=iterations,
                           converged=converged, at_boundary=at_boundary)


# ---------- series ----------

@attrs.frozen
class SeriesSum:
    value: float
    truncation: int
    converged: bool
    closed_tail: bool = False


def truncated_series_sum(term: Callable[[int], float], rel_tol: float = 1e-6, t_max: int = 10_000,
                         remainder: Callable[[int], float | None] | None = None) -> SeriesSum:
    """Sum term(T) for T = 1, 2, ... until term(T) < rel_tol * partial sum.

    `remainder(T)`, when given, may return the exact value of sum_{T' >= T} term(T');
    the series is then completed from that index without further terms.
    """
    partial = 0.0
    for T in range(1, t_max + 1):
        if remainder is not None:
            rest = remainder(T)
            if rest is not None:
                return SeriesSum(value=partial + rest, truncation=T, converged=True, closed_tail=True)
        value = term(T)
        if value < 0:
            raise ValueError(f"negative series term {value} at T={T}")
        partial += value
        if partial == 0.0 or value < rel_tol * partial:
            return SeriesSum(value=partial, truncation=T, converged=True)
    raise SeriesTruncationError(partial, t_max)
