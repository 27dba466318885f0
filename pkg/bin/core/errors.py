#!/usr/bin/env python3
"""Exception hierarchy shared by every hetcache module, plus the CLI exit-code map."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_INTERNAL = 3


class HetCacheError(Exception):
    exit_code = EXIT_INTERNAL


class ConfigError(HetCacheError, ValueError):
    exit_code = EXIT_USAGE


class InfeasibleError(HetCacheError, ValueError):
    exit_code = EXIT_INFEASIBLE


class SearchLimitError(HetCacheError):
    exit_code = EXIT_INFEASIBLE

    def __init__(self, what: str, estimate: int, limit: int):
        super().__init__(f"{what} size estimate {estimate} exceeds limit {limit}")
        self.estimate = estimate
        self.limit = limit


class SeriesTruncationError(HetCacheError):
    def __init__(self, partial: float, truncation: int):
        super().__init__(f"series did not converge by T={truncation} (partial sum {partial:.6g})")
        self.partial = partial
        self.truncation = truncation


class MissingBoundError(HetCacheError, KeyError):
    pass


class NumericalError(HetCacheError, ArithmeticError):
    pass


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, HetCacheError):
        return exc.exit_code
    return EXIT_INTERNAL
