"""
handler.py module routes the failures collected or raised by reporters: printing, logging,
filtering by stage label or error type, and mapping errors to command line exit codes.
"""
import re
import abc
import sys
import logging
from datetime import datetime
from typing import Pattern, List, Literal, Callable, Type, Tuple, Union, TextIO, Optional, cast

try:
    import colorama
except ImportError:
    _template = "[discopf] {source} :: {err_type}({error}) {time}"
else:
    colorama.just_fix_windows_console()
    _template = (
        f"{colorama.Style.BRIGHT + colorama.Fore.LIGHTYELLOW_EX}[discopf] "
        f"{colorama.Style.BRIGHT + colorama.Fore.WHITE}{{source}}{colorama.Style.RESET_ALL} :: "
        f"{colorama.Style.BRIGHT + colorama.Fore.LIGHTRED_EX}{{err_type}}({colorama.Style.RESET_ALL}"
        f"{colorama.Fore.LIGHTWHITE_EX}{{error}}{colorama.Fore.RESET}"
        f"{colorama.Style.BRIGHT + colorama.Fore.LIGHTRED_EX}){colorama.Style.RESET_ALL} "
        f"{colorama.Style.DIM + colorama.Fore.CYAN}{{time}}{colorama.Style.RESET_ALL}"
    )
from typing_extensions import TypeAlias, Self

from .core import (Failure, StageFailure, Reporter, DiscOpfError, InstanceError, InfeasibleError,
                   LimitExceeded, _invalid)

FailureFilter: TypeAlias = Callable[[Failure], bool]
FailureHandler: TypeAlias = Callable[[Failure], None]
ExceptionTypes = Union[Type[Exception], Tuple[Type[Exception], ...]]
Filters: TypeAlias = Union[str, ExceptionTypes, 'FailureMatch', Tuple['Filters', ...], List['Filters']]

# Command line exit codes
EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def print_failure(failure: Failure, /, stream: Optional[TextIO] = None) -> None:
    """Writes a one line record of the failure (to stderr by default)"""
    line = _template.format(
        source=failure.source,
        err_type=type(failure.error).__name__,
        error=failure.error,
        time=datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
    )
    print(line, file=stream or sys.stderr)


def log_failure(failure: Failure, /) -> None:
    """Logs the failure to the logger named after its source stage"""
    details = ' '.join(f'{key}={value}' for key, value in failure.details.items())
    logging.getLogger(failure.source).warning("%s: %s %s", type(failure.error).__name__, failure.error, details)


def exit_code(error: Optional[BaseException]) -> int:
    """Maps an error (or a StageFailure wrapping one) to the command line exit code"""
    if isinstance(error, StageFailure):
        error = error.error
    if error is None:
        return EXIT_OK
    if isinstance(error, InfeasibleError):
        return EXIT_INFEASIBLE
    if isinstance(error, (InstanceError, LimitExceeded)):
        return EXIT_INPUT
    return EXIT_NUMERICAL


class FailureMatch(abc.ABC):
    @abc.abstractmethod
    def __call__(self, failure: Failure, /) -> bool:
        """Checks if the failure matches"""


class _LabelMatch(FailureMatch):
    __slots__ = ('label',)

    def __init__(self, label: str, /) -> None:
        self.label = label

    def __call__(self, failure: Failure, /) -> bool:
        return failure.source == self.label


class _LabelPatternMatch(FailureMatch):
    __slots__ = ('pattern',)
    pattern: Pattern[str]

    def __init__(self, pattern: str, /) -> None:
        self.pattern = re.compile(re.escape(pattern).replace(r'\*', '.*') + '$', re.DOTALL)

    def __call__(self, failure: Failure, /) -> bool:
        return bool(self.pattern.match(failure.source))


class _ErrorMatch(FailureMatch):
    __slots__ = ('kind',)

    def __init__(self, kind: ExceptionTypes, /) -> None:
        self.kind = kind

    def __call__(self, failure: Failure, /) -> bool:
        return isinstance(failure.error, self.kind)


def _match_all(_: Failure, /) -> Literal[True]:
    return True


def filters(spec: Filters, /) -> FailureFilter:
    """
    Creates a failure filter from a specification: a stage label (``'qptas.guess[*]'`` globs),
    an exception type, a list of specifications (any matches) or a tuple (all match).
    """
    if isinstance(spec, FailureMatch) or spec is _match_all:
        return cast(FailureFilter, spec)
    if isinstance(spec, (tuple, list)):
        if not spec:
            raise _invalid(TypeError, f"Cannot use an empty {type(spec).__name__} as failure specification")
        parts = [filters(item) for item in spec]
        if len(parts) == 1:
            return parts[0]
        combine = any if isinstance(spec, list) else all
        return lambda failure: combine(part(failure) for part in parts)
    if spec == '*' or spec is Exception:
        return _match_all
    if isinstance(spec, str):
        return _LabelPatternMatch(spec) if '*' in spec else _LabelMatch(spec)
    if isinstance(spec, type) and issubclass(spec, Exception):
        return _ErrorMatch(spec)
    raise _invalid(TypeError, f"Unsupported filter type {type(spec)!r}")


class Not(FailureMatch):
    """Matches the failures that none of the given specifications match, ``Not(InfeasibleError)``"""
    __slots__ = ('_filter',)

    def __init__(self, *spec: Filters) -> None:
        self._filter = filters(spec[0] if len(spec) == 1 else list(spec))
        if self._filter is _match_all:
            raise _invalid(ValueError, "Cannot filter out all failures")

    def __call__(self, failure: Failure, /) -> bool:
        return not self._filter(failure)


class Handler:
    """
    Handler dispatches failures to a set of callables, each optionally guarded by a filter
    given as ``(callable, filters)``; without arguments it prints failures.

    Used as a context manager it captures a raised ``StageFailure``, handles it and
    remembers it in ``captured`` so the command line can derive its exit code.
    """
    __slots__ = ('_routes', 'captured')
    captured: Optional[StageFailure]

    def __init__(self, *routes: Union[FailureHandler, Tuple[FailureHandler, Filters]]) -> None:
        self._routes: List[Tuple[FailureHandler, FailureFilter]] = []
        for route in routes:
            if isinstance(route, tuple):
                if len(route) != 2:
                    raise _invalid(ValueError, "A filtered handler must be given as (handler, filters)")
                func, spec = route
                self._routes.append((func, filters(spec)))
            elif callable(route):
                self._routes.append((route, _match_all))
            else:
                raise _invalid(TypeError, "the handler must be a callable with signature: (Failure) -> None")
        if not self._routes:
            self._routes.append((print_failure, _match_all))
        self.captured = None

    def __call__(self, failure: Failure, /) -> None:
        for func, condition in self._routes:
            if condition(failure):
                func(failure)

    def __enter__(self) -> Self:
        self.captured = None
        return self

    def __exit__(self, exc_type=None, exc_val=None, exc_tb=None) -> bool:
        if exc_type is None:
            return False
        if issubclass(exc_type, StageFailure):
            self.captured = exc_val
            self(exc_val.failure)
            return True
        if issubclass(exc_type, DiscOpfError):
            failure = Failure(type(exc_val).__name__.lower(), exc_val, {})
            self.captured = StageFailure(failure, Reporter('discopf'))
            self(failure)
            return True
        return False

    def from_reporter(self, reporter: Reporter) -> None:
        """Handles every failure recorded by the reporter's tree"""
        for failure in reporter.failures:
            self(failure)

    @property
    def exit_code(self) -> int:
        return exit_code(self.captured)
