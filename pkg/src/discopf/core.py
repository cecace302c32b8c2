"""
core.py module contains the elements shared by every stage of the solver pipeline: the exception
hierarchy, the ``Failure`` record and the ``Reporter`` that labels and collects failures between stages
(a skipped guess, an oracle subproblem that did not solve, a malformed field in an instance document).
"""
import re
from functools import cached_property
from typing import Optional, Type, List, Dict, Any, Callable, NamedTuple, TypeVar, Tuple, Union

from typing_extensions import ParamSpec, Self


# Type Aliases
T = TypeVar('T')
P = ParamSpec('P')
AnyException = TypeVar('AnyException', bound=BaseException)

# Stage label pattern, e.g. 'qptas.guess[12].group(3)' or 'instance.nodes[4].v_min'
NamePattern = re.compile(r'^(\w+(\[\w+]|\(\w+\))?)+([-.](\w+(\[\w+]|\(\w+\))?))*$')


class DiscOpfError(Exception):
    """Base class of every error raised by discopf"""


class InstanceError(DiscOpfError):
    """The input instance (or document) cannot be used as given"""


class SchemaError(InstanceError):
    """
    The instance document does not follow the schema.

    :param failures: one failure per offending field, its source is the document path
    """
    failures: List['Failure']

    def __init__(self, message: str, failures: Optional[List['Failure']] = None) -> None:
        super().__init__(message)
        self.failures = list(failures or [])

    @property
    def paths(self) -> List[str]:
        """Gets the document paths of the offending fields"""
        return [failure.source for failure in self.failures]


class TopologyError(InstanceError):
    """The parent map is not a tree rooted at 0 with a single feeder, or not the required shape"""


class SignError(InstanceError):
    """A quantity that must be nonnegative (or positive) is not"""


class AssumptionError(InstanceError):
    """An operating assumption required by the requested operation does not hold"""


class InfeasibleError(DiscOpfError):
    """The requested program has no feasible point"""


class NumericalFailure(DiscOpfError):
    """The conic solver stopped without reaching the requested accuracy"""


class LimitExceeded(DiscOpfError):
    """An enumeration would exceed its configured size limit"""
    estimate: int
    limit: int

    def __init__(self, message: str, estimate: int, limit: int) -> None:
        super().__init__(message)
        self.estimate = estimate
        self.limit = limit


class Failure(NamedTuple):
    """
    Failure is the record of one error together with the stage label where it occurred.

    :param source: The dot separated labels leading to the stage that failed,
    :param error: The exception that caused the failure,
    :param details: Metadata attached by the reporters along the way (guess index, status, ...).
    """
    source: str
    error: Exception
    details: Dict[str, Any]


class StageFailure(Exception):
    """
    StageFailure carries a labelled failure out of a ``with reporter:`` block.

    The reporter that raised it is kept so an outer reporter of the same tree does not
    prepend its label a second time.
    """
    failure: Failure
    reporter: 'Reporter'

    def __init__(self, failure: Failure, reporter: 'Reporter') -> None:
        super().__init__(failure.source, failure.error)
        self.failure = failure
        self.reporter = reporter

    @property
    def source(self) -> str:
        return self.failure.source

    @property
    def error(self) -> Exception:
        return self.failure.error

    @property
    def details(self) -> Dict[str, Any]:
        return self.failure.details


def _join(label1: str, label2: str) -> str:
    return label1 + '.' + label2


def _invalid(err_type: Type[AnyException], *args) -> AnyException:
    """Marks an error as a package validation error and returns it"""
    error = err_type(*args)
    setattr(error, "__validation_error__", True)
    return error


def _is_validation_error(error: BaseException) -> bool:
    return getattr(error, "__validation_error__", False)


class Reporter:
    """
    Reporter labels a pipeline stage and collects the failures of that stage and of
    every stage derived from it; all reporters of one tree share the root's failure list.

    >>> reporter = Reporter('qptas')
    >>> reporter('guess[3]').report(InfeasibleError('restricted program'), status='infeasible')
    >>> reporter.failures[0].source
    'qptas.guess[3]'
    """
    __slots__ = ('_name', '_parent', '_details', '_failures', '__dict__')
    _name: str
    _parent: Optional['Reporter']
    _details: Dict[str, Any]
    _failures: List[Failure]

    def __init__(self, name: str, /, parent: Optional['Reporter'] = None, **details: Any) -> None:
        """
        :param name: The label of this stage (mandatory)
        :param parent: The reporter of the enclosing stage, if any
        :param details: Additional details bound to the stage
        """
        if __debug__:
            # Validation is only evaluated when run without the -O or -OO python flag
            if not isinstance(name, str):
                raise _invalid(TypeError, "label must be a string")
            elif not NamePattern.match(name):
                raise _invalid(ValueError, f"invalid label: {name!r}")
            if parent is not None and not isinstance(parent, Reporter):
                raise _invalid(TypeError, "'parent' must be instance of Reporter")
        self._name = name
        self._parent = parent
        self._details = details
        if parent is None:
            self._failures = []

    def __call__(self, name: str, /, **details: Any) -> 'Reporter':
        """Derives the reporter of a sub-stage"""
        return Reporter(name, self, **details)

    def __repr__(self) -> str:
        return f'Reporter({self.label!r})'

    @property
    def parent(self) -> Optional['Reporter']:
        return self._parent

    @property
    def name(self) -> str:
        return self._name

    @cached_property
    def root(self) -> 'Reporter':
        """Gets the first reporter of the tree"""
        return self if self._parent is None else self._parent.root

    @cached_property
    def label(self) -> str:
        """Gets the full stage path of this reporter"""
        return self._name if self._parent is None else _join(self._parent.label, self._name)

    @cached_property
    def details(self) -> Dict[str, Any]:
        """Gets the stage details merged with the enclosing stages' ones"""
        if self._parent is None:
            return dict(self._details)
        return {**self._parent.details, **self._details}

    @property
    def failures(self) -> List[Failure]:
        """Gets the failures shared by the whole tree (mutable)"""
        return self.root._failures

    def errors(self, kind: Union[Type[Exception], Tuple[Type[Exception], ...]] = Exception) -> List[Exception]:
        """Gets the recorded errors that are instances of kind"""
        return [failure.error for failure in self.failures if isinstance(failure.error, kind)]

    def failure(self, error: Exception, **details: Any) -> Failure:
        """Creates a failure record from the error and this stage's label and details"""
        if isinstance(error, StageFailure):
            if error.reporter.root is self.root:
                return Failure(error.source, error.error, {**error.details, **details})
            self.failures.extend(error.reporter.failures)
            return Failure(_join(self.label, error.source), error.error,
                           {**self.details, **details, **error.details})
        return Failure(self.label, error, {**self.details, **details})

    def report(self, error: Exception, **details: Any) -> None:
        """Records the failure without interrupting the caller"""
        self.failures.append(self.failure(error, **details))

    def __enter__(self) -> Self:
        return self

    def __exit__(self, _err_type, error: Optional[BaseException], _err_tb) -> None:
        if isinstance(error, Exception) and not _is_validation_error(error):
            raise StageFailure(self.failure(error), self) from None

    def safe(self, func: Callable[P, T], /, *args: P.args, **kwargs: P.kwargs) -> Optional[T]:
        """Calls func, records and swallows its failure (returning None)"""
        try:
            return func(*args, **kwargs)
        except Exception as err:
            self.report(err)
            return None

    @staticmethod
    def optional(func: Callable[P, T], /, *args: P.args, **kwargs: P.kwargs) -> Optional[T]:
        """Calls func and ignores its failure (returning None)"""
        try:
            return func(*args, **kwargs)
        except Exception:
            return None

    def required(self, func: Callable[P, T], /, *args: P.args, **kwargs: P.kwargs) -> T:
        """Calls func and raises its failure labelled with this stage"""
        with self:
            return func(*args, **kwargs)
