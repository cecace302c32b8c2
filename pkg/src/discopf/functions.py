"""
functions.py module implements the ``scoped`` decorator that binds pipeline functions
to the reporter tree of their caller.
"""
import inspect
import functools
from typing import Callable, Optional, cast, overload

from .core import Reporter, P, T, _invalid

REPORTER_ARG_NAME = 'reporter'


@overload
def scoped(func: Callable[P, T], /) -> Callable[P, T]: ...
@overload
def scoped(name: str = ..., /) -> Callable[[Callable[P, T]], Callable[P, T]]: ...


def scoped(arg=None, /):
    """
    Decorates a pipeline function that accepts an optional ``reporter`` keyword argument.

    When the caller passes a reporter, the function receives a child reporter named after
    the function (or the given name) and any exception escaping it is raised as a
    ``StageFailure`` labelled with that child. When no reporter is passed the function
    runs unchanged and its exceptions propagate as they are.

    >>> @scoped('relax')
    ... def solve(instance, *, reporter=None):
    ...     ...
    """
    def decorator(func_: Callable[P, T], /, name: Optional[str] = None) -> Callable[P, T]:
        signature = inspect.signature(func_)
        if REPORTER_ARG_NAME not in signature.parameters:
            raise _invalid(TypeError, f"{func_.__name__}() must accept a {REPORTER_ARG_NAME!r} argument")
        name_ = name or func_.__name__

        @functools.wraps(func_)
        def wrap(*args: P.args, **kwargs: P.kwargs) -> T:
            parent = kwargs.get(REPORTER_ARG_NAME)
            if parent is None:
                return func_(*args, **kwargs)
            if not isinstance(parent, Reporter):
                raise _invalid(TypeError, f"The reporter got wrong type {type(parent)!r}")
            reporter = parent(name_)
            kwargs[REPORTER_ARG_NAME] = reporter
            with reporter:
                return func_(*args, **kwargs)
        setattr(wrap, '__signature__', signature)
        return cast(Callable[P, T], wrap)

    if arg is None:
        return decorator
    elif callable(arg):
        return decorator(arg)
    elif isinstance(arg, str):
        return lambda func: decorator(func, arg)
    raise _invalid(TypeError, "@scoped decorator expects a callable or a name as first argument")
