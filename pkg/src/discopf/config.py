"""Solver settings and the environment variables that override them."""
import os
from dataclasses import dataclass, replace
from typing import Mapping, Optional

from .core import _invalid

ENV_WORKERS = 'DISCOPF_WORKERS'
ENV_BACKEND = 'DISCOPF_BACKEND'

BACKENDS = ('cvxopt', 'cvxpy')


@dataclass(frozen=True)
class SolverSettings:
    """
    Numerical settings shared by every conic solve and feasibility check.

    :param backend: conic backend name, ``'cvxopt'`` (default) or ``'cvxpy'``
    :param abstol: absolute duality gap tolerance of the interior-point method
    :param reltol: relative duality gap tolerance of the interior-point method
    :param feastol: primal/dual feasibility tolerance, also the infeasibility certificate threshold
    :param max_iters: interior-point iteration cap
    :param check_tol: tolerance of feasibility verdicts (relative where the bound is nonzero)
    :param floor_slack: absolute slack of the objective floor in the loss minimizing program
    :param max_sweeps: maximum number of exactness sweeps during restoration
    """
    backend: str = 'cvxopt'
    abstol: float = 1e-8
    reltol: float = 1e-8
    feastol: float = 1e-8
    max_iters: int = 200
    check_tol: float = 1e-6
    floor_slack: float = 1e-9
    max_sweeps: int = 50

    def __post_init__(self) -> None:
        if __debug__:
            if self.backend not in BACKENDS:
                raise _invalid(ValueError, f"unknown backend {self.backend!r}, expected one of {BACKENDS}")
            for field in ('abstol', 'reltol', 'feastol', 'check_tol'):
                if not getattr(self, field) > 0:
                    raise _invalid(ValueError, f"{field} must be positive")
            if self.floor_slack < 0:
                raise _invalid(ValueError, "floor_slack must be nonnegative")
            if self.max_iters < 1 or self.max_sweeps < 1:
                raise _invalid(ValueError, "iteration caps must be at least 1")

    @classmethod
    def from_env(cls, environ: Optional[Mapping[str, str]] = None, **overrides) -> 'SolverSettings':
        """Builds settings from ``DISCOPF_BACKEND`` (if set) and explicit overrides"""
        environ = os.environ if environ is None else environ
        settings = cls()
        backend = environ.get(ENV_BACKEND)
        if backend:
            settings = replace(settings, backend=backend)
        overrides = {key: value for key, value in overrides.items() if value is not None}
        return replace(settings, **overrides) if overrides else settings


def worker_count(environ: Optional[Mapping[str, str]] = None) -> int:
    """Reads the worker count from ``DISCOPF_WORKERS`` (default 1)"""
    environ = os.environ if environ is None else environ
    raw = environ.get(ENV_WORKERS, '').strip()
    if not raw:
        return 1
    try:
        count = int(raw)
    except ValueError:
        raise _invalid(ValueError, f"{ENV_WORKERS} must be an integer, got {raw!r}") from None
    if count < 1:
        raise _invalid(ValueError, f"{ENV_WORKERS} must be at least 1")
    return count
