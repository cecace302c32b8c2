from pytest import mark, param, raises

from discopf import SolverSettings
from discopf.config import ENV_BACKEND, ENV_WORKERS, worker_count


def test_defaults():
    settings = SolverSettings.from_env({})
    assert settings == SolverSettings()
    assert settings.backend == 'cvxopt'
    assert settings.check_tol == 1e-6


def test_backend_from_environment():
    assert SolverSettings.from_env({ENV_BACKEND: 'cvxpy'}).backend == 'cvxpy'


def test_overrides_win_and_none_is_ignored():
    settings = SolverSettings.from_env({ENV_BACKEND: 'cvxpy'}, backend='cvxopt', check_tol=None, max_sweeps=5)
    assert settings.backend == 'cvxopt'
    assert settings.check_tol == 1e-6
    assert settings.max_sweeps == 5


@mark.skipif(__debug__ is False, reason="No validation is done with optimized mode")
@mark.parametrize("kwargs", [
    param(dict(backend='mosek'), id="unknown_backend"),
    param(dict(abstol=0.0), id="zero_abstol"),
    param(dict(check_tol=-1e-6), id="negative_check_tol"),
    param(dict(floor_slack=-1.0), id="negative_floor_slack"),
    param(dict(max_iters=0), id="no_iterations"),
])
def test_invalid_settings(kwargs):
    with raises(ValueError):
        SolverSettings(**kwargs)


@mark.parametrize("environ, expected", [
    param({}, 1, id="unset"),
    param({ENV_WORKERS: ''}, 1, id="empty"),
    param({ENV_WORKERS: '4'}, 4, id="four"),
    param({ENV_WORKERS: ' 2 '}, 2, id="padded"),
])
def test_worker_count(environ, expected):
    assert worker_count(environ) == expected


@mark.parametrize("raw", [param('0', id="zero"), param('many', id="text")])
def test_invalid_worker_count(raw):
    with raises(ValueError):
        worker_count({ENV_WORKERS: raw})
