import re
import sys
import logging
import importlib
from unittest.mock import patch
import pytest

from discopf import print_failure, log_failure, Failure, InfeasibleError


@pytest.fixture
def failure():
    return Failure("qptas.guess[3]", InfeasibleError("Test error"), {'status': 'infeasible'})


def test_print_failure(capsys, failure):
    print_failure(failure)
    assert re.match(r".*\[discopf].*qptas\.guess\[3].*::.*InfeasibleError\(.*Test error.*\).*"
                    r"\d{4}-\d\d-\d\d \d\d:\d\d:\d\d.*", capsys.readouterr().err)


def test_print_failure_to_stream(capsys, failure):
    print_failure(failure, sys.stdout)
    captured = capsys.readouterr()
    assert "qptas.guess[3]" in captured.out and not captured.err


def test_print_failure_without_colorama(capsys, failure):
    import discopf
    with patch.dict(sys.modules, {'colorama': None}):
        importlib.reload(discopf.handler)
        discopf.handler.print_failure(failure)
        assert re.match(r"\[discopf] qptas\.guess\[3] :: InfeasibleError\(Test error\) \d{4}-\d\d-\d\d \d\d:\d\d:\d\d",
                        capsys.readouterr().err)
    importlib.reload(discopf.handler)


def test_log_failure(caplog, failure):
    with caplog.at_level(logging.WARNING):
        log_failure(failure)
    record, = caplog.records
    assert record.name == "qptas.guess[3]"
    assert "InfeasibleError: Test error status=infeasible" in record.getMessage()
