import json

import numpy as np
from pytest import mark, param

from discopf import emit_gufp
from discopf.cli import build_parser, main, summarize


def test_validate_sample(sample_path, capsys):
    assert main(['validate', str(sample_path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith('validate: ok')
    assert 'wall time' in out


def test_result_document(sample_path, tmp_path):
    result = tmp_path / 'result.json'
    assert main(['validate', str(sample_path), '--result', str(result)]) == 0
    document = json.loads(result.read_text(encoding='utf-8'))
    assert document['command'] == 'validate'
    assert document['status'] == 'ok'
    assert document['nodes'] == 5
    assert document['topology_line'] is True
    assert all(document['flags'].values())
    assert document['wall_time'] >= 0


def test_failed_assumption(sample_path, tmp_path):
    document = json.loads(sample_path.read_text(encoding='utf-8'))
    document['objective']['f0']['slopes'] = [-1.0]
    path = tmp_path / 'decreasing.json'
    path.write_text(json.dumps(document), encoding='utf-8')
    result = tmp_path / 'result.json'
    assert main(['validate', str(path), '--result', str(result)]) == 2
    report = json.loads(result.read_text(encoding='utf-8'))
    assert report['status'] == 'assumptions_failed'
    assert report['flags']['monotone_cost'] is False


def test_gen_is_deterministic(tmp_path):
    first, second = tmp_path / 'a.json', tmp_path / 'b.json'
    for path in (first, second):
        assert main(['gen', '--seed', '3', '--m', '5', '--ni', '4', '--ne', '1', '-o', str(path)]) == 0
    assert first.read_bytes() == second.read_bytes()
    assert main(['validate', str(first)]) == 0


def test_gufp_document(knapsack, tmp_path):
    path = tmp_path / 'knapsack.json'
    path.write_text(json.dumps(emit_gufp(knapsack)), encoding='utf-8')
    result = tmp_path / 'result.json'
    assert main(['gufp', str(path), '--exact', '--result', str(result)]) == 0
    document = json.loads(result.read_text(encoding='utf-8'))
    assert document['objective'] == 9.0
    assert document['oracle_value'] == 9.0
    assert document['x'] == [1.0, 1.0, 0.0]
    assert document['verified'] is True


@mark.parametrize("error", [
    param(np.linalg.LinAlgError("singular matrix"), id="linear_algebra"),
    param(ValueError("solver returned nan"), id="unexpected_value_error"),
])
def test_unexpected_failure(knapsack, tmp_path, capsys, monkeypatch, error):
    def broken(g):
        raise error

    monkeypatch.setattr('discopf.cli.solve_gufp', broken)
    path = tmp_path / 'knapsack.json'
    path.write_text(json.dumps(emit_gufp(knapsack)), encoding='utf-8')
    result = tmp_path / 'result.json'
    assert main(['gufp', str(path), '--result', str(result)]) == 3
    document = json.loads(result.read_text(encoding='utf-8'))
    assert document['status'] == 'numerical_failure'
    assert type(error).__name__ in document['error']
    assert 'numerical failure' in capsys.readouterr().err


@mark.parametrize("argv", [
    param(['validate', 'x.json', '--bogus'], id="unknown_flag"),
    param([], id="no_command"),
    param(['gen', '--seed', '1', '--m', '3'], id="missing_required"),
    param(['qptas', 'x.json'], id="missing_eps"),
    param(['relax', 'x.json', '--backend', 'mosek'], id="unknown_backend"),
])
def test_usage_errors(argv, capsys):
    assert main(argv) == 2
    assert 'usage' in capsys.readouterr().err


def test_help_exits_cleanly(capsys):
    assert main(['--help']) == 0
    assert 'validate' in capsys.readouterr().out


def test_missing_file(tmp_path, capsys):
    result = tmp_path / 'result.json'
    assert main(['validate', str(tmp_path / 'missing.json'), '--result', str(result)]) == 2
    document = json.loads(result.read_text(encoding='utf-8'))
    assert document['status'] == 'error'
    assert document['exit_code'] == 2


def test_malformed_file(tmp_path, capsys):
    path = tmp_path / 'broken.json'
    path.write_text('{"version": 1, "v0": "one"}', encoding='utf-8')
    assert main(['validate', str(path)]) == 2
    err = capsys.readouterr().err
    assert 'instance.v0' in err


@mark.skipif(__debug__ is False, reason="No validation is done with optimized mode")
def test_invalid_eps(sample_path, capsys):
    assert main(['qptas', str(sample_path), '--eps', '2']) == 2
    assert 'eps' in capsys.readouterr().err


def test_summary():
    text = summarize({'command': 'gufp', 'status': 'feasible', 'objective': 9.0, 'oracle_value': 9.0,
                      'wall_time': 0.25})
    assert text.splitlines() == ['gufp: feasible', '  objective: 9', '  oracle_value: 9.0', '  wall time: 0.250s']


def test_parser_defaults():
    args = build_parser().parse_args(['qptas', 'line.json', '--eps', '0.5'])
    assert args.mode == 'full'
    assert args.log_level == 'WARNING'
    assert args.workers is None
    assert not args.enumerate_profiles


@mark.slow
def test_relax_sample(sample_path, tmp_path):
    result = tmp_path / 'result.json'
    assert main(['relax', str(sample_path), '--result', str(result)]) == 0
    document = json.loads(result.read_text(encoding='utf-8'))
    assert document['status'] == 'optimal'
    assert document['residuals']['relaxed_feasible']
