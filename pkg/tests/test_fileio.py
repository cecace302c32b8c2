import json
import math

import numpy as np
from pytest import approx, fixture, mark, param, raises

from discopf import (InstanceError, PowerFlowState, SchemaError, SignError, TopologyError, UserKind, emit_gufp,
                     emit_instance, parse_gufp, parse_instance, read_instance, write_instance)
from discopf.fileio import KIND_GUFP, document_kind, dumps, load_document, result_document


@fixture
def document():
    """A two node line with one user and no objective"""
    return {
        'version': 1,
        'v0': 1.0,
        'nodes': [
            {'id': 1, 'parent': 0, 'v_min': 0.9, 'v_max': 1.1},
            {'id': 2, 'parent': 1, 'v_min': 0.9, 'v_max': 1.1},
        ],
        'edges': [
            {'from': 0, 'to': 1, 'z_re': 0.01, 'z_im': 0.01, 's_cap': 1.0},
            {'from': 1, 'to': 2, 'z_re': 0.02, 'z_im': 0.01},
        ],
        'users': [{'id': 'u1', 'node': 2, 's_re': 0.1, 's_im': 0.05, 'utility': 2.0}],
    }


def test_sample(sample):
    assert (sample.m, sample.n) == (5, 7)
    assert len(sample.inelastic) == 6
    assert sample.elastic == (6,)
    assert sample.objective.f1_weights == {6: 1.0}
    assert sample.objective.m_shift == 7.5
    assert math.isinf(sample.s_cap[3])
    assert sample.topology.is_line


def test_sample_is_canonical(sample, sample_path):
    assert emit_instance(sample) == json.loads(sample_path.read_text(encoding='utf-8'))


def test_minimal_document(document):
    inst = parse_instance(document)
    assert inst.m == 2
    assert inst.users[0].kind is UserKind.INELASTIC
    assert inst.s_cap == approx([1.0, math.inf])
    assert math.isinf(inst.l_cap[0])
    assert inst.objective.slopes == (0.0,)
    assert inst.objective.m_shift == 0.0


def test_default_m_shift(document):
    document['objective'] = {'f0': {'slopes': [1.0]}, 'm_shift': None}
    inst = parse_instance(document)
    assert inst.objective.m_shift == approx(abs(0.1 + 0.05j) + 1.0)


def change(path, value):
    """Sets (or deletes, for ``...``) the field at a path of (key or index) items"""

    def apply(document):
        target = document
        for key in path[:-1]:
            target = target[key]
        if value is ...:
            del target[path[-1]]
        else:
            target[path[-1]] = value
        return document
    return apply


@mark.parametrize("edit, path", [
    param(change(('nodes', 1, 'id'), 1), 'instance.nodes[1].id', id="duplicate_node"),
    param(change(('nodes', 0, 'v_min'), ...), 'instance.nodes[0].v_min', id="missing_v_min"),
    param(change(('edges', 0, 'z_re'), 'x'), 'instance.edges[0].z_re', id="text_impedance"),
    param(change(('edges', 1, 'from'), 0), 'instance.edges[1].from', id="edge_against_parent"),
    param(change(('edges', 1, 'to'), 1), 'instance.edges[1].to', id="node_fed_twice"),
    param(change(('users', 0, 'node'), 7), 'instance.users[0].node', id="unknown_node"),
    param(change(('users', 0, 'kind'), 'flexible'), 'instance.users[0].kind', id="unknown_kind"),
    param(change(('version',), 2), 'instance.version', id="version"),
    param(change(('nodes', 1, 'id'), 3), 'instance.nodes', id="id_gap"),
    param(change(('objective',), {'f1': {'u1': 1.0}}), 'instance.objective.f1', id="weight_of_inelastic"),
    param(change(('objective',), {'f0': {'slopes': [1.0, 2.0], 'breakpoints': [0.0]}}),
          'instance.objective.f0.slopes', id="convex_cost"),
])
def test_schema_errors(document, edit, path):
    with raises(SchemaError) as error:
        parse_instance(edit(document))
    assert path in error.value.paths


def test_every_error_is_reported(document):
    document['nodes'][0]['v_max'] = 'high'
    document['users'][0]['s_re'] = None
    with raises(SchemaError) as error:
        parse_instance(document)
    assert {'instance.nodes[0].v_max', 'instance.users[0].s_re'} <= set(error.value.paths)


@mark.parametrize("edit", [
    param(change(('users', 0, 'utility'), -1.0), id="negative_utility"),
    param(change(('edges', 0, 'z_re'), -0.01), id="negative_resistance"),
    param(change(('edges', 0, 's_cap'), -1.0), id="negative_cap"),
    param(change(('v0',), 0.0), id="zero_v0"),
])
def test_sign_errors(document, edit):
    with raises(SignError):
        parse_instance(edit(document))


def test_topology_error(document):
    document['nodes'][1]['parent'] = 0
    document['edges'][1]['from'] = 0
    with raises(TopologyError):
        parse_instance(document)


def test_file_round_trip(sample, tmp_path):
    path = tmp_path / 'line.json'
    write_instance(sample, path)
    assert path.read_text(encoding='utf-8').endswith('}\n')
    assert emit_instance(read_instance(path)) == emit_instance(sample)


def test_unreadable_file(tmp_path):
    with raises(InstanceError):
        load_document(tmp_path / 'missing.json')


def test_invalid_json(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"version": 1,', encoding='utf-8')
    with raises(SchemaError) as error:
        load_document(path)
    assert error.value.paths == ['document']


def test_gufp_document(staircase):
    document = emit_gufp(staircase)
    assert document_kind(document) == KIND_GUFP
    g = parse_gufp(json.loads(dumps(document)))
    assert g.d == 1 and g.n_users == 4
    assert g.loads[0] == approx(staircase.loads[0])
    assert g.capacities[0] == approx(staircase.capacities[0])
    assert g.names == ('0', '1', '2', '3')


def test_gufp_schema_error(knapsack):
    document = emit_gufp(knapsack)
    document['users'][1]['demands'][0]['coefficients'] = [1.0, 2.0]
    with raises(SchemaError) as error:
        parse_gufp(document)
    assert error.value.paths == ['gufp.users[1].demands[0].coefficients']


def test_gufp_sign_error(knapsack):
    document = emit_gufp(knapsack)
    document['users'][0]['utility'] = -2.0
    with raises(SignError):
        parse_gufp(document)


def test_result_document(three_node_line):
    state = PowerFlowState.zeros(three_node_line)
    document = result_document('relax', 'optimal', math.inf, state, wall_time=0.5, exact=True)
    assert document['objective'] is None
    assert document['x'] == [0.0, 0.0, 0.0]
    assert document['S'] == [[0.0, 0.0]] * 3
    assert document['exact'] is True
    assert document['wall_time'] == 0.5
    assert json.loads(dumps(document)) == document


def test_document_kind_defaults_to_instance(document):
    assert document_kind(document) == 'opf'
    assert document_kind([]) == 'opf'
    assert np.isfinite(parse_instance(document).v0)
