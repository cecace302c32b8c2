"""
fileio.py module reads and writes the JSON documents of discopf: power flow instances, GUFP
instances and result documents.

Instance documents (``"version": 1``)::

    {"version": 1, "v0": 1.0,
     "nodes": [{"id": 1, "parent": 0, "v_min": 0.9025, "v_max": 1.1025}, ...],
     "edges": [{"from": 0, "to": 1, "z_re": 0.01, "z_im": 0.02, "s_cap": 2.0, "l_cap": null}, ...],
     "users": [{"id": "u1", "node": 2, "s_re": 0.1, "s_im": 0.05, "utility": 3.0, "kind": "inelastic"}, ...],
     "objective": {"f0": {"breakpoints": [], "slopes": [1.0]}, "f1": {"e1": 0.5}, "m_shift": 4.0}}

Node 0 is the substation and is not listed. Infinite caps are written as null. Every malformed field
is reported with its document path (``instance.nodes[3].v_min``) before a single ``SchemaError`` is raised.
"""
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from .core import Failure, InstanceError, Reporter, SchemaError, SignError
from .gufp import GufpInstance, SeparableStepFunction
from .model import (Bus, Line, ObjectiveSpec, PowerFlowState, RadialInstance, User, UserKind, build_topology,
                    default_m_shift)
from .sweep import FeasibilityReport

VERSION = 1
KIND_INSTANCE = 'opf'
KIND_GUFP = 'gufp'

PathLike = Union[str, Path]
_MISSING = object()


def _present(value: Any) -> Any:
    if value is _MISSING:
        raise SchemaError("missing field")
    return value


def _real(value: Any, *, minimum: Optional[float] = None, nullable: bool = False) -> float:
    """A finite JSON number (null read as +inf when nullable), at least ``minimum`` if given"""
    value = _present(value)
    if value is None and nullable:
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise SchemaError(f"expected a finite number, got {value!r}")
    if minimum is not None and value < minimum:
        raise SignError(f"{value!r} is below {minimum}")
    return float(value)


def _integer(value: Any) -> int:
    value = _present(value)
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"expected an integer, got {value!r}")
    return value


def _records(value: Any) -> List[Mapping[str, Any]]:
    value = _present(value)
    if not isinstance(value, list) or not all(isinstance(item, dict) for item in value):
        raise SchemaError("expected a list of objects")
    return value


def _reals(value: Any) -> List[float]:
    value = _present(value)
    if not isinstance(value, list):
        raise SchemaError("expected a list of numbers")
    return [_real(item) for item in value]


def _raise_collected(reporter: Reporter) -> None:
    failures = reporter.failures
    if not failures:
        return
    schema = [failure for failure in failures if not isinstance(failure.error, SignError)]
    if schema:
        raise SchemaError(f"{len(schema)} schema error(s): " + ', '.join(f.source for f in schema), failures)
    raise SignError("negative values at " + ', '.join(failure.source for failure in failures))


def _check_version(document: Mapping[str, Any], reporter: Reporter) -> None:
    if not isinstance(document, dict):
        raise SchemaError("the document must be a JSON object")
    version = reporter('version').safe(_integer, document.get('version', _MISSING))
    if version is not None and version != VERSION:
        reporter('version').report(SchemaError(f"unsupported version {version}"))


def parse_instance(document: Mapping[str, Any]) -> RadialInstance:
    """
    Builds an instance from its document.

    :raises SchemaError: listing every malformed, missing or duplicated field
    :raises SignError: when only the signs of some values are wrong
    :raises TopologyError: when the parent map is not a tree with a single feeder
    """
    reporter = Reporter('instance')
    _check_version(document, reporter)
    v0 = reporter('v0').safe(_real, document.get('v0', _MISSING))
    if v0 is not None and v0 <= 0:
        reporter('v0').report(SignError("v0 must be positive"))

    nodes: Dict[int, Dict[str, Any]] = {}
    for i, record in enumerate(reporter('nodes').safe(_records, document.get('nodes', _MISSING)) or ()):
        stage = reporter(f'nodes[{i}]')
        node_id = stage('id').safe(_integer, record.get('id', _MISSING))
        parent = stage('parent').safe(_integer, record.get('parent', _MISSING))
        v_min = stage('v_min').safe(_real, record.get('v_min', _MISSING), minimum=0.0)
        v_max = stage('v_max').safe(_real, record.get('v_max', _MISSING), minimum=0.0)
        if node_id is None:
            continue
        if node_id in nodes:
            stage('id').report(SchemaError(f"duplicate node id {node_id}"))
        elif node_id < 1:
            stage('id').report(SchemaError("node ids start at 1 (0 is the substation)"))
        else:
            nodes[node_id] = {'index': i, 'parent': parent, 'v_min': v_min, 'v_max': v_max}
    m = len(nodes)
    if nodes and set(nodes) != set(range(1, m + 1)):
        reporter('nodes').report(SchemaError(f"node ids must be 1..{m}"))

    lines: Dict[int, Line] = {}
    for i, record in enumerate(reporter('edges').safe(_records, document.get('edges', _MISSING)) or ()):
        stage = reporter(f'edges[{i}]')
        tail = stage('from').safe(_integer, record.get('from', _MISSING))
        head = stage('to').safe(_integer, record.get('to', _MISSING))
        z_re = stage('z_re').safe(_real, record.get('z_re', _MISSING), minimum=0.0)
        z_im = stage('z_im').safe(_real, record.get('z_im', _MISSING))
        s_cap = stage('s_cap').safe(_real, record.get('s_cap', None), minimum=0.0, nullable=True)
        l_cap = stage('l_cap').safe(_real, record.get('l_cap', None), minimum=0.0, nullable=True)
        if head is None or tail is None:
            continue
        if head not in nodes:
            stage('to').report(SchemaError(f"unknown node {head}"))
        elif head in lines:
            stage('to').report(SchemaError(f"node {head} is fed by more than one edge"))
        elif nodes[head]['parent'] != tail:
            stage('from').report(SchemaError(f"node {head} has parent {nodes[head]['parent']}, not {tail}"))
        elif None not in (z_re, z_im, s_cap, l_cap):
            lines[head] = Line(complex(z_re, z_im), s_cap, l_cap)
    edges_failed = any(failure.source.startswith('instance.edges') for failure in reporter.failures)
    for node_id, node in nodes.items():
        if node_id not in lines and not edges_failed:
            reporter(f"nodes[{node['index']}]").report(SchemaError(f"node {node_id} has no feeding edge"))

    users: List[User] = []
    names: Dict[str, int] = {}
    for i, record in enumerate(reporter('users').safe(_records, document.get('users', [])) or ()):
        stage = reporter(f'users[{i}]')
        name = record.get('id', _MISSING)
        if name is _MISSING or not isinstance(name, (str, int)) or isinstance(name, bool):
            stage('id').report(SchemaError("a user needs a string or integer id"))
            continue
        name = str(name)
        node = stage('node').safe(_integer, record.get('node', _MISSING))
        s_re = stage('s_re').safe(_real, record.get('s_re', _MISSING))
        s_im = stage('s_im').safe(_real, record.get('s_im', _MISSING))
        utility = stage('utility').safe(_real, record.get('utility', 0.0), minimum=0.0)
        kind = record.get('kind', UserKind.INELASTIC.value)
        if kind not in {item.value for item in UserKind}:
            stage('kind').report(SchemaError(f"unknown kind {kind!r}"))
            continue
        if name in names:
            stage('id').report(SchemaError(f"duplicate user id {name!r}"))
            continue
        if node is not None and node not in nodes:
            stage('node').report(SchemaError(f"unknown node {node}"))
            continue
        if None in (node, s_re, s_im, utility):
            continue
        names[name] = len(users)
        users.append(User(name, node, complex(s_re, s_im), utility, UserKind(kind)))

    objective_record = document.get('objective', {})
    objective = _parse_objective(objective_record, reporter('objective'), names, users)
    _raise_collected(reporter)

    build_topology([nodes[j]['parent'] for j in range(1, m + 1)])
    buses = tuple(Bus(nodes[j]['parent'], lines[j], nodes[j]['v_min'], nodes[j]['v_max']) for j in range(1, m + 1))
    inst = RadialInstance(v0, buses, tuple(users), objective)
    if not isinstance(objective_record, dict) or objective_record.get('m_shift') is None:
        inst = inst.with_objective(m_shift=default_m_shift(inst))
    return inst


def _parse_objective(record: Any, reporter: Reporter, names: Mapping[str, int],
                     users: Sequence[User]) -> ObjectiveSpec:
    if not isinstance(record, dict):
        reporter.report(SchemaError("expected an object"))
        return ObjectiveSpec()
    f0 = record.get('f0', {})
    if not isinstance(f0, dict):
        reporter('f0').report(SchemaError("expected an object"))
        f0 = {}
    slopes = reporter('f0')('slopes').safe(_reals, f0.get('slopes', [0.0]))
    breakpoints = reporter('f0')('breakpoints').safe(_reals, f0.get('breakpoints', []))
    if slopes is None or breakpoints is None:
        slopes, breakpoints = [0.0], []
    elif len(slopes) != len(breakpoints) + 1:
        reporter('f0').report(SchemaError("f0 needs exactly one more slope than breakpoints"))
        slopes, breakpoints = [0.0], []
    elif any(b2 <= b1 for b1, b2 in zip(breakpoints, breakpoints[1:])):
        reporter('f0')('breakpoints').report(SchemaError("breakpoints must be strictly increasing"))
        slopes, breakpoints = [0.0], []
    elif any(g2 > g1 for g1, g2 in zip(slopes, slopes[1:])):
        reporter('f0')('slopes').report(SchemaError("slopes must be non-increasing"))
        slopes, breakpoints = [0.0], []
    weights: Dict[int, float] = {}
    f1 = record.get('f1', {})
    if not isinstance(f1, dict):
        reporter('f1').report(SchemaError("expected an object mapping elastic user ids to weights"))
        f1 = {}
    for name, value in f1.items():
        stage = reporter('f1')
        weight = stage.safe(_real, value, minimum=0.0)
        if str(name) not in names or not users[names[str(name)]].elastic:
            stage.report(SchemaError(f"{name!r} is not an elastic user"))
        elif weight is not None:
            weights[names[str(name)]] = weight
    m_shift = record.get('m_shift')
    if m_shift is not None:
        m_shift = reporter('m_shift').safe(_real, m_shift)
    return ObjectiveSpec(tuple(slopes), tuple(breakpoints), weights, 0.0 if m_shift is None else m_shift)


def _cap(value: float) -> Optional[float]:
    return None if math.isinf(value) else float(value)


def emit_instance(inst: RadialInstance) -> Dict[str, Any]:
    """The canonical document of an (unrotated) instance"""
    objective = inst.objective
    return {
        'version': VERSION,
        'v0': float(inst.v0),
        'nodes': [
            {'id': j, 'parent': bus.parent, 'v_min': float(bus.v_min), 'v_max': float(bus.v_max)}
            for j, bus in enumerate(inst.buses, 1)
        ],
        'edges': [
            {'from': bus.parent, 'to': j, 'z_re': float(bus.line.z.real), 'z_im': float(bus.line.z.imag),
             's_cap': _cap(bus.line.s_cap), 'l_cap': _cap(bus.line.l_cap)}
            for j, bus in enumerate(inst.buses, 1)
        ],
        'users': [
            {'id': user.name, 'node': user.node, 's_re': float(user.s.real), 's_im': float(user.s.imag),
             'utility': float(user.utility), 'kind': user.kind.value}
            for user in inst.users
        ],
        'objective': {
            'f0': {'breakpoints': [float(b) for b in objective.breakpoints],
                   'slopes': [float(s) for s in objective.slopes]},
            'f1': {inst.users[k].name: float(w) for k, w in sorted(objective.f1_weights.items())},
            'm_shift': float(objective.m_shift),
        },
    }


def parse_gufp(document: Mapping[str, Any]) -> GufpInstance:
    """
    Builds a GUFP instance from ``{"version": 1, "kind": "gufp", "dimensions": [{"reversed": false,
    "bases": [[...], ...], "capacity": [...]}, ...], "users": [{"id": ..., "utility": ..., "demands":
    [{"coefficients": [...], "start": 0, "saturation": 3}, ...]}, ...]}``; arrays are in each
    dimension's order.
    """
    reporter = Reporter('gufp')
    _check_version(document, reporter)
    bases, orders, capacities = [], [], []
    for r, record in enumerate(reporter('dimensions').safe(_records, document.get('dimensions', _MISSING)) or ()):
        stage = reporter(f'dimensions[{r}]')
        rows = record.get('bases', _MISSING)
        if not isinstance(rows, list) or not rows:
            stage('bases').report(SchemaError("expected a non-empty list of base functions"))
            continue
        values = [stage('bases').safe(_reals, row) for row in rows]
        capacity = stage('capacity').safe(_reals, record.get('capacity', _MISSING))
        if None in values or capacity is None:
            continue
        if len({len(row) for row in values} | {len(capacity)}) != 1:
            stage.report(SchemaError("bases and capacity must span the same edges"))
            continue
        bases.append(np.array(values, dtype=float))
        capacities.append(np.array(capacity, dtype=float))
        orders.append(bool(record.get('reversed', False)))
    if len({base.shape[1] for base in bases}) > 1:
        reporter('dimensions').report(SchemaError("every dimension must span the same edges"))
    names, utilities, demands = [], [], []
    for i, record in enumerate(reporter('users').safe(_records, document.get('users', [])) or ()):
        stage = reporter(f'users[{i}]')
        utility = stage('utility').safe(_real, record.get('utility', _MISSING), minimum=0.0)
        functions = stage('demands').safe(_records, record.get('demands', _MISSING))
        if utility is None or functions is None:
            continue
        if len(functions) != len(bases):
            stage('demands').report(SchemaError(f"expected {len(bases)} demand functions"))
            continue
        parsed = []
        for r, function in enumerate(functions):
            inner = stage(f'demands[{r}]')
            coefficients = inner('coefficients').safe(_reals, function.get('coefficients', _MISSING))
            start = inner('start').safe(_integer, function.get('start', 0))
            saturation = inner('saturation').safe(_integer, function.get('saturation', _MISSING))
            if None in (coefficients, start, saturation):
                break
            if len(coefficients) != bases[r].shape[0]:
                inner('coefficients').report(SchemaError(f"expected {bases[r].shape[0]} coefficients"))
                break
            if not (0 <= start < bases[r].shape[1] and 0 <= saturation < bases[r].shape[1]):
                inner.report(SchemaError("start and saturation must be edge positions"))
                break
            if min(coefficients, default=0.0) < 0:
                inner('coefficients').report(SignError("coefficients must be nonnegative"))
                break
            parsed.append(SeparableStepFunction(tuple(coefficients), start, saturation))
        else:
            names.append(str(record.get('id', i)))
            utilities.append(utility)
            demands.append(tuple(parsed))
    _raise_collected(reporter)
    return GufpInstance(tuple(bases), tuple(orders), np.array(utilities, dtype=float), tuple(demands),
                        tuple(capacities), tuple(names))


def emit_gufp(g: GufpInstance) -> Dict[str, Any]:
    return {
        'version': VERSION,
        'kind': KIND_GUFP,
        'dimensions': [
            {'reversed': g.reversed_order[r], 'bases': g.bases[r].tolist(), 'capacity': g.capacities[r].tolist()}
            for r in range(g.d)
        ],
        'users': [
            {'id': g.names[k] if g.names else str(k), 'utility': float(g.utilities[k]),
             'demands': [{'coefficients': list(f.coefficients), 'start': f.start, 'saturation': f.saturation}
                         for f in g.demands[k]]}
            for k in range(g.n_users)
        ],
    }


def document_kind(document: Mapping[str, Any]) -> str:
    return document.get('kind', KIND_INSTANCE) if isinstance(document, dict) else KIND_INSTANCE


def load_document(path: PathLike) -> Dict[str, Any]:
    """
    :raises InstanceError: when the file cannot be read
    :raises SchemaError: when it is not JSON
    """
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as error:
        raise InstanceError(f"cannot read {path}: {error}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as error:
        raise SchemaError(f"{path} is not valid JSON: {error}",
                          [Failure('document', error, {'line': error.lineno})]) from None


def dumps(document: Mapping[str, Any]) -> str:
    return json.dumps(document, indent=2) + '\n'


def write_document(document: Mapping[str, Any], path: PathLike) -> None:
    Path(path).write_text(dumps(document), encoding='utf-8')


def read_instance(path: PathLike) -> RadialInstance:
    return parse_instance(load_document(path))


def write_instance(inst: RadialInstance, path: PathLike) -> None:
    write_document(emit_instance(inst), path)


def _finite(value: Optional[float]) -> Optional[float]:
    return float(value) if value is not None and math.isfinite(value) else None


def state_document(state: PowerFlowState) -> Dict[str, Any]:
    return {
        's0': [float(state.s0.real), float(state.s0.imag)],
        'x': [float(value) for value in state.x],
        'v': [float(value) for value in state.v],
        'ell': [float(value) for value in state.ell],
        'S': [[float(value.real), float(value.imag)] for value in state.S],
    }


def result_document(command: str, status: str, objective: Optional[float] = None,
                    state: Optional[PowerFlowState] = None, report: Optional[FeasibilityReport] = None,
                    wall_time: Optional[float] = None, **extra: Any) -> Dict[str, Any]:
    """The structured result of a command; the residuals carry the full feasibility report"""
    document: Dict[str, Any] = {'command': command, 'status': status, 'objective': _finite(objective)}
    if state is not None:
        document.update(state_document(state))
    if report is not None:
        document['residuals'] = report.as_dict()
    document.update(extra)
    if wall_time is not None:
        document['wall_time'] = wall_time
    return document
