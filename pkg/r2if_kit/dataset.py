from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterator

import regex

from .constants import ANNOTATION_MAX_WORDS, NO_MODIFY, NO_SPEC
from .domain import (ActionList, GtCall, GtDocument, GtParam, Instance, ParamSchema, ToolSchema,
                     is_sentinel)
from .errors import DatasetError, InvalidValue
from .log import log

# Things annotators write when they mean a sentinel but do not spell it exactly
RE_NEAR_SENTINEL = regex.compile(r'^(no|none|n/?a)[\s_\-]*(spec(ification)?s?|modif(y|ication|ied)s?)?\.?$', regex.I)


def _req(d: dict, key: str, kind: type | tuple, field: str | None = None) -> Any:
    if not isinstance(d, dict):
        raise DatasetError('expected a JSON object', field=field)
    if key not in d:
        raise DatasetError('missing field', field=field or key)
    v = d[key]
    if not isinstance(v, kind):
        raise DatasetError(f'expected {getattr(kind, "__name__", kind)}, got {type(v).__name__}', field=field or key)
    return v


def tool_from_dict(d: dict, i: int = 0) -> ToolSchema:
    where = f'tools[{i}]'
    name = _req(d, 'name', str, f'{where}.name')
    params = d.get('parameters') or {}
    if not isinstance(params, dict):
        raise DatasetError('parameters must be an object', field=f'{where}.parameters')
    required = d.get('required') or []
    if not isinstance(required, list) or not all(isinstance(r, str) for r in required):
        raise DatasetError('required must be a list of names', field=f'{where}.required')
    missing = set(required) - set(params)
    if missing:
        raise DatasetError(f'required names unknown parameters {sorted(missing)}', field=f'{where}.required')

    schema = {}
    for p, pd in params.items():
        pw = f'{where}.parameters.{p}'
        t = _req(pd, 'type', str, f'{pw}.type')
        enum = pd.get('enum')
        if enum is not None and not isinstance(enum, list):
            raise DatasetError('enum must be a list', field=f'{pw}.enum')
        try:
            schema[p] = ParamSchema(t, pd.get('description', ''), tuple(enum) if enum is not None else None,
                                    pd.get('default'), p in required)
        except DatasetError as e:
            raise DatasetError(e.reason, field=f'{pw}.{e.field}')
    return ToolSchema(name, d.get('description', ''), schema)


def gt_document_from_dict(d: dict) -> GtDocument:
    calls = _req(d, 'calls', list, 'gt_document.calls')
    out = []
    for j, c in enumerate(calls):
        where = f'gt_document.calls[{j}]'
        name = _req(c, 'name', str, f'{where}.name')
        args = c.get('arguments') or {}
        if not isinstance(args, dict):
            raise DatasetError('arguments must be an object', field=f'{where}.arguments')
        params = {}
        for p, a in args.items():
            at = f'{where}.arguments.{p}'
            if not isinstance(a, dict):
                raise DatasetError('expected {specification, modification}', field=at)
            texts = []
            for key, sentinel in (('specification', NO_SPEC), ('modification', NO_MODIFY)):
                text = a.get(key)
                if text is not None and not isinstance(text, str):
                    raise DatasetError(f'expected str, got {type(text).__name__}', field=f'{at}.{key}')
                texts.append(sentinel if text is None else text)
            params[p] = GtParam(*texts)
        out.append(GtCall(name, params))
    reason = d.get('reason', '')
    if not isinstance(reason, str):
        raise DatasetError('reason must be a string', field='gt_document.reason')
    return GtDocument(reason, tuple(out))


def gt_document_to_dict(doc: GtDocument) -> dict:
    return {'reason': doc.reason, 'calls': [
        {'name': c.name, 'arguments': {p: {'specification': a.specification, 'modification': a.modification}
                                       for p, a in c.arguments.items()}} for c in doc.calls]}


def instance_from_dict(d: dict) -> Instance:
    """
    Build an instance from one dataset record

    :raises DatasetError: The record violates the instance schema; .field points at the culprit
    """
    if not isinstance(d, dict):
        raise DatasetError('record must be a JSON object')
    tools = _req(d, 'tools', list) if 'tools' in d else []
    gt = d.get('ground_truth', [])
    try:
        ground_truth = ActionList.from_json(gt)
    except InvalidValue as e:
        raise DatasetError(str(e), field='ground_truth')

    doc = d.get('gt_document')
    reason = d.get('irrelevance_reason')
    if reason is not None and not isinstance(reason, str):
        raise DatasetError('irrelevance_reason must be a string', field='irrelevance_reason')
    return Instance(
        id=_req(d, 'id', str),
        category=_req(d, 'category', str),
        query=_req(d, 'query', str),
        tools=tuple(tool_from_dict(t, i) for i, t in enumerate(tools)),
        ground_truth=ground_truth,
        gt_document=gt_document_from_dict(doc) if doc is not None else None,
        irrelevance_reason=reason,
        baseline_success_rate=d.get('baseline_success_rate'),
    )


def instance_to_dict(inst: Instance) -> dict:
    d = {'id': inst.id, 'category': inst.category, 'query': inst.query,
         'tools': [t.to_json() for t in inst.tools], 'ground_truth': inst.ground_truth.to_json()}
    if inst.gt_document is not None:
        d['gt_document'] = gt_document_to_dict(inst.gt_document)
    if inst.irrelevance_reason is not None:
        d['irrelevance_reason'] = inst.irrelevance_reason
    if inst.baseline_success_rate is not None:
        d['baseline_success_rate'] = inst.baseline_success_rate
    return d


def _lines(path: str | Path) -> Iterator[tuple[int, bytes]]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f'{path} does not exist')
    with open(path, 'rb') as f:
        yield from enumerate(f, 1)


def _decode(raw: bytes, ln: int) -> str:
    try:
        return raw.decode('utf-8')
    except UnicodeDecodeError as e:
        raise DatasetError(f'invalid UTF-8 at byte {e.start}', line=ln)


def _records(path: str | Path) -> Iterator[tuple[int, Any]]:
    """
    Yield (line number, parsed record) for each non-blank line

    :raises DatasetError: Missing file, invalid UTF-8 or invalid JSON (with its line number)
    """
    for ln, raw in _lines(path):
        line = _decode(raw, ln)
        if not line.strip():
            continue
        try:
            yield ln, json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetError(f'invalid JSON: {e.msg} (column {e.colno})', line=ln)
        except RecursionError:
            raise DatasetError('JSON nested too deeply', line=ln)


def load_instances(path: str | Path) -> list[Instance]:
    """
    Load a JSONL dataset, one instance per line

    :raises DatasetError: First schema violation, with line number and field
    """
    out = []
    seen: dict[str, int] = {}
    for ln, rec in _records(path):
        try:
            inst = instance_from_dict(rec)
        except DatasetError as e:
            raise e.at(ln)
        if inst.id in seen:
            raise DatasetError(f'duplicate id {inst.id!r} (first on line {seen[inst.id]})', ln, 'id')
        seen[inst.id] = ln
        out.append(inst)
    log.debug(f'Loaded {len(out)} instances from {path}')
    return out


def dump_instances(instances: list[Instance], path: str | Path):
    Path(path).write_text(''.join(json.dumps(instance_to_dict(i), ensure_ascii=False) + '\n' for i in instances),
                          'utf-8')


def annotation_problems(inst: Instance) -> list[DatasetError]:
    """
    Check the ground-truth document of an instance against the annotation rules

    - sentinels are spelled exactly "no spec" / "no modify"
    - specification and modification stay within the word limit
    - a modification implies a specification
    - documented parameters are arguments of the matching ground-truth call
    """
    if inst.gt_document is None:
        return []
    out = []
    for j, (c, g) in enumerate(zip(inst.gt_document.calls, inst.ground_truth)):
        for p, a in c.arguments.items():
            where = f'gt_document.calls[{j}].arguments.{p}'
            if p not in g.arguments:
                out.append(DatasetError(f'parameter is not an argument of ground-truth call {g.name}', field=where))
            for key, text, sentinel in (('specification', a.specification, NO_SPEC),
                                        ('modification', a.modification, NO_MODIFY)):
                if is_sentinel(text, sentinel):
                    continue
                if RE_NEAR_SENTINEL.match(text.strip()):
                    out.append(DatasetError(f'{text!r} is not the sentinel {sentinel!r}', field=f'{where}.{key}'))
                elif len(text.split()) > ANNOTATION_MAX_WORDS:
                    out.append(DatasetError(f'{len(text.split())} words, limit is {ANNOTATION_MAX_WORDS}',
                                            field=f'{where}.{key}'))
            if a.has_mod and not a.has_spec:
                out.append(DatasetError('modification without a specification', field=where))
    return out


def validate_dataset(path: str | Path, require_document: bool = True) -> tuple[list[Instance], list[DatasetError]]:
    """
    Check every line of a dataset instead of stopping at the first problem

    :param require_document: Report non-irrelevance instances without a gt_document
    :return: Instances that loaded, and every problem found in line order
    """
    instances, problems = [], []
    seen: dict[str, int] = {}
    path = Path(path)
    if not path.is_file():
        return [], [DatasetError(f'{path} does not exist')]

    for ln, raw in _lines(path):
        try:
            line = _decode(raw, ln)
            if not line.strip():
                continue
            inst = instance_from_dict(json.loads(line))
        except json.JSONDecodeError as e:
            problems.append(DatasetError(f'invalid JSON: {e.msg} (column {e.colno})', line=ln))
            continue
        except RecursionError:
            problems.append(DatasetError('JSON nested too deeply', line=ln))
            continue
        except DatasetError as e:
            problems.append(e.at(ln))
            continue

        if inst.id in seen:
            problems.append(DatasetError(f'duplicate id {inst.id!r} (first on line {seen[inst.id]})', ln, 'id'))
            continue
        seen[inst.id] = ln
        if require_document and not inst.is_irrelevance and inst.gt_document is None:
            problems.append(DatasetError('missing gt_document', ln, 'gt_document'))
        problems += [e.at(ln) for e in annotation_problems(inst)]
        instances.append(inst)
    return instances, problems


def load_rollouts(path: str | Path) -> dict[str, list[str]]:
    """
    Load rollouts: one {instance_id, responses: [...]} object per line. Repeated ids accumulate.
    """
    out: dict[str, list[str]] = {}
    for ln, rec in _records(path):
        try:
            iid = _req(rec, 'instance_id', str)
            responses = _req(rec, 'responses', list)
            if not all(isinstance(r, str) for r in responses):
                raise DatasetError('responses must be strings', field='responses')
        except DatasetError as e:
            raise e.at(ln)
        out.setdefault(iid, []).extend(responses)
    return out
