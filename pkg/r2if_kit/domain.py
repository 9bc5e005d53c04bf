from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterator

from .constants import NO_MODIFY, NO_SPEC, TASK_CATEGORIES
from .errors import DatasetError, InvalidValue
from .types import TaskCategory, TypeTag

TYPE_TAGS = ('string', 'integer', 'number', 'boolean', 'array', 'object', 'enum')


def canonical_value(v: Any) -> Any:
    """
    Canonicalize a parsed JSON value so that equality of canonical values is exact-match equality

    >>> canonical_value({'b': 1.0, 'a': [2.5, -0.0]})
    {'a': [2.5, 0], 'b': 1}

    :param v: Parsed JSON value
    :return: Integral floats as ints, -0 as 0, object keys sorted, arrays and strings untouched
    """
    if v is None or isinstance(v, (bool, str)):
        return v
    if isinstance(v, int):
        return v
    if isinstance(v, float):
        if not math.isfinite(v):
            raise InvalidValue(f'Non-finite number {v} is not a JSON value')
        return int(v) if v.is_integer() else v
    if isinstance(v, (list, tuple)):
        return [canonical_value(x) for x in v]
    if isinstance(v, dict):
        for k in v:
            if not isinstance(k, str):
                raise InvalidValue(f'Object key {k!r} is not a string')
        return {k: canonical_value(v[k]) for k in sorted(v)}
    raise InvalidValue(f'{type(v).__name__} is not a JSON value')


def canonical_key(v: Any) -> str:
    """
    Serialized canonical form, used for equality. Unlike ==, it keeps true apart from 1.
    """
    return json.dumps(canonical_value(v), sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def is_sentinel(text: str | None, sentinel: str) -> bool:
    return text is None or not text.strip() or text.strip().lower() == sentinel


@dataclass(frozen=True)
class ParamSchema:
    type_tag: TypeTag
    description: str = ''
    enum_values: tuple | None = None
    default: Any = None
    required: bool = False

    def __post_init__(self):
        if self.type_tag not in TYPE_TAGS:
            raise DatasetError(f'unknown parameter type {self.type_tag!r}', field='type')
        if self.type_tag == 'enum' and not self.enum_values:
            raise DatasetError('enum parameter without enum values', field='enum')


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str = ''
    parameters: dict[str, ParamSchema] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise DatasetError('tool name must be a non-empty string', field='name')

    @property
    def required(self) -> list[str]:
        return [k for k, p in self.parameters.items() if p.required]

    def to_json(self) -> dict:
        """
        Dataset record form of the schema, also shown to models in the prompt
        """
        params = {}
        for k, p in self.parameters.items():
            d = {'type': p.type_tag, 'description': p.description}
            if p.enum_values is not None:
                d['enum'] = list(p.enum_values)
            if p.default is not None:
                d['default'] = p.default
            params[k] = d
        return {'name': self.name, 'description': self.description, 'parameters': params,
                'required': self.required}


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise InvalidValue('tool call name must be a non-empty string')
        if not isinstance(self.arguments, dict):
            raise InvalidValue(f'arguments of {self.name} must be an object')
        object.__setattr__(self, 'arguments', canonical_value(self.arguments))

    def key(self) -> str:
        return canonical_key({'name': self.name, 'arguments': self.arguments})

    def to_json(self) -> dict:
        return {'name': self.name, 'arguments': self.arguments}

    def __str__(self):
        args = ', '.join(f'{k}={json.dumps(v, ensure_ascii=False)}' for k, v in self.arguments.items())
        return f'{self.name}({args})'


@dataclass(frozen=True)
class ActionList:
    calls: tuple[ToolCall, ...] = ()

    @classmethod
    def from_json(cls, raw: Any) -> ActionList:
        """
        Build an action list from a parsed JSON array of {name, arguments} objects

        :raises InvalidValue: The value is not an array of call objects
        """
        if not isinstance(raw, list):
            raise InvalidValue('tool payload must be a JSON array')
        calls = []
        for i, c in enumerate(raw):
            if not isinstance(c, dict) or 'name' not in c:
                raise InvalidValue(f'call #{i} must be an object with a name')
            extra = set(c) - {'name', 'arguments'}
            if extra:
                raise InvalidValue(f'call #{i} has unexpected keys {sorted(extra)}')
            calls.append(ToolCall(c['name'], c.get('arguments', {})))
        return cls(tuple(calls))

    def to_json(self) -> list[dict]:
        return [c.to_json() for c in self.calls]

    def __len__(self):
        return len(self.calls)

    def __iter__(self) -> Iterator[ToolCall]:
        return iter(self.calls)

    def __getitem__(self, i: int) -> ToolCall:
        return self.calls[i]


@dataclass(frozen=True)
class GtParam:
    specification: str = NO_SPEC
    modification: str = NO_MODIFY

    @property
    def has_spec(self) -> bool:
        return not is_sentinel(self.specification, NO_SPEC)

    @property
    def has_mod(self) -> bool:
        return not is_sentinel(self.modification, NO_MODIFY)


@dataclass(frozen=True)
class GtCall:
    name: str
    arguments: dict[str, GtParam] = field(default_factory=dict)


@dataclass(frozen=True)
class GtDocument:
    reason: str = ''
    calls: tuple[GtCall, ...] = ()


@dataclass(frozen=True)
class Instance:
    id: str
    category: TaskCategory
    query: str
    tools: tuple[ToolSchema, ...] = ()
    ground_truth: ActionList = ActionList()
    gt_document: GtDocument | None = None
    irrelevance_reason: str | None = None
    baseline_success_rate: float | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise DatasetError('id must be a non-empty string', field='id')
        if self.category not in TASK_CATEGORIES:
            raise DatasetError(f'unknown category {self.category!r}', field='category')

        n = len(self.ground_truth)
        if self.category == 'irrelevance':
            if n:
                raise DatasetError('irrelevance instance must have an empty ground truth', field='ground_truth')
            if not self.irrelevance_reason:
                raise DatasetError('irrelevance instance needs an irrelevance_reason', field='irrelevance_reason')
        elif n == 0:
            raise DatasetError(f'{self.category} instance has an empty ground truth', field='ground_truth')
        elif self.category.startswith('parallel') and n < 2:
            raise DatasetError(f'{self.category} instance needs more than one call', field='ground_truth')
        elif not self.category.startswith('parallel') and n != 1:
            raise DatasetError(f'{self.category} instance needs exactly one call', field='ground_truth')

        names = [t.name for t in self.tools]
        if len(set(names)) != len(names):
            raise DatasetError('duplicate tool names', field='tools')

        if self.gt_document is not None and self.category != 'irrelevance':
            docs = self.gt_document.calls
            if len(docs) != n:
                raise DatasetError(f'{len(docs)} entries for {n} ground-truth calls', field='gt_document.calls')
            for j, (d, g) in enumerate(zip(docs, self.ground_truth)):
                if d.name != g.name:
                    raise DatasetError(f'entry {j} names {d.name!r} but ground truth calls {g.name!r}',
                                       field='gt_document.calls')

        b = self.baseline_success_rate
        if b is not None and not (isinstance(b, (int, float)) and 0 <= b <= 1):
            raise DatasetError(f'baseline_success_rate {b!r} outside [0, 1]', field='baseline_success_rate')

    @property
    def is_irrelevance(self) -> bool:
        return self.category == 'irrelevance'


@dataclass(frozen=True)
class RewardBreakdown:
    r_format: int
    r_correctness: int
    r_binary: int
    r_cer: float | None
    r_smv: float
    total: float
    diagnostics: tuple = ()
    violations: tuple[str, ...] = ()
