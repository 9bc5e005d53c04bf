from __future__ import annotations

import dataclasses
import inspect
import json
import math
from datetime import datetime, date


def to_jsonable(obj: object, digits: int | None = None) -> object:
    """
    Convert dataclasses, tuples and sets into plain JSON values, rounding floats when digits is set

    :param obj: Object tree
    :param digits: Decimal places kept for floats (None keeps full precision)
    :return: Tree of dict/list/str/int/float/bool/None
    """
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v, digits) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return [to_jsonable(v, digits) for v in sorted(obj)]
    if isinstance(obj, (datetime, date)):
        return obj.isoformat()
    if isinstance(obj, float) and not isinstance(obj, bool):
        if not math.isfinite(obj):
            raise ValueError(f'Cannot serialize non-finite float {obj}')
        if digits is not None:
            obj = round(obj, digits)
        # -0.0 and 0.0 must serialize identically
        return obj + 0.0 if obj != 0 else 0.0
    return obj


def canonical_json(obj: object, digits: int | None = None) -> str:
    """
    Canonical JSON: sorted keys, compact separators, no NaN, optional float rounding.

    Two equal objects always produce byte-identical output, which is what the scoring service and
    the report writer rely on.
    """
    return json.dumps(to_jsonable(obj, digits), sort_keys=True, separators=(',', ':'),
                      ensure_ascii=False, allow_nan=False)


def from_dict(cls, d: dict):
    return cls(**{k: v for k, v in d.items() if k in inspect.signature(cls).parameters})
