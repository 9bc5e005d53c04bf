from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .domain import ActionList, ToolCall, canonical_key
from .parser import RejectionMarker, ToolPayload


@dataclass(frozen=True)
class MatchSet:
    pairs: tuple[tuple[int, int], ...] = ()
    unmatched_pred: tuple[int, ...] = ()
    unmatched_gold: tuple[int, ...] = ()

    def __len__(self):
        return len(self.pairs)


def calls_equal(a: ToolCall, b: ToolCall) -> bool:
    """
    Exact match of two calls: same name, same argument keys, canonically equal values
    """
    if a.name != b.name or a.arguments.keys() != b.arguments.keys():
        return False
    return all(canonical_key(a.arguments[k]) == canonical_key(b.arguments[k]) for k in a.arguments)


def align_exact(pred: ActionList, gold: ActionList) -> MatchSet:
    """
    Greedy one-to-one exact-match alignment

    Each predicted call, in order, takes the smallest unconsumed gold index it equals, so k identical
    predictions match at most k identical gold calls.

    :return: Matched (pred, gold) index pairs and the leftovers on both sides
    """
    consumed = [False] * len(gold)
    pairs = []
    unmatched_pred = []
    for i, a in enumerate(pred):
        j = next((j for j, b in enumerate(gold) if not consumed[j] and calls_equal(a, b)), None)
        if j is None:
            unmatched_pred.append(i)
        else:
            consumed[j] = True
            pairs.append((i, j))
    return MatchSet(tuple(pairs), tuple(unmatched_pred), tuple(j for j, c in enumerate(consumed) if not c))


def correctness(pred: ToolPayload, gold: ActionList, order_sensitive: bool = False) -> int:
    """
    Tool-call correctness indicator

    Irrelevance (empty gold): 1 iff the response is the rejection string.
    Otherwise: 1 iff the predicted list equals gold as a multiset of calls, or position by position
    when order_sensitive is set. Parse failures are always 0.
    """
    if len(gold) == 0:
        return int(isinstance(pred, RejectionMarker))
    if not isinstance(pred, ActionList) or len(pred) != len(gold):
        return 0
    if order_sensitive:
        return int(all(calls_equal(a, b) for a, b in zip(pred, gold)))
    return int(Counter(c.key() for c in pred) == Counter(c.key() for c in gold))
