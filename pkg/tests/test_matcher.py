from r2if_kit.domain import ActionList, ToolCall
from r2if_kit.matcher import align_exact, calls_equal, correctness
from r2if_kit.parser import ParseFailure, RejectionMarker


def calls(*cs) -> ActionList:
    return ActionList(tuple(ToolCall(n, a) for n, a in cs))


def test_calls_equal():
    assert calls_equal(ToolCall('f', {'x': 1}), ToolCall('f', {'x': 1.0}))
    assert not calls_equal(ToolCall('get_current_weather', {'location': 'San Francisco, CA'}),
                           ToolCall('get_current_weather', {'location': 'San Francisco'}))
    assert not calls_equal(ToolCall('f', {'x': 1}), ToolCall('f', {'x': 1, 'unit': 'F'}))
    assert not calls_equal(ToolCall('f', {'x': True}), ToolCall('f', {'x': 1}))
    assert not calls_equal(ToolCall('f', {'x': 'ca'}), ToolCall('f', {'x': 'CA'}))
    assert calls_equal(ToolCall('f', {'o': {'a': 1, 'b': [1.0]}}), ToolCall('f', {'o': {'b': [1], 'a': 1.0}}))


def test_correctness_multiset():
    assert correctness(calls(('f', {'x': 1}), ('g', {'y': 2})), calls(('g', {'y': 2}), ('f', {'x': 1}))) == 1
    assert correctness(calls(('f', {'x': 1})), calls(('f', {'x': 1}), ('f', {'x': 2}))) == 0
    assert correctness(calls(('f', {'x': 1}), ('f', {'x': 1})), calls(('f', {'x': 1}), ('f', {'x': 2}))) == 0
    assert correctness(ParseFailure('bad'), calls(('f', {}))) == 0
    assert correctness(RejectionMarker(), calls(('f', {}))) == 0


def test_correctness_order_sensitive():
    pred = calls(('f', {'x': 1}), ('g', {'y': 2}))
    gold = calls(('g', {'y': 2}), ('f', {'x': 1}))
    assert correctness(pred, gold, order_sensitive=True) == 0
    assert correctness(pred, pred, order_sensitive=True) == 1


def test_correctness_irrelevance():
    assert correctness(RejectionMarker(), ActionList()) == 1
    assert correctness(calls(('f', {})), ActionList()) == 0
    assert correctness(ActionList(), ActionList()) == 0


def test_align_exact():
    m = align_exact(calls(('f', {'x': 1}), ('f', {'x': 1})), calls(('f', {'x': 1})))
    assert m.pairs == ((0, 0),) and m.unmatched_pred == (1,) and m.unmatched_gold == ()

    m = align_exact(calls(('g', {'y': 2}), ('f', {'x': 1})), calls(('f', {'x': 1}), ('g', {'y': 2})))
    assert set(m.pairs) == {(0, 1), (1, 0)}

    m = align_exact(calls(('f', {'x': 9})), calls(('f', {'x': 1})))
    assert len(m) == 0 and m.unmatched_gold == (0,)


def test_align_exact_duplicates():
    gold = calls(('f', {'x': 1}), ('f', {'x': 1}), ('f', {'x': 1}))
    m = align_exact(calls(('f', {'x': 1}), ('f', {'x': 1})), gold)
    assert m.pairs == ((0, 0), (1, 1)) and m.unmatched_gold == (2,)
