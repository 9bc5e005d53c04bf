import math

import pytest

from r2if_kit.dataset import instance_from_dict
from r2if_kit.domain import ActionList, ParamSchema, ToolCall, canonical_key, canonical_value, is_sentinel
from r2if_kit.errors import DatasetError, InvalidValue

from conftest import irrelevance_record, weather_record


def test_canonical_value():
    assert canonical_value(1.0) == 1 and isinstance(canonical_value(1.0), int)
    assert list(canonical_value({'b': 1, 'a': 2})) == ['a', 'b']
    assert canonical_value('CA') == 'CA'
    assert canonical_value(-0.0) == 0
    assert canonical_value([3.5, {'y': 2.0, 'x': None}]) == [3.5, {'x': None, 'y': 2}]


def test_canonical_value_idempotent():
    v = {'z': [1.0, 2.5, {'b': -0.0, 'a': True}], 'a': 'text '}
    once = canonical_value(v)
    assert canonical_value(once) == once
    assert canonical_key(once) == canonical_key(v)


@pytest.mark.parametrize('bad', [math.nan, math.inf, -math.inf, {'x': [math.nan]}])
def test_canonical_value_non_finite(bad):
    with pytest.raises(InvalidValue):
        canonical_value(bad)


def test_canonical_key_keeps_bool_apart():
    assert canonical_key(True) != canonical_key(1)
    assert canonical_key(1.0) == canonical_key(1)


def test_tool_call_canonicalizes():
    assert ToolCall('f', {'x': 1.0}) == ToolCall('f', {'x': 1})
    assert str(ToolCall('f', {'x': 'a'})) == 'f(x="a")'
    with pytest.raises(InvalidValue):
        ToolCall('', {})


def test_action_list_from_json():
    a = ActionList.from_json([{'name': 'f', 'arguments': {'x': 1}}, {'name': 'g'}])
    assert len(a) == 2 and a[1] == ToolCall('g', {})
    for bad in [{'name': 'f'}, [1], [{'arguments': {}}], [{'name': 'f', 'args': {}}]]:
        with pytest.raises(InvalidValue):
            ActionList.from_json(bad)


def test_sentinels():
    assert is_sentinel('No Spec', 'no spec')
    assert is_sentinel('  ', 'no spec')
    assert not is_sentinel('ISO date', 'no spec')


def test_param_schema_enum():
    with pytest.raises(DatasetError):
        ParamSchema('enum')
    with pytest.raises(DatasetError):
        ParamSchema('float')


def test_instance_invariants():
    assert instance_from_dict(irrelevance_record()).is_irrelevance

    with pytest.raises(DatasetError) as e:
        instance_from_dict(irrelevance_record(irrelevance_reason=None))
    assert e.value.field == 'irrelevance_reason'

    with pytest.raises(DatasetError) as e:
        instance_from_dict(weather_record(category='parallel'))
    assert e.value.field == 'ground_truth'

    with pytest.raises(DatasetError):
        instance_from_dict(weather_record(category='bogus'))

    with pytest.raises(DatasetError):
        instance_from_dict(weather_record(baseline_success_rate=1.5))


def test_instance_document_alignment():
    rec = weather_record()
    rec['gt_document']['calls'].append({'name': 'get_current_weather', 'arguments': {}})
    with pytest.raises(DatasetError) as e:
        instance_from_dict(rec)
    assert e.value.field == 'gt_document.calls'

    rec = weather_record()
    rec['gt_document']['calls'][0]['name'] = 'get_forecast'
    with pytest.raises(DatasetError):
        instance_from_dict(rec)
