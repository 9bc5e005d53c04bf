import json

import pytest

from r2if_kit.dataset import annotation_problems, dump_instances, instance_from_dict, instance_to_dict, \
    load_instances, load_rollouts, validate_dataset
from r2if_kit.errors import DatasetError
from r2if_kit.prompts import render_user_prompt

from conftest import UNIT_SPEC, irrelevance_record, weather_record, write_jsonl


def test_load_instances(tmp_path):
    path = write_jsonl(tmp_path / 'd.jsonl', [weather_record(), '', irrelevance_record()])
    instances = load_instances(path)
    assert [i.id for i in instances] == ['weather-1', 'irr-1']
    assert instances[0].tools[0].required == ['location']
    assert instances[0].tools[0].parameters['unit'].enum_values == ('celsius', 'fahrenheit')
    assert instances[1].ground_truth.calls == ()


def test_load_instances_reports_line_and_field(tmp_path):
    bad = weather_record(id='w2')
    bad['gt_document']['calls'] = []
    path = write_jsonl(tmp_path / 'd.jsonl', [weather_record(), bad])
    with pytest.raises(DatasetError) as e:
        load_instances(path)
    assert e.value.line == 2 and e.value.field == 'gt_document.calls'
    assert str(e.value).startswith('line 2: gt_document.calls: ')

    path = write_jsonl(tmp_path / 'd.jsonl', [weather_record(), '{"id": ', weather_record()])
    with pytest.raises(DatasetError) as e:
        load_instances(path)
    assert e.value.line == 2

    with pytest.raises(DatasetError) as e:
        load_instances(write_jsonl(tmp_path / 'dup.jsonl', [weather_record(), weather_record()]))
    assert e.value.line == 2 and e.value.field == 'id'


@pytest.mark.parametrize('change, field', [
    ({'tools': [{'name': 'f', 'parameters': {'x': {'type': 'float'}}}]}, 'tools[0].parameters.x.type'),
    ({'tools': [{'name': 'f', 'parameters': {}, 'required': ['x']}]}, 'tools[0].required'),
    ({'tools': [{'description': 'no name'}]}, 'tools[0].name'),
    ({'ground_truth': {'name': 'f'}}, 'ground_truth'),
    ({'query': 5}, 'query'),
    ({'gt_document': {'calls': [{'name': 'get_current_weather', 'arguments': {'location': 'x'}}]}},
     'gt_document.calls[0].arguments.location'),
    ({'gt_document': {'calls': [{'name': 'get_current_weather', 'arguments': {'location': {'specification': 5}}}]}},
     'gt_document.calls[0].arguments.location.specification'),
])
def test_instance_from_dict_fields(change, field):
    with pytest.raises(DatasetError) as e:
        instance_from_dict(weather_record(**change))
    assert e.value.field == field


def test_missing_file(tmp_path):
    with pytest.raises(DatasetError):
        load_instances(tmp_path / 'missing.jsonl')


def test_dump_round_trip(tmp_path):
    instances = [instance_from_dict(weather_record()), instance_from_dict(irrelevance_record())]
    dump_instances(instances, tmp_path / 'out.jsonl')
    again = load_instances(tmp_path / 'out.jsonl')
    assert again == instances
    assert [instance_to_dict(i) for i in again] == [instance_to_dict(i) for i in instances]

    shown = render_user_prompt(instances[0]).split('invoke:\n', 1)[1]
    assert json.loads(shown) == weather_record()['tools'] == instance_to_dict(instances[0])['tools']


def test_annotation_problems():
    rec = weather_record()
    args = rec['gt_document']['calls'][0]['arguments']
    args['unit'] = {'specification': 'No Specification', 'modification': 'no modify'}
    args['location'] = {'specification': 'no spec', 'modification': 'append CA'}
    args['country'] = {'specification': ' '.join(['word'] * 16), 'modification': 'no modify'}
    problems = {(p.field, p.reason.split()[0]) for p in annotation_problems(instance_from_dict(rec))}
    base = 'gt_document.calls[0].arguments'
    assert (f'{base}.unit.specification', "'No") in problems
    assert (f'{base}.location', 'modification') in problems
    assert (f'{base}.country.specification', '16') in problems
    assert (f'{base}.country', 'parameter') in problems
    assert annotation_problems(instance_from_dict(weather_record())) == []


def test_validate_dataset_collects_everything(tmp_path):
    no_doc = weather_record(id='w2')
    del no_doc['gt_document']
    path = write_jsonl(tmp_path / 'd.jsonl', [weather_record(), 'not json', no_doc, irrelevance_record(),
                                              weather_record()])
    instances, problems = validate_dataset(path)
    assert [i.id for i in instances] == ['weather-1', 'w2', 'irr-1']
    assert [(p.line, p.field) for p in problems] == [(2, None), (3, 'gt_document'), (5, 'id')]

    _, problems = validate_dataset(path, require_document=False)
    assert [p.line for p in problems] == [2, 5]


def test_load_rollouts(tmp_path):
    path = write_jsonl(tmp_path / 'r.jsonl', [
        {'instance_id': 'a', 'responses': ['x', 'y']},
        {'instance_id': 'b', 'responses': []},
        {'instance_id': 'a', 'responses': ['z']},
    ])
    assert load_rollouts(path) == {'a': ['x', 'y', 'z'], 'b': []}

    with pytest.raises(DatasetError) as e:
        load_rollouts(write_jsonl(tmp_path / 'bad.jsonl', [{'instance_id': 'a', 'responses': [1]}]))
    assert e.value.line == 1 and e.value.field == 'responses'


def test_invalid_utf8_reported_by_line(tmp_path):
    path = write_jsonl(tmp_path / 'd.jsonl', [weather_record()])
    with open(path, 'ab') as f:
        f.write(b'{"id": "\xff\xfe"}\n')

    with pytest.raises(DatasetError) as e:
        load_instances(path)
    assert e.value.line == 2 and 'UTF-8' in str(e.value)

    instances, problems = validate_dataset(path)
    assert [i.id for i in instances] == ['weather-1']
    assert [p.line for p in problems] == [2]

    rollouts = tmp_path / 'r.jsonl'
    rollouts.write_bytes(b'{"instance_id": "a", "responses": ["x"]}\n{"instance_id": "\xff"}\n')
    with pytest.raises(DatasetError) as e:
        load_rollouts(rollouts)
    assert e.value.line == 2


def test_null_annotation_reads_as_sentinel():
    rec = weather_record()
    rec['gt_document']['calls'][0]['arguments']['unit'] = {'specification': UNIT_SPEC, 'modification': None}
    inst = instance_from_dict(rec)
    assert not inst.gt_document.calls[0].arguments['unit'].has_mod
    assert annotation_problems(inst) == []
