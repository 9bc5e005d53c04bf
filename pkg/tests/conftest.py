from __future__ import annotations

import json
from pathlib import Path

import pytest

from r2if_kit.backends import Backends, LexicalCosine, ScriptedSimilarity, ScriptedStudent
from r2if_kit.dataset import instance_from_dict
from r2if_kit.domain import ActionList, Instance
from r2if_kit.parser import render_response

WEATHER_CALL = {'name': 'get_current_weather', 'arguments': {'location': 'San Francisco, CA', 'unit': 'celsius'}}
WEATHER_REASON = ('Step1: The user wants the current weather, so I choose #get_current_weather#.\n'
                  'Step2:\n'
                  'For #get_current_weather#:\n'
                  '- location: city plus state abbreviation, San Francisco, CA\n'
                  '- unit: lowercase celsius as requested')
LOCATION_SPEC = 'city name followed by a state abbreviation'
LOCATION_MOD = 'append the state abbreviation CA'
UNIT_SPEC = 'lowercase unit name'


def weather_record(**changes) -> dict:
    d = {
        'id': 'weather-1',
        'category': 'simple',
        'query': "What's the weather like in San Francisco? Use Celsius.",
        'tools': [{
            'name': 'get_current_weather',
            'description': 'Get the current weather in a given location',
            'parameters': {
                'location': {'type': 'string', 'description': 'The city and state, e.g. San Francisco, CA'},
                'unit': {'type': 'enum', 'description': 'Temperature unit', 'enum': ['celsius', 'fahrenheit']},
            },
            'required': ['location'],
        }],
        'ground_truth': [WEATHER_CALL],
        'gt_document': {
            'reason': 'The question asks for the weather in one city.',
            'calls': [{'name': 'get_current_weather', 'arguments': {
                'location': {'specification': LOCATION_SPEC, 'modification': LOCATION_MOD},
                'unit': {'specification': UNIT_SPEC, 'modification': 'no modify'},
            }}],
        },
        'baseline_success_rate': 0.6,
    }
    d.update(changes)
    return d


def irrelevance_record(**changes) -> dict:
    d = {
        'id': 'irr-1',
        'category': 'irrelevance',
        'query': 'Who painted the Mona Lisa?',
        'tools': weather_record()['tools'],
        'ground_truth': [],
        'irrelevance_reason': 'The only tool reports weather and cannot answer art history questions.',
        'baseline_success_rate': 0.5,
    }
    d.update(changes)
    return d


def weather_response(reason: str = WEATHER_REASON, call: dict | None = None) -> str:
    return render_response(reason, ActionList.from_json([call or WEATHER_CALL]))


def write_jsonl(path: Path, rows: list) -> Path:
    path.write_text(''.join((r if isinstance(r, str) else json.dumps(r)) + '\n' for r in rows), 'utf-8')
    return path


@pytest.fixture
def weather() -> Instance:
    return instance_from_dict(weather_record())


@pytest.fixture
def irrelevance() -> Instance:
    return instance_from_dict(irrelevance_record())


@pytest.fixture
def lexical_backends() -> Backends:
    return Backends(LexicalCosine())


@pytest.fixture
def scripted_backends() -> Backends:
    """
    Similarity: the weather reasoning paraphrases its annotations above the 0.7 gate.
    Student: 4 of 5 continuations correct after the weather reasoning, 3 of 5 otherwise.
    """
    ok = json.dumps([WEATHER_CALL]) + '</tool>'
    bad = json.dumps([{'name': 'get_current_weather', 'arguments': {'location': 'SF'}}]) + '</tool>'
    sim = ScriptedSimilarity({
        ('city plus state abbreviation, San Francisco, CA', LOCATION_SPEC): 0.82,
        ('city plus state abbreviation, San Francisco, CA', LOCATION_MOD): 0.55,
        ('lowercase celsius as requested', UNIT_SPEC): 0.75,
    })
    student = ScriptedStudent.from_reasons({
        ('weather-1', WEATHER_REASON): [ok, ok, ok, ok, bad],
        ('weather-1', None): [ok, ok, ok, bad, bad],
        ('irr-1', None): ['None of function can be used</tool>'],
    })
    return Backends(sim, student)
