import json
import random

import pytest

from r2if_kit.backends import Backends, LexicalCosine, ScriptedSimilarity, ScriptedStudent
from r2if_kit.dataset import instance_from_dict
from r2if_kit.errors import InputError
from r2if_kit.harness import EvalFlags, ace, cer_robustness, emit_report, evaluate, parse_report, rank_stability, \
    student_validity_check
from r2if_kit.models import ROBUSTNESS_CONFIGS, RewardConfig
from r2if_kit.reward import CerEstimate, VBaseCache

from conftest import WEATHER_CALL, WEATHER_REASON, irrelevance_record, weather_record, weather_response

REJECT = '<reason>No tool fits.</reason><tool>None of function can be used</tool>'
WRONG = weather_response(call={'name': 'get_current_weather', 'arguments': {'location': 'SF'}})
OK = json.dumps([WEATHER_CALL]) + '</tool>'
BAD = json.dumps([{'name': 'get_current_weather', 'arguments': {'location': 'SF'}}]) + '</tool>'


def test_evaluate_accuracy(weather, irrelevance, scripted_backends):
    report = evaluate([weather, irrelevance], {'weather-1': [weather_response()], 'irr-1': [WRONG]},
                      scripted_backends)
    assert report.accuracy['overall'] == 0.5
    assert report.accuracy['simple'] == 1.0 and report.accuracy['irrelevance'] == 0.0
    assert report.counts == {'instances': 2, 'responses': 2, 'format_valid': 2, 'correct': 1, 'unanswered': 0}
    assert report.ace['simple'] == pytest.approx(0.2)
    assert [r.id for r in report.instances] == ['irr-1', 'weather-1']


def test_evaluate_per_response_accuracy(weather, scripted_backends):
    report = evaluate([weather], {'weather-1': [weather_response(), WRONG, weather_response() + ' ok', WRONG]},
                      scripted_backends, flags=EvalFlags(ace=False))
    assert report.accuracy['overall'] == 0.25
    assert report.ace is None
    assert report.reward_stats['r_format'].mean == 0.75
    assert 'r_cer' not in report.reward_stats


def test_evaluate_errors(weather, scripted_backends):
    with pytest.raises(InputError):
        evaluate([weather], {}, scripted_backends)
    with pytest.raises(InputError):
        evaluate([weather], {'weather-1': []}, scripted_backends)
    with pytest.raises(InputError):
        evaluate([weather], {'nope': [REJECT]}, scripted_backends)


def test_evaluate_ace_rollout_all(weather, scripted_backends):
    responses = {'weather-1': [weather_response(), REJECT]}
    first = evaluate([weather], responses, scripted_backends)
    every = evaluate([weather], responses, scripted_backends, RewardConfig(ace_rollout='all'))
    assert first.ace['overall'] == pytest.approx(0.2)
    # The rejection's reasoning gets the 3-in-5 fallback: 0.6 - 0.6 = 0
    assert every.ace['overall'] == pytest.approx(0.1)


def _population(n: int):
    instances, responses, sims, script = [], {}, {}, {}
    for k in range(n):
        irr = k % 5 == 4
        rec = irrelevance_record(id=f'irr-{k:02d}') if irr else weather_record(id=f'w-{k:02d}')
        inst = instance_from_dict(rec)
        instances.append(inst)
        responses[inst.id] = [REJECT, weather_response(), WRONG][k % 3:] or [REJECT]
        script[(inst.id, None)] = [OK, BAD, 'None of function can be used</tool>'][k % 3:] + [BAD]
    sims[('No tool fits.', irrelevance_record()['irrelevance_reason'])] = 0.8
    return instances, responses, Backends(ScriptedSimilarity(sims), ScriptedStudent.from_reasons(script))


def test_evaluate_deterministic():
    instances, responses, backends = _population(50)
    a = emit_report(evaluate(instances, responses, backends))
    b = emit_report(evaluate(instances, responses, backends, workers=8, cache=VBaseCache()))
    assert a == b
    assert emit_report(parse_report(a)) == a


def test_evaluate_invariant_under_permutation():
    instances, responses, backends = _population(30)
    expected = emit_report(evaluate(instances, responses, backends))
    plain = evaluate(instances, responses, backends, flags=EvalFlags(ace=False))
    rng = random.Random(3)
    for _ in range(5):
        shuffled = rng.sample(instances, len(instances))
        keys = rng.sample(list(responses), len(responses))
        assert emit_report(evaluate(shuffled, {k: responses[k] for k in keys}, backends)) == expected

        reordered = {k: rng.sample(v, len(v)) for k, v in responses.items()}
        report = evaluate(shuffled, reordered, backends, flags=EvalFlags(ace=False))
        assert (report.accuracy, report.counts) == (plain.accuracy, plain.counts)


def test_emit_report_formats(weather, scripted_backends):
    report = evaluate([weather], {'weather-1': [weather_response()]}, scripted_backends)
    data = json.loads(emit_report(report))
    assert data['ace']['overall'] == 0.2
    assert data['reward_stats']['total']['mean'] == round(report.reward_stats['total'].mean, 6)

    md = emit_report(report, 'markdown').decode()
    assert '| simple | 1 | 1.0000 | 0.2000 |' in md

    csv = emit_report(report, 'csv').decode().splitlines()
    assert csv[0].startswith('id,category,responses,correct,accuracy,r_cer')
    assert csv[1].startswith('weather-1,simple,1,1,1.000000,0.200000')

    no_ace = evaluate([weather], {'weather-1': [weather_response()]}, scripted_backends, flags=EvalFlags(ace=False))
    assert 'ace' not in json.loads(emit_report(no_ace))
    assert parse_report(emit_report(no_ace)).ace is None

    with pytest.raises(InputError):
        emit_report(report, 'xml')


def test_ace():
    assert ace([0.2, -0.1, 0.05]) == pytest.approx(0.05)
    assert ace([CerEstimate(0.8, 0.6, 0.2, 5, 4), CerEstimate(0.6, 0.6, 0.0, 5, 3)]) == pytest.approx(0.1)
    with pytest.raises(InputError):
        ace([])


def test_student_validity_degenerate(weather, irrelevance):
    always_reject = ScriptedStudent({(i, '*'): ['None of function can be used</tool>'] for i in ('weather-1', 'irr-1')})
    v = student_validity_check([weather, irrelevance], always_reject)
    assert v.non_irrelevance_rate == 0 and v.irrelevance_rate == 1.0
    assert v.degenerate

    with pytest.raises(InputError):
        student_validity_check([], always_reject)


def test_student_validity_rates():
    instances, script = [], {}
    for k in range(20):
        irr = k >= 16
        inst = instance_from_dict(irrelevance_record(id=f'i{k}') if irr else weather_record(id=f'w{k}'))
        instances.append(inst)
        hits = (4 if k < 19 else 3) if irr else (3 if k < 11 else 2)
        answer = 'None of function can be used</tool>' if irr else OK
        script[(inst.id, '*')] = [answer] * hits + [BAD] * (5 - hits)
    v = student_validity_check(instances, ScriptedStudent(script))
    assert v.non_irrelevance_rate == pytest.approx((11 * 0.6 + 5 * 0.4) / 16)
    assert v.irrelevance_rate == pytest.approx(0.75)
    assert (v.non_irrelevance_n, v.irrelevance_n) == (16, 4)
    assert not v.degenerate


def test_rank_stability():
    same = rank_stability('C1', [0.2, -0.1, 0.4], [0.2, -0.1, 0.4])
    assert (same.spearman, same.kendall, same.mean_abs_delta, same.sign_agreement) == (1.0, 1.0, 0.0, 1.0)

    flipped = rank_stability('C2', [0.1, 0.2, 0.3, 0.4], [0.4, 0.3, 0.2, 0.1])
    assert flipped.spearman == pytest.approx(-1.0) and flipped.kendall == pytest.approx(-1.0)
    assert flipped.within_02 == 0.5

    constant = rank_stability('C3', [0.1, 0.2], [0.3, 0.3])
    assert constant.spearman is None

    with pytest.raises(InputError):
        rank_stability('C4', [0.1], [0.1, 0.2])


def test_cer_robustness_identical_outcomes():
    instances = [instance_from_dict(weather_record(id=f'w{k}', baseline_success_rate=0.2 * k)) for k in range(4)]
    student = ScriptedStudent({(i.id, '*'): [OK, OK, BAD, OK, BAD] for i in instances})
    report = cer_robustness(instances, student, ROBUSTNESS_CONFIGS[:4], RewardConfig(),
                            {i.id: WEATHER_REASON for i in instances})
    assert [r.config for r in report.rows] == ['C1', 'C2', 'C3']
    for row in report.rows:
        assert (row.spearman, row.kendall, row.mean_abs_delta) == (1.0, 1.0, 0.0)
    assert report.cer['C0'] == pytest.approx([0.6, 0.4, 0.2, 0.0])

    with pytest.raises(InputError):
        cer_robustness(instances, student, ROBUSTNESS_CONFIGS[:1])


def test_evaluate_lexical_without_student(weather):
    report = evaluate([weather], {'weather-1': [weather_response()]}, Backends(LexicalCosine()),
                      flags=EvalFlags(ace=False))
    assert report.accuracy['overall'] == 1.0
    assert 0 <= report.reward_stats['r_smv'].mean <= 1
