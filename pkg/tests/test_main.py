import json

import pytest

from r2if_kit.main import EXIT_BACKEND, EXIT_INVALID, EXIT_OK, EXIT_USAGE, build_config, create_parser, run

from conftest import WEATHER_CALL, irrelevance_record, weather_record, weather_response, write_jsonl


@pytest.fixture
def files(tmp_path):
    data = write_jsonl(tmp_path / 'd.jsonl', [weather_record(), irrelevance_record()])
    rollouts = write_jsonl(tmp_path / 'r.jsonl', [
        {'instance_id': 'weather-1', 'responses': [weather_response(), weather_response() + ' bye']},
        {'instance_id': 'irr-1', 'responses': ['<reason>no</reason><tool>None of function can be used</tool>']},
    ])
    student = write_jsonl(tmp_path / 'student.jsonl', [
        {'instance_id': 'weather-1', 'continuations': [json.dumps([WEATHER_CALL])]},
        {'instance_id': 'irr-1', 'continuations': ['None of function can be used']},
    ])
    return tmp_path, str(data), str(rollouts), str(student)


def test_usage_errors():
    for argv in (['score', '--bogus'], ['frobnicate'], [], ['toy-train', '--mode', 'half']):
        with pytest.raises(SystemExit) as e:
            run(argv)
        assert e.value.code == EXIT_USAGE


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        run(['--version'])
    assert e.value.code == 0
    assert 'r2if-kit' in capsys.readouterr().out


def test_validate_dataset(tmp_path, capsys):
    good = write_jsonl(tmp_path / 'good.jsonl', [weather_record(), irrelevance_record()])
    assert run(['validate-dataset', '--data', str(good)]) == EXIT_OK

    bad = write_jsonl(tmp_path / 'bad.jsonl', [weather_record(), '{"id": "x", "category": "simple"'])
    assert run(['validate-dataset', '--data', str(bad)]) == EXIT_INVALID
    assert 'line 2: invalid JSON' in capsys.readouterr().err

    rec = weather_record()
    rec['gt_document']['calls'][0]['arguments']['unit']['specification'] = 5
    typed = write_jsonl(tmp_path / 'typed.jsonl', [rec])
    assert run(['validate-dataset', '--data', str(typed)]) == EXIT_INVALID
    assert 'line 1: gt_document.calls[0].arguments.unit.specification' in capsys.readouterr().err

    binary = tmp_path / 'binary.jsonl'
    binary.write_bytes(good.read_bytes() + b'\xff\xfe\n')
    assert run(['validate-dataset', '--data', str(binary)]) == EXIT_INVALID
    assert 'line 3: invalid UTF-8' in capsys.readouterr().err
    assert run(['evaluate', '--data', str(binary), '--rollouts', str(binary), '--no-cer']) == EXIT_INVALID


def test_evaluate_without_cer(files):
    tmp, data, rollouts, _ = files
    out = tmp / 'rep.json'
    assert run(['evaluate', '--data', data, '--rollouts', rollouts, '--no-cer', '--out', str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert 'ace' not in report
    assert report['accuracy']['overall'] == pytest.approx(2 / 3)


def test_evaluate_with_scripted_student(files):
    tmp, data, rollouts, student = files
    out = tmp / 'rep.md'
    assert run(['evaluate', '--data', data, '--rollouts', rollouts, '--student-script', student,
                '--format', 'markdown', '--out', str(out)]) == EXIT_OK
    assert '| overall | 3 |' in out.read_text()


def test_score(files, capsys):
    tmp, data, rollouts, student = files
    out = tmp / 'scores.json'
    assert run(['score', '--data', data, '--rollouts', rollouts, '--student-script', student,
                '--out', str(out)]) == EXIT_OK
    scores = json.loads(out.read_text())
    assert len(scores['weather-1']['breakdowns']) == 2
    assert 'advantages' in scores['weather-1'] and 'advantages' not in scores['irr-1']
    assert scores['weather-1']['breakdowns'][0]['r_cer'] == pytest.approx(1.0 - 0.6)
    assert 'weather-1' in capsys.readouterr().out


def test_backend_failure(files):
    tmp, data, rollouts, _ = files
    other = write_jsonl(tmp / 'other.jsonl', [{'instance_id': 'unknown', 'continuations': ['x']}])
    assert run(['ace', '--data', data, '--rollouts', rollouts, '--student-script', str(other)]) == EXIT_BACKEND
    assert run(['score', '--data', data, '--rollouts', rollouts]) == EXIT_BACKEND


def test_ace(files):
    tmp, data, rollouts, student = files
    out = tmp / 'ace.json'
    assert run(['ace', '--data', data, '--rollouts', rollouts, '--student-script', student,
                '--out', str(out)]) == EXIT_OK
    assert json.loads(out.read_text())['ace'] == pytest.approx((0.4 + 0.5) / 2)


def test_toy_train_reproducible(tmp_path):
    a, b = tmp_path / 'a.csv', tmp_path / 'b.csv'
    assert run(['toy-train', '--mode', 'full', '--seed', '7', '--out', str(a)]) == EXIT_OK
    assert run(['toy-train', '--mode', 'full', '--seed', '7', '--out', str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 202


def test_prompt(files, capsys):
    _, data, _, _ = files
    assert run(['prompt', '--data', data, '--id', 'weather-1']) == EXIT_OK
    out = capsys.readouterr().out
    assert 'None of function can be used' in out and 'get_current_weather' in out
    assert run(['prompt', '--data', data, '--id', 'missing']) == EXIT_INVALID


def test_config_file_overridden_by_flags(tmp_path):
    cfg = tmp_path / 'r2if.toml'
    cfg.write_text('[reward]\ntau = 0.5\ncer_samples = 3\n\n[server]\nport = 9000\n')
    args = create_parser().parse_args(['serve', '-C', str(cfg), '--tau', '0.8'])
    c = build_config(args)
    assert c.reward.tau == 0.8 and c.reward.cer_samples == 3 and c.port == 9000

    args = create_parser().parse_args(['-C', str(cfg), 'toy-train', '--smv-literal'])
    c = build_config(args)
    assert c.reward.tau == 0.5 and not c.reward.smv_renormalize


def test_bad_config(tmp_path):
    cfg = tmp_path / 'r2if.toml'
    cfg.write_text('[reward]\ntau = 2\n')
    assert run(['-C', str(cfg), 'toy-train', '--iterations', '1']) == EXIT_INVALID
