from __future__ import annotations

import csv
import dataclasses
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .__version__ import VERSION
from .backends import Backends, StudentBackend
from .constants import DEGENERATE_RATE, TASK_CATEGORIES
from .domain import Instance, RewardBreakdown
from .errors import InputError
from .log import log
from .models import ROBUSTNESS_CONFIGS, RewardConfig, SamplingConfig
from .parser import parse_response
from .reward import CerEstimate, VBaseCache, cer, composite_reward, estimate_success_rate
from .prompts import render_prefix
from .serializer import canonical_json, to_jsonable
from .types import ReportFormat

COMPONENTS = ('r_format', 'r_correctness', 'r_binary', 'r_cer', 'r_smv', 'total')


@dataclass(frozen=True)
class EvalFlags:
    accuracy: bool = True
    ace: bool = True
    smv: bool = True


@dataclass
class ComponentStats:
    mean: float
    min: float
    max: float
    n: int

    @classmethod
    def of(cls, values: Sequence[float]) -> ComponentStats | None:
        if not values:
            return None
        a = np.asarray(values, dtype=np.float64)
        return cls(float(a.mean()), float(a.min()), float(a.max()), len(values))


@dataclass
class InstanceRecord:
    id: str
    category: str
    responses: int
    correct: int
    accuracy: float
    r_cer: float | None
    reward_mean: float
    r_smv_mean: float
    reason_words: float


@dataclass
class EvalReport:
    version: str
    config: dict
    counts: dict[str, int]
    accuracy: dict[str, float]
    ace: dict[str, float] | None
    reward_stats: dict[str, ComponentStats]
    reason_words: dict[str, float]
    instances: list[InstanceRecord] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        d = dict(d)
        d.setdefault('ace', None)
        d['reward_stats'] = {k: ComponentStats(**v) for k, v in d['reward_stats'].items()}
        d['instances'] = [InstanceRecord(**r) for r in d['instances']]
        return cls(**d)


def reason_words(reason_text: str | None) -> int:
    return len(reason_text.split()) if reason_text else 0


def _ordered(categories) -> list[str]:
    return [c for c in TASK_CATEGORIES if c in categories]


@dataclass
class _Scored:
    breakdowns: list[RewardBreakdown]
    correct: list[int]
    words: list[int]
    cer: list[CerEstimate]


def evaluate(instances: Sequence[Instance], responses: dict[str, list[str]], backends: Backends | None,
             cfg: RewardConfig = RewardConfig(), flags: EvalFlags = EvalFlags(), workers: int = 1,
             cache: VBaseCache | None = None) -> EvalReport:
    """
    Score rollouts against their instances and roll up accuracy, ACE and reward statistics

    A response counts as correct when its format is valid and its tool call matches exactly. ACE
    uses the first rollout of each instance, or every rollout when cfg.ace_rollout is "all".

    :param responses: Instance id -> response texts
    :param workers: Instances scored in parallel; records are always ordered by id
    :raises InputError: No responses, or responses for an unknown instance id
    """
    if not responses or not any(responses.values()):
        raise InputError('no responses to evaluate')
    by_id = {i.id: i for i in instances}
    unknown = sorted(set(responses) - set(by_id))
    if unknown:
        raise InputError(f'responses for unknown instance ids: {", ".join(unknown[:5])}')

    ids = sorted(k for k, v in responses.items() if v)

    def score(iid: str) -> _Scored:
        inst = by_id[iid]
        s = _Scored([], [], [], [])
        for k, resp in enumerate(responses[iid]):
            parsed = parse_response(resp)
            s.words.append(reason_words(parsed.reason_text))
            b = composite_reward(resp, inst, backends, cfg, enable_cer=False, enable_smv=flags.smv, cache=cache)
            if flags.ace and (k == 0 or cfg.ace_rollout == 'all'):
                est = cer(parsed.reason_text or '', inst, backends.student if backends else None, cfg, cache)
                s.cer.append(est)
                b = dataclasses.replace(b, r_cer=est.r_cer, total=b.total + est.r_cer)
            s.breakdowns.append(b)
            s.correct.append(b.r_binary)
        return s

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            scored = dict(zip(ids, ex.map(score, ids)))
    else:
        scored = {i: score(i) for i in ids}

    records = []
    for iid in ids:
        s = scored[iid]
        n = len(s.breakdowns)
        records.append(InstanceRecord(
            iid, by_id[iid].category, n, sum(s.correct), sum(s.correct) / n,
            float(np.mean([e.r_cer for e in s.cer])) if s.cer else None,
            float(np.mean([b.total for b in s.breakdowns])),
            float(np.mean([b.r_smv for b in s.breakdowns])),
            float(np.mean(s.words)),
        ))

    cats = _ordered({r.category for r in records})

    def rollup(rs: list[InstanceRecord]) -> tuple[float, float | None, float]:
        total = sum(r.responses for r in rs)
        acc = sum(r.correct for r in rs) / total
        cers = [r.r_cer for r in rs if r.r_cer is not None]
        ace = float(np.mean(cers)) if cers else None
        words = sum(r.reason_words * r.responses for r in rs) / total
        return acc, ace, words

    accuracy, ace, words = {}, {}, {}
    for key, rs in [('overall', records)] + [(c, [r for r in records if r.category == c]) for c in cats]:
        accuracy[key], ace[key], words[key] = rollup(rs)

    all_b = [b for i in ids for b in scored[i].breakdowns]
    reward_stats = {}
    for comp in COMPONENTS:
        st = ComponentStats.of([getattr(b, comp) for b in all_b if getattr(b, comp) is not None])
        if st is not None:
            reward_stats[comp] = st

    counts = {
        'instances': len(ids),
        'responses': len(all_b),
        'format_valid': sum(b.r_format for b in all_b),
        'correct': sum(b.r_binary for b in all_b),
        'unanswered': len(by_id) - len(ids),
    }
    config = {'reward': to_jsonable(cfg), 'flags': to_jsonable(flags)}
    log.info(f'Evaluated {counts["responses"]} responses over {counts["instances"]} instances: '
             f'accuracy {accuracy["overall"]:.4f}')
    return EvalReport(VERSION, config, counts, accuracy if flags.accuracy else {},
                      ace if flags.ace else None, reward_stats, words, records)


def ace(estimates: Sequence[CerEstimate | float]) -> float:
    """
    Average chain-of-thought effectiveness: the mean r_cer
    """
    if not estimates:
        raise InputError('ACE of an empty set')
    return float(np.mean([e.r_cer if isinstance(e, CerEstimate) else e for e in estimates]))


@dataclass
class ValidityReport:
    non_irrelevance_rate: float | None
    irrelevance_rate: float | None
    non_irrelevance_n: int
    irrelevance_n: int
    degenerate: bool


def default_reason(inst: Instance) -> str:
    if inst.is_irrelevance:
        return inst.irrelevance_reason or ''
    return inst.gt_document.reason if inst.gt_document else ''


def student_validity_check(instances: Sequence[Instance], student: StudentBackend, cfg: RewardConfig = RewardConfig(),
                           reasons: dict[str, str] | None = None) -> ValidityReport:
    """
    Success rates of the student when continuing from reasoning prefixes, split into irrelevance
    and everything else. A student whose non-irrelevance rate falls under 5% has collapsed (for
    example to always rejecting) and cannot serve as a CER evaluator.

    :param reasons: Reasoning per instance id; defaults to the annotated reference reasoning
    """
    if not instances:
        raise InputError('validity check needs at least one instance')
    reasons = reasons or {}
    rates: dict[bool, list[float]] = {True: [], False: []}
    for inst in instances:
        prefix = render_prefix(reasons.get(inst.id, default_reason(inst)))
        rates[inst.is_irrelevance].append(estimate_success_rate(prefix, inst, student, cfg))

    non_irr = float(np.mean(rates[False])) if rates[False] else None
    irr = float(np.mean(rates[True])) if rates[True] else None
    degenerate = non_irr is not None and non_irr < DEGENERATE_RATE
    if degenerate:
        log.warning(f'Student looks degenerate: non-irrelevance success rate {non_irr:.3f}')
    return ValidityReport(non_irr, irr, len(rates[False]), len(rates[True]), degenerate)


@dataclass
class StabilityRow:
    config: str
    spearman: float | None
    kendall: float | None
    sign_agreement: float
    within_02: float
    mean_abs_delta: float


@dataclass
class RobustnessReport:
    configs: list[SamplingConfig]
    cer: dict[str, list[float]]
    instance_ids: list[str]
    rows: list[StabilityRow]


def _corr(value: float) -> float | None:
    return None if np.isnan(value) else float(value)


def rank_stability(name: str, base: Sequence[float], other: Sequence[float]) -> StabilityRow:
    """
    Compare two per-instance CER vectors: rank correlations, sign agreement, and how often and how
    far the values move
    """
    a = np.asarray(base, dtype=np.float64)
    b = np.asarray(other, dtype=np.float64)
    if a.shape != b.shape or a.size == 0:
        raise InputError('CER vectors must be non-empty and of equal length')
    delta = np.abs(a - b)
    if np.array_equal(a, b):
        rho = tau = 1.0
    else:
        rho = _corr(stats.spearmanr(a, b)[0]) if a.size > 1 else None
        tau = _corr(stats.kendalltau(a, b)[0]) if a.size > 1 else None
    return StabilityRow(name, rho, tau, float(np.mean(np.sign(a) == np.sign(b))),
                        float(np.mean(delta <= 0.2 + 1e-12)), float(delta.mean()))


def cer_robustness(instances: Sequence[Instance], student: StudentBackend,
                   configs: Sequence[SamplingConfig] = ROBUSTNESS_CONFIGS, cfg: RewardConfig = RewardConfig(),
                   reasons: dict[str, str] | None = None) -> RobustnessReport:
    """
    Recompute per-instance CER under several sampling configurations and compare each with the first
    """
    if len(configs) < 2:
        raise InputError('robustness analysis needs at least two sampling configs')
    if not instances:
        raise InputError('robustness analysis needs at least one instance')
    reasons = reasons or {}
    ids = [i.id for i in instances]
    vectors = {}
    for c in configs:
        ccfg = cfg.with_sampling(c)
        cache = VBaseCache()
        vectors[c.name] = [cer(reasons.get(i.id, default_reason(i)), i, student, ccfg, cache).r_cer for i in instances]
        log.debug(f'CER under {c.name}: {np.round(vectors[c.name], 3).tolist()}')

    base = vectors[configs[0].name]
    rows = [rank_stability(c.name, base, vectors[c.name]) for c in configs[1:]]
    return RobustnessReport(list(configs), vectors, ids, rows)


def _fmt(v: float | None) -> str:
    return '-' if v is None else f'{v:.4f}'


def render_markdown(report: EvalReport) -> str:
    lines = [f'# Evaluation report (r2if-kit {report.version})', '',
             f'Instances: {report.counts["instances"]}, responses: {report.counts["responses"]}', '',
             '| Category | Responses | Accuracy | ACE | Reason words |',
             '|---|---|---|---|---|']
    cats = ['overall'] + _ordered({r.category for r in report.instances})
    for c in cats:
        n = sum(r.responses for r in report.instances if c == 'overall' or r.category == c)
        acc = report.accuracy.get(c)
        a = report.ace.get(c) if report.ace is not None else None
        lines.append(f'| {c} | {n} | {_fmt(acc)} | {_fmt(a)} | {report.reason_words[c]:.1f} |')

    lines += ['', '| Component | Mean | Min | Max |', '|---|---|---|---|']
    for k, s in report.reward_stats.items():
        lines.append(f'| {k} | {s.mean:.4f} | {s.min:.4f} | {s.max:.4f} |')
    return '\n'.join(lines) + '\n'


def render_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator='\n')
    cols = [f.name for f in dataclasses.fields(InstanceRecord)]
    w.writerow(cols)
    for r in report.instances:
        row = []
        for c in cols:
            v = getattr(r, c)
            row.append('' if v is None else f'{v:.6f}' if isinstance(v, float) else v)
        w.writerow(row)
    return buf.getvalue()


def emit_report(report: EvalReport, fmt: ReportFormat = 'json') -> bytes:
    """
    Serialize a report. JSON output is canonical (sorted keys, floats rounded to 6 decimals), so
    the same report always produces the same bytes.
    """
    if fmt == 'json':
        d = to_jsonable(report, 6)
        if d['ace'] is None:
            del d['ace']
        return canonical_json(d).encode('utf-8')
    if fmt == 'markdown':
        return render_markdown(report).encode('utf-8')
    if fmt == 'csv':
        return render_csv(report).encode('utf-8')
    raise InputError(f'unknown report format {fmt!r}')


def parse_report(data: bytes | str) -> EvalReport:
    return EvalReport.from_dict(json.loads(data))
