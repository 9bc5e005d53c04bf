from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

from .backends import Backends, SimilarityBackend, StudentBackend
from .constants import TOOL_CLOSE
from .domain import ActionList, GtCall, GtDocument, GtParam, Instance, RewardBreakdown, ToolCall
from .errors import BackendError, ComponentError, ConfigError, DatasetError, R2ifError
from .log import log
from .matcher import align_exact, correctness
from .models import RewardConfig, SamplingConfig
from .parser import AnswerDoc, AnswerEntry, ParseFailure, RejectionMarker, parse_answer_doc, parse_response
from .prompts import render_prefix
from .serializer import canonical_json


@dataclass(frozen=True)
class ParamSmvTrace:
    param: str
    r_spec: float
    r_mod: float
    r_val: int
    sim_spec: float | None
    sim_mod: float | None
    components_used: int
    score: float


@dataclass(frozen=True)
class CallSmvTrace:
    pred_index: int
    gold_index: int
    name: str
    score: float
    params: tuple[ParamSmvTrace, ...] = ()


@dataclass(frozen=True)
class CerEstimate:
    v: float
    v_base: float
    r_cer: float
    samples: int
    successes: int


def binary_reward(fmt: int, correct: int) -> int:
    return int(fmt) * int(correct)


def _check_tau(cfg: RewardConfig):
    if not 0 < cfg.tau <= 1:
        raise ConfigError(f'tau must be in (0, 1], got {cfg.tau}')


def gated_similarity(snippet: str | None, target: str, sim: SimilarityBackend, tau: float) -> tuple[float, float | None]:
    """
    Threshold-gated semantic score of a reasoning snippet against a reference text

    :return: (gated score, raw similarity or None when the snippet is absent)
    """
    if snippet is None or not snippet.strip():
        return 0.0, None
    s = sim.similarity(snippet, target)
    return (s if s >= tau else 0.0), s


def smv_param(snippet: str | None, spec: str | None, mod: str | None, instantiated: bool,
              sim: SimilarityBackend, cfg: RewardConfig, param: str = '') -> ParamSmvTrace:
    """
    Score one supervised parameter on specification awareness, modification awareness and value
    instantiation

    With cfg.smv_renormalize the score averages only the components whose annotation is present
    (r_val always is); otherwise it always divides by 3.

    :param snippet: The reasoning's analysis of this parameter, None if it was never discussed
    :param spec: Annotated specification, or the "no spec" sentinel
    :param mod: Annotated modification, or the "no modify" sentinel
    :param instantiated: Whether the predicted call sets this parameter
    """
    _check_tau(cfg)
    gt = GtParam(spec, mod)

    r_spec = r_mod = 0.0
    sim_spec = sim_mod = None
    used = 1
    if gt.has_spec:
        r_spec, sim_spec = gated_similarity(snippet, spec, sim, cfg.tau)
        used += 1
    if gt.has_mod:
        r_mod, sim_mod = gated_similarity(snippet, mod, sim, cfg.tau)
        used += 1
    r_val = int(bool(instantiated))

    if not cfg.smv_renormalize:
        used = 3
    score = (r_spec + r_mod + r_val) / used
    return ParamSmvTrace(param, r_spec, r_mod, r_val, sim_spec, sim_mod, used, score)


def trace_call(pred_call: ToolCall, entry: AnswerEntry | None, gold_entry: GtCall,
               sim: SimilarityBackend, cfg: RewardConfig) -> tuple[ParamSmvTrace, ...]:
    snippets = entry.arg_snippets if entry else {}
    return tuple(smv_param(snippets.get(p), gt.specification, gt.modification, p in pred_call.arguments,
                           sim, cfg, p) for p, gt in gold_entry.arguments.items())


def smv_call(pred_call: ToolCall, entry: AnswerEntry | None, gold_entry: GtCall,
             sim: SimilarityBackend, cfg: RewardConfig) -> float:
    """
    Mean parameter score over the supervised arguments of a matched call; 1 when none are supervised
    """
    traces = trace_call(pred_call, entry, gold_entry, sim, cfg)
    if not traces:
        return 1.0
    return sum(t.score for t in traces) / len(traces)


def align_answer_entries(pred: ActionList, doc: AnswerDoc) -> list[AnswerEntry | None]:
    """
    Pair each predicted call with a reasoning entry

    The i-th header goes with the i-th call when the names agree; otherwise the call takes the first
    unconsumed header with its name. Calls the reasoning never discussed get None.
    """
    consumed = [False] * len(doc.entries)
    out = []
    for i, call in enumerate(pred):
        if i < len(doc.entries) and not consumed[i] and doc.entries[i].name == call.name:
            j = i
        else:
            j = next((j for j, e in enumerate(doc.entries) if not consumed[j] and e.name == call.name), None)
        if j is None:
            out.append(None)
        else:
            consumed[j] = True
            out.append(doc.entries[j])
    return out


def _check_alignment(gold: ActionList, gt_doc: GtDocument | None):
    if gt_doc is None:
        raise DatasetError('instance has no gt_document to score SMV against', field='gt_document')
    if len(gt_doc.calls) != len(gold):
        raise DatasetError(f'{len(gt_doc.calls)} entries for {len(gold)} ground-truth calls',
                           field='gt_document.calls')
    for j, (d, g) in enumerate(zip(gt_doc.calls, gold)):
        if d.name != g.name:
            raise DatasetError(f'entry {j} names {d.name!r} but ground truth calls {g.name!r}',
                               field='gt_document.calls')


def trace_action(pred: ActionList | RejectionMarker | ParseFailure, gold: ActionList, answer_doc: AnswerDoc,
                 gt_doc: GtDocument | None, sim: SimilarityBackend, cfg: RewardConfig) -> tuple[float, tuple[CallSmvTrace, ...]]:
    """
    SMV of a whole action list with per-call traces. Credit is confined to strictly aligned calls and
    normalized by the larger of the two call counts.
    """
    _check_alignment(gold, gt_doc)
    if not isinstance(pred, ActionList) or len(pred) == 0:
        return 0.0, ()

    match = align_exact(pred, gold)
    if not match.pairs:
        return 0.0, ()

    entries = align_answer_entries(pred, answer_doc)
    calls = []
    for i, j in match.pairs:
        traces = trace_call(pred[i], entries[i], gt_doc.calls[j], sim, cfg)
        score = sum(t.score for t in traces) / len(traces) if traces else 1.0
        calls.append(CallSmvTrace(i, j, pred[i].name, score, traces))
    total = sum(c.score for c in calls) / max(len(pred), len(gold))
    return min(1.0, total), tuple(calls)


def smv_action(pred: ActionList | RejectionMarker | ParseFailure, gold: ActionList, answer_doc: AnswerDoc,
               gt_doc: GtDocument | None, sim: SimilarityBackend, cfg: RewardConfig) -> float:
    return trace_action(pred, gold, answer_doc, gt_doc, sim, cfg)[0]


def smv_irrelevance(reason_text: str | None, reference_reason: str | None, sim: SimilarityBackend,
                    cfg: RewardConfig) -> float:
    """
    SMV of an irrelevance instance: gated similarity of the reasoning to the reference explanation
    """
    _check_tau(cfg)
    if not reference_reason:
        raise DatasetError('irrelevance instance has no reference reason', field='irrelevance_reason')
    return gated_similarity(reason_text, reference_reason, sim, cfg.tau)[0]


def complete_response(prefix: str, continuation: str) -> str:
    """
    Reassemble a full response from the prefix and a student continuation, closing the tool block
    when the student stopped before it
    """
    if TOOL_CLOSE not in continuation:
        continuation += TOOL_CLOSE
    return prefix + continuation


def count_successes(prefix: str, instance: Instance, student: StudentBackend, sampling: SamplingConfig,
                    order_sensitive: bool = False) -> int:
    conts = student.generate_continuations(prefix, instance, sampling.k, sampling)
    if len(conts) != sampling.k:
        raise BackendError('student', f'asked for {sampling.k} continuations, got {len(conts)}')
    return sum(correctness(parse_response(complete_response(prefix, c)).tool_payload, instance.ground_truth,
                           order_sensitive) for c in conts)


def estimate_success_rate(prefix: str, instance: Instance, student: StudentBackend, cfg: RewardConfig) -> float:
    """
    Fraction of K student continuations of the prefix that produce a correct tool call

    :param prefix: "<reason>R</reason><tool>"
    """
    s = cfg.sampling()
    return count_successes(prefix, instance, student, s, cfg.order_sensitive) / s.k


class VBaseCache:
    """
    Baseline success rates keyed by instance content and sampling config, computed at most once per
    key even when many threads ask at the same time. The least recently used entries are dropped
    beyond max_entries.
    """
    def __init__(self, max_entries: int = 4096):
        if max_entries < 1:
            raise ConfigError('max_entries must be positive')
        self.max_entries = max_entries
        self.values: OrderedDict[tuple, float] = OrderedDict()
        self.pending: dict[tuple, threading.Event] = {}
        self.lock = threading.Lock()
        self.computed = 0

    def get(self, key: tuple, compute: Callable[[], float]) -> float:
        while True:
            with self.lock:
                if key in self.values:
                    self.values.move_to_end(key)
                    return self.values[key]
                ev = self.pending.get(key)
                owner = ev is None
                if owner:
                    ev = self.pending[key] = threading.Event()

            if not owner:
                log.debug(f'Waiting for v_base of {key[0]} computed by another request')
                ev.wait()
                # The owner either stored a value or failed, in which case we try ourselves
                continue

            try:
                v = compute()
                with self.lock:
                    self.values[key] = v
                    while len(self.values) > self.max_entries:
                        self.values.popitem(last=False)
                    self.computed += 1
                log.debug(f'Cached v_base {v:.3f} for {key[0]}')
                return v
            finally:
                with self.lock:
                    del self.pending[key]
                ev.set()


V_BASE_CACHE = VBaseCache()


def instance_digest(instance: Instance) -> str:
    """
    Short hash of everything the student sees or is judged against: category, query, tools and
    ground truth. Two instances sharing an id but differing here never share a v_base.
    """
    content = canonical_json({'category': instance.category, 'query': instance.query,
                              'tools': [t.to_json() for t in instance.tools],
                              'ground_truth': [c.to_json() for c in instance.ground_truth]})
    return hashlib.sha256(content.encode()).hexdigest()[:20]


def baseline(instance: Instance, student: StudentBackend | None, cfg: RewardConfig,
             cache: VBaseCache | None = None) -> float:
    """
    v_base of an instance: the precomputed value when present, else the student's success rate from
    an empty reasoning prefix under the same sampling config
    """
    if instance.baseline_success_rate is not None:
        return float(instance.baseline_success_rate)
    if student is None:
        raise BackendError('student', f'no student backend to estimate v_base of {instance.id!r}')
    s = cfg.sampling()
    cache = V_BASE_CACHE if cache is None else cache
    return cache.get((instance.id, instance_digest(instance), s.temperature, s.top_p, s.k, cfg.order_sensitive),
                     lambda: estimate_success_rate(render_prefix(''), instance, student, cfg))


def cer(reason_text: str, instance: Instance, student: StudentBackend | None, cfg: RewardConfig,
        cache: VBaseCache | None = None) -> CerEstimate:
    """
    Chain-of-thought effectiveness: how much this reasoning raises the student's success rate over
    its baseline
    """
    if student is None:
        raise BackendError('student', 'no student backend configured')
    s = cfg.sampling()
    successes = count_successes(render_prefix(reason_text), instance, student, s, cfg.order_sensitive)
    v = successes / s.k
    v_base = baseline(instance, student, cfg, cache)
    return CerEstimate(v, v_base, v - v_base, s.k, successes)


def composite_reward(response: str, instance: Instance, backends: Backends | None, cfg: RewardConfig,
                     enable_cer: bool = True, enable_smv: bool = True,
                     cache: VBaseCache | None = None) -> RewardBreakdown:
    """
    Score one rollout: binary_weight * r_binary + r_cer + r_smv

    :param response: Raw model response
    :param instance: Instance the response answers
    :param backends: Student and similarity backends (student only needed when enable_cer)
    :param enable_cer: Compute r_cer; when off it is reported absent and counts as 0
    :param enable_smv: Compute r_smv; when off it is 0
    :raises ComponentError: A component failed; .component names it and the cause is chained
    """
    try:
        parsed = parse_response(response)
        r_format = int(parsed.format_valid)
        r_correct = correctness(parsed.tool_payload, instance.ground_truth, cfg.order_sensitive)
        r_binary = binary_reward(r_format, r_correct)
    except R2ifError as e:
        raise ComponentError('binary', e) from e

    r_cer = None
    if enable_cer and parsed.reason_text is not None and (r_format or cfg.cer_on_invalid):
        try:
            r_cer = cer(parsed.reason_text, instance, backends.student if backends else None, cfg, cache).r_cer
        except R2ifError as e:
            raise ComponentError('cer', e) from e

    r_smv = 0.0
    diagnostics = ()
    if enable_smv and not isinstance(parsed.tool_payload, ParseFailure):
        try:
            if backends is None:
                raise BackendError('similarity', 'no similarity backend configured')
            if instance.is_irrelevance:
                r_smv = smv_irrelevance(parsed.reason_text, instance.irrelevance_reason, backends.similarity, cfg)
            else:
                r_smv, diagnostics = trace_action(parsed.tool_payload, instance.ground_truth,
                                                  parse_answer_doc(parsed.reason_text), instance.gt_document,
                                                  backends.similarity, cfg)
        except R2ifError as e:
            raise ComponentError('smv', e) from e

    total = cfg.binary_weight * r_binary + (r_cer or 0.0) + r_smv
    return RewardBreakdown(r_format, r_correct, r_binary, r_cer, r_smv, total, diagnostics, parsed.violations)
