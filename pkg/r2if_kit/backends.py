from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
import uuid
from collections import Counter, OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import openai
import regex

from .constants import EMBED_KEY_ENV, STUDENT_KEY_ENV
from .domain import Instance
from .errors import BackendError, ConfigError, MockMissError
from .log import log
from .models import BackendConfig, SamplingConfig
from .prompts import render_messages, render_prefix

RE_WORD = regex.compile(r'[\p{L}\p{N}]+')

# Transport failures worth retrying; anything else fails the request immediately
TRANSIENT_ERRORS = (openai.APIConnectionError, openai.APITimeoutError, openai.RateLimitError,
                    openai.InternalServerError)
MAX_RETRIES = 3
BACKOFF_BASE = 0.5


def _script_lines(path: str | Path) -> list[str]:
    try:
        return Path(path).read_text('utf-8').splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f'cannot read script {path}: {e}')


def prefix_hash(prefix: str) -> str:
    return hashlib.sha256(prefix.encode('utf-8')).hexdigest()[:16]


def with_retries(component: str, request_id: str, fn: Callable, sleep: Callable[[float], None] = time.sleep):
    """
    Call fn, retrying transient transport failures with exponential backoff

    :param component: Backend name reported in errors ("student" or "similarity")
    :param request_id: Id attached to the request and to the raised error
    :raises BackendError: Retries exhausted, or a non-transient failure
    """
    for attempt in range(MAX_RETRIES + 1):
        try:
            return fn()
        except TRANSIENT_ERRORS as e:
            if attempt == MAX_RETRIES:
                raise BackendError(component, f'{type(e).__name__} after {MAX_RETRIES} retries: {e}', request_id)
            delay = BACKOFF_BASE * 2 ** attempt
            log.warning(f'{component} request {request_id} failed ({type(e).__name__}), retrying in {delay:.1f}s')
            sleep(delay)
        except openai.OpenAIError as e:
            raise BackendError(component, f'{type(e).__name__}: {e}', request_id)


class StudentBackend(Protocol):
    kind: str

    def generate_continuations(self, prefix: str, instance: Instance, k: int,
                               sampling: SamplingConfig) -> list[str]:
        """
        Sample k completions of the tool block that follows the prefix
        """
        ...

    def ping(self) -> bool:
        ...


class SimilarityBackend(Protocol):
    kind: str

    def similarity(self, a: str, b: str) -> float:
        """
        Symmetric similarity in [0, 1] with sim(a, a) = 1 for non-empty a
        """
        ...

    def ping(self) -> bool:
        ...


class ScriptedStudent:
    """
    Deterministic student: continuations come from a table keyed by (instance id, prefix hash).

    A "*" prefix hash acts as the fallback for every prefix of that instance. When k exceeds the
    scripted list, the list is cycled.
    """
    kind = 'scripted_mock'

    def __init__(self, script: dict[tuple[str, str], Sequence[str]]):
        self.script = {k: list(v) for k, v in script.items()}
        for key, v in self.script.items():
            if not v:
                raise ConfigError(f'Empty continuation list for {key}')

    @classmethod
    def from_reasons(cls, table: dict[tuple[str, str | None], Sequence[str]]) -> ScriptedStudent:
        """
        Build from (instance id, reasoning text) keys; None as reasoning text means any prefix
        """
        return cls({(iid, '*' if r is None else prefix_hash(render_prefix(r))): v for (iid, r), v in table.items()})

    @classmethod
    def load(cls, path: str | Path) -> ScriptedStudent:
        """
        Load a JSONL script: {instance_id, reason? | prefix_hash?, continuations: [...]} per line
        """
        script = {}
        for i, line in enumerate(_script_lines(path), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                if 'reason' in d:
                    h = prefix_hash(render_prefix(d['reason']))
                else:
                    h = d.get('prefix_hash', '*')
                script[(d['instance_id'], h)] = d['continuations']
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ConfigError(f'{path}: line {i}: bad student script entry: {e}')
        return cls(script)

    def generate_continuations(self, prefix: str, instance: Instance, k: int,
                               sampling: SamplingConfig) -> list[str]:
        entries = self.script.get((instance.id, prefix_hash(prefix))) or self.script.get((instance.id, '*'))
        if entries is None:
            raise MockMissError('student', f'no scripted continuations for instance {instance.id!r}')
        return [entries[i % len(entries)] for i in range(k)]

    def ping(self) -> bool:
        return True


class HttpChatStudent:
    """
    Student behind a chat-completions endpoint. The assistant turn is pre-filled with the prefix and
    the server is asked to continue it rather than open a new turn.
    """
    kind = 'http_chat'

    def __init__(self, endpoint: str, model: str, max_in_flight: int = 8, timeout: float = 60.0,
                 client: openai.OpenAI | None = None):
        if not endpoint and client is None:
            raise BackendError('student', 'no student endpoint configured')
        self.model = model
        self.client = client or openai.OpenAI(base_url=endpoint, api_key=os.getenv(STUDENT_KEY_ENV) or 'EMPTY',
                                              max_retries=0, timeout=timeout)
        self.slots = threading.BoundedSemaphore(max_in_flight)
        self.sleep = time.sleep

    def request_body(self, prefix: str, instance: Instance, k: int, sampling: SamplingConfig) -> dict:
        return dict(
            model=self.model,
            messages=render_messages(instance, prefix),
            temperature=sampling.temperature,
            top_p=sampling.top_p,
            n=k,
            extra_body={'continue_final_message': True, 'add_generation_prompt': False},
        )

    def generate_continuations(self, prefix: str, instance: Instance, k: int,
                               sampling: SamplingConfig) -> list[str]:
        body = self.request_body(prefix, instance, k, sampling)
        request_id = uuid.uuid4().hex
        with self.slots:
            res = with_retries('student', request_id, lambda: self.client.chat.completions.create(
                **body, extra_headers={'X-Request-Id': request_id}), self.sleep)

        texts = [c.message.content or '' for c in res.choices]
        if len(texts) != k:
            raise BackendError('student', f'asked for {k} continuations, got {len(texts)}', request_id)
        return texts

    def ping(self) -> bool:
        try:
            self.client.models.list()
            return True
        except openai.OpenAIError:
            return False


def _tf(text: str) -> Counter:
    return Counter(RE_WORD.findall(text.lower()))


class LexicalCosine:
    """
    Bag-of-words cosine over lowercased alphanumeric tokens
    """
    kind = 'lexical'

    def similarity(self, a: str, b: str) -> float:
        return lexical_cosine(a, b)

    def ping(self) -> bool:
        return True


def lexical_cosine(a: str, b: str) -> float:
    """
    Cosine of term-frequency vectors. Empty token sets score 0.

    >>> lexical_cosine('date format YYYY-MM-DD', 'format YYYY-MM-DD date')
    1.0
    """
    ta, tb = _tf(a), _tf(b)
    if not ta or not tb:
        return 0.0
    if ta == tb:
        return 1.0

    # Fixed iteration order keeps the float sum symmetric in (a, b)
    ta, tb = sorted((ta, tb), key=lambda c: sorted(c.items()))
    dot = math.fsum(ta[w] * tb[w] for w in sorted(ta.keys() & tb.keys()))
    na = math.sqrt(math.fsum(v * v for v in ta.values()))
    nb = math.sqrt(math.fsum(v * v for v in tb.values()))
    return min(1.0, max(0.0, dot / (na * nb)))


class EmbeddingSimilarity:
    """
    Cosine of embedding vectors from an embeddings endpoint, mapped from [-1, 1] onto [0, 1]

    Pair similarities are cached; beyond max_cached pairs the least recently used go first.
    """
    kind = 'embedding'

    def __init__(self, endpoint: str | None = None, model: str = 'embedding', max_in_flight: int = 8,
                 timeout: float = 60.0, embed_fn: Callable[[list[str]], list[list[float]]] | None = None,
                 max_cached: int = 10_000):
        if max_cached < 1:
            raise ConfigError('max_cached must be positive')
        if embed_fn is None:
            if not endpoint:
                raise BackendError('similarity', 'no embedding endpoint configured')
            client = openai.OpenAI(base_url=endpoint, api_key=os.getenv(EMBED_KEY_ENV) or 'EMPTY',
                                   max_retries=0, timeout=timeout)

            def embed_fn(texts: list[str]) -> list[list[float]]:
                rid = uuid.uuid4().hex
                res = with_retries('similarity', rid, lambda: client.embeddings.create(
                    model=model, input=texts, extra_headers={'X-Request-Id': rid}))
                return [d.embedding for d in res.data]

            self.client = client
        else:
            self.client = None
        self.embed_fn = embed_fn
        self.slots = threading.BoundedSemaphore(max_in_flight)
        self.max_cached = max_cached
        self.cache: OrderedDict[tuple[str, str], float] = OrderedDict()
        self.lock = threading.Lock()

    def similarity(self, a: str, b: str) -> float:
        if not a.strip() or not b.strip():
            return 0.0
        if a == b:
            return 1.0
        key = (a, b) if a <= b else (b, a)
        with self.lock:
            if key in self.cache:
                self.cache.move_to_end(key)
                return self.cache[key]

        with self.slots:
            va, vb = self.embed_fn(list(key))
        sim = embedding_similarity(va, vb)
        with self.lock:
            self.cache[key] = sim
            while len(self.cache) > self.max_cached:
                self.cache.popitem(last=False)
        return sim

    def ping(self) -> bool:
        if self.client is None:
            return True
        try:
            self.client.models.list()
            return True
        except openai.OpenAIError:
            return False


def embedding_similarity(va: Sequence[float], vb: Sequence[float]) -> float:
    """
    Map the cosine of two vectors onto [0, 1] via (c + 1) / 2, clamped
    """
    na = math.sqrt(math.fsum(x * x for x in va))
    nb = math.sqrt(math.fsum(x * x for x in vb))
    if na == 0 or nb == 0:
        return 0.0
    c = math.fsum(x * y for x, y in zip(va, vb)) / (na * nb)
    return min(1.0, max(0.0, (c + 1) / 2))


class ScriptedSimilarity:
    """
    Similarity from a fixed table of text pairs (order-free). Identical non-empty texts score 1.
    Unknown pairs get the default, or raise MockMissError when there is no default.
    """
    kind = 'mock'

    def __init__(self, table: dict[tuple[str, str], float], default: float | None = 0.0):
        self.table = {}
        for (a, b), v in table.items():
            if not 0 <= v <= 1:
                raise ConfigError(f'Scripted similarity {v} for {(a, b)} outside [0, 1]')
            self.table[(a, b) if a <= b else (b, a)] = float(v)
        self.default = default

    @classmethod
    def load(cls, path: str | Path, default: float | None = 0.0) -> ScriptedSimilarity:
        table = {}
        for i, line in enumerate(_script_lines(path), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                table[(d['a'], d['b'])] = d['sim']
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ConfigError(f'{path}: line {i}: bad similarity script entry: {e}')
        return cls(table, default)

    def similarity(self, a: str, b: str) -> float:
        if a == b and a.strip():
            return 1.0
        v = self.table.get((a, b) if a <= b else (b, a))
        if v is not None:
            return v
        if self.default is None:
            raise MockMissError('similarity', f'no scripted similarity for {a[:40]!r} vs {b[:40]!r}')
        return self.default

    def ping(self) -> bool:
        return True


@dataclass
class Backends:
    similarity: SimilarityBackend
    student: StudentBackend | None = None

    def ping(self) -> dict[str, bool]:
        out = {'similarity': self.similarity.ping()}
        if self.student is not None:
            out['student'] = self.student.ping()
        return out


def build_backends(cfg: BackendConfig) -> Backends:
    """
    Instantiate the configured student and similarity backends
    """
    if cfg.similarity == 'lexical':
        sim = LexicalCosine()
    elif cfg.similarity == 'embedding':
        sim = EmbeddingSimilarity(cfg.embed_endpoint, cfg.embed_model, cfg.max_in_flight, cfg.timeout)
    else:
        sim = ScriptedSimilarity.load(cfg.similarity_script) if cfg.similarity_script else ScriptedSimilarity({})

    student = None
    if cfg.student == 'http_chat':
        student = HttpChatStudent(cfg.student_endpoint, cfg.student_model, cfg.max_in_flight, cfg.timeout)
    elif cfg.student == 'scripted_mock':
        if not cfg.student_script:
            raise ConfigError('scripted student needs a script file')
        student = ScriptedStudent.load(cfg.student_script)

    return Backends(sim, student)
