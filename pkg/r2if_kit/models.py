from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ImportError:
    import tomli as tomllib

from .errors import ConfigError
from .serializer import from_dict
from .types import AceRollout, SimilarityKind, StudentKind


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 0.4
    top_p: float = 1.0
    k: int = 5
    name: str = 'C0'

    def __post_init__(self):
        if not (isinstance(self.k, int) and self.k >= 1):
            raise ConfigError(f'CER sample count must be a positive integer, got {self.k!r}')
        if not 0 < self.top_p <= 1:
            raise ConfigError(f'top_p must be in (0, 1], got {self.top_p}')
        if self.temperature < 0:
            raise ConfigError(f'temperature must be nonnegative, got {self.temperature}')


# Reference sampling configurations for the CER ranking-stability analysis, C0 first
ROBUSTNESS_CONFIGS = [
    SamplingConfig(0.4, 1.0, 5, 'C0'),
    SamplingConfig(0.4, 0.9, 5, 'C1'),
    SamplingConfig(0.7, 1.0, 5, 'C2'),
    SamplingConfig(0.7, 0.9, 5, 'C3'),
    SamplingConfig(0.4, 1.0, 10, 'C4'),
]


@dataclass(frozen=True)
class RewardConfig:
    tau: float = 0.7
    binary_weight: float = 3.0
    eta: float = 1e-4
    epsilon_clip: float = 0.2
    kl_coef: float = 0.0
    cer_samples: int = 5
    cer_temperature: float = 0.4
    cer_top_p: float = 1.0
    smv_renormalize: bool = True
    order_sensitive: bool = False
    cer_on_invalid: bool = False
    ace_rollout: AceRollout = 'first'
    group_size: int = 5

    def __post_init__(self):
        self.validate()

    def validate(self):
        """
        Check every field against its admissible range

        :raises ConfigError: A field is out of range
        """
        def finite(name: str) -> float:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f'{name} must be a finite number, got {v!r}')
            return v

        if not 0 < finite('tau') <= 1:
            raise ConfigError(f'tau must be in (0, 1], got {self.tau}')
        if finite('binary_weight') < 0:
            raise ConfigError(f'binary_weight must be nonnegative, got {self.binary_weight}')
        if finite('eta') < 0:
            raise ConfigError(f'eta must be nonnegative, got {self.eta}')
        if not 0 < finite('epsilon_clip') < 1:
            raise ConfigError(f'epsilon_clip must be in (0, 1), got {self.epsilon_clip}')
        if finite('kl_coef') < 0:
            raise ConfigError(f'kl_coef must be nonnegative, got {self.kl_coef}')
        if finite('cer_temperature') < 0:
            raise ConfigError(f'cer_temperature must be nonnegative, got {self.cer_temperature}')
        if not 0 < finite('cer_top_p') <= 1:
            raise ConfigError(f'cer_top_p must be in (0, 1], got {self.cer_top_p}')
        if isinstance(self.cer_samples, bool) or not isinstance(self.cer_samples, int) or self.cer_samples < 1:
            raise ConfigError(f'cer_samples must be a positive integer, got {self.cer_samples!r}')
        if isinstance(self.group_size, bool) or not isinstance(self.group_size, int) or self.group_size < 1:
            raise ConfigError(f'group_size must be a positive integer, got {self.group_size!r}')
        if self.ace_rollout not in ('first', 'all'):
            raise ConfigError(f'ace_rollout must be first or all, got {self.ace_rollout!r}')

    def sampling(self) -> SamplingConfig:
        return SamplingConfig(self.cer_temperature, self.cer_top_p, self.cer_samples)

    def with_sampling(self, s: SamplingConfig) -> RewardConfig:
        return self.replace(cer_temperature=s.temperature, cer_top_p=s.top_p, cer_samples=s.k)

    def replace(self, **changes) -> RewardConfig:
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> RewardConfig:
        return from_dict(cls, d)


@dataclass(frozen=True)
class BackendConfig:
    student: StudentKind | None = None
    student_endpoint: str | None = None
    student_model: str = 'student'
    student_script: str | None = None
    similarity: SimilarityKind = 'lexical'
    embed_endpoint: str | None = None
    embed_model: str = 'embedding'
    similarity_script: str | None = None
    max_in_flight: int = 8
    timeout: float = 60.0

    def __post_init__(self):
        if self.similarity not in ('lexical', 'embedding', 'mock'):
            raise ConfigError(f'unknown similarity backend {self.similarity!r}')
        if self.student not in (None, 'http_chat', 'scripted_mock'):
            raise ConfigError(f'unknown student backend {self.student!r}')
        if self.max_in_flight < 1:
            raise ConfigError('max_in_flight must be positive')


@dataclass(frozen=True)
class ServiceConfig:
    host: str = '127.0.0.1'
    port: int = 8399
    reward: RewardConfig = field(default_factory=RewardConfig)
    backends: BackendConfig = field(default_factory=BackendConfig)
    max_body_bytes: int = 1 << 20
    max_responses: int = 64
    concurrency: int = 8

    def __post_init__(self):
        for k in ('max_body_bytes', 'max_responses', 'concurrency', 'port'):
            if getattr(self, k) < 1:
                raise ConfigError(f'{k} must be positive')

    @classmethod
    def from_dict(cls, d: dict) -> ServiceConfig:
        """
        Build from the TOML layout: [server], [reward], [student] and [similarity] tables
        """
        server = dict(d.get('server', {}))
        student = d.get('student', {})
        sim = d.get('similarity', {})
        backends = BackendConfig(
            student=student.get('kind'),
            student_endpoint=student.get('endpoint'),
            student_model=student.get('model', 'student'),
            student_script=student.get('script'),
            similarity=sim.get('kind', 'lexical'),
            embed_endpoint=sim.get('endpoint'),
            embed_model=sim.get('model', 'embedding'),
            similarity_script=sim.get('script'),
            max_in_flight=student.get('max_in_flight', 8),
            timeout=student.get('timeout', 60.0),
        )
        server['reward'] = RewardConfig.from_dict(d.get('reward', {}))
        server['backends'] = backends
        return from_dict(cls, server)


def load_config(path: str | Path) -> ServiceConfig:
    """
    Load the TOML configuration file

    :param path: Config path
    :return: Service config (reward and backend settings included)
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f'Config file {path} does not exist')
    try:
        with open(path, 'rb') as f:
            return ServiceConfig.from_dict(tomllib.load(f))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f'Cannot parse {path}: {e}')
    except TypeError as e:
        raise ConfigError(f'Bad value in {path}: {e}')
