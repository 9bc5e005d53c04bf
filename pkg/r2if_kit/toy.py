"""
Desk-scale GRPO trainer over a categorical policy of pre-authored responses.

Each toy instance comes with a fixed candidate pool. The policy is a softmax over the pool, so a
"rollout" is a candidate index and the exact policy gradient is available in closed form.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from .backends import Backends, ScriptedSimilarity, ScriptedStudent
from .domain import ActionList, GtCall, GtDocument, GtParam, Instance, ParamSchema, ToolCall, ToolSchema
from .errors import ConfigError
from .grpo import categorical_gradient, categorical_log_probs, categorical_objective, group_normalize
from .log import log
from .models import RewardConfig
from .reward import composite_reward
from .serializer import canonical_json
from .types import RewardMode

CANDIDATE_KINDS = ('grounded', 'ungrounded', 'wrong', 'malformed')
REWARD_MODES = ('full', 'binary_only', 'wo_cer', 'wo_smv')

# Scripted similarity of a grounded analysis to the annotation it paraphrases
SIM_SPEC = 0.9
SIM_MOD = 0.85
TOY_BASELINE = 0.4


@dataclass(frozen=True)
class Candidate:
    kind: str
    response: str


@dataclass
class ToyEnvironment:
    instances: list[Instance]
    candidates: dict[str, list[Candidate]]
    seed: int = 7
    backends: Backends | None = None

    def validate(self):
        """
        :raises ConfigError: An instance has no candidates, no correct-grounded candidate, or a
            candidate of unknown kind
        """
        if not self.instances:
            raise ConfigError('toy environment has no instances')
        if self.backends is None:
            raise ConfigError('toy environment has no backends')
        for inst in self.instances:
            cands = self.candidates.get(inst.id)
            if not cands:
                raise ConfigError(f'instance {inst.id!r} has no candidates')
            kinds = {c.kind for c in cands}
            if not kinds <= set(CANDIDATE_KINDS):
                raise ConfigError(f'instance {inst.id!r} has unknown candidate kinds {kinds - set(CANDIDATE_KINDS)}')
            if 'grounded' not in kinds:
                raise ConfigError(f'instance {inst.id!r} has no correct-grounded candidate')

    def kind_mask(self, instance_id: str, kind: str) -> np.ndarray:
        return np.array([c.kind == kind for c in self.candidates[instance_id]], dtype=np.float64)


@dataclass
class SoftmaxPolicy:
    logits: dict[str, np.ndarray]
    learning_rate: float = 1.0
    temperature: float = 1.0

    @classmethod
    def uniform(cls, env: ToyEnvironment, learning_rate: float = 1.0, temperature: float = 1.0) -> SoftmaxPolicy:
        return cls({i.id: np.zeros(len(env.candidates[i.id])) for i in env.instances}, learning_rate, temperature)

    def probs(self, instance_id: str) -> np.ndarray:
        return softmax(self.logits[instance_id] / self.temperature)

    def log_probs(self, instance_id: str) -> np.ndarray:
        return categorical_log_probs(self.logits[instance_id], self.temperature)

    def sample(self, instance_id: str, n: int, rng: np.random.Generator) -> np.ndarray:
        p = self.probs(instance_id)
        return rng.choice(len(p), size=n, p=p)

    def step(self, instance_id: str, grad: np.ndarray):
        self.logits[instance_id] = self.logits[instance_id] + self.learning_rate * grad


@dataclass(frozen=True)
class CurvePoint:
    iteration: int
    expected_correctness: float
    expected_smv: float
    p_grounded: float
    p_ungrounded: float
    objective: float


CSV_COLUMNS = ('iteration', 'expected_correctness', 'expected_smv', 'p_grounded', 'p_ungrounded', 'objective')


@dataclass
class TrainReport:
    mode: str
    seed: int
    iterations: int
    group_size: int
    learning_rate: float
    curve: list[CurvePoint] = field(default_factory=list)
    final_probs: dict[str, list[float]] = field(default_factory=dict)

    @property
    def final(self) -> CurvePoint:
        return self.curve[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator='\n')
        w.writerow(CSV_COLUMNS)
        for p in self.curve:
            w.writerow([p.iteration] + [f'{getattr(p, c):.6f}' for c in CSV_COLUMNS[1:]])
        return buf.getvalue()

    def to_json(self) -> str:
        return canonical_json(self, digits=6)


def reward_switches(mode: RewardMode) -> tuple[bool, bool]:
    """
    (enable_cer, enable_smv) for a reward mode
    """
    if mode not in REWARD_MODES:
        raise ConfigError(f'unknown reward mode {mode!r}, expected one of {REWARD_MODES}')
    return mode in ('full', 'wo_smv'), mode in ('full', 'wo_cer')


def toy_train(env: ToyEnvironment, cfg: RewardConfig = RewardConfig(), mode: RewardMode = 'full',
              iterations: int = 200, learning_rate: float = 1.0, temperature: float = 1.0,
              ppo_epochs: int = 2) -> TrainReport:
    """
    Train the softmax policy with GRPO on the environment's composite rewards

    Every iteration samples cfg.group_size candidates per instance, normalizes their rewards within
    the group, and takes ppo_epochs clipped-objective gradient steps against the pre-update policy.

    :param mode: Which reward components drive training; metrics always use the full reward
    :return: Learning curve, with row 0 being the untrained policy
    """
    env.validate()
    if cfg.group_size < 2:
        raise ConfigError('toy training needs group_size >= 2')
    if iterations < 0 or ppo_epochs < 1:
        raise ConfigError('iterations must be nonnegative and ppo_epochs positive')

    enable_cer, enable_smv = reward_switches(mode)
    rewards, correct, smv = {}, {}, {}
    for inst in env.instances:
        full = [composite_reward(c.response, inst, env.backends, cfg) for c in env.candidates[inst.id]]
        train = [composite_reward(c.response, inst, env.backends, cfg, enable_cer, enable_smv).total
                 for c in env.candidates[inst.id]]
        rewards[inst.id] = np.array(train)
        correct[inst.id] = np.array([b.r_binary for b in full], dtype=np.float64)
        smv[inst.id] = np.array([b.r_smv for b in full])
        log.debug(f'{inst.id}: candidate rewards {np.round(rewards[inst.id], 3).tolist()}')

    rng = np.random.default_rng(env.seed)
    policy = SoftmaxPolicy.uniform(env, learning_rate, temperature)
    ref_logp = {i: policy.log_probs(i) for i in policy.logits}

    def point(it: int, objective: float) -> CurvePoint:
        ids = [i.id for i in env.instances]
        probs = {i: policy.probs(i) for i in ids}
        return CurvePoint(
            it,
            float(np.mean([probs[i] @ correct[i] for i in ids])),
            float(np.mean([probs[i] @ smv[i] for i in ids])),
            float(np.mean([probs[i] @ env.kind_mask(i, 'grounded') for i in ids])),
            float(np.mean([probs[i] @ env.kind_mask(i, 'ungrounded') for i in ids])),
            objective,
        )

    report = TrainReport(mode, env.seed, iterations, cfg.group_size, learning_rate, [point(0, 0.0)])
    for it in range(1, iterations + 1):
        objectives = []
        for inst in env.instances:
            iid = inst.id
            samples = policy.sample(iid, cfg.group_size, rng)
            adv = group_normalize(rewards[iid][samples], cfg.eta)
            logp_old = policy.log_probs(iid)[samples]
            logp_ref = ref_logp[iid][samples] if cfg.kl_coef > 0 else None
            for _ in range(ppo_epochs):
                policy.step(iid, categorical_gradient(policy.logits[iid], samples, logp_old, adv, cfg,
                                                      temperature, logp_ref))
            objectives.append(categorical_objective(policy.logits[iid], samples, logp_old, adv, cfg,
                                                    temperature, logp_ref))
        report.curve.append(point(it, float(np.mean(objectives))))

    report.final_probs = {i: policy.probs(i).tolist() for i in policy.logits}
    log.info(f'toy-train {mode}: expected correctness {report.curve[0].expected_correctness:.3f} -> '
             f'{report.final.expected_correctness:.3f} in {iterations} iterations')
    return report


# (id, query, tool name, tool description, {param: (type, value, spec, mod, three wrong values)})
TOY_TASKS = [
    ('toy-weather', "What's the weather like in San Francisco right now? Give it to me in Celsius.",
     'get_current_weather', 'Get the current weather in a given location', {
         'location': ('string', 'San Francisco, CA', 'city name followed by a two-letter state abbreviation',
                      'append the state abbreviation CA to San Francisco', ['San Francisco', 'SF', 'San Francisco, California']),
         'unit': ('enum', 'celsius', 'one of celsius or fahrenheit in lowercase',
                  'lowercase the requested Celsius', ['Celsius', 'fahrenheit', 'C']),
     }),
    ('toy-flight', 'Book me a flight from New York JFK to Los Angeles on July 4th, 2024.',
     'book_flight', 'Book a one-way flight', {
         'origin': ('string', 'JFK', 'three-letter IATA airport code', 'keep the airport code JFK from the question',
                    ['New York', 'NYC', 'JFK Airport']),
         'destination': ('string', 'LAX', 'three-letter IATA airport code', 'map Los Angeles to its airport LAX',
                         ['Los Angeles', 'LA', 'LAX Airport']),
         'date': ('string', '2024-07-04', 'date in YYYY-MM-DD format', 'convert July 4th 2024 to 2024-07-04',
                  ['07/04/2024', 'July 4th, 2024', '2024-7-4']),
     }),
    ('toy-currency', 'How many US dollars do I get for 250 euros?',
     'convert_currency', 'Convert an amount between two currencies', {
         'amount': ('number', 250, 'plain number without a currency symbol', 'no modify', ['250 euros', 25, '250']),
         'from_currency': ('string', 'EUR', 'ISO 4217 currency code', 'map euros to EUR', ['euro', 'EU', 'EURO']),
         'to_currency': ('string', 'USD', 'ISO 4217 currency code', 'map US dollars to USD', ['US dollars', 'US', 'dollar']),
     }),
    ('toy-reminder', 'Remind me to call mom at 6:30 pm.',
     'set_reminder', 'Create a reminder for later today', {
         'time': ('string', '18:30', 'time in 24-hour HH:MM format', 'convert 6:30 pm to 18:30',
                  ['6:30 pm', '06:30', '18.30']),
         'message': ('string', 'call mom', 'no spec', 'no modify', ['Call mom', 'mom', 'call Mom']),
     }),
    ('toy-restaurants', 'Find me five Italian places in Boston.',
     'find_restaurants', 'Search restaurants by cuisine and city', {
         'cuisine': ('string', 'italian', 'lowercase cuisine name', 'lowercase Italian to italian',
                     ['Italian', 'pizza', 'ITALIAN']),
         'city': ('string', 'Boston, MA', 'city name followed by a two-letter state abbreviation',
                  'append the state abbreviation MA to Boston', ['Boston', 'boston', 'Boston, Massachusetts']),
         'max_results': ('integer', 5, 'integer count of results', 'convert the word five to 5', ['five', 10, '5']),
     }),
]

N_WRONG = 10


def _tool_json(calls: list[ToolCall] | ActionList) -> str:
    return json.dumps([c.to_json() for c in calls], ensure_ascii=False)


def _analysis(name: str, lines: dict[str, str]) -> str:
    return f'For #{name}#:\n' + '\n'.join(f'- {p}: {s}' for p, s in lines.items())


def _wrong_calls(name: str, gold: dict, params: dict) -> list[ToolCall]:
    out = []
    for p, (*_, wrong) in params.items():
        out += [ToolCall(name, {**gold, p: w}) for w in wrong]
    out += [ToolCall(name, {k: v for k, v in gold.items() if k != p}) for p in gold]
    out += [ToolCall('search_web', {'query': name.replace('_', ' ')}), ToolCall(name, {**gold, 'verbose': True})]
    if len(out) < N_WRONG:
        raise ConfigError(f'{name}: only {len(out)} wrong-call variants')
    return out[:N_WRONG]


def _build_task(task: tuple) -> tuple[Instance, list[Candidate], dict, dict]:
    iid, query, name, desc, params = task
    gold = {p: v[1] for p, v in params.items()}
    gold_call = ToolCall(name, gold)
    schema = {}
    for p, (t, *_) in params.items():
        enum = ('celsius', 'fahrenheit') if t == 'enum' else None
        schema[p] = ParamSchema(t, f'The {p.replace("_", " ")}', enum, required=True)
    tool = ToolSchema(name, desc, schema)
    distractor = ToolSchema('search_web', 'Search the web', {'query': ParamSchema('string', 'Search terms', required=True)})
    inst = Instance(iid, 'simple', query, (tool, distractor), ActionList((gold_call,)),
                    GtDocument(f'The question maps directly onto {name}.',
                               (GtCall(name, {p: GtParam(v[2], v[3]) for p, v in params.items()}),)),
                    baseline_success_rate=TOY_BASELINE)

    step1 = f'Step1: The question asks for {desc.lower()}, so I choose #{name}#.\nStep2:\n'
    sims = {}
    grounded = []
    for variant in range(2):
        lines = {}
        for p, (_, value, spec, mod, _) in params.items():
            gp = GtParam(spec, mod)
            if not gp.has_spec and not gp.has_mod:
                lines[p] = f'use {json.dumps(value)} as given in the question'
            elif variant == 0:
                lines[p] = 'needs ' + '; '.join(s for s, ok in ((spec, gp.has_spec), (mod, gp.has_mod)) if ok)
            else:
                lines[p] = 'so ' + ', giving '.join(s for s, ok in ((mod, gp.has_mod), (spec, gp.has_spec)) if ok)
            if gp.has_spec:
                sims[(lines[p], spec)] = SIM_SPEC
            if gp.has_mod:
                sims[(lines[p], mod)] = SIM_MOD
        grounded.append(step1 + _analysis(name, lines))

    ungrounded = [f'Step1: I will call #{name}#.',
                  step1 + _analysis(name, {p: 'taken from the question' for p in params})]

    wrong_calls = _wrong_calls(name, gold, params)
    wrong = [(f'Step1: I will call #{c.name}#.\nStep2:\n'
              + _analysis(c.name, {p: json.dumps(v) for p, v in c.arguments.items()}), c) for c in wrong_calls]

    ok = _tool_json([gold_call])
    bad = _tool_json([wrong_calls[0]])
    r = grounded[0]
    malformed = [
        f'<reason>{r}</reason>',
        f'<tool>{ok[:-2]}</tool>\n<reason>{r}</reason>',
        f'<reason>{r}</reason>\n<reason>{r}</reason>\n<tool>{ok[:-3]}</tool>',
        f'<reason>{r}</reason>\n<tool>{ok[:-2]}</tool>\nHope this helps!',
        f'<tool>{ok[:-1]}',
        f'<reason>{r}</reason>\n<tool>{ok}',
    ]

    cands = ([Candidate('grounded', f'<reason>{g}</reason>\n<tool>{ok}</tool>') for g in grounded]
             + [Candidate('ungrounded', f'<reason>{u}</reason>\n<tool>{ok}</tool>') for u in ungrounded]
             + [Candidate('wrong', f'<reason>{w}</reason>\n<tool>{_tool_json([c])}</tool>') for w, c in wrong]
             + [Candidate('malformed', m) for m in malformed])

    script = {(iid, g): [ok + '</tool>'] for g in grounded}
    script.update({(iid, u): [ok + '</tool>'] + [bad + '</tool>'] * 4 for u in ungrounded})
    script[(iid, '')] = [ok + '</tool>'] * 2 + [bad + '</tool>'] * 3
    script[(iid, None)] = [bad + '</tool>']
    return inst, cands, script, sims


def default_environment(seed: int = 7) -> ToyEnvironment:
    """
    Five single-call instances with twenty candidates each: two correct and grounded, two correct
    but ungrounded, ten wrong calls and six malformed responses. The scripted student always
    succeeds after grounded reasoning, succeeds 1 in 5 after ungrounded reasoning, and 2 in 5 with
    no reasoning at all.
    """
    instances, candidates, script, sims = [], {}, {}, {}
    for task in TOY_TASKS:
        inst, cands, s, t = _build_task(task)
        instances.append(inst)
        candidates[inst.id] = cands
        script.update(s)
        sims.update(t)
    backends = Backends(ScriptedSimilarity(sims), ScriptedStudent.from_reasons(script))
    env = ToyEnvironment(instances, candidates, seed, backends)
    env.validate()
    return env
