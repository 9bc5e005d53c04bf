from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import ConfigError, GroupTooSmall, InvalidGroup
from .models import RewardConfig


@dataclass(frozen=True)
class Rollout:
    response_text: str
    reward: float
    logprob_new: float | None = None
    logprob_old: float | None = None
    logprob_ref: float | None = None


@dataclass(frozen=True)
class RolloutGroup:
    instance_id: str
    rollouts: tuple[Rollout, ...]
    # Precomputed advantages; normalized from the rewards when absent
    advantages: tuple[float, ...] | None = None

    def rewards(self) -> list[float]:
        return [r.reward for r in self.rollouts]


def group_normalize(rewards: Sequence[float], eta: float = 1e-4) -> list[float]:
    """
    Group-relative advantages (r_i - mean) / (std + eta) with the population standard deviation

    [3, 1] with eta 1e-4 gives [0.99990..., -0.99990...]

    :param rewards: Rewards of the rollouts of one query
    :param eta: Denominator regularizer
    :raises GroupTooSmall: Fewer than two rewards
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise GroupTooSmall(f'Group normalization needs at least 2 rewards, got {r.size}')
    if not np.all(np.isfinite(r)):
        raise InvalidGroup('rewards must be finite')
    if eta < 0 or not math.isfinite(eta):
        raise ConfigError(f'eta must be a nonnegative number, got {eta}')

    centered = r - r.mean()
    denom = r.std() + eta
    if denom == 0:
        return [0.0] * r.size
    return (centered / denom).tolist()


def clipped_term(ratio: float, adv: float, epsilon: float) -> float:
    """
    Pessimistic PPO term min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)
    """
    return min(ratio * adv, min(max(ratio, 1 - epsilon), 1 + epsilon) * adv)


def group_advantages(group: RolloutGroup, cfg: RewardConfig) -> list[float]:
    if group.advantages is not None:
        if len(group.advantages) != len(group.rollouts):
            raise InvalidGroup(f'{len(group.advantages)} advantages for {len(group.rollouts)} rollouts')
        return list(group.advantages)
    return group_normalize(group.rewards(), cfg.eta)


def grpo_objective(group: RolloutGroup, cfg: RewardConfig) -> float:
    """
    Clipped GRPO surrogate of one group, minus the KL penalty when kl_coef > 0

    Ratios are sequence-level: exp(logprob_new - logprob_old) of the whole response.

    :raises InvalidGroup: A rollout lacks logprob_new/logprob_old, or logprob_ref when the KL
        penalty is on
    """
    if not group.rollouts:
        raise InvalidGroup(f'group {group.instance_id!r} is empty')
    if any(r.logprob_new is None or r.logprob_old is None for r in group.rollouts):
        raise InvalidGroup(f'group {group.instance_id!r} is missing log-probabilities')

    adv = group_advantages(group, cfg)
    new = np.array([r.logprob_new for r in group.rollouts], dtype=np.float64)
    old = np.array([r.logprob_old for r in group.rollouts], dtype=np.float64)
    ratio = np.exp(new - old)
    obj = float(np.mean([clipped_term(float(p), a, cfg.epsilon_clip) for p, a in zip(ratio, adv)]))

    refs = [r.logprob_ref for r in group.rollouts]
    if cfg.kl_coef > 0 and any(x is not None for x in refs):
        if any(x is None for x in refs):
            raise InvalidGroup(f'group {group.instance_id!r} has logprob_ref on only some rollouts')
        obj -= cfg.kl_coef * float(np.mean(new - np.array(refs, dtype=np.float64)))
    return obj


def categorical_log_probs(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    return log_softmax(np.asarray(logits, dtype=np.float64) / temperature)


def categorical_objective(logits: np.ndarray, samples: Sequence[int], logp_old: Sequence[float],
                          advantages: Sequence[float], cfg: RewardConfig, temperature: float = 1.0,
                          logp_ref: Sequence[float] | None = None) -> float:
    """
    grpo_objective of a categorical policy softmax(logits / T) whose rollouts are the sampled
    candidate indices
    """
    logp = categorical_log_probs(logits, temperature)
    rollouts = tuple(Rollout('', 0.0, float(logp[c]), float(logp_old[k]),
                             None if logp_ref is None else float(logp_ref[k]))
                     for k, c in enumerate(samples))
    return grpo_objective(RolloutGroup('', rollouts, tuple(advantages)), cfg)


def categorical_gradient(logits: np.ndarray, samples: Sequence[int], logp_old: Sequence[float],
                         advantages: Sequence[float], cfg: RewardConfig, temperature: float = 1.0,
                         logp_ref: Sequence[float] | None = None) -> np.ndarray:
    """
    Exact gradient of categorical_objective with respect to the logits

    d log pi(c) / d logits = (e_c - pi) / T. A sample contributes A * ratio * that term while its
    unclipped branch is the minimum, and nothing once the clip binds.
    """
    logits = np.asarray(logits, dtype=np.float64)
    logp = categorical_log_probs(logits, temperature)
    pi = softmax(logits / temperature)
    eps = cfg.epsilon_clip
    n = len(samples)

    grad = np.zeros_like(logits)
    for k, c in enumerate(samples):
        score = -pi.copy()
        score[c] += 1
        score /= temperature

        a = advantages[k]
        ratio = math.exp(logp[c] - logp_old[k])
        if ratio * a <= min(max(ratio, 1 - eps), 1 + eps) * a:
            grad += a * ratio * score / n
        if cfg.kl_coef > 0 and logp_ref is not None:
            grad -= cfg.kl_coef * score / n
    return grad
