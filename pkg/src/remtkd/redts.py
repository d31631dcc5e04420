"""Reinforced dynamic teacher selection.

Each teacher k owns a logistic policy p_k = sigmoid(W_k . F(s) + b_k) over a
state vector F(s) = [R(x); S(x); T_k(x)] of length 2d + 3. Actions are
sampled per batch, stored in an episode history and, every window of
batches, all stored steps are credited with one delayed reward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

P_CLAMP = 1e-6
REWARDS = ("reward1", "reward2", "reward3")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# --------------------------------------------------------------------------
# State


@torch.no_grad()
def repr_feature(model, images: torch.Tensor) -> np.ndarray:
    """Batch representation: D4 map, global average pool, batch mean."""
    if images.shape[0] == 0:
        raise ValueError("empty batch")
    return pooled_d4(model(images).d4).mean(axis=0)


def pooled_d4(d4: torch.Tensor) -> np.ndarray:
    """Per-sample global average pool of D4 -> (B, d) float64 array."""
    return d4.detach().mean(dim=(2, 3)).double().cpu().numpy()


def teacher_summary(seg, cls, edge) -> np.ndarray:
    """[max seg, cls, max edge], each batch-averaged -> length 3."""
    seg, edge, cls = (np.asarray(a, dtype=np.float64) for a in (seg, edge, cls))
    seg = seg.reshape(seg.shape[0], -1) if seg.ndim > 2 else seg.reshape(1, -1)
    edge = edge.reshape(edge.shape[0], -1) if edge.ndim > 2 else edge.reshape(1, -1)
    return np.array([seg.max(axis=1).mean(), cls.mean(), edge.max(axis=1).mean()])


def state_vector(r_feat, s_feat, t_feat) -> np.ndarray:
    r_feat, s_feat, t_feat = (np.asarray(v, dtype=np.float64).ravel() for v in (r_feat, s_feat, t_feat))
    if r_feat.shape != s_feat.shape:
        raise ValueError(f"R and S features differ in length: {r_feat.size} vs {s_feat.size}")
    if t_feat.size != 3:
        raise ValueError(f"teacher summary must have length 3, got {t_feat.size}")
    return np.concatenate([r_feat, s_feat, t_feat])


def state_dim(d: int) -> int:
    return 2 * d + 3


# --------------------------------------------------------------------------
# Policy


@dataclass
class PolicyParams:
    W: np.ndarray
    b: float = 0.0

    @classmethod
    def zeros(cls, d: int) -> "PolicyParams":
        return cls(W=np.zeros(state_dim(d)), b=0.0)

    def copy(self) -> "PolicyParams":
        return PolicyParams(W=self.W.copy(), b=float(self.b))


def _check_len(state, params):
    if state.shape[-1] != params.W.shape[0]:
        raise ValueError(f"state length {state.shape[-1]} != policy length {params.W.shape[0]}")


def policy_prob(state, params: PolicyParams) -> float:
    """Selection probability sigma(W . F + b)."""
    state = np.asarray(state, dtype=np.float64)
    _check_len(state, params)
    return float(sigmoid(state @ params.W + params.b))


def action_prob(p: float, action: int) -> float:
    """pi(s, a) = a p + (1 - a)(1 - p)."""
    return action * p + (1 - action) * (1.0 - p)


def grad_action_prob(state, params: PolicyParams, action: int):
    """Gradient of pi(s, a) w.r.t. (W, b): +-p(1-p) * (F, 1)."""
    p = policy_prob(state, params)
    g = p * (1.0 - p) * (1.0 if action == 1 else -1.0)
    return g * np.asarray(state, dtype=np.float64), g


def grad_log_action_prob(state, params: PolicyParams, action: int):
    """Gradient of log pi(s, a) w.r.t. (W, b): (a - p) * (F, 1)."""
    p = policy_prob(state, params)
    g = action - p
    return g * np.asarray(state, dtype=np.float64), g


@dataclass
class ActionSample:
    action: int
    prob_select: float

    @property
    def prob(self) -> float:
        return action_prob(self.prob_select, self.action)


def sample_action(p: float, rng: np.random.Generator) -> ActionSample:
    p = min(max(float(p), P_CLAMP), 1.0 - P_CLAMP)
    return ActionSample(action=int(rng.random() < p), prob_select=p)


# --------------------------------------------------------------------------
# Reward


@dataclass
class RewardConfig:
    variant: str = "reward3"
    gamma: float = 0.2

    def __post_init__(self):
        if self.variant not in REWARDS:
            raise ValueError(f"unknown reward {self.variant!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")


def compute_reward(cfg: RewardConfig, hard: float, soft: float, f1_seg: float, acc_cls: float) -> float:
    if cfg.variant == "reward1":
        return -hard
    if cfg.variant == "reward2":
        return -(hard + soft)
    return -cfg.gamma * (hard + soft) + (1.0 - cfg.gamma) * (f1_seg + acc_cls)


# --------------------------------------------------------------------------
# Episodes and updates


@dataclass
class Step:
    batch_index: int
    teacher: str
    state: np.ndarray
    sample: ActionSample


@dataclass
class EpisodeHistory:
    steps: list = field(default_factory=list)

    def add(self, batch_index, teacher, state, sample):
        self.steps.append(Step(batch_index, teacher, state, sample))

    def clear(self):
        self.steps.clear()

    def __len__(self):
        return len(self.steps)


def policy_update(history: EpisodeHistory, r: float, xi: float, policies: dict,
                  grad: str = "prob") -> dict:
    """One delayed ascent step: theta += xi * r * sum over stored steps of
    grad pi(s, a) (``grad="prob"``) or grad log pi(s, a) (``grad="logprob"``).

    Gradients are all taken at the pre-update parameters. ``policies`` maps
    teacher id -> PolicyParams and is updated in place; the history is
    cleared.
    """
    if not len(history):
        raise ValueError("policy update needs a non-empty history")
    grad_fn = {"prob": grad_action_prob, "logprob": grad_log_action_prob}[grad]
    acc = {}
    for step in history.steps:
        params = policies[step.teacher]
        gW, gb = grad_fn(step.state, params, step.sample.action)
        aW, ab = acc.get(step.teacher, (0.0, 0.0))
        acc[step.teacher] = (aW + gW, ab + gb)
    for teacher, (gW, gb) in acc.items():
        params = policies[teacher]
        params.W = params.W + xi * r * gW
        params.b = float(params.b + xi * r * gb)
    history.clear()
    return policies


def cosine_lr(base: float, t: int, t_max: int, eta_min: float = 0.0) -> float:
    if t_max <= 0:
        return base
    return eta_min + 0.5 * (base - eta_min) * (1.0 + math.cos(math.pi * min(t, t_max) / t_max))


class TeacherSelector:
    """Per-teacher policies plus the shared episode history.

    ``lr`` follows a cosine schedule over ``total_updates`` windows. With
    ``use_baseline`` a running mean of past window rewards is subtracted
    from each new reward.
    """

    def __init__(self, teachers, d: int, rng: np.random.Generator, lr: float = 3e-4,
                 total_updates: int = 0, grad: str = "prob", use_baseline: bool = False,
                 policies: dict | None = None):
        self.teachers = list(teachers)
        self.policies = policies if policies is not None else {k: PolicyParams.zeros(d) for k in self.teachers}
        self.rng = rng
        self.lr = lr
        self.total_updates = total_updates
        self.grad = grad
        self.use_baseline = use_baseline
        self.history = EpisodeHistory()
        self.updates = 0
        self._reward_sum = 0.0

    def select(self, batch_index: int, states: dict, force: int | None = None) -> dict:
        """Sample (or force) one action per teacher and record the steps."""
        actions = {}
        for k in self.teachers:
            p = policy_prob(states[k], self.policies[k])
            if force is None:
                sample = sample_action(p, self.rng)
            else:
                sample = ActionSample(action=int(force), prob_select=min(max(p, P_CLAMP), 1 - P_CLAMP))
            self.history.add(batch_index, k, states[k], sample)
            actions[k] = sample
        return actions

    def current_lr(self) -> float:
        return cosine_lr(self.lr, self.updates, self.total_updates)

    def update(self, reward: float) -> float:
        """Credit ``reward`` to every stored step, then clear. Returns the
        step size used."""
        xi = self.current_lr()
        r = reward
        if self.use_baseline and self.updates:
            r = reward - self._reward_sum / self.updates
        policy_update(self.history, r, xi, self.policies, self.grad)
        self._reward_sum += reward
        self.updates += 1
        return xi

    def probabilities(self, states: dict) -> dict:
        return {k: policy_prob(states[k], self.policies[k]) for k in self.teachers}


def run_bandit(payoffs: dict, windows: int = 500, xi: float = 0.01, seed: int = 0, d: int = 16,
               steps_per_window: int = 10, grad: str = "prob", n_eval: int = 1000) -> dict:
    """Synthetic selection problem with fixed per-teacher payoffs.

    States are uniform on [0, 1]^(2d+3). A window's reward is the mean over
    its steps of sum_k payoff_k * a_k. Returns the mean selection probability
    per teacher over ``n_eval`` fresh states after training.
    """
    rng = np.random.default_rng(seed)
    teachers = list(payoffs)
    dim = state_dim(d)
    sel = TeacherSelector(teachers, d, rng, lr=xi, total_updates=0, grad=grad)
    for w in range(windows):
        total = 0.0
        for t in range(steps_per_window):
            states = {k: rng.random(dim) for k in teachers}
            acts = sel.select(w * steps_per_window + t, states)
            total += sum(payoffs[k] * acts[k].action for k in teachers)
        sel.update(total / steps_per_window)
    probe = rng.random((n_eval, dim))
    return {k: float(np.mean(sigmoid(probe @ sel.policies[k].W + sel.policies[k].b))) for k in teachers}
