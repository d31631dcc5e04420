"""Teacher pretraining, policy warmup and student distillation."""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from types import SimpleNamespace

import numpy as np
import torch

from . import cuenet, losses, redts
from .data import ForgeryData
from .evalkit import pixel_metrics
from .losses import LossWeights
from .redts import RewardConfig, TeacherSelector

log = logging.getLogger(__name__)

TEACHER_TYPES = ("copy_move", "splicing", "inpainting")
STRATEGIES = ("baseline", "single", "u_ensemble", "redts")


@dataclass
class TrainerConfig:
    epochs: int = 8
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.01
    update_interval: int | None = None      # batches per policy window; 10 * B if None
    strategy: str = "redts"
    single_teacher: str | None = None
    reward: RewardConfig = field(default_factory=RewardConfig)
    soft_variant: str = "soft3"
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    model: cuenet.CueNetConfig = field(default_factory=cuenet.CueNetConfig)
    policy_lr: float = 3e-4
    policy_grad: str = "prob"
    policy_baseline: bool = False
    warmup_windows: int = 2

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.update_interval is None:
            self.update_interval = 10 * self.batch_size
        if self.update_interval < 1:
            raise ValueError("update_interval must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "single" and self.single_teacher not in TEACHER_TYPES:
            raise ValueError(f"single strategy needs a teacher in {TEACHER_TYPES}")
        if self.soft_variant not in losses.SOFT_VARIANTS:
            raise ValueError(f"unknown soft variant {self.soft_variant!r}")
        if self.policy_grad not in ("prob", "logprob"):
            raise ValueError(f"unknown policy gradient {self.policy_grad!r}")

    @property
    def d(self) -> int:
        return self.model.d

    def streams(self):
        """Independent generators: data order, parameter init, actions."""
        order, init, actions = np.random.SeedSequence(self.seed).spawn(3)
        return (np.random.default_rng(order), int(init.generate_state(1)[0]),
                np.random.default_rng(actions))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d


# --------------------------------------------------------------------------
# Frozen-model caches


@dataclass
class FrozenOutputs:
    """Per-sample outputs of a frozen model on a fixed dataset."""
    seg: torch.Tensor    # (N, 1, H, W)
    cls: torch.Tensor    # (N,)
    edge: torch.Tensor   # (N, 1, H, W)
    pooled_d4: np.ndarray  # (N, d)

    def batch(self, idx):
        return SimpleNamespace(seg=self.seg[idx], cls=self.cls[idx], edge=self.edge[idx])


@torch.no_grad()
def frozen_outputs(model, data: ForgeryData, batch_size: int = 64) -> FrozenOutputs:
    model.eval()
    dtype = next(model.parameters()).dtype
    segs, clss, edges, pooled = [], [], [], []
    for i in range(0, len(data), batch_size):
        out = model(cuenet.to_tensor(data.images[i:i + batch_size], dtype))
        segs.append(out.seg)
        clss.append(out.cls)
        edges.append(out.edge)
        pooled.append(redts.pooled_d4(out.d4))
    return FrozenOutputs(torch.cat(segs), torch.cat(clss), torch.cat(edges), np.concatenate(pooled))


@dataclass
class TeacherBundle:
    models: dict                      # type tag -> CueNet
    frozen: bool = True

    def __post_init__(self):
        if len(set(self.models)) != len(self.models):
            raise ValueError("teacher type tags must be distinct")
        for m in self.models.values():
            m.requires_grad_(False)

    def hashes(self) -> dict:
        return {k: cuenet.params_hash(m) for k, m in self.models.items()}


# --------------------------------------------------------------------------
# Training loop


@dataclass
class TrainResult:
    model: cuenet.CueNet
    policies: dict | None
    log: list


def _targets(data: ForgeryData, idx, dtype):
    x = cuenet.to_tensor(data.images[idx], dtype)
    y_s = torch.from_numpy(data.masks[idx]).to(dtype).unsqueeze(1)
    y_e = torch.from_numpy(data.edges[idx]).to(dtype).unsqueeze(1)
    y_c = torch.from_numpy(data.labels[idx]).to(dtype)
    return x, y_s, y_c, y_e


def _batch_stats(out, y_s, y_c) -> tuple[float, float]:
    seg = out.seg.detach()[:, 0].numpy()
    masks = y_s[:, 0].numpy()
    f1 = float(np.mean([pixel_metrics(p, m)[0] for p, m in zip(seg, masks)]))
    acc = float(np.mean((out.cls.detach().numpy() >= 0.5) == (y_c.numpy() >= 0.5)))
    return f1, acc


def _mean_outputs(outs):
    return SimpleNamespace(seg=torch.stack([o.seg for o in outs]).mean(0),
                           cls=torch.stack([o.cls for o in outs]).mean(0))


def train(data: ForgeryData, cfg: TrainerConfig, *, teachers: dict | None = None,
          teacher_cache: dict | None = None, reference: FrozenOutputs | None = None,
          policies: dict | None = None, init_model: cuenet.CueNet | None = None,
          force_action: int | None = None, max_batches: int | None = None,
          log_fh=None) -> TrainResult:
    """Train a Cue-Net student on ``data`` under ``cfg.strategy``.

    ``teacher_cache`` maps teacher tag -> FrozenOutputs on ``data`` (computed
    from ``teachers`` when omitted). ``reference`` holds the frozen
    random-init model's pooled D4 per sample. ``force_action`` overrides
    sampled actions (policy warmup). ``max_batches`` stops early.
    """
    order_rng, init_seed, action_rng = cfg.streams()
    model = copy.deepcopy(init_model) if init_model is not None else cuenet.build(cfg.model, init_seed)
    dtype = next(model.parameters()).dtype
    model.requires_grad_(True)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    w = cfg.weights

    needs_teachers = cfg.strategy != "baseline"
    if needs_teachers and teacher_cache is None:
        if teachers is None:
            raise ValueError(f"strategy {cfg.strategy!r} needs teachers")
        teacher_cache = {k: frozen_outputs(m, data) for k, m in teachers.items()}
    if needs_teachers:
        wanted = [cfg.single_teacher] if cfg.strategy == "single" else list(TEACHER_TYPES)
        missing = [k for k in wanted if k not in teacher_cache]
        if missing:
            raise ValueError(f"missing teachers {missing}")

    n = len(data)
    batches_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_batches = cfg.epochs * batches_per_epoch
    if max_batches is not None:
        total_batches = min(total_batches, max_batches)

    selector = None
    if cfg.strategy == "redts":
        if reference is None:
            raise ValueError("redts needs reference-model features")
        selector = TeacherSelector(
            TEACHER_TYPES, cfg.d, action_rng, lr=cfg.policy_lr,
            total_updates=max(total_batches // cfg.update_interval, 1),
            grad=cfg.policy_grad, use_baseline=cfg.policy_baseline,
            policies={k: p.copy() for k, p in policies.items()} if policies else None,
        )
    window = {"hard": 0.0, "soft": 0.0, "f1": 0.0, "acc": 0.0, "n": 0}
    records = []

    def emit(rec):
        records.append(rec)
        if log_fh is not None:
            log_fh.write(json.dumps(rec) + "\n")

    step = 0
    model.train()
    for epoch in range(cfg.epochs):
        if step >= total_batches:
            break
        perm = order_rng.permutation(n)
        for b in range(batches_per_epoch):
            if step >= total_batches:
                break
            idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            x, y_s, y_c, y_e = _targets(data, idx, dtype)
            out = model(x)
            bd = losses.loss_hard(out, y_s, y_c, y_e, w)

            selected, actions, probs = [], {}, {}
            if cfg.strategy == "single":
                selected = [cfg.single_teacher]
            elif cfg.strategy == "u_ensemble":
                selected = list(TEACHER_TYPES)
            elif cfg.strategy == "redts":
                r_feat = reference.pooled_d4[idx].mean(axis=0)
                s_feat = redts.pooled_d4(out.d4).mean(axis=0)
                states = {}
                for k in TEACHER_TYPES:
                    t = teacher_cache[k].batch(idx)
                    states[k] = redts.state_vector(r_feat, s_feat, redts.teacher_summary(
                        t.seg.numpy(), t.cls.numpy(), t.edge.numpy()))
                samples = selector.select(step, states, force=force_action)
                actions = {k: s.action for k, s in samples.items()}
                probs = {k: s.prob_select for k, s in samples.items()}
                selected = [k for k in TEACHER_TYPES if actions[k]]

            if cfg.strategy == "u_ensemble":
                avg = _mean_outputs([teacher_cache[k].batch(idx) for k in selected])
                soft = [losses.loss_soft(out, avg, cfg.soft_variant, w.lambda0_s)]
                bd.soft_per_teacher = {"ensemble": soft[0]}
            else:
                soft = [losses.loss_soft(out, teacher_cache[k].batch(idx), cfg.soft_variant, w.lambda0_s)
                        for k in selected]
                bd.soft_per_teacher = dict(zip(selected, soft))
            bd.total = losses.total_loss(bd.hard, soft, w, n_selected=len(selected))

            opt.zero_grad(set_to_none=True)
            bd.total.backward()
            opt.step()

            rec = {"epoch": epoch, "batch": step, "samples": idx.tolist(), **bd.scalars()}
            if selector is not None:
                rec["actions"] = actions
                rec["probs"] = probs
                f1, acc = _batch_stats(out, y_s, y_c)
                window["hard"] += float(bd.hard.detach())
                window["soft"] += float(sum(soft).detach()) if soft else 0.0
                window["f1"] += f1
                window["acc"] += acc
                window["n"] += 1
                if (step + 1) % cfg.update_interval == 0:
                    m = window["n"]
                    reward = redts.compute_reward(cfg.reward, window["hard"] / m, window["soft"] / m,
                                                  window["f1"] / m, window["acc"] / m)
                    xi = selector.update(reward)
                    rec["reward"] = reward
                    rec["policy_lr"] = xi
                    window = dict.fromkeys(window, 0.0)
                    window["n"] = 0
            emit(rec)
            step += 1
        if records:
            log.debug("epoch %d loss %.4f", epoch, records[-1]["total"])
    if selector is not None:
        selector.history.clear()
    model.eval()
    return TrainResult(model=model, policies=selector.policies if selector else None, log=records)


# --------------------------------------------------------------------------
# Stages


def pretrain_teacher(forgery_type: str, data: ForgeryData, cfg: TrainerConfig, log_fh=None) -> TrainResult:
    """Train a single-type teacher with the hard loss only."""
    if forgery_type not in TEACHER_TYPES:
        raise ValueError(f"unknown teacher type {forgery_type!r}")
    if len(data) == 0:
        raise ValueError("empty dataset")
    extra = set(data.types) - {"authentic", forgery_type}
    if extra:
        raise ValueError(f"teacher data for {forgery_type} contains {sorted(extra)}")
    return train(data, replace(cfg, strategy="baseline"), log_fh=log_fh)


def pretrain_policy(teacher_cache: dict, student_init: cuenet.CueNet, data: ForgeryData,
                    cfg: TrainerConfig, reference: FrozenOutputs, log_fh=None) -> dict:
    """Initialise the selection policies from warmup windows in which every
    teacher is selected; the warmup student is discarded."""
    missing = [k for k in TEACHER_TYPES if k not in teacher_cache]
    if missing:
        raise ValueError(f"missing teachers {missing}")
    wcfg = replace(cfg, strategy="redts")
    if cfg.warmup_windows <= 0:
        return {k: redts.PolicyParams.zeros(cfg.d) for k in TEACHER_TYPES}
    batches = cfg.warmup_windows * wcfg.update_interval
    epochs_needed = -(-batches // max(-(-len(data) // cfg.batch_size), 1))
    wcfg = replace(wcfg, epochs=max(cfg.epochs, epochs_needed))
    res = train(data, wcfg, teacher_cache=teacher_cache, reference=reference, init_model=student_init,
                force_action=1, max_batches=batches, log_fh=log_fh)
    return res.policies


def train_student(teacher_cache: dict | None, cfg: TrainerConfig, data: ForgeryData,
                  reference: FrozenOutputs | None = None, policies: dict | None = None,
                  init_model=None, log_fh=None) -> TrainResult:
    return train(data, cfg, teacher_cache=teacher_cache, reference=reference, policies=policies,
                 init_model=init_model, log_fh=log_fh)
