"""End-to-end experiment: synthetic suites, teachers, KD strategies, reports.

A ``Workspace`` holds everything that is shared between strategies for one
seed (data, trained teachers, frozen-model caches) so an ablation grid pays
for teacher training once.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import cuenet, distill
from .data import ForgeryData
from .distill import TEACHER_TYPES, TrainerConfig
from .evalkit import MetricsReport, PerturbationSpec, evaluate
from .losses import LossWeights
from .redts import RewardConfig

log = logging.getLogger(__name__)

TRAIN_TYPES = ("authentic", *TEACHER_TYPES)
TEST_TYPES = ("authentic", *TEACHER_TYPES, "multi")


@dataclass(frozen=True)
class Setup:
    name: str
    strategy: str
    single_teacher: str | None = None
    reward: str = "reward3"
    soft: str = "soft3"


TABLE4 = (
    Setup("0:baseline", "baseline"),
    Setup("1:single-com", "single", "copy_move"),
    Setup("2:single-spl", "single", "splicing"),
    Setup("3:single-inp", "single", "inpainting"),
    Setup("4:u-ensemble", "u_ensemble"),
    Setup("5:redts-r1-s3", "redts", reward="reward1"),
    Setup("6:redts-r2-s3", "redts", reward="reward2"),
    Setup("7:redts-r3-s1", "redts", soft="soft1"),
    Setup("8:redts-r3-s2", "redts", soft="soft2"),
    Setup("9:redts-r3-s3", "redts"),
)


def setup_by_name(name: str) -> Setup:
    for s in TABLE4:
        if s.name == name or s.name.split(":", 1)[1] == name:
            return s
    raise KeyError(name)


@dataclass
class SuiteConfig:
    seed: int = 0
    n_train: int = 400
    n_test: int = 200
    size: int = 64
    teacher_epochs: int = 15
    student_epochs: int = 8
    batch_size: int = 8
    lr: float = 1e-3
    gamma: float = 0.2
    warmup_windows: int = 2
    policy_lr: float = 3e-4
    policy_grad: str = "prob"
    weights: LossWeights = field(default_factory=LossWeights)
    model: cuenet.CueNetConfig = field(default_factory=cuenet.CueNetConfig)

    def trainer(self, setup: Setup | None = None, *, epochs: int | None = None, seed_offset: int = 0) -> TrainerConfig:
        setup = setup or Setup("baseline", "baseline")
        return TrainerConfig(
            epochs=self.student_epochs if epochs is None else epochs,
            batch_size=self.batch_size, lr=self.lr, strategy=setup.strategy,
            single_teacher=setup.single_teacher,
            reward=RewardConfig(setup.reward, self.gamma), soft_variant=setup.soft,
            weights=self.weights, seed=self.seed * 1000 + seed_offset, model=self.model,
            policy_lr=self.policy_lr, policy_grad=self.policy_grad,
            warmup_windows=self.warmup_windows,
        )


@dataclass
class Workspace:
    config: SuiteConfig
    train: ForgeryData
    test: ForgeryData
    teachers: dict = field(default_factory=dict)
    teacher_cache: dict = field(default_factory=dict)
    reference: distill.FrozenOutputs | None = None
    timings: dict = field(default_factory=dict)

    def student_init(self) -> cuenet.CueNet:
        _, init_seed, _ = self.config.trainer().streams()
        return cuenet.build(self.config.model, init_seed)


def make_data(cfg: SuiteConfig) -> tuple[ForgeryData, ForgeryData]:
    train = ForgeryData.generate("train", {t: cfg.n_train for t in TRAIN_TYPES}, cfg.seed, cfg.size)
    test = ForgeryData.generate("test", {t: cfg.n_test for t in TEST_TYPES}, cfg.seed + 7919, cfg.size)
    return train, test


def prepare(cfg: SuiteConfig, train: ForgeryData | None = None, test: ForgeryData | None = None,
            teachers: dict | None = None) -> Workspace:
    t0 = time.time()
    if train is None or test is None:
        train, test = make_data(cfg)
    ws = Workspace(cfg, train, test)
    ws.timings["data"] = time.time() - t0
    t0 = time.time()
    if teachers is None:
        teachers = {}
        for i, k in enumerate(TEACHER_TYPES):
            tdata = train.select_types(("authentic", k))
            res = distill.pretrain_teacher(k, tdata, cfg.trainer(epochs=cfg.teacher_epochs, seed_offset=101 + i))
            teachers[k] = res.model
            log.info("teacher %s trained (%.0fs)", k, time.time() - t0)
    ws.teachers = distill.TeacherBundle(teachers).models
    ws.timings["teachers"] = time.time() - t0
    t0 = time.time()
    ws.teacher_cache = {k: distill.frozen_outputs(m, train) for k, m in ws.teachers.items()}
    ref = cuenet.build(cfg.model, seed=cfg.seed * 1000 + 999)
    ws.reference = distill.frozen_outputs(ref, train)
    ws.timings["caches"] = time.time() - t0
    return ws


def run_setup(ws: Workspace, setup: Setup, log_fh=None) -> distill.TrainResult:
    cfg = ws.config.trainer(setup)
    init = ws.student_init()
    policies = None
    if setup.strategy == "redts":
        policies = distill.pretrain_policy(ws.teacher_cache, init, ws.train, cfg, ws.reference)
    return distill.train_student(
        None if setup.strategy == "baseline" else ws.teacher_cache, cfg, ws.train,
        reference=ws.reference, policies=policies, init_model=init, log_fh=log_fh)


ROBUSTNESS = {
    "jpeg": (95, 75, 50),
    "gaussian_blur": (0, 1, 2),
}


def report_dict(report: MetricsReport) -> dict:
    return {
        "groups": {k: asdict(v) for k, v in report.groups.items()},
        "average": asdict(report.average),
        "average_f1": report.average_f1,
        "perturbation": report.perturbation,
    }


def run_suite(cfg: SuiteConfig, setups=TABLE4, robustness_for: str | None = "9:redts-r3-s3",
              workspace: Workspace | None = None) -> dict:
    """Train everything for one seed and return a JSON-ready result dict."""
    ws = workspace or prepare(cfg)
    out = {"seed": cfg.seed, "teachers": {}, "teacher_by_type": {}, "setups": {}, "robustness": {},
           "timings": ws.timings}
    for k, m in ws.teachers.items():
        out["teachers"][k] = report_dict(evaluate(m, ws.test))
        # localization skill on tampered images only, one split per forgery type
        out["teacher_by_type"][k] = {t: evaluate(m, ws.test.select_types((t,))).average.pixel_f1
                                     for t in TEACHER_TYPES}
    for setup in setups:
        t0 = time.time()
        res = run_setup(ws, setup)
        report = evaluate(res.model, ws.test)
        entry = report_dict(report)
        if res.policies:
            entry["final_policy_bias"] = {k: p.b for k, p in res.policies.items()}
            sel = [r["actions"] for r in res.log if "actions" in r]
            entry["selection_rate"] = {k: float(np.mean([a[k] for a in sel])) for k in TEACHER_TYPES}
        entry["seconds"] = time.time() - t0
        out["setups"][setup.name] = entry
        log.info("setup %s avgF1 %.4f (%.0fs)", setup.name, report.average_f1, entry["seconds"])
        if setup.name == robustness_for:
            for kind, severities in ROBUSTNESS.items():
                out["robustness"][kind] = [
                    (s, evaluate(res.model, ws.test, PerturbationSpec(kind, s)).average.pixel_f1)
                    for s in severities]
    return out
