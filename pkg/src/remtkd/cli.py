"""Command-line entry point: one subcommand per pipeline stage.

Artifacts live under the output root (``--out``, ``REMTKD_OUT`` or ./runs)::

    data/{train,test}/manifest.jsonl     gen-data
    teachers/<type>.rmtk                 train-teacher
    policies/warmup.rmtk                 pretrain-policy
    students/<name>.rmtk (+ .policy)     distill
    logs/<stage>.jsonl                   every stage; first line is the config
    reports/<name>.{csv,jsonl}           evaluate
    ablation.csv                         ablate
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import torch

from . import checkpoint, cuenet, distill, synth
from .checkpoint import BadMagicError, CheckpointError, ChecksumError
from .config import ConfigError, RunConfig, parse_overrides, resolve
from .data import ForgeryData
from .distill import TEACHER_TYPES
from .evalkit import MetricsReport, PerturbationSpec, evaluate, plot_robustness

log = logging.getLogger("remtkd")

TRAIN_TYPES = ("authentic", *TEACHER_TYPES)
TEST_TYPES = ("authentic", *TEACHER_TYPES, "multi")
TEST_SEED_OFFSET = 7919
REFERENCE_OFFSET = 999
TEACHER_OFFSET = 101

EXIT_OK, EXIT_ERROR, EXIT_MISSING, EXIT_CONFIG, EXIT_CHECKSUM = 0, 1, 2, 3, 4


class MissingArtifact(FileNotFoundError):
    pass


# --------------------------------------------------------------------------
# Paths and helpers


def _paths(cfg: RunConfig) -> dict:
    root = cfg.out_dir
    return {
        "train": root / "data" / "train" / "manifest.jsonl",
        "test": root / "data" / "test" / "manifest.jsonl",
        "teachers": root / "teachers",
        "policy": root / "policies" / "warmup.rmtk",
        "students": root / "students",
        "logs": root / "logs",
        "reports": root / "reports",
    }


def _require(path: Path, hint: str) -> Path:
    if not Path(path).exists():
        raise MissingArtifact(f"missing {path} (run `{hint}` first)")
    return Path(path)


@contextmanager
def _run_log(cfg: RunConfig, stage: str):
    path = _paths(cfg)["logs"] / f"{stage}.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps({"config": cfg.to_dict(), "stage": stage}, sort_keys=True) + "\n")
        yield fh


def _load_split(cfg: RunConfig, split: str) -> ForgeryData:
    path = _require(_paths(cfg)[split], "gen-data")
    return ForgeryData.from_records(synth.load_manifest(path).load())


def _load_teachers(cfg: RunConfig, types=TEACHER_TYPES) -> dict:
    root = _paths(cfg)["teachers"]
    models = {}
    for k in types:
        model, _ = checkpoint.load_model(_require(root / f"{k}.rmtk", f"train-teacher --type {k}"))
        models[k] = model
    return distill.TeacherBundle(models).models


def _student_init(cfg: RunConfig) -> cuenet.CueNet:
    _, init_seed, _ = cfg.trainer().streams()
    return cuenet.build(cfg.model(), init_seed)


def _reference(cfg: RunConfig, train: ForgeryData) -> distill.FrozenOutputs:
    ref = cuenet.build(cfg.model(), seed=cfg.seed * 1000 + REFERENCE_OFFSET)
    return distill.frozen_outputs(ref, train)


def _reward_name(value: str) -> str:
    return value if value.startswith("reward") else f"reward{value}"


def _soft_name(value: str) -> str:
    return value if value.startswith("soft") else f"soft{value}"


def run_name(strategy: str, single_teacher: str = "", reward: str = "reward3", soft: str = "soft3") -> str:
    if strategy == "baseline":
        return "baseline"
    if strategy == "single":
        return f"single-{single_teacher}-{soft}"
    if strategy == "u_ensemble":
        return f"u_ensemble-{soft}"
    return f"redts-{reward}-{soft}"


# --------------------------------------------------------------------------
# Stages


def cmd_gen_data(cfg: RunConfig, args) -> int:
    paths = _paths(cfg)
    for split, types, seed, n in (("train", TRAIN_TYPES, cfg.seed, cfg.n_train),
                                  ("test", TEST_TYPES, cfg.seed + TEST_SEED_OFFSET, cfg.n_test)):
        dcfg = synth.DatasetConfig(out_dir=str(cfg.out_dir / "data"), split=split, counts={t: n for t in types},
                                   seed=seed, size=cfg.size, edge_width=cfg.edge_width)
        manifest = synth.build_dataset(dcfg)
        print(f"{split}: {len(manifest.records)} samples -> {paths[split]}")
    return EXIT_OK


def _train_teachers(cfg: RunConfig, types, train: ForgeryData) -> dict:
    out = {}
    for k in types:
        i = TEACHER_TYPES.index(k)
        tdata = train.select_types(("authentic", k))
        tcfg = cfg.trainer(strategy="baseline", epochs=cfg.teacher_epochs, seed_offset=TEACHER_OFFSET + i)
        t0 = time.time()
        with _run_log(cfg, f"teacher-{k}") as fh:
            res = distill.pretrain_teacher(k, tdata, tcfg, log_fh=fh)
        path = _paths(cfg)["teachers"] / f"{k}.rmtk"
        checkpoint.save_model(path, res.model, meta={"type": k, "seed": cfg.seed})
        print(f"teacher {k}: {time.time() - t0:.0f}s -> {path}")
        out[k] = res.model
    return out


def cmd_train_teacher(cfg: RunConfig, args) -> int:
    types = TEACHER_TYPES if args.type == "all" else (args.type,)
    _train_teachers(cfg, types, _load_split(cfg, "train"))
    return EXIT_OK


def _pretrain_policy(cfg: RunConfig, train, cache, reference) -> dict:
    tcfg = cfg.trainer(strategy="redts")
    with _run_log(cfg, "pretrain-policy") as fh:
        policies = distill.pretrain_policy(cache, _student_init(cfg), train, tcfg, reference, log_fh=fh)
    checkpoint.save_policies(_paths(cfg)["policy"], policies, meta={"seed": cfg.seed})
    return policies


def cmd_pretrain_policy(cfg: RunConfig, args) -> int:
    train = _load_split(cfg, "train")
    teachers = _load_teachers(cfg)
    cache = {k: distill.frozen_outputs(m, train) for k, m in teachers.items()}
    _pretrain_policy(cfg, train, cache, _reference(cfg, train))
    print(f"policies -> {_paths(cfg)['policy']}")
    return EXIT_OK


def _distill(cfg: RunConfig, train: ForgeryData, cache: dict | None, reference, policies=None):
    name = run_name(cfg.strategy, cfg.single_teacher, cfg.reward, cfg.soft)
    tcfg = cfg.trainer()
    if tcfg.strategy == "redts" and policies is None:
        ppath = _paths(cfg)["policy"]
        policies = checkpoint.load_policies(ppath) if ppath.exists() else \
            _pretrain_policy(cfg, train, cache, reference)
    with _run_log(cfg, f"distill-{name}") as fh:
        res = distill.train_student(None if tcfg.strategy == "baseline" else cache, tcfg, train,
                                    reference=reference, policies=policies,
                                    init_model=_student_init(cfg), log_fh=fh)
    students = _paths(cfg)["students"]
    checkpoint.save_model(students / f"{name}.rmtk", res.model, meta={"run": name, "seed": cfg.seed})
    if res.policies:
        checkpoint.save_policies(students / f"{name}.policy.rmtk", res.policies)
    return name, res


def _needed_teachers(cfg: RunConfig):
    if cfg.strategy == "baseline":
        return ()
    if cfg.strategy == "single":
        return (cfg.single_teacher,)
    return TEACHER_TYPES


def cmd_distill(cfg: RunConfig, args) -> int:
    train = _load_split(cfg, "train")
    teachers = _load_teachers(cfg, _needed_teachers(cfg))
    cache = {k: distill.frozen_outputs(m, train) for k, m in teachers.items()}
    reference = _reference(cfg, train) if cfg.strategy == "redts" else None
    name, _ = _distill(cfg, train, cache, reference)
    print(f"student {name} -> {_paths(cfg)['students'] / (name + '.rmtk')}")
    return EXIT_OK


def _parse_perturbation(text: str | None, seed: int):
    if not text:
        return None
    kind, _, sev = text.partition(":")
    if not sev:
        raise ConfigError(f"perturbation must look like kind:severity, got {text!r}")
    return PerturbationSpec(kind, float(sev), seed)


def _write_report(report: MetricsReport, stem: Path) -> None:
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".csv").write_text(report.to_csv())
    stem.with_suffix(".jsonl").write_text(report.to_jsonl())


def _print_report(report: MetricsReport) -> None:
    print(f"{'group':<12}{'img_acc':>9}{'img_f1':>9}{'img_auc':>9}{'pix_f1':>9}{'pix_iou':>9}{'pix_auc':>9}")
    for row in report.rows():
        print(f"{row['group']:<12}" + "".join(
            f"{row[k]:>9.4f}" for k in ("image_acc", "image_f1", "image_auc", "pixel_f1", "pixel_iou", "pixel_auc")))
    print(f"average F1 {report.average_f1:.4f}")


def cmd_evaluate(cfg: RunConfig, args) -> int:
    ckpt = _require(Path(args.checkpoint), "distill")
    model, _ = checkpoint.load_model(ckpt)
    test = _load_split(cfg, "test")
    report = evaluate(model, test, _parse_perturbation(args.perturb, cfg.seed), threshold=cfg.threshold)
    tag = ckpt.name.removesuffix(".rmtk") + (f"-{args.perturb.replace(':', '')}" if args.perturb else "")
    stem = Path(args.report) if args.report else _paths(cfg)["reports"] / tag
    _write_report(report, stem)
    _print_report(report)
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, args) -> int:
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    rewards = [_reward_name(r.strip()) for r in args.rewards.split(",") if r.strip()]
    softs = [_soft_name(s.strip()) for s in args.softs.split(",") if s.strip()]
    grid = []
    for s in strategies:
        strategy, _, teacher = s.partition(":")
        if strategy == "baseline":
            grid.append((strategy, "", rewards[0], softs[0]))
        elif strategy == "redts":
            grid += [(strategy, "", r, sf) for r in rewards for sf in softs]
        else:
            grid += [(strategy, teacher, rewards[0], sf) for sf in softs]
    runs = [cfg.__class__(**{**cfg.to_dict(), "strategy": st, "single_teacher": t, "reward": r, "soft": sf})
            for st, t, r, sf in grid]

    train, test = _load_split(cfg, "train"), _load_split(cfg, "test")
    needed = sorted({k for run in runs for k in _needed_teachers(run)}, key=TEACHER_TYPES.index)
    teachers = _load_teachers(cfg, needed)
    cache = {k: distill.frozen_outputs(m, train) for k, m in teachers.items()}
    reference = _reference(cfg, train) if any(r.strategy == "redts" for r in runs) else None
    policies = None
    if any(r.strategy == "redts" for r in runs):
        ppath = _paths(cfg)["policy"]
        policies = checkpoint.load_policies(ppath) if ppath.exists() else \
            _pretrain_policy(cfg, train, cache, reference)

    rows = []
    for run in runs:
        name, res = _distill(run, train, cache, reference, policies)
        report = evaluate(res.model, test, threshold=cfg.threshold)
        _write_report(report, _paths(cfg)["reports"] / name)
        row = {"run": name, "strategy": run.strategy, "reward": run.reward, "soft": run.soft,
               "image_f1": report.average.image_f1, "pixel_f1": report.average.pixel_f1,
               "average_f1": report.average_f1}
        rows.append(row)
        print(f"{name:<28}{row['image_f1']:>9.4f}{row['pixel_f1']:>9.4f}{row['average_f1']:>9.4f}")
    out = Path(args.table) if args.table else cfg.out_dir / "ablation.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"{len(rows)} rows -> {out}")
    return EXIT_OK


ROBUSTNESS = {"jpeg": (95, 75, 50), "gaussian_blur": (0, 1, 2), "gaussian_noise": (0, 0.01, 0.03),
              "median_filter": (1, 3, 5)}


def cmd_plot(cfg: RunConfig, args) -> int:
    test = _load_split(cfg, "test")
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    unknown = [k for k in kinds if k not in ROBUSTNESS]
    if unknown:
        raise ConfigError(f"unknown perturbation kind(s): {', '.join(unknown)}")
    curves = {}
    for path in args.checkpoints:
        model, _ = checkpoint.load_model(_require(Path(path), "distill"))
        label = Path(path).name.removesuffix(".rmtk")
        for kind in kinds:
            curves[f"{label} {kind}"] = [
                (float(s), evaluate(model, test, PerturbationSpec(kind, s, cfg.seed),
                                    threshold=cfg.threshold).average.pixel_f1)
                for s in ROBUSTNESS[kind]]
    out = Path(args.output) if args.output else cfg.out_dir / "plots" / "robustness.png"
    plot_robustness(curves, out, metric="pixel F1")
    with open(out.with_suffix(".json"), "w") as fh:
        json.dump(curves, fh, indent=1)
    print(f"plot -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "pretrain-policy": cmd_pretrain_policy,
    "distill": cmd_distill,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML file with RunConfig keys")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output root (default $REMTKD_OUT or ./runs)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="remtkd", description="Multi-teacher distillation for forgery localisation")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write the synthetic train/test suites")

    t = sub.add_parser("train-teacher", parents=[common], help="train single-type teachers")
    t.add_argument("--type", default="all", choices=("all", *TEACHER_TYPES))

    sub.add_parser("pretrain-policy", parents=[common], help="warm up the teacher-selection policies")

    d = sub.add_parser("distill", parents=[common], help="train a student")
    d.add_argument("--strategy", choices=distill.STRATEGIES)
    d.add_argument("--single-teacher", choices=TEACHER_TYPES)
    d.add_argument("--reward", choices=("1", "2", "3", "reward1", "reward2", "reward3"))
    d.add_argument("--soft", choices=("1", "2", "3", "soft1", "soft2", "soft3"))

    e = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on the test suite")
    e.add_argument("checkpoint")
    e.add_argument("--perturb", help="kind:severity, e.g. jpeg:75")
    e.add_argument("--report", help="output path stem for .csv/.jsonl")

    a = sub.add_parser("ablate", parents=[common], help="strategy x reward x soft grid")
    a.add_argument("--strategies", default="baseline,u_ensemble,redts",
                   help="comma list; single teachers as single:<type>")
    a.add_argument("--rewards", default="3")
    a.add_argument("--softs", default="3")
    a.add_argument("--table", help="output CSV path")

    pl = sub.add_parser("plot", parents=[common], help="robustness curves (PNG or SVG)")
    pl.add_argument("checkpoints", nargs="+")
    pl.add_argument("--kinds", default="jpeg,gaussian_blur")
    pl.add_argument("--output", help=".png or .svg path")
    return p


def _config_from_args(args) -> RunConfig:
    overrides = parse_overrides(args.overrides)
    flags = {"seed": args.seed, "out": args.out}
    for name in ("strategy", "single_teacher", "reward", "soft"):
        flags[name] = getattr(args, name, None)
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return resolve(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        torch.manual_seed(cfg.seed)
        np.random.seed(cfg.seed)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"remtkd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifact, FileNotFoundError) as exc:
        print(f"remtkd: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ChecksumError, BadMagicError) as exc:
        print(f"remtkd: corrupt checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKSUM
    except (CheckpointError, synth.SynthError, synth.StorageError, ValueError) as exc:
        print(f"remtkd: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
