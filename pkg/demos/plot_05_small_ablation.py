"""
A small ablation
================

Train teachers and three students (no distillation, uniform ensemble,
learned selection) on a reduced synthetic suite and compare the average
F1. At this size the gaps are noise; the full-size comparison is the
acceptance suite.
"""

import logging
import time

from remtkd import pipeline
from remtkd.evalkit import PerturbationSpec, evaluate

logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = pipeline.SuiteConfig(seed=0, n_train=60, n_test=30, teacher_epochs=4, student_epochs=3)
t0 = time.time()
ws = pipeline.prepare(cfg)
print(f"data + teachers: {time.time() - t0:.0f}s")

for kind in ("copy_move", "splicing", "inpainting"):
    row = evaluate(ws.teachers[kind], ws.test).groups
    print(f"teacher {kind:<10}", " ".join(f"{t}={g.pixel_f1:.3f}" for t, g in row.items()))

students = {}
for name in ("0:baseline", "4:u-ensemble", "9:redts-r3-s3"):
    res = pipeline.run_setup(ws, pipeline.setup_by_name(name))
    students[name] = res.model
    report = evaluate(res.model, ws.test)
    print(f"{name:<16} image F1 {report.average.image_f1:.3f}  pixel F1 {report.average.pixel_f1:.3f}  "
          f"average {report.average_f1:.3f}")

# robustness of the selected-teacher student
model = students["9:redts-r3-s3"]
for q in (95, 75, 50):
    r = evaluate(model, ws.test, PerturbationSpec("jpeg", q))
    print(f"jpeg q={q}: pixel F1 {r.average.pixel_f1:.3f}")
