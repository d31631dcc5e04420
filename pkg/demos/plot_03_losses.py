"""
Hard and soft losses
====================

Supervised loss against ground truth, distillation loss against teacher
maps, and how omega scales the soft part with the number of teachers.
"""

from types import SimpleNamespace

import torch

from remtkd import losses
from remtkd.losses import LossWeights

torch.manual_seed(0)
y_s = (torch.rand(4, 1, 16, 16) < 0.2).float()
y_e = (torch.rand(4, 1, 16, 16) < 0.05).float()
y_c = torch.tensor([1.0, 1.0, 0.0, 1.0])

student = SimpleNamespace(seg=torch.rand(4, 1, 16, 16), cls=torch.rand(4), edge=torch.rand(4, 1, 16, 16))
teacher = SimpleNamespace(seg=0.8 * y_s + 0.1, cls=0.9 * y_c + 0.05)

w = LossWeights()
hard = losses.loss_hard(student, y_s, y_c, y_e, w)
print(f"seg {hard.seg:.4f}  cls {hard.cls:.4f}  edg {hard.edg:.4f}  ->  hard {hard.hard:.4f}")

for variant in losses.SOFT_VARIANTS:
    print(f"{variant}: {losses.loss_soft(student, teacher, variant):.4f}")

soft = losses.loss_soft(student, teacher, "soft3")
for k in range(4):
    total = losses.total_loss(hard.hard, [soft] * k, w)
    print(f"{k} teachers selected: total {float(total):.4f}")

# a student that copies the teacher still pays the teacher's entropy
print(f"soft3 at the teacher: {losses.loss_soft(teacher, teacher, 'soft3'):.4f}")
