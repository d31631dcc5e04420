"""
Teacher selection on a toy problem
==================================

Two teachers, one always helps (+1) and one always hurts (-1). The
selector only sees one delayed reward per window of ten steps, yet the
selection probabilities separate.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from remtkd import redts

checkpoints = [0, 10, 25, 50, 100, 200, 300, 500]
curves = {"prob": [], "logprob": []}
for grad in curves:
    for n in checkpoints:
        p = redts.run_bandit({"good": 1.0, "bad": -1.0}, windows=n, xi=0.01, seed=0, grad=grad)
        curves[grad].append((p["good"], p["bad"]))

for grad, pts in curves.items():
    print(grad, " ".join(f"{g:.2f}/{b:.2f}" for g, b in pts))

fig, ax = plt.subplots(figsize=(5, 3.2))
for grad, ls in (("prob", "-"), ("logprob", "--")):
    ax.plot(checkpoints, [g for g, _ in curves[grad]], ls, color="C0", label=f"good ({grad})")
    ax.plot(checkpoints, [b for _, b in curves[grad]], ls, color="C3", label=f"bad ({grad})")
ax.set_xlabel("windows")
ax.set_ylabel("selection probability")
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig("bandit.png", dpi=100)

# single-step sanity: a rewarded "select" raises the probability
p0, p1 = 0.5, None
sel = redts.TeacherSelector(["t"], d=2, rng=None, lr=0.1)
state = {"t": [1.0] * redts.state_dim(2)}
sel.select(0, state, force=1)
sel.update(1.0)
p1 = sel.probabilities(state)["t"]
print(f"p before {p0:.3f}, after one rewarded step {p1:.3f}")
