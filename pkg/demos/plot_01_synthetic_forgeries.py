"""
Synthetic forgeries
===================

Draw one sample of each forgery type from the generator and show the image,
its tamper mask and the edge band the edge head is trained on.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from remtkd import synth

types = synth.FORGERY_TYPES
records = [synth.generate_sample(f"demo-{t}-00000", t, global_seed=0, size=64) for t in types]

fig, axes = plt.subplots(3, len(types), figsize=(2.2 * len(types), 6.6))
for col, rec in enumerate(records):
    axes[0, col].imshow(rec.image)
    axes[0, col].set_title(rec.forgery_type)
    axes[1, col].imshow(rec.mask, cmap="gray", vmin=0, vmax=1)
    axes[2, col].imshow(rec.edge, cmap="gray", vmin=0, vmax=1)
for ax in axes.ravel():
    ax.set_axis_off()
fig.tight_layout()
fig.savefig("synthetic_forgeries.png", dpi=100)

# tampered area as a fraction of the image, and how many ops "multi" chained
for rec in records:
    extra = f" ops={rec.meta['ops']}" if rec.forgery_type == "multi" else ""
    print(f"{rec.forgery_type:<11} label={rec.label} area={rec.mask.mean():.3f}{extra}")

# inpainted regions are smoother than the content they replaced
smoother = 0
for seed in range(50):
    img = synth.gen_base_image(seed)
    out, mask, _ = synth.apply_inpaint(img, np.random.default_rng(seed))
    m = mask.astype(bool)
    smoother += out[m].var(axis=0).mean() < img[m].var(axis=0).mean()
print(f"inpainted region smoother than original in {smoother}/50 images")
