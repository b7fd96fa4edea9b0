"""Free-form moving masks.

Masks are drawn per ratio bucket, from 0-10% up to 60-70% of the clip, and
saved as PBM frames that any image viewer can open.

Run:  python demos/02_masks.py [out_dir]
"""
import sys

import numpy as np

from lgtsm.maskgen import MaskSpec, bucket_label, generate_mask, iou

out_dir = sys.argv[1] if len(sys.argv) > 1 else "demo_masks"

# %%
# One stroke mask per bucket on a 64x64, 8-frame clip.
for b in range(7):
    lo, hi = b / 10, (b + 1) / 10
    m = generate_mask(MaskSpec("stroke", (lo, hi), motion=2.0, seed=b), L=8, H=64, W=64)
    print(f"{bucket_label(lo, hi):>7}: ratio {m.ratio:.3f}")

# %%
# Masks move between frames. Overlap of frame 0 with each later frame:
m = generate_mask(MaskSpec("object_like", (0.2, 0.3), motion=3.0, seed=1), L=8, H=64, W=64)
print("IoU with frame 0:", np.round([iou(m.frames[0], f) for f in m.frames], 3))

# %%
# Same seed, same mask, bit for bit.
again = generate_mask(MaskSpec("object_like", (0.2, 0.3), motion=3.0, seed=1), L=8, H=64, W=64)
print("reproducible:", np.array_equal(m.frames, again.frames))

# %%
m.save(out_dir)
print(f"wrote {len(m.frames)} PBM frames to {out_dir}/")
