"""Temporal shift, fixed and learnable.

A fixed shift moves a quarter of the channels one frame forward or back in
time. The learnable version replaces that move with a small per-channel
temporal kernel, initialised so that it starts out as the fixed shift.

Run:  python demos/01_temporal_shift.py
"""
import numpy as np

from lgtsm.autograd import Tensor
from lgtsm.tsm import (FIXED, LearnableShiftKernels, ShiftSpec, init_tsm_equivalent,
                       learnable_temporal_shift, temporal_shift_fixed)

# %%
# A toy video: 8 channels, 5 frames, 1x1 pixels. Each entry holds its frame
# index plus channel/10, so every movement is easy to read off.
C, L = 8, 5
x = np.zeros((1, C, L, 1, 1))
for c in range(C):
    x[0, c, :, 0, 0] = np.arange(L) + c / 10
print("input, one row per channel:")
print(x[0, :, :, 0, 0])

# %%
# Fixed shift with the default fraction 1/4: channel 0 moves forward in time,
# channel 1 moves back, the rest stay. Vacated slots are zero.
spec = ShiftSpec(mode=FIXED)
shifted = temporal_shift_fixed(Tensor(x), spec).data
print("\nfixed shift:")
print(shifted[0, :, :, 0, 0])

# %%
# Learnable kernels start as exactly the same operation.
k = init_tsm_equivalent(LearnableShiftKernels(C, kernel_size=3), spec)
learned = learnable_temporal_shift(Tensor(x), k).data
print("\nlearnable shift at init equals fixed shift:", np.array_equal(learned, shifted))

# %%
# After training, a kernel can blend neighbouring frames. Here the forward
# group averages the previous and current frame.
k.weight.data[0] = [0.5, 0.5, 0.0]
print("\nchannel 0 after editing its kernel:", learnable_temporal_shift(Tensor(x), k).data[0, 0, :, 0, 0])
