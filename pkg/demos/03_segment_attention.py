"""
Segment-aware cross-attention and the feature selector
======================================================

Each music position may only attend to condition frames in its own block of
k frames. The selector feeds language features at noisy timesteps and visual
features once t drops to t0.
"""
import numpy as np

from bgmgen.denoiser import (
    AttentionParams,
    attention_weights,
    build_mask,
    rescaled_block,
    segment_cross_attention,
    select_condition,
)

mask = build_mask(12, k=4)
print(mask.matrix)

rng = np.random.default_rng(0)
params = AttentionParams(*(0.3 * rng.standard_normal(s) for s in ((8, 4), (6, 4), (6, 4), (4, 8))))
x, cond = rng.standard_normal((12, 8)), rng.standard_normal((12, 6))
weights = attention_weights(x, cond, params, mask)
print("row 5 weights:", np.round(weights[5], 3))

# changing frames outside row 5's block leaves row 5 untouched, bit for bit
cond2 = cond.copy()
cond2[8:] += 100.0
same = segment_cross_attention(x, cond, params, mask)[5] == segment_cross_attention(x, cond2, params, mask)[5]
print("row 5 unchanged:", same.all())

# on a coarser level the block shrinks with the sequence
print("k=8 on 128 steps -> 64 steps:", rescaled_block(8, 64, 128))

fv, fl = np.zeros((32, 512)), np.ones((32, 768))
for t in (1000, 201, 200, 1):
    print(t, select_condition(fv, fl, t, t0=200).modality)
