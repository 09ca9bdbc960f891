"""
The forward noising process
===========================

Rolls are scaled to {-1, +1} and corrupted in closed form:
x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps.
"""
import numpy as np

from bgmgen.diffusion import make_schedule, q_sample, scale_roll, unscale
from bgmgen.pianoroll import events_to_roll
from bgmgen.synthetic import synth_piece

sched = make_schedule("linear", n_steps=1000, beta_start=1e-4, beta_end=0.02)
for t in (1, 100, 500, 1000):
    print(f"t={t:4d}  beta={sched.beta[t]:.5f}  alpha_bar={sched.alpha_bar[t]:.6f}")

# how much of the clean roll survives: agreement after thresholding at 0
roll = events_to_roll(synth_piece(3))
x0 = scale_roll(roll)
rng = np.random.default_rng(0)
for t in (10, 100, 300, 600, 1000):
    xt = q_sample(x0, t, rng.standard_normal(x0.shape), sched)
    agree = (unscale(xt) == roll).mean()
    print(f"t={t:4d}  entries still matching the clean roll: {agree:.3f}")

# empirical statistics against the closed form at one entry
draws = q_sample(np.array([1.0]), 500, rng.standard_normal((10_000, 1)), sched)
print("mean", draws.mean(), "expected", np.sqrt(sched.alpha_bar[500]))
print("var ", draws.var(), "expected", 1 - sched.alpha_bar[500])
