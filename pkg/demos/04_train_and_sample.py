"""
Overfitting one segment
=======================

A sanity run: train the toy denoiser (under 50k parameters) on a single
segment with blocky synthetic conditions, then sample it back. Takes about a
minute on a laptop CPU.
"""
import logging
import time

from bgmgen.conditioning import synth_condition
from bgmgen.denoiser import Architecture, DenoiserNet
from bgmgen.diffusion import generate, make_schedule
from bgmgen.pianoroll import events_to_roll
from bgmgen.synthetic import synth_piece
from bgmgen.training import TrainConfig, smoothed, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

arch = Architecture(d_fv=16, d_fl=16)
net = DenoiserNet(arch, seed=0)
print("parameters:", net.param_count)

roll = events_to_roll(synth_piece(1))
cond = synth_condition(32, 16, 16, seed=0, profile="blocky")
sched = make_schedule()

start = time.perf_counter()
net, losses = train(net, [(roll, cond)], TrainConfig(steps=2000, lr=1e-3, batch_size=4), sched)
print(f"smoothed loss {smoothed(losses):.4f} after {time.perf_counter() - start:.0f} s")

sample = generate(net, cond, sched, seed=0)
print(f"sample matches the training roll on {(sample == roll).mean():.2%} of entries")
print("onsets: sample", int(sample[0].sum()), "truth", int(roll[0].sum()))
