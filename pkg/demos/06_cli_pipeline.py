"""
The command-line pipeline
=========================

Builds a small synthetic corpus on disk (MIDI files, feature tensors and a
manifest), then runs ``bgmgen train``, ``bgmgen generate`` and
``bgmgen evaluate`` exactly as a shell user would. Short schedule and few
steps, so the scores mean nothing; the point is the plumbing.
"""
import subprocess
import sys
import tempfile
from pathlib import Path

from bgmgen.conditioning import synth_condition, write_manifest, write_tensor
from bgmgen.midi import write_midi
from bgmgen.synthetic import synth_piece

root = Path(tempfile.mkdtemp())
records = []
for i in range(64):
    write_midi(root / f"song{i:02d}.mid", synth_piece(i))
    cond = synth_condition(32, 16, 16, seed=i, profile="blocky")
    write_tensor(cond.fv, root / f"song{i:02d}_fv.dbt")
    write_tensor(cond.fl, root / f"song{i:02d}_fl.dbt")
    records.append({"id": f"song{i:02d}", "midi_path": f"song{i:02d}.mid",
                    "fv_path": f"song{i:02d}_fv.dbt", "fl_path": f"song{i:02d}_fl.dbt"})
write_manifest(root / "manifest.jsonl", records)
# generate only for the first four songs; evaluation still ranks against all 64
write_manifest(root / "subset.jsonl", records[:4])

(root / "run.cfg").write_text("""\
seed = 0
n_steps = 100
beta_end = 0.2
d_fv = 16
d_fl = 16
lr = 1e-3
batch_size = 4
steps = 40
checkpoint_every = 20
manifest = manifest.jsonl
out_dir = run
""")


def bgmgen(*args):
    print("$ bgmgen", " ".join(args))
    done = subprocess.run([sys.executable, "-m", "bgmgen", *args], capture_output=True, text=True)
    print(done.stdout + done.stderr, end="")
    print("exit code", done.returncode)


bgmgen("train", "--config", str(root / "run.cfg"))
print("loss log tail:", (root / "run/loss.log").read_text().splitlines()[-1])

bgmgen("generate", "--checkpoint", str(root / "run/checkpoint.dbgk"),
       "--manifest", str(root / "subset.jsonl"), "--seed", "1", "--out", str(root / "gen"))
print((root / "gen/summary.json").read_text())

bgmgen("evaluate", "--config", str(root / "run.cfg"), "--generated", str(root / "gen"),
       "--out", str(root / "eval"))

# an empty directory is an evaluation input error
(root / "empty").mkdir()
bgmgen("evaluate", "--config", str(root / "run.cfg"), "--generated", str(root / "empty"),
       "--out", str(root / "eval2"))
