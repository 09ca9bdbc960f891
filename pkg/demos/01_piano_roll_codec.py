"""
From MIDI to piano roll and back
================================

A segment is an 8-bar window at 16 steps per bar: a (2, 128, 128) array
whose channel 0 marks note starts and channel 1 marks held steps.
"""
import tempfile
from pathlib import Path

import numpy as np

from bgmgen.midi import read_midi, write_midi
from bgmgen.pianoroll import check_roll, events_to_roll, roll_to_events, segment_corpus
from bgmgen.synthetic import synth_piece

# a seeded toy piece: block chords under a scale-bound melody, 16 bars long
notes = synth_piece(seed=7, bars=16)
print(f"{len(notes)} notes, first three: {notes[:3]}")

# write it as a standard MIDI file and read it back
path = Path(tempfile.mkdtemp()) / "piece.mid"
write_midi(path, notes)
score = read_midi(path)
print("ticks per beat:", score.ticks_per_beat, "tempo map:", score.tempo_map)

# cut into non-overlapping 8-bar segments
segments = segment_corpus(score.notes, hop_bars=8, source_id="piece")
print("segments:", [(s.source_id, s.bar_offset) for s in segments])

roll = segments[0].roll
check_roll(roll)
print("onsets:", int(roll[0].sum()), "held steps:", int(roll[1].sum()))

# decoding inverts encoding for notes that fit in the window
decoded, repairs = roll_to_events(roll)
first_window = sorted((n.pitch, n.onset_step, n.duration_steps) for n in score.notes if n.onset_step < 128)
assert sorted((n.pitch, n.onset_step, n.duration_steps) for n in decoded) == first_window
print("round trip ok, repairs:", repairs)

# a held step with no onset in front of it gets promoted to an onset
broken = np.zeros_like(roll)
broken[1, 10:14, 60] = 1
print("repaired:", roll_to_events(broken))
