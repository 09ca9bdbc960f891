"""Two-channel piano-roll codec.

A roll is a ``uint8`` array of shape ``(2, T, P)``: channel 0 marks the step a
note starts, channel 1 marks every later step it keeps sounding. The two
channels never overlap, which makes decoding unambiguous.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .midi import NoteEvent

SEGMENT_STEPS = 128
PITCH_BINS = 128
STEPS_PER_BAR = 16
SEGMENT_BARS = SEGMENT_STEPS // STEPS_PER_BAR
DEFAULT_VELOCITY = 80

ONSET, SUSTAIN = 0, 1


@dataclass(frozen=True)
class Segment:
    roll: np.ndarray
    source_id: str
    bar_offset: int


def empty_roll(steps: int = SEGMENT_STEPS, pitches: int = PITCH_BINS) -> np.ndarray:
    return np.zeros((2, steps, pitches), dtype=np.uint8)


def resolve_overlaps(events) -> list[NoteEvent]:
    """Truncate each note at the next onset on the same pitch.

    Notes sharing onset and pitch collapse into the longest one.
    """
    by_pitch: dict[int, dict[int, NoteEvent]] = {}
    for ev in events:
        slot = by_pitch.setdefault(ev.pitch, {})
        prev = slot.get(ev.onset_step)
        if prev is None or ev.duration_steps > prev.duration_steps:
            slot[ev.onset_step] = ev
    out = []
    for pitch, slot in by_pitch.items():
        onsets = sorted(slot)
        for i, on in enumerate(onsets):
            ev = slot[on]
            end = ev.end_step
            if i + 1 < len(onsets):
                end = min(end, onsets[i + 1])
            out.append(NoteEvent(pitch, on, end - on, ev.velocity))
    out.sort(key=lambda e: (e.onset_step, e.pitch))
    return out


def events_to_roll(events, start_step: int = 0, steps: int = SEGMENT_STEPS,
                   pitches: int = PITCH_BINS) -> np.ndarray:
    """Encode notes overlapping ``[start_step, start_step + steps)``."""
    if start_step < 0:
        raise ValueError(f"start_step must be >= 0, got {start_step}")
    roll = empty_roll(steps, pitches)
    stop = start_step + steps
    for ev in resolve_overlaps(events):
        if ev.pitch >= pitches or ev.end_step <= start_step or ev.onset_step >= stop:
            continue
        first = max(ev.onset_step, start_step) - start_step
        last = min(ev.end_step, stop) - start_step
        if ev.onset_step >= start_step:
            roll[ONSET, first, ev.pitch] = 1
            roll[SUSTAIN, first + 1:last, ev.pitch] = 1
        else:
            # entered the window mid-flight
            roll[SUSTAIN, first:last, ev.pitch] = 1
    return roll


def repair_roll(roll: np.ndarray) -> tuple[np.ndarray, int]:
    """Make ``roll`` satisfy the codec invariants.

    Entries are binarized, onset wins where both channels are set, and a
    sustain run with no onset before it has its first step promoted to an
    onset. Returns the repaired copy and the number of promotions.
    """
    roll = (np.asarray(roll) > 0).astype(np.uint8)
    onset, sustain = roll[ONSET], roll[SUSTAIN]
    sustain[onset == 1] = 0
    # a sustain step is an orphan if the previous step on that pitch is silent
    prev_active = np.zeros_like(onset)
    prev_active[1:] = onset[:-1] | sustain[:-1]
    orphans = (sustain == 1) & (prev_active == 0)
    onset[orphans] = 1
    sustain[orphans] = 0
    return roll, int(orphans.sum())


def roll_to_events(roll: np.ndarray, velocity: int = DEFAULT_VELOCITY,
                   start_step: int = 0) -> tuple[list[NoteEvent], int]:
    """Decode a roll into notes, returning ``(events, repairs)``."""
    roll, repairs = repair_roll(roll)
    onset, sustain = roll[ONSET], roll[SUSTAIN]
    steps = onset.shape[0]
    events = []
    for t, p in zip(*np.nonzero(onset)):
        end = t + 1
        while end < steps and sustain[end, p]:
            end += 1
        events.append(NoteEvent(int(p), int(t) + start_step, int(end - t), velocity))
    events.sort(key=lambda e: (e.onset_step, e.pitch))
    return events, repairs


def check_roll(roll: np.ndarray) -> None:
    """Raise ``ValueError`` unless ``roll`` satisfies every roll invariant."""
    roll = np.asarray(roll)
    if roll.ndim != 3 or roll.shape[0] != 2:
        raise ValueError(f"expected shape (2, T, P), got {roll.shape}")
    if not np.isin(roll, (0, 1)).all():
        raise ValueError("roll entries must be 0 or 1")
    if (roll[ONSET] & roll[SUSTAIN]).any():
        raise ValueError("onset and sustain set at the same (t, p)")
    _, repairs = repair_roll(roll)
    if repairs:
        raise ValueError(f"{repairs} sustain runs have no onset")


def total_steps(events) -> int:
    return max((ev.end_step for ev in events), default=0)


def segment_corpus(events, hop_bars: int = SEGMENT_BARS, source_id: str = "",
                   steps: int = SEGMENT_STEPS, pitches: int = PITCH_BINS) -> list[Segment]:
    """Cut a piece into 8-bar windows starting every ``hop_bars`` bars.

    Windows only start before the last note ends; the tail is zero-padded.
    """
    if hop_bars < 1:
        raise ValueError(f"hop_bars must be >= 1, got {hop_bars}")
    events = list(events)
    length = total_steps(events)
    hop = hop_bars * STEPS_PER_BAR
    count = -(-length // hop)
    return [Segment(events_to_roll(events, i * hop, steps, pitches), source_id, i * hop_bars)
            for i in range(count)]
