"""Seeded toy music for tests and demos."""
from __future__ import annotations

import numpy as np

from .midi import NoteEvent
from .pianoroll import STEPS_PER_BAR

MAJOR = (0, 2, 4, 5, 7, 9, 11)
_PROGRESSIONS = ((0, 5, 3, 4), (0, 3, 4, 4), (5, 3, 0, 4), (0, 4, 5, 3))
_RHYTHMS = (
    (0, 4, 8, 12),
    (0, 2, 4, 6, 8, 10, 12, 14),
    (0, 3, 6, 8, 12),
    (0, 6, 8, 10),
    (0, 8, 10, 12, 14),
)


def synth_piece(seed: int, bars: int = 8, pitch_low: int = 36,
                pitch_high: int = 96) -> list[NoteEvent]:
    """A scale-bound melody over a block-chord progression.

    Key, progression, rhythm and melodic contour all depend on ``seed``, so
    different seeds give clearly different pieces.
    """
    rng = np.random.default_rng(seed)
    tonic = int(rng.integers(12))
    scale = [tonic + d for d in MAJOR]
    progression = _PROGRESSIONS[int(rng.integers(len(_PROGRESSIONS)))]
    rhythm = _RHYTHMS[int(rng.integers(len(_RHYTHMS)))]
    chord_octave = 48
    melody_octave = 72 if rng.random() < 0.5 else 60
    notes = []
    degree = int(rng.integers(7))
    for bar in range(bars):
        start = bar * STEPS_PER_BAR
        root = progression[bar % len(progression)]
        for j in (0, 2, 4):
            pitch = chord_octave + scale[(root + j) % 7] + 12 * ((root + j) // 7)
            notes.append(NoteEvent(int(np.clip(pitch, pitch_low, pitch_high)), start,
                                   STEPS_PER_BAR, 70))
        for i, onset in enumerate(rhythm):
            end = rhythm[i + 1] if i + 1 < len(rhythm) else STEPS_PER_BAR
            degree = int(np.clip(degree + rng.integers(-2, 3), 0, 13))
            pitch = melody_octave + scale[degree % 7] + 12 * (degree // 7)
            notes.append(NoteEvent(int(np.clip(pitch, pitch_low, pitch_high)), start + onset,
                                   end - onset, 90))
    return notes


def synth_loop(seed: int, bars: int = 8, n_onsets: int = 5, onsets=None,
               tones: int | None = None) -> list[NoteEvent]:
    """A one-bar riff repeated ``bars`` times.

    Each seed fixes a key, a chord and, unless ``onsets`` pins it, a 16-step
    rhythm; every onset plays the chord until the next onset. The chord is a
    diatonic triad, or with ``tones`` that many distinct scale degrees.
    Repetition makes the piece easy to memorize.
    """
    rng = np.random.default_rng(seed)
    tonic = int(rng.integers(12))
    root = int(rng.integers(7))
    degrees = [root + j for j in (0, 2, 4)]
    drawn = rng.choice(np.arange(1, STEPS_PER_BAR), n_onsets - 1, replace=False).tolist()
    onsets = sorted({0, *drawn}) if onsets is None else sorted(set(onsets))
    if tones is not None:
        degrees = sorted(rng.choice(7, tones, replace=False).tolist())
    pitches = [60 + tonic + MAJOR[d % 7] + 12 * (d // 7) for d in degrees]
    notes = []
    for bar in range(bars):
        start = bar * STEPS_PER_BAR
        for i, onset in enumerate(onsets):
            end = onsets[i + 1] if i + 1 < len(onsets) else STEPS_PER_BAR
            notes.extend(NoteEvent(p, start + onset, end - onset, 90) for p in pitches)
    return notes
