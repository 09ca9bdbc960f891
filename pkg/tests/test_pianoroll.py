import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bgmgen.midi import NoteEvent
from bgmgen.pianoroll import (
    DEFAULT_VELOCITY,
    check_roll,
    empty_roll,
    events_to_roll,
    repair_roll,
    roll_to_events,
    segment_corpus,
)


def test_single_note_encoding():
    roll = events_to_roll([NoteEvent(60, 5, 3, 100)], 0)
    expected = empty_roll()
    expected[0, 5, 60] = 1
    expected[1, 6, 60] = expected[1, 7, 60] = 1
    np.testing.assert_array_equal(roll, expected)
    assert roll.shape == (2, 128, 128)


def test_empty_events_give_zero_roll():
    assert not events_to_roll([], 0).any()


def test_note_clipped_at_window_end():
    roll = events_to_roll([NoteEvent(60, 126, 8)], 0)
    assert roll[0, 126, 60] == 1
    assert roll[1, 127, 60] == 1
    assert roll.sum() == 2


def test_note_entering_window_marks_sustain_only():
    roll = events_to_roll([NoteEvent(60, 120, 16)], 128)
    assert roll[0].sum() == 0
    np.testing.assert_array_equal(np.nonzero(roll[1, :, 60])[0], np.arange(8))


def test_negative_start_rejected():
    with pytest.raises(ValueError):
        events_to_roll([], -1)


def test_later_onset_truncates_same_pitch_note():
    roll = events_to_roll([NoteEvent(60, 0, 10), NoteEvent(60, 4, 2)], 0)
    events, repairs = roll_to_events(roll)
    assert repairs == 0
    assert [(e.onset_step, e.duration_steps) for e in events] == [(0, 4), (4, 2)]


def test_decode_round_trip_example():
    events, repairs = roll_to_events(events_to_roll([NoteEvent(60, 5, 3, 100)], 0))
    assert events == [NoteEvent(60, 5, 3, DEFAULT_VELOCITY)]
    assert repairs == 0


def test_decode_zero_roll():
    assert roll_to_events(empty_roll()) == ([], 0)


def test_orphan_sustain_repaired():
    roll = empty_roll()
    roll[1, 3, 60] = 1
    events, repairs = roll_to_events(roll)
    assert events == [NoteEvent(60, 3, 1, DEFAULT_VELOCITY)]
    assert repairs == 1


def test_orphan_run_promotes_first_step_only():
    roll = empty_roll()
    roll[1, 3:7, 60] = 1
    fixed, repairs = repair_roll(roll)
    assert repairs == 1
    assert fixed[0, 3, 60] == 1 and fixed[0, 4:7, 60].sum() == 0
    assert roll_to_events(roll)[0] == [NoteEvent(60, 3, 4, DEFAULT_VELOCITY)]


def test_check_roll_rejects_invalid():
    roll = empty_roll()
    roll[0, 2, 5] = roll[1, 2, 5] = 1
    with pytest.raises(ValueError, match="same"):
        check_roll(roll)
    roll = empty_roll()
    roll[1, 2, 5] = 1
    with pytest.raises(ValueError, match="no onset"):
        check_roll(roll)


def _piece(length):
    return [NoteEvent(60, 0, 4), NoteEvent(64, length - 4, 4)]


def test_segments_non_overlapping():
    segs = segment_corpus(_piece(256), hop_bars=8)
    assert [s.bar_offset for s in segs] == [0, 8]
    assert segs[1].roll[0, 124, 64] == 1


def test_short_piece_single_padded_segment():
    segs = segment_corpus(_piece(96), hop_bars=8)
    assert len(segs) == 1
    assert not segs[0].roll[:, 96:].any()


def test_overlapping_hop_four_bars():
    segs = segment_corpus(_piece(256), hop_bars=4, source_id="song")
    # windows start at steps 0, 64, 128, 192; the last two run past step 256
    assert [s.bar_offset for s in segs] == [0, 4, 8, 12]
    assert all(s.source_id == "song" and s.bar_offset % 4 == 0 for s in segs)
    assert segs[3].roll[0, 60, 64] == 1 and not segs[3].roll[:, 64:].any()
    assert not segs[2].roll[:, 128:].any()


def test_segment_errors():
    assert segment_corpus([], 8) == []
    with pytest.raises(ValueError):
        segment_corpus(_piece(64), 0)


@st.composite
def window_events(draw, overlapping=False, steps=128):
    """Random notes inside one window, optionally with same-pitch overlaps."""
    n = draw(st.integers(0, 40))
    notes = []
    busy = {}
    for _ in range(n):
        pitch = draw(st.integers(0, 127))
        onset = draw(st.integers(0, steps - 1))
        dur = draw(st.integers(1, steps - onset))
        if not overlapping and any(onset < e and s < onset + dur for s, e in busy.get(pitch, [])):
            continue
        busy.setdefault(pitch, []).append((onset, onset + dur))
        notes.append(NoteEvent(pitch, onset, dur, draw(st.integers(1, 127))))
    return notes


@settings(max_examples=300, deadline=None)
@given(window_events())
def test_round_trip_property(events):
    decoded, repairs = roll_to_events(events_to_roll(events, 0))
    assert repairs == 0
    key = lambda e: (e.pitch, e.onset_step, e.duration_steps)
    assert sorted(map(key, decoded)) == sorted(map(key, events))


@settings(max_examples=300, deadline=None)
@given(window_events(overlapping=True))
def test_encoder_output_always_valid(events):
    check_roll(events_to_roll(events, 0))
