"""Standard MIDI File reading and writing.

Only what the piano-roll pipeline needs is supported: format 0 and 1 files
with a ticks-per-beat time division, note events, tempo and time-signature
meta events. Everything else is skipped over.

Times are quantized to sixteenth-note steps (4 steps per beat).
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

STEPS_PER_BEAT = 4
WRITE_TICKS_PER_BEAT = 480
DEFAULT_TEMPO = 500000  # microseconds per beat, i.e. 120 BPM


class MidiParseError(ValueError):
    """Raised for malformed or unsupported MIDI content.

    ``offset`` is the byte position where the problem was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnsupportedMidiError(MidiParseError):
    """Well-formed file using a feature outside the supported subset."""


@dataclass(frozen=True, order=True)
class NoteEvent:
    """A quantized note: pitch, onset step, duration in steps, velocity."""

    pitch: int
    onset_step: int
    duration_steps: int
    velocity: int = 80

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside 0..127")
        if self.onset_step < 0:
            raise ValueError(f"negative onset_step {self.onset_step}")
        if self.duration_steps < 1:
            raise ValueError(f"duration_steps must be >= 1, got {self.duration_steps}")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity {self.velocity} outside 1..127")

    @property
    def end_step(self) -> int:
        return self.onset_step + self.duration_steps


@dataclass
class MidiScore:
    notes: list[NoteEvent]
    ticks_per_beat: int
    # (tick, microseconds per beat)
    tempo_map: list[tuple[int, int]] = field(default_factory=list)
    # (tick, numerator, denominator)
    time_signatures: list[tuple[int, int, int]] = field(default_factory=list)


def quantize_ticks(ticks: int, ticks_per_beat: int) -> int:
    """Nearest step for a tick position, ties rounding up."""
    # steps = ticks * 4 / tpb; floor(steps + 1/2) in exact integer arithmetic
    return (2 * STEPS_PER_BEAT * ticks + ticks_per_beat) // (2 * ticks_per_beat)


def _read_varlen(data: bytes, pos: int, end: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= end:
            raise MidiParseError("truncated variable-length quantity", pos)
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MidiParseError("variable-length quantity longer than 4 bytes", pos)


def _write_varlen(value: int) -> bytes:
    if value < 0:
        raise ValueError("negative delta time")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


# data byte counts for channel voice messages, keyed by high nibble
_CHANNEL_DATA_LEN = {0x8: 2, 0x9: 2, 0xA: 2, 0xB: 2, 0xC: 1, 0xD: 1, 0xE: 2}


def _parse_track(data: bytes, start: int, end: int, tempo_map, time_sigs):
    """Return a list of (on_tick, off_tick, pitch, velocity) for one track."""
    pos = start
    tick = 0
    running = None
    open_notes: dict[tuple[int, int], list[tuple[int, int]]] = {}
    notes = []
    while pos < end:
        delta, pos = _read_varlen(data, pos, end)
        tick += delta
        if pos >= end:
            raise MidiParseError("event truncated after delta time", pos)
        status = data[pos]
        if status & 0x80:
            pos += 1
        elif running is None:
            raise MidiParseError("running status without a prior status byte", pos)
        else:
            status = running

        if status == 0xFF:
            running = None
            if pos >= end:
                raise MidiParseError("truncated meta event", pos)
            meta_type = data[pos]
            length, pos = _read_varlen(data, pos + 1, end)
            if pos + length > end:
                raise MidiParseError("meta event runs past end of track", pos)
            payload = data[pos:pos + length]
            if meta_type == 0x51:
                if length != 3:
                    raise MidiParseError("tempo event must carry 3 bytes", pos)
                tempo_map.append((tick, int.from_bytes(payload, "big")))
            elif meta_type == 0x58:
                if length < 2:
                    raise MidiParseError("time signature event too short", pos)
                num, den = payload[0], 2 ** payload[1]
                if (num, den) != (4, 4):
                    raise UnsupportedMidiError(
                        f"time signature {num}/{den} is not supported, only 4/4", pos)
                time_sigs.append((tick, num, den))
            pos += length
            if meta_type == 0x2F:
                break
            continue
        if status in (0xF0, 0xF7):
            running = None
            length, pos = _read_varlen(data, pos, end)
            if pos + length > end:
                raise MidiParseError("sysex event runs past end of track", pos)
            pos += length
            continue
        kind = status >> 4
        if kind not in _CHANNEL_DATA_LEN:
            raise MidiParseError(f"unexpected status byte 0x{status:02X}", pos - 1)
        running = status
        n = _CHANNEL_DATA_LEN[kind]
        if pos + n > end:
            raise MidiParseError("channel message truncated", pos)
        args = data[pos:pos + n]
        if any(b & 0x80 for b in args):
            raise MidiParseError("data byte has its high bit set", pos)
        pos += n
        channel = status & 0x0F
        if kind == 0x9 and args[1] > 0:
            open_notes.setdefault((channel, args[0]), []).append((tick, args[1]))
        elif kind == 0x8 or kind == 0x9:
            stack = open_notes.get((channel, args[0]))
            if stack:
                on_tick, vel = stack.pop(0)
                notes.append((on_tick, tick, args[0], vel))
    for (channel, pitch), stack in open_notes.items():
        for on_tick, vel in stack:
            warnings.warn(
                f"note-on without note-off (pitch {pitch}, channel {channel}, tick {on_tick}); "
                "closed at track end", stacklevel=3)
            notes.append((on_tick, tick, pitch, vel))
    return notes


def parse_midi(data: bytes) -> MidiScore:
    """Parse SMF bytes into quantized notes merged across all tracks."""
    data = bytes(data)
    if len(data) < 14:
        raise MidiParseError("file shorter than a header chunk", len(data))
    if data[:4] != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    header_len = struct.unpack(">I", data[4:8])[0]
    if header_len < 6 or 8 + header_len > len(data):
        raise MidiParseError(f"bad header length {header_len}", 4)
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt == 2:
        raise UnsupportedMidiError("format 2 (asynchronous tracks) is not supported", 8)
    if fmt not in (0, 1):
        raise MidiParseError(f"unknown SMF format {fmt}", 8)
    if division & 0x8000:
        raise UnsupportedMidiError("SMPTE time division is not supported", 12)
    if division == 0:
        raise MidiParseError("ticks per beat is zero", 12)

    tempo_map: list[tuple[int, int]] = []
    time_sigs: list[tuple[int, int, int]] = []
    raw = []
    pos = 8 + header_len
    found = 0
    while pos < len(data) and found < ntracks:
        if pos + 8 > len(data):
            raise MidiParseError("truncated chunk header", pos)
        chunk_id = data[pos:pos + 4]
        length = struct.unpack(">I", data[pos + 4:pos + 8])[0]
        body = pos + 8
        if body + length > len(data):
            raise MidiParseError(
                f"chunk declares {length} bytes but only {len(data) - body} remain", pos + 4)
        if chunk_id == b"MTrk":
            raw.extend(_parse_track(data, body, body + length, tempo_map, time_sigs))
            found += 1
        pos = body + length
    if found < ntracks:
        raise MidiParseError(f"header declares {ntracks} tracks, found {found}", pos)

    notes = []
    for on_tick, off_tick, pitch, vel in raw:
        on = quantize_ticks(on_tick, division)
        off = quantize_ticks(off_tick, division)
        notes.append(NoteEvent(pitch, on, max(1, off - on), vel))
    notes.sort(key=lambda n: (n.onset_step, n.pitch, n.duration_steps))
    tempo_map.sort()
    time_sigs.sort()
    return MidiScore(notes, division, tempo_map, time_sigs)


def read_midi(path) -> MidiScore:
    with open(path, "rb") as fh:
        return parse_midi(fh.read())


def write_midi_bytes(notes, tempo: int = DEFAULT_TEMPO,
                     ticks_per_beat: int = WRITE_TICKS_PER_BEAT) -> bytes:
    """Serialize notes as a single-track format-0 file.

    At equal ticks note-offs are emitted before note-ons so that back-to-back
    notes on one pitch survive a round trip.
    """
    ticks_per_step = ticks_per_beat // STEPS_PER_BEAT
    events = []
    for n in notes:
        # (tick, order, message bytes); order 0 sorts offs first
        events.append((n.end_step * ticks_per_step, 0, n.pitch, bytes((0x80, n.pitch, 0x40))))
        events.append((n.onset_step * ticks_per_step, 1, n.pitch,
                       bytes((0x90, n.pitch, n.velocity))))
    events.sort(key=lambda e: e[:3])

    track = bytearray()
    track += b"\x00\xFF\x51\x03" + tempo.to_bytes(3, "big")
    track += b"\x00\xFF\x58\x04\x04\x02\x18\x08"
    last = 0
    for tick, _, _, msg in events:
        track += _write_varlen(tick - last) + msg
        last = tick
    track += b"\x00\xFF\x2F\x00"

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, ticks_per_beat)
    return header + b"MTrk" + struct.pack(">I", len(track)) + bytes(track)


def write_midi(path, notes, tempo: int = DEFAULT_TEMPO) -> None:
    with open(path, "wb") as fh:
        fh.write(write_midi_bytes(notes, tempo))
