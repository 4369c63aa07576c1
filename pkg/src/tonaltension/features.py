"""Low-level score features per onset frame: pitch group (P), vertical
interval classes, and metrical group (M); assembly with the tension
group (T) into model input rows."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidationError
from .symbolic import ONSET_TOLERANCE, OnsetFrame, Score, group_onsets
from .tension import TensionFrame

PITCH_FEATURES = ("pitch_h", "pitch_l", "pitch_m", "vic1", "vic2", "vic3")
METRICAL_FEATURES = ("b_phi", "b_d", "b_s", "b_w")
TENSION_FEATURES = ("t_cd", "t_cm", "t_ts")
CANONICAL_ORDER = PITCH_FEATURES + METRICAL_FEATURES + TENSION_FEATURES

GROUPS = {"P": PITCH_FEATURES, "M": METRICAL_FEATURES, "T": TENSION_FEATURES}


@dataclass(frozen=True)
class FeatureRow:
    frame_index: int
    beat: float
    values: tuple[float, ...]  # aligned with the group subset's columns


def feature_names(groups) -> tuple[str, ...]:
    """Canonical column names for a subset of feature groups."""
    groups = set(groups)
    unknown = groups - set(GROUPS)
    if unknown:
        raise ValueError(f"unknown feature groups {sorted(unknown)}")
    return tuple(n for n in CANONICAL_ORDER
                 if any(n in GROUPS[g] for g in groups))


def pitch_features(frame: OnsetFrame, score: Score) -> tuple[float, float, float]:
    """(highest, lowest, melody) MIDI pitches / 127; melody is 0 when the
    frame has no melody note, the highest such note otherwise."""
    notes = [n for n in score.notes if n.id in frame.note_ids]
    midis = [n.midi_pitch for n in notes]
    melody = [n.midi_pitch for n in notes if n.is_melody]
    pitch_m = max(melody) / 127.0 if melody else 0.0
    return max(midis) / 127.0, min(midis) / 127.0, pitch_m


def vertical_intervals(frame: OnsetFrame, score: Score) -> tuple[float, float, float]:
    """Up to three distinct interval classes above the frame's bass note,
    octaves and unisons excluded, each divided by 11; zero-padded."""
    midis = sorted(n.midi_pitch for n in score.notes if n.id in frame.note_ids)
    bass = midis[0]
    classes = sorted({(m - bass) % 12 for m in midis[1:]} - {0})
    vic = [c / 11.0 for c in classes[:3]]
    vic += [0.0] * (3 - len(vic))
    return tuple(vic)


def metrical_features(frame: OnsetFrame, score: Score) -> tuple[float, float, float, float]:
    """(b_phi, b_d, b_s, b_w): position within the bar as a fraction, and
    one-hot metrical strength (downbeat / secondary strong / weak).

    Bar position is measured from the active meter segment's start so the
    grid survives mid-piece meter changes. The secondary strong beat is
    B/2 in duple meters (beat 3 of 4/4; with 6/8 encoded as six eighth
    beats, eighth 4).
    """
    meter = score.meter_at(frame.beat)
    bar_len = meter.beats_per_bar
    pos = math.fmod(frame.beat - meter.start_beat, bar_len)
    if pos < 0:
        pos += bar_len
    if bar_len - pos < ONSET_TOLERANCE:
        pos = 0.0
    b_phi = pos / bar_len
    if abs(b_phi) < ONSET_TOLERANCE:
        return 0.0, 1.0, 0.0, 0.0
    if meter.meter_class == "duple" and abs(pos - bar_len / 2.0) < ONSET_TOLERANCE:
        return b_phi, 0.0, 1.0, 0.0
    return b_phi, 0.0, 0.0, 1.0


def assemble_features(score: Score, tension: list[TensionFrame] | None,
                      groups) -> list[FeatureRow]:
    """Stack the requested feature groups into per-frame rows in canonical
    column order; excluded groups contribute no columns."""
    groups = set(groups)
    names = feature_names(groups)
    frames = group_onsets(score)
    if "T" in groups:
        if tension is None or len(tension) != len(frames):
            got = "none" if tension is None else str(len(tension))
            raise ValidationError(
                f"tension track length {got} does not match {len(frames)} frames")
    rows = []
    for frame in frames:
        values: dict[str, float] = {}
        if "P" in groups:
            p = pitch_features(frame, score)
            v = vertical_intervals(frame, score)
            values.update(zip(PITCH_FEATURES, p + v))
        if "M" in groups:
            values.update(zip(METRICAL_FEATURES, metrical_features(frame, score)))
        if "T" in groups:
            t = tension[frame.index]
            values.update(t_cd=t.t_cd, t_cm=t.t_cm, t_ts=t.t_ts)
        rows.append(FeatureRow(frame.index, frame.beat,
                               tuple(values[n] for n in names)))
    return rows
