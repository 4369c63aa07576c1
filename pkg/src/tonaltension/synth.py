"""Synthetic desk-scale corpora.

Generates random tonal scores (mixed chord sizes, occasional chromatic
alterations and held notes, random enharmonic respellings so the tension
features are not collinear with the pitch features) plus performances
whose tempo curve optionally follows a tension-to-tempo rule:

* ``t_cd-slow``: the local beat period stretches with the cloud diameter,
  so wider pitch clouds are played slower (BPR correlates with t_cd);
* ``none``: tempo is a smooth random walk unrelated to the features.

Velocities follow a smooth random walk in both cases. Everything is
driven by one seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spiral import SpiralParams
from .symbolic import (MeterEntry, Performance, PerformedNote, Score, ScoreNote,
                       derive_tpc, group_onsets, spelled_from_tpc)
from .tension import WindowConfig, tension_track

RULES = ("t_cd-slow", "none")

_METERS = (
    MeterEntry(0.0, 4.0, 4, "duple"),
    MeterEntry(0.0, 3.0, 4, "triple"),
    MeterEntry(0.0, 2.0, 4, "duple"),
    MeterEntry(0.0, 6.0, 8, "duple"),
)
_CHORD_INTERVALS = (3, 4, 7, 8, 9, 10, 14, 16)


@dataclass(frozen=True)
class SynthConfig:
    pieces: int
    frames: int
    seed: int
    rule: str = "t_cd-slow"
    tempo_gain: float = 0.8  # beat-period stretch per unit of cloud diameter
    noise: float = 0.05  # relative sd of the tempo noise
    respell_prob: float = 0.35
    base_beat_period: float = 0.5  # seconds per beat

    def __post_init__(self):
        if self.pieces <= 0:
            raise ValueError(f"pieces must be positive, got {self.pieces}")
        if self.frames < 2:
            raise ValueError(f"need at least 2 frames per piece, got {self.frames}")
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}; choose from {RULES}")


def _respell(tpc: int, rng: np.random.Generator, prob: float) -> int:
    if rng.random() >= prob:
        return tpc
    shifted = tpc + int(rng.choice((-12, 12)))
    # keep accidentals readable (|alter| <= 2)
    return shifted if abs((shifted + 1) // 7) <= 2 else tpc


def generate_score(rng: np.random.Generator, frames: int,
                   respell_prob: float = 0.35) -> Score:
    """Random score with ``frames`` distinct onsets and a declared key."""
    meter = _METERS[rng.integers(len(_METERS))]
    key_tpc = int(rng.integers(-3, 4))
    step_choices = (0.5, 1.0) if meter.beat_unit == 4 else (1.0, 2.0)
    notes = []
    beat = 0.0
    center = int(rng.integers(55, 75))
    for fi in range(frames):
        step = float(rng.choice(step_choices))
        size = int(rng.choice((1, 2, 3, 4), p=(0.35, 0.2, 0.3, 0.15)))
        center = int(np.clip(center + rng.integers(-4, 5), 40, 84))
        midis = {center}
        while len(midis) < size:
            midis.add(center + int(rng.choice(_CHORD_INTERVALS)))
        # occasional chromatic neighbor widens the pitch cloud
        if rng.random() < 0.3:
            midis.add(max(midis) + 1)
        top = max(midis)
        for midi in sorted(midis):
            dur = step if rng.random() < 0.8 else 2.0 * step
            tpc = _respell(derive_tpc(midi, key_tpc), rng, respell_prob)
            notes.append(ScoreNote(
                id=f"n{len(notes)}", onset=beat, duration=dur, midi_pitch=midi,
                spelled=spelled_from_tpc(tpc, midi), is_melody=midi == top))
        beat += step
    score = Score(tuple(notes), (meter,), (key_tpc, "major"))
    score.validate()
    return score


def generate_performance(rng: np.random.Generator, score: Score,
                         cfg: SynthConfig, spiral: SpiralParams,
                         window: WindowConfig) -> Performance:
    """Performance realizing the configured tempo rule plus noise."""
    frames = group_onsets(score)
    beats = np.array([f.beat for f in frames])
    if cfg.rule == "t_cd-slow":
        t_cd = np.array([t.t_cd for t in tension_track(score, window, spiral)])
        shape = 1.0 + cfg.tempo_gain * (t_cd - t_cd.mean())
    else:
        walk = np.cumsum(rng.normal(0.0, 0.02, size=len(frames)))
        shape = 1.0 + (walk - walk.mean())
    bp = cfg.base_beat_period * shape
    bp += rng.normal(0.0, cfg.noise * cfg.base_beat_period, size=len(frames))
    bp = np.maximum(bp, 0.1 * cfg.base_beat_period)

    onset_sec = np.zeros(len(frames))
    for i in range(1, len(frames)):
        onset_sec[i] = onset_sec[i - 1] + bp[i - 1] * (beats[i] - beats[i - 1])

    vel_walk = np.clip(np.round(
        72 + np.cumsum(rng.normal(0.0, 2.0, size=len(frames)))), 30, 110).astype(int)

    frame_of = {}
    for frame in frames:
        for nid in frame.note_ids:
            frame_of[nid] = frame.index
    performed = []
    for n in score.notes:
        fi = frame_of[n.id]
        dur = float(max(0.05, 0.9 * n.duration * bp[fi]))
        vel = int(np.clip(vel_walk[fi] + rng.integers(-3, 4), 1, 127))
        performed.append(PerformedNote(n.id, float(onset_sec[fi]), dur, vel))
    return Performance(tuple(performed))


def generate_corpus(cfg: SynthConfig, spiral: SpiralParams | None = None,
                    window: WindowConfig | None = None):
    """List of (piece_id, Score, Performance), deterministic in the seed."""
    spiral = spiral or SpiralParams()
    window = window or WindowConfig()
    rng = np.random.default_rng(cfg.seed)
    out = []
    for i in range(cfg.pieces):
        score = generate_score(rng, cfg.frames, cfg.respell_prob)
        perf = generate_performance(rng, score, cfg, spiral, window)
        out.append((f"piece{i:03d}", score, perf))
    return out
