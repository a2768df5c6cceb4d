//! Quantized multitrack score.
//!
//! Time is measured in steps of 1/12 quarter note. A bar is 4 beats
//! (48 steps); only 4/4 material is admitted by the MIDI loader.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Time steps per quarter note.
pub const STEPS_PER_BEAT: u32 = 12;
/// Beats per bar (4/4 only).
pub const BEATS_PER_BAR: u32 = 4;
/// Time steps per bar.
pub const STEPS_PER_BAR: u32 = STEPS_PER_BEAT * BEATS_PER_BAR;
/// Tempo used when a file carries no tempo event.
pub const DEFAULT_QPM: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Note {
    pub onset_step: u32,
    pub duration_steps: u32,
    pub pitch: u8,
    /// General MIDI program number, 0..=127.
    pub instrument: u8,
}

impl Note {
    pub fn new(onset_step: u32, duration_steps: u32, pitch: u8, instrument: u8) -> Self {
        Self { onset_step, duration_steps, pitch, instrument }
    }

    pub fn end_step(&self) -> u32 {
        self.onset_step + self.duration_steps
    }

    pub fn pitch_class(&self) -> usize {
        (self.pitch % 12) as usize
    }

    fn sort_key(&self) -> (u32, u8, u8, u32) {
        (self.onset_step, self.pitch, self.instrument, self.duration_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub notes: Vec<Note>,
    pub qpm: f64,
    pub num_beats: u32,
    pub instruments: BTreeSet<u8>,
}

impl Default for Score {
    fn default() -> Self {
        Self { notes: Vec::new(), qpm: DEFAULT_QPM, num_beats: 0, instruments: BTreeSet::new() }
    }
}

impl Score {
    /// Builds a score from unordered notes, normalizing order, the
    /// instrument set and the beat count. Zero-length notes become one step.
    pub fn from_notes(notes: impl IntoIterator<Item = Note>, qpm: f64) -> Self {
        let mut notes: Vec<Note> = notes
            .into_iter()
            .map(|mut n| {
                n.duration_steps = n.duration_steps.max(1);
                n
            })
            .collect();
        notes.sort_by_key(Note::sort_key);
        let instruments = notes.iter().map(|n| n.instrument).collect();
        let end = notes.iter().map(Note::end_step).max().unwrap_or(0);
        Self { notes, qpm, num_beats: end.div_ceil(STEPS_PER_BEAT), instruments }
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Last note offset in steps.
    pub fn end_step(&self) -> u32 {
        self.notes.iter().map(Note::end_step).max().unwrap_or(0)
    }

    /// Length in steps, the larger of the last offset and the declared beat count.
    pub fn length_steps(&self) -> u32 {
        self.end_step().max(self.num_beats * STEPS_PER_BEAT)
    }

    pub fn num_bars(&self) -> u32 {
        self.length_steps().div_ceil(STEPS_PER_BAR)
    }

    /// Shifts every pitch by `semitones`, dropping notes that leave 0..=127.
    pub fn transposed(&self, semitones: i32) -> Score {
        let notes = self.notes.iter().filter_map(|n| {
            let p = n.pitch as i32 + semitones;
            (0..=127).contains(&p).then_some(Note { pitch: p as u8, ..*n })
        });
        let mut out = Score::from_notes(notes, self.qpm);
        out.num_beats = out.num_beats.max(self.num_beats);
        out
    }

    /// Keeps the part of the score that sounds before `seconds`, clipping
    /// notes that cross the cut. The result is expressed in fractional steps
    /// so it is returned as `(note, sounding_steps)` pairs.
    pub fn truncated_weights(&self, seconds: f64) -> Vec<(Note, f64)> {
        let cut = seconds * self.qpm / 60.0 * STEPS_PER_BEAT as f64;
        self.notes
            .iter()
            .filter(|n| (n.onset_step as f64) < cut)
            .map(|n| (*n, (n.end_step() as f64).min(cut) - n.onset_step as f64))
            .collect()
    }

    /// Checks the type invariants.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.qpm.is_finite() && self.qpm > 0.0) {
            return Err(format!("qpm must be positive, got {}", self.qpm));
        }
        for n in &self.notes {
            if n.duration_steps == 0 {
                return Err(format!("zero-duration note at step {}", n.onset_step));
            }
            if n.pitch > 127 || n.instrument > 127 {
                return Err(format!("note out of MIDI range: {n:?}"));
            }
        }
        if self.notes.windows(2).any(|w| w[0].sort_key() > w[1].sort_key()) {
            return Err("notes are not sorted".into());
        }
        if self.num_beats < self.end_step().div_ceil(STEPS_PER_BEAT) {
            return Err("num_beats shorter than the last note".into());
        }
        let present: BTreeSet<u8> = self.notes.iter().map(|n| n.instrument).collect();
        if present != self.instruments {
            return Err("instrument set does not match notes".into());
        }
        Ok(())
    }
}

/// Seconds from the start to the last note offset at the score's tempo.
pub fn score_duration_seconds(score: &Score) -> f64 {
    score.end_step() as f64 / STEPS_PER_BEAT as f64 * 60.0 / score.qpm
}
