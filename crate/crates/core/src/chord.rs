//! Per-bar chord labelling by template matching.
//!
//! A global key is estimated with Krumhansl-Kessler profile correlation, then
//! each 4/4 bar gets at most one chord: the triad or seventh template that best
//! covers the bar's duration-weighted pitch-class histogram.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{Score, STEPS_PER_BAR};

#[derive(Debug, Error, PartialEq)]
pub enum ChordError {
    #[error("score has no notes")]
    EmptyScore,
    #[error("bar {bar} is outside a score of {bars} bars")]
    BarOutOfRange { bar: u32, bars: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyMode {
    Major,
    Minor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Key {
    pub tonic: u8,
    pub mode: KeyMode,
}

impl Key {
    pub fn new(tonic: u8, mode: KeyMode) -> Self {
        Self { tonic: tonic % 12, mode }
    }

    /// Semitone offsets of the scale (natural minor for minor keys).
    pub fn scale(&self) -> &'static [u8; 7] {
        match self.mode {
            KeyMode::Major => &[0, 2, 4, 5, 7, 9, 11],
            KeyMode::Minor => &[0, 2, 3, 5, 7, 8, 10],
        }
    }

    /// Scale degree (1..=7) of `root`. Chromatic roots take the degree of the
    /// nearest scale tone below them.
    pub fn degree_of(&self, root: u8) -> u8 {
        let rel = (root as i32 - self.tonic as i32).rem_euclid(12) as u8;
        self.scale().iter().filter(|&&s| s <= rel).count() as u8
    }

    pub fn transposed(&self, semitones: i32) -> Key {
        Key::new((self.tonic as i32 + semitones).rem_euclid(12) as u8, self.mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChordMode {
    Major,
    Minor,
    Diminished,
    Augmented,
}

impl ChordMode {
    pub const ALL: [ChordMode; 4] =
        [ChordMode::Major, ChordMode::Minor, ChordMode::Diminished, ChordMode::Augmented];

    /// 1-based token code.
    pub fn code(self) -> u32 {
        self as u32 + 1
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get((code as usize).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ChordMode::Major => "major",
            ChordMode::Minor => "minor",
            ChordMode::Diminished => "diminished",
            ChordMode::Augmented => "augmented",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extension {
    None,
    Add7,
    Add9,
}

impl Extension {
    pub const ALL: [Extension; 3] = [Extension::None, Extension::Add7, Extension::Add9];

    pub fn code(self) -> u32 {
        self as u32 + 1
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get((code as usize).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Extension::None => "none",
            Extension::Add7 => "add7",
            Extension::Add9 => "add9",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChordLabel {
    pub degree: u8,
    pub root: u8,
    pub mode: ChordMode,
    pub extension: Extension,
}

impl ChordLabel {
    pub fn in_key(key: Key, root: u8, mode: ChordMode, extension: Extension) -> Self {
        let root = root % 12;
        Self { degree: key.degree_of(root), root, mode, extension }
    }
}

struct Template {
    tones: &'static [u8],
    mode: ChordMode,
    extension: Extension,
}

// Triads first: at equal score the smaller template wins.
const TEMPLATES: [Template; 7] = [
    Template { tones: &[0, 4, 7], mode: ChordMode::Major, extension: Extension::None },
    Template { tones: &[0, 3, 7], mode: ChordMode::Minor, extension: Extension::None },
    Template { tones: &[0, 3, 6], mode: ChordMode::Diminished, extension: Extension::None },
    Template { tones: &[0, 4, 8], mode: ChordMode::Augmented, extension: Extension::None },
    Template { tones: &[0, 4, 7, 11], mode: ChordMode::Major, extension: Extension::Add7 },
    Template { tones: &[0, 4, 7, 10], mode: ChordMode::Major, extension: Extension::Add7 },
    Template { tones: &[0, 3, 7, 10], mode: ChordMode::Minor, extension: Extension::Add7 },
];

/// Krumhansl-Kessler probe-tone profiles, tonic first.
pub const MAJOR_PROFILE: [f64; 12] =
    [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.37, 3.66, 2.29, 2.88];
pub const MINOR_PROFILE: [f64; 12] =
    [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

pub const DEFAULT_OFF_TEMPLATE_PENALTY: f64 = 0.5;

/// Duration-weighted pitch-class histogram of everything sounding in `[start, end)`.
pub fn pitch_class_weights(score: &Score, start: u32, end: u32) -> [f64; 12] {
    let mut h = [0.0; 12];
    for n in &score.notes {
        let lo = n.onset_step.max(start);
        let hi = n.end_step().min(end);
        if hi > lo {
            h[n.pitch_class()] += (hi - lo) as f64;
        }
    }
    h
}

fn rotated(h: &[f64; 12], by: u8) -> [f64; 12] {
    std::array::from_fn(|i| h[(i + by as usize) % 12])
}

fn pearson(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    let ma = a.iter().sum::<f64>() / 12.0;
    let mb = b.iter().sum::<f64>() / 12.0;
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..12 {
        let (da, db) = (a[i] - ma, b[i] - mb);
        num += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        num / (va * vb).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChordAnalyzer {
    pub off_template_penalty: f64,
}

impl Default for ChordAnalyzer {
    fn default() -> Self {
        Self { off_template_penalty: DEFAULT_OFF_TEMPLATE_PENALTY }
    }
}

impl ChordAnalyzer {
    pub fn new(off_template_penalty: f64) -> Self {
        Self { off_template_penalty }
    }

    /// Correlation of the duration-weighted histogram against all 24 key
    /// profiles. Ties go to the lower tonic, then to major.
    pub fn detect_key(&self, score: &Score) -> Result<Key, ChordError> {
        if score.is_empty() {
            return Err(ChordError::EmptyScore);
        }
        let h = pitch_class_weights(score, 0, u32::MAX);
        Ok(key_from_histogram(&h))
    }

    pub fn detect_bar_chord(
        &self,
        score: &Score,
        bar: u32,
        key: Key,
        previous: Option<ChordLabel>,
    ) -> Result<Option<ChordLabel>, ChordError> {
        let bars = score.num_bars();
        if bar >= bars {
            return Err(ChordError::BarOutOfRange { bar, bars });
        }
        let start = bar * STEPS_PER_BAR;
        let h = pitch_class_weights(score, start, start + STEPS_PER_BAR);
        if h.iter().all(|&w| w == 0.0) {
            return Ok(previous);
        }
        Ok(Some(self.best_chord(&h, key)))
    }

    fn best_chord(&self, h: &[f64; 12], key: Key) -> ChordLabel {
        // (score, template size, root weight, template index, distance from tonic)
        let mut best: Option<(f64, usize, f64, usize, u8, u8)> = None;
        for root in 0..12u8 {
            let rel = rotated(h, root);
            for (ti, t) in TEMPLATES.iter().enumerate() {
                let mut on = 0.0;
                let mut off = 0.0;
                for (i, w) in rel.iter().enumerate() {
                    if t.tones.contains(&(i as u8)) {
                        on += w;
                    } else {
                        off += w;
                    }
                }
                let score = on - self.off_template_penalty * off;
                let from_tonic = (root + 12 - key.tonic) % 12;
                let cand = (score, t.tones.len(), rel[0], ti, from_tonic, root);
                let better = match best {
                    None => true,
                    Some(b) => {
                        score > b.0
                            || (score == b.0
                                && (cand.1, -cand.2, cand.3, cand.4) < (b.1, -b.2, b.3, b.4))
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (_, _, _, ti, _, root) = best.expect("12 roots x 7 templates");
        ChordLabel::in_key(key, root, TEMPLATES[ti].mode, TEMPLATES[ti].extension)
    }

    /// One label per bar, carrying the previous chord through silent bars.
    /// Bars before the first resolvable chord get no entry.
    pub fn analyze(&self, score: &Score) -> Vec<(u32, ChordLabel)> {
        let Ok(key) = self.detect_key(score) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut previous = None;
        for bar in 0..score.num_bars() {
            let label = self
                .detect_bar_chord(score, bar, key, previous)
                .expect("bar index within range");
            if let Some(l) = label {
                out.push((bar, l));
            }
            previous = label;
        }
        out
    }
}

pub fn key_from_histogram(h: &[f64; 12]) -> Key {
    let mut best = (f64::NEG_INFINITY, Key::new(0, KeyMode::Major));
    for tonic in 0..12u8 {
        let rel = rotated(h, tonic);
        for (mode, profile) in [(KeyMode::Major, &MAJOR_PROFILE), (KeyMode::Minor, &MINOR_PROFILE)] {
            let r = pearson(&rel, profile);
            if r > best.0 {
                best = (r, Key::new(tonic, mode));
            }
        }
    }
    best.1
}

pub fn detect_key(score: &Score) -> Result<Key, ChordError> {
    ChordAnalyzer::default().detect_key(score)
}

pub fn detect_bar_chord(
    score: &Score,
    bar: u32,
    key: Key,
    previous: Option<ChordLabel>,
) -> Result<Option<ChordLabel>, ChordError> {
    ChordAnalyzer::default().detect_bar_chord(score, bar, key, previous)
}

pub fn analyze(score: &Score) -> Vec<(u32, ChordLabel)> {
    ChordAnalyzer::default().analyze(score)
}
