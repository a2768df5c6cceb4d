//! Corpus splitting, augmentation and cropping of encoded pieces.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{BEATS_PER_BAR, STEPS_PER_BEAT};
use crate::token::{CodeRow, EventType, Vocabulary, MAX_BEATS, MAX_SEQUENCE_LEN};

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("duplicate corpus id `{0}`")]
    DuplicateId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("entry `{id}` violates limits: {reason}")]
    LimitExceeded { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Valid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub tokens: Vec<CodeRow>,
    pub num_beats: u32,
    pub split: Split,
}

impl CorpusEntry {
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<CodeRow>,
        num_beats: u32,
        split: Split,
    ) -> Result<Self, DatasetError> {
        let id = id.into();
        if tokens.len() > MAX_SEQUENCE_LEN {
            return Err(DatasetError::LimitExceeded {
                id,
                reason: format!("{} tokens > {MAX_SEQUENCE_LEN}", tokens.len()),
            });
        }
        if num_beats > MAX_BEATS {
            return Err(DatasetError::LimitExceeded {
                id,
                reason: format!("{num_beats} beats > {MAX_BEATS}"),
            });
        }
        Ok(Self { id, tokens, num_beats, split })
    }
}

/// One line of the corpus manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub split: Split,
}

/// Seeded shuffle, then the first 80% train, the next 10% test and the rest valid.
pub fn split_corpus(ids: &[String], seed: u64) -> Result<BTreeMap<String, Split>, DatasetError> {
    if ids.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(DatasetError::DuplicateId(id.clone()));
        }
    }
    let mut order: Vec<&String> = ids.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_train = n * 8 / 10;
    let n_test = n / 10;
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_test {
                Split::Test
            } else {
                Split::Valid
            };
            (id.clone(), split)
        })
        .collect())
}

/// Uniform integer transposition in -5..=6 semitones.
pub fn sample_transposition<R: Rng>(rng: &mut R) -> i32 {
    rng.gen_range(-5..=6)
}

/// Shifts note pitches by `s` and rotates chord roots by `s` mod 12. Notes
/// leaving the MIDI range are dropped. Chord degrees stay as they are: key and
/// root move together, so the degree is unchanged.
pub fn augment_transpose(tokens: &[CodeRow], s: i32) -> Vec<CodeRow> {
    tokens
        .iter()
        .filter_map(|&row| {
            let mut row = row;
            match EventType::from_code(row[0]) {
                Some(EventType::Note) if row[3] >= 1 => {
                    let pitch = row[3] as i32 - 1 + s;
                    if !(0..=127).contains(&pitch) {
                        return None;
                    }
                    row[3] = pitch as u32 + 1;
                }
                Some(EventType::Chord) if (1..=12).contains(&row[3]) => {
                    debug_assert!((1..=7).contains(&row[2]), "chord degree {} out of range", row[2]);
                    row[3] = (row[3] as i32 - 1 + s).rem_euclid(12) as u32 + 1;
                }
                _ => {}
            }
            Some(row)
        })
        .collect()
}

/// Length of an encoded piece in beats (last note offset or last chord beat).
pub fn piece_beats(vocab: &Vocabulary, tokens: &[CodeRow]) -> u32 {
    let mut beats = 0;
    for &row in tokens {
        let Ok(e) = vocab.from_codes(row) else { continue };
        match e.etype {
            EventType::Note => {
                let n = vocab.note_of(&e).expect("valid note");
                beats = beats.max(n.end_step().div_ceil(STEPS_PER_BEAT));
            }
            EventType::Chord => beats = beats.max(e.fields[0]),
            _ => {}
        }
    }
    beats
}

/// Picks a bar-aligned window of `window_beats` uniformly and rebases it to
/// beat 0. Pieces that already fit are returned unchanged. Notes whose tail
/// crosses the window end are shortened to the longest table duration that fits.
pub fn assign_start_beat<R: Rng>(
    vocab: &Vocabulary,
    tokens: &[CodeRow],
    window_beats: u32,
    rng: &mut R,
) -> Vec<CodeRow> {
    let total = piece_beats(vocab, tokens);
    if total <= window_beats {
        return tokens.to_vec();
    }
    let choices = (total - window_beats) / BEATS_PER_BAR + 1;
    let offset = rng.gen_range(0..choices) * BEATS_PER_BAR;
    let end_step = window_beats * STEPS_PER_BEAT;
    tokens
        .iter()
        .filter_map(|&row| {
            let Ok(e) = vocab.from_codes(row) else { return Some(row) };
            match e.etype {
                EventType::Note | EventType::Chord => {
                    let beat = e.fields[0] - 1;
                    if beat < offset || beat >= offset + window_beats {
                        return None;
                    }
                    let mut row = row;
                    row[1] = beat - offset + 1;
                    if e.etype == EventType::Note {
                        let note = vocab.note_of(&e).expect("valid note");
                        let onset = note.onset_step - offset * STEPS_PER_BEAT;
                        let room = end_step - onset;
                        if note.duration_steps > room {
                            let fit = vocab
                                .durations()
                                .iter()
                                .rposition(|&d| d <= room)
                                .unwrap_or(0);
                            row[4] = fit as u32 + 1;
                        }
                    }
                    Some(row)
                }
                _ => Some(row),
            }
        })
        .collect()
}

/// Truncates to `max_len` rows, keeping a closing end-of-song.
pub fn crop_tokens(tokens: &[CodeRow], max_len: usize) -> Vec<CodeRow> {
    if tokens.len() <= max_len {
        return tokens.to_vec();
    }
    let mut out = tokens[..max_len - 1].to_vec();
    out.push([EventType::EndOfSong.code(), 0, 0, 0, 0, 0]);
    out
}

/// Augments one training piece: random transposition, random start window,
/// then cropping to the sequence limit.
pub fn augment<R: Rng>(vocab: &Vocabulary, tokens: &[CodeRow], rng: &mut R) -> Vec<CodeRow> {
    let s = sample_transposition(rng);
    let shifted = augment_transpose(tokens, s);
    let windowed = assign_start_beat(vocab, &shifted, vocab.max_beats(), rng);
    crop_tokens(&windowed, MAX_SEQUENCE_LEN)
}
