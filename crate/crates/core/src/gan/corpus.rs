use crate::chord::{ChordLabel, ChordMode, Extension, Key, KeyMode};
use crate::score::{Note, Score, STEPS_PER_BAR, STEPS_PER_BEAT};
use crate::token::{to_codes, CodeRow, EventType, Vocabulary};

pub const SYNTHETIC_PIECES: usize = 32;

// Root offsets (semitones above the tonic) and chord qualities in a major key.
const PROGRESSIONS: [[(u8, ChordMode); 4]; 4] = [
    [(0, ChordMode::Major), (7, ChordMode::Major), (9, ChordMode::Minor), (5, ChordMode::Major)],
    [(0, ChordMode::Major), (5, ChordMode::Major), (7, ChordMode::Major), (0, ChordMode::Major)],
    [(9, ChordMode::Minor), (5, ChordMode::Major), (0, ChordMode::Major), (7, ChordMode::Major)],
    [(2, ChordMode::Minor), (7, ChordMode::Major), (0, ChordMode::Major), (9, ChordMode::Minor)],
];

/// 32 fixed four-bar chord-progression pieces of 16 events each: start-of-song,
/// piano, start-of-score, four × (chord, bass root, upper third), end-of-song.
/// Piece `j` is in major key `j mod 12`. With `include_chords = false` the
/// chord events are removed (12 events per piece).
pub fn synthetic_corpus(vocab: &Vocabulary, include_chords: bool) -> Vec<Vec<CodeRow>> {
    (0..SYNTHETIC_PIECES)
        .map(|j| {
            let key = Key { tonic: (j % 12) as u8, mode: KeyMode::Major };
            let prog = &PROGRESSIONS[(j + j / 12) % PROGRESSIONS.len()];
            let mut notes = Vec::new();
            let mut chords = Vec::new();
            for (bar, &(offset, mode)) in prog.iter().enumerate() {
                let root = (key.tonic + offset) % 12;
                let third = if mode == ChordMode::Major { 4 } else { 3 };
                let start = bar as u32 * STEPS_PER_BAR;
                notes.push(Note::new(start, 2 * STEPS_PER_BEAT, 48 + root, 0));
                notes.push(Note::new(start + 2 * STEPS_PER_BEAT, 2 * STEPS_PER_BEAT, 60 + root + third, 0));
                chords.push((bar as u32, ChordLabel::in_key(key, root, mode, Extension::None)));
            }
            let score = Score::from_notes(notes, 120.0);
            let events = vocab.encode(&score, &chords).expect("synthetic pieces fit the vocabulary");
            events
                .iter()
                .filter(|e| include_chords || e.etype != EventType::Chord)
                .map(to_codes)
                .collect()
        })
        .collect()
}
