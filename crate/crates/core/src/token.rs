//! Quintuple-token encoding.
//!
//! Every event is a row of six integer codes: the event type followed by five
//! payload fields whose meaning depends on the type.
//!
//! | type           | f1     | f2       | f3      | f4       | f5         |
//! |----------------|--------|----------|---------|----------|------------|
//! | start-of-song  | 0      | 0        | 0       | 0        | 0          |
//! | instrument     | 0      | 0        | 0       | 0        | program+1  |
//! | start-of-score | 0      | 0        | 0       | 0        | 0          |
//! | note           | beat+1 | pos+1    | pitch+1 | dur code | program+1  |
//! | chord          | beat+1 | degree   | root+1  | mode     | extension  |
//! | end-of-song    | 0      | 0        | 0       | 0        | 0          |
//!
//! Code 0 is the shared null in every field.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chord::{ChordLabel, ChordMode, Extension};
use crate::score::{Note, Score, BEATS_PER_BAR, DEFAULT_QPM, STEPS_PER_BEAT};

/// A row of codes as fed to the model: event type, then f1..f5.
pub type CodeRow = [u32; 6];

/// Durations (in steps) representable by the note f4 field.
pub const DEFAULT_DURATIONS: [u32; 17] =
    [1, 2, 3, 4, 6, 8, 9, 12, 16, 18, 24, 30, 36, 42, 48, 72, 96];
pub const MAX_BEATS: u32 = 256;
pub const MAX_SEQUENCE_LEN: usize = 1024;
const POSITION_FIELD_SIZE: usize = 49;
const NUM_PITCHES: u32 = 128;
const NUM_PROGRAMS: u32 = 128;

#[derive(Debug, Error, PartialEq)]
pub enum TokenError {
    #[error("score spans {0} beats, more than the {MAX_BEATS}-beat limit")]
    BeatOverflow(u32),
    #[error("instrument program {0} is not in the vocabulary")]
    UnknownInstrument(u32),
    #[error("note cannot be encoded: {0}")]
    InvalidNote(String),
    #[error("chord at bar {0} lies outside the score")]
    ChordOutOfRange(u32),
    #[error("code row {row:?} is invalid: {reason}")]
    UnknownCode { row: CodeRow, reason: String },
    #[error("token file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for TokenError {
    fn from(e: std::io::Error) -> Self {
        TokenError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventType {
    StartOfSong = 1,
    Instrument = 2,
    StartOfScore = 3,
    Note = 4,
    Chord = 5,
    EndOfSong = 6,
}

impl EventType {
    pub const ALL: [EventType; 6] = [
        EventType::StartOfSong,
        EventType::Instrument,
        EventType::StartOfScore,
        EventType::Note,
        EventType::Chord,
        EventType::EndOfSong,
    ];

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get((code as usize).checked_sub(1)?).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuintupleEvent {
    pub etype: EventType,
    pub fields: [u32; 5],
}

impl QuintupleEvent {
    pub fn structural(etype: EventType) -> Self {
        Self { etype, fields: [0; 5] }
    }

    pub fn beat(&self) -> Option<u32> {
        matches!(self.etype, EventType::Note | EventType::Chord).then(|| self.fields[0] - 1)
    }

    /// Chord label carried by a chord event.
    pub fn chord_label(&self) -> Option<ChordLabel> {
        if self.etype != EventType::Chord {
            return None;
        }
        Some(ChordLabel {
            degree: self.fields[1] as u8,
            root: (self.fields[2].checked_sub(1)?) as u8,
            mode: ChordMode::from_code(self.fields[3])?,
            extension: Extension::from_code(self.fields[4])?,
        })
    }
}

impl fmt::Display for QuintupleEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = to_codes(self);
        write!(f, "{},{},{},{},{},{}", r[0], r[1], r[2], r[3], r[4], r[5])
    }
}

pub fn to_codes(event: &QuintupleEvent) -> CodeRow {
    let f = event.fields;
    [event.etype.code(), f[0], f[1], f[2], f[3], f[4]]
}

/// Field tables for the six code axes. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    durations: Vec<u32>,
    max_beats: u32,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new(MAX_BEATS, DEFAULT_DURATIONS.to_vec())
    }
}

impl Vocabulary {
    /// `durations` must be strictly increasing and positive.
    pub fn new(max_beats: u32, durations: Vec<u32>) -> Self {
        assert!(max_beats > 0, "need at least one beat");
        assert!(!durations.is_empty() && durations[0] > 0, "durations must be positive");
        assert!(durations.windows(2).all(|w| w[0] < w[1]), "durations must increase");
        Self { durations, max_beats }
    }

    pub fn max_beats(&self) -> u32 {
        self.max_beats
    }

    pub fn durations(&self) -> &[u32] {
        &self.durations
    }

    /// Width of each code axis, null included.
    pub fn field_sizes(&self) -> [usize; 6] {
        [
            EventType::ALL.len() + 1,
            self.max_beats as usize + 1,
            POSITION_FIELD_SIZE,
            NUM_PITCHES as usize + 1,
            self.durations.len().max(ChordMode::ALL.len()) + 1,
            (NUM_PROGRAMS as usize + 1).max(Extension::ALL.len()) + 1,
        ]
    }

    /// Snaps to the nearest table duration; ties go to the shorter value.
    pub fn duration_code(&self, steps: u32) -> u32 {
        let idx = match self.durations.binary_search(&steps) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i == self.durations.len() => i - 1,
            Err(i) => {
                if steps - self.durations[i - 1] <= self.durations[i] - steps {
                    i - 1
                } else {
                    i
                }
            }
        };
        idx as u32 + 1
    }

    pub fn duration_steps(&self, code: u32) -> Option<u32> {
        self.durations.get((code as usize).checked_sub(1)?).copied()
    }

    /// Valid inclusive code range of each payload field for `etype`.
    /// `None` means the field must be null.
    /// Inclusive code range of each field for `etype`; `None` means the field
    /// must be null.
    pub fn field_ranges(&self, etype: EventType) -> [Option<(u32, u32)>; 5] {
        let beats = Some((1, self.max_beats));
        match etype {
            EventType::StartOfSong | EventType::StartOfScore | EventType::EndOfSong => [None; 5],
            EventType::Instrument => [None, None, None, None, Some((1, NUM_PROGRAMS))],
            EventType::Note => [
                beats,
                Some((1, STEPS_PER_BEAT)),
                Some((1, NUM_PITCHES)),
                Some((1, self.durations.len() as u32)),
                Some((1, NUM_PROGRAMS)),
            ],
            EventType::Chord => [
                beats,
                Some((1, 7)),
                Some((1, 12)),
                Some((1, ChordMode::ALL.len() as u32)),
                Some((1, Extension::ALL.len() as u32)),
            ],
        }
    }

    /// Whether `code` is legal in field `field` (0-based over f1..f5) of an
    /// `etype` event, chord bar alignment included.
    pub fn field_allows(&self, etype: EventType, field: usize, code: u32) -> bool {
        let ok = match self.field_ranges(etype)[field] {
            None => code == 0,
            Some((lo, hi)) => (lo..=hi).contains(&code),
        };
        ok && !(etype == EventType::Chord && field == 0 && !(code - 1).is_multiple_of(BEATS_PER_BAR))
    }

    pub fn validate(&self, event: &QuintupleEvent) -> Result<(), TokenError> {
        let row = to_codes(event);
        let bad = |reason: String| TokenError::UnknownCode { row, reason };
        for (i, (&v, range)) in event.fields.iter().zip(self.field_ranges(event.etype)).enumerate() {
            match range {
                None if v != 0 => return Err(bad(format!("f{} must be null", i + 1))),
                Some((lo, hi)) if v < lo || v > hi => {
                    return Err(bad(format!("f{} = {v} outside {lo}..={hi}", i + 1)))
                }
                _ => {}
            }
        }
        if event.etype == EventType::Chord && !(event.fields[0] - 1).is_multiple_of(BEATS_PER_BAR) {
            return Err(bad("chord beat is not bar-aligned".into()));
        }
        Ok(())
    }

    pub fn from_codes(&self, row: CodeRow) -> Result<QuintupleEvent, TokenError> {
        let etype = EventType::from_code(row[0]).ok_or_else(|| TokenError::UnknownCode {
            row,
            reason: format!("event type {} unknown", row[0]),
        })?;
        let event = QuintupleEvent { etype, fields: [row[1], row[2], row[3], row[4], row[5]] };
        self.validate(&event)?;
        Ok(event)
    }

    pub fn instrument_event(&self, program: u32) -> Result<QuintupleEvent, TokenError> {
        if program >= NUM_PROGRAMS {
            return Err(TokenError::UnknownInstrument(program));
        }
        Ok(QuintupleEvent { etype: EventType::Instrument, fields: [0, 0, 0, 0, program + 1] })
    }

    pub fn note_event(&self, note: &Note) -> Result<QuintupleEvent, TokenError> {
        if note.instrument as u32 >= NUM_PROGRAMS {
            return Err(TokenError::UnknownInstrument(note.instrument as u32));
        }
        if note.pitch as u32 >= NUM_PITCHES {
            return Err(TokenError::InvalidNote(format!("pitch {}", note.pitch)));
        }
        let beat = note.onset_step / STEPS_PER_BEAT;
        if beat >= self.max_beats {
            return Err(TokenError::BeatOverflow(beat + 1));
        }
        Ok(QuintupleEvent {
            etype: EventType::Note,
            fields: [
                beat + 1,
                note.onset_step % STEPS_PER_BEAT + 1,
                note.pitch as u32 + 1,
                self.duration_code(note.duration_steps),
                note.instrument as u32 + 1,
            ],
        })
    }

    pub fn chord_event(&self, bar: u32, label: &ChordLabel) -> Result<QuintupleEvent, TokenError> {
        let beat = bar * BEATS_PER_BAR;
        if beat >= self.max_beats {
            return Err(TokenError::BeatOverflow(beat + 1));
        }
        let event = QuintupleEvent {
            etype: EventType::Chord,
            fields: [
                beat + 1,
                label.degree as u32,
                label.root as u32 + 1,
                label.mode.code(),
                label.extension.code(),
            ],
        };
        self.validate(&event)?;
        Ok(event)
    }

    /// Note carried by a valid note event.
    pub fn note_of(&self, event: &QuintupleEvent) -> Option<Note> {
        if event.etype != EventType::Note || self.validate(event).is_err() {
            return None;
        }
        let f = event.fields;
        Some(Note::new(
            (f[0] - 1) * STEPS_PER_BEAT + (f[1] - 1),
            self.duration_steps(f[3])?,
            (f[2] - 1) as u8,
            (f[4] - 1) as u8,
        ))
    }

    /// Lays out a piece: start-of-song, one instrument event per program,
    /// start-of-score, the merged chord/note stream, end-of-song.
    /// Note durations are snapped to the duration table.
    pub fn encode(
        &self,
        score: &Score,
        chords: &[(u32, ChordLabel)],
    ) -> Result<Vec<QuintupleEvent>, TokenError> {
        if score.num_beats > self.max_beats {
            return Err(TokenError::BeatOverflow(score.num_beats));
        }
        let mut out = vec![QuintupleEvent::structural(EventType::StartOfSong)];
        for &program in &score.instruments {
            out.push(self.instrument_event(program as u32)?);
        }
        out.push(QuintupleEvent::structural(EventType::StartOfScore));

        let bars = score.num_bars();
        let mut body = Vec::with_capacity(score.notes.len() + chords.len());
        for (bar, label) in chords {
            if *bar >= bars {
                return Err(TokenError::ChordOutOfRange(*bar));
            }
            body.push(self.chord_event(*bar, label)?);
        }
        for note in &score.notes {
            body.push(self.note_event(note)?);
        }
        // (beat, chord first, position, pitch, instrument, duration)
        body.sort_by_key(|e| {
            let f = e.fields;
            let chord_first = if e.etype == EventType::Chord { 0 } else { 1 };
            (f[0], chord_first, f[1], f[2], f[4], f[3])
        });
        out.extend(body);
        out.push(QuintupleEvent::structural(EventType::EndOfSong));
        Ok(out)
    }

    /// Rebuilds notes from note events. Chords are non-sounding and skipped;
    /// anything after end-of-song is ignored; invalid events are skipped and
    /// counted in `warnings`.
    pub fn decode(&self, events: &[QuintupleEvent]) -> Decoded {
        let mut notes = Vec::new();
        let mut warnings = 0;
        for event in events {
            if self.validate(event).is_err() {
                warnings += 1;
                continue;
            }
            match event.etype {
                EventType::EndOfSong => break,
                EventType::Note => notes.push(self.note_of(event).expect("validated note")),
                _ => {}
            }
        }
        Decoded { score: Score::from_notes(notes, DEFAULT_QPM), warnings }
    }

    /// Like [`Vocabulary::decode`] but starting from raw code rows, e.g. model samples.
    pub fn decode_codes(&self, rows: &[CodeRow]) -> Decoded {
        let mut notes = Vec::new();
        let mut warnings = 0;
        for &row in rows {
            match self.from_codes(row) {
                Err(_) => warnings += 1,
                Ok(e) if e.etype == EventType::EndOfSong => break,
                Ok(e) => notes.extend(self.note_of(&e)),
            }
        }
        Decoded { score: Score::from_notes(notes, DEFAULT_QPM), warnings }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub score: Score,
    pub warnings: usize,
}

pub const CSV_HEADER: &str = "etype,f1,f2,f3,f4,f5";

pub fn write_token_csv<W: Write>(mut out: W, rows: &[CodeRow]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r[0], r[1], r[2], r[3], r[4], r[5])?;
    }
    Ok(())
}

/// Reads raw code rows; semantic validation is left to the caller.
pub fn read_token_csv<R: BufRead>(input: R) -> Result<Vec<CodeRow>, TokenError> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if i == 0 {
            if line != CSV_HEADER {
                return Err(TokenError::Parse { line: 1, reason: format!("expected header `{CSV_HEADER}`") });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != 6 {
            return Err(TokenError::Parse { line: i + 1, reason: format!("{} columns", vals.len()) });
        }
        let mut row = [0u32; 6];
        for (slot, v) in row.iter_mut().zip(vals) {
            *slot = u32::from_str(v.trim())
                .map_err(|e| TokenError::Parse { line: i + 1, reason: e.to_string() })?;
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chord::{analyze, Key, KeyMode};

    fn cmaj() -> ChordLabel {
        ChordLabel::in_key(Key::new(0, KeyMode::Major), 0, ChordMode::Major, Extension::None)
    }

    #[test]
    fn empty_score_layout() {
        let v = Vocabulary::default();
        let ev = v.encode(&Score::default(), &[]).unwrap();
        let rows: Vec<_> = ev.iter().map(to_codes).collect();
        assert_eq!(rows, vec![[1, 0, 0, 0, 0, 0], [3, 0, 0, 0, 0, 0], [6, 0, 0, 0, 0, 0]]);
    }

    #[test]
    fn single_bar_layout() {
        let v = Vocabulary::default();
        let mut s = Score::from_notes([Note::new(0, 12, 60, 0)], 120.0);
        s.num_beats = 4;
        let ev = v.encode(&s, &[(0, cmaj())]).unwrap();
        let types: Vec<_> = ev.iter().map(|e| e.etype).collect();
        assert_eq!(
            types,
            vec![
                EventType::StartOfSong,
                EventType::Instrument,
                EventType::StartOfScore,
                EventType::Chord,
                EventType::Note,
                EventType::EndOfSong
            ]
        );
        assert_eq!(to_codes(&ev[1]), [2, 0, 0, 0, 0, 1]);
        assert_eq!(to_codes(&ev[3]), [5, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn note_code_row() {
        let v = Vocabulary::default();
        let e = v.note_event(&Note::new(0, 12, 60, 0)).unwrap();
        // 12 is the 8th table entry
        assert_eq!(to_codes(&e), [4, 1, 1, 61, 8, 1]);
        assert_eq!(v.from_codes([4, 1, 1, 61, 8, 1]).unwrap(), e);
        assert_eq!(v.from_codes([1, 0, 0, 0, 0, 0]).unwrap(), QuintupleEvent::structural(EventType::StartOfSong));
        assert!(matches!(v.from_codes([9, 0, 0, 0, 0, 0]), Err(TokenError::UnknownCode { .. })));
        assert!(matches!(v.from_codes([0, 0, 0, 0, 0, 0]), Err(TokenError::UnknownCode { .. })));
    }

    #[test]
    fn equal_beat_orders_by_pitch() {
        let v = Vocabulary::default();
        let s = Score::from_notes([Note::new(0, 12, 64, 0), Note::new(0, 12, 60, 0)], 120.0);
        let ev = v.encode(&s, &[]).unwrap();
        assert_eq!(ev[3].fields[2], 61);
        assert_eq!(ev[4].fields[2], 65);
    }

    #[test]
    fn sizes() {
        assert_eq!(Vocabulary::default().field_sizes(), [7, 257, 49, 129, 18, 130]);
    }

    #[test]
    fn duration_snapping() {
        let v = Vocabulary::default();
        let snap = |d| v.duration_steps(v.duration_code(d)).unwrap();
        assert_eq!(snap(12), 12);
        assert_eq!(snap(5), 4); // tie between 4 and 6
        assert_eq!(snap(7), 6);
        assert_eq!(snap(100), 96);
        assert_eq!(snap(60), 48);
        assert_eq!(snap(61), 72);
    }

    #[test]
    fn beat_overflow() {
        let v = Vocabulary::default();
        let s = Score::from_notes([Note::new(256 * 12, 12, 60, 0)], 120.0);
        assert!(matches!(v.encode(&s, &[]), Err(TokenError::BeatOverflow(_))));
    }

    #[test]
    fn unknown_instrument() {
        let v = Vocabulary::default();
        let s = Score::from_notes([Note::new(0, 12, 60, 200)], 120.0);
        assert_eq!(v.encode(&s, &[]), Err(TokenError::UnknownInstrument(200)));
    }

    #[test]
    fn chords_only_decode_to_empty() {
        let v = Vocabulary::default();
        let events: Vec<_> = (0..4).map(|b| v.chord_event(b, &cmaj()).unwrap()).collect();
        let d = v.decode(&events);
        assert!(d.score.is_empty());
        assert_eq!(d.warnings, 0);
    }

    #[test]
    fn bad_pitch_is_skipped_with_warning() {
        let v = Vocabulary::default();
        let good = v.note_event(&Note::new(0, 12, 60, 0)).unwrap();
        let mut bad = good;
        bad.fields[2] = 200;
        let d = v.decode(&[good, bad]);
        assert_eq!(d.score.notes.len(), 1);
        assert_eq!(d.warnings, 1);
        let d = v.decode_codes(&[to_codes(&good), to_codes(&bad)]);
        assert_eq!((d.score.notes.len(), d.warnings), (1, 1));
    }

    #[test]
    fn events_after_end_are_ignored() {
        let v = Vocabulary::default();
        let n = v.note_event(&Note::new(0, 12, 60, 0)).unwrap();
        let d = v.decode(&[n, QuintupleEvent::structural(EventType::EndOfSong), n]);
        assert_eq!(d.score.notes.len(), 1);
    }

    #[test]
    fn round_trip_with_analysis() {
        let v = Vocabulary::default();
        let s = Score::from_notes(
            [
                Note::new(0, 24, 48, 0),
                Note::new(0, 12, 64, 40),
                Note::new(13, 6, 67, 40),
                Note::new(60, 48, 62, 0),
                Note::new(100, 3, 65, 73),
            ],
            120.0,
        );
        let ev = v.encode(&s, &analyze(&s)).unwrap();
        let d = v.decode(&ev);
        assert_eq!(d.warnings, 0);
        assert_eq!(d.score.notes, s.notes);
        assert_eq!(d.score.instruments, s.instruments);
    }

    #[test]
    fn exhaustive_code_bijection_small_vocabulary() {
        let v = Vocabulary::new(2, vec![1, 3]);
        let mut seen = std::collections::HashSet::new();
        let mut events = vec![
            QuintupleEvent::structural(EventType::StartOfSong),
            QuintupleEvent::structural(EventType::StartOfScore),
            QuintupleEvent::structural(EventType::EndOfSong),
        ];
        for p in 0..128 {
            events.push(v.instrument_event(p).unwrap());
        }
        for onset in 0..24 {
            for pitch in 0..128u8 {
                for dur in [1, 3] {
                    for prog in 0..128u8 {
                        events.push(v.note_event(&Note::new(onset, dur, pitch, prog)).unwrap());
                    }
                }
            }
        }
        for root in 0..12u8 {
            for mode in ChordMode::ALL {
                for ext in Extension::ALL {
                    for degree in 1..=7u8 {
                        let label = ChordLabel { degree, root, mode, extension: ext };
                        events.push(v.chord_event(0, &label).unwrap());
                    }
                }
            }
        }
        for e in &events {
            let row = to_codes(e);
            assert!(seen.insert(row), "duplicate row {row:?}");
            assert_eq!(&v.from_codes(row).unwrap(), e);
        }
        assert_eq!(events.len(), 3 + 128 + 24 * 128 * 2 * 128 + 12 * 4 * 3 * 7);

        // every valid row along each axis maps back to itself; nothing else parses
        let sizes = v.field_sizes();
        let mut accepted = 0usize;
        for base in [[1, 0, 0, 0, 0, 0], [2, 0, 0, 0, 0, 1], [4, 1, 1, 1, 1, 1], [5, 1, 1, 1, 1, 1]] {
            for axis in 1..6 {
                for code in 0..sizes[axis] as u32 + 2 {
                    let mut row = base;
                    row[axis] = code;
                    if let Ok(e) = v.from_codes(row) {
                        assert_eq!(to_codes(&e), row);
                        assert!(seen.contains(&row));
                        accepted += 1;
                    }
                }
            }
        }
        assert!(accepted > 0);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let rows = vec![[1, 0, 0, 0, 0, 0], [4, 1, 1, 61, 8, 1], [6, 0, 0, 0, 0, 0]];
        let mut buf = Vec::new();
        write_token_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("etype,f1,f2,f3,f4,f5\n"));
        assert_eq!(read_token_csv(&buf[..]).unwrap(), rows);
        assert!(matches!(read_token_csv(&b"a,b\n"[..]), Err(TokenError::Parse { line: 1, .. })));
        assert!(matches!(
            read_token_csv(&b"etype,f1,f2,f3,f4,f5\n1,2\n"[..]),
            Err(TokenError::Parse { line: 2, .. })
        ));
    }
}
