//! Standard MIDI File ingest and export.
//!
//! Parsing of the SMF container is delegated to `midly`; this module owns
//! the musical rules: 4/4 filtering, drum removal, note pairing and
//! quantization to 12 steps per quarter note.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use midly::num::{u15, u28, u4, u7};
use midly::{Format, Header, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};
use thiserror::Error;

pub use crate::score::score_duration_seconds;
use crate::score::{Note, Score, DEFAULT_QPM, STEPS_PER_BEAT};

const DRUM_CHANNEL: u8 = 9;
/// Resolution used by [`write_midi`].
pub const EXPORT_TICKS_PER_BEAT: u32 = 480;

#[derive(Debug, Error)]
pub enum MidiError {
    #[error("malformed MIDI: {0}")]
    MalformedMidi(String),
    #[error("unsupported time signature {numerator}/{denominator}")]
    UnsupportedTimeSignature { numerator: u8, denominator: u32 },
    #[error("unsupported MIDI file: {0}")]
    Unsupported(String),
    #[error("score has no notes after filtering")]
    EmptyScore,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn load_midi(path: impl AsRef<Path>) -> Result<Score, MidiError> {
    let bytes = std::fs::read(path)?;
    parse_midi(&bytes)
}

/// Tick to step at 12 steps per quarter, rounding to nearest with exact
/// halves going to the earlier step.
pub fn quantize_tick(tick: u64, ticks_per_beat: u64) -> u32 {
    let num = tick * STEPS_PER_BEAT as u64;
    let (q, r) = (num / ticks_per_beat, num % ticks_per_beat);
    (if 2 * r > ticks_per_beat { q + 1 } else { q }) as u32
}

struct RawNote {
    on: u64,
    off: u64,
    pitch: u8,
    program: u8,
}

pub fn parse_midi(bytes: &[u8]) -> Result<Score, MidiError> {
    let smf = Smf::parse(bytes).map_err(|e| MidiError::MalformedMidi(e.to_string()))?;
    let tpb = match smf.header.timing {
        Timing::Metrical(t) if t.as_int() > 0 => t.as_int() as u64,
        Timing::Metrical(_) => return Err(MidiError::MalformedMidi("zero ticks per beat".into())),
        Timing::Timecode(..) => {
            return Err(MidiError::Unsupported("SMPTE timecode division".into()))
        }
    };
    if smf.header.format == Format::Sequential {
        return Err(MidiError::Unsupported("SMF type 2".into()));
    }

    // (tick, track index) of the earliest tempo event wins
    let mut first_tempo: Option<(u64, usize, u32)> = None;
    let mut raw = Vec::new();
    for (track_idx, track) in smf.tracks.iter().enumerate() {
        let mut tick = 0u64;
        let mut programs = [0u8; 16];
        let mut open: HashMap<(u8, u8), VecDeque<(u64, u8)>> = HashMap::new();
        for ev in track {
            tick += ev.delta.as_int() as u64;
            match ev.kind {
                TrackEventKind::Meta(MetaMessage::Tempo(us)) => {
                    let cand = (tick, track_idx, us.as_int());
                    if first_tempo.is_none_or(|f| (cand.0, cand.1) < (f.0, f.1)) {
                        first_tempo = Some(cand);
                    }
                }
                TrackEventKind::Meta(MetaMessage::TimeSignature(num, den_pow, _, _)) => {
                    let denominator = 1u32.checked_shl(den_pow as u32).unwrap_or(0);
                    if num != 4 || denominator != 4 {
                        return Err(MidiError::UnsupportedTimeSignature {
                            numerator: num,
                            denominator,
                        });
                    }
                }
                TrackEventKind::Midi { channel, message } => {
                    let ch = channel.as_int();
                    match message {
                        MidiMessage::ProgramChange { program } => {
                            programs[ch as usize] = program.as_int();
                        }
                        MidiMessage::NoteOn { key, vel } if vel.as_int() > 0 => {
                            open.entry((ch, key.as_int()))
                                .or_default()
                                .push_back((tick, programs[ch as usize]));
                        }
                        MidiMessage::NoteOn { key, .. } | MidiMessage::NoteOff { key, .. } => {
                            if let Some((on, program)) =
                                open.get_mut(&(ch, key.as_int())).and_then(VecDeque::pop_front)
                            {
                                if ch != DRUM_CHANNEL {
                                    raw.push(RawNote { on, off: tick, pitch: key.as_int(), program });
                                }
                            }
                        }
                        _ => {}
                    }
                }
                _ => {}
            }
        }
        // notes never released end with their track
        let mut dangling: Vec<_> = open.into_iter().collect();
        dangling.sort_by_key(|(k, _)| *k);
        for ((ch, pitch), pending) in dangling {
            if ch == DRUM_CHANNEL {
                continue;
            }
            for (on, program) in pending {
                raw.push(RawNote { on, off: tick, pitch, program });
            }
        }
    }

    if raw.is_empty() {
        return Err(MidiError::EmptyScore);
    }
    let qpm = first_tempo.map_or(DEFAULT_QPM, |(_, _, us)| 60_000_000.0 / us.max(1) as f64);
    let notes = raw.into_iter().map(|r| {
        let on = quantize_tick(r.on, tpb);
        let off = quantize_tick(r.off, tpb);
        Note::new(on, off.saturating_sub(on).max(1), r.pitch, r.program)
    });
    Ok(Score::from_notes(notes, qpm))
}

/// Serializes a score as an SMF type 1 file: a conductor track with tempo and
/// a 4/4 signature, then one track per instrument. Channel 10 is skipped, so
/// at most 15 instruments can be written.
pub fn write_midi(score: &Score) -> Result<Vec<u8>, MidiError> {
    let channels: Vec<u8> = (0u8..16).filter(|&c| c != DRUM_CHANNEL).collect();
    if score.instruments.len() > channels.len() {
        return Err(MidiError::Unsupported(format!(
            "{} instruments exceed the {} melodic channels",
            score.instruments.len(),
            channels.len()
        )));
    }
    let ticks_per_step = EXPORT_TICKS_PER_BEAT / STEPS_PER_BEAT;
    let us_per_beat = (60_000_000.0 / score.qpm).round().clamp(1.0, 16_777_215.0) as u32;

    let mut tracks: Vec<Vec<TrackEvent<'static>>> = Vec::new();
    tracks.push(vec![
        meta_event(0, MetaMessage::Tempo(us_per_beat.into())),
        meta_event(0, MetaMessage::TimeSignature(4, 2, 24, 8)),
        meta_event(0, MetaMessage::EndOfTrack),
    ]);

    for (&program, &ch) in score.instruments.iter().zip(&channels) {
        let channel = u4::new(ch);
        // (tick, is_on, pitch); offs sort before ons at the same tick
        let mut timeline: Vec<(u32, bool, u8)> = Vec::new();
        for n in score.notes.iter().filter(|n| n.instrument == program) {
            timeline.push((n.onset_step * ticks_per_step, true, n.pitch));
            timeline.push((n.end_step() * ticks_per_step, false, n.pitch));
        }
        timeline.sort();
        let mut events = vec![TrackEvent {
            delta: u28::new(0),
            kind: TrackEventKind::Midi {
                channel,
                message: MidiMessage::ProgramChange { program: u7::new(program) },
            },
        }];
        let mut last = 0;
        for (tick, is_on, pitch) in timeline {
            let key = u7::new(pitch);
            let message = if is_on {
                MidiMessage::NoteOn { key, vel: u7::new(80) }
            } else {
                MidiMessage::NoteOff { key, vel: u7::new(0) }
            };
            events.push(TrackEvent {
                delta: u28::new(tick - last),
                kind: TrackEventKind::Midi { channel, message },
            });
            last = tick;
        }
        events.push(meta_event(0, MetaMessage::EndOfTrack));
        tracks.push(events);
    }

    let smf = Smf {
        header: Header::new(
            Format::Parallel,
            Timing::Metrical(u15::new(EXPORT_TICKS_PER_BEAT as u16)),
        ),
        tracks,
    };
    let mut out = Vec::new();
    smf.write_std(&mut out)?;
    Ok(out)
}

pub fn save_midi(score: &Score, path: impl AsRef<Path>) -> Result<(), MidiError> {
    std::fs::write(path, write_midi(score)?)?;
    Ok(())
}

fn meta_event(delta: u32, msg: MetaMessage<'static>) -> TrackEvent<'static> {
    TrackEvent { delta: u28::new(delta), kind: TrackEventKind::Meta(msg) }
}
