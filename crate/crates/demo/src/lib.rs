//! Browser demo over `quintuple-core`.
//!
//! Three operations are exported to JavaScript; each has a plain Rust twin
//! (the `*_json` functions) so it can be tested natively.
//!
//! Note text is one note per line, `onset duration pitch [program]`, with
//! times in steps of a twelfth of a beat. Blank lines and `#` comments are
//! ignored.

use quintuple_core::chord::{analyze as analyze_chords, detect_key, KeyMode};
use quintuple_core::gan::{adversarial_g, loss_d, LossConvention};
use quintuple_core::metrics::{gc, gc_pair, groove, sc, GroovePattern, PitchClassHistogram, GROOVE_POSITIONS};
use quintuple_core::score::{Note, Score};
use quintuple_core::token::{to_codes, Vocabulary};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

const PITCH_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

pub fn parse_notes(text: &str, qpm: f64) -> Result<Score, String> {
    let mut notes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<u32> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u32>().map_err(|_| format!("line {}: '{s}' is not a whole number", i + 1)))
            .collect::<Result<_, _>>()?;
        let (onset, dur, pitch, program) = match fields[..] {
            [o, d, p] => (o, d, p, 0),
            [o, d, p, g] => (o, d, p, g),
            _ => return Err(format!("line {}: expected `onset duration pitch [program]`", i + 1)),
        };
        if pitch > 127 || program > 127 || dur == 0 {
            return Err(format!("line {}: pitch and program must be 0..=127 and duration positive", i + 1));
        }
        notes.push(Note::new(onset, dur, pitch as u8, program as u8));
    }
    if !(qpm.is_finite() && qpm > 0.0) {
        return Err("tempo must be positive".into());
    }
    let score = Score::from_notes(notes, qpm);
    score.validate()?;
    Ok(score)
}

#[derive(Serialize)]
struct ChordRow {
    bar: u32,
    degree: u8,
    root: &'static str,
    mode: &'static str,
    extension: &'static str,
}

/// Key, per-bar chords, the token rows, the piece metrics and each bar's
/// onset positions.
pub fn analyze_json(text: &str, qpm: f64) -> Result<String, String> {
    let score = parse_notes(text, qpm)?;
    if score.is_empty() {
        return Err("no notes".into());
    }
    let key = detect_key(&score).map_err(|e| e.to_string())?;
    let chords = analyze_chords(&score);
    let rows: Vec<ChordRow> = chords
        .iter()
        .map(|(bar, c)| ChordRow {
            bar: *bar,
            degree: c.degree,
            root: PITCH_NAMES[c.root as usize],
            mode: c.mode.name(),
            extension: c.extension.name(),
        })
        .collect();
    let vocab = Vocabulary::default();
    let tokens: Vec<_> = vocab.encode(&score, &chords).map_err(|e| e.to_string())?.iter().map(to_codes).collect();
    let pce = PitchClassHistogram::from_score(&score).and_then(|h| quintuple_core::metrics::pce(&h).ok());
    let grooves: Vec<Vec<usize>> = (0..score.num_bars())
        .map(|b| groove(&score, b).map(|g| g.onsets()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mode = match key.mode {
        KeyMode::Major => "major",
        KeyMode::Minor => "minor",
    };
    Ok(json!({
        "key": format!("{} {mode}", PITCH_NAMES[key.tonic as usize]),
        "chords": rows,
        "tokens": tokens,
        "metrics": { "pce": pce, "sc": sc(&score).ok(), "gc": gc(&score).ok() },
        "grooves": grooves,
    })
    .to_string())
}

fn convention(name: &str) -> Result<LossConvention, String> {
    match name {
        "as_printed" => Ok(LossConvention::AsPrinted),
        "rsgan_standard" => Ok(LossConvention::RsganStandard),
        _ => Err(format!("unknown loss convention '{name}'")),
    }
}

/// Critic and generator losses for a single pair of scores, sampled at `n`
/// evenly spaced gaps `c_real − c_fake` in `[lo, hi]`.
pub fn loss_curves_json(lo: f64, hi: f64, n: usize, conv: &str) -> Result<String, String> {
    let conv = convention(conv)?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) || !(2..=2000).contains(&n) {
        return Err("need finite lo < hi and 2..=2000 points".into());
    }
    let mut gap = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        gap.push(x);
        d.push(loss_d(&[x], &[0.0], conv).map_err(|e| e.to_string())?);
        g.push(adversarial_g(&[x], &[0.0], conv).map_err(|e| e.to_string())?);
    }
    Ok(json!({ "gap": gap, "loss_d": d, "loss_g": g }).to_string())
}

/// Groove consistency of two bars given their onset positions.
pub fn groove_similarity(a: &[u32], b: &[u32]) -> Result<f64, String> {
    let pattern = |xs: &[u32]| {
        if let Some(&bad) = xs.iter().find(|&&p| p as usize >= GROOVE_POSITIONS) {
            return Err(format!("position {bad} is outside the bar (0..{GROOVE_POSITIONS})"));
        }
        Ok(GroovePattern::from_positions(&xs.iter().map(|&p| p as usize).collect::<Vec<_>>()))
    };
    Ok(gc_pair(&pattern(a)?, &pattern(b)?))
}

#[wasm_bindgen]
pub fn analyze(text: &str, qpm: f64) -> Result<String, JsValue> {
    analyze_json(text, qpm).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn loss_curves(lo: f64, hi: f64, n: usize, conv: &str) -> Result<String, JsValue> {
    loss_curves_json(lo, hi, n, conv).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn groove_consistency(a: Vec<u32>, b: Vec<u32>) -> Result<f64, JsValue> {
    groove_similarity(&a, &b).map_err(|e| JsValue::from_str(&e))
}
