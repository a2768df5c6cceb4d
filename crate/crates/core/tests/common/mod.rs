//! Fixtures and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use quintuple_core::chord::pitch_class_weights;
use quintuple_core::score::{Note, Score, STEPS_PER_BAR};
use quintuple_core::token::DEFAULT_DURATIONS;
use rand::Rng;

/// Random 4/4 score with `1..=max_notes` notes inside `max_bars` bars.
/// Pitches stay in 36..=96 so any shift in -5..=6 keeps every note.
pub fn random_score(rng: &mut impl Rng, max_bars: u32, max_notes: usize) -> Score {
    let bars = rng.gen_range(1..=max_bars);
    let n = rng.gen_range(1..=max_notes);
    let notes: Vec<Note> = (0..n)
        .map(|_| {
            let onset = rng.gen_range(0..bars * STEPS_PER_BAR);
            let dur = DEFAULT_DURATIONS[rng.gen_range(0..DEFAULT_DURATIONS.len())];
            Note::new(onset, dur, rng.gen_range(36..=96), rng.gen_range(0..3))
        })
        .collect();
    Score::from_notes(notes, 120.0)
}

pub fn rotation_symmetric(w: &[f64; 12]) -> bool {
    (1..12).any(|r| (0..12).all(|i| w[i] == w[(i + r) % 12]))
}

/// Whether chord analysis of `score` can be transposition covariant at all:
/// a histogram that equals a rotation of itself leaves any deterministic
/// tie-break unable to follow the shift.
pub fn covariance_applicable(score: &Score) -> bool {
    if rotation_symmetric(&pitch_class_weights(score, 0, u32::MAX)) {
        return false;
    }
    (0..score.num_bars()).all(|b| {
        let w = pitch_class_weights(score, b * STEPS_PER_BAR, (b + 1) * STEPS_PER_BAR);
        w.iter().all(|&x| x == 0.0) || !rotation_symmetric(&w)
    })
}

// ---- naive metric recomputations, written without the library code ----

fn pc_durations(score: &Score) -> Vec<f64> {
    let mut w = vec![0.0; 12];
    for n in &score.notes {
        let mut pc = n.pitch as i32;
        while pc >= 12 {
            pc -= 12;
        }
        w[pc as usize] += n.duration_steps as f64;
    }
    w
}

pub fn naive_pce(score: &Score) -> Option<f64> {
    let w = pc_durations(score);
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        return None;
    }
    let mut e = 0.0;
    for x in w {
        if x > 0.0 {
            let p = x / total;
            e -= p * p.ln() / 2f64.ln();
        }
    }
    Some(e)
}

pub fn naive_sc(score: &Score) -> Option<f64> {
    let w = pc_durations(score);
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        return None;
    }
    let major_steps = [2, 2, 1, 2, 2, 2, 1];
    let harmonic_minor_steps = [2, 1, 2, 2, 1, 3, 1];
    let mut best: f64 = 0.0;
    for steps in [major_steps, harmonic_minor_steps] {
        for tonic in 0..12 {
            let mut pcs = Vec::new();
            let mut p = tonic;
            for s in steps {
                pcs.push(p % 12);
                p += s;
            }
            let inside: f64 = pcs.iter().map(|&pc| w[pc]).sum();
            best = best.max(inside / total);
        }
    }
    Some(best)
}

pub fn naive_gc(score: &Score) -> Option<f64> {
    let end = score.notes.iter().map(|n| n.onset_step + n.duration_steps).max()?;
    let bars = end.div_ceil(STEPS_PER_BAR);
    if bars < 2 {
        return None;
    }
    let onsets = |bar: u32| -> Vec<u32> {
        let mut v: Vec<u32> = score
            .notes
            .iter()
            .filter(|n| n.onset_step / STEPS_PER_BAR == bar)
            .map(|n| n.onset_step - bar * STEPS_PER_BAR)
            .collect();
        v.sort();
        v.dedup();
        v
    };
    let mut total = 0.0;
    for b in 0..bars - 1 {
        let (x, y) = (onsets(b), onsets(b + 1));
        let differing = x.iter().filter(|p| !y.contains(p)).count() + y.iter().filter(|p| !x.contains(p)).count();
        total += 1.0 - differing as f64 / 48.0;
    }
    Some(total / (bars - 1) as f64)
}
