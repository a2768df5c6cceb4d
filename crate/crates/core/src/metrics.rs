//! Objective metrics for generated music: pitch-class entropy, scale
//! consistency, groove consistency, their similarity to a reference corpus,
//! and average length.
//!
//! Corpus-level values are means of per-piece values. The similarity of a
//! generated statistic `g` to a reference statistic `r` is `1 - |g - r| / r`,
//! which is 1 for a perfect match and can go negative when `|g - r| > r`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{score_duration_seconds, Score, STEPS_PER_BAR};

/// Groove vector width; only the first [`GROOVE_POSITIONS`] entries can be set.
pub const GROOVE_DIM: usize = 64;
/// Onset positions per 4/4 bar at 12 steps per beat.
pub const GROOVE_POSITIONS: usize = STEPS_PER_BAR as usize;
pub const DEFAULT_K_SECONDS: f64 = 15.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("pitch-class histogram is empty")]
    EmptyHistogram,
    #[error("score has no notes")]
    EmptyScore,
    #[error("bar {bar} is outside a score of {bars} bars")]
    BarOutOfRange { bar: u32, bars: u32 },
    #[error("groove consistency needs at least two bars, got {0}")]
    TooFewBars(u32),
    #[error("no piece in the {0} set has a defined value")]
    EmptyCorpus(&'static str),
    #[error("reference statistic is zero")]
    ZeroReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchClassHistogram {
    pub h: [f64; 12],
}

impl PitchClassHistogram {
    /// Normalizes raw weights; `None` if they sum to zero.
    pub fn from_weights(w: [f64; 12]) -> Option<Self> {
        let total: f64 = w.iter().sum();
        (total > 0.0).then(|| Self { h: w.map(|x| x / total) })
    }

    pub fn from_score(score: &Score) -> Option<Self> {
        let mut w = [0.0; 12];
        for n in &score.notes {
            w[n.pitch_class()] += n.duration_steps as f64;
        }
        Self::from_weights(w)
    }

    /// Histogram of the first `seconds` of the score, clipping crossing notes.
    pub fn from_score_truncated(score: &Score, seconds: f64) -> Option<Self> {
        let mut w = [0.0; 12];
        for (n, len) in score.truncated_weights(seconds) {
            w[n.pitch_class()] += len;
        }
        Self::from_weights(w)
    }
}

/// Pitch-class entropy in bits, with 0 log 0 = 0.
pub fn pce(h: &PitchClassHistogram) -> Result<f64, MetricError> {
    let total: f64 = h.h.iter().sum();
    if total <= 0.0 {
        return Err(MetricError::EmptyHistogram);
    }
    Ok(-h.h.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>())
}

pub fn similarity(generated: f64, reference: f64) -> Result<f64, MetricError> {
    if reference == 0.0 {
        return Err(MetricError::ZeroReference);
    }
    Ok(1.0 - (generated - reference).abs() / reference)
}

fn mean_defined(values: impl IntoIterator<Item = Option<f64>>, set: &'static str) -> Result<f64, MetricError> {
    let (sum, n) = values.into_iter().flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        Err(MetricError::EmptyCorpus(set))
    } else {
        Ok(sum / n as f64)
    }
}

pub fn piece_pce(score: &Score, truncate_seconds: Option<f64>) -> Option<f64> {
    let h = match truncate_seconds {
        Some(k) => PitchClassHistogram::from_score_truncated(score, k)?,
        None => PitchClassHistogram::from_score(score)?,
    };
    pce(&h).ok()
}

/// Generated pieces are truncated to their first `k_seconds`; references are not.
pub fn pces(generated: &[Score], reference: &[Score], k_seconds: f64) -> Result<f64, MetricError> {
    let g = mean_defined(generated.iter().map(|s| piece_pce(s, Some(k_seconds))), "generated")?;
    let r = mean_defined(reference.iter().map(|s| piece_pce(s, None)), "reference")?;
    similarity(g, r)
}

/// Candidate scales for scale consistency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSet {
    /// 12 major and 12 harmonic minor scales.
    #[default]
    MajorHarmonicMinor,
    /// 12 major and 12 melodic minor (ascending) scales.
    MajorMelodicMinor,
}

impl ScaleSet {
    fn patterns(self) -> [[u8; 7]; 2] {
        let minor = match self {
            ScaleSet::MajorHarmonicMinor => [0, 2, 3, 5, 7, 8, 11],
            ScaleSet::MajorMelodicMinor => [0, 2, 3, 5, 7, 9, 11],
        };
        [[0, 2, 4, 5, 7, 9, 11], minor]
    }

    /// All 24 scales as pitch-class membership masks.
    pub fn masks(self) -> Vec<[bool; 12]> {
        let mut out = Vec::with_capacity(24);
        for pattern in self.patterns() {
            for tonic in 0..12 {
                let mut m = [false; 12];
                for &i in &pattern {
                    m[(i as usize + tonic) % 12] = true;
                }
                out.push(m);
            }
        }
        out
    }
}

/// Largest duration-weighted fraction of notes that fall in a single scale.
pub fn sc_with(score: &Score, scales: ScaleSet) -> Result<f64, MetricError> {
    let mut w = [0.0; 12];
    for n in &score.notes {
        w[n.pitch_class()] += n.duration_steps as f64;
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(MetricError::EmptyScore);
    }
    Ok(scales
        .masks()
        .iter()
        .map(|m| (0..12).filter(|&i| m[i]).map(|i| w[i]).sum::<f64>() / total)
        .fold(0.0, f64::max))
}

pub fn sc(score: &Score) -> Result<f64, MetricError> {
    sc_with(score, ScaleSet::default())
}

pub fn scs(generated: &[Score], reference: &[Score]) -> Result<f64, MetricError> {
    scs_with(generated, reference, ScaleSet::default())
}

pub fn scs_with(generated: &[Score], reference: &[Score], scales: ScaleSet) -> Result<f64, MetricError> {
    let g = mean_defined(generated.iter().map(|s| sc_with(s, scales).ok()), "generated")?;
    let r = mean_defined(reference.iter().map(|s| sc_with(s, scales).ok()), "reference")?;
    similarity(g, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroovePattern {
    pub g: [bool; GROOVE_DIM],
}

impl GroovePattern {
    pub fn from_positions(positions: &[usize]) -> Self {
        let mut g = [false; GROOVE_DIM];
        for &p in positions {
            assert!(p < GROOVE_POSITIONS, "groove position {p} beyond the bar");
            g[p] = true;
        }
        Self { g }
    }

    pub fn onsets(&self) -> Vec<usize> {
        (0..GROOVE_DIM).filter(|&i| self.g[i]).collect()
    }
}

/// Onset positions of one bar.
pub fn groove(score: &Score, bar: u32) -> Result<GroovePattern, MetricError> {
    let bars = score.num_bars();
    if bar >= bars {
        return Err(MetricError::BarOutOfRange { bar, bars });
    }
    let start = bar * STEPS_PER_BAR;
    let mut g = [false; GROOVE_DIM];
    for n in &score.notes {
        if (start..start + STEPS_PER_BAR).contains(&n.onset_step) {
            g[(n.onset_step - start) as usize] = true;
        }
    }
    Ok(GroovePattern { g })
}

/// One minus the normalized Hamming distance over the 48 bar positions.
pub fn gc_pair(a: &GroovePattern, b: &GroovePattern) -> f64 {
    let diff = (0..GROOVE_POSITIONS).filter(|&i| a.g[i] != b.g[i]).count();
    1.0 - diff as f64 / GROOVE_POSITIONS as f64
}

/// Mean groove consistency over consecutive bar pairs.
pub fn gc(score: &Score) -> Result<f64, MetricError> {
    let bars = score.num_bars();
    if bars < 2 {
        return Err(MetricError::TooFewBars(bars));
    }
    let patterns: Vec<_> = (0..bars).map(|b| groove(score, b)).collect::<Result<_, _>>()?;
    let sum: f64 = patterns.windows(2).map(|w| gc_pair(&w[0], &w[1])).sum();
    Ok(sum / (bars - 1) as f64)
}

pub fn gcs(generated: &[Score], reference: &[Score]) -> Result<f64, MetricError> {
    let g = mean_defined(generated.iter().map(|s| gc(s).ok()), "generated")?;
    let r = mean_defined(reference.iter().map(|s| gc(s).ok()), "reference")?;
    similarity(g, r)
}

/// Mean piece duration in seconds (0 for an empty set).
pub fn al(pieces: &[Score]) -> f64 {
    if pieces.is_empty() {
        return 0.0;
    }
    pieces.iter().map(score_duration_seconds).sum::<f64>() / pieces.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceMetrics {
    pub id: String,
    /// Truncated to `k_seconds` for generated pieces.
    pub pce: Option<f64>,
    pub sc: Option<f64>,
    pub gc: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pces: f64,
    pub scs: f64,
    pub gcs: f64,
    pub al_seconds: f64,
    pub k_seconds: f64,
    pub generated: Vec<PieceMetrics>,
    pub reference: Vec<PieceMetrics>,
}

fn piece_metrics(id: &str, score: &Score, truncate: Option<f64>, scales: ScaleSet) -> PieceMetrics {
    PieceMetrics {
        id: id.to_string(),
        pce: piece_pce(score, truncate),
        sc: sc_with(score, scales).ok(),
        gc: gc(score).ok(),
        seconds: score_duration_seconds(score),
    }
}

/// Full report. Pieces are processed in the given order so sums are
/// reproducible. AL is measured on the generated set.
pub fn evaluate(
    generated: &[(String, Score)],
    reference: &[(String, Score)],
    k_seconds: f64,
    scales: ScaleSet,
) -> Result<MetricReport, MetricError> {
    let gen: Vec<_> = generated.iter().map(|(id, s)| piece_metrics(id, s, Some(k_seconds), scales)).collect();
    let refs: Vec<_> = reference.iter().map(|(id, s)| piece_metrics(id, s, None, scales)).collect();
    let stat = |set: &[PieceMetrics], f: fn(&PieceMetrics) -> Option<f64>, name| {
        mean_defined(set.iter().map(f), name)
    };
    let pces = similarity(stat(&gen, |p| p.pce, "generated")?, stat(&refs, |p| p.pce, "reference")?)?;
    let scs = similarity(stat(&gen, |p| p.sc, "generated")?, stat(&refs, |p| p.sc, "reference")?)?;
    let gcs = similarity(stat(&gen, |p| p.gc, "generated")?, stat(&refs, |p| p.gc, "reference")?)?;
    let scores: Vec<Score> = generated.iter().map(|(_, s)| s.clone()).collect();
    Ok(MetricReport { pces, scs, gcs, al_seconds: al(&scores), k_seconds, generated: gen, reference: refs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Note;

    fn hist(w: [f64; 12]) -> PitchClassHistogram {
        PitchClassHistogram::from_weights(w).unwrap()
    }

    #[test]
    fn pce_cases() {
        assert!((pce(&hist([1.0; 12])).unwrap() - 12f64.log2()).abs() < 1e-12);
        let mut one = [0.0; 12];
        one[3] = 5.0;
        assert_eq!(pce(&hist(one)).unwrap(), 0.0);
        let mut two = [0.0; 12];
        two[0] = 1.0;
        two[1] = 1.0;
        assert!((pce(&hist(two)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pce(&PitchClassHistogram { h: [0.0; 12] }), Err(MetricError::EmptyHistogram));
        assert!(PitchClassHistogram::from_weights([0.0; 12]).is_none());
    }

    #[test]
    fn similarity_form() {
        assert_eq!(similarity(2.0, 4.0).unwrap(), 0.5);
        assert_eq!(similarity(4.0, 4.0).unwrap(), 1.0);
        assert_eq!(similarity(9.0, 4.0).unwrap(), -0.25);
        assert_eq!(similarity(1.0, 0.0), Err(MetricError::ZeroReference));
    }

    fn score(notes: &[(u32, u32, u8)]) -> Score {
        Score::from_notes(notes.iter().map(|&(o, d, p)| Note::new(o, d, p, 0)), 120.0)
    }

    #[test]
    fn pces_identity_and_errors() {
        let a = score(&[(0, 12, 60), (12, 12, 62), (24, 24, 67)]);
        let set = vec![a.clone(), a];
        assert!((pces(&set, &set, 15.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pces(&[], &set, 15.0), Err(MetricError::EmptyCorpus("generated")));
        let mono = vec![score(&[(0, 12, 60)])];
        assert_eq!(pces(&set, &mono, 15.0), Err(MetricError::ZeroReference));
    }

    #[test]
    fn pces_arithmetic() {
        // generated: {C}, {C,D}, {C,D,E,F}: entropies 0, 1, 2 -> mean 1
        // reference: {C,D,E,F}, all 12 pcs: entropies 2, log2 12
        let gen = vec![
            score(&[(0, 12, 60)]),
            score(&[(0, 12, 60), (12, 12, 62)]),
            score(&[(0, 12, 60), (12, 12, 62), (24, 12, 64), (36, 12, 65)]),
        ];
        let refs = vec![
            score(&[(0, 12, 60), (12, 12, 62), (24, 12, 64), (36, 12, 65)]),
            score(&(0..12).map(|i| (i * 12, 12, 60 + i as u8)).collect::<Vec<_>>()),
        ];
        let r = (2.0 + 12f64.log2()) / 2.0;
        let expected = 1.0 - (1.0 - r).abs() / r;
        assert!((pces(&gen, &refs, 15.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn pces_truncates_generated_only() {
        // 120 qpm, k = 1 s = 24 steps: the generated piece keeps only C
        let long = score(&[(0, 24, 60), (24, 24, 62)]);
        let gen = vec![long.clone()];
        let refs = vec![long];
        assert_eq!(pces(&gen, &refs, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn sc_cases() {
        let white = score(&[(0, 12, 60), (0, 24, 62), (0, 5, 64), (0, 12, 65), (0, 12, 67), (0, 3, 69), (0, 12, 71)]);
        assert_eq!(sc(&white).unwrap(), 1.0);
        let chromatic = score(&(0..12).map(|i| (0, 12, 60 + i as u8)).collect::<Vec<_>>());
        assert!((sc(&chromatic).unwrap() - 7.0 / 12.0).abs() < 1e-12);
        assert_eq!(sc(&white.transposed(5)).unwrap(), 1.0);
        assert_eq!(sc(&Score::default()), Err(MetricError::EmptyScore));
    }

    #[test]
    fn scs_arithmetic() {
        // generated SCs: 1 and 7/12; reference SC: 1
        let white = score(&[(0, 12, 60), (0, 12, 62)]);
        let chromatic = score(&(0..12).map(|i| (0, 12, 60 + i as u8)).collect::<Vec<_>>());
        let g = (1.0 + 7.0 / 12.0) / 2.0;
        let v = scs(&[white.clone(), chromatic], &[white]).unwrap();
        assert!((v - g).abs() < 1e-12);
    }

    #[test]
    fn groove_cases() {
        let s = score(&[(0, 12, 60), (24, 12, 64), (48, 12, 60), (60, 12, 60), (72, 12, 60), (84, 12, 60)]);
        assert_eq!(groove(&s, 0).unwrap().onsets(), vec![0, 24]);
        assert_eq!(groove(&s, 1).unwrap().onsets(), vec![0, 12, 24, 36]);
        assert!(matches!(groove(&s, 2), Err(MetricError::BarOutOfRange { .. })));
        let mut silent = s.clone();
        silent.num_beats = 12;
        assert!(groove(&silent, 2).unwrap().onsets().is_empty());
    }

    #[test]
    fn gc_pair_cases() {
        let a = GroovePattern::from_positions(&[0, 12, 24, 36]);
        assert_eq!(gc_pair(&a, &a), 1.0);
        let all = GroovePattern::from_positions(&(0..48).collect::<Vec<_>>());
        let none = GroovePattern::from_positions(&[]);
        assert_eq!(gc_pair(&all, &none), 0.0);
        let twelve = GroovePattern::from_positions(&(0..12).collect::<Vec<_>>());
        assert_eq!(gc_pair(&twelve, &none), 0.75);
        assert_eq!(gc_pair(&twelve, &a), gc_pair(&a, &twelve));
    }

    #[test]
    fn gc_cases() {
        let repeated = score(&(0..4).flat_map(|b| [(b * 48, 12, 60), (b * 48 + 24, 12, 67)]).collect::<Vec<_>>());
        assert_eq!(gc(&repeated).unwrap(), 1.0);
        // bars: {0}, {0, 12}, {0..12}; pairs differ in 1 and 12 positions
        let mut notes = vec![(0, 6, 60), (48, 6, 60), (60, 6, 60)];
        notes.extend((0..12).map(|i| (96 + i, 1, 62)));
        let three = score(&notes);
        let expected = ((1.0 - 1.0 / 48.0) + (1.0 - 12.0 / 48.0)) / 2.0;
        assert!((gc(&three).unwrap() - expected).abs() < 1e-15);
        assert_eq!(gc(&score(&[(0, 12, 60)])), Err(MetricError::TooFewBars(1)));
    }

    #[test]
    fn al_cases() {
        // 120 qpm: 10 s = 240 steps
        let ten = score(&[(0, 240, 60)]);
        let twenty = score(&[(0, 480, 60)]);
        assert_eq!(al(std::slice::from_ref(&ten)), 10.0);
        assert_eq!(al(&[ten, twenty]), 15.0);
        assert_eq!(al(&[]), 0.0);
    }

    #[test]
    fn report_identity() {
        let s = score(&[(0, 12, 60), (24, 12, 64), (48, 12, 67), (60, 12, 71)]);
        let set = vec![("a".to_string(), s.clone()), ("b".to_string(), s.transposed(3))];
        let r = evaluate(&set, &set, 100.0, ScaleSet::default()).unwrap();
        assert!((r.pces - 1.0).abs() < 1e-12);
        assert_eq!((r.scs, r.gcs), (1.0, 1.0));
        assert_eq!(r.generated.len(), 2);
    }
}
