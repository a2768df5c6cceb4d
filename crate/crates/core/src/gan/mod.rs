//! Relativistic standard GAN over quintuple token sequences: losses, the
//! adversarial training step, sampling and a small synthetic corpus.

use serde::{Deserialize, Serialize};

use crate::nn::tape::{log_sigmoid, sigmoid, Tape, Var};
use crate::nn::{DenseMatrix, NnError};
use crate::token::CodeRow;

mod corpus;
mod sample;
mod train;

pub use corpus::{synthetic_corpus, SYNTHETIC_PIECES};
pub use sample::{generate, sample_index};
pub use train::{batch_losses, train, train_step, BatchLosses, GanState, TrainConfig, TrainLog};

#[derive(Debug, thiserror::Error)]
pub enum GanError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Which player minimizes which sign of the relativistic term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossConvention {
    /// `L_D = E[log σ(C(f) − C(r))]`, `L_G = E[log σ(C(r) − C(f))] + CE`,
    /// both minimized exactly as written.
    AsPrinted,
    /// `L_D = −E[log σ(C(r) − C(f))]`, `L_G = −E[log σ(C(f) − C(r))] + CE`.
    #[default]
    RsganStandard,
}

impl LossConvention {
    /// (sign, first-is-real) for the critic and generator terms.
    fn d_term(self) -> (f64, bool) {
        match self {
            LossConvention::AsPrinted => (1.0, false),
            LossConvention::RsganStandard => (-1.0, true),
        }
    }

    fn g_term(self) -> (f64, bool) {
        match self {
            LossConvention::AsPrinted => (1.0, true),
            LossConvention::RsganStandard => (-1.0, false),
        }
    }
}

/// Probability that the fake sample is more realistic than the real one:
/// `σ(c_fake − c_real)`.
pub fn relativistic_d(c_fake: f64, c_real: f64) -> f64 {
    sigmoid(c_fake - c_real)
}

/// `sign · mean_i log σ(a_i − b_i)` over paired 1×1 nodes.
fn relativistic_term(tape: &mut Tape, a: &[Var], b: &[Var], sign: f64) -> Result<Var, GanError> {
    if a.is_empty() {
        return Err(GanError::EmptyBatch);
    }
    if a.len() != b.len() {
        return Err(GanError::ShapeMismatch(format!("{} real scores vs {} fake", a.len(), b.len())));
    }
    let a = tape.concat_rows(a);
    let b = tape.concat_rows(b);
    let diff = tape.sub(a, b);
    let ls = tape.log_sigmoid(diff);
    let mean = tape.mean_all(ls);
    Ok(tape.affine(mean, sign, 0.0))
}

pub fn loss_d_node(tape: &mut Tape, c_reals: &[Var], c_fakes: &[Var], conv: LossConvention) -> Result<Var, GanError> {
    let (sign, real_first) = conv.d_term();
    if real_first {
        relativistic_term(tape, c_reals, c_fakes, sign)
    } else {
        relativistic_term(tape, c_fakes, c_reals, sign)
    }
}

pub fn adversarial_g_node(tape: &mut Tape, c_reals: &[Var], c_fakes: &[Var], conv: LossConvention) -> Result<Var, GanError> {
    let (sign, real_first) = conv.g_term();
    if real_first {
        relativistic_term(tape, c_reals, c_fakes, sign)
    } else {
        relativistic_term(tape, c_fakes, c_reals, sign)
    }
}

/// Cross-entropy of `logits` against `targets`, summed over the six fields
/// and averaged over positions.
pub fn cross_entropy_node(tape: &mut Tape, logits: &[Var; 6], targets: &[CodeRow]) -> Result<Var, GanError> {
    if targets.is_empty() {
        return Err(GanError::EmptyBatch);
    }
    let mut total: Option<Var> = None;
    for (k, &l) in logits.iter().enumerate() {
        let (rows, width) = tape.value(l).shape();
        if rows != targets.len() {
            return Err(GanError::ShapeMismatch(format!("field {k}: {rows} logit rows vs {} targets", targets.len())));
        }
        let idx: Vec<usize> = targets.iter().map(|t| t[k] as usize).collect();
        if let Some(&bad) = idx.iter().find(|&&i| i >= width) {
            return Err(GanError::ShapeMismatch(format!("field {k}: target {bad} outside width {width}")));
        }
        let ce = tape.cross_entropy(l, &idx);
        total = Some(match total {
            None => ce,
            Some(t) => tape.add(t, ce),
        });
    }
    Ok(total.expect("six fields"))
}

fn scalars(tape: &mut Tape, xs: &[f64]) -> Vec<Var> {
    xs.iter().map(|&x| tape.constant(DenseMatrix::filled(1, 1, x))).collect()
}

/// Critic loss on paired scores.
pub fn loss_d(c_reals: &[f64], c_fakes: &[f64], conv: LossConvention) -> Result<f64, GanError> {
    let mut tape = Tape::new();
    let (r, f) = (scalars(&mut tape, c_reals), scalars(&mut tape, c_fakes));
    let l = loss_d_node(&mut tape, &r, &f, conv)?;
    Ok(tape.scalar(l))
}

/// The relativistic part of the generator loss alone.
pub fn adversarial_g(c_reals: &[f64], c_fakes: &[f64], conv: LossConvention) -> Result<f64, GanError> {
    let mut tape = Tape::new();
    let (r, f) = (scalars(&mut tape, c_reals), scalars(&mut tape, c_fakes));
    let l = adversarial_g_node(&mut tape, &r, &f, conv)?;
    Ok(tape.scalar(l))
}

/// Generator loss: the relativistic term plus `ce_weight` times the
/// teacher-forced cross-entropy of `logits` against `targets`.
pub fn loss_g(
    c_reals: &[f64],
    c_fakes: &[f64],
    targets: &[CodeRow],
    logits: &[DenseMatrix; 6],
    conv: LossConvention,
    ce_weight: f64,
) -> Result<f64, GanError> {
    let mut tape = Tape::new();
    let (r, f) = (scalars(&mut tape, c_reals), scalars(&mut tape, c_fakes));
    let adv = adversarial_g_node(&mut tape, &r, &f, conv)?;
    let l: [Var; 6] = std::array::from_fn(|k| tape.constant(logits[k].clone()));
    let ce = cross_entropy_node(&mut tape, &l, targets)?;
    let ce = tape.affine(ce, ce_weight, 0.0);
    let total = tape.add(adv, ce);
    Ok(tape.scalar(total))
}

/// `mean log σ(a − b)` in plain arithmetic, for callers without a tape.
pub fn mean_log_sigmoid_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| log_sigmoid(x - y)).sum::<f64>() / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::softmax_rows;

    const LN3: f64 = 1.098_612_288_668_109_8;

    #[test]
    fn relativistic_d_values() {
        assert_eq!(relativistic_d(0.7, 0.7), 0.5);
        assert!((relativistic_d(LN3, 0.0) - 0.75).abs() < 1e-15);
        for (a, b) in [(0.3, -1.2), (5.0, 5.5), (-30.0, 2.0)] {
            assert!((relativistic_d(a, b) + relativistic_d(b, a) - 1.0).abs() < 1e-12);
            assert!((relativistic_d(a + 3.7, b + 3.7) - relativistic_d(a, b)).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_d_printed_values() {
        let c = LossConvention::AsPrinted;
        assert!((loss_d(&[0.0, 2.0], &[0.0, 2.0], c).unwrap() - 0.5f64.ln()).abs() < 1e-12);
        let mixed = loss_d(&[0.0, 0.0], &[0.0, LN3], c).unwrap();
        assert!((mixed - (0.5f64.ln() + 0.75f64.ln()) / 2.0).abs() < 1e-12);
        assert!(loss_d(&[0.0], &[-800.0], c).unwrap() < -700.0);
    }

    #[test]
    fn conventions_share_magnitudes() {
        let (r, f) = ([0.2, -1.0, 3.0], [1.5, 0.0, 2.5]);
        let printed = loss_d(&r, &f, LossConvention::AsPrinted).unwrap();
        let standard = loss_d(&r, &f, LossConvention::RsganStandard).unwrap();
        assert!((printed - mean_log_sigmoid_gap(&f, &r)).abs() < 1e-12);
        assert!((standard + mean_log_sigmoid_gap(&r, &f)).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance() {
        let (r, f) = ([0.2, -1.0], [1.5, 0.0]);
        let (rs, fs) = (r.map(|x| x + 11.0), f.map(|x| x + 11.0));
        for c in [LossConvention::AsPrinted, LossConvention::RsganStandard] {
            assert!((loss_d(&r, &f, c).unwrap() - loss_d(&rs, &fs, c).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_and_mismatched_batches() {
        assert!(matches!(loss_d(&[], &[], LossConvention::AsPrinted), Err(GanError::EmptyBatch)));
        assert!(matches!(loss_d(&[1.0], &[1.0, 2.0], LossConvention::AsPrinted), Err(GanError::ShapeMismatch(_))));
    }

    fn uniform_logits(n: usize, widths: [usize; 6]) -> [DenseMatrix; 6] {
        widths.map(|w| DenseMatrix::zeros(n, w))
    }

    #[test]
    fn loss_g_uniform_and_perfect() {
        let widths = [3, 4, 5, 2, 2, 7];
        let targets = [[1, 2, 3, 0, 1, 6], [2, 0, 4, 1, 1, 0]];
        let want = 0.5f64.ln() + widths.iter().map(|&w| (w as f64).ln()).sum::<f64>();
        let got = loss_g(&[1.0], &[1.0], &targets, &uniform_logits(2, widths), LossConvention::AsPrinted, 1.0).unwrap();
        assert!((got - want).abs() < 1e-12);

        let mut sharp = uniform_logits(2, widths);
        for (k, m) in sharp.iter_mut().enumerate() {
            for (i, t) in targets.iter().enumerate() {
                m[(i, t[k] as usize)] = 1e3;
            }
        }
        let got = loss_g(&[1.0], &[1.0], &targets, &sharp, LossConvention::AsPrinted, 1.0).unwrap();
        assert!((got - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_g_matches_scalar_recomputation() {
        let widths = [2, 3, 2, 2, 2, 2];
        let logits: [DenseMatrix; 6] = std::array::from_fn(|k| {
            DenseMatrix::from_vec(2, widths[k], (0..2 * widths[k]).map(|i| (i as f64 * 0.7 + k as f64).sin()).collect())
        });
        let targets = [[1, 2, 0, 1, 0, 1], [0, 0, 1, 1, 1, 0]];
        let (r, f) = ([0.4, -0.3], [0.1, 0.9]);
        let mut ce = 0.0;
        for (k, m) in logits.iter().enumerate() {
            let p = softmax_rows(m, false);
            ce += (0..2).map(|i| -p[(i, targets[i][k] as usize)].ln()).sum::<f64>() / 2.0;
        }
        for (conv, adv) in [
            (LossConvention::AsPrinted, mean_log_sigmoid_gap(&r, &f)),
            (LossConvention::RsganStandard, -mean_log_sigmoid_gap(&f, &r)),
        ] {
            let got = loss_g(&r, &f, &targets, &logits, conv, 0.5).unwrap();
            assert!((got - (adv + 0.5 * ce)).abs() < 1e-12);
        }
        let short = [[0; 6]];
        assert!(matches!(loss_g(&r, &f, &short, &logits, LossConvention::AsPrinted, 1.0), Err(GanError::ShapeMismatch(_))));
    }
}
