use std::collections::BTreeMap;

use rand::Rng;

use super::matrix::DenseMatrix;
use super::{NnError, ParamBank};

/// Perturbation is `RELATIVE_STEP · max(|p|, 1)`.
pub const RELATIVE_STEP: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
pub const ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// (parameter, flat index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares `analytic` against central differences of `loss_fn` on up to
/// `samples` randomly chosen scalar parameters.
pub fn grad_check(
    loss_fn: impl Fn(&ParamBank) -> Result<f64, NnError>,
    params: &ParamBank,
    analytic: &BTreeMap<String, DenseMatrix>,
    samples: usize,
    tolerance: f64,
    rng: &mut impl Rng,
) -> Result<GradCheckReport, NnError> {
    let base = loss_fn(params)?;
    if !base.is_finite() {
        return Err(NnError::NonFiniteLoss(base));
    }
    let names: Vec<&String> = params.keys().collect();
    let offsets: Vec<usize> = names
        .iter()
        .scan(0, |acc, n| {
            let start = *acc;
            *acc += params[*n].len();
            Some(start)
        })
        .collect();
    let total: usize = params.values().map(DenseMatrix::len).sum();
    let mut picks = rand::seq::index::sample(rng, total, samples.min(total)).into_vec();
    picks.sort_unstable();

    let mut work = params.clone();
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: None, tolerance };
    for flat in picks {
        let which = offsets.partition_point(|&o| o <= flat) - 1;
        let name = names[which];
        let idx = flat - offsets[which];
        let p = params[name].data()[idx];
        let h = RELATIVE_STEP * p.abs().max(1.0);

        work.get_mut(name).unwrap().data_mut()[idx] = p + h;
        let plus = loss_fn(&work)?;
        work.get_mut(name).unwrap().data_mut()[idx] = p - h;
        let minus = loss_fn(&work)?;
        work.get_mut(name).unwrap().data_mut()[idx] = p;
        for v in [plus, minus] {
            if !v.is_finite() {
                return Err(NnError::NonFiniteLoss(v));
            }
        }

        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.get(name.as_str()).map_or(0.0, |g| g.data()[idx]);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ERROR_FLOOR);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((name.clone(), idx, a, numeric));
        }
    }
    Ok(report)
}
