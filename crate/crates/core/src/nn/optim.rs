use std::collections::BTreeMap;

use super::matrix::DenseMatrix;
use super::{NnError, ParamBank};

pub const ADAGRAD_EPS: f64 = 1e-8;

/// Parameters, their Adagrad accumulators and the update count.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: ParamBank,
    pub accum: ParamBank,
    pub step: u64,
}

impl ModelState {
    pub fn new(params: ParamBank) -> Self {
        let accum = params.iter().map(|(k, m)| (k.clone(), DenseMatrix::zeros(m.rows(), m.cols()))).collect();
        Self { params, accum, step: 0 }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(DenseMatrix::len).sum()
    }
}

/// `acc += g²; p -= lr · g / (√acc + eps)` for every parameter named in
/// `grads`. Shapes are checked before anything is modified.
pub fn adagrad_step(
    state: &mut ModelState,
    grads: &BTreeMap<String, DenseMatrix>,
    lr: f64,
    eps: f64,
) -> Result<(), NnError> {
    for (name, g) in grads {
        let p = state.params.get(name).ok_or_else(|| NnError::MissingParam(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(NnError::ShapeMismatch { name: name.clone(), expected: p.shape(), got: g.shape() });
        }
    }
    for (name, g) in grads {
        let acc = state.accum.get_mut(name).expect("accumulator mirrors parameters");
        let p = state.params.get_mut(name).expect("checked above");
        for ((pv, av), &gv) in p.data_mut().iter_mut().zip(acc.data_mut()).zip(g.data()) {
            *av += gv * gv;
            *pv -= lr * gv / (av.sqrt() + eps);
        }
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> ModelState {
        let mut bank = ParamBank::new();
        bank.insert("w".into(), DenseMatrix::from_rows(&[vec![1.0, -2.0, 0.5]]));
        ModelState::new(bank)
    }

    fn grads(v: Vec<f64>) -> BTreeMap<String, DenseMatrix> {
        BTreeMap::from([("w".to_string(), DenseMatrix::from_vec(1, 3, v))])
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = state();
        let before = s.params.clone();
        adagrad_step(&mut s, &grads(vec![0.0; 3]), 0.1, ADAGRAD_EPS).unwrap();
        assert_eq!(s.params, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_follows_formula() {
        let mut s = state();
        let before = s.params["w"].clone();
        let g = vec![0.3, -4.0, 1e-3];
        adagrad_step(&mut s, &grads(g.clone()), 0.1, ADAGRAD_EPS).unwrap();
        for j in 0..3 {
            let delta = s.params["w"].data()[j] - before.data()[j];
            let want = -0.1 * g[j] / (g[j].abs() + ADAGRAD_EPS);
            assert!((delta - want).abs() < 1e-15, "{delta} vs {want}");
            assert_eq!(s.accum["w"].data()[j], g[j] * g[j]);
        }
    }

    #[test]
    fn repeated_gradient_shrinks_steps() {
        let mut s = state();
        let g = grads(vec![0.5, 0.5, 0.5]);
        let p0 = s.params["w"].data()[0];
        adagrad_step(&mut s, &g, 0.1, ADAGRAD_EPS).unwrap();
        let p1 = s.params["w"].data()[0];
        adagrad_step(&mut s, &g, 0.1, ADAGRAD_EPS).unwrap();
        let p2 = s.params["w"].data()[0];
        assert!((p2 - p1).abs() < (p1 - p0).abs());
        assert!(s.accum["w"].data().iter().all(|&a| a >= 0.0));
    }

    #[test]
    fn shape_mismatch_leaves_state_untouched() {
        let mut s = state();
        let before = s.clone();
        let bad = BTreeMap::from([("w".to_string(), DenseMatrix::zeros(3, 1))]);
        assert!(matches!(adagrad_step(&mut s, &bad, 0.1, ADAGRAD_EPS), Err(NnError::ShapeMismatch { .. })));
        assert_eq!(s, before);
        let unknown = BTreeMap::from([("x".to_string(), DenseMatrix::zeros(1, 3))]);
        assert!(matches!(adagrad_step(&mut s, &unknown, 0.1, ADAGRAD_EPS), Err(NnError::MissingParam(_))));
    }
}
