//! Central-difference verification of the backward pass.
//!
//! The operation under test is rebuilt from scratch for every perturbed
//! evaluation, so the numeric route shares no state with the analytic one.
//! Everything runs in double precision.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{Tape, Var};
use crate::rng;
use crate::tensor::Tensor;

pub struct GradCheck {
    /// Central-difference step.
    pub h: f64,
    /// Cap on checked coordinates per input tensor; `None` checks all.
    pub max_coords: Option<usize>,
    /// Seed for the output weighting and coordinate subsampling.
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            h: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

/// Maximum relative error between the analytic gradient and a central
/// difference, normalized by `max(1, |analytic|)`.
///
/// `build` must construct the operation on the given tape from leaf vars in
/// the same order as `inputs`. The output is contracted with a fixed random
/// weighting so tensor-valued ops reduce to a scalar objective.
pub fn grad_check<F>(build: F, inputs: &[Tensor<f64>], cfg: &GradCheck) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |perturbed: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        if !tape.value(out).all_finite() {
            return Err(Error::NonFinite("grad_check forward output".into()));
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(inputs)?;
    let mut wrng = rng::stream(cfg.seed, "gradcheck-weights", 0);
    let weights = {
        let mut t = Tensor::zeros(tape.value(out).shape());
        for v in t.data_mut() {
            *v = wrng.gen_range(-1.0..1.0);
        }
        t
    };
    let objective = |t: &Tensor<f64>| -> f64 {
        t.data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum()
    };

    let grads = tape.backward_seeded(out, weights.clone());
    for (i, var) in vars.iter().enumerate() {
        if let Some(g) = grads.get(*var) {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("analytic gradient of input {i}")));
            }
        }
    }

    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let len = inputs[i].len();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(cap) if len > cap => {
                let mut crng = rng::stream(cfg.seed, "gradcheck-coords", i as u64);
                (0..cap).map(|_| crng.gen_range(0..len)).collect()
            }
            _ => (0..len).collect(),
        };
        for j in coords {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + cfg.h;
            let (tp, _, op) = eval(&work)?;
            let plus = objective(tp.value(op));
            work[i].data_mut()[j] = orig - cfg.h;
            let (tm, _, om) = eval(&work)?;
            let minus = objective(tm.value(om));
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.h);
            let a = analytic.data()[j];
            if !numeric.is_finite() {
                return Err(Error::NonFinite(format!("central difference at input {i}[{j}]")));
            }
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Activation;

    fn rand_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, "gc-test", 0);
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = r.gen_range(-1.0..1.0);
        }
        t
    }

    #[test]
    fn linear_conv_is_exact_to_roundoff() {
        let input = rand_tensor([1, 2, 5, 5], 1);
        let weight = rand_tensor([3, 2, 3, 3], 2);
        let err = grad_check(
            |tape, vars| tape.conv2d(vars[0], vars[1], None, 1, 1, 1),
            &[input, weight],
            &GradCheck::default(),
        )
        .unwrap();
        assert!(err < 1e-8, "err = {err:e}");
    }

    #[test]
    fn gelu_passes() {
        let input = rand_tensor([1, 2, 1, 3], 3);
        let err = grad_check(
            |tape, vars| Ok(tape.activation(vars[0], Activation::Gelu)),
            &[input],
            &GradCheck::default(),
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err:e}");
    }

    #[test]
    fn non_finite_forward_is_reported() {
        let mut input = rand_tensor([1, 1, 2, 2], 4);
        input.data_mut()[0] = f64::NAN;
        let got = grad_check(
            |tape, vars| Ok(tape.activation(vars[0], Activation::Gelu)),
            &[input],
            &GradCheck::default(),
        );
        assert!(matches!(got, Err(Error::NonFinite(_))));
    }
}
