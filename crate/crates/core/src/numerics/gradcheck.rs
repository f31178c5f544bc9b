//! Central finite differences against the tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Finite-difference step for `f64` inputs.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of [`grad_check`]. Failures are reported here, not raised.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest |analytic − numeric| over every checked element.
    pub max_abs_error: f64,
    /// Largest per-input relative error (see [`grad_check`]).
    pub max_rel_error: f64,
    pub per_input_rel_error: Vec<f64>,
    /// (input, element) with the largest relative error.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compare reverse-mode gradients of `f` with central differences.
///
/// The output of `f` is reduced to a scalar by a fixed random projection.
/// For input `i` the relative error is
/// `max_j |a_j − n_j| / max(peak_i, 1e-3·peak)` where `peak_i` is the largest
/// gradient magnitude of that input and `peak` the largest over all inputs,
/// so inputs with negligible gradients are judged against the overall scale.
pub fn grad_check<F>(f: F, inputs: &[Tensor], tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_sampled(f, inputs, tol, usize::MAX)
}

/// [`grad_check`] restricted to at most `per_input` evenly spaced elements of
/// each input, for models too large to difference exhaustively.
pub fn grad_check_sampled<F>(f: F, inputs: &[Tensor], tol: f64, per_input: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_9ad);
    let proj = Tensor::from_fn(g.value(out).shape(), |_| rng.gen_range(-1.0..1.0));
    let grads = g.backward_with(out, &proj)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
    drop(g);

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).dot(&proj))
    };

    let picks: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            let n = t.len();
            if n <= per_input {
                (0..n).collect()
            } else {
                (0..per_input).map(|j| j * n / per_input).collect()
            }
        })
        .collect();
    let mut numeric: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, pick) in picks.iter().enumerate() {
        let mut num = Vec::with_capacity(pick.len());
        for &j in pick {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + FD_STEP;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = x0 - FD_STEP;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = x0;
            num.push((plus - minus) / (2.0 * FD_STEP));
        }
        numeric.push(num);
    }

    let peak_of = |i: usize| -> f64 {
        analytic[i]
            .data()
            .iter()
            .chain(&numeric[i])
            .fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let peak = (0..inputs.len()).map(peak_of).fold(0.0, f64::max);
    let mut report = GradCheckReport {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        per_input_rel_error: Vec::with_capacity(inputs.len()),
        worst: (0, 0),
        checked: 0,
        tol,
        passed: true,
    };
    for (i, pick) in picks.iter().enumerate() {
        let denom = peak_of(i).max(1e-3 * peak).max(f64::MIN_POSITIVE);
        let mut rel_i = 0.0f64;
        for (&j, n) in pick.iter().zip(&numeric[i]) {
            let abs = (analytic[i].data()[j] - n).abs();
            report.max_abs_error = report.max_abs_error.max(abs);
            let rel = abs / denom;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, j);
            }
            rel_i = rel_i.max(rel);
            report.checked += 1;
        }
        report.per_input_rel_error.push(rel_i);
    }
    report.passed = report.max_rel_error < tol && report.max_abs_error.is_finite();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact_to_rounding() {
        let a = Tensor::from_fn([3, 4], |i| (i as f64 * 0.37).sin());
        let b = Tensor::from_fn([4, 2], |i| (i as f64 * 0.11).cos());
        let r = grad_check(|g, v| g.matmul(v[0], v[1]), &[a, b], 1e-8).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn scaling_is_exact_and_every_element_is_checked() {
        let x = Tensor::from_fn([3], |i| i as f64);
        let r = grad_check(|g, v| Ok(g.scale(v[0], 2.0)), &[x], 1e-8).unwrap();
        assert!(r.passed);
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn sampling_limits_checked_elements() {
        let x = Tensor::from_fn([50], |i| i as f64 * 0.01);
        let r = grad_check_sampled(|g, v| Ok(g.activation(super::super::Activation::Sigmoid, v[0])), &[x], 1e-6, 7).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, 7);
    }
}
