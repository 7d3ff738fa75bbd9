//! Central finite-difference gradient checks.
//!
//! The numeric side only ever evaluates forward passes on an inference tape,
//! so it stays independent of every backward rule it checks.

use rand::seq::index::sample;
use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome for one input tensor.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub input: usize,
    pub coords_checked: usize,
    /// `max |analytic − numeric| / max(‖analytic‖∞, ‖numeric‖∞, floor)`.
    pub rel_error: f64,
}

/// Relative-error floor: below this gradient magnitude absolute error is
/// what is being compared.
pub const REL_FLOOR: f64 = 1e-8;

/// Compares recorded gradients of the scalar `f(inputs)` with central
/// differences of step `h`.
///
/// When `max_coords` is set, that many coordinates per input are drawn with
/// `rng`; otherwise every coordinate is perturbed.
pub fn check<F, R>(
    f: F,
    inputs: &[Tensor<f64>],
    h: f64,
    max_coords: Option<usize>,
    rng: &mut R,
) -> Result<Vec<GradCheck>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::inference();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vs)?;
        Ok(t.value(out).item())
    };

    let mut out = Vec::with_capacity(inputs.len());
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).expect("leaf requires grad");
        let coords: Vec<usize> = match max_coords {
            Some(n) if n < x.numel() => sample(rng, x.numel(), n).into_vec(),
            _ => (0..x.numel()).collect(),
        };
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        let mut max_err: f64 = 0.0;
        let mut scale: f64 = REL_FLOOR;
        for &c in &coords {
            let orig = x.data()[c];
            work[i].data_mut()[c] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[c] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[c];
            max_err = max_err.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        out.push(GradCheck {
            input: i,
            coords_checked: coords.len(),
            rel_error: max_err / scale,
        });
    }
    Ok(out)
}

/// Largest relative error across all checked inputs.
pub fn worst(checks: &[GradCheck]) -> f64 {
    checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
}
