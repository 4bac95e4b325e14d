//! Central finite-difference oracle for reverse-mode gradients.
//!
//! Only forward evaluations are used here, so the check stays independent of
//! the backward pass it verifies.

use rand::Rng;

use super::Mlp;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps vanishing gradients
/// from being judged on round-off alone.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// `(f(p + h e_i) - f(p - h e_i)) / 2h`.
pub fn central_difference<F>(mut loss: F, params: &[f64], index: usize, step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    probe[index] = params[index] + step;
    let up = loss(&probe);
    probe[index] = params[index] - step;
    let down = loss(&probe);
    (up - down) / (2.0 * step)
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_relative_error: f64,
}

/// Checks `probes` randomly chosen parameter gradients of the scalar loss
/// `sum_i r_i * out_i(input)` for a random projection `r`.
pub fn check_mlp<R: Rng + ?Sized>(net: &Mlp, input: &[f64], probes: usize, rng: &mut R) -> Result<GradCheckReport> {
    let projection: Vec<f64> = (0..net.output_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cache = net.forward_cached(input)?;
    let mut grads = net.zero_grads();
    net.backward(&cache, &projection, &mut grads)?;

    let mut scratch = net.clone();
    let mut loss = |params: &[f64]| {
        scratch.params_mut().copy_from_slice(params);
        scratch
            .forward(input)
            .expect("input length already validated")
            .iter()
            .zip(&projection)
            .map(|(o, r)| o * r)
            .sum::<f64>()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let index = rng.gen_range(0..net.param_count());
        let numeric = central_difference(&mut loss, net.params(), index, DEFAULT_STEP);
        worst = worst.max(relative_error(grads[index], numeric));
    }
    Ok(GradCheckReport {
        probes,
        max_relative_error: worst,
    })
}
