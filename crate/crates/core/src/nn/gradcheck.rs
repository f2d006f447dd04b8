//! Analytic-vs-central-difference gradient comparison.
//!
//! The relative error of one component is `|a - n| / max(|a|, |n|, FLOOR)`;
//! components where both gradients are below `FLOOR` are effectively compared
//! in absolute terms, so an all-zero gradient has error 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::layers::Layer;
use super::network::DualBranchNet;
use super::Tensor;

const FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step, scaled by `max(1, |param|)`.
    pub step: f64,
    /// Negates the analytic gradient of this parameter tensor before
    /// comparing. Used to confirm the harness catches a broken backward pass.
    pub flip_sign_of: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, flip_sign_of: None }
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Max relative error between `analytic` and central differences of `loss`
/// around `params`. `params` is restored afterwards.
pub fn check_against_finite_differences(
    params: &mut [f64],
    analytic: &[f64],
    step: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len(), "one analytic component per parameter");
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = params[i];
        let h = step * orig.abs().max(1.0);
        params[i] = orig + h;
        let plus = loss(params);
        params[i] = orig - h;
        let minus = loss(params);
        params[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Checks every parameter of `net` on one sample; returns the max relative
/// error.
pub fn gradient_check(
    net: &DualBranchNet<f64>,
    image: &Tensor<f64>,
    glcm: Option<&Tensor<f64>>,
    label: usize,
    opts: &GradCheckOptions,
) -> Result<f64> {
    let mut grads = net.zero_grads();
    net.loss_and_grads(image, glcm, label, &mut grads)?;
    if let Some(t) = opts.flip_sign_of {
        grads.0[t].iter_mut().for_each(|g| *g = -*g);
    }
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    let mut scratch = net.zero_grads();
    for (t, analytic) in grads.0.iter().enumerate() {
        let mut values = probe.params()[t].to_vec();
        let err = check_against_finite_differences(&mut values, analytic, opts.step, |vals| {
            probe.params_mut()[t].copy_from_slice(vals);
            probe.loss_and_grads(image, glcm, label, &mut scratch).expect("shapes already validated")
        });
        probe.params_mut()[t].copy_from_slice(net.params()[t]);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Checks one layer's input and parameter gradients under the scalar loss
/// `sum(r * layer(x))` with a seeded random `r`.
pub fn layer_gradient_check(layer: &Layer<f64>, input: &Tensor<f64>, seed: u64, step: f64) -> Result<f64> {
    let (y, cache) = layer.forward(input.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let project = |out: &Tensor<f64>| out.data().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    let g = Tensor::new(y.shape().to_vec(), r.clone())?;
    let mut grads: Vec<Vec<f64>> = layer.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let dx = layer.backward(&cache, g, &mut grads)?;

    let mut x = input.data().to_vec();
    let mut worst = check_against_finite_differences(&mut x, dx.data(), step, |vals| {
        let t = Tensor::new(input.shape().to_vec(), vals.to_vec()).expect("same shape");
        project(&layer.forward(t).expect("same shape").0)
    });
    let mut probe = layer.clone();
    for (t, analytic) in grads.iter().enumerate() {
        let mut values = probe.params()[t].to_vec();
        let err = check_against_finite_differences(&mut values, analytic, step, |vals| {
            probe.params_mut()[t].copy_from_slice(vals);
            project(&probe.forward(input.clone()).expect("same shape").0)
        });
        probe.params_mut()[t].copy_from_slice(layer.params()[t]);
        worst = worst.max(err);
    }
    Ok(worst)
}
