use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

use super::fft::Dft2Plan;
use super::grid::{ComplexImage, KSpaceData};
use super::mask::SamplingMask;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Simulates acquisition: `mask * (dft2(img) + n)` with complex Gaussian
/// noise of total variance `noise_std^2` (each component `noise_std / sqrt 2`).
pub fn undersample(
    img: &ComplexImage,
    mask: &SamplingMask,
    noise_std: f64,
    seed: u64,
) -> Result<KSpaceData> {
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise std must be finite and >= 0, got {noise_std}"
        )));
    }
    mask.check_shape(img.height(), img.width())?;
    let mut spec = Dft2Plan::new(img.height(), img.width())?.forward(img)?;
    let component_std = noise_std / std::f64::consts::SQRT_2;
    let mut rng = seeded(seed);
    for (v, &on) in spec.data_mut().iter_mut().zip(mask.selected()) {
        if noise_std > 0.0 {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex64::new(re, im) * component_std;
        }
        if !on {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    Ok(spec)
}

/// Inverse transform of the zero-filled measurements.
pub fn zero_filled(y: &KSpaceData, mask: &SamplingMask) -> Result<ComplexImage> {
    mask.check_shape(y.height(), y.width())?;
    Dft2Plan::new(y.height(), y.width())?.inverse(y)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "data-consistency weight must be >= 0 (or infinite), got {lambda}"
        )));
    }
    Ok(())
}

/// The spectrum produced by the data-consistency update: `F x'` off the
/// mask, `(y + lambda F x') / (1 + lambda)` on it. `lambda = 0` replaces the
/// sampled bins by `y` bit-for-bit.
pub fn data_consistency_spectrum(
    plan: &Dft2Plan,
    x_prime: &ComplexImage,
    y: &KSpaceData,
    mask: &SamplingMask,
    lambda: f64,
) -> Result<KSpaceData> {
    check_lambda(lambda)?;
    let (h, w) = plan.shape();
    x_prime.check_same_shape(h, w, "data consistency image")?;
    y.check_same_shape(h, w, "data consistency measurements")?;
    mask.check_shape(h, w)?;

    let mut spec = plan.forward(x_prime)?;
    if lambda.is_infinite() {
        return Ok(spec);
    }
    let denom = 1.0 + lambda;
    for ((v, &meas), &on) in spec.data_mut().iter_mut().zip(y.data()).zip(mask.selected()) {
        if on {
            *v = if lambda == 0.0 {
                meas
            } else {
                (meas + *v * lambda) / denom
            };
        }
    }
    Ok(spec)
}

/// Closed-form minimiser of `||y - F_p x||^2 + lambda ||x - x'||^2`.
pub fn data_consistency(
    x_prime: &ComplexImage,
    y: &KSpaceData,
    mask: &SamplingMask,
    lambda: f64,
) -> Result<ComplexImage> {
    check_lambda(lambda)?;
    if lambda.is_infinite() {
        x_prime.check_same_shape(y.height(), y.width(), "data consistency image")?;
        mask.check_shape(y.height(), y.width())?;
        return Ok(x_prime.clone());
    }
    let plan = Dft2Plan::new(y.height(), y.width())?;
    let spec = data_consistency_spectrum(&plan, x_prime, y, mask, lambda)?;
    plan.inverse(&spec)
}
