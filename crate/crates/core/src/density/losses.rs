use rand_distr::{Distribution, StandardNormal};

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::tensor::{ScoreModel, TensorBatch};

/// A denoising autoencoder `A_sigma(x)`.
pub trait Denoiser: Send + Sync {
    fn denoise(&self, x: &TensorBatch, sigma: f64) -> Result<TensorBatch>;
}

/// `A(x) = x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, x: &TensorBatch, _sigma: f64) -> Result<TensorBatch> {
        Ok(x.clone())
    }
}

/// Closure adapter for [`Denoiser`].
pub struct FnDenoiser<F>(pub F);

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(&TensorBatch, f64) -> Result<TensorBatch> + Send + Sync,
{
    fn denoise(&self, x: &TensorBatch, sigma: f64) -> Result<TensorBatch> {
        (self.0)(x, sigma)
    }
}

/// The autoencoder implied by a score model: `A(x) = x + sigma^2 S(x, sigma)`.
pub struct CoupledDenoiser<S>(pub S);

impl<S: ScoreModel> Denoiser for CoupledDenoiser<S> {
    fn denoise(&self, x: &TensorBatch, sigma: f64) -> Result<TensorBatch> {
        let s = self.0.score(x, sigma)?;
        x.check_same_layout(&s, "score output")?;
        let s2 = sigma * sigma;
        let data = x.data().iter().zip(s.data()).map(|(a, b)| a + s2 * b).collect();
        TensorBatch::new(x.shape(), data)
    }
}

/// Weight of level `sigma` in the combined objective.
pub fn level_weight(sigma: f64) -> f64 {
    sigma * sigma
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise level must be finite and > 0, got {sigma}"
        )));
    }
    Ok(())
}

fn check_batch(batch: &TensorBatch) -> Result<()> {
    if batch.count() == 0 {
        return Err(Error::InvalidParameter("batch is empty".into()));
    }
    Ok(())
}

/// `x + sigma * eps` with `eps ~ N(0, I)` drawn in entry order from `seed`.
pub fn perturb(batch: &TensorBatch, sigma: f64, seed: u64) -> TensorBatch {
    let mut rng = seeded(seed);
    let data = batch
        .data()
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + sigma * z
        })
        .collect();
    TensorBatch::new(batch.shape(), data).expect("layout unchanged")
}

/// Per-sample `||S(x~) + (x~ - x) / sigma^2||^2` under the noise of `seed`.
fn dsm_residuals(
    model: &dyn ScoreModel,
    batch: &TensorBatch,
    sigma: f64,
    seed: u64,
) -> Result<(TensorBatch, TensorBatch, Vec<f64>)> {
    let noisy = perturb(batch, sigma, seed);
    let score = model.score(&noisy, sigma)?;
    noisy.check_same_layout(&score, "score output")?;
    let s2 = sigma * sigma;
    let residuals = (0..batch.count())
        .map(|i| {
            let (x, xt, s) = (batch.item(i), noisy.item(i), score.item(i));
            (0..x.len())
                .map(|j| {
                    let r = s[j] + (xt[j] - x[j]) / s2;
                    r * r
                })
                .sum()
        })
        .collect();
    Ok((noisy, score, residuals))
}

/// Denoising score-matching loss at one noise level:
/// `1/2 * mean ||S(x~, sigma) + (x~ - x) / sigma^2||^2`.
pub fn dsm_loss(model: &dyn ScoreModel, batch: &TensorBatch, sigma: f64, seed: u64) -> Result<f64> {
    check_sigma(sigma)?;
    check_batch(batch)?;
    let (_, _, r) = dsm_residuals(model, batch, sigma, seed)?;
    Ok(0.5 * r.iter().sum::<f64>() / r.len() as f64)
}

/// Unweighted per-level DSM losses; level `i` uses seed `derive_seed(seed, i)`.
pub fn combined_dsm_terms(
    model: &dyn ScoreModel,
    batch: &TensorBatch,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<f64>> {
    schedule
        .levels()
        .iter()
        .enumerate()
        .map(|(i, &sigma)| dsm_loss(model, batch, sigma, derive_seed(seed, i as u64)))
        .collect()
}

/// `(1/I) * sum_i sigma_i^2 * dsm_loss(sigma_i)`.
pub fn combined_dsm_loss(
    model: &dyn ScoreModel,
    batch: &TensorBatch,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    let terms = combined_dsm_terms(model, batch, schedule, seed)?;
    let total: f64 = schedule
        .levels()
        .iter()
        .zip(&terms)
        .map(|(&s, t)| level_weight(s) * t)
        .sum();
    Ok(total / schedule.count() as f64)
}

/// Denoising-autoencoder loss `mean ||A(x + eta) - x||^2`, `eta = sigma * eps`
/// drawn exactly as in [`dsm_loss`] for the same seed.
pub fn dae_loss(dae: &dyn Denoiser, batch: &TensorBatch, sigma: f64, seed: u64) -> Result<f64> {
    check_sigma(sigma)?;
    check_batch(batch)?;
    let noisy = perturb(batch, sigma, seed);
    let out = dae.denoise(&noisy, sigma)?;
    noisy.check_same_layout(&out, "denoiser output")?;
    let total: f64 = batch
        .data()
        .iter()
        .zip(out.data())
        .map(|(x, a)| (a - x) * (a - x))
        .sum();
    Ok(total / batch.count() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Theorem1Report {
    /// `mean ||A(x~) - x||^2` with `A = x~ + sigma^2 S`.
    pub dae_loss_value: f64,
    /// `mean sigma^4 ||S(x~) + (x~ - x) / sigma^2||^2`, i.e. `2 sigma^4` times the DSM loss.
    pub scaled_dsm_value: f64,
    /// Largest per-sample gap between the two integrands.
    pub abs_difference: f64,
}

/// Evaluates the DAE/DSM equivalence pointwise under shared noise.
///
/// With `A(x~) = x~ + sigma^2 S(x~)` the identity
/// `||A(x~) - x||^2 = sigma^4 ||S(x~) + (x~ - x) / sigma^2||^2` holds for any
/// score model, so the two losses differ only by the constant that neither
/// depends on.
pub fn theorem1_check(
    score: &dyn ScoreModel,
    batch: &TensorBatch,
    sigma: f64,
    seed: u64,
) -> Result<Theorem1Report> {
    check_sigma(sigma)?;
    check_batch(batch)?;
    let (noisy, s, dsm) = dsm_residuals(score, batch, sigma, seed)?;
    let s2 = sigma * sigma;
    let s4 = s2 * s2;
    let mut dae_total = 0.0;
    let mut dsm_total = 0.0;
    let mut worst: f64 = 0.0;
    for (i, &dsm_i) in dsm.iter().enumerate() {
        let (x, xt, si) = (batch.item(i), noisy.item(i), s.item(i));
        let dae_i: f64 = (0..x.len())
            .map(|j| {
                let a = xt[j] + s2 * si[j];
                (a - x[j]) * (a - x[j])
            })
            .sum();
        let scaled = s4 * dsm_i;
        dae_total += dae_i;
        dsm_total += scaled;
        worst = worst.max((dae_i - scaled).abs());
    }
    let n = dsm.len() as f64;
    Ok(Theorem1Report {
        dae_loss_value: dae_total / n,
        scaled_dsm_value: dsm_total / n,
        abs_difference: worst,
    })
}

/// Prior-gradient estimate `(A(x) - x) / sigma^2` from a denoiser.
pub fn dae_score_relation(dae: &dyn Denoiser, x: &TensorBatch, sigma: f64) -> Result<TensorBatch> {
    check_sigma(sigma)?;
    let a = dae.denoise(x, sigma)?;
    x.check_same_layout(&a, "denoiser output")?;
    let s2 = sigma * sigma;
    let data = a.data().iter().zip(x.data()).map(|(a, x)| (a - x) / s2).collect();
    TensorBatch::new(x.shape(), data)
}
