use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layers::{Grid, Real};
use super::net::{Network, NetworkConfig};
use super::ScoreNetwork;
use crate::density::{GaussianMixture, NoiseSchedule, ScheduleSpec};
use crate::error::{Error, Result};
use crate::kspace::ComplexImage;
use crate::rng::{derive_seed, seeded, SeededRng};

/// Patch sizes accepted for image training.
pub const PATCH_SIZES: [usize; 3] = [32, 64, 96];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub schedule: ScheduleSpec,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Fractions of the run at which the learning rate is halved.
    #[serde(default = "default_halvings")]
    pub lr_halvings: Vec<f64>,
    pub seed: u64,
    /// Square patch side for image sources; `None` for point sources.
    pub patch_size: Option<usize>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Pair each draw with its sign-flipped noise.
    #[serde(default = "default_true")]
    pub antithetic: bool,
    /// Decay of the parameter moving average returned as the model.
    #[serde(default)]
    pub ema_decay: Option<f64>,
}

fn default_halvings() -> Vec<f64> {
    vec![0.5, 0.75]
}

fn default_log_every() -> usize {
    100
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            schedule: ScheduleSpec::default(),
            batch_size: 16,
            iterations: 1500,
            learning_rate: 3e-3,
            lr_halvings: default_halvings(),
            seed: 0,
            patch_size: Some(64),
            log_every: default_log_every(),
            antithetic: true,
            ema_decay: Some(0.999),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.batch_size == 0 || self.iterations == 0 || self.log_every == 0 {
            return Err(Error::InvalidParameter(
                "batch_size, iterations and log_every must be positive".into(),
            ));
        }
        if self.antithetic && self.batch_size % 2 != 0 {
            return Err(Error::InvalidParameter("antithetic training needs an even batch size".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if let Some(p) = self.patch_size {
            if !PATCH_SIZES.contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "patch size {p} not in {PATCH_SIZES:?}"
                )));
            }
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::InvalidParameter(format!("ema decay {d} not in [0, 1)")));
            }
        }
        NoiseSchedule::from_spec(self.schedule)?;
        Ok(())
    }

    fn learning_rate_at(&self, iteration: usize) -> f64 {
        let frac = iteration as f64 / self.iterations as f64;
        let halvings = self.lr_halvings.iter().filter(|&&f| frac >= f).count();
        self.learning_rate * 0.5f64.powi(halvings as i32)
    }
}

/// Anything that can hand out training images of a fixed shape.
pub trait PatchSource {
    fn patch_shape(&self) -> (usize, usize);

    /// Number of distinct patches, `None` if unbounded.
    fn available(&self) -> Option<usize>;

    fn draw(&self, rng: &mut SeededRng) -> ComplexImage;
}

fn flip(img: &ComplexImage, horizontal: bool, vertical: bool) -> ComplexImage {
    let (h, w) = img.shape();
    ComplexImage::from_fn(h, w, |y, x| {
        let sy = if vertical { h - 1 - y } else { y };
        let sx = if horizontal { w - 1 - x } else { x };
        img.get(sy, sx)
    })
}

/// A fixed patch collection sampled uniformly, optionally flipped.
#[derive(Clone, Debug)]
pub struct PatchSet {
    patches: Vec<ComplexImage>,
    flips: bool,
}

impl PatchSet {
    pub fn new(patches: Vec<ComplexImage>, flips: bool) -> Result<Self> {
        let first = patches
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty patch set".into()))?
            .shape();
        if patches.iter().any(|p| p.shape() != first) {
            return Err(Error::InvalidDimension("patches differ in shape".into()));
        }
        Ok(Self { patches, flips })
    }

    pub fn patches(&self) -> &[ComplexImage] {
        &self.patches
    }
}

impl PatchSource for PatchSet {
    fn patch_shape(&self) -> (usize, usize) {
        self.patches[0].shape()
    }

    fn available(&self) -> Option<usize> {
        Some(self.patches.len())
    }

    fn draw(&self, rng: &mut SeededRng) -> ComplexImage {
        let p = &self.patches[rng.random_range(0..self.patches.len())];
        if self.flips {
            flip(p, rng.random(), rng.random())
        } else {
            p.clone()
        }
    }
}

/// Fresh uniform crops of a fixed size from a set of images.
#[derive(Clone, Debug)]
pub struct RandomCrops {
    images: Vec<ComplexImage>,
    size: usize,
    flips: bool,
}

impl RandomCrops {
    pub fn new(images: Vec<ComplexImage>, size: usize, flips: bool) -> Result<Self> {
        if images.is_empty() || size == 0 {
            return Err(Error::InvalidParameter("need images and a positive crop size".into()));
        }
        if let Some(img) = images.iter().find(|i| i.height() < size || i.width() < size) {
            return Err(Error::InvalidDimension(format!(
                "crop {size} larger than image {}x{}",
                img.height(),
                img.width()
            )));
        }
        Ok(Self { images, size, flips })
    }
}

impl PatchSource for RandomCrops {
    fn patch_shape(&self) -> (usize, usize) {
        (self.size, self.size)
    }

    fn available(&self) -> Option<usize> {
        None
    }

    fn draw(&self, rng: &mut SeededRng) -> ComplexImage {
        let img = &self.images[rng.random_range(0..self.images.len())];
        let y0 = rng.random_range(0..=img.height() - self.size);
        let x0 = rng.random_range(0..=img.width() - self.size);
        let crop = ComplexImage::from_fn(self.size, self.size, |y, x| img.get(y0 + y, x0 + x));
        if self.flips {
            flip(&crop, rng.random(), rng.random())
        } else {
            crop
        }
    }
}

/// Points of a 2-D mixture as single complex pixels `x0 + i x1`.
#[derive(Clone, Debug)]
pub struct MixtureSource {
    mixture: GaussianMixture,
}

impl MixtureSource {
    pub fn new(mixture: GaussianMixture) -> Result<Self> {
        if mixture.dim() != 2 {
            return Err(Error::InvalidDimension(format!(
                "point source needs a 2-D mixture, got {}",
                mixture.dim()
            )));
        }
        Ok(Self { mixture })
    }
}

impl PatchSource for MixtureSource {
    fn patch_shape(&self) -> (usize, usize) {
        (1, 1)
    }

    fn available(&self) -> Option<usize> {
        None
    }

    fn draw(&self, rng: &mut SeededRng) -> ComplexImage {
        let p = self.mixture.sample(1, 0.0, rng).remove(0);
        ComplexImage::from_fn(1, 1, |_, _| crate::Complex64::new(p[0], p[1]))
    }
}

/// Per-iteration training loss (per tensor entry) and its interval means.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub per_iteration: Vec<f64>,
    pub log_every: usize,
    /// `(last iteration of interval, mean loss over interval)`.
    pub intervals: Vec<(usize, f64)>,
}

impl LossTrace {
    /// Mean over the first `frac` of iterations.
    pub fn head_mean(&self, frac: f64) -> f64 {
        let n = ((self.per_iteration.len() as f64 * frac).ceil() as usize).max(1);
        self.per_iteration[..n].iter().sum::<f64>() / n as f64
    }

    /// Mean over the last `frac` of iterations.
    pub fn tail_mean(&self, frac: f64) -> f64 {
        let len = self.per_iteration.len();
        let n = ((len as f64 * frac).ceil() as usize).max(1);
        self.per_iteration[len - n..].iter().sum::<f64>() / n as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in &self.intervals {
            s.push_str(&format!("{i},{l:.8e}\n"));
        }
        s
    }
}

struct Adam<F> {
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Real> Adam<F> {
    fn new(n: usize) -> Self {
        Self { m: vec![F::zero(); n], v: vec![F::zero(); n], t: 0 }
    }

    fn step(&mut self, params: &mut [F], grad: &[F], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        let (b1, b2) = (F::of(B1), F::of(B2));
        let (o1, o2) = (F::of(1.0 - B1), F::of(1.0 - B2));
        let step = F::of(lr * c2.sqrt() / c1);
        let eps = F::of(1e-8 * c2.sqrt());
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = b1 * *m + o1 * *g;
            *v = b2 * *v + o2 * *g * *g;
            *p = *p - step * *m / (v.sqrt() + eps);
        }
    }
}

/// Builds one noisy training batch in channel-major layout.
///
/// Returns `(input, noise, sigmas)`; item `b` is `embed(patch, N) + sigma_b z_b`.
fn assemble_batch<F: Real>(
    source: &dyn PatchSource,
    config: &TrainConfig,
    schedule: &NoiseSchedule,
    rng: &mut SeededRng,
) -> (Vec<F>, Vec<F>, Vec<f64>) {
    let n = config.network.replicas;
    let ch = 2 * n;
    let (h, w) = source.patch_shape();
    let p = h * w;
    let b = config.batch_size;
    let distinct = if config.antithetic { b / 2 } else { b };
    let offset = rng.random_range(0..schedule.count());
    let mut sigmas = Vec::with_capacity(b);
    let mut patches = Vec::with_capacity(b);
    for k in 0..distinct {
        let img = source.draw(rng);
        let s = schedule.level((offset + k) % schedule.count());
        if config.antithetic {
            sigmas.extend([s, s]);
            patches.push(img.clone());
            patches.push(img);
        } else {
            sigmas.push(s);
            patches.push(img);
        }
    }
    let mut x = vec![F::zero(); ch * b * p];
    let mut z = vec![F::zero(); ch * b * p];
    for i in 0..b {
        let fresh = !config.antithetic || i % 2 == 0;
        for c in 0..ch {
            let base = c * b * p + i * p;
            if fresh {
                for e in &mut z[base..base + p] {
                    let v: f64 = StandardNormal.sample(rng);
                    *e = F::of(v);
                }
            } else {
                let prev = base - p;
                for j in 0..p {
                    z[base + j] = -z[prev + j];
                }
            }
            let data = patches[i].data();
            let s = F::of(sigmas[i]);
            for j in 0..p {
                let clean = if c % 2 == 0 { data[j].re } else { data[j].im };
                x[base + j] = F::of(clean) + s * z[base + j];
            }
        }
    }
    (x, z, sigmas)
}

/// One loss/gradient evaluation of the sigma^2-weighted DSM objective.
///
/// With `S = f / sigma`, `sigma^2 * 1/2 ||S + (x~ - x)/sigma^2||^2 = 1/2 ||f + z||^2`.
/// Returns the batch-mean loss per tensor entry and the parameter gradient of
/// the batch-mean (unnormalized) loss.
pub fn dsm_objective<F: Real>(
    net: &Network<F>,
    x: &[F],
    z: &[F],
    grid: Grid,
    sigmas: &[f64],
) -> Result<(f64, Vec<F>)> {
    let (out, cache) = net.forward_train(x, grid, sigmas)?;
    let inv_b = F::of(1.0 / grid.batch as f64);
    let mut total = 0.0;
    let d_out: Vec<F> = out
        .iter()
        .zip(z)
        .map(|(o, e)| {
            let r = *o + *e;
            total += 0.5 * r.f64() * r.f64();
            r * inv_b
        })
        .collect();
    let (grad, _) = net.backward(&cache, &d_out, false);
    let per_entry = total / out.len() as f64;
    Ok((per_entry, grad))
}

/// Fits a score network by minimizing the combined DSM objective over
/// `embed(patch, N)` tensors with independent per-replica noise.
///
/// Each batch spreads its items evenly over the schedule levels. The run is
/// deterministic for a fixed config.
pub fn train(source: &dyn PatchSource, config: &TrainConfig) -> Result<(ScoreNetwork, LossTrace)> {
    config.validate()?;
    let schedule = NoiseSchedule::from_spec(config.schedule)?;
    let (h, w) = source.patch_shape();
    if let Some(p) = config.patch_size {
        if (h, w) != (p, p) {
            return Err(Error::Config(format!(
                "source yields {h}x{w} patches, config asks for {p}x{p}"
            )));
        }
    }
    if let Some(n) = source.available() {
        let distinct = if config.antithetic { config.batch_size / 2 } else { config.batch_size };
        if n < distinct {
            return Err(Error::InvalidParameter(format!(
                "source holds {n} patches, batch needs {distinct}"
            )));
        }
    }
    let mut net: Network<f32> =
        Network::new(config.network.clone(), schedule.clone(), derive_seed(config.seed, 0))?;
    let mut ema = config.ema_decay.map(|_| net.params().to_vec());
    let mut adam = Adam::new(net.param_count());
    let mut rng = seeded(derive_seed(config.seed, 1));
    let grid = Grid { batch: config.batch_size, height: h, width: w };
    let mut trace = LossTrace { log_every: config.log_every, ..Default::default() };
    let mut acc = 0.0;
    for it in 0..config.iterations {
        let (x, z, sigmas) = assemble_batch::<f32>(source, config, &schedule, &mut rng);
        let (loss, grad) = dsm_objective(&net, &x, &z, grid, &sigmas)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged { iteration: it, loss });
        }
        adam.step(net.params_mut(), &grad, config.learning_rate_at(it));
        if let (Some(e), Some(d)) = (ema.as_mut(), config.ema_decay) {
            let d = d.min((1.0 + it as f64) / (10.0 + it as f64)) as f32;
            for (a, p) in e.iter_mut().zip(net.params()) {
                *a = d * *a + (1.0 - d) * *p;
            }
        }
        trace.per_iteration.push(loss);
        acc += loss;
        if (it + 1) % config.log_every == 0 || it + 1 == config.iterations {
            let n = (it % config.log_every) + 1;
            trace.intervals.push((it + 1, acc / n as f64));
            log::info!("train iteration {} loss {:.5e}", it + 1, acc / n as f64);
            acc = 0.0;
        }
    }
    if let Some(e) = ema {
        net.params_mut().copy_from_slice(&e);
    }
    Ok((ScoreNetwork::from_parts(net, config.patch_size, config.seed), trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config(iterations: usize) -> TrainConfig {
        TrainConfig {
            network: NetworkConfig::mlp(1, 16, 2),
            batch_size: 32,
            iterations,
            patch_size: None,
            log_every: 10,
            ..Default::default()
        }
    }

    fn toy_source() -> MixtureSource {
        let g = GaussianMixture::new(vec![0.5, 0.5], vec![vec![-1.0, 0.0], vec![1.0, 0.0]], vec![vec![0.09, 0.09]; 2]).unwrap();
        MixtureSource::new(g).unwrap()
    }

    #[test]
    fn training_is_deterministic() {
        let (_, a) = train(&toy_source(), &toy_config(30)).unwrap();
        let (_, b) = train(&toy_source(), &toy_config(30)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.intervals.len(), 3);
    }

    #[test]
    fn learning_rate_halves_twice() {
        let c = TrainConfig { learning_rate: 1e-3, ..toy_config(100) };
        assert_eq!(c.learning_rate_at(0), 1e-3);
        assert_eq!(c.learning_rate_at(50), 5e-4);
        assert_eq!(c.learning_rate_at(99), 2.5e-4);
    }

    #[test]
    fn config_validation() {
        let mut c = toy_config(10);
        c.patch_size = Some(48);
        assert!(c.validate().is_err());
        let mut c = toy_config(10);
        c.batch_size = 3;
        assert!(c.validate().is_err());
        let mut c = toy_config(10);
        c.iterations = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn patch_shape_must_match_config() {
        let imgs = vec![ComplexImage::zeros(40, 40); 2];
        let crops = RandomCrops::new(imgs, 32, true).unwrap();
        let mut c = toy_config(1);
        c.network = NetworkConfig { replicas: 1, widths: vec![4, 4], depth: 1, kernel: 3, zero_init_output: true, sigma_data: None };
        c.patch_size = Some(64);
        assert!(matches!(train(&crops, &c), Err(Error::Config(_))));
        c.patch_size = Some(32);
        assert!(train(&crops, &c).is_ok());
    }

    #[test]
    fn too_few_patches_rejected() {
        let set = PatchSet::new(vec![ComplexImage::zeros(32, 32); 3], false).unwrap();
        let mut c = toy_config(1);
        c.network = NetworkConfig { replicas: 1, widths: vec![4], depth: 1, kernel: 3, zero_init_output: true, sigma_data: None };
        c.patch_size = Some(32);
        c.batch_size = 8;
        assert!(train(&set, &c).is_err());
    }

    #[test]
    fn diverging_run_reports_iteration() {
        let mut c = toy_config(50);
        c.learning_rate = 1e30;
        c.network.zero_init_output = false;
        match train(&toy_source(), &c) {
            Err(Error::TrainingDiverged { iteration, .. }) => assert!(iteration < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
