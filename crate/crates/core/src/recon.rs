//! Homotopic reconstruction: annealed Langevin steps on the multi-channel
//! embedding, replica averaging and k-space data consistency, level by level.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{NoiseSchedule, ScheduleSpec};
use crate::error::{Error, Result};
use crate::kspace::{data_consistency_spectrum, zero_filled, ComplexImage, Dft2Plan, KSpaceData, SamplingMask};
use crate::metrics;
use crate::rng::seeded;
use crate::sampler::{langevin_step, step_seed, step_size, StepIndex, StepNoise};
use crate::tensor::{MultiChannelTensor, ScoreModel};
use crate::Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Uniform noise in `[-1, 1]` on the real and imaginary parts.
    UniformNoise,
    ZeroFilled,
}

impl std::str::FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" | "uniform_noise" => Ok(InitKind::UniformNoise),
            "zero_filled" | "zero-filled" | "zf" => Ok(InitKind::ZeroFilled),
            _ => Err(Error::Config(format!("unknown init `{s}` (uniform_noise | zero_filled)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub schedule: ScheduleSpec,
    pub epsilon: f64,
    /// Inner iterations per level.
    pub steps_per_level: usize,
    pub replicas: usize,
    /// Data-consistency weight; 0 enforces the measurements exactly.
    pub lambda: f64,
    pub init: InitKind,
    pub seed: u64,
    /// Metric logging interval in inner iterations.
    pub log_every: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleSpec::default(),
            epsilon: 7e-5,
            steps_per_level: 60,
            replicas: 3,
            lambda: 0.0,
            init: InitKind::UniformNoise,
            seed: 0,
            log_every: 10,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<NoiseSchedule> {
        if self.replicas == 0 {
            return Err(Error::InvalidParameter("replica count must be >= 1".into()));
        }
        if self.steps_per_level == 0 || self.log_every == 0 {
            return Err(Error::InvalidParameter("steps_per_level and log_every must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        NoiseSchedule::from_spec(self.schedule)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// 1-based global inner iteration.
    pub iteration: usize,
    pub level: usize,
    pub psnr: f64,
    pub hfen: f64,
}

#[derive(Clone, Debug)]
pub struct ReconReport {
    pub image: ComplexImage,
    trace: Option<Vec<TracePoint>>,
    /// Wall-clock seconds spent at each level.
    pub level_seconds: Vec<f64>,
}

impl ReconReport {
    pub fn total_seconds(&self) -> f64 {
        self.level_seconds.iter().sum()
    }
}

/// Per-iteration metric series of a run made with ground truth.
pub fn convergence_trace(report: &ReconReport) -> Result<&[TracePoint]> {
    report.trace.as_deref().ok_or(Error::UnavailableTrace)
}

pub fn trace_csv(report: &ReconReport) -> Result<String> {
    let mut s = String::from("iteration,level,psnr,hfen\n");
    for p in convergence_trace(report)? {
        s.push_str(&format!("{},{},{:.6},{:.6}\n", p.iteration, p.level, p.psnr, p.hfen));
    }
    Ok(s)
}

/// Called after every data-consistency update with the updated spectrum.
pub type SpectrumObserver<'a> = &'a mut dyn FnMut(StepIndex, &KSpaceData);

fn initial_image(y: &KSpaceData, mask: &SamplingMask, config: &ReconConfig) -> Result<ComplexImage> {
    match config.init {
        InitKind::ZeroFilled => zero_filled(y, mask),
        InitKind::UniformNoise => {
            let mut rng = seeded(config.seed);
            Ok(ComplexImage::from_fn(y.height(), y.width(), |_, _| {
                Complex64::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
            }))
        }
    }
}

/// Reconstructs an image from undersampled k-space `y`.
///
/// For each level (largest noise first) and each inner iteration: embed the
/// current image into `N` replicas, take one Langevin step with independent
/// per-replica noise, average the replicas and apply data consistency. Each
/// level starts from the previous level's result.
pub fn hggdp_reconstruct(
    y: &KSpaceData,
    mask: &SamplingMask,
    model: &dyn ScoreModel,
    config: &ReconConfig,
    ground_truth: Option<&ComplexImage>,
    mut observer: Option<SpectrumObserver<'_>>,
) -> Result<ReconReport> {
    let schedule = config.validate()?;
    if let Some(n) = model.replicas() {
        if n != config.replicas {
            return Err(Error::Config(format!(
                "model was trained with N = {n} replicas, config asks for N = {}",
                config.replicas
            )));
        }
    }
    let (h, w) = y.shape();
    mask.check_shape(h, w)?;
    if let Some(gt) = ground_truth {
        gt.check_same_shape(h, w, "ground truth")?;
    }
    let plan = Dft2Plan::new(h, w)?;
    let mut x = initial_image(y, mask, config)?;
    let mut trace = ground_truth.map(|_| Vec::new());
    let mut level_seconds = Vec::with_capacity(schedule.count());
    let mut previous_sigma = f64::INFINITY;
    let mut global = 0;
    for (i, &sigma) in schedule.levels().iter().enumerate() {
        if !(sigma < previous_sigma) {
            return Err(Error::Config(format!(
                "noise levels must strictly decrease: {sigma} after {previous_sigma}"
            )));
        }
        previous_sigma = sigma;
        let start = Instant::now();
        let alpha = step_size(config.epsilon, &schedule, i);
        for t in 0..config.steps_per_level {
            let at = StepIndex { level: i, iteration: t };
            let stacked = MultiChannelTensor::embed(&x, config.replicas)?.to_batch();
            let moved = langevin_step(&stacked, model, sigma, alpha, StepNoise::Seeded(step_seed(config.seed, i, t)), at)?;
            let x_prime = MultiChannelTensor::from_batch(&moved, 0)?.mean_aggregate();
            let spectrum = data_consistency_spectrum(&plan, &x_prime, y, mask, config.lambda)?;
            if let Some(obs) = observer.as_mut() {
                obs(at, &spectrum);
            }
            x = plan.inverse(&spectrum)?;
            if !x.is_finite() {
                return Err(Error::NumericFailure {
                    level: i,
                    iteration: t,
                    what: "iterate is not finite".into(),
                });
            }
            global += 1;
            if let (Some(tr), Some(gt)) = (trace.as_mut(), ground_truth) {
                if global % config.log_every == 0 {
                    tr.push(TracePoint {
                        iteration: global,
                        level: i,
                        psnr: metrics::psnr(&x, gt)?,
                        hfen: metrics::hfen(&x, gt)?,
                    });
                }
            }
        }
        level_seconds.push(start.elapsed().as_secs_f64());
        log::debug!("level {i} (sigma {sigma:.4}) done in {:.2}s", level_seconds[i]);
    }
    Ok(ReconReport { image: x, trace, level_seconds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::{dft2, idft2, MaskKind};
    use crate::tensor::{FnScore, TensorBatch, ZeroScore};

    fn image(h: usize, w: usize) -> ComplexImage {
        ComplexImage::from_fn(h, w, |y, x| Complex64::new((y as f64 * 0.3).sin(), (x as f64 * 0.2).cos()))
    }

    #[test]
    fn full_mask_exact_replace_recovers_inverse() {
        let gt = image(16, 16);
        let y = dft2(&gt).unwrap();
        let mask = SamplingMask::full(16, 16, MaskKind::Random2d);
        let cfg = ReconConfig { steps_per_level: 2, replicas: 1, log_every: 1, ..Default::default() };
        let model = FnScore(|b: &TensorBatch, _s: f64| Ok(TensorBatch::new(b.shape(), b.data().iter().map(|v| -v).collect()).unwrap()));
        let r = hggdp_reconstruct(&y, &mask, &model, &cfg, Some(&gt), None).unwrap();
        let want = idft2(&y).unwrap();
        for (a, b) in r.image.data().iter().zip(want.data()) {
            assert!((a - b).norm() < 1e-10);
        }
        let tr = convergence_trace(&r).unwrap();
        assert_eq!(tr.len(), 20);
        assert!(tr.iter().all(|p| (p.psnr - tr[0].psnr).abs() < 1e-9));
    }

    #[test]
    fn replica_mismatch_is_config_error() {
        let y = KSpaceData::zeros(8, 8);
        let mask = SamplingMask::full(8, 8, MaskKind::Random2d);
        let model = crate::scorenet::Network::<f64>::new(
            crate::scorenet::NetworkConfig::mlp(3, 4, 1),
            NoiseSchedule::default(),
            0,
        )
        .unwrap();
        let cfg = ReconConfig { replicas: 1, ..Default::default() };
        assert!(matches!(hggdp_reconstruct(&y, &mask, &model, &cfg, None, None), Err(Error::Config(_))));
    }

    #[test]
    fn trace_requires_ground_truth() {
        let y = KSpaceData::zeros(8, 8);
        let mask = SamplingMask::full(8, 8, MaskKind::Random2d);
        let cfg = ReconConfig { steps_per_level: 1, replicas: 1, ..Default::default() };
        let r = hggdp_reconstruct(&y, &mask, &ZeroScore, &cfg, None, None).unwrap();
        assert!(matches!(convergence_trace(&r), Err(Error::UnavailableTrace)));
        assert_eq!(r.level_seconds.len(), 10);
    }
}
