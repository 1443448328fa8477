//! Annealed Langevin dynamics over a decreasing noise schedule.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::density::{NoiseSchedule, ScheduleSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::tensor::{ScoreModel, TensorBatch, TensorShape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LangevinConfig {
    pub schedule: ScheduleSpec,
    /// Step size at the smallest noise level.
    pub epsilon: f64,
    /// Inner iterations per level.
    pub steps_per_level: usize,
    pub seed: u64,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleSpec::default(),
            epsilon: 2e-5,
            steps_per_level: 60,
            seed: 0,
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<NoiseSchedule> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.steps_per_level == 0 {
            return Err(Error::InvalidParameter("steps per level must be >= 1".into()));
        }
        NoiseSchedule::from_spec(self.schedule)
    }
}

/// `alpha_i = epsilon * sigma_i^2 / sigma_I^2` for 0-based level `i`.
pub fn step_size(epsilon: f64, schedule: &NoiseSchedule, level: usize) -> f64 {
    let r = schedule.level(level) / schedule.sigma_min();
    epsilon * r * r
}

/// Source of the Gaussian increment of one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepNoise {
    Seeded(u64),
    /// `z = 0`: the step becomes a plain gradient step.
    Zero,
}

/// Where a step sits in an annealed run, for error reporting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepIndex {
    pub level: usize,
    pub iteration: usize,
}

/// `X' = X + (alpha/2) S(X, sigma) + sqrt(alpha) z`.
pub fn langevin_step(
    x: &TensorBatch,
    model: &dyn ScoreModel,
    sigma: f64,
    alpha: f64,
    noise: StepNoise,
    at: StepIndex,
) -> Result<TensorBatch> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("step size must be > 0, got {alpha}")));
    }
    let s = model.score(x, sigma)?;
    if s.shape() != x.shape() || s.count() != x.count() {
        return Err(Error::InvalidDimension("score output shape differs from input".into()));
    }
    if !s.is_finite() {
        return Err(Error::NumericFailure {
            level: at.level,
            iteration: at.iteration,
            what: format!("score at sigma {sigma} is not finite"),
        });
    }
    let half = 0.5 * alpha;
    let root = alpha.sqrt();
    let mut out = x.clone();
    match noise {
        StepNoise::Zero => {
            for (o, g) in out.data_mut().iter_mut().zip(s.data()) {
                *o += half * g;
            }
        }
        StepNoise::Seeded(seed) => {
            let mut rng = seeded(seed);
            for (o, g) in out.data_mut().iter_mut().zip(s.data()) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *o += half * g + root * z;
            }
        }
    }
    Ok(out)
}

/// Seed of inner step `t` at level `i`.
pub fn step_seed(seed: u64, level: usize, iteration: usize) -> u64 {
    derive_seed(derive_seed(seed, level as u64), iteration as u64)
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub final_sample: TensorBatch,
    /// State at the end of each level, when requested.
    pub snapshots: Vec<TensorBatch>,
}

/// Runs `T` Langevin steps at every level from the largest noise down,
/// warm-starting each level from the previous one.
pub fn anneal_sample(
    x_init: &TensorBatch,
    model: &dyn ScoreModel,
    config: &LangevinConfig,
    keep_snapshots: bool,
) -> Result<Trajectory> {
    let schedule = config.validate()?;
    let mut x = x_init.clone();
    let mut snapshots = Vec::new();
    for (i, &sigma) in schedule.levels().iter().enumerate() {
        let alpha = step_size(config.epsilon, &schedule, i);
        for t in 0..config.steps_per_level {
            let at = StepIndex { level: i, iteration: t };
            x = langevin_step(&x, model, sigma, alpha, StepNoise::Seeded(step_seed(config.seed, i, t)), at)?;
        }
        if keep_snapshots {
            snapshots.push(x.clone());
        }
    }
    Ok(Trajectory { final_sample: x, snapshots })
}

/// `count` tensors of i.i.d. uniform entries in `[-1, 1]`.
pub fn uniform_init(shape: TensorShape, count: usize, seed: u64) -> TensorBatch {
    let mut rng = seeded(seed);
    let data = (0..shape.len() * count).map(|_| rng.random_range(-1.0..=1.0)).collect();
    TensorBatch::new(shape, data).expect("layout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{FnScore, ZeroScore};

    #[test]
    fn step_sizes() {
        let s = NoiseSchedule::default();
        assert_eq!(step_size(2e-5, &s, 9), 2e-5);
        assert!((step_size(2e-5, &s, 0) - 0.2).abs() < 1e-15);
        let r = s.ratio();
        for i in 0..9 {
            let q = step_size(1.0, &s, i + 1) / step_size(1.0, &s, i);
            assert!((q - r * r).abs() < 1e-12);
            assert!(step_size(1.0, &s, i + 1) < step_size(1.0, &s, i));
        }
    }

    #[test]
    fn zero_noise_hooks() {
        let x = TensorBatch::from_points(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let y = langevin_step(&x, &ZeroScore, 0.1, 0.3, StepNoise::Zero, StepIndex::default()).unwrap();
        assert_eq!(y, x);
        let c = FnScore(|b: &TensorBatch, _s: f64| {
            Ok(TensorBatch::new(b.shape(), vec![2.0; b.data().len()]).unwrap())
        });
        let y = langevin_step(&x, &c, 0.1, 0.3, StepNoise::Zero, StepIndex::default()).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - (b + 0.3)).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_score_is_located() {
        let x = TensorBatch::from_points(&[vec![1.0]]).unwrap();
        let bad = FnScore(|b: &TensorBatch, _s: f64| Ok(TensorBatch::new(b.shape(), vec![f64::NAN]).unwrap()));
        let at = StepIndex { level: 4, iteration: 17 };
        match langevin_step(&x, &bad, 0.1, 0.1, StepNoise::Seeded(1), at) {
            Err(Error::NumericFailure { level: 4, iteration: 17, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(langevin_step(&x, &ZeroScore, 0.1, 0.0, StepNoise::Zero, at).is_err());
    }

    #[test]
    fn single_level_single_step() {
        let schedule = ScheduleSpec { sigma_max: 0.5, sigma_min: 0.5, count: 1 };
        let cfg = LangevinConfig { schedule, epsilon: 0.01, steps_per_level: 1, seed: 9 };
        let x = TensorBatch::from_points(&[vec![0.0, 1.0]]).unwrap();
        let traj = anneal_sample(&x, &ZeroScore, &cfg, true).unwrap();
        let one = langevin_step(&x, &ZeroScore, 0.5, 0.01, StepNoise::Seeded(step_seed(9, 0, 0)), StepIndex::default()).unwrap();
        assert_eq!(traj.final_sample, one);
        assert_eq!(traj.snapshots.len(), 1);
    }
}
