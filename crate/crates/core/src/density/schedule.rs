use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized form: `{"sigma_max": 1.0, "sigma_min": 0.01, "count": 10}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSpec {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub count: usize,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            sigma_max: 1.0,
            sigma_min: 0.01,
            count: 10,
        }
    }
}

/// Strictly decreasing geometric noise levels `sigma_1 > ... > sigma_I > 0`.
///
/// Levels are indexed from 0 in code: `level(0)` is the largest.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    levels: Vec<f64>,
    spec: ScheduleSpec,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::from_spec(ScheduleSpec::default()).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    /// `count` levels from `sigma_max` down to `sigma_min` with a constant ratio.
    pub fn geometric(sigma_max: f64, sigma_min: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidParameter("schedule needs at least one level".into()));
        }
        if !(sigma_min > 0.0) || !sigma_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise levels must be finite and positive, got [{sigma_max}, {sigma_min}]"
            )));
        }
        let levels = if count == 1 {
            if sigma_max != sigma_min {
                return Err(Error::InvalidParameter(
                    "a single-level schedule needs sigma_max == sigma_min".into(),
                ));
            }
            vec![sigma_max]
        } else {
            if !(sigma_max > sigma_min) {
                return Err(Error::InvalidParameter(format!(
                    "sigma_max ({sigma_max}) must exceed sigma_min ({sigma_min})"
                )));
            }
            let log_ratio = (sigma_min / sigma_max).ln() / (count - 1) as f64;
            let mut levels: Vec<f64> = (0..count)
                .map(|i| sigma_max * (log_ratio * i as f64).exp())
                .collect();
            levels[count - 1] = sigma_min;
            levels
        };
        Ok(Self {
            levels,
            spec: ScheduleSpec {
                sigma_max,
                sigma_min,
                count,
            },
        })
    }

    pub fn from_spec(spec: ScheduleSpec) -> Result<Self> {
        Self::geometric(spec.sigma_max, spec.sigma_min, spec.count)
    }

    /// Validates an explicit level list (strictly decreasing, positive, geometric).
    pub fn from_levels(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidParameter("schedule needs at least one level".into()));
        }
        if levels.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter("noise levels must be finite and positive".into()));
        }
        if levels.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidParameter("noise levels must strictly decrease".into()));
        }
        if levels.len() > 2 {
            let r0 = levels[1] / levels[0];
            if levels.windows(2).any(|w| ((w[1] / w[0]) - r0).abs() > 1e-12) {
                return Err(Error::InvalidParameter("noise levels are not geometric".into()));
            }
        }
        let spec = ScheduleSpec {
            sigma_max: levels[0],
            sigma_min: *levels.last().unwrap(),
            count: levels.len(),
        };
        Ok(Self { levels, spec })
    }

    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn count(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, i: usize) -> f64 {
        self.levels[i]
    }

    pub fn sigma_max(&self) -> f64 {
        self.levels[0]
    }

    pub fn sigma_min(&self) -> f64 {
        *self.levels.last().unwrap()
    }

    /// Ratio `sigma_{i+1} / sigma_i` (1 for a single level).
    pub fn ratio(&self) -> f64 {
        if self.levels.len() < 2 {
            1.0
        } else {
            self.levels[1] / self.levels[0]
        }
    }

    /// Index of the level equal to `sigma` within a relative `1e-9`.
    pub fn index_of(&self, sigma: f64) -> Option<usize> {
        self.levels
            .iter()
            .position(|&s| ((s - sigma) / s).abs() <= 1e-9)
    }
}
