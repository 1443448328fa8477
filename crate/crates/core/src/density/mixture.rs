use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ScoreModel, TensorBatch};

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Per-axis variances (diagonal covariance).
    pub variance: Vec<f64>,
}

/// JSON form of a mixture: `{"weights": [...], "means": [[...]], "variances": [[...]]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

/// Diagonal-covariance Gaussian mixture in `dim` dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    components: Vec<MixtureComponent>,
    dim: usize,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
            return Err(Error::InvalidParameter(format!(
                "mixture needs matching nonempty lists, got {} weights, {} means, {} variances",
                weights.len(),
                means.len(),
                variances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidDimension("mixture dimension must be >= 1".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        let mut components = Vec::with_capacity(weights.len());
        for ((w, m), v) in weights.into_iter().zip(means).zip(variances) {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::InvalidParameter(format!("weight {w} outside (0, 1]")));
            }
            if m.len() != dim || v.len() != dim {
                return Err(Error::InvalidDimension(format!(
                    "component of dimension {}/{} in a {dim}-dimensional mixture",
                    m.len(),
                    v.len()
                )));
            }
            if v.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
                return Err(Error::InvalidParameter("variances must be positive".into()));
            }
            components.push(MixtureComponent {
                weight: w,
                mean: m,
                variance: v,
            });
        }
        Ok(Self { components, dim })
    }

    /// One isotropic Gaussian `N(mean, variance * I)`.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(vec![1.0], vec![mean], vec![vec![variance; d]])
    }

    pub fn from_spec(spec: MixtureSpec) -> Result<Self> {
        Self::new(spec.weights, spec.means, spec.variances)
    }

    pub fn to_spec(&self) -> MixtureSpec {
        MixtureSpec {
            weights: self.components.iter().map(|c| c.weight).collect(),
            means: self.components.iter().map(|c| c.mean.clone()).collect(),
            variances: self.components.iter().map(|c| c.variance.clone()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    fn check_point(&self, x: &[f64], sigma: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::InvalidDimension(format!(
                "point of dimension {} for a {}-dimensional mixture",
                x.len(),
                self.dim
            )));
        }
        if !(sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(())
    }

    /// `log w_k + log N(x; mu_k, diag(s_k^2) + sigma^2 I)` for every component.
    fn component_log_terms(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let s2 = sigma * sigma;
        self.components
            .iter()
            .map(|c| {
                let mut acc = c.weight.ln();
                for j in 0..self.dim {
                    let v = c.variance[j] + s2;
                    let d = x[j] - c.mean[j];
                    acc -= 0.5 * ((2.0 * PI * v).ln() + d * d / v);
                }
                acc
            })
            .collect()
    }

    /// Log-density of the mixture convolved with `N(0, sigma^2 I)`.
    pub fn smoothed_log_density(&self, x: &[f64], sigma: f64) -> Result<f64> {
        self.check_point(x, sigma)?;
        Ok(log_sum_exp(&self.component_log_terms(x, sigma)))
    }

    /// Posterior component probabilities under the smoothed mixture.
    pub fn responsibilities(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check_point(x, sigma)?;
        let terms = self.component_log_terms(x, sigma);
        let lse = log_sum_exp(&terms);
        Ok(terms.into_iter().map(|t| (t - lse).exp()).collect())
    }

    /// Gradient of [`Self::smoothed_log_density`] with respect to `x`.
    pub fn smoothed_score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let resp = self.responsibilities(x, sigma)?;
        let s2 = sigma * sigma;
        let mut out = vec![0.0; self.dim];
        for (r, c) in resp.iter().zip(&self.components) {
            for j in 0..self.dim {
                out[j] += r * (c.mean[j] - x[j]) / (c.variance[j] + s2);
            }
        }
        Ok(out)
    }

    /// Draws from the mixture smoothed by `N(0, sigma^2 I)`, returning the
    /// component index of each draw along with the point.
    pub fn sample_labeled(&self, n: usize, sigma: f64, rng: &mut impl Rng) -> Vec<(usize, Vec<f64>)> {
        let s2 = sigma * sigma;
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = self.components.len() - 1;
                for (i, c) in self.components.iter().enumerate() {
                    acc += c.weight;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                let c = &self.components[k];
                let x = (0..self.dim)
                    .map(|j| {
                        let z: f64 = StandardNormal.sample(rng);
                        c.mean[j] + (c.variance[j] + s2).sqrt() * z
                    })
                    .collect();
                (k, x)
            })
            .collect()
    }

    pub fn sample(&self, n: usize, sigma: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        self.sample_labeled(n, sigma, rng)
            .into_iter()
            .map(|(_, x)| x)
            .collect()
    }

    /// CDF of the projection `<direction, x>` under the smoothed mixture.
    pub fn projected_cdf(&self, direction: &[f64], t: f64, sigma: f64) -> f64 {
        let s2 = sigma * sigma;
        self.components
            .iter()
            .map(|c| {
                let mean: f64 = direction.iter().zip(&c.mean).map(|(a, m)| a * m).sum();
                let var: f64 = direction
                    .iter()
                    .zip(&c.variance)
                    .map(|(a, v)| a * a * (v + s2))
                    .sum();
                c.weight * normal_cdf((t - mean) / var.sqrt())
            })
            .sum()
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Standard normal CDF.
pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// The exact smoothed score of a mixture, as a [`ScoreModel`] over flattened
/// tensors of length `dim`.
#[derive(Clone, Debug)]
pub struct GmmScore {
    pub mixture: GaussianMixture,
}

impl GmmScore {
    pub fn new(mixture: GaussianMixture) -> Self {
        Self { mixture }
    }
}

impl ScoreModel for GmmScore {
    fn score(&self, x: &TensorBatch, sigma: f64) -> Result<TensorBatch> {
        let mut out = TensorBatch::zeros(x.shape(), x.count());
        for i in 0..x.count() {
            let s = self.mixture.smoothed_score(x.item(i), sigma)?;
            out.item_mut(i).copy_from_slice(&s);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_at_mode() {
        let g = GaussianMixture::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        let v = g.smoothed_log_density(&[0.0, 0.0], 0.0).unwrap();
        assert!((v + (2.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn smoothing_adds_variances() {
        let g = GaussianMixture::isotropic(vec![0.0; 3], 0.4).unwrap();
        let wide = GaussianMixture::isotropic(vec![0.0; 3], 0.4 + 0.25).unwrap();
        let x = [0.3, -1.2, 0.8];
        let a = g.smoothed_log_density(&x, 0.5).unwrap();
        let b = wide.smoothed_log_density(&x, 0.0).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn single_gaussian_score_closed_form() {
        let mu = vec![1.0, -2.0];
        let g = GaussianMixture::isotropic(mu.clone(), 0.5).unwrap();
        let x = [0.2, 0.7];
        let sigma = 0.3;
        let s = g.smoothed_score(&x, sigma).unwrap();
        for j in 0..2 {
            let expect = (mu[j] - x[j]) / (0.5 + sigma * sigma);
            assert!((s[j] - expect).abs() < 1e-14);
        }
        assert_eq!(g.smoothed_score(&mu, sigma).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn validation() {
        assert!(GaussianMixture::new(vec![0.5, 0.6], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![0.0]]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 1.0]], vec![vec![1.0]]).is_err());
    }

    #[test]
    fn normal_cdf_known_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-12);
        let e = normal_cdf(1.959_963_984_540_054) - 0.975;
        assert!(e.abs() < 1e-10, "{e:e}");
        let e = normal_cdf(-1.0) - 0.158_655_253_931_457_07;
        assert!(e.abs() < 1e-10, "{e:e}");
    }
}
