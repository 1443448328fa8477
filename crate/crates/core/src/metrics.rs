//! Image-quality metrics on magnitude images.
//!
//! All metrics first divide both magnitude images by the reference maximum,
//! so `psnr(a, b)` and `psnr(b, a)` generally differ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::ComplexImage;

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const HFEN_KERNEL: usize = 15;
pub const HFEN_SIGMA: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub psnr: f64,
    pub ssim: f64,
    pub hfen: f64,
}

/// A metrics CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub image_id: String,
    pub mask_kind: String,
    pub acceleration: f64,
    pub metrics: MetricResult,
}

impl MetricRow {
    pub const HEADER: &'static str = "image_id,mask_kind,R,psnr,ssim,hfen";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6}",
            self.image_id, self.mask_kind, self.acceleration, self.metrics.psnr, self.metrics.ssim, self.metrics.hfen
        )
    }
}

/// Magnitudes of both images divided by `max |reference|`.
fn normalized(test: &ComplexImage, reference: &ComplexImage) -> Result<(Vec<f64>, Vec<f64>)> {
    test.check_same_shape(reference.height(), reference.width(), "metric inputs")?;
    let m = reference.max_magnitude();
    if !(m > 0.0) {
        return Err(Error::UndefinedMetric("reference image is identically zero".into()));
    }
    let t = test.magnitudes().into_iter().map(|v| v / m).collect();
    let r = reference.magnitudes().into_iter().map(|v| v / m).collect();
    Ok((t, r))
}

/// `10 log10(1 / MSE)` of normalized magnitudes, capped at [`PSNR_CAP`].
pub fn psnr(test: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    let (t, r) = normalized(test, reference)?;
    Ok(psnr_normalized(&t, &r))
}

pub fn psnr_normalized(test: &[f64], reference: &[f64]) -> f64 {
    let mse = test.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / test.len() as f64;
    if mse == 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable filtering keeping only fully covered ("valid") positions.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = (0..n).map(|j| k[j] * x[y * w + xo + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..n).map(|j| k[j] * rows[(yo + j) * ow + xo]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean local SSIM of two real images with dynamic range 1.
pub fn ssim_normalized(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidDimension(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let sq = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mu_a, _, _) = filter_valid(a, h, w, &k);
    let (mu_b, _, _) = filter_valid(b, h, w, &k);
    let (aa, _, _) = filter_valid(&sq(a, a), h, w, &k);
    let (bb, _, _) = filter_valid(&sq(b, b), h, w, &k);
    let (ab, _, _) = filter_valid(&sq(a, b), h, w, &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03).
pub fn ssim(test: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    let (t, r) = normalized(test, reference)?;
    ssim_normalized(&t, &r, reference.height(), reference.width())
}

/// Zero-sum Laplacian-of-Gaussian kernel, row-major `size x size`.
pub fn log_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let s2 = sigma * sigma;
    let mut g = Vec::with_capacity(size * size);
    let mut r2 = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let d = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            g.push((-d / (2.0 * s2)).exp());
            r2.push(d);
        }
    }
    let gs: f64 = g.iter().sum();
    let mut k: Vec<f64> = g.iter().zip(&r2).map(|(g, d)| g / gs * (d - 2.0 * s2) / (s2 * s2)).collect();
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    for v in &mut k {
        *v -= mean;
    }
    k
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Same-size correlation with mirrored (edge-including) boundaries.
pub fn filter_reflect(x: &[f64], h: usize, w: usize, k: &[f64], ks: usize) -> Vec<f64> {
    let c = (ks / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            let mut acc = 0.0;
            for dy in 0..ks {
                let sy = reflect(y as isize + dy as isize - c, h);
                let row = &x[sy * w..(sy + 1) * w];
                let krow = &k[dy * ks..(dy + 1) * ks];
                for dx in 0..ks {
                    acc += krow[dx] * row[reflect(xx as isize + dx as isize - c, w)];
                }
            }
            out[y * w + xx] = acc;
        }
    }
    out
}

pub fn hfen_normalized(test: &[f64], reference: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < HFEN_KERNEL || w < HFEN_KERNEL {
        return Err(Error::InvalidDimension(format!(
            "HFEN needs at least {HFEN_KERNEL}x{HFEN_KERNEL}, got {h}x{w}"
        )));
    }
    let k = log_kernel(HFEN_KERNEL, HFEN_SIGMA);
    let lr = filter_reflect(reference, h, w, &k, HFEN_KERNEL);
    let diff: Vec<f64> = test.iter().zip(reference).map(|(a, b)| a - b).collect();
    let ld = filter_reflect(&diff, h, w, &k, HFEN_KERNEL);
    let nr = lr.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(nr > 1e-12 * scale) {
        return Err(Error::UndefinedMetric("reference has no high-frequency content".into()));
    }
    Ok(ld.iter().map(|v| v * v).sum::<f64>().sqrt() / nr)
}

/// `||LoG(test) - LoG(ref)|| / ||LoG(ref)||` with a 15x15, sigma 1.5 kernel.
pub fn hfen(test: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    let (t, r) = normalized(test, reference)?;
    hfen_normalized(&t, &r, reference.height(), reference.width())
}

pub fn evaluate(test: &ComplexImage, reference: &ComplexImage) -> Result<MetricResult> {
    let (t, r) = normalized(test, reference)?;
    let (h, w) = reference.shape();
    Ok(MetricResult {
        psnr: psnr_normalized(&t, &r),
        ssim: ssim_normalized(&t, &r, h, w)?,
        hfen: hfen_normalized(&t, &r, h, w)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_kernel_is_zero_sum_and_symmetric() {
        let k = log_kernel(15, 1.5);
        assert!(k.iter().sum::<f64>().abs() < 1e-15);
        for y in 0..15 {
            for x in 0..15 {
                assert!((k[y * 15 + x] - k[x * 15 + y]).abs() < 1e-18);
                assert!((k[y * 15 + x] - k[(14 - y) * 15 + x]).abs() < 1e-18);
            }
        }
        assert!(k[7 * 15 + 7] < 0.0);
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
    }

    #[test]
    fn size_and_zero_checks() {
        let a = ComplexImage::zeros(10, 10);
        assert!(psnr(&a, &a).is_err());
        let b = ComplexImage::from_fn(10, 10, |y, _| crate::Complex64::new(y as f64, 0.0));
        assert!(ssim(&b, &b).is_err());
        assert!(hfen(&b, &b).is_err());
        assert!(psnr(&ComplexImage::zeros(4, 4), &b).is_err());
    }
}
