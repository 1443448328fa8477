use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::{ComplexImage, KSpaceData};
use crate::error::{Error, Result};

/// Reusable unitary 2-D DFT for a fixed shape.
///
/// Both directions scale by `1 / sqrt(height * width)`, so the transform is
/// an isometry and its inverse is its adjoint.
#[derive(Clone)]
pub struct Dft2Plan {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Dft2Plan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dft2Plan")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl Dft2Plan {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimension(format!(
                "DFT needs nonzero dimensions, got {height}x{width}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn forward(&self, img: &ComplexImage) -> Result<KSpaceData> {
        img.check_same_shape(self.height, self.width, "dft2 input")?;
        let mut data = img.data().to_vec();
        self.transform(&mut data, &self.row_fwd, &self.col_fwd);
        KSpaceData::new(self.height, self.width, data)
    }

    pub fn inverse(&self, spec: &KSpaceData) -> Result<ComplexImage> {
        spec.check_same_shape(self.height, self.width, "idft2 input")?;
        let mut data = spec.data().to_vec();
        self.transform(&mut data, &self.row_inv, &self.col_inv);
        ComplexImage::new(self.height, self.width, data)
    }

    /// In-place forward transform of a row-major buffer.
    pub fn forward_in_place(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.height * self.width);
        self.transform(data, &self.row_fwd, &self.col_fwd);
    }

    /// In-place inverse transform of a row-major buffer.
    pub fn inverse_in_place(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.height * self.width);
        self.transform(data, &self.row_inv, &self.col_inv);
    }

    fn transform(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        let (h, w) = (self.height, self.width);
        // rustfft processes every contiguous chunk of the plan length.
        rows.process(data);

        let mut transposed = vec![Complex64::new(0.0, 0.0); h * w];
        for y in 0..h {
            for x in 0..w {
                transposed[x * h + y] = data[y * w + x];
            }
        }
        cols.process(&mut transposed);

        let scale = 1.0 / ((h * w) as f64).sqrt();
        for x in 0..w {
            for y in 0..h {
                data[y * w + x] = transposed[x * h + y] * scale;
            }
        }
    }
}

/// Unitary forward 2-D DFT.
pub fn dft2(img: &ComplexImage) -> Result<KSpaceData> {
    Dft2Plan::new(img.height(), img.width())?.forward(img)
}

/// Unitary inverse 2-D DFT.
pub fn idft2(spec: &KSpaceData) -> Result<ComplexImage> {
    Dft2Plan::new(spec.height(), spec.width())?.inverse(spec)
}
