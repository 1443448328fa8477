use num_complex::Complex64;

use crate::error::{Error, Result};

macro_rules! complex_grid {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            height: usize,
            width: usize,
            data: Vec<Complex64>,
        }

        impl $name {
            /// Wraps row-major `data`; its length must equal `height * width`.
            pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
                if data.len() != height * width {
                    return Err(Error::InvalidDimension(format!(
                        "{} of {}x{} needs {} values, got {}",
                        stringify!($name),
                        height,
                        width,
                        height * width,
                        data.len()
                    )));
                }
                Ok(Self { height, width, data })
            }

            pub fn zeros(height: usize, width: usize) -> Self {
                Self {
                    height,
                    width,
                    data: vec![Complex64::new(0.0, 0.0); height * width],
                }
            }

            pub fn from_fn(
                height: usize,
                width: usize,
                mut f: impl FnMut(usize, usize) -> Complex64,
            ) -> Self {
                let mut data = Vec::with_capacity(height * width);
                for y in 0..height {
                    for x in 0..width {
                        data.push(f(y, x));
                    }
                }
                Self { height, width, data }
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn shape(&self) -> (usize, usize) {
                (self.height, self.width)
            }

            pub fn len(&self) -> usize {
                self.data.len()
            }

            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            pub fn data(&self) -> &[Complex64] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [Complex64] {
                &mut self.data
            }

            pub fn into_data(self) -> Vec<Complex64> {
                self.data
            }

            pub fn get(&self, y: usize, x: usize) -> Complex64 {
                self.data[y * self.width + x]
            }

            pub fn set(&mut self, y: usize, x: usize, value: Complex64) {
                self.data[y * self.width + x] = value;
            }

            /// Euclidean norm over all entries.
            pub fn norm(&self) -> f64 {
                self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
            }

            pub fn magnitudes(&self) -> Vec<f64> {
                self.data.iter().map(|c| c.norm()).collect()
            }

            pub fn max_magnitude(&self) -> f64 {
                self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
            }

            pub fn is_finite(&self) -> bool {
                self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
            }

            pub(crate) fn check_same_shape(&self, h: usize, w: usize, what: &str) -> Result<()> {
                if self.height != h || self.width != w {
                    return Err(Error::InvalidDimension(format!(
                        "{what}: expected {h}x{w}, got {}x{}",
                        self.height, self.width
                    )));
                }
                Ok(())
            }
        }
    };
}

complex_grid!(
    /// An `height x width` grid of complex image intensities.
    ComplexImage
);

complex_grid!(
    /// A 2-D spectrum in corner layout (DC at `(0, 0)`).
    KSpaceData
);

impl ComplexImage {
    /// Real-valued image from row-major intensities.
    pub fn from_real(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        Self::new(
            height,
            width,
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }
}

/// Moves DC from index 0 to index `n / 2` along both axes.
pub fn fftshift<T: Copy>(data: &[T], height: usize, width: usize) -> Vec<T> {
    assert_eq!(data.len(), height * width);
    let mut out = data.to_vec();
    for y in 0..height {
        let ty = (y + height / 2) % height;
        for x in 0..width {
            let tx = (x + width / 2) % width;
            out[ty * width + tx] = data[y * width + x];
        }
    }
    out
}

/// Inverse of [`fftshift`] (differs from it for odd sizes).
pub fn ifftshift<T: Copy>(data: &[T], height: usize, width: usize) -> Vec<T> {
    assert_eq!(data.len(), height * width);
    let mut out = data.to_vec();
    for y in 0..height {
        let sy = (y + height / 2) % height;
        for x in 0..width {
            let sx = (x + width / 2) % width;
            out[y * width + x] = data[sy * width + sx];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(ComplexImage::new(2, 3, vec![Complex64::new(0.0, 0.0); 5]).is_err());
    }

    #[test]
    fn shift_moves_dc_to_center_and_back() {
        for &(h, w) in &[(4usize, 4usize), (5, 7), (8, 3)] {
            let data: Vec<usize> = (0..h * w).collect();
            let centered = fftshift(&data, h, w);
            assert_eq!(centered[(h / 2) * w + w / 2], 0);
            assert_eq!(ifftshift(&centered, h, w), data);
        }
    }
}
