//! Flat real tensors shared by the density, network and sampler code.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kspace::ComplexImage;
use crate::rng::seeded;
use num_complex::Complex64;

/// Channel-major `(channels, height, width)` shape of one tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// A plain `dim`-vector, i.e. `(dim, 1, 1)`.
    pub fn vector(dim: usize) -> Self {
        Self::new(dim, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// A batch of equally shaped real tensors stored back to back.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorBatch {
    shape: TensorShape,
    data: Vec<f64>,
}

impl TensorBatch {
    pub fn new(shape: TensorShape, data: Vec<f64>) -> Result<Self> {
        let n = shape.len();
        if n == 0 || data.len() % n != 0 {
            return Err(Error::InvalidDimension(format!(
                "batch data of length {} does not split into tensors of {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: TensorShape, count: usize) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len() * count],
        }
    }

    /// Batch of `dim`-vectors.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidDimension("points of unequal length".into()));
        }
        Self::new(TensorShape::vector(dim), points.concat())
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn item(&self, i: usize) -> &[f64] {
        let n = self.shape.len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.shape.len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn items(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.shape.len())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_layout(&self, other: &TensorBatch, what: &str) -> Result<()> {
        if self.shape != other.shape || self.data.len() != other.data.len() {
            return Err(Error::InvalidDimension(format!(
                "{what}: {:?} x {} vs {:?} x {}",
                self.shape,
                self.count(),
                other.shape,
                other.count()
            )));
        }
        Ok(())
    }
}

/// An evaluable score field `S(X, sigma)`, approximately the gradient of
/// `log p_sigma`.
pub trait ScoreModel: Send + Sync {
    /// Score at every tensor of `x`; the output has the layout of `x`.
    fn score(&self, x: &TensorBatch, sigma: f64) -> Result<TensorBatch>;

    /// Replica count the model is tied to, if any.
    fn replicas(&self) -> Option<usize> {
        None
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for &M {
    fn score(&self, x: &TensorBatch, sigma: f64) -> Result<TensorBatch> {
        (**self).score(x, sigma)
    }

    fn replicas(&self) -> Option<usize> {
        (**self).replicas()
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for Box<M> {
    fn score(&self, x: &TensorBatch, sigma: f64) -> Result<TensorBatch> {
        (**self).score(x, sigma)
    }

    fn replicas(&self) -> Option<usize> {
        (**self).replicas()
    }
}

/// Adapter turning a closure into a [`ScoreModel`].
pub struct FnScore<F>(pub F);

impl<F> ScoreModel for FnScore<F>
where
    F: Fn(&TensorBatch, f64) -> Result<TensorBatch> + Send + Sync,
{
    fn score(&self, x: &TensorBatch, sigma: f64) -> Result<TensorBatch> {
        (self.0)(x, sigma)
    }
}

/// The score that is identically zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroScore;

impl ScoreModel for ZeroScore {
    fn score(&self, x: &TensorBatch, _sigma: f64) -> Result<TensorBatch> {
        Ok(TensorBatch::zeros(x.shape(), x.count()))
    }
}

/// `N` replicas of a complex image as `2N` real planes
/// `[re_1, im_1, re_2, im_2, ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelTensor {
    replicas: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl MultiChannelTensor {
    /// Replicates `x` into `replicas` identical (real, imaginary) pairs.
    pub fn embed(x: &ComplexImage, replicas: usize) -> Result<Self> {
        if replicas == 0 {
            return Err(Error::InvalidParameter("replica count must be >= 1".into()));
        }
        let plane = x.len();
        let mut data = vec![0.0; 2 * replicas * plane];
        let (re, im) = data.split_at_mut(plane);
        for (i, c) in x.data().iter().enumerate() {
            re[i] = c.re;
            im[i] = c.im;
        }
        for r in 1..replicas {
            data.copy_within(0..2 * plane, 2 * r * plane);
        }
        Ok(Self {
            replicas,
            height: x.height(),
            width: x.width(),
            data,
        })
    }

    pub fn from_data(replicas: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if replicas == 0 || data.len() != 2 * replicas * height * width {
            return Err(Error::InvalidDimension(format!(
                "{replicas} replicas of {height}x{width} need {} values, got {}",
                2 * replicas * height * width,
                data.len()
            )));
        }
        Ok(Self {
            replicas,
            height,
            width,
            data,
        })
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn channels(&self) -> usize {
        2 * self.replicas
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> TensorShape {
        TensorShape::new(self.channels(), self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Plane `c` (even: real part, odd: imaginary part of replica `c / 2`).
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Averages the real planes and the imaginary planes across replicas.
    pub fn mean_aggregate(&self) -> ComplexImage {
        let plane = self.height * self.width;
        let mut out = vec![Complex64::new(0.0, 0.0); plane];
        for r in 0..self.replicas {
            let re = self.plane(2 * r);
            let im = self.plane(2 * r + 1);
            for i in 0..plane {
                out[i].re += re[i];
                out[i].im += im[i];
            }
        }
        let inv = 1.0 / self.replicas as f64;
        for v in &mut out {
            *v *= inv;
        }
        ComplexImage::new(self.height, self.width, out).expect("shape is consistent")
    }

    /// Adds i.i.d. `N(0, sigma^2)` to every entry, independently per replica.
    pub fn inject_noise(&self, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise level must be finite and >= 0, got {sigma}"
            )));
        }
        let mut out = self.clone();
        if sigma > 0.0 {
            let mut rng = seeded(seed);
            for v in &mut out.data {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * z;
            }
        }
        Ok(out)
    }

    pub fn to_batch(&self) -> TensorBatch {
        TensorBatch::new(self.shape(), self.data.clone()).expect("nonempty tensor")
    }

    pub fn from_batch(batch: &TensorBatch, index: usize) -> Result<Self> {
        let s = batch.shape();
        if s.channels % 2 != 0 {
            return Err(Error::InvalidDimension(format!(
                "odd channel count {} is not a replica stack",
                s.channels
            )));
        }
        Self::from_data(s.channels / 2, s.height, s.width, batch.item(index).to_vec())
    }
}

/// Stacks tensors of one shape into a batch.
pub fn stack(tensors: &[MultiChannelTensor]) -> Result<TensorBatch> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::InvalidParameter("cannot stack an empty list".into()))?;
    let shape = first.shape();
    let mut data = Vec::with_capacity(shape.len() * tensors.len());
    for t in tensors {
        if t.shape() != shape {
            return Err(Error::InvalidDimension(format!(
                "cannot stack {:?} with {shape:?}",
                t.shape()
            )));
        }
        data.extend_from_slice(&t.data);
    }
    TensorBatch::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> ComplexImage {
        ComplexImage::from_fn(3, 4, |y, x| Complex64::new(y as f64 - 1.0, 0.5 * x as f64))
    }

    #[test]
    fn single_replica_is_re_im() {
        let x = image();
        let t = MultiChannelTensor::embed(&x, 1).unwrap();
        assert_eq!(t.channels(), 2);
        for (i, c) in x.data().iter().enumerate() {
            assert_eq!(t.plane(0)[i], c.re);
            assert_eq!(t.plane(1)[i], c.im);
        }
    }

    #[test]
    fn three_replicas_are_identical_pairs() {
        let t = MultiChannelTensor::embed(&image(), 3).unwrap();
        assert_eq!(t.channels(), 6);
        for r in 1..3 {
            assert_eq!(t.plane(2 * r), t.plane(0));
            assert_eq!(t.plane(2 * r + 1), t.plane(1));
        }
    }

    #[test]
    fn embed_rejects_zero_replicas() {
        assert!(matches!(
            MultiChannelTensor::embed(&image(), 0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn opposite_replicas_average_to_zero() {
        let x = image();
        let mut data = MultiChannelTensor::embed(&x, 1).unwrap().into_data();
        let neg: Vec<f64> = data.iter().map(|v| -v).collect();
        data.extend(neg);
        let t = MultiChannelTensor::from_data(2, 3, 4, data).unwrap();
        assert!(t.mean_aggregate().data().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn zero_noise_is_identity() {
        let t = MultiChannelTensor::embed(&image(), 2).unwrap();
        assert_eq!(t.inject_noise(0.0, 4).unwrap(), t);
    }
}
