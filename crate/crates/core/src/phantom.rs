//! Synthetic complex-valued ellipse phantoms and training-patch extraction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::ComplexImage;
use crate::rng::{derive_seed, seeded, SeededRng};
use crate::Complex64;

/// An ellipse in normalized coordinates (`[-1, 1]` across the image).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: (f64, f64),
    /// Semi-axes before rotation.
    pub axes: (f64, f64),
    /// Rotation in radians.
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let u = (c * dx + s * dy) / self.axes.0;
        let v = (-s * dx + c * dy) / self.axes.1;
        u * u + v * v <= 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PhaseModel {
    Zero,
    /// Random quadratic polynomial with `|grad phase|` at most
    /// `max_gradient` radians per pixel.
    Polynomial { max_gradient: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub size: usize,
    /// Inclusive range of the ellipse count.
    pub ellipses: (usize, usize),
    /// Intensity range of the inner ellipses; the first ellipse is a large
    /// envelope with intensity in the upper half of `[0.5, 1]`.
    pub intensity: (f64, f64),
    pub phase: PhaseModel,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 128,
            ellipses: (5, 12),
            intensity: (-0.4, 0.4),
            phase: PhaseModel::Polynomial { max_gradient: 0.02 },
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::InvalidParameter("phantom size must be positive".into()));
        }
        if self.ellipses.0 > self.ellipses.1 {
            return Err(Error::InvalidParameter("ellipse count range is empty".into()));
        }
        if !(self.intensity.0 <= self.intensity.1) {
            return Err(Error::InvalidParameter("intensity range is empty".into()));
        }
        if let PhaseModel::Polynomial { max_gradient } = self.phase {
            if !(max_gradient >= 0.0) {
                return Err(Error::InvalidParameter("phase gradient bound must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Quadratic phase `c0 + c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2` over
/// normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticPhase(pub [f64; 6]);

impl QuadraticPhase {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let c = &self.0;
        c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
    }

    /// Gradient in radians per normalized unit.
    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let c = &self.0;
        (c[1] + 2.0 * c[3] * x + c[4] * y, c[2] + c[4] * x + 2.0 * c[5] * y)
    }

    /// Largest `|grad|` in radians per pixel on a `size`-pixel grid; the
    /// gradient magnitude is convex, so the maximum sits at a corner.
    pub fn max_gradient_per_pixel(&self, size: usize) -> f64 {
        let per_pixel = 2.0 / size as f64;
        let e = pixel_coord(0, size).abs();
        [(-e, -e), (-e, e), (e, -e), (e, e)]
            .iter()
            .map(|&(x, y)| {
                let (gx, gy) = self.gradient(x, y);
                (gx * gx + gy * gy).sqrt() * per_pixel
            })
            .fold(0.0, f64::max)
    }
}

fn pixel_coord(i: usize, size: usize) -> f64 {
    (2.0 * i as f64 + 1.0) / size as f64 - 1.0
}

fn random_phase(rng: &mut SeededRng, size: usize, bound: f64) -> QuadraticPhase {
    let mut c = [0.0; 6];
    c[0] = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    for v in &mut c[1..] {
        *v = rng.random_range(-1.0..1.0);
    }
    let mut p = QuadraticPhase(c);
    let g = p.max_gradient_per_pixel(size);
    let scale = if g > 0.0 { bound / g * rng.random_range(0.5..1.0) } else { 0.0 };
    for v in &mut p.0[1..] {
        *v *= scale;
    }
    p
}

/// Samples the ellipses of a spec.
pub fn random_ellipses(spec: &PhantomSpec, rng: &mut SeededRng) -> Vec<Ellipse> {
    let n = rng.random_range(spec.ellipses.0..=spec.ellipses.1);
    let mut v = Vec::with_capacity(n);
    for k in 0..n {
        if k == 0 {
            v.push(Ellipse {
                center: (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)),
                axes: (rng.random_range(0.6..0.85), rng.random_range(0.7..0.9)),
                angle: rng.random_range(-0.3..0.3),
                intensity: rng.random_range(0.75..1.0),
            });
        } else {
            let r = rng.random_range(0.0..0.5f64);
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            v.push(Ellipse {
                center: (r * t.cos(), r * t.sin()),
                axes: (rng.random_range(0.04..0.3), rng.random_range(0.04..0.3)),
                angle: rng.random_range(0.0..std::f64::consts::PI),
                intensity: if spec.intensity.0 == spec.intensity.1 {
                    spec.intensity.0
                } else {
                    rng.random_range(spec.intensity.0..spec.intensity.1)
                },
            });
        }
    }
    v
}

const SUPERSAMPLE: usize = 4;

/// Renders ellipses with 4x4 supersampled edges, clips the summed intensity
/// to `[0, 1]` and applies `phase`.
pub fn render_ellipses(size: usize, ellipses: &[Ellipse], phase: Option<&QuadraticPhase>) -> ComplexImage {
    let s = SUPERSAMPLE;
    ComplexImage::from_fn(size, size, |iy, ix| {
        let mut acc = 0.0;
        for sy in 0..s {
            for sx in 0..s {
                let y = ((iy * s + sy) as f64 * 2.0 + 1.0) / (size * s) as f64 - 1.0;
                let x = ((ix * s + sx) as f64 * 2.0 + 1.0) / (size * s) as f64 - 1.0;
                let v: f64 = ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum();
                acc += v;
            }
        }
        let m = (acc / (s * s) as f64).clamp(0.0, 1.0);
        let phi = phase.map_or(0.0, |p| p.eval(pixel_coord(ix, size), pixel_coord(iy, size)));
        Complex64::from_polar(m, phi)
    })
}

/// A phantom drawn from `spec`; deterministic per `spec.seed`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<ComplexImage> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let ellipses = random_ellipses(spec, &mut rng);
    let phase = match spec.phase {
        PhaseModel::Zero => None,
        PhaseModel::Polynomial { max_gradient } => Some(random_phase(&mut rng, spec.size, max_gradient)),
    };
    Ok(render_ellipses(spec.size, &ellipses, phase.as_ref()))
}

/// `count` phantoms with seeds derived from `spec.seed`, starting at `first`.
pub fn generate_set(spec: &PhantomSpec, first: usize, count: usize) -> Result<Vec<ComplexImage>> {
    (first..first + count)
        .map(|i| generate_phantom(&spec.with_seed(derive_seed(spec.seed, i as u64))))
        .collect()
}

/// Uniform random crops of `patch_size`, optionally with random flips.
pub fn extract_patches(
    images: &[ComplexImage],
    patch_size: usize,
    count: usize,
    flips: bool,
    seed: u64,
) -> Result<Vec<ComplexImage>> {
    if images.is_empty() {
        return Err(Error::InvalidParameter("no source images".into()));
    }
    if patch_size == 0 {
        return Err(Error::InvalidParameter("patch size must be positive".into()));
    }
    if let Some(img) = images.iter().find(|i| i.height() < patch_size || i.width() < patch_size) {
        return Err(Error::InvalidDimension(format!(
            "patch {patch_size} larger than image {}x{}",
            img.height(),
            img.width()
        )));
    }
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let img = &images[rng.random_range(0..images.len())];
        let y0 = rng.random_range(0..=img.height() - patch_size);
        let x0 = rng.random_range(0..=img.width() - patch_size);
        let (fh, fv) = if flips { (rng.random::<bool>(), rng.random::<bool>()) } else { (false, false) };
        out.push(ComplexImage::from_fn(patch_size, patch_size, |y, x| {
            let sy = if fv { patch_size - 1 - y } else { y };
            let sx = if fh { patch_size - 1 - x } else { x };
            img.get(y0 + sy, x0 + sx)
        }));
    }
    Ok(out)
}

/// One file of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub seed: u64,
}

/// Dataset listing; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: PhantomSpec,
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}
