use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{fftshift, ifftshift};
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Whole phase-encode rows with a fully sampled center band.
    #[serde(rename = "cartesian1d")]
    Cartesian1d,
    /// Variable-density random bins with a fully sampled center disc.
    #[serde(rename = "random2d")]
    Random2d,
    /// Straight spokes through the k-space center.
    PseudoRadial,
}

impl MaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskKind::Cartesian1d => "cartesian1d",
            MaskKind::Random2d => "random2d",
            MaskKind::PseudoRadial => "pseudo_radial",
        }
    }
}

impl std::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartesian1d" | "cartesian" => Ok(MaskKind::Cartesian1d),
            "random2d" | "random" => Ok(MaskKind::Random2d),
            "pseudo_radial" | "radial" => Ok(MaskKind::PseudoRadial),
            other => Err(Error::InvalidParameter(format!("unknown mask kind `{other}`"))),
        }
    }
}

/// Optional knobs for [`make_mask`]; `None` selects the built-in default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskParams {
    /// Cartesian: width of the fully sampled center band, in rows.
    /// Default: 4% of the rows.
    pub center_lines: Option<usize>,
    /// Random 2-D: radius of the fully sampled center disc, in bins.
    /// Default: 4% of the smaller dimension.
    pub center_radius: Option<f64>,
    /// Exponent `p` of the `(1 - r / r_max)^p` sampling density.
    pub density_power: f64,
    /// Pseudo-radial: starting spoke count before thinning.
    /// Default: `ceil(pi * min(H, W) / (2 R))`.
    pub spokes: Option<usize>,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            center_lines: None,
            center_radius: None,
            density_power: 2.0,
            spokes: None,
        }
    }
}

/// Boolean k-space selector, stored in corner layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    selected: Vec<bool>,
    nominal_acceleration: f64,
    kind: MaskKind,
}

impl SamplingMask {
    /// Mask from a corner-layout selection.
    pub fn new(
        height: usize,
        width: usize,
        selected: Vec<bool>,
        nominal_acceleration: f64,
        kind: MaskKind,
    ) -> Result<Self> {
        if selected.len() != height * width {
            return Err(Error::InvalidDimension(format!(
                "mask of {height}x{width} needs {} entries, got {}",
                height * width,
                selected.len()
            )));
        }
        Ok(Self {
            height,
            width,
            selected,
            nominal_acceleration,
            kind,
        })
    }

    /// Mask from a DC-centered selection.
    pub fn from_centered(
        height: usize,
        width: usize,
        centered: &[bool],
        nominal_acceleration: f64,
        kind: MaskKind,
    ) -> Result<Self> {
        if centered.len() != height * width {
            return Err(Error::InvalidDimension(format!(
                "mask of {height}x{width} needs {} entries, got {}",
                height * width,
                centered.len()
            )));
        }
        Self::new(
            height,
            width,
            ifftshift(centered, height, width),
            nominal_acceleration,
            kind,
        )
    }

    pub fn full(height: usize, width: usize, kind: MaskKind) -> Self {
        Self {
            height,
            width,
            selected: vec![true; height * width],
            nominal_acceleration: 1.0,
            kind,
        }
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

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn nominal_acceleration(&self) -> f64 {
        self.nominal_acceleration
    }

    /// Corner-layout selection, row-major.
    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    /// DC-centered view of the selection.
    pub fn centered(&self) -> Vec<bool> {
        fftshift(&self.selected, self.height, self.width)
    }

    pub fn is_selected(&self, y: usize, x: usize) -> bool {
        self.selected[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.selected.len() as f64
    }

    /// Acquired-fraction reciprocal, i.e. the realised acceleration.
    pub fn effective_acceleration(&self) -> f64 {
        1.0 / self.fraction()
    }

    pub(crate) fn check_shape(&self, h: usize, w: usize) -> Result<()> {
        if self.height != h || self.width != w {
            return Err(Error::InvalidDimension(format!(
                "mask is {}x{}, data is {h}x{w}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Generates a sampling mask whose selected fraction is within 10% of `1 / R`.
pub fn make_mask(
    kind: MaskKind,
    height: usize,
    width: usize,
    acceleration: f64,
    seed: u64,
    params: &MaskParams,
) -> Result<SamplingMask> {
    if !(acceleration >= 1.0) || !acceleration.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "acceleration must be a finite value >= 1, got {acceleration}"
        )));
    }
    if height < 8 || width < 8 {
        return Err(Error::InvalidDimension(format!(
            "masks need both dimensions >= 8, got {height}x{width}"
        )));
    }
    if !(params.density_power >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "density power must be >= 0, got {}",
            params.density_power
        )));
    }
    if acceleration == 1.0 {
        return Ok(SamplingMask::full(height, width, kind));
    }

    let centered = match kind {
        MaskKind::Cartesian1d => cartesian(height, width, acceleration, seed, params)?,
        MaskKind::Random2d => random2d(height, width, acceleration, seed, params)?,
        MaskKind::PseudoRadial => pseudo_radial(height, width, acceleration, params)?,
    };
    let mask = SamplingMask::from_centered(height, width, &centered, acceleration, kind)?;

    let fraction = mask.fraction();
    let (lo, hi) = (0.9 / acceleration, 1.1 / acceleration);
    if fraction < lo || fraction > hi {
        return Err(Error::InfeasibleMask(format!(
            "{kind} mask of {height}x{width} reaches fraction {fraction:.4}, outside [{lo:.4}, {hi:.4}]"
        )));
    }
    debug_assert!(mask.is_selected(0, 0));
    Ok(mask)
}

/// Indices of the `k` items drawn without replacement with probability
/// proportional to `weights` (Efraimidis-Spirakis keys).
fn weighted_sample(weights: &[f64], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.ln() / w, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.truncate(k);
    keyed.into_iter().map(|(_, i)| i).collect()
}

fn cartesian(
    height: usize,
    width: usize,
    acceleration: f64,
    seed: u64,
    params: &MaskParams,
) -> Result<Vec<bool>> {
    let target = (height as f64 / acceleration).round() as usize;
    let band = params
        .center_lines
        .unwrap_or_else(|| ((0.04 * height as f64).round() as usize).max(1));
    if band == 0 {
        return Err(Error::InvalidParameter("center band must contain the DC row".into()));
    }
    if band > target {
        return Err(Error::InfeasibleMask(format!(
            "center band of {band} rows exceeds the {target} rows allowed at R = {acceleration}"
        )));
    }
    let center = height / 2;
    let start = center - band / 2;
    let mut rows = vec![false; height];
    for r in rows.iter_mut().skip(start).take(band) {
        *r = true;
    }

    let half = height as f64 / 2.0;
    let weights: Vec<f64> = (0..height)
        .map(|r| {
            if rows[r] {
                0.0
            } else {
                let d = (r as f64 - center as f64).abs() / half;
                (1.0 - d).max(0.0).powf(params.density_power)
            }
        })
        .collect();
    let need = target - band;
    let available = weights.iter().filter(|&&w| w > 0.0).count();
    if need > available {
        return Err(Error::InfeasibleMask(format!(
            "need {need} more rows but only {available} have nonzero density"
        )));
    }
    let mut rng = seeded(seed);
    for r in weighted_sample(&weights, need, &mut rng) {
        rows[r] = true;
    }

    let mut out = vec![false; height * width];
    for (r, &on) in rows.iter().enumerate() {
        if on {
            out[r * width..(r + 1) * width].fill(true);
        }
    }
    Ok(out)
}

fn random2d(
    height: usize,
    width: usize,
    acceleration: f64,
    seed: u64,
    params: &MaskParams,
) -> Result<Vec<bool>> {
    let total = height * width;
    let target = (total as f64 / acceleration).round() as usize;
    let radius = params
        .center_radius
        .unwrap_or(0.04 * height.min(width) as f64);
    if !(radius >= 0.0) {
        return Err(Error::InvalidParameter(format!("center radius must be >= 0, got {radius}")));
    }
    let (cy, cx) = ((height / 2) as f64, (width / 2) as f64);
    let r_max = (cy * cy + cx * cx).sqrt();

    let mut out = vec![false; total];
    let mut weights = vec![0.0; total];
    let mut in_disc = 0;
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let r = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            if r <= radius {
                out[i] = true;
                in_disc += 1;
            } else {
                weights[i] = (1.0 - r / r_max).max(0.0).powf(params.density_power);
            }
        }
    }
    if in_disc > target {
        return Err(Error::InfeasibleMask(format!(
            "center disc holds {in_disc} bins, more than the {target} allowed at R = {acceleration}"
        )));
    }
    let need = target - in_disc;
    let available = weights.iter().filter(|&&w| w > 0.0).count();
    if need > available {
        return Err(Error::InfeasibleMask(format!(
            "need {need} more bins but only {available} have nonzero density"
        )));
    }
    let mut rng = seeded(seed);
    for i in weighted_sample(&weights, need, &mut rng) {
        out[i] = true;
    }
    Ok(out)
}

fn rasterize_spokes(height: usize, width: usize, spokes: usize) -> Vec<bool> {
    let (cy, cx) = ((height / 2) as f64, (width / 2) as f64);
    let reach = ((height * height + width * width) as f64).sqrt();
    let steps = (2.0 * reach / 0.5).ceil() as usize;
    let mut out = vec![false; height * width];
    out[(height / 2) * width + width / 2] = true;
    for k in 0..spokes {
        let theta = PI * k as f64 / spokes as f64;
        let (s, c) = theta.sin_cos();
        for step in 0..=steps {
            let t = -reach + 0.5 * step as f64;
            let y = (cy + t * s).round();
            let x = (cx + t * c).round();
            if y >= 0.0 && x >= 0.0 && (y as usize) < height && (x as usize) < width {
                out[y as usize * width + x as usize] = true;
            }
        }
    }
    out
}

fn pseudo_radial(
    height: usize,
    width: usize,
    acceleration: f64,
    params: &MaskParams,
) -> Result<Vec<bool>> {
    let total = height * width;
    let target = (total as f64 / acceleration).round() as usize;
    let mut spokes = params.spokes.unwrap_or_else(|| {
        (PI * height.min(width) as f64 / (2.0 * acceleration)).ceil() as usize
    });
    if spokes == 0 {
        return Err(Error::InvalidParameter("spoke count must be >= 1".into()));
    }

    let limit = 4 * (height + width);
    let mut out = rasterize_spokes(height, width, spokes);
    while out.iter().filter(|&&s| s).count() < target {
        spokes += 1;
        if spokes > limit {
            return Err(Error::InfeasibleMask(format!(
                "{limit} spokes still cover fewer than {target} bins"
            )));
        }
        out = rasterize_spokes(height, width, spokes);
    }

    // Thin from the outside in so every spoke keeps its low frequencies.
    let (cy, cx) = ((height / 2) as f64, (width / 2) as f64);
    let mut chosen: Vec<(f64, usize)> = out
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| {
            let (y, x) = ((i / width) as f64, (i % width) as f64);
            ((y - cy).powi(2) + (x - cx).powi(2), i)
        })
        .collect();
    chosen.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let excess = chosen.len() - target;
    for &(_, i) in chosen.iter().take(excess) {
        out[i] = false;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartesian_selects_whole_rows_with_center_band() {
        let params = MaskParams {
            center_lines: Some(8),
            ..MaskParams::default()
        };
        let mask = make_mask(MaskKind::Cartesian1d, 256, 256, 4.0, 7, &params).unwrap();
        let centered = mask.centered();
        let mut lines = 0;
        for r in 0..256 {
            let row = &centered[r * 256..(r + 1) * 256];
            let on = row.iter().filter(|&&s| s).count();
            assert!(on == 0 || on == 256, "row {r} partially selected");
            if on == 256 {
                lines += 1;
            }
        }
        assert!((58..=70).contains(&lines), "{lines} lines");
        for r in 124..132 {
            assert!(centered[r * 256], "center row {r} missing");
        }
    }

    #[test]
    fn unit_acceleration_is_full() {
        for kind in [MaskKind::Cartesian1d, MaskKind::Random2d, MaskKind::PseudoRadial] {
            let mask = make_mask(kind, 32, 32, 1.0, 0, &MaskParams::default()).unwrap();
            assert_eq!(mask.count(), 32 * 32);
        }
    }

    #[test]
    fn radial_rate_for_r_6_7() {
        let mask = make_mask(MaskKind::PseudoRadial, 64, 64, 6.7, 0, &MaskParams::default()).unwrap();
        let f = mask.fraction();
        assert!((0.134..=0.164).contains(&f), "fraction {f}");
    }

    #[test]
    fn dc_always_selected() {
        for kind in [MaskKind::Cartesian1d, MaskKind::Random2d, MaskKind::PseudoRadial] {
            for &r in &[2.0, 3.3, 6.7, 10.0] {
                let mask = make_mask(kind, 128, 128, r, 3, &MaskParams::default()).unwrap();
                assert!(mask.is_selected(0, 0), "{kind} at R={r}");
            }
        }
    }

    #[test]
    fn oversized_center_band_is_infeasible() {
        let params = MaskParams {
            center_lines: Some(40),
            ..MaskParams::default()
        };
        let err = make_mask(MaskKind::Cartesian1d, 64, 64, 4.0, 0, &params).unwrap_err();
        assert!(matches!(err, Error::InfeasibleMask(_)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = MaskParams::default();
        assert!(matches!(
            make_mask(MaskKind::Random2d, 4, 64, 2.0, 0, &p),
            Err(Error::InvalidDimension(_))
        ));
        assert!(matches!(
            make_mask(MaskKind::Random2d, 64, 64, 0.5, 0, &p),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn random2d_covers_center_disc() {
        let params = MaskParams {
            center_radius: Some(4.0),
            ..MaskParams::default()
        };
        let mask = make_mask(MaskKind::Random2d, 64, 64, 5.0, 11, &params).unwrap();
        let c = mask.centered();
        for y in 28..=36 {
            for x in 28..=36 {
                let r2 = (y as f64 - 32.0).powi(2) + (x as f64 - 32.0).powi(2);
                if r2 <= 16.0 {
                    assert!(c[y * 64 + x]);
                }
            }
        }
    }
}
