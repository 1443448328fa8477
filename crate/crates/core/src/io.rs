//! File formats.
//!
//! Complex grids are raw little-endian `f64` pairs (re, im) in row-major
//! order with a JSON sidecar `<file>.json`. Masks store packed bit rows of the
//! DC-centered view, most significant bit first, each row padded to whole
//! bytes, with the same kind of sidecar.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::{ComplexImage, KSpaceData, MaskKind, SamplingMask};
use crate::Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Image,
    Kspace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexHeader {
    pub height: usize,
    pub width: usize,
    pub dtype: String,
    pub domain: Domain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskHeader {
    pub height: usize,
    pub width: usize,
    pub dtype: String,
    pub layout: String,
    pub kind: MaskKind,
    pub acceleration: f64,
    pub selected: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_sidecar<T: Serialize>(path: &Path, header: &T) -> Result<()> {
    fs::write(sidecar_path(path), serde_json::to_string_pretty(header)? + "\n")?;
    Ok(())
}

fn read_sidecar<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side)?;
    serde_json::from_str(&text).map_err(|e| Error::format(side, e.to_string()))
}

fn write_c128(path: &Path, h: usize, w: usize, data: &[Complex64], domain: Domain) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    for v in data {
        f.write_all(&v.re.to_le_bytes())?;
        f.write_all(&v.im.to_le_bytes())?;
    }
    f.flush()?;
    write_sidecar(path, &ComplexHeader { height: h, width: w, dtype: "c128".into(), domain })
}

fn read_c128(path: &Path, domain: Domain) -> Result<(usize, usize, Vec<Complex64>)> {
    let header: ComplexHeader = read_sidecar(path)?;
    if header.dtype != "c128" {
        return Err(Error::format(path, format!("unsupported dtype {}", header.dtype)));
    }
    if header.domain != domain {
        return Err(Error::format(path, format!("expected {domain:?} data, file holds {:?}", header.domain)));
    }
    let bytes = fs::read(path)?;
    let n = header.height * header.width;
    if bytes.len() != 16 * n {
        return Err(Error::format(path, format!("expected {} bytes, found {}", 16 * n, bytes.len())));
    }
    let data = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    Ok((header.height, header.width, data))
}

pub fn write_image(path: impl AsRef<Path>, img: &ComplexImage) -> Result<()> {
    write_c128(path.as_ref(), img.height(), img.width(), img.data(), Domain::Image)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ComplexImage> {
    let (h, w, d) = read_c128(path.as_ref(), Domain::Image)?;
    ComplexImage::new(h, w, d)
}

pub fn write_kspace(path: impl AsRef<Path>, y: &KSpaceData) -> Result<()> {
    write_c128(path.as_ref(), y.height(), y.width(), y.data(), Domain::Kspace)
}

pub fn read_kspace(path: impl AsRef<Path>) -> Result<KSpaceData> {
    let (h, w, d) = read_c128(path.as_ref(), Domain::Kspace)?;
    KSpaceData::new(h, w, d)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &SamplingMask) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = mask.shape();
    let centered = mask.centered();
    let row_bytes = w.div_ceil(8);
    let mut bytes = vec![0u8; h * row_bytes];
    for y in 0..h {
        for x in 0..w {
            if centered[y * w + x] {
                bytes[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    fs::write(path, bytes)?;
    write_sidecar(
        path,
        &MaskHeader {
            height: h,
            width: w,
            dtype: "bits".into(),
            layout: "centered".into(),
            kind: mask.kind(),
            acceleration: mask.nominal_acceleration(),
            selected: mask.count(),
        },
    )
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<SamplingMask> {
    let path = path.as_ref();
    let header: MaskHeader = read_sidecar(path)?;
    if header.dtype != "bits" || header.layout != "centered" {
        return Err(Error::format(path, "unsupported mask encoding"));
    }
    let (h, w) = (header.height, header.width);
    let row_bytes = w.div_ceil(8);
    let bytes = fs::read(path)?;
    if bytes.len() != h * row_bytes {
        return Err(Error::format(path, format!("expected {} bytes, found {}", h * row_bytes, bytes.len())));
    }
    let centered: Vec<bool> = (0..h * w)
        .map(|i| bytes[(i / w) * row_bytes + (i % w) / 8] & (0x80 >> ((i % w) % 8)) != 0)
        .collect();
    let mask = SamplingMask::from_centered(h, w, &centered, header.acceleration, header.kind)?;
    if mask.count() != header.selected {
        return Err(Error::format(path, "selected count does not match header"));
    }
    Ok(mask)
}

fn write_gray_png(path: &Path, w: usize, h: usize, pixels: &[u8]) -> Result<()> {
    let f = BufWriter::new(fs::File::create(path)?);
    let mut enc = png::Encoder::new(f, w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut wr = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
    wr.write_image_data(pixels).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(())
}

fn to_byte(v: f64, max: f64) -> u8 {
    if max > 0.0 {
        ((v / max).clamp(0.0, 1.0) * 255.0).round() as u8
    } else {
        0
    }
}

/// Grayscale magnitude image clipped to `[0, max]` (own maximum by default).
pub fn write_magnitude_png(path: impl AsRef<Path>, img: &ComplexImage, max: Option<f64>) -> Result<()> {
    let max = max.unwrap_or_else(|| img.max_magnitude());
    let px: Vec<u8> = img.magnitudes().iter().map(|&m| to_byte(m, max)).collect();
    write_gray_png(path.as_ref(), img.width(), img.height(), &px)
}

/// Mask in the DC-centered view, white where sampled.
pub fn write_mask_png(path: impl AsRef<Path>, mask: &SamplingMask) -> Result<()> {
    let px: Vec<u8> = mask.centered().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_gray_png(path.as_ref(), mask.width(), mask.height(), &px)
}

/// Images tiled left to right, top to bottom, `columns` per row, separated by
/// a 2-pixel gap; all tiles share the scale `max`.
pub fn write_contact_sheet(
    path: impl AsRef<Path>,
    images: &[ComplexImage],
    columns: usize,
    max: Option<f64>,
) -> Result<()> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidParameter("contact sheet needs at least one image".into()))?;
    let (th, tw) = first.shape();
    if images.iter().any(|i| i.shape() != (th, tw)) {
        return Err(Error::InvalidDimension("contact sheet tiles differ in shape".into()));
    }
    let columns = columns.clamp(1, images.len());
    let rows = images.len().div_ceil(columns);
    let gap = 2;
    let (w, h) = (columns * (tw + gap) - gap, rows * (th + gap) - gap);
    let max = max.unwrap_or_else(|| images.iter().map(|i| i.max_magnitude()).fold(0.0, f64::max));
    let mut px = vec![0u8; w * h];
    for (k, img) in images.iter().enumerate() {
        let (r, c) = (k / columns, k % columns);
        let mags = img.magnitudes();
        for y in 0..th {
            for x in 0..tw {
                px[(r * (th + gap) + y) * w + c * (tw + gap) + x] = to_byte(mags[y * tw + x], max);
            }
        }
    }
    write_gray_png(path.as_ref(), w, h, &px)
}

/// Line chart of one or more `(x, y)` series on shared linear axes.
pub fn write_line_plot(path: impl AsRef<Path>, series: &[Vec<(f64, f64)>], width: usize, height: usize) -> Result<()> {
    let pts: Vec<(f64, f64)> = series.iter().flatten().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    if pts.is_empty() || width < 16 || height < 16 {
        return Err(Error::InvalidParameter("nothing to plot".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let m = 8usize;
    let (pw, ph) = ((width - 2 * m) as f64, (height - 2 * m) as f64);
    let mut px = vec![255u8; width * height];
    for x in m..width - m {
        px[(height - m) * width + x] = 0;
    }
    for y in m..=height - m {
        px[y * width + m] = 0;
    }
    let to_px = |x: f64, y: f64| {
        let u = m as f64 + (x - x0) / (x1 - x0) * pw;
        let v = (height - m) as f64 - (y - y0) / (y1 - y0) * ph;
        (u, v)
    };
    for (si, s) in series.iter().enumerate() {
        let shade = (si * 90 % 200) as u8;
        for win in s.windows(2) {
            let (a, b) = (to_px(win[0].0, win[0].1), to_px(win[1].0, win[1].1));
            let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                let (u, v) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
                if u.is_finite() && v.is_finite() {
                    let (u, v) = (u.round() as usize, v.round() as usize);
                    if u < width && v < height {
                        px[v * width + u] = shade;
                    }
                }
            }
        }
    }
    write_gray_png(path.as_ref(), width, height, &px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::{make_mask, MaskParams};

    #[test]
    fn complex_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ComplexImage::from_fn(5, 7, |y, x| Complex64::new(y as f64 * 0.1, -(x as f64) / 3.0));
        let p = dir.path().join("a.c128");
        write_image(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
        assert!(read_kspace(&p).is_err());
        assert!(sidecar_path(&p).exists());
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_mask(MaskKind::PseudoRadial, 30, 21, 4.0, 3, &MaskParams::default()).unwrap();
        let p = dir.path().join("m.bits");
        write_mask(&p, &m).unwrap();
        let back = read_mask(&p).unwrap();
        assert_eq!(back.selected(), m.selected());
        assert_eq!(back.kind(), m.kind());
        write_mask_png(dir.path().join("m.png"), &m).unwrap();
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.c128");
        write_image(&p, &ComplexImage::zeros(4, 4)).unwrap();
        fs::write(&p, [0u8; 10]).unwrap();
        assert!(matches!(read_image(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn pngs_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let img = ComplexImage::from_fn(8, 8, |y, x| Complex64::new((x + y) as f64, 0.0));
        write_magnitude_png(dir.path().join("a.png"), &img, None).unwrap();
        write_contact_sheet(dir.path().join("s.png"), &[img.clone(), img.clone(), img], 2, None).unwrap();
        write_line_plot(dir.path().join("l.png"), &[vec![(0.0, 1.0), (1.0, 3.0), (2.0, 2.0)]], 64, 48).unwrap();
        let d = png::Decoder::new(std::io::BufReader::new(fs::File::open(dir.path().join("s.png")).unwrap()));
        let r = d.read_info().unwrap();
        assert_eq!(r.info().width, 18);
        assert_eq!(r.info().height, 18);
    }
}
