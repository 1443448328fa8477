//! Dense kernels on channel-major activations.
//!
//! An activation with `c` channels over a batch of `b` images of `h x w`
//! pixels is a `c x (b*h*w)` row-major matrix; within a row, the batch index
//! is outermost and the column index innermost.

use std::fmt::Debug;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of a network.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + LinalgScalar + Debug + Default + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Spatial extent of one activation: `batch` images of `height x width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn cols(&self) -> usize {
        self.batch * self.plane()
    }

    pub fn halved(&self) -> Grid {
        Grid {
            batch: self.batch,
            height: self.height / 2,
            width: self.width / 2,
        }
    }
}

/// `c = alpha * a * b + beta * c` for row-major buffers; `ta`/`tb` transpose
/// the stored `a`/`b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<F: Real>(
    m: usize,
    n: usize,
    k: usize,
    alpha: F,
    a: &[F],
    ta: bool,
    b: &[F],
    tb: bool,
    beta: F,
    c: &mut [F],
) {
    let av = if ta {
        ArrayView2::from_shape((k, m), a).expect("a shape").reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("a shape")
    };
    let bv = if tb {
        ArrayView2::from_shape((n, k), b).expect("b shape").reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("b shape")
    };
    let mut cv = ArrayViewMut2::from_shape((m, n), c).expect("c shape");
    general_mat_mul(alpha, &av, &bv, beta, &mut cv);
}

/// Unfolds `x` (`c x cols`) into `(c*k*k) x cols` patches with zero padding.
pub fn im2col<F: Real>(x: &[F], channels: usize, g: Grid, k: usize, out: &mut Vec<F>) {
    let (h, w, plane) = (g.height, g.width, g.plane());
    let cols = g.cols();
    let pad = (k / 2) as isize;
    out.clear();
    out.resize(channels * k * k * cols, F::zero());
    for c in 0..channels {
        let src_c = &x[c * cols..(c + 1) * cols];
        for dy in 0..k {
            for dx in 0..k {
                let row = (c * k + dy) * k + dx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                let oy = dy as isize - pad;
                let ox = dx as isize - pad;
                let x_lo = (-ox).max(0) as usize;
                let x_hi = (w as isize - ox).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for b in 0..g.batch {
                    for y in 0..h {
                        let sy = y as isize + oy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let d0 = b * plane + y * w;
                        let s0 = b * plane + sy as usize * w;
                        let s_lo = (x_lo as isize + ox) as usize;
                        dst[d0 + x_lo..d0 + x_hi]
                            .copy_from_slice(&src_c[s0 + s_lo..s0 + s_lo + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto `dx`.
pub fn col2im_add<F: Real>(cols_grad: &[F], channels: usize, g: Grid, k: usize, dx: &mut [F]) {
    let (h, w, plane) = (g.height, g.width, g.plane());
    let cols = g.cols();
    let pad = (k / 2) as isize;
    for c in 0..channels {
        let dst_c = &mut dx[c * cols..(c + 1) * cols];
        for dy in 0..k {
            for dxk in 0..k {
                let row = (c * k + dy) * k + dxk;
                let src = &cols_grad[row * cols..(row + 1) * cols];
                let oy = dy as isize - pad;
                let ox = dxk as isize - pad;
                let x_lo = (-ox).max(0) as usize;
                let x_hi = (w as isize - ox).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for b in 0..g.batch {
                    for y in 0..h {
                        let sy = y as isize + oy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let d0 = b * plane + y * w;
                        let s0 = b * plane + sy as usize * w;
                        let s_lo = (x_lo as isize + ox) as usize;
                        let n = x_hi - x_lo;
                        for (t, v) in dst_c[s0 + s_lo..s0 + s_lo + n]
                            .iter_mut()
                            .zip(&src[d0 + x_lo..d0 + x_hi])
                        {
                            *t = *t + *v;
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 average pooling; `g` is the input grid (even sides).
pub fn avg_pool<F: Real>(x: &[F], channels: usize, g: Grid) -> Vec<F> {
    let o = g.halved();
    let quarter = F::of(0.25);
    let mut out = vec![F::zero(); channels * o.cols()];
    for c in 0..channels {
        for b in 0..g.batch {
            let src = &x[c * g.cols() + b * g.plane()..];
            let dst = &mut out[c * o.cols() + b * o.plane()..];
            for y in 0..o.height {
                let r0 = &src[2 * y * g.width..];
                let r1 = &src[(2 * y + 1) * g.width..];
                for xo in 0..o.width {
                    dst[y * o.width + xo] =
                        (r0[2 * xo] + r0[2 * xo + 1] + r1[2 * xo] + r1[2 * xo + 1]) * quarter;
                }
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool`]; `g` is the input (fine) grid.
pub fn avg_pool_backward<F: Real>(dy: &[F], channels: usize, g: Grid) -> Vec<F> {
    let o = g.halved();
    let quarter = F::of(0.25);
    let mut dx = vec![F::zero(); channels * g.cols()];
    for c in 0..channels {
        for b in 0..g.batch {
            let src = &dy[c * o.cols() + b * o.plane()..];
            let dst = &mut dx[c * g.cols() + b * g.plane()..];
            for y in 0..g.height {
                for xf in 0..g.width {
                    dst[y * g.width + xf] = src[(y / 2) * o.width + xf / 2] * quarter;
                }
            }
        }
    }
    dx
}

/// Nearest-neighbour x2 upsampling; `g` is the output (fine) grid.
pub fn upsample<F: Real>(x: &[F], channels: usize, g: Grid) -> Vec<F> {
    let o = g.halved();
    let mut out = vec![F::zero(); channels * g.cols()];
    for c in 0..channels {
        for b in 0..g.batch {
            let src = &x[c * o.cols() + b * o.plane()..];
            let dst = &mut out[c * g.cols() + b * g.plane()..];
            for y in 0..g.height {
                for xf in 0..g.width {
                    dst[y * g.width + xf] = src[(y / 2) * o.width + xf / 2];
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample`]; `g` is the fine grid.
pub fn upsample_backward<F: Real>(dy: &[F], channels: usize, g: Grid) -> Vec<F> {
    let o = g.halved();
    let mut dx = vec![F::zero(); channels * o.cols()];
    for c in 0..channels {
        for b in 0..g.batch {
            let src = &dy[c * g.cols() + b * g.plane()..];
            let dst = &mut dx[c * o.cols() + b * o.plane()..];
            for y in 0..g.height {
                for xf in 0..g.width {
                    let t = &mut dst[(y / 2) * o.width + xf / 2];
                    *t = *t + src[y * g.width + xf];
                }
            }
        }
    }
    dx
}

pub fn silu<F: Real>(v: F) -> F {
    v / (F::one() + (-v).exp())
}

pub fn silu_grad<F: Real>(v: F) -> F {
    let s = F::one() / (F::one() + (-v).exp());
    s * (F::one() + v * (F::one() - s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], cin: usize, g: Grid, k: usize, wts: &[f64], cout: usize) -> Vec<f64> {
        let pad = (k / 2) as isize;
        let mut out = vec![0.0; cout * g.cols()];
        for o in 0..cout {
            for b in 0..g.batch {
                for y in 0..g.height as isize {
                    for xx in 0..g.width as isize {
                        let mut acc = 0.0;
                        for c in 0..cin {
                            for dy in 0..k as isize {
                                for dx in 0..k as isize {
                                    let sy = y + dy - pad;
                                    let sx = xx + dx - pad;
                                    if sy < 0 || sx < 0 || sy >= g.height as isize || sx >= g.width as isize {
                                        continue;
                                    }
                                    let xi = c * g.cols() + b * g.plane() + sy as usize * g.width + sx as usize;
                                    let wi = o * cin * k * k + (c * k + dy as usize) * k + dx as usize;
                                    acc += wts[wi] * x[xi];
                                }
                            }
                        }
                        out[o * g.cols() + b * g.plane() + y as usize * g.width + xx as usize] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, s: u64) -> Vec<f64> {
        (0..n).map(|i| (((i as u64 * 2654435761 + s) % 1000) as f64) / 500.0 - 1.0).collect()
    }

    #[test]
    fn im2col_gemm_matches_direct_convolution() {
        let g = Grid { batch: 2, height: 5, width: 7 };
        let (cin, cout, k) = (3, 4, 3);
        let x = pseudo(cin * g.cols(), 1);
        let wts = pseudo(cout * cin * k * k, 7);
        let mut cols = Vec::new();
        im2col(&x, cin, g, k, &mut cols);
        let mut out = vec![0.0; cout * g.cols()];
        gemm(cout, g.cols(), cin * k * k, 1.0, &wts, false, &cols, false, 0.0, &mut out);
        let want = naive_conv(&x, cin, g, k, &wts, cout);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = Grid { batch: 2, height: 4, width: 6 };
        let (c, k) = (2, 3);
        let x = pseudo(c * g.cols(), 3);
        let y = pseudo(c * k * k * g.cols(), 11);
        let mut cols = Vec::new();
        im2col(&x, c, g, k, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im_add(&y, c, g, k, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample_adjoints() {
        let g = Grid { batch: 2, height: 4, width: 6 };
        let x = pseudo(3 * g.cols(), 5);
        let y = pseudo(3 * g.halved().cols(), 9);
        let px = avg_pool(&x, 3, g);
        let lhs: f64 = px.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = avg_pool_backward(&y, 3, g).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let uy = upsample(&y, 3, g);
        let lhs: f64 = uy.iter().zip(&x).map(|(a, b)| a * b).sum();
        let rhs: f64 = upsample_backward(&x, 3, g).iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn transposed_gemm() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 2.0, 1.0, 0.0, 1.0]; // stored 2x3, used as its transpose
        let mut c = [0.0; 4];
        gemm(2, 2, 3, 1.0, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [7.0, 4.0, 16.0, 10.0]);
    }

    #[test]
    fn silu_derivative() {
        for &v in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (silu(v + h) - silu(v - h)) / (2.0 * h);
            assert!((fd - silu_grad(v)).abs() < 1e-8);
        }
    }
}
