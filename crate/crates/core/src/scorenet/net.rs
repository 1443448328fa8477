use std::ops::Range;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{
    avg_pool, avg_pool_backward, col2im_add, gemm, im2col, silu, silu_grad, upsample,
    upsample_backward, Grid, Real,
};
use crate::density::NoiseSchedule;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::{ScoreModel, TensorBatch, TensorShape};

/// Shape of a noise-conditional encoder-decoder.
///
/// `widths[l]` is the channel count at resolution level `l` (level 0 is full
/// resolution). Each level runs `depth` convolutions; levels are joined by
/// 2x2 average pooling on the way down and nearest upsampling plus skip
/// concatenation on the way up. A single-level network with `kernel = 1` is
/// a per-pixel MLP.
///
/// The trainable part only sees the replica mean `m`: with independent
/// per-replica noise `m` is sufficient for the clean image, and the exact
/// score splits into a denoising term on `m` plus the known deviation term.
/// Output for replica `k` is `f_k = h(m) - (X_k - m) / s`, so identical
/// replicas (the sampler's input) are not off the training distribution.
///
/// With `sigma_data` set, `h` is wrapped in fixed noise-level scalings at the
/// mean's level `e = s / sqrt(N)`: `h = (a m + b g(c m)) / sqrt(N)` with
/// `c = 1 / sqrt(e^2 + d^2)`, `a = -e / (e^2 + d^2)` and `b = d c`. A zero
/// `g` is then the exact score of a zero-mean Gaussian with per-entry std
/// `d`, so training starts from the linear shrinkage denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub replicas: usize,
    pub widths: Vec<usize>,
    pub depth: usize,
    pub kernel: usize,
    #[serde(default = "yes")]
    pub zero_init_output: bool,
    /// Per-entry RMS of clean data; enables the noise-level scalings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_data: Option<f64>,
}

fn yes() -> bool {
    true
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            replicas: 3,
            widths: vec![8, 16, 32, 32],
            depth: 2,
            kernel: 3,
            zero_init_output: true,
            sigma_data: Some(0.35),
        }
    }
}

impl NetworkConfig {
    /// Per-pixel MLP for point data embedded as 1x1 images.
    pub fn mlp(replicas: usize, width: usize, depth: usize) -> Self {
        Self {
            replicas,
            widths: vec![width],
            depth,
            kernel: 1,
            zero_init_output: true,
            sigma_data: None,
        }
    }

    pub fn channels(&self) -> usize {
        2 * self.replicas
    }

    /// Side lengths must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.widths.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::InvalidParameter("replica count must be >= 1".into()));
        }
        if self.widths.is_empty() || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter("network widths must be non-empty and positive".into()));
        }
        if self.depth == 0 {
            return Err(Error::InvalidParameter("network depth must be >= 1".into()));
        }
        if let Some(d) = self.sigma_data {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::InvalidParameter(format!("sigma_data must be finite and > 0, got {d}")));
            }
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidParameter(format!("kernel size must be odd, got {}", self.kernel)));
        }
        Ok(())
    }
}

/// Short digest identifying an architecture together with its noise levels.
pub fn architecture_hash(config: &NetworkConfig, schedule: &NoiseSchedule) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("serializable"));
    for s in schedule.levels() {
        h.update(s.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

#[derive(Clone, Debug)]
struct Unit {
    name: String,
    cin: usize,
    cout: usize,
    k: usize,
    level: usize,
    act: bool,
    weights: usize,
    gains: usize,
    biases: usize,
}

impl Unit {
    fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Conditioning position of a noise level: lower table row and blend weight
/// toward the next row, interpolating in `log sigma`.
fn cond_position(levels: &[f64], sigma: f64) -> Result<(usize, f64)> {
    let err = || {
        Error::InvalidParameter(format!(
            "sigma {sigma} outside the conditioning range [{}, {}]",
            levels[levels.len() - 1],
            levels[0]
        ))
    };
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(err());
    }
    if let Some(i) = levels.iter().position(|&s| ((s - sigma) / s).abs() <= 1e-9) {
        return Ok((i, 0.0));
    }
    let ls = sigma.ln();
    for j in 0..levels.len().saturating_sub(1) {
        let (hi, lo) = (levels[j], levels[j + 1]);
        if sigma < hi && sigma > lo {
            let t = (hi.ln() - ls) / (hi.ln() - lo.ln());
            return Ok((j, t));
        }
    }
    Err(err())
}

/// Intermediate values kept by a training forward pass.
pub struct Cache<F> {
    grid: Grid,
    conds: Vec<(usize, f64)>,
    inputs: Vec<Vec<F>>,
    pre: Vec<Vec<F>>,
    scales: Vec<Scales>,
}

/// Per-item coefficients of the output map.
#[derive(Clone, Copy, Debug)]
struct Scales {
    skip: f64,
    out: f64,
    input: f64,
    sigma: f64,
}

impl Scales {
    /// Scalings for `n` replicas at level `sigma`: the mean of the replicas
    /// carries noise `sigma / sqrt(n)`, the scalings use that level, and the
    /// `1/sqrt(n)` factor maps back to the per-replica output.
    fn at(sigma: f64, d: Option<f64>, n: usize) -> Self {
        let r = 1.0 / (n as f64).sqrt();
        let Some(d) = d else {
            return Self { skip: 0.0, out: r, input: 1.0, sigma };
        };
        let e = sigma * r;
        let v = e * e + d * d;
        Self { skip: -r * e / v, out: r * d / v.sqrt(), input: 1.0 / v.sqrt(), sigma }
    }
}

/// Mean over the `n` replicas of a `2n`-channel tensor.
fn replica_mean<F: Real>(x: &[F], n: usize, grid: Grid) -> Vec<F> {
    let row = 2 * grid.cols();
    let mut m = vec![F::zero(); row];
    for rep in x.chunks(row) {
        for (a, b) in m.iter_mut().zip(rep) {
            *a = *a + *b;
        }
    }
    let inv = F::of(1.0 / n as f64);
    m.iter_mut().for_each(|v| *v = *v * inv);
    m
}

/// `x` with every batch item's columns multiplied by its own coefficient.
fn scale_items<F: Real>(x: &[F], grid: Grid, coef: impl Fn(usize) -> f64) -> Vec<F> {
    let p = grid.plane();
    let mut out = x.to_vec();
    for row in out.chunks_mut(grid.batch * p) {
        for (i, item) in row.chunks_mut(p).enumerate() {
            let c = F::of(coef(i));
            item.iter_mut().for_each(|v| *v = *v * c);
        }
    }
    out
}

/// A noise-conditional score network `S(X, sigma) = f(X, sigma) / sigma`
/// over multi-channel tensors, generic over its float type.
#[derive(Clone, Debug)]
pub struct Network<F> {
    config: NetworkConfig,
    schedule: NoiseSchedule,
    units: Vec<Unit>,
    enc: Vec<Range<usize>>,
    dec: Vec<Range<usize>>,
    out: usize,
    params: Vec<F>,
}

impl<F: Real> Network<F> {
    pub fn new(config: NetworkConfig, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        config.validate()?;
        let levels = config.widths.len();
        let nl = schedule.count();
        let mut units = Vec::new();
        let mut offset = 0;
        let mut push = |units: &mut Vec<Unit>, name: String, cin, cout, level, act| {
            let k = config.kernel;
            let weights = offset;
            let gains = weights + cout * cin * k * k;
            let biases = gains + nl * cout;
            offset = biases + nl * cout;
            units.push(Unit { name, cin, cout, k, level, act, weights, gains, biases });
        };
        let mut enc = Vec::new();
        let mut cin = 2;
        for l in 0..levels {
            let start = units.len();
            for d in 0..config.depth {
                push(&mut units, format!("enc{l}.{d}"), cin, config.widths[l], l, true);
                cin = config.widths[l];
            }
            enc.push(start..units.len());
        }
        let mut dec = vec![0..0; levels.saturating_sub(1)];
        for l in (0..levels.saturating_sub(1)).rev() {
            let start = units.len();
            let mut c = config.widths[l + 1] + config.widths[l];
            for d in 0..config.depth {
                push(&mut units, format!("dec{l}.{d}"), c, config.widths[l], l, true);
                c = config.widths[l];
            }
            dec[l] = start..units.len();
        }
        let out = units.len();
        push(&mut units, "out".into(), config.widths[0], 2, 0, false);

        let mut params = vec![F::zero(); offset];
        let mut rng = seeded(seed);
        for u in &units {
            let n = u.cout * u.fan_in();
            if u.act || !config.zero_init_output {
                let std = (if u.act { 2.0 } else { 1.0 } / u.fan_in() as f64).sqrt();
                for p in &mut params[u.weights..u.weights + n] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *p = F::of(std * z);
                }
            }
            for p in &mut params[u.gains..u.gains + nl * u.cout] {
                *p = F::one();
            }
        }
        Ok(Self { config, schedule, units, enc, dec, out, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn replicas(&self) -> usize {
        self.config.replicas
    }

    pub fn architecture_hash(&self) -> String {
        architecture_hash(&self.config, &self.schedule)
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Named parameter ranges, one per trainable tensor.
    pub fn parameter_groups(&self) -> Vec<(String, Range<usize>)> {
        let nl = self.schedule.count();
        let mut v = Vec::new();
        for u in &self.units {
            v.push((format!("{}.weight", u.name), u.weights..u.gains));
            v.push((format!("{}.gain", u.name), u.gains..u.gains + nl * u.cout));
            v.push((format!("{}.bias", u.name), u.biases..u.biases + nl * u.cout));
        }
        v
    }

    /// Same network with parameters converted to another float type.
    pub fn cast<G: Real>(&self) -> Network<G> {
        Network {
            config: self.config.clone(),
            schedule: self.schedule.clone(),
            units: self.units.clone(),
            enc: self.enc.clone(),
            dec: self.dec.clone(),
            out: self.out,
            params: self.params.iter().map(|p| G::of(p.f64())).collect(),
        }
    }

    pub fn set_params_from(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::InvalidDimension(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            *p = F::of(*v);
        }
        Ok(())
    }

    fn check_input(&self, x: &[F], grid: Grid, sigmas: &[f64]) -> Result<Vec<(usize, f64)>> {
        let m = self.config.size_multiple();
        if grid.batch == 0 || grid.height == 0 || grid.width == 0 {
            return Err(Error::InvalidDimension("empty network input".into()));
        }
        if grid.height % m != 0 || grid.width % m != 0 {
            return Err(Error::InvalidDimension(format!(
                "input {}x{} must have sides divisible by {m}",
                grid.height, grid.width
            )));
        }
        if x.len() != self.config.channels() * grid.cols() {
            return Err(Error::InvalidDimension(format!(
                "input holds {} values, expected {} channels x {}",
                x.len(),
                self.config.channels(),
                grid.cols()
            )));
        }
        if sigmas.len() != grid.batch {
            return Err(Error::InvalidDimension("one noise level per batch item required".into()));
        }
        let levels = self.schedule.levels();
        sigmas.iter().map(|&s| cond_position(levels, s)).collect()
    }

    fn unit_grid(&self, base: Grid, level: usize) -> Grid {
        (0..level).fold(base, |g, _| g.halved())
    }

    /// Per-(batch, channel) gain and bias under interpolated conditioning.
    fn cond_tables(&self, u: &Unit, conds: &[(usize, f64)]) -> (Vec<F>, Vec<F>) {
        let p = &self.params;
        let mut g = Vec::with_capacity(conds.len() * u.cout);
        let mut b = Vec::with_capacity(conds.len() * u.cout);
        for &(j, t) in conds {
            for c in 0..u.cout {
                let (g0, b0) = (p[u.gains + j * u.cout + c], p[u.biases + j * u.cout + c]);
                if t == 0.0 {
                    g.push(g0);
                    b.push(b0);
                } else {
                    let (g1, b1) = (p[u.gains + (j + 1) * u.cout + c], p[u.biases + (j + 1) * u.cout + c]);
                    let (w0, w1) = (F::of(1.0 - t), F::of(t));
                    g.push(w0 * g0 + w1 * g1);
                    b.push(w0 * b0 + w1 * b1);
                }
            }
        }
        (g, b)
    }

    fn conv(&self, u: &Unit, x: &[F], g: Grid, scratch: &mut Vec<F>) -> Vec<F> {
        let n = g.cols();
        let w = &self.params[u.weights..u.gains];
        let mut out = vec![F::zero(); u.cout * n];
        if u.k == 1 {
            gemm(u.cout, n, u.cin, F::one(), w, false, x, false, F::zero(), &mut out);
        } else {
            im2col(x, u.cin, g, u.k, scratch);
            gemm(u.cout, n, u.fan_in(), F::one(), w, false, scratch, false, F::zero(), &mut out);
        }
        out
    }

    fn unit_forward(
        &self,
        ui: usize,
        x: Vec<F>,
        base: Grid,
        conds: &[(usize, f64)],
        scratch: &mut Vec<F>,
        cache: Option<&mut Cache<F>>,
    ) -> Vec<F> {
        let u = &self.units[ui];
        let g = self.unit_grid(base, u.level);
        let pre = self.conv(u, &x, g, scratch);
        let (gain, bias) = self.cond_tables(u, conds);
        let plane = g.plane();
        let mut out = vec![F::zero(); pre.len()];
        for c in 0..u.cout {
            for b in 0..g.batch {
                let (gg, bb) = (gain[b * u.cout + c], bias[b * u.cout + c]);
                let r = c * g.cols() + b * plane..c * g.cols() + (b + 1) * plane;
                for (o, v) in out[r.clone()].iter_mut().zip(&pre[r]) {
                    let h = gg * *v + bb;
                    *o = if u.act { silu(h) } else { h };
                }
            }
        }
        if let Some(cache) = cache {
            cache.inputs[ui] = x;
            cache.pre[ui] = pre;
        }
        out
    }

    /// Backward through one unit. Accumulates parameter gradients into `grad`
    /// and returns the gradient wrt the unit input when `want_input`.
    fn unit_backward(
        &self,
        ui: usize,
        d_out: &[F],
        cache: &Cache<F>,
        grad: &mut [F],
        want_input: bool,
        scratch: &mut Vec<F>,
    ) -> Option<Vec<F>> {
        let u = &self.units[ui];
        let g = self.unit_grid(cache.grid, u.level);
        let nl_stride = u.cout;
        let (gain, bias) = self.cond_tables(u, &cache.conds);
        let pre = &cache.pre[ui];
        let plane = g.plane();
        let mut d_pre = vec![F::zero(); pre.len()];
        for c in 0..u.cout {
            for (b, &(j, t)) in cache.conds.iter().enumerate() {
                let (gg, bb) = (gain[b * u.cout + c], bias[b * u.cout + c]);
                let r = c * g.cols() + b * plane..c * g.cols() + (b + 1) * plane;
                let mut dg = F::zero();
                let mut db = F::zero();
                for ((dp, v), d) in d_pre[r.clone()].iter_mut().zip(&pre[r.clone()]).zip(&d_out[r]) {
                    let dh = if u.act { *d * silu_grad(gg * *v + bb) } else { *d };
                    dg = dg + dh * *v;
                    db = db + dh;
                    *dp = dh * gg;
                }
                let w0 = F::of(1.0 - t);
                grad[u.gains + j * nl_stride + c] = grad[u.gains + j * nl_stride + c] + w0 * dg;
                grad[u.biases + j * nl_stride + c] = grad[u.biases + j * nl_stride + c] + w0 * db;
                if t != 0.0 {
                    let w1 = F::of(t);
                    let (gi, bi) = (u.gains + (j + 1) * nl_stride + c, u.biases + (j + 1) * nl_stride + c);
                    grad[gi] = grad[gi] + w1 * dg;
                    grad[bi] = grad[bi] + w1 * db;
                }
            }
        }
        let n = g.cols();
        let x = &cache.inputs[ui];
        let w = &self.params[u.weights..u.gains];
        let dw = &mut grad[u.weights..u.gains];
        if u.k == 1 {
            gemm(u.cout, u.cin, n, F::one(), &d_pre, false, x, true, F::one(), dw);
            if !want_input {
                return None;
            }
            let mut dx = vec![F::zero(); u.cin * n];
            gemm(u.cin, n, u.cout, F::one(), w, true, &d_pre, false, F::zero(), &mut dx);
            Some(dx)
        } else {
            im2col(x, u.cin, g, u.k, scratch);
            gemm(u.cout, u.fan_in(), n, F::one(), &d_pre, false, scratch, true, F::one(), dw);
            if !want_input {
                return None;
            }
            let mut dcols = std::mem::take(scratch);
            gemm(u.fan_in(), n, u.cout, F::one(), w, true, &d_pre, false, F::zero(), &mut dcols);
            let mut dx = vec![F::zero(); u.cin * n];
            col2im_add(&dcols, u.cin, g, u.k, &mut dx);
            *scratch = dcols;
            Some(dx)
        }
    }

    fn run(&self, x: &[F], grid: Grid, conds: &[(usize, f64)], mut cache: Option<&mut Cache<F>>) -> Vec<F> {
        let levels = self.config.widths.len();
        let mut scratch = Vec::new();
        let mut cur = x.to_vec();
        let mut skips = Vec::new();
        for l in 0..levels {
            for ui in self.enc[l].clone() {
                cur = self.unit_forward(ui, cur, grid, conds, &mut scratch, cache.as_deref_mut());
            }
            if l + 1 < levels {
                let g = self.unit_grid(grid, l);
                let pooled = avg_pool(&cur, self.config.widths[l], g);
                skips.push(std::mem::replace(&mut cur, pooled));
            }
        }
        for l in (0..levels.saturating_sub(1)).rev() {
            let g = self.unit_grid(grid, l);
            let mut cat = upsample(&cur, self.config.widths[l + 1], g);
            cat.extend_from_slice(&skips[l]);
            cur = cat;
            for ui in self.dec[l].clone() {
                cur = self.unit_forward(ui, cur, grid, conds, &mut scratch, cache.as_deref_mut());
            }
        }
        self.unit_forward(self.out, cur, grid, conds, &mut scratch, cache)
    }

    /// Raw network output `f(X, sigma)` for channel-major input `x`
    /// (`2N x batch*h*w`), one noise level per batch item.
    pub fn forward(&self, x: &[F], grid: Grid, sigmas: &[f64]) -> Result<Vec<F>> {
        let conds = self.check_input(x, grid, sigmas)?;
        let sc = self.scales(sigmas);
        let m = replica_mean(x, self.config.replicas, grid);
        let g = self.run(&scale_items(&m, grid, |i| sc[i].input), grid, &conds, None);
        Ok(self.combine(x, &m, &g, grid, &sc))
    }

    fn scales(&self, sigmas: &[f64]) -> Vec<Scales> {
        sigmas.iter().map(|&s| Scales::at(s, self.config.sigma_data, self.config.replicas)).collect()
    }

    /// `h = a m + b g`, broadcast to every replica, minus `(X_k - m) / s`.
    fn combine(&self, x: &[F], m: &[F], g: &[F], grid: Grid, sc: &[Scales]) -> Vec<F> {
        let mut h = scale_items(g, grid, |i| sc[i].out);
        for (o, s) in h.iter_mut().zip(scale_items(m, grid, |i| sc[i].skip)) {
            *o = *o + s;
        }
        let mut out = x.to_vec();
        for rep in out.chunks_mut(h.len()) {
            for (v, mv) in rep.iter_mut().zip(m) {
                *v = *v - *mv;
            }
        }
        let mut out = scale_items(&out, grid, |i| -1.0 / sc[i].sigma);
        for rep in out.chunks_mut(h.len()) {
            for (v, hv) in rep.iter_mut().zip(&h) {
                *v = *v + *hv;
            }
        }
        out
    }

    /// As [`Network::forward`], keeping what [`Network::backward`] needs.
    pub fn forward_train(&self, x: &[F], grid: Grid, sigmas: &[f64]) -> Result<(Vec<F>, Cache<F>)> {
        let conds = self.check_input(x, grid, sigmas)?;
        let n = self.units.len();
        let sc = self.scales(sigmas);
        let mut cache = Cache {
            grid,
            conds: conds.clone(),
            inputs: vec![Vec::new(); n],
            pre: vec![Vec::new(); n],
            scales: sc.clone(),
        };
        let m = replica_mean(x, self.config.replicas, grid);
        let g = self.run(&scale_items(&m, grid, |i| sc[i].input), grid, &conds, Some(&mut cache));
        Ok((self.combine(x, &m, &g, grid, &sc), cache))
    }

    /// Gradient of `<d_out, f(X, sigma)>` wrt the parameters, plus wrt the
    /// input when `want_input`.
    pub fn backward(&self, cache: &Cache<F>, d_out: &[F], want_input: bool) -> (Vec<F>, Option<Vec<F>>) {
        let (grid, sc, n) = (cache.grid, &cache.scales, self.config.replicas);
        let total = replica_mean(d_out, n, grid);
        let total: Vec<F> = total.iter().map(|v| *v * F::of(n as f64)).collect();
        let (grad, dg) = self.backward_inner(cache, &scale_items(&total, grid, |i| sc[i].out), want_input);
        let dx = dg.map(|dg| {
            // d/dm, then spread over replicas with the deviation term
            let mut dm = scale_items(&dg, grid, |i| sc[i].input);
            for (a, b) in dm.iter_mut().zip(scale_items(&total, grid, |i| sc[i].skip)) {
                *a = *a + b;
            }
            let mut dev = d_out.to_vec();
            let inv = F::of(1.0 / n as f64);
            for rep in dev.chunks_mut(dm.len()) {
                for (v, t) in rep.iter_mut().zip(&total) {
                    *v = *v - *t * inv;
                }
            }
            let mut dx = scale_items(&dev, grid, |i| -1.0 / sc[i].sigma);
            for rep in dx.chunks_mut(dm.len()) {
                for (v, d) in rep.iter_mut().zip(&dm) {
                    *v = *v + *d * inv;
                }
            }
            dx
        });
        (grad, dx)
    }

    fn backward_inner(&self, cache: &Cache<F>, d_out: &[F], want_input: bool) -> (Vec<F>, Option<Vec<F>>) {
        let levels = self.config.widths.len();
        let grid = cache.grid;
        let mut grad = vec![F::zero(); self.params.len()];
        let mut scratch = Vec::new();
        let mut d = self
            .unit_backward(self.out, d_out, cache, &mut grad, true, &mut scratch)
            .expect("input gradient");
        let mut d_skips: Vec<Vec<F>> = vec![Vec::new(); levels.saturating_sub(1)];
        for l in 0..levels.saturating_sub(1) {
            for ui in self.dec[l].clone().rev() {
                d = self
                    .unit_backward(ui, &d, cache, &mut grad, true, &mut scratch)
                    .expect("input gradient");
            }
            let g = self.unit_grid(grid, l);
            let split = self.config.widths[l + 1] * g.cols();
            d_skips[l] = d[split..].to_vec();
            d = upsample_backward(&d[..split], self.config.widths[l + 1], g);
        }
        for l in (0..levels).rev() {
            if l + 1 < levels {
                let g = self.unit_grid(grid, l);
                let mut dd = avg_pool_backward(&d, self.config.widths[l], g);
                for (a, b) in dd.iter_mut().zip(&d_skips[l]) {
                    *a = *a + *b;
                }
                d = dd;
            }
            let units: Vec<usize> = self.enc[l].clone().collect();
            for (pos, &ui) in units.iter().enumerate().rev() {
                let first = l == 0 && pos == 0;
                match self.unit_backward(ui, &d, cache, &mut grad, !first || want_input, &mut scratch) {
                    Some(v) => d = v,
                    None => return (grad, None),
                }
            }
        }
        (grad, Some(d))
    }

    /// Score at every item of `x` (TensorBatch layout), noise level `sigma`.
    pub fn score_batch(&self, x: &TensorBatch, sigma: f64) -> Result<TensorBatch> {
        let shape = x.shape();
        let ch = self.config.channels();
        if shape.channels != ch {
            return Err(Error::InvalidDimension(format!(
                "network expects {ch} channels ({} replicas), got {}",
                self.config.replicas, shape.channels
            )));
        }
        let grid = Grid { batch: x.count(), height: shape.height, width: shape.width };
        let input = to_channel_major(x);
        let sigmas = vec![sigma; grid.batch];
        let out = self.forward(&input, grid, &sigmas)?;
        let inv = 1.0 / sigma;
        Ok(from_channel_major(&out, shape, grid.batch, inv))
    }
}

/// `[item][channel][pixel]` f64 → `[channel][item][pixel]` in `F`.
pub fn to_channel_major<F: Real>(x: &TensorBatch) -> Vec<F> {
    let shape = x.shape();
    let (b, c, p) = (x.count(), shape.channels, shape.plane());
    let mut out = vec![F::zero(); x.data().len()];
    for i in 0..b {
        let item = x.item(i);
        for ch in 0..c {
            let dst = &mut out[ch * b * p + i * p..ch * b * p + (i + 1) * p];
            for (d, s) in dst.iter_mut().zip(&item[ch * p..(ch + 1) * p]) {
                *d = F::of(*s);
            }
        }
    }
    out
}

/// Inverse of [`to_channel_major`], scaling every entry by `scale`.
pub fn from_channel_major<F: Real>(x: &[F], shape: TensorShape, count: usize, scale: f64) -> TensorBatch {
    let (c, p) = (shape.channels, shape.plane());
    let mut data = vec![0.0; x.len()];
    for i in 0..count {
        for ch in 0..c {
            let src = &x[ch * count * p + i * p..ch * count * p + (i + 1) * p];
            for (d, s) in data[(i * c + ch) * p..(i * c + ch + 1) * p].iter_mut().zip(src) {
                *d = s.f64() * scale;
            }
        }
    }
    TensorBatch::new(shape, data).expect("layout preserved")
}

impl<F: Real> ScoreModel for Network<F> {
    fn score(&self, x: &TensorBatch, sigma: f64) -> Result<TensorBatch> {
        self.score_batch(x, sigma)
    }

    fn replicas(&self) -> Option<usize> {
        Some(self.config.replicas)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig {
            replicas: 1,
            widths: vec![3, 4],
            depth: 2,
            kernel: 3,
            zero_init_output: false,
            sigma_data: None,
        }
    }

    #[test]
    fn conditioning_positions() {
        let s = NoiseSchedule::default();
        let lv = s.levels();
        assert_eq!(cond_position(lv, 1.0).unwrap(), (0, 0.0));
        assert_eq!(cond_position(lv, 0.01).unwrap(), (9, 0.0));
        let mid = (lv[2] * lv[3]).sqrt();
        let (j, t) = cond_position(lv, mid).unwrap();
        assert_eq!(j, 2);
        assert!((t - 0.5).abs() < 1e-12);
        assert!(cond_position(lv, 1.5).is_err());
        assert!(cond_position(lv, 0.005).is_err());
        assert!(cond_position(lv, 0.0).is_err());
    }

    fn replicated(n: usize) -> TensorBatch {
        let plane: Vec<f64> = (0..2 * 256).map(|i| (i as f64).sin()).collect();
        TensorBatch::new(TensorShape::new(2 * n, 16, 16), plane.repeat(n)).unwrap()
    }

    #[test]
    fn zero_initialized_output_gives_zero_field_on_identical_replicas() {
        let cfg = NetworkConfig { sigma_data: None, ..Default::default() };
        let net: Network<f64> = Network::new(cfg, NoiseSchedule::default(), 1).unwrap();
        let s = net.score(&replicated(3), 0.1).unwrap();
        assert!(s.data().iter().all(|&v| v.abs() < 1e-13));
    }

    #[test]
    fn replica_deviations_get_the_exact_score() {
        let cfg = NetworkConfig { zero_init_output: false, sigma_data: None, ..Default::default() };
        let net: Network<f64> = Network::new(cfg, NoiseSchedule::default(), 2).unwrap();
        let base = replicated(3);
        let mut moved = base.clone();
        // zero-sum perturbation across replicas leaves the mean unchanged
        let p = 2 * 256;
        for j in 0..p {
            let t = (j as f64 * 0.3).cos();
            moved.data_mut()[j] += t;
            moved.data_mut()[p + j] -= t;
        }
        let sigma = 0.2;
        let (a, b) = (net.score(&base, sigma).unwrap(), net.score(&moved, sigma).unwrap());
        for i in 0..3 * p {
            let dev = moved.data()[i] - base.data()[i];
            let expect = a.data()[i] - dev / (sigma * sigma);
            assert!((b.data()[i] - expect).abs() < 1e-9 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn zero_initialized_scaled_network_is_gaussian_score() {
        let d = 0.35;
        let cfg = NetworkConfig { sigma_data: Some(d), ..Default::default() };
        let net: Network<f64> = Network::new(cfg, NoiseSchedule::default(), 1).unwrap();
        let x = replicated(3);
        for sigma in [1.0, 0.1, 0.01] {
            let s = net.score(&x, sigma).unwrap();
            // posterior of N(0, d^2) given three replicas
            for (g, v) in s.data().iter().zip(x.data()) {
                let expect = -v / (sigma * sigma + 3.0 * d * d);
                assert!((g - expect).abs() < 1e-12 * (1.0 + expect.abs()));
            }
        }
    }

    #[test]
    fn rejects_channel_and_size_mismatch() {
        let net: Network<f64> = Network::new(NetworkConfig::default(), NoiseSchedule::default(), 1).unwrap();
        let x = TensorBatch::zeros(TensorShape::new(2, 16, 16), 1);
        assert!(net.score(&x, 0.1).is_err());
        let x = TensorBatch::zeros(TensorShape::new(6, 12, 12), 1);
        assert!(net.score(&x, 0.1).is_err());
        let x = TensorBatch::zeros(TensorShape::new(6, 16, 16), 1);
        assert!(net.score(&x, 2.0).is_err());
    }

    #[test]
    fn batch_items_are_independent() {
        let net: Network<f64> = Network::new(small(), NoiseSchedule::default(), 3).unwrap();
        let shape = TensorShape::new(2, 4, 6);
        let a: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).cos()).collect();
        let b: Vec<f64> = (0..48).map(|i| (i as f64 * 0.11).sin()).collect();
        let both = TensorBatch::new(shape, [a.clone(), b.clone()].concat()).unwrap();
        let sb = net.score(&both, 0.2).unwrap();
        let sa = net.score(&TensorBatch::new(shape, a).unwrap(), 0.2).unwrap();
        let s2 = net.score(&TensorBatch::new(shape, b).unwrap(), 0.2).unwrap();
        for (x, y) in sb.item(0).iter().zip(sa.item(0)) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in sb.item(1).iter().zip(s2.item(0)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
