use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hggdp::io;
use hggdp::kspace::{make_mask as build_mask, undersample, zero_filled, MaskKind, SamplingMask};
use hggdp::metrics::{evaluate as compute_metrics, MetricRow};
use hggdp::phantom::{extract_patches, generate_set, DatasetManifest, ManifestEntry};
use hggdp::recon::{convergence_trace, hggdp_reconstruct, trace_csv, ReconConfig};
use hggdp::rng::derive_seed;
use hggdp::scorenet::{train as train_network, CheckpointExpectation, PatchSet};
use hggdp::{ComplexImage, MetricResult, ScoreNetwork};
use serde::Serialize;

use crate::config::{self, AblateConfig, AblationDimension, GenDataConfig, MaskConfig, ReconRunConfig, TrainRunConfig};
use crate::{Common, ConfigError, DATA_DIR_ENV};

fn out_dir(common: &Common, fallback: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

/// Explicit path, else `$HGGDP_DATA_DIR/manifest.json`.
fn resolve_manifest(explicit: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p);
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => Ok(Path::new(&dir).join("manifest.json")),
        None => Err(ConfigError(format!(
            "no manifest given; pass --manifest, set it in the config, or set {DATA_DIR_ENV}"
        ))
        .into()),
    }
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("malformed manifest {}: {e}", path.display())).into())
}

fn load_entries(manifest_path: &Path, entries: &[ManifestEntry]) -> Result<Vec<ComplexImage>> {
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .map(|e| io::read_image(root.join(&e.path)).with_context(|| format!("reading {}", e.path)))
        .collect()
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || ConfigError(format!("size `{s}` is not `N` or `HxW`"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?)),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

pub fn gen_data(common: &Common) -> Result<()> {
    let mut cfg: GenDataConfig = config::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.phantom.seed = seed;
    }
    cfg.phantom.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"));
    fs::create_dir_all(out.join("train"))?;
    fs::create_dir_all(out.join("test"))?;

    let mut manifest = DatasetManifest { spec: cfg.phantom.clone(), train: Vec::new(), test: Vec::new() };
    let total = cfg.train_count + cfg.test_count;
    let mut preview = Vec::new();
    for i in 0..total {
        let img = generate_set(&cfg.phantom, i, 1)?.pop().expect("one image");
        let (split, list, local) = if i < cfg.train_count {
            ("train", &mut manifest.train, i)
        } else {
            ("test", &mut manifest.test, i - cfg.train_count)
        };
        let rel = format!("{split}/{local:04}.c128");
        io::write_image(out.join(&rel), &img)?;
        list.push(ManifestEntry { path: rel, seed: derive_seed(cfg.phantom.seed, i as u64) });
        if preview.len() < 16 {
            preview.push(img);
        }
    }
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    if !preview.is_empty() {
        io::write_contact_sheet(out.join("preview.png"), &preview, 4, Some(1.0))?;
    }
    config::write_resolved(&out, &cfg)?;
    log::info!("wrote {total} images and manifest to {}", out.display());
    Ok(())
}

pub fn make_mask(
    common: &Common,
    kind: Option<MaskKind>,
    size: Option<&str>,
    acceleration: Option<f64>,
) -> Result<()> {
    let mut cfg: MaskConfig = config::load(common.config.as_deref())?;
    if let Some(k) = kind {
        cfg.kind = k;
    }
    if let Some(s) = size {
        (cfg.height, cfg.width) = parse_size(s)?;
    }
    if let Some(r) = acceleration {
        cfg.acceleration = r;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let mask = build_mask(cfg.kind, cfg.height, cfg.width, cfg.acceleration, cfg.seed, &cfg.params)?;
    let out = out_dir(common, "mask");
    fs::create_dir_all(&out)?;
    io::write_mask(out.join("mask.bits"), &mask)?;
    io::write_mask_png(out.join("mask.png"), &mask)?;
    config::write_resolved(&out, &cfg)?;
    let target = 1.0 / cfg.acceleration;
    let deviation = (mask.fraction() - target) / target;
    println!(
        "rate check: selected {} of {} ({:.4}), target {:.4}, deviation {:+.2}%",
        mask.count(),
        cfg.height * cfg.width,
        mask.fraction(),
        target,
        100.0 * deviation
    );
    Ok(())
}

pub fn train(common: &Common, manifest: Option<PathBuf>) -> Result<()> {
    let mut cfg: TrainRunConfig = config::load(common.config.as_deref())?;
    if manifest.is_some() {
        cfg.manifest = manifest;
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(n) = common.log_every {
        cfg.train.log_every = n;
    }
    let manifest_path = resolve_manifest(cfg.manifest.clone())?;
    cfg.manifest = Some(manifest_path.clone());
    let ds = read_manifest(&manifest_path)?;
    let images = load_entries(&manifest_path, &ds.train)?;
    let patches = match cfg.train.patch_size {
        Some(p) => extract_patches(&images, p, cfg.patch_count, cfg.flips, derive_seed(cfg.train.seed, 2))?,
        None => images,
    };
    let source = PatchSet::new(patches, false)?;
    let out = out_dir(common, "model");
    config::write_resolved(&out, &cfg)?;
    let (model, trace) = train_network(&source, &cfg.train)?;
    model.save(out.join("model.ckpt"))?;
    fs::write(out.join("loss.csv"), trace.to_csv())?;
    let curve: Vec<(f64, f64)> =
        trace.per_iteration.iter().enumerate().map(|(i, &l)| ((i + 1) as f64, l)).collect();
    io::write_line_plot(out.join("loss.png"), &[curve], 640, 360)?;
    log::info!(
        "trained {} iterations: loss {:.4} -> {:.4}",
        trace.per_iteration.len(),
        trace.head_mean(0.05),
        trace.tail_mean(0.05)
    );
    Ok(())
}

#[derive(Serialize)]
struct ReconSummary {
    total_seconds: f64,
    level_seconds: Vec<f64>,
    metrics: Option<MetricResult>,
    zero_filled_metrics: Option<MetricResult>,
}

pub fn reconstruct(
    common: &Common,
    checkpoint: Option<PathBuf>,
    kspace: Option<PathBuf>,
    image: Option<PathBuf>,
    mask: Option<PathBuf>,
    ground_truth: Option<PathBuf>,
) -> Result<()> {
    let mut cfg: ReconRunConfig = config::load(common.config.as_deref())?;
    let set = |slot: &mut Option<PathBuf>, v: Option<PathBuf>| {
        if v.is_some() {
            *slot = v;
        }
    };
    set(&mut cfg.checkpoint, checkpoint);
    set(&mut cfg.kspace, kspace);
    set(&mut cfg.image, image);
    set(&mut cfg.mask, mask);
    set(&mut cfg.ground_truth, ground_truth);
    if let Some(seed) = common.seed {
        cfg.recon.seed = seed;
    }
    if let Some(n) = common.log_every {
        cfg.recon.log_every = n;
    }
    let ckpt = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| ConfigError("no checkpoint given; train one with `hggdp train`".into()))?;
    let mask_path = cfg.mask.clone().ok_or_else(|| ConfigError("no mask given; make one with `hggdp make-mask`".into()))?;
    let mask = io::read_mask(&mask_path)?;
    let y = match (&cfg.kspace, &cfg.image) {
        (Some(k), _) => io::read_kspace(k)?,
        (None, Some(i)) => undersample(&io::read_image(i)?, &mask, cfg.noise_std, derive_seed(cfg.recon.seed, 99))?,
        (None, None) => return Err(ConfigError("give either --kspace or --image".into()).into()),
    };
    let truth = match (&cfg.ground_truth, &cfg.kspace, &cfg.image) {
        (Some(g), _, _) => Some(io::read_image(g)?),
        (None, None, Some(i)) => Some(io::read_image(i)?),
        _ => None,
    };
    let model = ScoreNetwork::load_expecting(
        &ckpt,
        &CheckpointExpectation { replicas: Some(cfg.recon.replicas), ..Default::default() },
    )?;
    let out = out_dir(common, "recon");
    config::write_resolved(&out, &cfg)?;

    let report = hggdp_reconstruct(&y, &mask, &model, &cfg.recon, truth.as_ref(), None)?;
    let zf = zero_filled(&y, &mask)?;
    io::write_image(out.join("recon.c128"), &report.image)?;
    io::write_magnitude_png(out.join("recon.png"), &report.image, None)?;
    io::write_magnitude_png(out.join("zero_filled.png"), &zf, None)?;
    let mut summary = ReconSummary {
        total_seconds: report.total_seconds(),
        level_seconds: report.level_seconds.clone(),
        metrics: None,
        zero_filled_metrics: None,
    };
    if let Some(gt) = &truth {
        fs::write(out.join("trace.csv"), trace_csv(&report)?)?;
        let trace = convergence_trace(&report)?;
        let psnr: Vec<(f64, f64)> = trace.iter().map(|p| (p.iteration as f64, p.psnr)).collect();
        io::write_line_plot(out.join("trace_psnr.png"), &[psnr], 640, 360)?;
        let m = compute_metrics(&report.image, gt)?;
        log::info!("PSNR {:.2} dB  SSIM {:.4}  HFEN {:.4}", m.psnr, m.ssim, m.hfen);
        summary.metrics = Some(m);
        summary.zero_filled_metrics = Some(compute_metrics(&zf, gt)?);
    }
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

pub fn evaluate(
    common: &Common,
    recon: &Path,
    reference: &Path,
    id: String,
    mask_kind: String,
    acceleration: f64,
) -> Result<()> {
    let test = io::read_image(recon)?;
    let gt = io::read_image(reference)?;
    let row = MetricRow { image_id: id, mask_kind, acceleration, metrics: compute_metrics(&test, &gt)? };
    let text = format!("{}\n{}\n", MetricRow::HEADER, row.to_csv());
    if let Some(out) = &common.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("metrics.csv"), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn ablation_checkpoint(cfg: &AblateConfig, value: &str) -> Result<PathBuf> {
    let label = cfg.dimension.label();
    let path = if cfg.dimension.needs_checkpoint_per_value() {
        let dir = cfg.checkpoint_dir.clone().ok_or_else(|| {
            ConfigError(format!("dimension {label} needs --checkpoint-dir holding {label}_<value>.ckpt files"))
        })?;
        dir.join(format!("{label}_{value}.ckpt"))
    } else {
        cfg.checkpoint.clone().ok_or_else(|| {
            ConfigError("no checkpoint given; train one with `hggdp train --out <dir>` and pass --checkpoint".into())
        })?
    };
    if !path.exists() {
        let hint = match cfg.dimension {
            AblationDimension::Levels => format!("with \"schedule\": {{\"count\": {value}}} in the train config"),
            AblationDimension::Replicas => format!("with \"network\": {{\"replicas\": {value}}} in the train config"),
            AblationDimension::Patch => format!("with \"patch_size\": {value} in the train config"),
            _ => String::new(),
        };
        return Err(ConfigError(format!(
            "missing checkpoint {}; create it with `hggdp train --config <train.json> --out <dir>` {hint} and copy <dir>/model.ckpt there",
            path.display()
        ))
        .into());
    }
    Ok(path)
}

fn expectation(cfg: &AblateConfig, recon: &ReconConfig, value: &str) -> CheckpointExpectation {
    let mut e = CheckpointExpectation { replicas: Some(recon.replicas), ..Default::default() };
    match cfg.dimension {
        AblationDimension::Levels => e.schedule = Some(recon.schedule),
        AblationDimension::Patch => e.patch_size = Some(value.parse().ok()),
        _ => {}
    }
    e
}

fn mean(rows: &[MetricResult]) -> MetricResult {
    let n = rows.len() as f64;
    MetricResult {
        psnr: rows.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|m| m.ssim).sum::<f64>() / n,
        hfen: rows.iter().map(|m| m.hfen).sum::<f64>() / n,
    }
}

/// Reconstructs every image, `jobs` at a time; result order follows `images`.
fn run_batch(
    images: &[ComplexImage],
    mask: &SamplingMask,
    model: &ScoreNetwork,
    recon: &ReconConfig,
    jobs: usize,
) -> Result<Vec<MetricResult>> {
    let one = |i: usize| -> Result<MetricResult> {
        let cfg = ReconConfig { seed: derive_seed(recon.seed, i as u64), ..recon.clone() };
        let y = undersample(&images[i], mask, 0.0, 0)?;
        let report = hggdp_reconstruct(&y, mask, model, &cfg, None, None)?;
        Ok(compute_metrics(&report.image, &images[i])?)
    };
    let jobs = jobs.max(1);
    let mut results: Vec<Option<Result<MetricResult>>> = (0..images.len()).map(|_| None).collect();
    for (chunk_idx, chunk) in results.chunks_mut(jobs).enumerate() {
        std::thread::scope(|s| {
            for (k, slot) in chunk.iter_mut().enumerate() {
                let i = chunk_idx * jobs + k;
                let one = &one;
                s.spawn(move || *slot = Some(one(i)));
            }
        });
    }
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn ablate(
    common: &Common,
    dimension: Option<AblationDimension>,
    grid: Option<Vec<String>>,
    manifest: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    checkpoint_dir: Option<PathBuf>,
    images: Option<usize>,
) -> Result<()> {
    let mut cfg: AblateConfig = config::load(common.config.as_deref())?;
    if let Some(d) = dimension {
        cfg.dimension = d;
    }
    if let Some(g) = grid {
        cfg.grid = g;
    }
    if manifest.is_some() {
        cfg.manifest = manifest;
    }
    if checkpoint.is_some() {
        cfg.checkpoint = checkpoint;
    }
    if checkpoint_dir.is_some() {
        cfg.checkpoint_dir = checkpoint_dir;
    }
    if let Some(n) = images {
        cfg.images = n;
    }
    if let Some(seed) = common.seed {
        cfg.recon.seed = seed;
    }
    if cfg.grid.is_empty() || cfg.images == 0 {
        return Err(ConfigError("ablation needs a non-empty grid and at least one image".into()).into());
    }
    let manifest_path = resolve_manifest(cfg.manifest.clone())?;
    cfg.manifest = Some(manifest_path.clone());
    let ds = read_manifest(&manifest_path)?;
    let n = cfg.images.min(ds.test.len());
    let images = load_entries(&manifest_path, &ds.test[..n])?;
    let (h, w) = images[0].shape();
    let m = &cfg.mask;
    let mask = build_mask(m.kind, h, w, m.acceleration, m.seed, &m.params)?;

    // Validate every grid point before spending time on any of them.
    let mut plan = Vec::new();
    for value in &cfg.grid {
        let recon = cfg.recon_for(value)?;
        recon.validate()?;
        plan.push((value.clone(), recon.clone(), ablation_checkpoint(&cfg, value)?));
    }
    let out = out_dir(common, "ablation");
    config::write_resolved(&out, &cfg)?;

    let label = cfg.dimension.label();
    let mut table = format!("{label},psnr,ssim,hfen\n");
    let mut per_image = format!("{label},image,psnr,ssim,hfen\n");
    for (value, recon, ckpt) in plan {
        let model = ScoreNetwork::load_expecting(&ckpt, &expectation(&cfg, &recon, &value))?;
        let rows = run_batch(&images, &mask, &model, &recon, common.jobs)?;
        for (i, r) in rows.iter().enumerate() {
            per_image.push_str(&format!("{value},{i},{:.6},{:.6},{:.6}\n", r.psnr, r.ssim, r.hfen));
        }
        let avg = mean(&rows);
        log::info!("{label}={value}: PSNR {:.2} SSIM {:.4} HFEN {:.4}", avg.psnr, avg.ssim, avg.hfen);
        table.push_str(&format!("{value},{:.6},{:.6},{:.6}\n", avg.psnr, avg.ssim, avg.hfen));
    }
    fs::write(out.join(format!("ablation_{label}.csv")), &table)?;
    fs::write(out.join(format!("ablation_{label}_per_image.csv")), &per_image)?;
    print!("{table}");
    Ok(())
}
