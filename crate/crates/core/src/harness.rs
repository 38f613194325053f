//! Image I/O, synthetic data and reconstruction sweeps.

use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage as Luma8Image, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{param_err, shape_err, Error, Result};
use crate::format_float;
use crate::metrics::{min_max_normalize, pearson, ssim_reported, to_gray};
use crate::network::{build_preset, forward_plan, NetworkSpec, PresetOptions};
use crate::tensor::FeatureMaps;
use crate::weights::{sample_filterbank, DistributionSpec, FilterBank};

pub const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "ppm"];

/// Loads an 8-bit gray or RGB PNG/PGM/PPM as 1 or 3 channels in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<FeatureMaps> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => {
            FeatureMaps::new(1, h, w, g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        DynamicImage::ImageRgb8(rgb) => {
            let raw = rgb.into_raw();
            FeatureMaps::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f64 / 255.0)
        }
        other => Err(Error::Format(format!(
            "{}: unsupported pixel format {:?}, expected 8-bit gray or RGB",
            path.display(),
            other.color()
        ))),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves 1 or 3 channels, clamping to `[0, 1]` before 8-bit quantization.
/// The format follows the extension.
pub fn save_image(path: &Path, maps: &FeatureMaps) -> Result<()> {
    let (c, h, w) = maps.dims();
    let img = match c {
        1 => DynamicImage::ImageLuma8(
            Luma8Image::from_raw(w as u32, h as u32, maps.data().iter().map(|v| quantize(*v)).collect())
                .expect("buffer length matches dims"),
        ),
        3 => {
            let mut raw = Vec::with_capacity(3 * h * w);
            for y in 0..h {
                for x in 0..w {
                    raw.extend((0..3).map(|ch| quantize(maps.get(ch, y, x))));
                }
            }
            DynamicImage::ImageRgb8(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer length matches dims"))
        }
        _ => return shape_err(format!("can only save 1 or 3 channels, got {c}")),
    };
    img.save(path)?;
    Ok(())
}

/// Image files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if files.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(files)
}

#[derive(Debug, Clone)]
pub struct NamedImage {
    pub id: String,
    pub maps: FeatureMaps,
}

/// Loads a directory in file-name order; every image must share its dims.
pub fn load_image_dir(dir: &Path) -> Result<Vec<NamedImage>> {
    let images = list_images(dir)?
        .into_iter()
        .map(|p| {
            let id = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(NamedImage { id, maps: load_image(&p)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let dims = images[0].maps.dims();
    if let Some(bad) = images.iter().find(|i| i.maps.dims() != dims) {
        return Err(Error::Format(format!("{} has dims {:?}, expected {:?}", bad.id, bad.maps.dims(), dims)));
    }
    Ok(images)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable gaussian blur with clamp-to-edge borders; `sigma = 0` is the identity.
pub fn gaussian_blur(x: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return x.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            tmp[y * w + xx] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * x[y * w + clamp(xx as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            out[y * w + xx] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[clamp(y as isize + j as isize - r, h) * w + xx])
                .sum();
        }
    }
    out
}

/// Single-channel gaussian noise blurred with std `smoothness`, min-max
/// normalized to `[0, 1]`. Image `index` has its own stream under `seed`.
pub fn synthetic_image(size: usize, smoothness: f64, seed: u64, index: u64) -> Result<FeatureMaps> {
    if size == 0 || !(smoothness >= 0.0 && smoothness.is_finite()) {
        return param_err(format!("bad synthetic image parameters: size {size}, smoothness {smoothness}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let noise: Vec<f64> = (0..size * size).map(|_| StandardNormal.sample(&mut rng)).collect();
    let blurred = gaussian_blur(&noise, size, size, smoothness);
    Ok(min_max_normalize(&FeatureMaps::new(1, size, size, blurred)?))
}

/// Writes `synth_0000.png`, `synth_0001.png`, ... into `dir`.
pub fn generate_synthetic(dir: &Path, count: usize, size: usize, smoothness: f64, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("synth_{i:04}.png"));
            save_image(&path, &synthetic_image(size, smoothness, seed, i as u64)?)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub ssim: f64,
    pub pearson: f64,
}

/// Grayscale metrics of a reconstruction against its input. The
/// reconstruction is min-max normalized first; a constant one scores
/// pearson 0.
pub fn score_reconstruction(input: &FeatureMaps, output: &FeatureMaps) -> Result<Score> {
    let a = to_gray(input)?;
    let b = to_gray(&min_max_normalize(output))?;
    let ssim = ssim_reported(&a, &b)?;
    let pearson = match pearson(&a, &b) {
        Ok(r) => r,
        Err(Error::Degenerate(_)) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(Score { ssim, pearson })
}

pub fn reconstruct(spec: &NetworkSpec, bank: &FilterBank, x: &FeatureMaps) -> Result<(FeatureMaps, Score)> {
    let out = forward_plan(&spec.plan()?, bank, x, false)?.output;
    let score = score_reconstruction(x, &out)?;
    Ok((out, score))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Channels,
    Kernel,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub values: Vec<usize>,
    pub nets: usize,
    pub seed: u64,
    pub dist: DistributionSpec,
    /// Use the channel-mean head.
    pub variant: bool,
}

impl SweepConfig {
    pub fn preset(&self) -> &'static str {
        match (self.kind, self.variant) {
            (SweepKind::Channels, false) => "rrvgg_conv1_deconv1",
            (SweepKind::Channels, true) => "rrvgg_conv1_deconv1_variant",
            (SweepKind::Kernel, false) => "rrvgg_conv1_1",
            (SweepKind::Kernel, true) => "rrvgg_conv1_1_variant",
        }
    }

    pub fn network(&self, value: usize, input: [usize; 3]) -> Result<NetworkSpec> {
        let opts = match self.kind {
            SweepKind::Channels => PresetOptions { channels: Some(value), ..Default::default() },
            SweepKind::Kernel => PresetOptions { kernel: Some(value), ..Default::default() },
        };
        build_preset(self.preset(), input, &opts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: usize,
    pub net: usize,
    pub image: String,
    pub ssim: f64,
    pub pearson: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepAggregate {
    pub param: usize,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub corr_mean: f64,
    pub corr_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
}

/// Mean and `n − 1` standard deviation; the std of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-parameter statistics over per-network averages, in first-seen
/// parameter order.
pub fn aggregate(rows: &[SweepRow]) -> Vec<SweepAggregate> {
    let mut params: Vec<usize> = Vec::new();
    for r in rows {
        if !params.contains(&r.param) {
            params.push(r.param);
        }
    }
    params
        .into_iter()
        .map(|param| {
            let mut nets: Vec<usize> = rows.iter().filter(|r| r.param == param).map(|r| r.net).collect();
            nets.sort_unstable();
            nets.dedup();
            let (mut ssim, mut corr) = (Vec::new(), Vec::new());
            for net in nets {
                let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.param == param && r.net == net).collect();
                let n = sel.len() as f64;
                ssim.push(sel.iter().map(|r| r.ssim).sum::<f64>() / n);
                corr.push(sel.iter().map(|r| r.pearson).sum::<f64>() / n);
            }
            let (ssim_mean, ssim_std) = mean_std(&ssim);
            let (corr_mean, corr_std) = mean_std(&corr);
            SweepAggregate { param, ssim_mean, ssim_std, corr_mean, corr_std }
        })
        .collect()
}

/// Network `i` of every sweep value draws its weights from `seed + i`.
pub fn run_sweep(config: &SweepConfig, images: &[NamedImage]) -> Result<SweepResult> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.values.is_empty() || config.nets == 0 {
        return param_err("a sweep needs at least one value and one network");
    }
    config.dist.validate()?;
    let (c, h, w) = images[0].maps.dims();
    let mut rows = Vec::new();
    for &value in &config.values {
        let spec = config.network(value, [c, h, w])?;
        let plan = spec.plan()?;
        let shapes = plan.conv_shapes().to_vec();
        for net in 0..config.nets {
            let bank = sample_filterbank(&config.dist, &shapes, config.seed.wrapping_add(net as u64))?;
            let scored: Vec<SweepRow> = images
                .par_iter()
                .map(|img| {
                    let out = forward_plan(&plan, &bank, &img.maps, false)?.output;
                    let s = score_reconstruction(&img.maps, &out)?;
                    Ok(SweepRow { param: value, net, image: img.id.clone(), ssim: s.ssim, pearson: s.pearson })
                })
                .collect::<Result<_>>()?;
            rows.extend(scored);
        }
    }
    let aggregates = aggregate(&rows);
    Ok(SweepResult { rows, aggregates })
}

pub const SWEEP_RAW_HEADER: [&str; 5] = ["param", "net", "image", "ssim", "pearson"];
pub const SWEEP_SUMMARY_HEADER: [&str; 5] = ["param", "ssim_mean", "ssim_std", "corr_mean", "corr_std"];

pub fn write_sweep_rows<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_RAW_HEADER)?;
    for r in rows {
        out.write_record([
            r.param.to_string(),
            r.net.to_string(),
            r.image.clone(),
            format_float(r.ssim),
            format_float(r.pearson),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_summary<W: Write>(aggregates: &[SweepAggregate], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_SUMMARY_HEADER)?;
    for a in aggregates {
        out.write_record([
            a.param.to_string(),
            format_float(a.ssim_mean),
            format_float(a.ssim_std),
            format_float(a.corr_mean),
            format_float(a.corr_std),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads raw sweep rows back, for recomputing aggregates.
pub fn read_sweep_rows<R: std::io::Read>(r: R) -> Result<Vec<SweepRow>> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers()?.clone();
    if headers.iter().ne(SWEEP_RAW_HEADER) {
        return Err(Error::Format(format!("unexpected sweep header {headers:?}")));
    }
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::Format(format!("bad number {:?}", &rec[i])))
            };
            let int = |i: usize| -> Result<usize> {
                rec[i].parse().map_err(|_| Error::Format(format!("bad integer {:?}", &rec[i])))
            };
            Ok(SweepRow { param: int(0)?, net: int(1)?, image: rec[2].to_string(), ssim: num(3)?, pearson: num(4)? })
        })
        .collect()
}
