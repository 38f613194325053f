//! Reconstruction quality: grayscale conversion, Pearson correlation and
//! SSIM with the negative-inversion rule.

use crate::error::{param_err, shape_err, Error, Result};
use crate::tensor::FeatureMaps;

/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    range: f64,
    values: Vec<f64>,
}

impl GrayImage {
    /// Values are clamped to `[0, range]`.
    pub fn new(height: usize, width: usize, values: Vec<f64>, range: f64) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return shape_err(format!("{} values for a {height}x{width} image", values.len()));
        }
        if !(range.is_finite() && range > 0.0) {
            return param_err(format!("dynamic range must be positive, got {range}"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return param_err("gray image contains NaN");
        }
        let values = values.into_iter().map(|v| v.clamp(0.0, range)).collect();
        Ok(Self { height, width, range, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn inverted(&self) -> GrayImage {
        let values = self.values.iter().map(|v| self.range - v).collect();
        GrayImage { values, ..*self }
    }
}

impl GrayImage {
    fn same_dims(&self, other: &GrayImage) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return shape_err(format!(
                "images differ in size: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            ));
        }
        Ok(())
    }
}

/// Luma for RGB maps; one-channel maps pass through. Range 1.
pub fn to_gray(x: &FeatureMaps) -> Result<GrayImage> {
    to_gray_with_range(x, 1.0)
}

pub fn to_gray_with_range(x: &FeatureMaps, range: f64) -> Result<GrayImage> {
    let values = match x.channels() {
        1 => x.data().to_vec(),
        3 => {
            let (r, g, b) = (x.channel(0), x.channel(1), x.channel(2));
            (0..x.pixels()).map(|p| LUMA[0] * r[p] + LUMA[1] * g[p] + LUMA[2] * b[p]).collect()
        }
        c => return shape_err(format!("grayscale conversion needs 1 or 3 channels, got {c}")),
    };
    GrayImage::new(x.height(), x.width(), values, range)
}

/// Per-map affine rescale to `[0, 1]`; a constant map becomes all zeros.
pub fn min_max_normalize(x: &FeatureMaps) -> FeatureMaps {
    let lo = x.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    FeatureMaps::from_fn(x.channels(), x.height(), x.width(), |c, y, xx| {
        if span > 0.0 {
            (x.get(c, y, xx) - lo) / span
        } else {
            0.0
        }
    })
    .expect("dims come from a valid map")
}

pub fn pearson(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.same_dims(b)?;
    let n = a.values.len() as f64;
    let ma = a.values.iter().sum::<f64>() / n;
    let mb = b.values.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("pearson correlation of a constant image".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(v: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * v[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM, 11x11 gaussian window (σ = 1.5) over the valid region,
/// `C1 = (0.01·L)²`, `C2 = (0.03·L)²` with `L` the range of `a`.
pub fn ssim_raw(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.same_dims(b)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return param_err(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"));
    }
    let k = gaussian_kernel();
    let c1 = (0.01 * a.range).powi(2);
    let c2 = (0.03 * a.range).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.values.iter().zip(&b.values).map(|(x, y)| f(*x, *y)).collect()
    };
    let mu_a = filter_valid(&a.values, h, w, &k);
    let mu_b = filter_valid(&b.values, h, w, &k);
    let e_aa = filter_valid(&prod(&|x, _| x * x), h, w, &k);
    let e_bb = filter_valid(&prod(&|_, y| y * y), h, w, &k);
    let e_ab = filter_valid(&prod(&|x, y| x * y), h, w, &k);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// SSIM in `[0, 1]`: a negative score is recomputed against the
/// luminosity-inverted `b`, and the result is clamped.
pub fn ssim_reported(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    let raw = ssim_raw(a, b)?;
    let score = if raw < 0.0 { ssim_raw(a, &b.inverted())? } else { raw };
    Ok(score.clamp(0.0, 1.0))
}
