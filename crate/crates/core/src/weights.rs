//! Filter distributions, seeded filter banks and the distribution moments
//! `k_m = ½·E|w|^m` and `K_m = (k_{2m} − k_m²)/k_m²` that enter every bound.
//!
//! Every filter is drawn from its own ChaCha8 stream, keyed by the bank seed
//! and selected by `(layer, filter)`, so adding layers or filters never
//! perturbs the ones already there.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Uniform,
    Logistic,
    Laplace,
}

impl Family {
    fn code(self) -> u8 {
        match self {
            Family::Gaussian => 0,
            Family::Uniform => 1,
            Family::Logistic => 2,
            Family::Laplace => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Family::Gaussian,
            1 => Family::Uniform,
            2 => Family::Logistic,
            3 => Family::Laplace,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Uniform => "uniform",
            Family::Logistic => "logistic",
            Family::Laplace => "laplace",
        }
    }
}

/// A zero-mean symmetric filter-entry distribution.
///
/// `scale` is the standard deviation (gaussian), the half-width `a` of
/// `[-a, a)` (uniform), or the standard scale parameter (logistic, laplace).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub family: Family,
    pub scale: f64,
}

impl DistributionSpec {
    pub fn new(family: Family, scale: f64) -> Result<Self> {
        let spec = Self { family, scale };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(stdev: f64) -> Result<Self> {
        Self::new(Family::Gaussian, stdev)
    }

    pub fn uniform(half_width: f64) -> Result<Self> {
        Self::new(Family::Uniform, half_width)
    }

    pub fn logistic(scale: f64) -> Result<Self> {
        Self::new(Family::Logistic, scale)
    }

    pub fn laplace(scale: f64) -> Result<Self> {
        Self::new(Family::Laplace, scale)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return param_err(format!(
                "{} scale must be strictly positive, got {}",
                self.family.name(),
                self.scale
            ));
        }
        Ok(())
    }

    /// Only i.i.d. gaussian entries give an isotropic filter vector.
    pub fn is_isotropic(&self) -> bool {
        self.family == Family::Gaussian
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let s = self.scale;
        match self.family {
            Family::Gaussian => s * rng.sample::<f64, _>(StandardNormal),
            Family::Uniform => s * (2.0 * rng.random::<f64>() - 1.0),
            Family::Logistic => loop {
                let u: f64 = rng.random();
                if u > 0.0 {
                    break s * (u / (1.0 - u)).ln();
                }
            },
            Family::Laplace => loop {
                let u: f64 = rng.random::<f64>() - 0.5;
                if u > -0.5 {
                    break -s * u.signum() * (1.0 - 2.0 * u.abs()).ln();
                }
            },
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.family.name(), self.scale)
    }
}

/// Parses `family:scale`, e.g. `gaussian:0.015` or `uniform:0.04`.
impl FromStr for DistributionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, scale) = s
            .split_once(':')
            .ok_or_else(|| Error::Parameter(format!("expected family:scale, got `{s}`")))?;
        let family = match name.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Family::Gaussian,
            "uniform" => Family::Uniform,
            "logistic" => Family::Logistic,
            "laplace" => Family::Laplace,
            other => return param_err(format!("unknown distribution family `{other}`")),
        };
        let scale: f64 = scale
            .trim()
            .parse()
            .map_err(|_| Error::Parameter(format!("bad distribution scale `{scale}`")))?;
        Self::new(family, scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub k1: f64,
    pub k2: f64,
    pub k4: f64,
    /// `K_1 = (k_2 − k_1²)/k_1²`
    pub big_k1: f64,
    /// `K_2 = (k_4 − k_2²)/k_2²`
    pub big_k2: f64,
}

impl Moments {
    fn from_half_abs_moments(k1: f64, k2: f64, k4: f64) -> Self {
        Self {
            k1,
            k2,
            k4,
            big_k1: (k2 - k1 * k1) / (k1 * k1),
            big_k2: (k4 - k2 * k2) / (k2 * k2),
        }
    }
}

/// Closed-form moments of each family.
pub fn moments(spec: &DistributionSpec) -> Moments {
    let s = spec.scale;
    let (k1, k2, k4) = match spec.family {
        // E|w| = σ√(2/π), E w² = σ², E w⁴ = 3σ⁴
        Family::Gaussian => (s / (2.0 * PI).sqrt(), s * s / 2.0, 1.5 * s.powi(4)),
        // E|w| = a/2, E w² = a²/3, E w⁴ = a⁴/5
        Family::Uniform => (s / 4.0, s * s / 6.0, s.powi(4) / 10.0),
        // E|w| = 2s·ln2, E w² = π²s²/3, E w⁴ = 7π⁴s⁴/15
        Family::Logistic => (
            s * 2f64.ln(),
            PI * PI * s * s / 6.0,
            7.0 * PI.powi(4) * s.powi(4) / 30.0,
        ),
        // E|w| = λ, E w² = 2λ², E w⁴ = 24λ⁴
        Family::Laplace => (s / 2.0, s * s, 12.0 * s.powi(4)),
    };
    Moments::from_half_abs_moments(k1, k2, k4)
}

/// `h(θ) = (1/π)[(π − θ)cos θ + sin θ]`, the normalised correlation of two
/// rectified projections at angle θ. Inputs outside `[0, π]` are clamped.
pub fn angular_kernel(theta: f64) -> Result<f64> {
    if theta.is_nan() {
        return param_err("angular kernel evaluated at NaN");
    }
    let t = theta.clamp(0.0, PI);
    Ok(((PI - t) * t.cos() + t.sin()) / PI)
}

/// `h` evaluated from a cosine, clamped to `[-1, 1]` first.
pub fn angular_kernel_from_cos(cos: f64) -> Result<f64> {
    if cos.is_nan() {
        return param_err("angular kernel evaluated at NaN cosine");
    }
    let c = cos.clamp(-1.0, 1.0);
    // sin from the cosine directly, so h(π) is exactly 0
    Ok(((PI - c.acos()) * c + (1.0 - c * c).sqrt()) / PI)
}

/// One layer of filters: `count` filters of `length` entries, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterLayer {
    count: usize,
    length: usize,
    values: Vec<f64>,
}

impl FilterLayer {
    pub fn new(count: usize, length: usize, values: Vec<f64>) -> Result<Self> {
        if count == 0 || length == 0 {
            return shape_err("filter layer needs positive count and length");
        }
        if values.len() != count * length {
            return shape_err(format!(
                "filter layer expects {} values, got {}",
                count * length,
                values.len()
            ));
        }
        Ok(Self { count, length, values })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn filter(&self, j: usize) -> &[f64] {
        &self.values[j * self.length..(j + 1) * self.length]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.count, self.length)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub layers: Vec<FilterLayer>,
    pub seed: u64,
    pub dist: DistributionSpec,
}

/// RNG for filter `filter` of layer `layer` under `seed`.
pub fn filter_stream(seed: u64, layer: usize, filter: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((layer as u64) << 40) | filter as u64);
    rng
}

/// Draws an i.i.d. bank with one `(count, length)` layer per entry of `shapes`.
pub fn sample_filterbank(dist: &DistributionSpec, shapes: &[(usize, usize)], seed: u64) -> Result<FilterBank> {
    dist.validate()?;
    let layers = shapes
        .iter()
        .enumerate()
        .map(|(i, &(count, length))| {
            let mut values = Vec::with_capacity(count * length);
            for j in 0..count {
                let mut rng = filter_stream(seed, i, j);
                values.extend((0..length).map(|_| dist.sample(&mut rng)));
            }
            FilterLayer::new(count, length, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterBank { layers, seed, dist: *dist })
}

impl FilterBank {
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(FilterLayer::shape).collect()
    }

    /// Scales every filter value by `c`.
    pub fn scaled(&self, c: f64) -> FilterBank {
        let mut out = self.clone();
        for layer in &mut out.layers {
            for v in layer.values_mut() {
                *v *= c;
            }
        }
        out
    }
}

const BANK_MAGIC: &[u8; 8] = b"RIFBANK\0";
const BANK_VERSION: u32 = 1;

/// Binary layout (little endian): magic, version u32, family u8, scale f64,
/// seed u64, layer count u32, then per layer count u64, length u64 and the
/// raw f64 values.
pub fn write_filterbank<W: Write>(bank: &FilterBank, mut w: W) -> Result<()> {
    w.write_all(BANK_MAGIC)?;
    w.write_all(&BANK_VERSION.to_le_bytes())?;
    w.write_all(&[bank.dist.family.code()])?;
    w.write_all(&bank.dist.scale.to_le_bytes())?;
    w.write_all(&bank.seed.to_le_bytes())?;
    w.write_all(&(bank.layers.len() as u32).to_le_bytes())?;
    for layer in &bank.layers {
        w.write_all(&(layer.count as u64).to_le_bytes())?;
        w.write_all(&(layer.length as u64).to_le_bytes())?;
        for v in &layer.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_filterbank<R: Read>(mut r: R) -> Result<FilterBank> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BANK_MAGIC {
        return Err(Error::Format("not a filter bank file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != BANK_VERSION {
        return Err(Error::Format(format!("unsupported filter bank version {version}")));
    }
    let mut code = [0u8; 1];
    r.read_exact(&mut code)?;
    let family = Family::from_code(code[0])
        .ok_or_else(|| Error::Format(format!("unknown family code {}", code[0])))?;
    let scale = read_f64(&mut r)?;
    let dist = DistributionSpec::new(family, scale).map_err(|e| Error::Format(e.to_string()))?;
    let seed = read_u64(&mut r)?;
    let n_layers = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let count = read_u64(&mut r)? as usize;
        let length = read_u64(&mut r)? as usize;
        let total = count
            .checked_mul(length)
            .filter(|t| *t <= (1 << 32))
            .ok_or_else(|| Error::Format("filter layer too large".into()))?;
        let mut values = Vec::with_capacity(total);
        for _ in 0..total {
            values.push(read_f64(&mut r)?);
        }
        layers.push(FilterLayer::new(count, length, values).map_err(|e| Error::Format(e.to_string()))?);
    }
    Ok(FilterBank { layers, seed, dist })
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn density(spec: &DistributionSpec, x: f64) -> f64 {
        let s = spec.scale;
        match spec.family {
            Family::Gaussian => (-x * x / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt()),
            Family::Uniform => {
                if x.abs() <= s {
                    1.0 / (2.0 * s)
                } else {
                    0.0
                }
            }
            Family::Logistic => {
                let e = (-x / s).exp();
                e / (s * (1.0 + e).powi(2))
            }
            Family::Laplace => (-x.abs() / s).exp() / (2.0 * s),
        }
    }

    /// ½·E|w|^m by composite Simpson quadrature of the density.
    fn half_abs_moment(spec: &DistributionSpec, m: i32) -> f64 {
        let hi = match spec.family {
            Family::Uniform => spec.scale,
            _ => 60.0 * spec.scale,
        };
        let n = 200_000;
        let h = hi / n as f64;
        let f = |x: f64| x.powi(m) * density(spec, x);
        let mut acc = f(0.0) + f(hi);
        for i in 1..n {
            let x = i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        // ½ · 2∫₀^∞ |x|^m p(x) dx for a symmetric density
        acc * h / 3.0
    }

    fn all_families() -> Vec<DistributionSpec> {
        vec![
            DistributionSpec::gaussian(0.7).unwrap(),
            DistributionSpec::uniform(0.04).unwrap(),
            DistributionSpec::logistic(0.015).unwrap(),
            DistributionSpec::laplace(1.3).unwrap(),
        ]
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for spec in all_families() {
            let m = moments(&spec);
            for (k, order) in [(m.k1, 1), (m.k2, 2), (m.k4, 4)] {
                let q = half_abs_moment(&spec, order);
                assert_relative_eq!(k, q, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn gaussian_and_uniform_constants() {
        let g = moments(&DistributionSpec::gaussian(0.3).unwrap());
        assert_relative_eq!(g.k1, 0.3 / (2.0 * PI).sqrt(), max_relative = 1e-15);
        assert_relative_eq!(g.k2, 0.045, max_relative = 1e-15);
        assert_relative_eq!(g.big_k1, PI - 1.0, max_relative = 1e-12);
        assert_relative_eq!(g.big_k2, 5.0, max_relative = 1e-12);

        let u = moments(&DistributionSpec::uniform(0.04).unwrap());
        assert_relative_eq!(u.k1, 0.01, max_relative = 1e-15);
        assert_relative_eq!(u.k2, 0.04 * 0.04 / 6.0, max_relative = 1e-15);
        assert_relative_eq!(u.big_k1, 5.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn big_k1_is_scale_free_and_at_least_one() {
        let a = moments(&DistributionSpec::gaussian(0.015).unwrap());
        let b = moments(&DistributionSpec::gaussian(1.0).unwrap());
        assert_relative_eq!(a.big_k1, b.big_k1, max_relative = 1e-12);
        for spec in all_families() {
            let m = moments(&spec);
            assert!(m.big_k1 >= 1.0, "{spec}: K1 = {}", m.big_k1);
            assert!(m.big_k2.is_finite() && m.big_k2 > 0.0);
        }
    }

    #[test]
    fn angular_kernel_landmarks() {
        assert_relative_eq!(angular_kernel(0.0).unwrap(), 1.0);
        assert!(angular_kernel(PI).unwrap().abs() < 1e-15);
        assert_relative_eq!(angular_kernel(PI / 2.0).unwrap(), 1.0 / PI, max_relative = 1e-15);
        assert!(angular_kernel(f64::NAN).is_err());
        assert_eq!(angular_kernel(-0.1).unwrap(), 1.0);
        let mut prev = 1.0;
        for i in 1..=100 {
            let h = angular_kernel(PI * i as f64 / 100.0).unwrap();
            assert!(h <= prev);
            prev = h;
        }
        assert_relative_eq!(angular_kernel_from_cos(1.0 + 1e-12).unwrap(), 1.0);
        assert_eq!(angular_kernel_from_cos(-1.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_positive_scale() {
        assert!(DistributionSpec::gaussian(0.0).is_err());
        assert!(DistributionSpec::laplace(-1.0).is_err());
        assert!(DistributionSpec::uniform(f64::NAN).is_err());
        let bad = DistributionSpec { family: Family::Gaussian, scale: -1.0 };
        assert!(matches!(sample_filterbank(&bad, &[(1, 1)], 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn parse_and_display() {
        let d: DistributionSpec = "uniform:0.04".parse().unwrap();
        assert_eq!(d, DistributionSpec::uniform(0.04).unwrap());
        assert_eq!(d.to_string(), "uniform:0.04");
        assert!("cauchy:1".parse::<DistributionSpec>().is_err());
        assert!("gaussian".parse::<DistributionSpec>().is_err());
    }

    #[test]
    fn same_seed_same_bank() {
        let d = DistributionSpec::gaussian(0.1).unwrap();
        let a = sample_filterbank(&d, &[(4, 9), (2, 36)], 42).unwrap();
        let b = sample_filterbank(&d, &[(4, 9), (2, 36)], 42).unwrap();
        assert_eq!(a, b);
        let c = sample_filterbank(&d, &[(4, 9), (2, 36)], 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn adding_layers_keeps_earlier_layers() {
        let d = DistributionSpec::laplace(0.2).unwrap();
        let a = sample_filterbank(&d, &[(3, 4)], 7).unwrap();
        let b = sample_filterbank(&d, &[(5, 4), (2, 2)], 7).unwrap();
        assert_eq!(a.layers[0].values(), &b.layers[0].values()[..12]);
    }

    #[test]
    fn gaussian_sample_stdev_within_one_percent() {
        let d = DistributionSpec::gaussian(0.015).unwrap();
        let bank = sample_filterbank(&d, &[(1000, 1000)], 3).unwrap();
        let v = bank.layers[0].values();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() / 0.015 - 1.0).abs() < 0.01);
    }

    #[test]
    fn uniform_samples_stay_in_half_open_interval() {
        let d = DistributionSpec::uniform(0.04).unwrap();
        let bank = sample_filterbank(&d, &[(100, 1000)], 1).unwrap();
        assert!(bank.layers[0].values().iter().all(|v| (-0.04..0.04).contains(v)));
    }

    #[test]
    fn heavy_tailed_families_match_their_variance() {
        for spec in [DistributionSpec::logistic(0.5).unwrap(), DistributionSpec::laplace(0.5).unwrap()] {
            let bank = sample_filterbank(&spec, &[(500, 1000)], 9).unwrap();
            let v = bank.layers[0].values();
            let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
            let want = 2.0 * moments(&spec).k2;
            assert!((var / want - 1.0).abs() < 0.02, "{spec}: {var} vs {want}");
        }
    }

    #[test]
    fn bank_file_round_trips_bit_exactly() {
        let d = DistributionSpec::logistic(0.015).unwrap();
        let bank = sample_filterbank(&d, &[(3, 5), (1, 7)], 99).unwrap();
        let mut buf = Vec::new();
        write_filterbank(&bank, &mut buf).unwrap();
        let back = read_filterbank(buf.as_slice()).unwrap();
        assert_eq!(back, bank);
        buf[0] = b'X';
        assert!(matches!(read_filterbank(buf.as_slice()), Err(Error::Format(_))));
        let mut short = Vec::new();
        write_filterbank(&bank, &mut short).unwrap();
        short.truncate(short.len() - 3);
        assert!(read_filterbank(short.as_slice()).is_err());
    }
}
