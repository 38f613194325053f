//! Infinite-width limits of `def51` networks and the finite-width bounds
//! around them.
//!
//! Index conventions follow the layer-op view of a network: op `i` maps grid
//! `i` to grid `i + 1`, ops are convs, pools, upsamples and the final channel
//! mean, and `L` is the number of ops. `z^(i)` is the patched norm of grid `i`
//! under op `i`, so it lives on grid `i + 1`; op `L − 2` is the last conv and
//! `f* = k₁·z*^(L−2)`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{param_err, shape_err, Error, Result};
use crate::format_float;
use crate::network::{forward_plan, Mode, NetworkSpec, Plan, Step};
use crate::tensor::{FeatureMaps, PatchIndex};
use crate::weights::{angular_kernel_from_cos, moments, sample_filterbank, DistributionSpec, Moments};

/// Slack allowed on the cosine inequality for float round-off.
pub const COSINE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
enum Op<'a> {
    Conv { patches: &'a PatchIndex, out: usize, last: bool },
    L2Pool(&'a PatchIndex),
    AvgPool(&'a PatchIndex),
    MaxPool,
    Upsample(usize),
    Mean,
}

struct Analysed {
    plan: Plan,
}

impl Analysed {
    fn new(spec: &NetworkSpec) -> Result<Self> {
        if spec.mode != Mode::Def51 {
            return Err(Error::WrongVariant("convergence analysis needs a def51 network".into()));
        }
        Ok(Self { plan: spec.plan()? })
    }

    fn ops(&self) -> Vec<Op<'_>> {
        self.plan
            .steps
            .iter()
            .filter_map(|s| match s {
                Step::Conv { patches, out, last, .. } => Some(Op::Conv { patches, out: *out, last: *last }),
                Step::L2Pool(p) => Some(Op::L2Pool(p)),
                Step::AvgPool(p) => Some(Op::AvgPool(p)),
                Step::MaxPool(_) => Some(Op::MaxPool),
                Step::Upsample(f) => Some(Op::Upsample(*f)),
                Step::ChannelMean => Some(Op::Mean),
                Step::Relu | Step::LeakyRelu(_) | Step::Crop(..) | Step::Scale(_) => None,
            })
            .collect()
    }

    fn check_input(&self, x: &FeatureMaps) -> Result<()> {
        let d = self.plan.input_dims();
        if x.dims() != (d.channels, d.height, d.width) {
            return shape_err(format!(
                "input is {:?}, network expects {}x{}x{}",
                x.dims(),
                d.channels,
                d.height,
                d.width
            ));
        }
        Ok(())
    }
}

fn isotropic_moments(dist: &DistributionSpec) -> Result<Moments> {
    dist.validate()?;
    if !dist.is_isotropic() {
        return Err(Error::Isotropy(dist.to_string()));
    }
    Ok(moments(dist))
}

fn window_sums(u: &[f64], p: &PatchIndex) -> Vec<f64> {
    p.patches().map(|patch| patch.iter().flatten().map(|&i| u[i]).sum()).collect()
}

fn scatter_upsample(u: &[f64], (h, w): (usize, usize), f: usize) -> Vec<f64> {
    let ow = w * f;
    let mut out = vec![0.0; h * f * ow];
    for y in 0..h {
        for x in 0..w {
            out[y * f * ow + x * f] = u[y * w + x];
        }
    }
    out
}

/// Applies every op except the final mean to a per-pixel energy map, with unit
/// gain on convs. Returns `u^(1) .. u^(L−1)` and their grids.
fn route_energies(ops: &[Op], u0: Vec<f64>, dims: (usize, usize)) -> Result<Vec<(Vec<f64>, (usize, usize))>> {
    let mut out = Vec::with_capacity(ops.len());
    let (mut u, mut grid) = (u0, dims);
    for op in &ops[..ops.len() - 1] {
        (u, grid) = match *op {
            Op::Conv { patches: p, .. } | Op::L2Pool(p) => (window_sums(&u, p), p.out_dims()),
            Op::Upsample(f) => (scatter_upsample(&u, grid, f), (grid.0 * f, grid.1 * f)),
            Op::AvgPool(_) => {
                return Err(Error::WrongVariant(
                    "average pooling has no l2 convergence field; use the Gram recurrence".into(),
                ))
            }
            Op::MaxPool => return Err(Error::WrongVariant("max pooling is outside the analysable variant".into())),
            Op::Mean => unreachable!("mean is always the last op"),
        };
        out.push((u.clone(), grid));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceField {
    /// Grid of `z_star_per_layer[i]` (grid `i + 1`).
    pub layer_dims: Vec<(usize, usize)>,
    /// `z*^(i)` for `i = 0 ..= L−2`.
    pub z_star_per_layer: Vec<Vec<f64>>,
    /// Route form `sqrt(Σ_l n_(l,i)‖X_{:,l}‖²)` for the l2 field; for the
    /// Gram field this is `z*^(L−2)` itself.
    pub z_star: Vec<f64>,
    pub k: f64,
    pub f_star: Vec<f64>,
    pub out_dims: (usize, usize),
}

impl ConvergenceField {
    /// Number of ops `L`, the final mean included.
    pub fn layers(&self) -> usize {
        self.z_star_per_layer.len() + 1
    }

    /// One row per output pixel: `pixel,row,col,z_star,f_star`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["pixel", "row", "col", "z_star", "f_star"])?;
        let width = self.out_dims.1;
        for (p, (z, f)) in self.z_star.iter().zip(&self.f_star).enumerate() {
            out.write_record([
                p.to_string(),
                (p / width).to_string(),
                (p % width).to_string(),
                format_float(*z),
                format_float(*f),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Infinite-width limit of a `def51` network with l2 pooling.
pub fn convergence_field_l2(spec: &NetworkSpec, dist: &DistributionSpec, x: &FeatureMaps) -> Result<ConvergenceField> {
    let m = isotropic_moments(dist)?;
    let a = Analysed::new(spec)?;
    a.check_input(x)?;
    let ops = a.ops();
    let us = route_energies(&ops, x.pixel_energy(), (x.height(), x.width()))?;

    let mut gain = 1.0;
    let mut z_star_per_layer = Vec::with_capacity(us.len());
    let mut layer_dims = Vec::with_capacity(us.len());
    for (op, (u, grid)) in ops.iter().zip(&us) {
        z_star_per_layer.push(u.iter().map(|v| (gain * v).sqrt()).collect());
        layer_dims.push(*grid);
        if let Op::Conv { last: false, .. } = op {
            gain *= m.k2;
        }
    }
    let (u_last, out_dims) = us.last().expect("def51 nets have at least one conv");
    let k = m.k1 * z_gain_before_last(&ops, m.k2).sqrt();
    let z_star: Vec<f64> = u_last.iter().map(|v| v.sqrt()).collect();
    let f_star = z_star.iter().map(|z| k * z).collect();
    Ok(ConvergenceField { layer_dims, z_star_per_layer, z_star, k, f_star, out_dims: *out_dims })
}

fn z_gain_before_last(ops: &[Op], k2: f64) -> f64 {
    ops.iter()
        .filter(|op| matches!(op, Op::Conv { last: false, .. }))
        .fold(1.0, |acc, _| acc * k2)
}

/// `n_(l,i)`: number of routes from input pixel `l` to output pixel `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteCountMap {
    pub in_dims: (usize, usize),
    pub out_dims: (usize, usize),
    /// Row-major `[output pixel][input pixel]`.
    pub counts: Vec<u64>,
}

impl RouteCountMap {
    fn d_in(&self) -> usize {
        self.in_dims.0 * self.in_dims.1
    }

    pub fn count(&self, input: usize, output: usize) -> u64 {
        self.counts[output * self.d_in() + input]
    }

    pub fn row(&self, output: usize) -> &[u64] {
        let d = self.d_in();
        &self.counts[output * d..(output + 1) * d]
    }

    /// Receptive field `R_i`.
    pub fn receptive_set(&self, output: usize) -> Vec<usize> {
        self.row(output).iter().enumerate().filter(|(_, n)| **n > 0).map(|(l, _)| l).collect()
    }

    /// `Σ_l n_(l,i) e_l` for every output pixel.
    pub fn weighted_sums(&self, e: &[f64]) -> Vec<f64> {
        let d = self.d_in();
        self.counts
            .chunks(d)
            .map(|row| row.iter().zip(e).map(|(n, v)| *n as f64 * v).sum())
            .collect()
    }
}

/// Pushes a one-hot energy map per input pixel through the unit-gain
/// recurrence; the outputs are exact integers.
pub fn compute_route_counts(spec: &NetworkSpec) -> Result<RouteCountMap> {
    let a = Analysed::new(spec)?;
    let ops = a.ops();
    let input = a.plan.input_dims();
    let d_in = input.pixels();
    let mut columns = Vec::with_capacity(d_in);
    let mut out_dims = (0, 0);
    for l in 0..d_in {
        let mut u0 = vec![0.0; d_in];
        u0[l] = 1.0;
        let us = route_energies(&ops, u0, (input.height, input.width))?;
        let (u, grid) = us.into_iter().last().expect("at least one conv");
        out_dims = grid;
        columns.push(u);
    }
    let d_out = out_dims.0 * out_dims.1;
    let mut counts = vec![0u64; d_out * d_in];
    for (l, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            debug_assert!((v - v.round()).abs() < 1e-9);
            counts[i * d_in + l] = v.round() as u64;
        }
    }
    Ok(RouteCountMap { in_dims: (input.height, input.width), out_dims, counts })
}

/// Symmetric `d x d` Gram matrix of per-pixel channel vectors on an `h x w` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Gram {
    pub fn of(x: &FeatureMaps) -> Self {
        let d = x.pixels();
        let mut data = vec![0.0; d * d];
        for c in 0..x.channels() {
            let ch = x.channel(c);
            for j in 0..d {
                for k in j..d {
                    data[j * d + k] += ch[j] * ch[k];
                }
            }
        }
        mirror_upper(&mut data, d);
        Self { height: x.height(), width: x.width(), data }
    }

    pub fn dim(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.dim() + k]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|j| self.get(j, j)).sum()
    }

    /// Patched norms `z_j = sqrt(Σ_s C_{D_js, D_js})`.
    fn patch_norms(&self, p: &PatchIndex) -> Vec<f64> {
        p.patches()
            .map(|patch| patch.iter().flatten().map(|&a| self.get(a, a)).sum::<f64>().max(0.0).sqrt())
            .collect()
    }

    fn conv(&self, p: &PatchIndex, k2: f64) -> Result<Gram> {
        let z = self.patch_norms(p);
        let dt = p.patch_count();
        let mut data = vec![0.0; dt * dt];
        for j in 0..dt {
            if z[j] == 0.0 {
                continue;
            }
            let pj = p.patch(j);
            for k in j..dt {
                if z[k] == 0.0 {
                    continue;
                }
                let pk = p.patch(k);
                let dot: f64 = pj
                    .iter()
                    .zip(pk)
                    .filter_map(|(a, b)| Some(self.get((*a)?, (*b)?)))
                    .sum();
                let h = angular_kernel_from_cos(dot / (z[j] * z[k]))?;
                data[j * dt + k] = k2 * h * z[j] * z[k];
            }
        }
        mirror_upper(&mut data, dt);
        let (height, width) = p.out_dims();
        Ok(Gram { height, width, data })
    }

    fn avg_pool(&self, p: &PatchIndex) -> Gram {
        let dt = p.patch_count();
        let s = p.slots_per_patch() as f64;
        let mut data = vec![0.0; dt * dt];
        for j in 0..dt {
            for k in j..dt {
                let mut acc = 0.0;
                for a in p.patch(j).iter().flatten() {
                    for b in p.patch(k).iter().flatten() {
                        acc += self.get(*a, *b);
                    }
                }
                data[j * dt + k] = acc / (s * s);
            }
        }
        mirror_upper(&mut data, dt);
        let (height, width) = p.out_dims();
        Gram { height, width, data }
    }

    fn upsample(&self, f: usize) -> Gram {
        let (h, w) = (self.height * f, self.width * f);
        let d = h * w;
        let src = |p: usize| {
            let (y, x) = (p / w, p % w);
            (y % f == 0 && x % f == 0).then(|| (y / f) * self.width + x / f)
        };
        let mut data = vec![0.0; d * d];
        for j in 0..d {
            let Some(a) = src(j) else { continue };
            for k in 0..d {
                if let Some(b) = src(k) {
                    data[j * d + k] = self.get(a, b);
                }
            }
        }
        Gram { height: h, width: w, data }
    }
}

fn mirror_upper(data: &mut [f64], d: usize) {
    for j in 0..d {
        for k in 0..j {
            data[j * d + k] = data[k * d + j];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramField {
    /// `C^(i)` for grids `0 ..= L−2`.
    pub gram_per_layer: Vec<Gram>,
}

/// Infinite-width limit of a `def51` network with average pooling, via the
/// Gram recurrence.
pub fn convergence_field_avg(
    spec: &NetworkSpec,
    dist: &DistributionSpec,
    x: &FeatureMaps,
) -> Result<(GramField, ConvergenceField)> {
    let m = isotropic_moments(dist)?;
    let a = Analysed::new(spec)?;
    a.check_input(x)?;
    let ops = a.ops();
    let mut grams = vec![Gram::of(x)];
    let mut z_star_per_layer = Vec::new();
    let mut layer_dims = Vec::new();
    for op in &ops[..ops.len() - 1] {
        let c = grams.last().expect("starts with the input gram");
        match *op {
            Op::Conv { patches, last, .. } => {
                let z = c.patch_norms(patches);
                z_star_per_layer.push(z);
                layer_dims.push(patches.out_dims());
                if !last {
                    let next = c.conv(patches, m.k2)?;
                    grams.push(next);
                }
            }
            Op::AvgPool(p) => {
                z_star_per_layer.push(c.patch_norms(p));
                layer_dims.push(p.out_dims());
                let next = c.avg_pool(p);
                grams.push(next);
            }
            Op::Upsample(f) => {
                let next = c.upsample(f);
                z_star_per_layer.push((0..next.dim()).map(|j| next.get(j, j).sqrt()).collect());
                layer_dims.push((next.height, next.width));
                grams.push(next);
            }
            Op::L2Pool(_) => {
                return Err(Error::WrongVariant(
                    "l2 pooling has no Gram recurrence; use the l2 convergence field".into(),
                ))
            }
            Op::MaxPool => return Err(Error::WrongVariant("max pooling is outside the analysable variant".into())),
            Op::Mean => unreachable!("mean is always the last op"),
        }
    }
    let z_star = z_star_per_layer.last().expect("at least one conv").clone();
    let out_dims = *layer_dims.last().expect("at least one conv");
    let f_star = z_star.iter().map(|z| m.k1 * z).collect();
    let field = ConvergenceField { layer_dims, z_star_per_layer, z_star, k: m.k1, f_star, out_dims };
    Ok((GramField { gram_per_layer: grams }, field))
}

/// Patch layout for the ε operator.
#[derive(Debug, Clone, Copy)]
pub enum Patching<'a> {
    /// The windows of a layer; must partition the grid.
    Windows(&'a PatchIndex),
    /// One patch holding every pixel.
    Whole,
}

/// Per-patch mean removal `ε(x)_j = x_j − mean of the patch holding j`.
pub fn epsilon_operator(x: &[f64], patching: Patching) -> Result<Vec<f64>> {
    match patching {
        Patching::Whole => {
            if x.is_empty() {
                return shape_err("epsilon operator on an empty vector");
            }
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            Ok(x.iter().map(|v| v - mean).collect())
        }
        Patching::Windows(p) => {
            if !p.is_partition() {
                return Err(Error::Precondition(
                    "epsilon operator needs non-overlapping windows that tile the grid".into(),
                ));
            }
            let (h, w) = p.in_dims();
            if x.len() != h * w {
                return shape_err(format!("vector of length {} on a {h}x{w} grid", x.len()));
            }
            let r = p.slots_per_patch() as f64;
            let mut out = vec![0.0; x.len()];
            for patch in p.patches() {
                let mean = patch.iter().flatten().map(|&i| x[i]).sum::<f64>() / r;
                for &i in patch.iter().flatten() {
                    out[i] = x[i] - mean;
                }
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    TwoLayerVariance,
    MultilayerVariance,
    Cosine,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::TwoLayerVariance => "two_layer_variance",
            BoundKind::MultilayerVariance => "multilayer_variance",
            BoundKind::Cosine => "cosine",
        }
    }
}

/// Everything a bound value is computed from.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BoundParams {
    /// `N_1 .. N_{L−1}`; a single entry for the two-layer bound.
    pub channels: Vec<usize>,
    pub delta: Option<f64>,
    /// `L`
    pub layers: usize,
    pub lambdas: Vec<f64>,
    pub n_bar: Option<f64>,
    /// `K_1` of the last conv.
    pub big_k1: Option<f64>,
    /// `K_2` shared by the hidden convs.
    pub big_k2: Option<f64>,
    /// `M = Σ X_t²`
    pub energy: Option<f64>,
    /// `Σ ε_t X_t`
    pub eps_dot: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub bound: f64,
    /// `sin Θ` for variance bounds, `cos Φ` for the cosine bound.
    pub empirical: Option<f64>,
    pub holds: Option<bool>,
    pub params: BoundParams,
}

impl BoundReport {
    fn new(kind: BoundKind, bound: f64, params: BoundParams) -> Self {
        Self { kind, bound, empirical: None, holds: None, params }
    }

    pub fn with_empirical(mut self, value: f64) -> Self {
        self.holds = Some(match self.kind {
            BoundKind::Cosine => value >= self.bound - COSINE_SLACK,
            _ => value <= self.bound,
        });
        self.empirical = Some(value);
        self
    }

    /// A variance bound of 1 or more says nothing about a sine.
    pub fn is_vacuous(&self) -> bool {
        self.kind != BoundKind::Cosine && self.bound >= 1.0
    }

    /// Recomputes the bound from `params` alone.
    pub fn recompute(&self) -> Result<f64> {
        let p = &self.params;
        let need = |v: Option<f64>, what: &str| v.ok_or_else(|| Error::Parameter(format!("report lacks {what}")));
        match self.kind {
            BoundKind::TwoLayerVariance => {
                let n = *p.channels.first().ok_or_else(|| Error::Parameter("report lacks N".into()))?;
                Ok(two_layer_formula(need(p.big_k1, "K1")?, n, need(p.delta, "delta")?))
            }
            BoundKind::MultilayerVariance => {
                Ok(multilayer_formula(p.layers, need(p.n_bar, "N bar")?, &p.lambdas, need(p.delta, "delta")?))
            }
            BoundKind::Cosine => Ok(1.0 - need(p.eps_dot, "eps dot")? / need(p.energy, "energy")?),
        }
    }
}

fn two_layer_formula(big_k1: f64, n: usize, delta: f64) -> f64 {
    (big_k1 / (n as f64 * delta)).sqrt()
}

fn multilayer_formula(layers: usize, n_bar: f64, lambdas: &[f64], delta: f64) -> f64 {
    let l = layers as f64;
    let first = ((l - 1.0) / (n_bar * delta)).sqrt();
    let prod: f64 = lambdas.iter().product();
    first + ((l - 2.0) * first * prod).sqrt()
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return param_err(format!("delta must lie in (0, 1), got {delta}"));
    }
    Ok(())
}

/// `sin Θ ≤ sqrt(K₁/(N·δ))` with probability `1 − δ`.
pub fn variance_bound_two_layer(big_k1: f64, n: usize, delta: f64) -> Result<BoundReport> {
    check_delta(delta)?;
    if n == 0 {
        return param_err("N must be at least 1");
    }
    if !(big_k1.is_finite() && big_k1 >= 0.0) {
        return param_err(format!("K1 must be a non-negative number, got {big_k1}"));
    }
    let params = BoundParams { channels: vec![n], delta: Some(delta), layers: 2, big_k1: Some(big_k1), ..Default::default() };
    Ok(BoundReport::new(BoundKind::TwoLayerVariance, two_layer_formula(big_k1, n, delta), params))
}

fn lambda(x: &[f64], patching: Patching) -> Result<f64> {
    let norm_sq: f64 = x.iter().map(|v| v * v).sum();
    if norm_sq == 0.0 {
        return Err(Error::Degenerate("lambda undefined on a zero field".into()));
    }
    let eps = epsilon_operator(x, patching)?;
    let ratio = eps.iter().map(|v| v * v).sum::<f64>() / norm_sq;
    if ratio >= 1.0 {
        return Err(Error::Degenerate(format!("lambda undefined: epsilon ratio {ratio} >= 1")));
    }
    Ok(1.0 / (1.0 - ratio).sqrt())
}

/// The multilayer variance bound for a `def51` l2-pooled network whose
/// windows tile their inputs (at most one route between any two pixels).
pub fn variance_bound_multilayer(
    spec: &NetworkSpec,
    dist: &DistributionSpec,
    x: &FeatureMaps,
    delta: f64,
) -> Result<BoundReport> {
    check_delta(delta)?;
    let m = isotropic_moments(dist)?;
    let a = Analysed::new(spec)?;
    a.check_input(x)?;
    let ops = a.ops();
    for op in &ops {
        match op {
            Op::Conv { patches: p, .. } | Op::L2Pool(p) if !p.is_partition() => {
                return Err(Error::Precondition(
                    "multilayer bound needs every window to tile its input (stride = kernel, no padding)".into(),
                ))
            }
            Op::Upsample(_) => {
                return Err(Error::Precondition("multilayer bound does not cover upsampling".into()))
            }
            Op::AvgPool(_) | Op::MaxPool => {
                return Err(Error::WrongVariant("multilayer bound needs l2 pooling".into()))
            }
            _ => {}
        }
    }
    let layers = ops.len();
    let us = route_energies(&ops, x.pixel_energy(), (x.height(), x.width()))?;

    // N_i is the channel count of grid i; only conv outputs carry variance.
    let mut channels = Vec::with_capacity(layers - 1);
    let mut cur = a.plan.input_dims().channels;
    let mut inv_sum = 0.0;
    for op in &ops[..layers - 1] {
        match op {
            Op::Conv { out, last, .. } => {
                cur = *out;
                let big_k = if *last { m.big_k1 } else { m.big_k2 };
                inv_sum += big_k / cur as f64;
            }
            _ => {}
        }
        channels.push(cur);
    }
    let n_bar = (layers - 1) as f64 / inv_sum;

    let mut lambdas = Vec::with_capacity(layers - 1);
    for i in 0..layers - 1 {
        let x_i = &us[i].0;
        let patching = match ops[i + 1] {
            Op::Conv { patches: p, .. } | Op::L2Pool(p) => Patching::Windows(p),
            _ => Patching::Whole,
        };
        lambdas.push(lambda(x_i, patching)?);
    }
    let bound = multilayer_formula(layers, n_bar, &lambdas, delta);
    let params = BoundParams {
        channels,
        delta: Some(delta),
        layers,
        lambdas,
        n_bar: Some(n_bar),
        big_k1: Some(m.big_k1),
        big_k2: Some(m.big_k2),
        ..Default::default()
    };
    Ok(BoundReport::new(BoundKind::MultilayerVariance, bound, params))
}

fn check_cosine_input(x: &FeatureMaps) -> Result<()> {
    if x.channels() != 1 {
        return Err(Error::Precondition(format!("cosine bound needs a single-channel input, got {}", x.channels())));
    }
    if x.data().iter().any(|v| *v < 0.0) {
        return Err(Error::Precondition("cosine bound needs non-negative pixels".into()));
    }
    if x.data().iter().all(|v| *v == 0.0) {
        return Err(Error::Precondition("cosine bound needs at least one positive pixel".into()));
    }
    Ok(())
}

/// Two-layer net with an odd `r x r` kernel, stride 1 and same-size padding.
pub fn cosine_network(x: &FeatureMaps, r: usize) -> Result<NetworkSpec> {
    use crate::network::LayerSpec;
    if r == 0 || r % 2 == 0 {
        return param_err(format!("cosine bound needs an odd kernel, got {r}"));
    }
    NetworkSpec::def51(
        [x.channels(), x.height(), x.width()],
        vec![LayerSpec::conv(r, 1, r / 2, 1), LayerSpec::Relu, LayerSpec::ChannelMean],
    )
}

/// `cos Φ ≥ 1 − (1/M)·Σ_t ε_t X_t` for the two-layer net of [`cosine_network`].
pub fn cosine_bound(x: &FeatureMaps, r: usize) -> Result<BoundReport> {
    check_cosine_input(x)?;
    let spec = cosine_network(x, r)?;
    let p = PatchIndex::new(x.height(), x.width(), r, 1, r / 2)?;
    let xs = x.data();
    let r2 = (r * r) as f64;
    let means = window_sums(xs, &p).into_iter().map(|s| s / r2);
    let eps_dot: f64 = xs.iter().zip(means).map(|(v, mean)| (v - mean) * v).sum();
    let energy: f64 = xs.iter().map(|v| v * v).sum();
    let field = convergence_field_l2(&spec, &DistributionSpec::gaussian(1.0)?, x)?;
    let cos = cosine_similarity(xs, &field.f_star).ok_or_else(|| Error::Degenerate("zero convergence field".into()))?;
    let params = BoundParams { layers: 2, energy: Some(energy), eps_dot: Some(eps_dot), ..Default::default() };
    Ok(BoundReport::new(BoundKind::Cosine, 1.0 - eps_dot / energy, params).with_empirical(cos))
}

/// Route-weighted form of the cosine bound for a deeper `def51` net whose
/// output grid equals its input grid. The weighted mean divides by
/// `sqrt(W_row·W_col)`, the largest per-output and per-input route totals.
pub fn cosine_bound_multilayer(spec: &NetworkSpec, x: &FeatureMaps) -> Result<BoundReport> {
    check_cosine_input(x)?;
    let routes = compute_route_counts(spec)?;
    if routes.out_dims != routes.in_dims || routes.in_dims != (x.height(), x.width()) {
        return Err(Error::Precondition("cosine bound needs an output grid equal to the input grid".into()));
    }
    let d = x.pixels();
    let w_row = (0..d).map(|t| routes.row(t).iter().sum::<u64>()).max().unwrap_or(0);
    let w_col = (0..d).map(|a| (0..d).map(|t| routes.count(a, t)).sum::<u64>()).max().unwrap_or(0);
    let denom = ((w_row * w_col) as f64).sqrt();
    let xs = x.data();
    let weighted = routes.weighted_sums(xs);
    let eps_dot: f64 = xs.iter().zip(&weighted).map(|(v, s)| (v - s / denom) * v).sum();
    let energy: f64 = xs.iter().map(|v| v * v).sum();
    let z_star: Vec<f64> = routes.weighted_sums(&x.pixel_energy()).into_iter().map(f64::sqrt).collect();
    let cos = cosine_similarity(xs, &z_star).ok_or_else(|| Error::Degenerate("zero convergence field".into()))?;
    let params = BoundParams {
        layers: Analysed::new(spec)?.ops().len(),
        energy: Some(energy),
        eps_dot: Some(eps_dot),
        ..Default::default()
    };
    Ok(BoundReport::new(BoundKind::Cosine, 1.0 - eps_dot / energy, params).with_empirical(cos))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(u, v)| u * v).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `sin` of the angle between `a` and `b`, from the rejection of `â` off `b̂`;
/// 1 when either vector is zero.
pub fn sin_angle(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let c: f64 = a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>() / (na * nb);
    let rej: f64 = a.iter().zip(b).map(|(u, v)| (u / na - c * v / nb).powi(2)).sum();
    rej.sqrt().min(1.0)
}

/// Angle in degrees; 90 when either vector is zero.
pub fn angle_degrees(a: &[f64], b: &[f64]) -> f64 {
    match cosine_similarity(a, b) {
        Some(c) => sin_angle(a, b).atan2(c).to_degrees(),
        None => 90.0,
    }
}

/// Seed for trial (or network) `index` under a run seed.
pub fn derive_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Outputs of `trials` independently sampled banks, in trial order.
pub fn sample_outputs(
    spec: &NetworkSpec,
    dist: &DistributionSpec,
    x: &FeatureMaps,
    trials: usize,
    seed: u64,
) -> Result<Vec<FeatureMaps>> {
    let plan = spec.plan()?;
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let bank = sample_filterbank(dist, plan.conv_shapes(), derive_seed(seed, t))?;
            Ok(forward_plan(&plan, &bank, x, false)?.output)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    /// One report per trial, empirical `sin Θ` filled in.
    pub reports: Vec<BoundReport>,
}

impl McReport {
    pub fn bound(&self) -> f64 {
        self.reports.first().map_or(f64::NAN, |r| r.bound)
    }

    pub fn sines(&self) -> Vec<f64> {
        self.reports.iter().filter_map(|r| r.empirical).collect()
    }

    pub fn violation_fraction(&self) -> f64 {
        let n = self.reports.len();
        if n == 0 {
            return 0.0;
        }
        self.reports.iter().filter(|r| r.holds == Some(false)).count() as f64 / n as f64
    }

    pub fn median_sin(&self) -> f64 {
        median(&self.sines())
    }

    /// Empirical quantile (nearest rank).
    pub fn quantile(&self, q: f64) -> f64 {
        let mut s = self.sines();
        if s.is_empty() {
            return f64::NAN;
        }
        s.sort_by(f64::total_cmp);
        let idx = ((q.clamp(0.0, 1.0) * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
        s[idx]
    }

    /// One row per trial: `trial,kind,bound,sin_theta,holds,layers,delta,n_bar,lambda_product,vacuous`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_reports_csv(&self.reports, w)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn opt_float(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

pub fn write_reports_csv<W: Write>(reports: &[BoundReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "trial", "kind", "bound", "empirical", "holds", "layers", "delta", "n_bar", "lambda_product", "vacuous",
    ])?;
    for (t, r) in reports.iter().enumerate() {
        let p = &r.params;
        out.write_record([
            t.to_string(),
            r.kind.name().to_string(),
            format_float(r.bound),
            opt_float(r.empirical),
            r.holds.map(|h| h.to_string()).unwrap_or_default(),
            p.layers.to_string(),
            opt_float(p.delta),
            opt_float(p.n_bar),
            if p.lambdas.is_empty() { String::new() } else { format_float(p.lambdas.iter().product()) },
            r.is_vacuous().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Samples `trials` banks and measures `sin Θ` between each output and `f*`
/// against the variance bound (two-layer form when `L = 2`).
pub fn mc_verify(
    spec: &NetworkSpec,
    dist: &DistributionSpec,
    x: &FeatureMaps,
    trials: usize,
    delta: f64,
    seed: u64,
) -> Result<McReport> {
    let field = convergence_field_l2(spec, dist, x)?;
    let bound = if field.layers() == 2 {
        let n = spec.conv_shapes()?[0].0;
        variance_bound_two_layer(moments(dist).big_k1, n, delta)?
    } else {
        variance_bound_multilayer(spec, dist, x, delta)?
    };
    let outputs = sample_outputs(spec, dist, x, trials, seed)?;
    let reports = outputs
        .iter()
        .map(|f| bound.clone().with_empirical(sin_angle(f.data(), &field.f_star)))
        .collect();
    Ok(McReport { reports })
}

/// A Monte-Carlo mean with its standard error and the exact target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub exact: f64,
}

impl McEstimate {
    fn from_samples(samples: impl Iterator<Item = f64>, exact: f64) -> Self {
        let (mut n, mut mean, mut m2) = (0f64, 0f64, 0f64);
        for v in samples {
            n += 1.0;
            let d = v - mean;
            mean += d / n;
            m2 += d * (v - mean);
        }
        let var = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
        Self { mean, std_err: (var / n).sqrt(), exact }
    }

    /// Deviation from the exact value in standard errors.
    pub fn z_score(&self) -> f64 {
        if self.std_err == 0.0 {
            if self.mean == self.exact {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - self.exact).abs() / self.std_err
        }
    }
}

/// Rectified-projection moments for one pair `(y_i, y_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMoments {
    /// `E max(w·y_i, 0)` against `k₁‖y_i‖`.
    pub first: McEstimate,
    /// `E max(w·y_i, 0)²` against `k₂‖y_i‖²`.
    pub second: McEstimate,
    /// `E max(w·y_i, 0)·max(w·y_j, 0)` against `k₂·h(θ)·‖y_i‖‖y_j‖`.
    pub cross: McEstimate,
}

/// Monte-Carlo check of the rectified-projection moments of an isotropic filter.
pub fn projection_moments_mc(
    dist: &DistributionSpec,
    y_i: &[f64],
    y_j: &[f64],
    draws: usize,
    seed: u64,
) -> Result<ProjectionMoments> {
    let m = isotropic_moments(dist)?;
    if y_i.len() != y_j.len() || y_i.is_empty() {
        return shape_err("projection vectors must share a positive length");
    }
    if draws < 2 {
        return param_err("need at least two draws");
    }
    let ni = y_i.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nj = y_j.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cos = cosine_similarity(y_i, y_j).ok_or_else(|| Error::Degenerate("zero projection vector".into()))?;
    let bank = sample_filterbank(dist, &[(draws, y_i.len())], seed)?;
    let w = &bank.layers[0];
    let proj: Vec<(f64, f64)> = (0..draws)
        .map(|d| {
            let f = w.filter(d);
            let a: f64 = f.iter().zip(y_i).map(|(u, v)| u * v).sum();
            let b: f64 = f.iter().zip(y_j).map(|(u, v)| u * v).sum();
            (a.max(0.0), b.max(0.0))
        })
        .collect();
    Ok(ProjectionMoments {
        first: McEstimate::from_samples(proj.iter().map(|p| p.0), m.k1 * ni),
        second: McEstimate::from_samples(proj.iter().map(|p| p.0 * p.0), m.k2 * ni * ni),
        cross: McEstimate::from_samples(proj.iter().map(|p| p.0 * p.1), m.k2 * angular_kernel_from_cos(cos)? * ni * nj),
    })
}

/// Entrywise Monte-Carlo Gram of the first conv's normalised features.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMc {
    pub mean: Gram,
    /// Standard error of each entry.
    pub std_err: Vec<f64>,
}

/// Samples `channels` first-layer filters and estimates `C^(1)` of a `def51`
/// net whose first op is a conv.
pub fn first_layer_gram_mc(
    spec: &NetworkSpec,
    dist: &DistributionSpec,
    x: &FeatureMaps,
    channels: usize,
    seed: u64,
) -> Result<GramMc> {
    let a = Analysed::new(spec)?;
    a.check_input(x)?;
    let ops = a.ops();
    let Op::Conv { patches, .. } = ops[0] else {
        return Err(Error::WrongVariant("first op must be a conv".into()));
    };
    if channels < 2 {
        return param_err("need at least two channels");
    }
    let length = x.channels() * patches.slots_per_patch();
    let bank = sample_filterbank(dist, &[(channels, length)], seed)?;
    let pre = crate::tensor::conv2d(x, &bank.layers[0], patches)?;
    let d = pre.pixels();
    let (height, width) = patches.out_dims();
    let n = channels as f64;
    let mut sum = vec![0.0; d * d];
    let mut sum_sq = vec![0.0; d * d];
    for c in 0..channels {
        let row: Vec<f64> = pre.channel(c).iter().map(|v| v.max(0.0)).collect();
        for j in 0..d {
            for k in j..d {
                let v = row[j] * row[k];
                sum[j * d + k] += v;
                sum_sq[j * d + k] += v * v;
            }
        }
    }
    let mut mean = vec![0.0; d * d];
    let mut std_err = vec![0.0; d * d];
    for idx in 0..d * d {
        let mu = sum[idx] / n;
        let var = ((sum_sq[idx] - n * mu * mu) / (n - 1.0)).max(0.0);
        mean[idx] = mu;
        std_err[idx] = (var / n).sqrt();
    }
    mirror_upper(&mut mean, d);
    mirror_upper(&mut std_err, d);
    Ok(GramMc { mean: Gram { height, width, data: mean }, std_err })
}
