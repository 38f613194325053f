//! Training a DCN to invert a fixed random CNN: reverse-mode gradients
//! through the DCN, Adam with multistep decay, checkpoints and loss history.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{param_err, shape_err, Error, Result};
use crate::format_float;
use crate::network::{forward_plan, NetworkSpec, Plan, Step};
use crate::tensor::{self, FeatureMaps, PatchIndex, PatchedMaps};
use crate::weights::{filter_stream, read_f64, read_u32, read_u64, FilterBank, FilterLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightDecay {
    /// `weight_decay·w` is added to the gradient before the moment updates.
    #[default]
    Coupled,
    /// `lr·weight_decay·w` is subtracted after the Adam step.
    Decoupled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecay,
    pub batch_size: usize,
    /// Iterations at which the learning rate is multiplied by `decay_factor`;
    /// `None` means 50% and 75% of `max_iters`.
    pub milestones: Option<Vec<usize>>,
    pub decay_factor: f64,
    pub max_iters: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 4e-4,
            decay_mode: WeightDecay::Coupled,
            batch_size: 32,
            milestones: None,
            decay_factor: 0.5,
            max_iters: 1000,
            checkpoint_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return param_err(format!("lr0 must be positive, got {}", self.lr0));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return param_err(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) || !(self.decay_factor > 0.0) {
            return param_err("adam_eps and decay_factor must be positive, weight_decay non-negative");
        }
        if self.batch_size == 0 || self.max_iters == 0 || self.checkpoint_every == 0 {
            return param_err("batch_size, max_iters and checkpoint_every must be positive");
        }
        Ok(())
    }

    pub fn milestones(&self) -> Vec<usize> {
        self.milestones.clone().unwrap_or_else(|| vec![self.max_iters / 2, self.max_iters * 3 / 4])
    }

    /// Learning rate in effect at (0-based) iteration `iter`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        let crossed = self.milestones().iter().filter(|m| **m <= iter).count();
        self.lr0 * self.decay_factor.powi(crossed as i32)
    }
}

/// DCN filters plus Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct DcnParams {
    pub layers: Vec<FilterLayer>,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
}

impl DcnParams {
    pub fn from_layers(layers: Vec<FilterLayer>) -> Self {
        let zeros: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.values().len()]).collect();
        Self { layers, first_moment: zeros.clone(), second_moment: zeros, step: 0 }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(FilterLayer::shape).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.values().len()).sum()
    }
}

/// Gaussian init with variance `2/((1 + slope²)·fan_in)`, `fan_in` = filter length.
pub fn msra_init(shapes: &[(usize, usize)], slope: f64, seed: u64) -> Result<DcnParams> {
    let layers = shapes
        .iter()
        .enumerate()
        .map(|(i, &(count, length))| {
            if length == 0 {
                return shape_err("filter length must be positive");
            }
            let std = (2.0 / ((1.0 + slope * slope) * length as f64)).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::Parameter(e.to_string()))?;
            let mut values = Vec::with_capacity(count * length);
            for j in 0..count {
                let mut rng = filter_stream(seed, i, j);
                values.extend((0..length).map(|_| normal.sample(&mut rng)));
            }
            FilterLayer::new(count, length, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DcnParams::from_layers(layers))
}

/// `Σ (output − target)²`.
pub fn loss_l2(output: &FeatureMaps, target: &FeatureMaps) -> Result<f64> {
    same_dims(output, target)?;
    Ok(output.data().iter().zip(target.data()).map(|(o, t)| (o - t).powi(2)).sum())
}

fn loss_grad(output: &FeatureMaps, target: &FeatureMaps) -> Result<FeatureMaps> {
    same_dims(output, target)?;
    let (c, h, w) = output.dims();
    FeatureMaps::new(c, h, w, output.data().iter().zip(target.data()).map(|(o, t)| 2.0 * (o - t)).collect())
}

fn same_dims(a: &FeatureMaps, b: &FeatureMaps) -> Result<()> {
    if a.dims() != b.dims() {
        return shape_err(format!("output {:?} and target {:?} differ", a.dims(), b.dims()));
    }
    Ok(())
}

/// Rejects DCN layers without a backward rule.
pub fn check_trainable(plan: &Plan) -> Result<()> {
    for step in &plan.steps {
        if let Step::MaxPool(_) | Step::L2Pool(_) | Step::AvgPool(_) = step {
            return Err(Error::WrongVariant("DCN training does not backpropagate through pooling".into()));
        }
    }
    Ok(())
}

fn check_params(plan: &Plan, params: &DcnParams) -> Result<()> {
    if plan.conv_shapes() != params.shapes().as_slice() {
        return shape_err(format!(
            "parameter shapes {:?} do not match DCN conv shapes {:?}",
            params.shapes(),
            plan.conv_shapes()
        ));
    }
    Ok(())
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every step.
    inputs: Vec<FeatureMaps>,
    /// Patch matrix of every conv step, by conv index.
    patches: Vec<PatchedMaps>,
    pub output: FeatureMaps,
}

pub fn dcn_forward(plan: &Plan, params: &DcnParams, x: &FeatureMaps) -> Result<ForwardCache> {
    check_params(plan, params)?;
    let mut inputs = Vec::with_capacity(plan.steps.len());
    let mut patches = Vec::new();
    let mut cur = x.clone();
    for step in &plan.steps {
        let next = match step {
            Step::Conv { bank_layer, patches: p, .. } => {
                let y = tensor::extract_patches(&cur, p)?;
                let out = tensor::conv_forward(&y, &params.layers[*bank_layer])?;
                patches.push(y);
                out
            }
            Step::Relu => tensor::relu(&cur),
            Step::LeakyRelu(s) => tensor::leaky_relu(&cur, *s),
            Step::Upsample(f) => tensor::upsample(&cur, *f)?,
            Step::Crop(h, w) => tensor::crop(&cur, *h, *w)?,
            Step::ChannelMean => tensor::channel_mean(&cur),
            Step::Scale(c) => tensor::scale(&cur, *c),
            Step::MaxPool(_) | Step::L2Pool(_) | Step::AvgPool(_) => {
                return Err(Error::WrongVariant("DCN training does not backpropagate through pooling".into()))
            }
        };
        inputs.push(std::mem::replace(&mut cur, next));
    }
    Ok(ForwardCache { inputs, patches, output: cur })
}

fn col2im(dy: &[f64], rows: usize, p: &PatchIndex, channels: usize) -> Vec<f64> {
    let (h, w) = p.in_dims();
    let r = p.slots_per_patch();
    let mut dx = vec![0.0; channels * h * w];
    for (m, patch) in p.patches().enumerate() {
        let col = &dy[m * rows..(m + 1) * rows];
        for c in 0..channels {
            for (s, slot) in patch.iter().enumerate() {
                if let Some(idx) = slot {
                    dx[c * h * w + idx] += col[c * r + s];
                }
            }
        }
    }
    dx
}

/// Exact gradients of a loss with respect to the DCN filters, given the
/// gradient at the DCN output.
pub fn backward(plan: &Plan, params: &DcnParams, cache: &ForwardCache, grad_out: &FeatureMaps) -> Result<Vec<Vec<f64>>> {
    check_params(plan, params)?;
    if cache.inputs.len() != plan.steps.len() {
        return Err(Error::MissingCache(format!(
            "cache holds {} activations for {} steps",
            cache.inputs.len(),
            plan.steps.len()
        )));
    }
    if grad_out.dims() != cache.output.dims() {
        return shape_err("output gradient does not match the cached output");
    }
    let mut grads: Vec<Vec<f64>> = params.layers.iter().map(|l| vec![0.0; l.values().len()]).collect();
    let mut g = grad_out.data().to_vec();
    for (step, x) in plan.steps.iter().zip(&cache.inputs).rev() {
        let (c, h, w) = x.dims();
        g = match step {
            Step::Conv { bank_layer, patches: p, .. } => {
                let y = cache
                    .patches
                    .get(*bank_layer)
                    .ok_or_else(|| Error::MissingCache(format!("no patch matrix for conv {bank_layer}")))?;
                let layer = &params.layers[*bank_layer];
                let (count, rows, cols) = (layer.count(), y.rows(), y.cols());
                let dw = &mut grads[*bank_layer];
                let mut dy = vec![0.0; rows * cols];
                // SAFETY: extents and strides match the buffers: g is count x cols
                // row-major, y is rows x cols column-major, w is count x rows row-major.
                unsafe {
                    matrixmultiply::dgemm(
                        count, cols, rows, 1.0,
                        g.as_ptr(), cols as isize, 1,
                        y.data().as_ptr(), rows as isize, 1,
                        1.0, dw.as_mut_ptr(), rows as isize, 1,
                    );
                    matrixmultiply::dgemm(
                        cols, count, rows, 1.0,
                        g.as_ptr(), 1, cols as isize,
                        layer.values().as_ptr(), rows as isize, 1,
                        0.0, dy.as_mut_ptr(), rows as isize, 1,
                    );
                }
                col2im(&dy, rows, p, c)
            }
            Step::Relu => g.iter().zip(x.data()).map(|(d, v)| if *v >= 0.0 { *d } else { 0.0 }).collect(),
            Step::LeakyRelu(s) => g.iter().zip(x.data()).map(|(d, v)| if *v >= 0.0 { *d } else { s * d }).collect(),
            Step::Upsample(f) => {
                let ow = w * f;
                let oh = h * f;
                let mut dx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for yy in 0..h {
                        for xx in 0..w {
                            dx[(ch * h + yy) * w + xx] = g[(ch * oh + yy * f) * ow + xx * f];
                        }
                    }
                }
                dx
            }
            Step::Crop(th, tw) => {
                let mut dx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for yy in 0..*th {
                        for xx in 0..*tw {
                            dx[(ch * h + yy) * w + xx] = g[(ch * th + yy) * tw + xx];
                        }
                    }
                }
                dx
            }
            Step::ChannelMean => {
                let n = c as f64;
                (0..c).flat_map(|_| g.iter().map(move |d| d / n)).collect()
            }
            Step::Scale(s) => g.iter().map(|d| d * s).collect(),
            Step::MaxPool(_) | Step::L2Pool(_) | Step::AvgPool(_) => {
                return Err(Error::WrongVariant("DCN training does not backpropagate through pooling".into()))
            }
        };
    }
    Ok(grads)
}

/// One bias-corrected Adam update at learning rate `lr`.
pub fn adam_step(params: &mut DcnParams, grads: &[Vec<f64>], config: &TrainConfig, lr: f64) -> Result<()> {
    if grads.len() != params.layers.len()
        || grads.iter().zip(&params.layers).any(|(g, l)| g.len() != l.values().len())
    {
        return shape_err("gradient shapes do not match the parameters");
    }
    params.step += 1;
    let t = params.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    let wd = config.weight_decay;
    for (li, layer) in params.layers.iter_mut().enumerate() {
        let m = &mut params.first_moment[li];
        let v = &mut params.second_moment[li];
        for (i, w) in layer.values_mut().iter_mut().enumerate() {
            let mut g = grads[li][i];
            if config.decay_mode == WeightDecay::Coupled {
                g += wd * *w;
            }
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let update = (m[i] / c1) / ((v[i] / c2).sqrt() + config.adam_eps);
            *w -= lr * update;
            if config.decay_mode == WeightDecay::Decoupled {
                *w -= lr * wd * *w;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// Iterations completed.
    pub iter: usize,
    pub lr: f64,
    /// Mean per-image loss over the iterations since the previous record.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: DcnParams,
    pub history: Vec<LossRecord>,
}

/// Loss and summed gradients for one batch; the reduction runs in index order.
pub fn batch_gradients(
    plan: &Plan,
    params: &DcnParams,
    features: &[FeatureMaps],
    targets: &[FeatureMaps],
    batch: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let per_sample: Vec<(f64, Vec<Vec<f64>>)> = batch
        .par_iter()
        .map(|&i| {
            let cache = dcn_forward(plan, params, &features[i])?;
            let loss = loss_l2(&cache.output, &targets[i])?;
            let grad = loss_grad(&cache.output, &targets[i])?;
            Ok((loss, backward(plan, params, &cache, &grad)?))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grads: Vec<Vec<f64>> = params.layers.iter().map(|l| vec![0.0; l.values().len()]).collect();
    for (loss, g) in per_sample {
        total += loss;
        for (acc, gl) in grads.iter_mut().zip(g) {
            for (a, v) in acc.iter_mut().zip(gl) {
                *a += v;
            }
        }
    }
    Ok((total, grads))
}

/// Fixed-CNN features of every image.
pub fn encode_dataset(cnn: &NetworkSpec, bank: &FilterBank, images: &[FeatureMaps]) -> Result<Vec<FeatureMaps>> {
    let plan = cnn.plan()?;
    images.par_iter().map(|x| Ok(forward_plan(&plan, bank, x, false)?.output)).collect()
}

/// Trains `dcn` to map CNN features back to the images. `init` defaults to
/// an MSRA init for leaky slope 0.2 under `config.seed`.
pub fn train_dcn(
    cnn: &NetworkSpec,
    cnn_bank: &FilterBank,
    dcn: &NetworkSpec,
    dataset: &[FeatureMaps],
    config: &TrainConfig,
    init: Option<DcnParams>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let plan = dcn.plan()?;
    check_trainable(&plan)?;
    let out = plan.output_dims();
    for x in dataset {
        if x.dims() != (out.channels, out.height, out.width) {
            return shape_err(format!("image {:?} does not match DCN output {:?}", x.dims(), out));
        }
    }
    let features = encode_dataset(cnn, cnn_bank, dataset)?;
    let mut params = match init {
        Some(p) => p,
        None => msra_init(plan.conv_shapes(), 0.2, config.seed)?,
    };
    check_params(&plan, &params)?;

    let n = dataset.len();
    let bs = config.batch_size.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut history = Vec::new();
    let (mut interval_loss, mut interval_images) = (0.0, 0usize);
    for iter in 0..config.max_iters {
        let mut batch = Vec::with_capacity(bs);
        while batch.len() < bs {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let (loss, grads) = batch_gradients(&plan, &params, &features, dataset, &batch)?;
        let lr = config.lr_at(iter);
        adam_step(&mut params, &grads, config, lr)?;
        interval_loss += loss;
        interval_images += bs;
        if (iter + 1) % config.checkpoint_every == 0 || iter + 1 == config.max_iters {
            history.push(LossRecord { iter: iter + 1, lr, loss: interval_loss / interval_images as f64 });
            interval_loss = 0.0;
            interval_images = 0;
        }
    }
    Ok(TrainOutcome { params, history })
}

/// DCN reconstruction of one image through the fixed CNN.
pub fn reconstruct_with_dcn(
    cnn: &NetworkSpec,
    cnn_bank: &FilterBank,
    dcn: &NetworkSpec,
    params: &DcnParams,
    x: &FeatureMaps,
) -> Result<FeatureMaps> {
    let features = forward_plan(&cnn.plan()?, cnn_bank, x, false)?.output;
    Ok(dcn_forward(&dcn.plan()?, params, &features)?.output)
}

/// `iter,lr,loss`
pub fn write_loss_csv<W: Write>(history: &[LossRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iter", "lr", "loss"])?;
    for r in history {
        out.write_record([r.iter.to_string(), format_float(r.lr), format_float(r.loss)])?;
    }
    out.flush()?;
    Ok(())
}

const CKPT_MAGIC: &[u8; 8] = b"RIDCNCK\0";
const CKPT_VERSION: u32 = 1;

/// Little-endian layout: magic, version u32, step u64, layer count u32, then
/// per layer count u64, length u64, values, first moments, second moments.
pub fn save_checkpoint<W: Write>(params: &DcnParams, mut w: W) -> Result<()> {
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&params.step.to_le_bytes())?;
    w.write_all(&(params.layers.len() as u32).to_le_bytes())?;
    for (i, layer) in params.layers.iter().enumerate() {
        w.write_all(&(layer.count() as u64).to_le_bytes())?;
        w.write_all(&(layer.length() as u64).to_le_bytes())?;
        for block in [layer.values(), &params.first_moment[i], &params.second_moment[i]] {
            for v in block {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<DcnParams> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Format("checkpoint too short".into()))?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Format("not a DCN checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CKPT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let step = read_u64(&mut r)?;
    let n_layers = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    let mut first_moment = Vec::with_capacity(n_layers);
    let mut second_moment = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let count = read_u64(&mut r)? as usize;
        let length = read_u64(&mut r)? as usize;
        let len = count
            .checked_mul(length)
            .filter(|l| *l <= 1 << 32)
            .ok_or_else(|| Error::Format("implausible layer size".into()))?;
        let mut read_block = || (0..len).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>();
        let values = read_block()?;
        let m = read_block()?;
        let v = read_block()?;
        layers.push(FilterLayer::new(count, length, values).map_err(|e| Error::Format(e.to_string()))?);
        first_moment.push(m);
        second_moment.push(v);
    }
    Ok(DcnParams { layers, first_moment, second_moment, step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LayerSpec;
    use crate::weights::{sample_filterbank, DistributionSpec};
    use rand::Rng;

    fn toy_dcn() -> NetworkSpec {
        NetworkSpec::empirical(
            [2, 3, 3],
            vec![
                LayerSpec::conv(3, 1, 1, 3),
                LayerSpec::LeakyRelu { slope: 0.2 },
                LayerSpec::Upsample { factor: 2 },
                LayerSpec::Scale { factor: 1.5 },
                LayerSpec::conv(3, 1, 1, 2),
                LayerSpec::Relu,
                LayerSpec::Crop { height: Some(5), width: Some(5) },
                LayerSpec::ChannelMean,
            ],
        )
        .unwrap()
    }

    fn random_maps(c: usize, h: usize, w: usize, seed: u64) -> FeatureMaps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMaps::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradient_check() {
        let spec = toy_dcn();
        let plan = spec.plan().unwrap();
        let params = msra_init(plan.conv_shapes(), 0.2, 1).unwrap();
        let x = random_maps(2, 3, 3, 2);
        let target = random_maps(1, 5, 5, 3);
        let cache = dcn_forward(&plan, &params, &x).unwrap();
        let grad = loss_grad(&cache.output, &target).unwrap();
        let analytic = backward(&plan, &params, &cache, &grad).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for li in 0..params.layers.len() {
            for i in 0..params.layers[li].values().len() {
                let mut plus = params.clone();
                plus.layers[li].values_mut()[i] += h;
                let mut minus = params.clone();
                minus.layers[li].values_mut()[i] -= h;
                let lp = loss_l2(&dcn_forward(&plan, &plus, &x).unwrap().output, &target).unwrap();
                let lm = loss_l2(&dcn_forward(&plan, &minus, &x).unwrap().output, &target).unwrap();
                worst = worst.max(relative_error(analytic[li][i], (lp - lm) / (2.0 * h)));
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let spec = toy_dcn();
        let plan = spec.plan().unwrap();
        let params = msra_init(plan.conv_shapes(), 0.2, 4).unwrap();
        let x = random_maps(2, 3, 3, 5);
        let cache = dcn_forward(&plan, &params, &x).unwrap();
        let grad = loss_grad(&cache.output, &cache.output).unwrap();
        for g in backward(&plan, &params, &cache, &grad).unwrap() {
            assert!(g.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn upsample_backward_reads_first_slot_only() {
        let spec = NetworkSpec::empirical([1, 2, 2], vec![LayerSpec::Upsample { factor: 2 }, LayerSpec::conv(1, 1, 0, 1)]).unwrap();
        let plan = spec.plan().unwrap();
        let params = DcnParams::from_layers(vec![FilterLayer::new(1, 1, vec![1.0]).unwrap()]);
        let x = FeatureMaps::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let cache = dcn_forward(&plan, &params, &x).unwrap();
        // gradient 1 everywhere: dW = Σ upsampled values = Σ x
        let ones = FeatureMaps::from_fn(1, 4, 4, |_, _, _| 1.0).unwrap();
        let g = backward(&plan, &params, &cache, &ones).unwrap();
        assert_eq!(g[0], vec![10.0]);
    }

    #[test]
    fn backward_rejects_bad_cache_and_pooling() {
        let spec = toy_dcn();
        let plan = spec.plan().unwrap();
        let params = msra_init(plan.conv_shapes(), 0.2, 1).unwrap();
        let mut cache = dcn_forward(&plan, &params, &random_maps(2, 3, 3, 0)).unwrap();
        cache.inputs.clear();
        let g = FeatureMaps::zeros(1, 5, 5);
        assert!(matches!(backward(&plan, &params, &cache, &g), Err(Error::MissingCache(_))));
        let pooled = NetworkSpec::empirical([1, 4, 4], vec![LayerSpec::max_pool(2)]).unwrap();
        assert!(check_trainable(&pooled.plan().unwrap()).is_err());
    }

    #[test]
    fn msra_variance() {
        let shapes = [(1000, 100), (10, 9)];
        let p = msra_init(&shapes, 0.2, 7).unwrap();
        let v = p.layers[0].values();
        let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        let want = 2.0 / (1.04 * 100.0);
        assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
        let relu = msra_init(&[(2000, 50)], 0.0, 7).unwrap();
        let v = relu.layers[0].values();
        let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        assert!((var / (2.0 / 50.0) - 1.0).abs() < 0.05);
        assert_eq!(msra_init(&shapes, 0.2, 7).unwrap(), p);
    }

    #[test]
    fn loss_examples() {
        let a = random_maps(1, 4, 4, 1);
        assert_eq!(loss_l2(&a, &a).unwrap(), 0.0);
        let mut d = a.data().to_vec();
        d[5] += 1.0;
        let b = FeatureMaps::new(1, 4, 4, d).unwrap();
        assert!((loss_l2(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = random_maps(1, 4, 4, 2);
        let oracle: f64 = a.data().iter().zip(c.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        assert_eq!(loss_l2(&a, &c).unwrap(), oracle);
        assert!(loss_l2(&a, &random_maps(1, 4, 5, 0)).is_err());
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = DcnParams::from_layers(vec![FilterLayer::new(1, 3, vec![0.5, -0.5, 1.0]).unwrap()]);
        let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
        let before = p.layers[0].values().to_vec();
        adam_step(&mut p, &[vec![3.0, -0.2, 0.0]], &cfg, 0.01).unwrap();
        let after = p.layers[0].values();
        assert!((before[0] - after[0] - 0.01).abs() < 1e-9);
        assert!((after[1] - before[1] - 0.01).abs() < 1e-9);
        assert_eq!(after[2], before[2]);
        assert_eq!(p.step, 1);
    }

    #[test]
    fn adam_weight_decay_modes() {
        let base = DcnParams::from_layers(vec![FilterLayer::new(1, 1, vec![2.0]).unwrap()]);
        let coupled = TrainConfig { weight_decay: 0.1, ..Default::default() };
        let mut a = base.clone();
        adam_step(&mut a, &[vec![0.0]], &coupled, 0.01).unwrap();
        // coupled: the decay term is the whole gradient, so the first step is lr·sign
        assert!((a.layers[0].values()[0] - 1.99).abs() < 1e-9);
        let decoupled = TrainConfig { decay_mode: WeightDecay::Decoupled, ..coupled };
        let mut b = base.clone();
        adam_step(&mut b, &[vec![0.0]], &decoupled, 0.01).unwrap();
        assert!((b.layers[0].values()[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-12);
        let mut c = base.clone();
        adam_step(&mut c, &[vec![0.0]], &TrainConfig { weight_decay: 0.0, ..Default::default() }, 0.01).unwrap();
        assert_eq!(c.layers[0].values()[0], 2.0);
    }

    #[test]
    fn milestones_halve_lr() {
        let cfg = TrainConfig { max_iters: 100, lr0: 1.0, ..Default::default() };
        assert_eq!(cfg.lr_at(49), 1.0);
        assert_eq!(cfg.lr_at(50), 0.5);
        assert_eq!(cfg.lr_at(75), 0.25);
        let custom = TrainConfig { milestones: Some(vec![10]), decay_factor: 0.1, lr0: 1.0, ..Default::default() };
        assert!((custom.lr_at(10) - 0.1).abs() < 1e-15);
        assert!(TrainConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
    }

    fn tiny_setup() -> (NetworkSpec, FilterBank, NetworkSpec, Vec<FeatureMaps>) {
        let cnn = NetworkSpec::empirical([1, 6, 6], vec![LayerSpec::conv(3, 1, 1, 4), LayerSpec::Relu]).unwrap();
        let bank = sample_filterbank(&DistributionSpec::gaussian(0.3).unwrap(), &cnn.conv_shapes().unwrap(), 1).unwrap();
        let dcn = NetworkSpec::empirical([4, 6, 6], vec![LayerSpec::conv(3, 1, 1, 1)]).unwrap();
        let data: Vec<FeatureMaps> = (0..6).map(|s| random_maps(1, 6, 6, 100 + s)).collect();
        (cnn, bank, dcn, data)
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let (cnn, bank, dcn, data) = tiny_setup();
        let cfg = TrainConfig { lr0: 1e-2, batch_size: 3, max_iters: 60, checkpoint_every: 20, ..Default::default() };
        let a = train_dcn(&cnn, &bank, &dcn, &data, &cfg, None).unwrap();
        let b = train_dcn(&cnn, &bank, &dcn, &data, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 3);
        assert!(a.history[2].loss < a.history[0].loss);
        assert!(matches!(train_dcn(&cnn, &bank, &dcn, &[], &cfg, None), Err(Error::EmptyDataset)));
    }

    #[test]
    fn batch_loss_is_permutation_invariant() {
        let (cnn, bank, dcn, data) = tiny_setup();
        let plan = dcn.plan().unwrap();
        let feats = encode_dataset(&cnn, &bank, &data).unwrap();
        let params = msra_init(plan.conv_shapes(), 0.2, 3).unwrap();
        let (la, ga) = batch_gradients(&plan, &params, &feats, &data, &[0, 1, 2, 3]).unwrap();
        let (lb, gb) = batch_gradients(&plan, &params, &feats, &data, &[3, 1, 0, 2]).unwrap();
        assert!((la - lb).abs() < 1e-12 * la);
        for (x, y) in ga.iter().flatten().zip(gb.iter().flatten()) {
            assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (cnn, bank, dcn, data) = tiny_setup();
        let cfg = TrainConfig { lr0: 1e-2, batch_size: 2, max_iters: 5, checkpoint_every: 5, ..Default::default() };
        let out = train_dcn(&cnn, &bank, &dcn, &data, &cfg, None).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&out.params, &mut buf).unwrap();
        assert_eq!(load_checkpoint(buf.as_slice()).unwrap(), out.params);
        assert!(matches!(load_checkpoint(&buf[..20]), Err(Error::Format(_) | Error::Io(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(load_checkpoint(bad.as_slice()), Err(Error::Format(_))));
        let mut csv = Vec::new();
        write_loss_csv(&out.history, &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("iter,lr,loss\n5,"));
    }
}
