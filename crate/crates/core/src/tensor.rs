//! Dense feature maps and the layer primitives shared by the empirical and
//! analytic code paths.
//!
//! Layout is channel-major, row-major within a channel: value `(c, y, x)` lives
//! at `c * h * w + y * w + x`. Everything here is 64-bit and pure.

use crate::error::{shape_err, Error, Result};
use crate::weights::FilterLayer;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMaps {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return shape_err(format!(
                "feature maps need positive dims, got {channels}x{height}x{width}"
            ));
        }
        if data.len() != channels * height * width {
            return shape_err(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite value {bad} in feature maps")));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "feature maps need positive dims");
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    /// Wraps already-validated data produced inside this module.
    fn from_parts(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Pixels per channel (`d_i`).
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let d = self.pixels();
        &self.data[c * d..(c + 1) * d]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Squared l2 norm of every pixel's channel vector, `‖X_{:,p}‖²`.
    pub fn pixel_energy(&self) -> Vec<f64> {
        let d = self.pixels();
        let mut e = vec![0.0; d];
        for c in 0..self.channels {
            for (acc, v) in e.iter_mut().zip(self.channel(c)) {
                *acc += v * v;
            }
        }
        e
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Window layout for a convolution or pooling layer over an `in_h x in_w` grid.
///
/// Each patch lists `kernel²` slots in row-major window order; `None` marks a
/// zero-padding (or out-of-range) slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchIndex {
    in_h: usize,
    in_w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    slots: Vec<Option<usize>>,
}

impl PatchIndex {
    /// Convolution-style windows: `out = (in + 2p - k) / s + 1` (floor).
    pub fn new(in_h: usize, in_w: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        Self::check_params(in_h, in_w, kernel, stride)?;
        let out_h = floor_out(in_h, kernel, stride, padding)?;
        let out_w = floor_out(in_w, kernel, stride, padding)?;
        Ok(Self::build(in_h, in_w, kernel, stride, padding, out_h, out_w))
    }

    /// Pooling-style windows with ceil rounding; the last window always starts
    /// inside the (padded) input.
    pub fn pooling(in_h: usize, in_w: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        Self::check_params(in_h, in_w, kernel, stride)?;
        let out_h = ceil_out(in_h, kernel, stride, padding)?;
        let out_w = ceil_out(in_w, kernel, stride, padding)?;
        Ok(Self::build(in_h, in_w, kernel, stride, padding, out_h, out_w))
    }

    fn check_params(in_h: usize, in_w: usize, kernel: usize, stride: usize) -> Result<()> {
        if in_h == 0 || in_w == 0 {
            return shape_err("patch index over an empty grid");
        }
        if kernel == 0 || stride == 0 {
            return Err(Error::Parameter(format!(
                "kernel and stride must be positive (kernel={kernel}, stride={stride})"
            )));
        }
        Ok(())
    }

    fn build(
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        out_h: usize,
        out_w: usize,
    ) -> Self {
        let mut slots = Vec::with_capacity(out_h * out_w * kernel * kernel);
        for oy in 0..out_h {
            for ox in 0..out_w {
                for dy in 0..kernel {
                    for dx in 0..kernel {
                        let iy = (oy * stride + dy) as isize - padding as isize;
                        let ix = (ox * stride + dx) as isize - padding as isize;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < in_h && (ix as usize) < in_w;
                        slots.push(inside.then(|| iy as usize * in_w + ix as usize));
                    }
                }
            }
        }
        Self { in_h, in_w, kernel, stride, padding, out_h, out_w, slots }
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn in_dims(&self) -> (usize, usize) {
        (self.in_h, self.in_w)
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    /// Number of patches, `d̃`.
    pub fn patch_count(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Slots per patch (`kernel²`).
    pub fn slots_per_patch(&self) -> usize {
        self.kernel * self.kernel
    }

    pub fn patch(&self, m: usize) -> &[Option<usize>] {
        let r = self.slots_per_patch();
        &self.slots[m * r..(m + 1) * r]
    }

    pub fn patches(&self) -> impl Iterator<Item = &[Option<usize>]> {
        self.slots.chunks(self.slots_per_patch())
    }

    /// True when the patches are pairwise disjoint and cover every input pixel
    /// with no padding slots.
    pub fn is_partition(&self) -> bool {
        self.stride == self.kernel
            && self.padding == 0
            && self.in_h % self.kernel == 0
            && self.in_w % self.kernel == 0
    }
}

fn floor_out(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = len + 2 * padding;
    if padded < kernel {
        return shape_err(format!("window {kernel} larger than padded input {padded}"));
    }
    Ok((padded - kernel) / stride + 1)
}

fn ceil_out(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = len + 2 * padding;
    if padded < kernel {
        return shape_err(format!("window {kernel} larger than padded input {padded}"));
    }
    let mut out = (padded - kernel).div_ceil(stride) + 1;
    if (out - 1) * stride >= len + padding {
        out -= 1;
    }
    Ok(out)
}

/// The im2col matrix `Y`: column `m` is the flattened receptive field of output
/// pixel `m`, channel-major across channels and row-major within the window.
/// Stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchedMaps {
    rows: usize,
    cols: usize,
    out_h: usize,
    out_w: usize,
    data: Vec<f64>,
}

impl PatchedMaps {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    pub fn column(&self, m: usize) -> &[f64] {
        &self.data[m * self.rows..(m + 1) * self.rows]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

fn check_grid(x: &FeatureMaps, p: &PatchIndex) -> Result<()> {
    if (x.height, x.width) != p.in_dims() {
        return shape_err(format!(
            "patch index expects {:?} input, got {}x{}",
            p.in_dims(),
            x.height,
            x.width
        ));
    }
    Ok(())
}

pub fn extract_patches(x: &FeatureMaps, p: &PatchIndex) -> Result<PatchedMaps> {
    check_grid(x, p)?;
    let r = p.slots_per_patch();
    let rows = x.channels * r;
    let cols = p.patch_count();
    let mut data = vec![0.0; rows * cols];
    for (m, patch) in p.patches().enumerate() {
        let col = &mut data[m * rows..(m + 1) * rows];
        for c in 0..x.channels {
            let chan = x.channel(c);
            for (s, slot) in patch.iter().enumerate() {
                if let Some(idx) = slot {
                    col[c * r + s] = chan[*idx];
                }
            }
        }
    }
    let (out_h, out_w) = p.out_dims();
    Ok(PatchedMaps { rows, cols, out_h, out_w, data })
}

/// Output channel `j`, pixel `m` is `w^(j) · Y_{:,m}`.
pub fn conv_forward(y: &PatchedMaps, filters: &FilterLayer) -> Result<FeatureMaps> {
    if filters.length() != y.rows {
        return shape_err(format!(
            "filter length {} does not match patch length {}",
            filters.length(),
            y.rows
        ));
    }
    let count = filters.count();
    let mut out = vec![0.0; count * y.cols];
    // SAFETY: slice lengths match the (m, k, n) extents and strides below.
    unsafe {
        matrixmultiply::dgemm(
            count,
            y.rows,
            y.cols,
            1.0,
            filters.values().as_ptr(),
            y.rows as isize,
            1,
            y.data.as_ptr(),
            1,
            y.rows as isize,
            0.0,
            out.as_mut_ptr(),
            y.cols as isize,
            1,
        );
    }
    Ok(FeatureMaps::from_parts(count, y.out_h, y.out_w, out))
}

pub fn conv2d(x: &FeatureMaps, filters: &FilterLayer, p: &PatchIndex) -> Result<FeatureMaps> {
    conv_forward(&extract_patches(x, p)?, filters)
}

pub fn relu(x: &FeatureMaps) -> FeatureMaps {
    leaky_relu(x, 0.0)
}

pub fn leaky_relu(x: &FeatureMaps, slope: f64) -> FeatureMaps {
    debug_assert!((0.0..1.0).contains(&slope));
    let data = x.data.iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect();
    FeatureMaps::from_parts(x.channels, x.height, x.width, data)
}

fn pool_with(
    x: &FeatureMaps,
    p: &PatchIndex,
    reduce: impl Fn(&mut dyn Iterator<Item = f64>) -> f64,
) -> Result<FeatureMaps> {
    check_grid(x, p)?;
    let (out_h, out_w) = p.out_dims();
    let mut data = Vec::with_capacity(x.channels * p.patch_count());
    for c in 0..x.channels {
        let chan = x.channel(c);
        for patch in p.patches() {
            let mut vals = patch.iter().flatten().map(|&i| chan[i]);
            data.push(reduce(&mut vals));
        }
    }
    Ok(FeatureMaps::from_parts(x.channels, out_h, out_w, data))
}

/// Per-channel window maximum; padding slots are ignored.
pub fn max_pool(x: &FeatureMaps, p: &PatchIndex) -> Result<FeatureMaps> {
    pool_with(x, p, |vals| vals.fold(f64::NEG_INFINITY, f64::max)).map(|mut out| {
        // A window made only of padding cannot occur for valid pooling layouts,
        // but keep the output finite regardless.
        for v in out.data_mut() {
            if !v.is_finite() {
                *v = 0.0;
            }
        }
        out
    })
}

pub fn l2_pool(x: &FeatureMaps, p: &PatchIndex) -> Result<FeatureMaps> {
    pool_with(x, p, |vals| vals.map(|v| v * v).sum::<f64>().sqrt())
}

/// Per-channel window mean; divides by the full window size, padding included.
pub fn avg_pool(x: &FeatureMaps, p: &PatchIndex) -> Result<FeatureMaps> {
    let denom = p.slots_per_patch() as f64;
    pool_with(x, p, |vals| vals.sum::<f64>() / denom)
}

/// Each pixel lands in the top-left slot of a `factor x factor` block of zeros.
pub fn upsample(x: &FeatureMaps, factor: usize) -> Result<FeatureMaps> {
    if factor == 0 {
        return Err(Error::Parameter("upsample factor must be at least 1".into()));
    }
    let (h, w) = (x.height * factor, x.width * factor);
    let mut data = vec![0.0; x.channels * h * w];
    for c in 0..x.channels {
        for y in 0..x.height {
            for xx in 0..x.width {
                data[(c * h + y * factor) * w + xx * factor] = x.get(c, y, xx);
            }
        }
    }
    Ok(FeatureMaps::from_parts(x.channels, h, w, data))
}

/// Top-left aligned crop.
pub fn crop(x: &FeatureMaps, target_h: usize, target_w: usize) -> Result<FeatureMaps> {
    if target_h == 0 || target_w == 0 || target_h > x.height || target_w > x.width {
        return shape_err(format!(
            "cannot crop {}x{} to {target_h}x{target_w}",
            x.height, x.width
        ));
    }
    let mut data = Vec::with_capacity(x.channels * target_h * target_w);
    for c in 0..x.channels {
        for y in 0..target_h {
            let start = (c * x.height + y) * x.width;
            data.extend_from_slice(&x.data[start..start + target_w]);
        }
    }
    Ok(FeatureMaps::from_parts(x.channels, target_h, target_w, data))
}

pub fn channel_mean(x: &FeatureMaps) -> FeatureMaps {
    let d = x.pixels();
    let mut data = vec![0.0; d];
    for c in 0..x.channels {
        for (acc, v) in data.iter_mut().zip(x.channel(c)) {
            *acc += v;
        }
    }
    let n = x.channels as f64;
    for v in &mut data {
        *v /= n;
    }
    FeatureMaps::from_parts(1, x.height, x.width, data)
}

pub fn scale(x: &FeatureMaps, c: f64) -> FeatureMaps {
    let data = x.data.iter().map(|v| v * c).collect();
    FeatureMaps::from_parts(x.channels, x.height, x.width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::FilterLayer;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn maps(c: usize, h: usize, w: usize, v: &[f64]) -> FeatureMaps {
        FeatureMaps::new(c, h, w, v.to_vec()).unwrap()
    }

    fn random_maps(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMaps {
        FeatureMaps::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    /// Direct nested-loop convolution, independent of the patch machinery.
    fn naive_conv(
        x: &FeatureMaps,
        w: &[f64],
        count: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let (c_in, h, wd) = x.dims();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; count * oh * ow];
        for j in 0..count {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..c_in {
                        for dy in 0..k {
                            for dx in 0..k {
                                let iy = (oy * stride + dy) as isize - pad as isize;
                                let ix = (ox * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let wv = w[j * c_in * k * k + c * k * k + dy * k + dx];
                                acc += wv * x.get(c, iy as usize, ix as usize);
                            }
                        }
                    }
                    out[(j * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn new_rejects_bad_shapes_and_nan() {
        assert!(FeatureMaps::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(FeatureMaps::new(0, 2, 2, vec![]).is_err());
        assert!(FeatureMaps::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(FeatureMaps::new(1, 1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn single_window_patch_is_row_major() {
        let x = maps(1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = PatchIndex::new(2, 2, 2, 2, 0).unwrap();
        let y = extract_patches(&x, &p).unwrap();
        assert_eq!(y.cols(), 1);
        assert_eq!(y.column(0), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn padded_patches_hold_every_pixel_plus_five_zeros() {
        let x = maps(1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = PatchIndex::new(2, 2, 3, 1, 1).unwrap();
        let y = extract_patches(&x, &p).unwrap();
        assert_eq!(y.cols(), 4);
        // Hand enumeration: window at output (oy, ox) starts at input (oy-1, ox-1).
        let expected = [
            [0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0],
            [0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0, 0.0],
            [0.0, 1.0, 2.0, 0.0, 3.0, 4.0, 0.0, 0.0, 0.0],
            [1.0, 2.0, 0.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0],
        ];
        for (m, col) in expected.iter().enumerate() {
            assert_eq!(y.column(m), col);
            assert_eq!(col.iter().filter(|v| **v == 0.0).count(), 5);
        }
    }

    #[test]
    fn two_channel_patches_stack_channel_major() {
        let x = maps(2, 1, 1, &[5.0, 7.0]);
        let p = PatchIndex::new(1, 1, 1, 1, 0).unwrap();
        let y = extract_patches(&x, &p).unwrap();
        assert_eq!(y.rows(), 2);
        assert_eq!(y.column(0), &[5.0, 7.0]);
    }

    #[test]
    fn patch_index_rejects_mismatched_input() {
        let x = maps(1, 3, 3, &[0.0; 9]);
        let p = PatchIndex::new(2, 2, 1, 1, 0).unwrap();
        assert!(matches!(extract_patches(&x, &p), Err(Error::Shape(_))));
        assert!(PatchIndex::new(2, 2, 5, 1, 0).is_err());
        assert!(PatchIndex::new(2, 2, 0, 1, 0).is_err());
    }

    #[test]
    fn pooling_layout_uses_ceil_rounding() {
        let p = PatchIndex::pooling(227, 227, 2, 2, 0).unwrap();
        assert_eq!(p.out_dims(), (114, 114));
        let p = PatchIndex::pooling(57, 57, 2, 2, 0).unwrap();
        assert_eq!(p.out_dims(), (29, 29));
        // last window holds one in-range pixel and three padding slots
        let last = p.patch(p.patch_count() - 1);
        assert_eq!(last.iter().flatten().count(), 1);
    }

    #[test]
    fn partition_detection() {
        assert!(PatchIndex::new(8, 8, 2, 2, 0).unwrap().is_partition());
        assert!(!PatchIndex::new(8, 8, 3, 1, 1).unwrap().is_partition());
        assert!(!PatchIndex::pooling(7, 7, 2, 2, 0).unwrap().is_partition());
    }

    #[test]
    fn one_by_one_filter_scales_pixel() {
        let x = maps(1, 1, 1, &[3.0]);
        let f = FilterLayer::new(1, 1, vec![2.0]).unwrap();
        let p = PatchIndex::new(1, 1, 1, 1, 0).unwrap();
        assert_eq!(conv2d(&x, &f, &p).unwrap().data(), &[6.0]);
    }

    #[test]
    fn all_ones_kernel_counts_neighbours() {
        let x = maps(1, 3, 3, &[1.0; 9]);
        let f = FilterLayer::new(1, 9, vec![1.0; 9]).unwrap();
        let p = PatchIndex::new(3, 3, 3, 1, 1).unwrap();
        let out = conv2d(&x, &f, &p).unwrap();
        assert_eq!(out.get(0, 1, 1), 9.0);
        for (y, xx) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(out.get(0, y, xx), 4.0);
        }
        assert_eq!(out.get(0, 0, 1), 6.0);
    }

    #[test]
    fn conv_rejects_filter_length_mismatch() {
        let x = maps(1, 3, 3, &[1.0; 9]);
        let f = FilterLayer::new(1, 4, vec![1.0; 4]).unwrap();
        let p = PatchIndex::new(3, 3, 3, 1, 1).unwrap();
        assert!(matches!(conv2d(&x, &f, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(c_in, count, k, stride, pad) in
            &[(1, 3, 3, 1, 1), (2, 4, 3, 2, 0), (3, 2, 5, 1, 2), (2, 5, 2, 2, 0)]
        {
            let x = random_maps(&mut rng, c_in, 5, 5);
            let len = c_in * k * k;
            let w: Vec<f64> = (0..count * len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = FilterLayer::new(count, len, w.clone()).unwrap();
            let p = PatchIndex::new(5, 5, k, stride, pad).unwrap();
            let got = conv2d(&x, &f, &p).unwrap();
            let want = naive_conv(&x, &w, count, k, stride, pad);
            assert_eq!(got.data().len(), want.len());
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn activations() {
        let x = maps(1, 1, 3, &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(leaky_relu(&x, 0.2).data(), &[-0.2, 0.0, 2.0]);
        assert_eq!(leaky_relu(&x, 0.0), relu(&x));
    }

    #[test]
    fn pools_on_small_windows() {
        let x = maps(1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = PatchIndex::pooling(2, 2, 2, 2, 0).unwrap();
        assert_eq!(max_pool(&x, &p).unwrap().data(), &[4.0]);
        assert_eq!(avg_pool(&x, &p).unwrap().data(), &[2.5]);
        let c = maps(1, 2, 2, &[7.0; 4]);
        assert_eq!(max_pool(&c, &p).unwrap().data(), &[7.0]);
        assert_eq!(avg_pool(&c, &p).unwrap().data(), &[7.0]);

        // windows [3,4], [0,0] and [1,2,2]; the missing slots are zeros
        assert_eq!(l2_pool(&maps(1, 2, 2, &[3.0, 4.0, 0.0, 0.0]), &p).unwrap().data(), &[5.0]);
        assert_eq!(l2_pool(&maps(1, 2, 2, &[0.0; 4]), &p).unwrap().data(), &[0.0]);
        assert_eq!(l2_pool(&maps(1, 2, 2, &[1.0, 2.0, 2.0, 0.0]), &p).unwrap().data(), &[3.0]);
    }

    #[test]
    fn pools_match_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_maps(&mut rng, 2, 8, 8);
        let p = PatchIndex::pooling(8, 8, 2, 2, 0).unwrap();
        let mx = max_pool(&x, &p).unwrap();
        let av = avg_pool(&x, &p).unwrap();
        for c in 0..2 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let vals = [
                        x.get(c, 2 * oy, 2 * ox),
                        x.get(c, 2 * oy, 2 * ox + 1),
                        x.get(c, 2 * oy + 1, 2 * ox),
                        x.get(c, 2 * oy + 1, 2 * ox + 1),
                    ];
                    let m = vals.iter().cloned().fold(f64::MIN, f64::max);
                    let a = vals.iter().sum::<f64>() / 4.0;
                    assert_eq!(mx.get(c, oy, ox), m);
                    assert!((av.get(c, oy, ox) - a).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn avg_pool_divides_by_full_window_at_borders() {
        let x = maps(1, 3, 3, &[1.0; 9]);
        let p = PatchIndex::pooling(3, 3, 2, 2, 0).unwrap();
        let out = avg_pool(&x, &p).unwrap();
        assert_eq!(out.dims(), (1, 2, 2));
        assert_eq!(out.get(0, 0, 0), 1.0);
        assert_eq!(out.get(0, 1, 1), 0.25);
    }

    #[test]
    fn upsample_places_value_top_left() {
        let x = maps(1, 1, 1, &[5.0]);
        assert_eq!(upsample(&x, 2).unwrap().data(), &[5.0, 0.0, 0.0, 0.0]);
        let y = maps(1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(upsample(&y, 1).unwrap(), y);
        assert!(upsample(&y, 0).is_err());
    }

    #[test]
    fn crop_is_top_left() {
        let x = FeatureMaps::from_fn(1, 5, 5, |_, y, x| (y * 5 + x) as f64).unwrap();
        let c = crop(&x, 4, 4).unwrap();
        assert_eq!(c.dims(), (1, 4, 4));
        assert_eq!(c.get(0, 3, 3), 18.0);
        assert_eq!(c.get(0, 0, 0), 0.0);
        let same = crop(&c, 4, 4).unwrap();
        assert_eq!(same, c);
        assert!(matches!(crop(&c, 5, 4), Err(Error::Shape(_))));
    }

    #[test]
    fn channel_mean_and_scale() {
        let x = maps(2, 1, 1, &[2.0, 4.0]);
        assert_eq!(channel_mean(&x).data(), &[3.0]);
        let one = maps(1, 1, 2, &[1.5, -2.0]);
        assert_eq!(channel_mean(&one), one);
        assert_eq!(scale(&one, 1.0), one);
        assert_eq!(scale(&one, 0.0).data(), &[0.0, -0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = random_maps(&mut rng, 5, 3, 4);
        let mean = channel_mean(&r);
        for p in 0..12 {
            let direct: f64 = (0..5).map(|c| r.channel(c)[p]).sum::<f64>() / 5.0;
            assert!((mean.data()[p] - direct).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn upsample_preserves_norm(vals in prop::collection::vec(-10.0f64..10.0, 12), f in 1usize..4) {
            let x = FeatureMaps::new(3, 2, 2, vals).unwrap();
            prop_assert_eq!(upsample(&x, f).unwrap().norm_sq(), x.norm_sq());
        }

        #[test]
        fn l2_pool_preserves_energy_on_partitions(vals in prop::collection::vec(-5.0f64..5.0, 2 * 36)) {
            let x = FeatureMaps::new(2, 6, 6, vals).unwrap();
            let p = PatchIndex::pooling(6, 6, 3, 3, 0).unwrap();
            let pooled = l2_pool(&x, &p).unwrap();
            for c in 0..2 {
                let a: f64 = x.channel(c).iter().map(|v| v * v).sum();
                let b: f64 = pooled.channel(c).iter().map(|v| v * v).sum();
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }
        }

        #[test]
        fn scale_scales_norm(vals in prop::collection::vec(-5.0f64..5.0, 8), c in -3.0f64..3.0) {
            let x = FeatureMaps::new(2, 2, 2, vals).unwrap();
            prop_assert!((scale(&x, c).norm() - c.abs() * x.norm()).abs() < 1e-12);
        }

        #[test]
        fn primitives_are_bitwise_deterministic(vals in prop::collection::vec(-5.0f64..5.0, 16)) {
            let x = FeatureMaps::new(1, 4, 4, vals).unwrap();
            let p = PatchIndex::new(4, 4, 3, 1, 1).unwrap();
            let f = FilterLayer::new(2, 9, (0..18).map(|i| i as f64 * 0.1 - 0.9).collect()).unwrap();
            prop_assert_eq!(conv2d(&x, &f, &p).unwrap(), conv2d(&x, &f, &p).unwrap());
            let pp = PatchIndex::pooling(4, 4, 2, 2, 0).unwrap();
            prop_assert_eq!(l2_pool(&x, &pp).unwrap(), l2_pool(&x, &pp).unwrap());
        }
    }
}
