//! Straight-line forward passes written with plain loops, checked against the
//! im2col/GEMM network executor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use randinv::network::{build_preset, forward, Activation, LayerSpec, PresetOptions};
use randinv::weights::{sample_filterbank, FilterLayer};
use randinv::{DistributionSpec, FeatureMaps, NetworkSpec};

type Maps = Vec<Vec<Vec<f64>>>;

fn to_nested(x: &FeatureMaps) -> Maps {
    (0..x.channels())
        .map(|c| (0..x.height()).map(|y| (0..x.width()).map(|i| x.get(c, y, i)).collect()).collect())
        .collect()
}

fn conv(x: &Maps, f: &FilterLayer, k: usize, pad: usize) -> Maps {
    let (c_in, h, w) = (x.len(), x[0].len(), x[0][0].len());
    let (oh, ow) = (h + 2 * pad - k + 1, w + 2 * pad - k + 1);
    (0..f.count())
        .map(|j| {
            let wj = f.filter(j);
            (0..oh)
                .map(|oy| {
                    (0..ow)
                        .map(|ox| {
                            let mut acc = 0.0;
                            for c in 0..c_in {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let (iy, ix) = ((oy + ky) as isize - pad as isize, (ox + kx) as isize - pad as isize);
                                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                            acc += wj[(c * k + ky) * k + kx] * x[c][iy as usize][ix as usize];
                                        }
                                    }
                                }
                            }
                            acc
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn relu(x: Maps) -> Maps {
    x.into_iter().map(|c| c.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect()).collect()
}

fn max_pool2(x: &Maps) -> Maps {
    x.iter()
        .map(|c| {
            let (h, w) = (c.len(), c[0].len());
            (0..h.div_ceil(2))
                .map(|y| {
                    (0..w.div_ceil(2))
                        .map(|i| {
                            let mut m = f64::NEG_INFINITY;
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    if 2 * y + dy < h && 2 * i + dx < w {
                                        m = m.max(c[2 * y + dy][2 * i + dx]);
                                    }
                                }
                            }
                            m
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn upsample2(x: &Maps) -> Maps {
    x.iter()
        .map(|c| {
            let (h, w) = (c.len(), c[0].len());
            (0..2 * h)
                .map(|y| (0..2 * w).map(|i| if y % 2 == 0 && i % 2 == 0 { c[y / 2][i / 2] } else { 0.0 }).collect())
                .collect()
        })
        .collect()
}

fn crop(x: Maps, h: usize, w: usize) -> Maps {
    x.into_iter().map(|c| c.into_iter().take(h).map(|r| r.into_iter().take(w).collect()).collect()).collect()
}

fn mean_channels(x: &Maps) -> Maps {
    let n = x.len() as f64;
    vec![(0..x[0].len()).map(|y| (0..x[0][0].len()).map(|i| x.iter().map(|c| c[y][i]).sum::<f64>() / n).collect()).collect()]
}

fn assert_close(a: &Maps, b: &FeatureMaps) {
    assert_eq!((a.len(), a[0].len(), a[0][0].len()), b.dims());
    let scale = b.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for (c, ch) in a.iter().enumerate() {
        for (y, row) in ch.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                assert!((v - b.get(c, y, i)).abs() <= 1e-12 * scale, "mismatch at ({c},{y},{i}): {v} vs {}", b.get(c, y, i));
            }
        }
    }
}

fn random_input(c: usize, h: usize, w: usize, seed: u64) -> FeatureMaps {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMaps::from_fn(c, h, w, |_, _, _| rng.random_range(0.0..1.0)).unwrap()
}

#[test]
fn rrvgg_conv1_deconv1_matches_loop_oracle() {
    for (h, w) in [(12, 12), (11, 9)] {
        let x = random_input(1, h, w, 3);
        let opts = PresetOptions { channels: Some(5), ..Default::default() };
        let spec = build_preset("rrvgg_conv1_deconv1", [1, h, w], &opts).unwrap();
        let bank = sample_filterbank(&DistributionSpec::gaussian(0.1).unwrap(), &spec.conv_shapes().unwrap(), 8).unwrap();
        let l = &bank.layers;
        let mut a = relu(conv(&to_nested(&x), &l[0], 3, 1));
        a = relu(conv(&a, &l[1], 3, 1));
        a = upsample2(&max_pool2(&a));
        a = relu(conv(&a, &l[2], 3, 1));
        a = relu(conv(&a, &l[3], 3, 1));
        let want = crop(a, h, w);
        assert_close(&want, &forward(&spec, &bank, &x).unwrap().output);
    }
}

#[test]
fn rrvgg_variant_matches_loop_oracle() {
    let x = random_input(3, 10, 10, 4);
    let opts = PresetOptions { channels: Some(6), kernel: Some(5), activation: Some(Activation::Relu) };
    let spec = build_preset("rrvgg_conv1_deconv1_variant", [3, 10, 10], &opts).unwrap();
    let bank = sample_filterbank(&DistributionSpec::uniform(0.3).unwrap(), &spec.conv_shapes().unwrap(), 2).unwrap();
    let l = &bank.layers;
    let mut a = relu(conv(&to_nested(&x), &l[0], 5, 2));
    a = relu(conv(&a, &l[1], 5, 2));
    a = upsample2(&max_pool2(&a));
    a = relu(conv(&a, &l[2], 5, 2));
    let want = crop(mean_channels(&a), 10, 10);
    assert_close(&want, &forward(&spec, &bank, &x).unwrap().output);
}

#[test]
fn rrvgg_conv1_1_matches_loop_oracle() {
    let x = random_input(1, 9, 9, 5);
    let opts = PresetOptions { kernel: Some(7), ..Default::default() };
    let spec = build_preset("rrvgg_conv1_1", [1, 9, 9], &opts).unwrap();
    let bank = sample_filterbank(&DistributionSpec::gaussian(0.1).unwrap(), &spec.conv_shapes().unwrap(), 1).unwrap();
    let a = relu(conv(&to_nested(&x), &bank.layers[0], 7, 3));
    let want = relu(conv(&a, &bank.layers[1], 7, 3));
    assert_close(&want, &forward(&spec, &bank, &x).unwrap().output);
}

#[test]
fn json_spec_runs_like_the_builder() {
    let text = r#"{"mode":"empirical","input":[1,8,8],"layers":[
        {"kind":"conv","kernel":3,"pad":1,"out":4},{"kind":"leaky_relu"},
        {"kind":"max_pool","kernel":2},{"kind":"upsample","factor":2},
        {"kind":"conv","kernel":3,"pad":1,"out":1},{"kind":"crop"}]}"#;
    let spec = NetworkSpec::from_json(text).unwrap();
    let built = NetworkSpec::empirical(
        [1, 8, 8],
        vec![
            LayerSpec::conv(3, 1, 1, 4),
            LayerSpec::LeakyRelu { slope: 0.2 },
            LayerSpec::max_pool(2),
            LayerSpec::Upsample { factor: 2 },
            LayerSpec::conv(3, 1, 1, 1),
            LayerSpec::crop_to_input(),
        ],
    )
    .unwrap();
    assert_eq!(spec, built);
    let x = random_input(1, 8, 8, 9);
    let bank = sample_filterbank(&DistributionSpec::gaussian(0.1).unwrap(), &spec.conv_shapes().unwrap(), 0).unwrap();
    assert_eq!(forward(&spec, &bank, &x).unwrap().output, forward(&built, &bank, &x).unwrap().output);
}
