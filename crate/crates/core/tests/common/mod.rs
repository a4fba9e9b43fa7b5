//! Fixtures and independent reference implementations shared by the
//! integration tests. Nothing here calls into the library's kernels.

#![allow(dead_code)]

use std::path::Path;

use cenet::augment::Raster;
use cenet::ops::ConvSpec;
use cenet::params::ParamStore;
use cenet::safm::SafmMode;
use cenet::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FIXTURE_COLORS: [[u8; 3]; 4] = [[220, 40, 40], [40, 200, 60], [50, 60, 220], [230, 210, 50]];

/// Solid-colour classes with ±`jitter` uniform per-channel noise.
pub fn solid_color_dataset(root: &Path, per_class: usize, size: usize, jitter: i32, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (ci, color) in FIXTURE_COLORS.iter().enumerate() {
        let dir = root.join(format!("class_{ci}"));
        std::fs::create_dir_all(&dir).unwrap();
        for k in 0..per_class {
            let px = (0..size * size)
                .map(|_| {
                    let mut p = *color;
                    for c in &mut p {
                        *c = (*c as i32 + rng.gen_range(-jitter..=jitter)).clamp(0, 255) as u8;
                    }
                    p
                })
                .collect();
            Raster::new(size, size, px).unwrap().write(&dir.join(format!("img_{k:03}.ppm"))).unwrap();
        }
    }
}

/// `classes` directories with `per_class` small gradient images each.
pub fn many_class_dataset(root: &Path, classes: usize, per_class: usize, size: usize) {
    for c in 0..classes {
        let dir = root.join(format!("c{c:02}"));
        std::fs::create_dir_all(&dir).unwrap();
        for k in 0..per_class {
            let px = (0..size * size)
                .map(|i| [(i * 3 + c * 11) as u8, (k * 40 + i) as u8, (c * 6) as u8])
                .collect();
            Raster::new(size, size, px).unwrap().write(&dir.join(format!("s{k}.ppm"))).unwrap();
        }
    }
}

pub fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

// ---------- reference kernels ----------

/// Random conv case with N, C ≤ 4, H, W ≤ 8 and groups ∈ {1, C}.
pub fn random_conv_case(rng: &mut ChaCha8Rng) -> (Tensor, Tensor, Tensor, ConvSpec) {
    let n = rng.gen_range(1..=4);
    let c = rng.gen_range(1..=4);
    let h = rng.gen_range(1..=8);
    let w = rng.gen_range(1..=8);
    let depthwise = rng.gen_bool(0.5);
    let k = *[1usize, 3].choose(rng).unwrap();
    let k = if k > h.min(w) + 2 * (k / 2) { 1 } else { k };
    let stride = rng.gen_range(1..=2);
    let spec = if depthwise {
        ConvSpec::depthwise(c, k, stride)
    } else {
        ConvSpec::standard(c, rng.gen_range(1..=4), k, stride)
    };
    let x = Tensor::uniform([n, c, h, w], -1.0, 1.0, rng);
    let wt = Tensor::uniform(spec.weight_shape(), -1.0, 1.0, rng);
    let b = Tensor::uniform([1, spec.out_channels, 1, 1], -1.0, 1.0, rng);
    (x, wt, b, spec)
}


/// Direct seven-loop convolution with zero padding.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Tensor {
    let [n, c, h, wd] = x.shape();
    let (kh, kw, s, p, g) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding, spec.groups);
    let oc = spec.out_channels;
    let ho = (h + 2 * p - kh) / s + 1;
    let wo = (wd + 2 * p - kw) / s + 1;
    let cin_g = c / g;
    let cout_g = oc / g;
    let mut out = Tensor::zeros([n, oc, ho, wo]);
    for ni in 0..n {
        for o in 0..oc {
            let grp = o / cout_g;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for ci in 0..cin_g {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += w.at(o, ci, ky, kx) * x.at(ni, grp * cin_g + ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.set(ni, o, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// `1×1` convolution on an `N×C×1×1` vector: `W v + b`.
pub fn dense(v: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let [o, i, _, _] = w.shape();
    (0..o)
        .map(|r| b.data()[r] + (0..i).map(|c| w.data()[r * i + c] * v[c]).sum::<f64>())
        .collect()
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Maclaurin series of erf, adequate for |x| ≤ 4.
pub fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

pub fn gelu_ref(x: f64) -> f64 {
    0.5 * x * (1.0 + erf_series(x / std::f64::consts::SQRT_2))
}

/// Ceil-mode `k×k` max pool with stride `k`.
pub fn max_pool_ref(x: &Tensor, k: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h.div_ceil(k), w.div_ceil(k));
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut m = f64::NEG_INFINITY;
                    for y in oy * k..((oy + 1) * k).min(h) {
                        for xx in ox * k..((ox + 1) * k).min(w) {
                            m = m.max(x.at(ni, ci, y, xx));
                        }
                    }
                    out.set(ni, ci, oy, ox, m);
                }
            }
        }
    }
    out
}

/// Nearest-neighbour resize: output `(y, x)` reads `(y·h/H, x·w/W)`.
pub fn upsample_ref(x: &Tensor, th: usize, tw: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, th, tw]);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..th {
                for xx in 0..tw {
                    out.set(ni, ci, y, xx, x.at(ni, ci, y * h / th, xx * w / tw));
                }
            }
        }
    }
    out
}

pub fn pooled(f: &Tensor, n: usize) -> (Vec<f64>, Vec<f64>) {
    let [_, c, h, w] = f.shape();
    let mut avg = vec![0.0; c];
    let mut max = vec![f64::NEG_INFINITY; c];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = f.at(n, ci, y, x);
                avg[ci] += v;
                max[ci] = max[ci].max(v);
            }
        }
        avg[ci] /= (h * w) as f64;
    }
    (avg, max)
}

pub fn mlp(v: &[f64], store: &ParamStore, prefix: &str, suffix: &str) -> Vec<f64> {
    let p = |layer: &str, part: &str| store.by_name(&format!("{prefix}.{layer}{suffix}.{part}")).unwrap();
    let h: Vec<f64> = dense(v, p("mlp1", "w"), p("mlp1", "b"))
        .into_iter()
        .map(|t| t.max(0.0))
        .collect();
    dense(&h, p("mlp2", "w"), p("mlp2", "b"))
}

/// Straight-line channel-efficient attention: shared (or split) MLP over
/// average and max pooled vectors, summed, 1×1 conv, sigmoid gate.
pub fn ce_reference(f: &Tensor, store: &ParamStore, prefix: &str, shared: bool) -> Tensor {
    let [n, c, h, w] = f.shape();
    let mut out = f.clone();
    for ni in 0..n {
        let (avg, max) = pooled(f, ni);
        let avg_c = mlp(&avg, store, prefix, "");
        let max_c = mlp(&max, store, prefix, if shared { "" } else { "_max" });
        let m_c: Vec<f64> = max_c.iter().zip(&avg_c).map(|(a, b)| a + b).collect();
        let m_d = dense(
            &m_c,
            store.by_name(&format!("{prefix}.out.w")).unwrap(),
            store.by_name(&format!("{prefix}.out.b")).unwrap(),
        );
        for ci in 0..c {
            let g = sigmoid(m_d[ci]);
            for y in 0..h {
                for x in 0..w {
                    out.set(ni, ci, y, x, f.at(ni, ci, y, x) * g);
                }
            }
        }
    }
    out
}

pub fn quarter(x: &Tensor, i: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let q = c / 4;
    let mut out = Tensor::zeros([n, q, h, w]);
    for ni in 0..n {
        for ci in 0..q {
            for y in 0..h {
                for xx in 0..w {
                    out.set(ni, ci, y, xx, x.at(ni, i * q + ci, y, xx));
                }
            }
        }
    }
    out
}

pub fn concat(parts: &[Tensor]) -> Tensor {
    let [n, q, h, w] = parts[0].shape();
    let mut out = Tensor::zeros([n, q * parts.len(), h, w]);
    for (i, p) in parts.iter().enumerate() {
        for ni in 0..n {
            for ci in 0..q {
                for y in 0..h {
                    for xx in 0..w {
                        out.set(ni, i * q + ci, y, xx, p.at(ni, ci, y, xx));
                    }
                }
            }
        }
    }
    out
}

pub fn conv_named(x: &Tensor, store: &ParamStore, name: &str, spec: ConvSpec) -> Tensor {
    let w = store.by_name(&format!("{name}.w")).unwrap();
    naive_conv(x, w, store.by_name(&format!("{name}.b")), &spec)
}

/// Straight-line multi-scale modulation: quarter split, per-branch max pool
/// by 2^i, branch conv, nearest upsample, concat, 1×1 fuse, GELU gate.
pub fn safm_reference(x: &Tensor, store: &ParamStore, prefix: &str, mode: SafmMode, conv_x1: bool) -> (Tensor, Vec<[usize; 2]>) {
    let [_, c, h, w] = x.shape();
    let q = c / 4;
    let mut branches = Vec::new();
    let mut dims = Vec::new();
    for i in 0..4 {
        let part = quarter(x, i);
        let pooled = if i == 0 { part } else { max_pool_ref(&part, 1 << i) };
        let name = format!("{prefix}.b{}", i + 1);
        let conv = if i == 0 && !conv_x1 {
            pooled
        } else {
            match mode {
                SafmMode::DepthwiseSeparable => {
                    let d = conv_named(&pooled, store, &format!("{name}.dw"), ConvSpec::depthwise(q, 3, 1));
                    conv_named(&d, store, &format!("{name}.pw"), ConvSpec::pointwise(q, q))
                }
                SafmMode::Standard => conv_named(&pooled, store, &format!("{name}.std"), ConvSpec::standard(q, q, 3, 1)),
            }
        };
        dims.push([conv.height(), conv.width()]);
        branches.push(upsample_ref(&conv, h, w));
    }
    let fused = conv_named(&concat(&branches), store, &format!("{prefix}.fuse"), ConvSpec::pointwise(c, c));
    assert!(fused.data().iter().all(|v| v.abs() < 5.0), "stay inside the erf series' accurate range");
    let mut out = x.clone();
    for (o, (&f, &xv)) in out.data_mut().iter_mut().zip(fused.data().iter().zip(x.data())) {
        *o = gelu_ref(f) * xv;
    }
    (out, dims)
}
