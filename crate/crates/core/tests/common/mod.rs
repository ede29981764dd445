//! Plain scalar-loop reference implementations shared by the integration
//! tests and the acceptance runner. Matrices are row-major `Vec<f64>`.

#![allow(dead_code)]

pub mod checks;
pub mod oracle_suite;

use grn_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `[n×k]·[k×m]`
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * m + j];
            }
            out[i * m + j] = s;
        }
    }
    out
}

pub fn transpose(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

pub fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn row_softmax(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    (0..n).flat_map(|i| softmax(&a[i * m..(i + 1) * m])).collect()
}

/// Mean of each row.
pub fn gap(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    (0..n).map(|i| a[i * m..(i + 1) * m].iter().sum::<f64>() / m as f64).collect()
}

/// `relu(A·X·W)` for `A [n×n]`, `X [n×d]`, `W [d×d]`.
pub fn graph_convolve(a: &[f64], x: &[f64], w: &[f64], n: usize, d: usize) -> Vec<f64> {
    relu(matmul(&matmul(a, x, n, n, d), w, n, d, d))
}

/// Row `i` of the result is `F_i · Ω_i`, with `F [c×p]` and each `Ω_i [p×d]`.
pub fn project_to_graph(f: &[f64], omegas: &[&[f64]], c: usize, p: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * d];
    for i in 0..c {
        for j in 0..d {
            out[i * d + j] = (0..p).map(|q| f[i * p + q] * omegas[i][q * d + j]).sum();
        }
    }
    out
}

/// `rowsoftmax(A·X·V)` for `V [d×k]`.
pub fn assignment(a: &[f64], x: &[f64], v: &[f64], n: usize, d: usize, k: usize) -> Vec<f64> {
    row_softmax(&matmul(&matmul(a, x, n, n, d), v, n, d, k), n, k)
}

/// `(Cᵀ·X, Cᵀ·A·C)` for `C [n×k]`.
pub fn pool(c: &[f64], x: &[f64], a: &[f64], n: usize, k: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let ct = transpose(c, n, k);
    let xh = matmul(&ct, x, k, n, d);
    let ah = matmul(&matmul(&ct, a, k, n, n), c, k, n, k);
    (xh, ah)
}

/// `(Ω1·F·Ω2, rowsoftmax(X·Xᵀ))` for `Ω1 [c×c']`, `F [c'×p]`, `Ω2 [p×d]`.
pub fn project_pixels(
    o1: &[f64],
    f: &[f64],
    o2: &[f64],
    c: usize,
    ci: usize,
    p: usize,
    d: usize,
) -> (Vec<f64>, Vec<f64>) {
    let x = matmul(&matmul(o1, f, c, ci, p), o2, c, p, d);
    let a = row_softmax(&matmul(&x, &transpose(&x, c, d), c, d, c), c, c);
    (x, a)
}

/// Zero-padded 3×3 cross-correlation; `k [cout×cin×3×3]`.
pub fn conv2d(x: &[f64], k: &[f64], cin: usize, h: usize, w: usize, cout: usize, stride: usize) -> Vec<f64> {
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut out = vec![0.0; cout * ho * wo];
    for o in 0..cout {
        for y in 0..ho {
            for xo in 0..wo {
                let mut s = 0.0;
                for i in 0..cin {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let yy = (y * stride + dy) as isize - 1;
                            let xx = (xo * stride + dx) as isize - 1;
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            s += x[(i * h + yy as usize) * w + xx as usize] * k[((o * cin + i) * 3 + dy) * 3 + dx];
                        }
                    }
                }
                out[(o * ho + y) * wo + xo] = s;
            }
        }
    }
    out
}

pub struct GsmOracle {
    pub x_low: Vec<f64>,
    pub z_low: Vec<f64>,
    pub c_agg: Vec<f64>,
    pub x_high: Vec<f64>,
    pub a_high: Vec<f64>,
    pub z_high: Vec<f64>,
    pub c_dec: Vec<f64>,
    pub z_hat: Vec<f64>,
    pub a_hat: Vec<f64>,
    pub z_g: Vec<f64>,
    pub theta: Vec<f64>,
    pub weights: Vec<f64>,
    pub output: Vec<f64>,
}

/// The whole global module from its parts, `F [c×p]`.
pub fn gsm(p: &grn_core::gsm::GsmParams<f64>, f: &[f64], scale_by_c: bool) -> GsmOracle {
    let cfg = p.config;
    let (c, d, k) = (cfg.categories, cfg.node_dim, cfg.high_nodes);
    let px = cfg.height * cfg.width;
    let omegas: Vec<&[f64]> = p.omega.iter().map(|t| t.data()).collect();
    let a = p.a_low.data();
    let x_low = project_to_graph(f, &omegas, c, px, d);
    let z_low = graph_convolve(a, &x_low, p.w_low.data(), c, d);
    let c_agg = assignment(a, &x_low, p.v_low.data(), c, d, k);
    let (x_high, a_high) = pool(&c_agg, &x_low, a, c, k, d);
    let z_high = graph_convolve(&a_high, &x_high, p.w_high.data(), k, d);
    let c_dec = assignment(&a_high, &x_high, p.v_high.data(), k, d, c);
    let (z_hat, a_hat) = pool(&c_dec, &z_high, &a_high, k, c, d);
    let z_g: Vec<f64> = z_hat.iter().zip(&z_low).map(|(a, b)| a + b).collect();
    let theta = softmax(&gap(&z_g, c, d));
    let mut weights = theta.clone();
    if scale_by_c {
        weights.iter_mut().for_each(|t| *t *= c as f64);
    }
    let output = (0..c * px).map(|i| weights[i / px] * f[i]).collect();
    GsmOracle { x_low, z_low, c_agg, x_high, a_high, z_high, c_dec, z_hat, a_hat, z_g, theta, weights, output }
}

pub struct LcmOracle {
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub z_l: Vec<f64>,
    pub theta: Vec<f64>,
    pub weights: Vec<f64>,
    pub output: Vec<f64>,
}

/// The local module with the projection lift, `F [c'×p]`.
pub fn lcm(p: &grn_core::lcm::LcmParams<f64>, f: &[f64], z_g: Option<&[f64]>) -> LcmOracle {
    let cfg = p.config;
    let (c, ci, d) = (cfg.categories, cfg.in_channels, cfg.node_dim);
    let px = cfg.height * cfg.width;
    let (x, a) = project_pixels(p.omega_l1.data(), f, p.omega_l2.data(), c, ci, px, d);
    let z_l = graph_convolve(&a, &x, p.w_l.data(), c, d);
    let mixed: Vec<f64> = match z_g {
        Some(g) => z_l.iter().zip(g).map(|(l, g)| l + cfg.alpha * g).collect(),
        None => z_l.clone(),
    };
    let theta = softmax(&gap(&mixed, c, d));
    let mut weights = matmul(&transpose(p.omega_l1.data(), c, ci), &theta, ci, c, 1);
    if cfg.rescale_by_c {
        weights.iter_mut().for_each(|w| *w *= c as f64);
    }
    let output = (0..ci * px).map(|i| weights[i / px] * f[i]).collect();
    LcmOracle { x, a, z_l, theta, weights, output }
}

/// A corpus and configuration small enough to run the whole pipeline in
/// well under a second.
pub fn tiny_pipeline(seed: u64) -> (grn_core::corpus::Corpus, grn_core::PipelineConfig) {
    use grn_core::corpus::{generate, CorpusSpec};
    let (corpus, _) = generate(&CorpusSpec {
        n_labeled: 4,
        n_unlabeled: 6,
        n_test: 3,
        size: 16,
        categories: 4,
        seed,
        ..CorpusSpec::default()
    })
    .expect("valid corpus spec");
    let mut cfg = grn_core::PipelineConfig { seed, ..Default::default() };
    for (k, v) in [
        ("categories", "4"),
        ("seg_hidden", "3"),
        ("seg_features", "4"),
        ("rect_hidden", "3"),
        ("rect_features", "4"),
        ("node_dim", "3"),
        ("high_nodes", "2"),
        ("seg_epochs", "2"),
        ("rect_epochs", "2"),
        ("retrain_epochs", "2"),
        ("batch_size", "2"),
        ("ablate_raw", "true"),
    ] {
        cfg.set(k, v).expect("known key");
    }
    (corpus, cfg)
}
