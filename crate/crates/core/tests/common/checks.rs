//! Randomized property sweeps with explicit trial counts, shared by the
//! property tests and the acceptance runner. Each returns a one-line summary
//! on success and the first violation otherwise.

use grn_core::graph::{GraphLevel, GraphModel};
use grn_core::gsm::{aggregate, decouple, gsm_forward, GsmConfig, GsmParams};
use grn_core::lcm::{lcm_forward, ChannelLift, LcmConfig, LcmParams};
use grn_core::nn::pixel_softmax;
use grn_core::params::Binder;
use grn_core::rnet::{
    assemble_input, plain_forward, rectify, rectify_forward, RectNetConfig, RectNetParams, RectifyOptions,
};
use grn_core::snet::{predict_mask, SegNetConfig, SegNetParams};
use grn_core::{Tape, Tensor};
use rand::Rng;

use super::{rand_tensor, rng};

fn expect_shape(what: &str, got: &[usize], want: &[usize]) -> Result<(), String> {
    if got == want {
        Ok(())
    } else {
        Err(format!("{what}: shape {got:?}, expected {want:?}"))
    }
}

fn random_gsm(r: &mut impl Rng) -> GsmConfig {
    let categories = r.gen_range(2..=8);
    GsmConfig {
        categories,
        height: r.gen_range(1..=6),
        width: r.gen_range(1..=6),
        node_dim: r.gen_range(1..=8),
        high_nodes: r.gen_range(1..categories),
        rescale_by_c: r.gen_bool(0.5),
    }
}

fn random_lcm(r: &mut impl Rng, categories: usize, node_dim: usize) -> LcmConfig {
    let identity = r.gen_bool(0.25);
    LcmConfig {
        in_channels: if identity { categories } else { r.gen_range(1..=9) },
        categories,
        height: r.gen_range(1..=6),
        width: r.gen_range(1..=6),
        node_dim,
        alpha: r.gen_range(0.0..2.0),
        lift: if identity { ChannelLift::Identity } else { ChannelLift::Projection },
        rescale_by_c: r.gen_bool(0.5),
    }
}

/// Output shapes of every stage of both modules and of the full R-Net.
pub fn shapes(trials: usize, seed: u64) -> Result<String, String> {
    let mut r = rng(seed);
    let e = |e: grn_core::Error| e.to_string();
    let mut checked = 0;
    for trial in 0..trials {
        let g = random_gsm(&mut r);
        let (c, d, k) = (g.categories, g.node_dim, g.high_nodes);
        let p = GsmParams::<f64>::init(g, &mut r).map_err(e)?;
        let f = rand_tensor(&[c, g.height, g.width], &mut r);
        let mut t = Tape::new();
        let vars = p.bind("", &mut Binder::new(&mut t, false));
        let vf = t.constant(f);
        let o = gsm_forward(&mut t, vf, &vars, &g).map_err(e)?;
        let rs = o.reasoning;
        let ctx = |s: &str| format!("trial {trial} {s} (c={c}, d={d}, n_high={k})");
        for (name, v, want) in [
            ("X_low", rs.low.nodes, vec![c, d]),
            ("Z_low", rs.z_low, vec![c, d]),
            ("X_high", rs.high.nodes, vec![k, d]),
            ("A_high", rs.high.adjacency, vec![k, k]),
            ("Z_high", rs.z_high, vec![k, d]),
            ("C_agg", rs.c_agg, vec![c, k]),
            ("C_dec", rs.c_dec, vec![k, c]),
            ("Z_low_hat", rs.z_low_hat, vec![c, d]),
            ("A_low_hat", rs.a_low_hat, vec![c, c]),
            ("Z_g", rs.z_g, vec![c, d]),
            ("theta_g", rs.theta_g, vec![c]),
            ("GSM weights", rs.channel_weights, vec![c]),
            ("GSM output", o.rectified, vec![c, g.height, g.width]),
        ] {
            expect_shape(&ctx(name), t.shape(v), &want)?;
            checked += 1;
        }

        let l = random_lcm(&mut r, c, d);
        let lp = LcmParams::<f64>::init(l, &mut r).map_err(e)?;
        let f = rand_tensor(&[l.in_channels, l.height, l.width], &mut r);
        let mut t = Tape::new();
        let vars = lp.bind("", &mut Binder::new(&mut t, false));
        let vf = t.constant(f);
        let zg = r.gen_bool(0.5).then(|| t.constant(rand_tensor(&[c, d], &mut r)));
        let o = lcm_forward(&mut t, vf, &vars, &l, zg).map_err(e)?;
        for (name, v, want) in [
            ("X_l", o.reasoning.graph.nodes, vec![c, d]),
            ("A_l", o.reasoning.graph.adjacency, vec![c, c]),
            ("Z_l", o.reasoning.z_l, vec![c, d]),
            ("theta_l", o.reasoning.theta_l, vec![c]),
            ("lifted weights", o.reasoning.channel_weights, vec![l.in_channels]),
            ("LCM output", o.rectified, vec![l.in_channels, l.height, l.width]),
        ] {
            expect_shape(&ctx(name), t.shape(v), &want)?;
            checked += 1;
        }
    }
    for trial in 0..trials.div_ceil(25) {
        let c = r.gen_range(4..=6);
        let cfg = RectNetConfig {
            categories: c,
            height: 4 * r.gen_range(4..=6),
            width: 4 * r.gen_range(4..=6),
            hidden: r.gen_range(2..=4),
            features: r.gen_range(2..=6),
            node_dim: r.gen_range(2..=5),
            high_nodes: r.gen_range(1..c),
            two_pass_assist: r.gen_bool(0.5),
            ..RectNetConfig::default()
        };
        let p = RectNetParams::<f64>::init(cfg, &mut r).map_err(e)?;
        let input = rand_tensor(&[3 + c, cfg.height, cfg.width], &mut r);
        let mut t = Tape::new();
        let vars = p.bind(&mut Binder::new(&mut t, false));
        let x = t.constant(input);
        let o = rectify_forward(&mut t, &vars, &cfg, x, RectifyOptions::default()).map_err(e)?;
        expect_shape(&format!("R-Net trial {trial} logits"), t.shape(o.logits), &[c, cfg.height, cfg.width])?;
        checked += 1;
    }
    Ok(format!("{checked} shapes over {trials} module trials"))
}

fn sums_to_one(what: &str, v: &[f64], tol: f64) -> Result<(), String> {
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() <= tol && v.iter().all(|&x| x > 0.0) {
        Ok(())
    } else {
        Err(format!("{what} sums to {s:.15}"))
    }
}

/// θ_g, θ_l, every row of both assignment matrices and per-pixel class
/// distributions each sum to one.
pub fn normalization(trials: usize, seed: u64, tol: f64) -> Result<String, String> {
    let mut r = rng(seed);
    let e = |e: grn_core::Error| e.to_string();
    let snet = SegNetParams::<f64>::init(SegNetConfig { categories: 5, hidden: 3, features: 3 }, &mut r).map_err(e)?;
    let rcfg = RectNetConfig {
        categories: 5,
        height: 16,
        width: 16,
        hidden: 3,
        features: 4,
        node_dim: 4,
        high_nodes: 2,
        ..RectNetConfig::default()
    };
    let rnet = RectNetParams::<f64>::init(rcfg, &mut r).map_err(e)?;
    for trial in 0..trials {
        let mut g = random_gsm(&mut r);
        g.rescale_by_c = false;
        let (c, d) = (g.categories, g.node_dim);
        let scale = r.gen_range(0.1..10.0);
        let p = GsmParams::<f64>::init(g, &mut r).map_err(e)?;
        let f = rand_tensor(&[c, g.height, g.width], &mut r).map(|v| v * scale);
        let mut t = Tape::new();
        let vars = p.bind("", &mut Binder::new(&mut t, false));
        let vf = t.constant(f);
        let o = gsm_forward(&mut t, vf, &vars, &g).map_err(e)?;
        let at = |s: &str| format!("trial {trial}: {s}");
        sums_to_one(&at("theta_g"), t.value(o.reasoning.theta_g).data(), tol)?;
        for (name, m) in [("C_agg", o.reasoning.c_agg), ("C_dec", o.reasoning.c_dec)] {
            let cols = t.shape(m)[1];
            for (i, row) in t.value(m).data().chunks(cols).enumerate() {
                sums_to_one(&at(&format!("{name} row {i}")), row, tol)?;
            }
        }

        let mut l = random_lcm(&mut r, c, d);
        l.rescale_by_c = false;
        let lp = LcmParams::<f64>::init(l, &mut r).map_err(e)?;
        let f = rand_tensor(&[l.in_channels, l.height, l.width], &mut r).map(|v| v * scale);
        let mut t = Tape::new();
        let vars = lp.bind("", &mut Binder::new(&mut t, false));
        let vf = t.constant(f);
        let zg = t.constant(rand_tensor(&[c, d], &mut r));
        let o = lcm_forward(&mut t, vf, &vars, &l, Some(zg)).map_err(e)?;
        sums_to_one(&at("theta_l"), t.value(o.reasoning.theta_l).data(), tol)?;

        let logits = rand_tensor(&[c, 3, 3], &mut r).map(|v| v * scale * 10.0);
        check_pixels(&at("pixel softmax"), &pixel_softmax(&logits).map_err(e)?, tol)?;
        if trial % 50 == 0 {
            let image = Tensor::from_fn([3, 16, 16], |_| r.gen_range(0.0..1.0));
            let (probs, _) = predict_mask(&snet, &image).map_err(e)?;
            check_pixels(&at("S-Net output"), &probs, tol)?;
            let input = assemble_input(&image, &probs).map_err(e)?;
            let (probs, _) = rectify(&rnet, &input).map_err(e)?;
            check_pixels(&at("R-Net output"), &probs, tol)?;
        }
    }
    Ok(format!("{trials} trials within {tol:e}"))
}

fn check_pixels(what: &str, probs: &Tensor<f64>, tol: f64) -> Result<(), String> {
    let (c, np) = (probs.shape()[0], probs.shape()[1] * probs.shape()[2]);
    for p in 0..np {
        let s: f64 = (0..c).map(|k| probs.data()[k * np + p]).sum();
        if (s - 1.0).abs() > tol {
            return Err(format!("{what}: pixel {p} sums to {s:.15}"));
        }
    }
    Ok(())
}

fn asymmetry(m: &Tensor<f64>) -> f64 {
    let n = m.shape()[0];
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m.at(&[i, j]) - m.at(&[j, i])).abs());
        }
    }
    worst
}

/// Pooling a symmetric adjacency up and back down keeps it symmetric.
pub fn symmetry(trials: usize, seed: u64, tol: f64) -> Result<String, String> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let n = r.gen_range(2..=9);
        let k = r.gen_range(1..n);
        let d = r.gen_range(1..=6);
        let mut a = rand_tensor(&[n, n], &mut r);
        a.symmetrize_in_place().map_err(|e| e.to_string())?;
        let c_agg = super::row_softmax(rand_tensor(&[n, k], &mut r).map(|v| v * 3.0).data(), n, k);
        let c_dec = super::row_softmax(rand_tensor(&[k, n], &mut r).map(|v| v * 3.0).data(), k, n);
        let mut t = Tape::new();
        let x = t.constant(rand_tensor(&[n, d], &mut r));
        let va = t.constant(a);
        let vc = t.constant(Tensor::new([n, k], c_agg).unwrap());
        let vd = t.constant(Tensor::new([k, n], c_dec).unwrap());
        let z = t.constant(rand_tensor(&[k, d], &mut r));
        let g = GraphModel::new(&t, x, va, GraphLevel::Low).map_err(|e| e.to_string())?;
        let high = aggregate(&mut t, &g, vc).map_err(|e| e.to_string())?;
        let (_, a_hat) = decouple(&mut t, z, high.adjacency, vd).map_err(|e| e.to_string())?;
        for (name, m) in [("A_high", high.adjacency), ("A_low_hat", a_hat)] {
            let s = asymmetry(t.value(m));
            if s > tol {
                return Err(format!("trial {trial}: {name} asymmetric by {s:e}"));
            }
            worst = worst.max(s);
        }
    }
    Ok(format!("{trials} instances, worst asymmetry {worst:.1e}"))
}

fn bits(t: &Tensor<f64>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// With α = 0 the global assist leaves the local module's output unchanged,
/// bit for bit.
pub fn alpha_zero(trials: usize, seed: u64) -> Result<String, String> {
    let mut r = rng(seed);
    let e = |e: grn_core::Error| e.to_string();
    for trial in 0..trials {
        let c = r.gen_range(2..=8);
        let d = r.gen_range(1..=8);
        let mut l = random_lcm(&mut r, c, d);
        l.alpha = 0.0;
        let p = LcmParams::<f64>::init(l, &mut r).map_err(e)?;
        let f = rand_tensor(&[l.in_channels, l.height, l.width], &mut r);
        let zg = rand_tensor(&[c, d], &mut r).map(|v| v * 100.0);
        let run = |z: Option<&Tensor<f64>>| -> Result<(Vec<u64>, Vec<u64>), String> {
            let mut t = Tape::new();
            let vars = p.bind("", &mut Binder::new(&mut t, false));
            let vf = t.constant(f.clone());
            let vz = z.map(|z| t.constant(z.clone()));
            let o = lcm_forward(&mut t, vf, &vars, &l, vz).map_err(e)?;
            Ok((bits(t.value(o.rectified)), bits(t.value(o.reasoning.theta_l))))
        };
        if run(Some(&zg))? != run(None)? {
            return Err(format!("trial {trial}: alpha = 0 output differs from the unassisted module"));
        }
    }
    Ok(format!("{trials} trials bitwise equal"))
}

/// Forcing both weight vectors to ones turns the full cascade into the plain
/// backbone, φ and decoder path, bit for bit.
pub fn unit_weights(trials: usize, seed: u64) -> Result<String, String> {
    let mut r = rng(seed);
    let e = |e: grn_core::Error| e.to_string();
    for trial in 0..trials {
        let c = r.gen_range(4..=6);
        let cfg = RectNetConfig {
            categories: c,
            height: 16,
            width: 16,
            hidden: r.gen_range(2..=4),
            features: r.gen_range(2..=6),
            node_dim: r.gen_range(2..=5),
            high_nodes: r.gen_range(1..c),
            two_pass_assist: r.gen_bool(0.5),
            rescale_by_c: r.gen_bool(0.5),
            ..RectNetConfig::default()
        };
        let p = RectNetParams::<f64>::init(cfg, &mut r).map_err(e)?;
        let input = rand_tensor(&[3 + c, 16, 16], &mut r);
        let mut t = Tape::new();
        let vars = p.bind(&mut Binder::new(&mut t, false));
        let x = t.constant(input);
        let hooked = rectify_forward(&mut t, &vars, &cfg, x, RectifyOptions { unit_weights: true }).map_err(e)?;
        let plain = plain_forward(&mut t, &vars, &cfg, x).map_err(e)?;
        if bits(t.value(hooked.logits)) != bits(t.value(plain)) {
            return Err(format!("trial {trial}: unit weights differ from the plain path"));
        }
        let weighted = rectify_forward(&mut t, &vars, &cfg, x, RectifyOptions::default()).map_err(e)?;
        if bits(t.value(weighted.logits)) == bits(t.value(plain)) {
            return Err(format!("trial {trial}: reweighting had no effect, so the hook proves nothing"));
        }
    }
    Ok(format!("{trials} networks bitwise equal"))
}

/// Writes and reads back random images, label maps, dataset directories and
/// checkpoints under `dir`, requiring identical bytes and values.
pub fn formats(trials: usize, seed: u64, dir: &std::path::Path) -> Result<String, String> {
    use grn_core::checkpoint::Checkpoint;
    use grn_core::corpus::{
        load_corpus, load_hidden, read_pgm, read_ppm, save_corpus, write_pgm, write_ppm, CategoryTable, Corpus,
        HiddenLabels, Image, LabelMap, Sample, Split,
    };
    let mut r = rng(seed);
    let e = |e: grn_core::Error| e.to_string();
    let image = |r: &mut rand_chacha::ChaCha8Rng| {
        let (w, h) = (r.gen_range(1..24), r.gen_range(1..24));
        Image::new(w, h, (0..w * h * 3).map(|_| r.gen()).collect()).unwrap()
    };
    for trial in 0..trials {
        let img = image(&mut r);
        let path = dir.join("x.ppm");
        write_ppm(&path, &img).map_err(e)?;
        if read_ppm(&path).map_err(e)? != img {
            return Err(format!("trial {trial}: PPM round trip differs"));
        }
        let label =
            LabelMap::new(img.width, img.height, (0..img.width * img.height).map(|_| r.gen()).collect()).map_err(e)?;
        let path = dir.join("x.pgm");
        write_pgm(&path, &label).map_err(e)?;
        if read_pgm(&path).map_err(e)? != label {
            return Err(format!("trial {trial}: PGM round trip differs"));
        }

        let entries = (0..r.gen_range(0..6))
            .map(|i| {
                let shape: Vec<usize> = (0..r.gen_range(0..4)).map(|_| r.gen_range(1..5)).collect();
                let n = shape.iter().product();
                let data = (0..n).map(|_| f64::from_bits(r.gen())).collect();
                (format!("p{i}.w"), Tensor::new(shape, data).unwrap())
            })
            .collect();
        let ckpt = Checkpoint { entries };
        let path = dir.join("x.grn");
        ckpt.save(&path).map_err(e)?;
        let back = Checkpoint::load(&path).map_err(e)?;
        if back.to_bytes() != ckpt.to_bytes() || back.entries.len() != ckpt.entries.len() {
            return Err(format!("trial {trial}: checkpoint round trip differs"));
        }

        if trial % 10 == 0 {
            let mut samples = Vec::new();
            let mut hidden = HiddenLabels::default();
            let n = r.gen_range(1..6);
            for i in 0..n {
                let split = [Split::Labeled, Split::Unlabeled, Split::Test][r.gen_range(0..3)];
                let img = image(&mut r);
                let l = LabelMap::new(
                    img.width,
                    img.height,
                    (0..img.width * img.height).map(|_| r.gen_range(0..8)).collect(),
                )
                .unwrap();
                let id = format!("t{trial}_{i}");
                let label = if split == Split::Unlabeled {
                    hidden.0.insert(id.clone(), l);
                    None
                } else {
                    Some(l)
                };
                samples.push(Sample { id, split, image: img, label, pseudo_label: None, rectified_label: None });
            }
            samples.sort_by_key(|s| s.split == Split::Test);
            let corpus = Corpus { categories: CategoryTable::new(8).map_err(e)?, samples };
            let sub = dir.join(format!("set{trial}"));
            save_corpus(&sub, &corpus, Some(&hidden)).map_err(e)?;
            let loaded = load_corpus(&sub).map_err(e)?;
            if loaded != corpus || load_hidden(&sub, &loaded).map_err(e)? != hidden {
                return Err(format!("trial {trial}: dataset round trip differs"));
            }
        }
    }
    Ok(format!("{trials} fixtures of each format"))
}
