//! Library operations against the scalar-loop references, as plain
//! panicking functions so that both the test harness and the acceptance
//! runner can call them.

use super::*;
use grn_core::graph::{data_adjacency, graph_convolve, GraphLevel, GraphModel};
use grn_core::gsm::{
    aggregate, compute_aggregation, compute_decoupling, decouple, gsm_forward, project_to_graph, GsmConfig, GsmParams,
};
use grn_core::lcm::{lcm_forward, project_pixels_to_graph, ChannelLift, LcmConfig, LcmParams};
use grn_core::params::Binder;
use grn_core::{Tape, Tensor};

const ATOMIC: f64 = 1e-12;
const COMPOSED: f64 = 1e-9;

fn gsm_cfg(rescale_by_c: bool) -> GsmConfig {
    GsmConfig { categories: 4, height: 4, width: 4, node_dim: 6, high_nodes: 2, rescale_by_c }
}

fn lcm_cfg(rescale_by_c: bool) -> LcmConfig {
    LcmConfig {
        in_channels: 5,
        categories: 4,
        height: 4,
        width: 4,
        node_dim: 6,
        alpha: 1.0,
        lift: ChannelLift::Projection,
        rescale_by_c,
    }
}

pub fn matmul_and_transpose() {
    let mut r = rng(1);
    let a = rand_tensor(&[3, 5], &mut r);
    let b = rand_tensor(&[5, 4], &mut r);
    let mut t = Tape::new();
    let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
    let m = t.matmul(va, vb).unwrap();
    let tr = t.transpose(va).unwrap();
    assert!(max_abs_diff(t.value(m).data(), &matmul(a.data(), b.data(), 3, 5, 4)) <= ATOMIC);
    assert_eq!(t.value(tr).data(), transpose(a.data(), 3, 5).as_slice());
    assert_eq!(t.shape(tr), &[5, 3]);
}

pub fn conv2d_matches_loops_for_both_strides() {
    for (seed, stride, h, w) in [(2, 1, 6, 5), (3, 2, 7, 6), (4, 2, 8, 8)] {
        let mut r = rng(seed);
        let x = rand_tensor(&[3, h, w], &mut r);
        let k = rand_tensor(&[4, 3, 3, 3], &mut r);
        let mut t = Tape::new();
        let (vx, vk) = (t.constant(x.clone()), t.constant(k.clone()));
        let y = t.conv2d(vx, vk, stride).unwrap();
        let want = conv2d(x.data(), k.data(), 3, h, w, 4, stride);
        assert_eq!(t.shape(y), &[4, h.div_ceil(stride), w.div_ceil(stride)]);
        assert!(max_abs_diff(t.value(y).data(), &want) <= ATOMIC, "stride {stride}");
    }
}

pub fn graph_convolution() {
    let mut r = rng(5);
    let (n, d) = (5, 3);
    let x = rand_tensor(&[n, d], &mut r);
    let a = rand_tensor(&[n, n], &mut r);
    let w = rand_tensor(&[d, d], &mut r);
    let mut t = Tape::new();
    let (vx, va, vw) = (t.constant(x.clone()), t.constant(a.clone()), t.constant(w.clone()));
    let g = GraphModel::new(&t, vx, va, GraphLevel::Low).unwrap();
    let z = graph_convolve(&mut t, &g, vw, true).unwrap();
    let want = super::graph_convolve(a.data(), x.data(), w.data(), n, d);
    assert!(max_abs_diff(t.value(z).data(), &want) <= ATOMIC);
    assert!(want.contains(&0.0) && want.iter().any(|&v| v > 0.0), "fixture exercises both relu sides");

    let adj = data_adjacency(&mut t, vx).unwrap();
    let want = row_softmax(&matmul(x.data(), &transpose(x.data(), n, d), n, d, n), n, n);
    assert!(max_abs_diff(t.value(adj).data(), &want) <= ATOMIC);
}

pub fn category_projection() {
    let cfg = gsm_cfg(false);
    let p = GsmParams::<f64>::init(cfg, &mut rng(6)).unwrap();
    let f = rand_tensor(&[4, 4, 4], &mut rng(7));
    let mut t = Tape::new();
    let vars = p.bind("", &mut Binder::new(&mut t, false));
    let vf = t.constant(f.clone());
    let g = project_to_graph(&mut t, vf, &vars, &cfg).unwrap();
    let omegas: Vec<&[f64]> = p.omega.iter().map(|o| o.data()).collect();
    let want = super::project_to_graph(f.data(), &omegas, 4, 16, 6);
    assert!(max_abs_diff(t.value(g.nodes).data(), &want) <= ATOMIC);
    assert_eq!(t.value(g.adjacency), &p.a_low);
}

pub fn aggregation_and_decoupling() {
    let mut r = rng(8);
    let (n, k, d) = (4, 2, 3);
    let x = rand_tensor(&[n, d], &mut r);
    let mut a = rand_tensor(&[n, n], &mut r);
    a.symmetrize_in_place().unwrap();
    let v_low = rand_tensor(&[d, k], &mut r);
    let v_high = rand_tensor(&[d, n], &mut r);
    let z_high = rand_tensor(&[k, d], &mut r);

    let mut t = Tape::new();
    let (vx, va) = (t.constant(x.clone()), t.constant(a.clone()));
    let (vl, vh, vz) = (t.constant(v_low.clone()), t.constant(v_high.clone()), t.constant(z_high.clone()));
    let low = GraphModel::new(&t, vx, va, GraphLevel::Low).unwrap();
    let c_agg = compute_aggregation(&mut t, &low, vl).unwrap();
    let want_agg = assignment(a.data(), x.data(), v_low.data(), n, d, k);
    assert!(max_abs_diff(t.value(c_agg).data(), &want_agg) <= ATOMIC);

    let high = aggregate(&mut t, &low, c_agg).unwrap();
    let (xh, ah) = pool(&want_agg, x.data(), a.data(), n, k, d);
    assert!(max_abs_diff(t.value(high.nodes).data(), &xh) <= ATOMIC);
    assert!(max_abs_diff(t.value(high.adjacency).data(), &ah) <= ATOMIC);

    let c_dec = compute_decoupling(&mut t, &high, vh).unwrap();
    let want_dec = assignment(&ah, &xh, v_high.data(), k, d, n);
    assert!(max_abs_diff(t.value(c_dec).data(), &want_dec) <= ATOMIC);

    let (z_hat, a_hat) = decouple(&mut t, vz, high.adjacency, c_dec).unwrap();
    let (zw, aw) = pool(&want_dec, z_high.data(), &ah, k, n, d);
    assert!(max_abs_diff(t.value(z_hat).data(), &zw) <= ATOMIC);
    assert!(max_abs_diff(t.value(a_hat).data(), &aw) <= ATOMIC);
}

pub fn pixel_projection() {
    let cfg = lcm_cfg(false);
    let p = LcmParams::<f64>::init(cfg, &mut rng(9)).unwrap();
    let f = rand_tensor(&[5, 4, 4], &mut rng(10));
    let mut t = Tape::new();
    let vars = p.bind("", &mut Binder::new(&mut t, false));
    let vf = t.constant(f.clone());
    let g = project_pixels_to_graph(&mut t, vf, &vars, &cfg).unwrap();
    let (x, a) = project_pixels(p.omega_l1.data(), f.data(), p.omega_l2.data(), 4, 5, 16, 6);
    assert!(max_abs_diff(t.value(g.nodes).data(), &x) <= ATOMIC);
    assert!(max_abs_diff(t.value(g.adjacency).data(), &a) <= ATOMIC);
}

pub fn composed_global_module() {
    for (seed, rescale) in [(0, false), (1, true)] {
        let cfg = gsm_cfg(rescale);
        let p = GsmParams::<f64>::init(cfg, &mut rng(seed)).unwrap();
        let f = rand_tensor(&[4, 4, 4], &mut rng(seed + 100));
        let mut t = Tape::new();
        let vars = p.bind("", &mut Binder::new(&mut t, false));
        let vf = t.constant(f.clone());
        let out = gsm_forward(&mut t, vf, &vars, &cfg).unwrap();
        let o = gsm(&p, f.data(), rescale);
        let r = &out.reasoning;
        for (name, got, want) in [
            ("x_low", r.low.nodes, &o.x_low),
            ("z_low", r.z_low, &o.z_low),
            ("c_agg", r.c_agg, &o.c_agg),
            ("x_high", r.high.nodes, &o.x_high),
            ("a_high", r.high.adjacency, &o.a_high),
            ("z_high", r.z_high, &o.z_high),
            ("c_dec", r.c_dec, &o.c_dec),
            ("z_hat", r.z_low_hat, &o.z_hat),
            ("a_hat", r.a_low_hat, &o.a_hat),
            ("z_g", r.z_g, &o.z_g),
            ("theta_g", r.theta_g, &o.theta),
            ("weights", r.channel_weights, &o.weights),
            ("output", out.rectified, &o.output),
        ] {
            let err = max_abs_diff(t.value(got).data(), want);
            assert!(err <= COMPOSED, "{name}: {err:e}");
        }
    }
}

pub fn composed_local_module() {
    for (seed, rescale, with_global) in [(2, false, false), (3, false, true), (4, true, true)] {
        let cfg = lcm_cfg(rescale);
        let p = LcmParams::<f64>::init(cfg, &mut rng(seed)).unwrap();
        let mut r = rng(seed + 100);
        let f = rand_tensor(&[5, 4, 4], &mut r);
        let z_g = rand_tensor(&[4, 6], &mut r);
        let mut t = Tape::new();
        let vars = p.bind("", &mut Binder::new(&mut t, false));
        let vf = t.constant(f.clone());
        let vz = with_global.then(|| t.constant(z_g.clone()));
        let out = lcm_forward(&mut t, vf, &vars, &cfg, vz).unwrap();
        let o = lcm(&p, f.data(), with_global.then_some(z_g.data()));
        let rs = &out.reasoning;
        for (name, got, want) in [
            ("x", rs.graph.nodes, &o.x),
            ("a", rs.graph.adjacency, &o.a),
            ("z_l", rs.z_l, &o.z_l),
            ("theta_l", rs.theta_l, &o.theta),
            ("weights", rs.channel_weights, &o.weights),
            ("output", out.rectified, &o.output),
        ] {
            let err = max_abs_diff(t.value(got).data(), want);
            assert!(err <= COMPOSED, "{name}: {err:e}");
        }
    }
}

pub fn cross_entropy_against_direct_formula() {
    let mut r = rng(11);
    let logits = rand_tensor(&[3, 2, 2], &mut r);
    let labels = [0u8, 2, 1, 2];
    let mut t = Tape::new();
    let v = t.constant(logits.clone());
    let l = t.cross_entropy(v, &labels).unwrap();
    let x = logits.data();
    let want: f64 = (0..4)
        .map(|p| {
            let col: Vec<f64> = (0..3).map(|k| x[k * 4 + p]).collect();
            -softmax(&col)[labels[p] as usize].ln()
        })
        .sum::<f64>()
        / 4.0;
    assert!((t.value(l).data()[0] - want).abs() <= ATOMIC);

    let mut t = Tape::new();
    let v = t.constant(Tensor::<f64>::zeros([4, 2, 2]));
    let l = t.cross_entropy(v, &[0, 1, 2, 3]).unwrap();
    assert!((t.value(l).data()[0] - 4f64.ln()).abs() <= ATOMIC);
}

pub fn metrics_hand_fixtures() {
    use grn_core::corpus::LabelMap;
    use grn_core::metrics::Protocol;
    use grn_core::pipeline::evaluate_labels;
    // two classes, 12 of 16 pixels right
    let gt = LabelMap::new(4, 4, [[0u8; 8], [1; 8]].concat()).unwrap();
    let pred = LabelMap::new(4, 4, vec![0, 1, 0, 1, 0, 0, 1, 0, 1, 1, 0, 1, 1, 1, 1, 1]).unwrap();
    let r = evaluate_labels(&[&pred], &[&gt], 2, Protocol::Lip).unwrap();
    assert_eq!(r.pixel_accuracy, 0.75);
    assert!((r.mean_accuracy - 0.75).abs() <= ATOMIC);
    assert!((r.mean_iou - 59.0 / 99.0).abs() <= ATOMIC);
    // three of four classes present, scored under both protocols
    let gt = LabelMap::new(4, 4, vec![0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 1, 1, 2, 2, 2, 0]).unwrap();
    let pred = LabelMap::new(4, 4, vec![0, 1, 1, 1, 0, 0, 1, 1, 2, 1, 1, 1, 2, 2, 0, 0]).unwrap();
    let r = evaluate_labels(&[&pred], &[&gt], 4, Protocol::Atr).unwrap();
    assert_eq!(r.class_iou[3], None);
    assert!((r.mean_iou - 121.0 / 180.0).abs() <= ATOMIC);
    let atr = r.atr.unwrap();
    for (got, want) in [
        (atr.foreground_accuracy, 9.0 / 11.0),
        (atr.avg_precision, 0.875),
        (atr.avg_recall, 0.8),
        (atr.avg_f1, 45.0 / 56.0),
    ] {
        assert!((got - want).abs() <= ATOMIC, "{got} vs {want}");
    }
}

/// Every check, by name; each panics on a mismatch.
pub const ALL: &[(&str, fn())] = &[
    ("matmul_and_transpose", matmul_and_transpose),
    ("conv2d_matches_loops_for_both_strides", conv2d_matches_loops_for_both_strides),
    ("graph_convolution", graph_convolution),
    ("category_projection", category_projection),
    ("aggregation_and_decoupling", aggregation_and_decoupling),
    ("pixel_projection", pixel_projection),
    ("composed_global_module", composed_global_module),
    ("composed_local_module", composed_local_module),
    ("cross_entropy_against_direct_formula", cross_entropy_against_direct_formula),
    ("metrics_hand_fixtures", metrics_hand_fixtures),
];
