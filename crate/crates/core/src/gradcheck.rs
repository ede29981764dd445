//! Central finite-difference checking of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{data_adjacency, graph_convolve, symmetrize, GraphLevel, GraphModel};
use crate::gsm::{gsm_forward, GsmConfig, GsmParams};
use crate::lcm::{lcm_forward, ChannelLift, LcmConfig, LcmParams};
use crate::nn::one_hot;
use crate::params::{Binder, Bound, Parameterized};
use crate::rnet::{assemble_input, rectify_forward, RectNetConfig, RectNetParams, RectifyOptions};
use crate::scalar::Scalar;
use crate::snet::{seg_forward, SegNetConfig, SegNetParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central difference step.
    pub step: f64,
    /// Check at most this many evenly spaced elements per parameter.
    pub max_elements_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, max_elements_per_param: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub elements_checked: usize,
    /// Largest [`relative_error`] over the checked elements.
    pub max_rel_error: f64,
    /// Largest absolute analytic gradient seen, to spot dead parameters.
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= tol)
    }
}

/// Denominator floor of [`relative_error`], so that two zero gradients agree.
pub const RELATIVE_FLOOR: f64 = 1e-8;

/// `|a − n| / max(RELATIVE_FLOOR, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(RELATIVE_FLOOR)
}

/// Checks a loss built from a parameterized model.
///
/// `loss` must bind the model's parameters through a [`Binder`] and return
/// the scalar loss together with the resulting [`Bound`] map.
pub fn grad_check_model<T, P, F>(model: &P, loss: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    T: Scalar,
    P: Parameterized<T> + Clone,
    F: Fn(&mut Tape<T>, &P) -> Result<(Var, Bound)>,
{
    let mut tape = Tape::new();
    let (l, bound) = loss(&mut tape, model)?;
    let base = tape.value(l).data()[0];
    tape.backward(l)?;
    let analytic = bound.gradients(&tape);

    let eval = |m: &P| -> Result<T> {
        let mut t = Tape::new();
        let (l, _) = loss(&mut t, m)?;
        Ok(t.value(l).data()[0])
    };
    let again = eval(model)?;
    if again.as_f64().to_bits() != base.as_f64().to_bits() {
        return Err(Error::Check(format!("loss is not deterministic: {base} then {again}")));
    }

    let h = T::of(opts.step);
    let two_h = opts.step * 2.0;
    let mut report = GradCheckReport::default();
    for (name, value) in model.named_params() {
        let g =
            analytic.get(&name).ok_or_else(|| Error::Check(format!("parameter {name} was not bound by the loss")))?;
        let n = value.len();
        let indices: Vec<usize> = match opts.max_elements_per_param {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        let mut max_abs = 0.0f64;
        for &e in &indices {
            let plus = eval(&perturbed(model, &name, e, h))?;
            let minus = eval(&perturbed(model, &name, e, -h))?;
            let numeric = (plus - minus).as_f64() / two_h;
            let a = g.data()[e].as_f64();
            worst = worst.max(relative_error(a, numeric));
            max_abs = max_abs.max(a.abs());
        }
        report.params.push(ParamCheck {
            name,
            elements_checked: indices.len(),
            max_rel_error: worst,
            max_abs_grad: max_abs,
        });
    }
    Ok(report)
}

fn perturbed<T: Scalar, P: Parameterized<T> + Clone>(model: &P, name: &str, e: usize, h: T) -> P {
    let mut m = model.clone();
    m.visit_mut("", &mut |n, t| {
        if n == name {
            t.data_mut()[e] += h;
        }
    });
    m
}

/// A bare list of tensors, named `p0`, `p1`, ...
#[derive(Debug, Clone, PartialEq)]
pub struct TensorList<T>(pub Vec<Tensor<T>>);

impl<T: Scalar> Parameterized<T> for TensorList<T> {
    fn visit(&self, _prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, t) in self.0.iter().enumerate() {
            f(&format!("p{i}"), t);
        }
    }

    fn visit_mut(&mut self, _prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, t) in self.0.iter_mut().enumerate() {
            f(&format!("p{i}"), t);
        }
    }
}

/// Checks `f` with respect to each tensor in `params`.
///
/// `f` receives one tape leaf per parameter, in order, and returns a scalar.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let list = TensorList(params.to_vec());
    grad_check_model(
        &list,
        |tape, m| {
            let mut b = Binder::new(tape, true);
            let vars: Vec<Var> = m.0.iter().enumerate().map(|(i, t)| b.bind(format!("p{i}"), t)).collect();
            let bound = b.finish();
            let l = f(tape, &vars)?;
            Ok((l, bound))
        },
        opts,
    )
}

/// Sizes used by [`component_suite`].
pub const SUITE_CATEGORIES: usize = 4;
pub const SUITE_NODE_DIM: usize = 6;
pub const SUITE_SIZE: usize = 16;

fn rand_tensor(shape: impl Into<Vec<usize>>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let shape = shape.into();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sizes match")
}

/// `Σ r ⊙ x` for a fixed random `r`, a loss that exposes every output element.
fn probe<T: Scalar>(tape: &mut Tape<T>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rand_tensor(tape.shape(x).to_vec(), &mut rng).cast();
    let r = tape.constant(r);
    let m = tape.mul(x, r)?;
    tape.sum(m)
}

type OpCase = (&'static str, Vec<Vec<usize>>, fn(&mut Tape<f64>, &[Var]) -> Result<Var>);

fn op_cases() -> Vec<OpCase> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 5]], |t, v| t.matmul(v[0], v[1])),
        ("transpose", vec![vec![3, 4]], |t, v| t.transpose(v[0])),
        ("reshape", vec![vec![3, 4]], |t, v| t.reshape(v[0], [2, 6])),
        ("add", vec![vec![2, 3], vec![2, 3]], |t, v| t.add(v[0], v[1])),
        ("mul", vec![vec![2, 3], vec![2, 3]], |t, v| t.mul(v[0], v[1])),
        ("scale", vec![vec![5]], |t, v| t.scale(v[0], -1.7)),
        ("relu", vec![vec![7]], |t, v| t.relu(v[0])),
        ("softmax", vec![vec![6]], |t, v| t.softmax(v[0])),
        ("row_softmax", vec![vec![3, 5]], |t, v| t.row_softmax(v[0])),
        ("gap", vec![vec![4, 6]], |t, v| t.gap(v[0])),
        ("channel_scale", vec![vec![3], vec![3, 4, 4]], |t, v| t.channel_scale(v[0], v[1])),
        ("conv2d_s1", vec![vec![2, 6, 5], vec![3, 2, 3, 3]], |t, v| t.conv2d(v[0], v[1], 1)),
        ("conv2d_s2", vec![vec![2, 7, 6], vec![3, 2, 3, 3]], |t, v| t.conv2d(v[0], v[1], 2)),
        ("bias_add", vec![vec![3, 2, 2], vec![3]], |t, v| t.bias_add(v[0], v[1])),
        ("upsample_nearest", vec![vec![2, 3, 2]], |t, v| t.upsample_nearest(v[0])),
        ("concat_channels", vec![vec![1, 3, 3], vec![2, 3, 3]], |t, v| t.concat_channels(&[v[0], v[1]])),
        ("row", vec![vec![4, 3]], |t, v| t.row(v[0], 2)),
        ("concat_rows", vec![vec![1, 3], vec![2, 3]], |t, v| t.concat_rows(&[v[0], v[1]])),
        ("sum", vec![vec![2, 3]], |t, v| t.sum(v[0])),
        ("cross_entropy", vec![vec![3, 2, 3]], |t, v| t.cross_entropy(v[0], &[0, 1, 2, 2, 1, 0])),
    ]
}

/// Gradient checks of every differentiable piece at small sizes
/// (c = 4, d = 6, 16×16 inputs): each tensor op, graph convolution and
/// adjacency, GSM, LCM, R-Net and S-Net. Returns one report per component.
pub fn component_suite(seed: u64, opts: &GradCheckOptions) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, d, s) = (SUITE_CATEGORIES, SUITE_NODE_DIM, SUITE_SIZE);
    let mut out = Vec::new();

    for (name, shapes, f) in op_cases() {
        let params: Vec<Tensor<f64>> = shapes.into_iter().map(|sh| rand_tensor(sh, &mut rng)).collect();
        let r = grad_check(
            |t, v| {
                let y = f(t, v)?;
                probe(t, y, seed)
            },
            &params,
            opts,
        )?;
        out.push((format!("op.{name}"), r));
    }

    let params = vec![rand_tensor([c, d], &mut rng), rand_tensor([c, c], &mut rng), rand_tensor([d, d], &mut rng)];
    let r = grad_check(
        |t, v| {
            let sym = symmetrize(t, v[1])?;
            let g = GraphModel::new(t, v[0], sym, GraphLevel::Low)?;
            let z = graph_convolve(t, &g, v[2], false)?;
            let a = data_adjacency(t, v[0])?;
            let g2 = GraphModel::new(t, z, a, GraphLevel::Low)?;
            let z2 = graph_convolve(t, &g2, v[2], true)?;
            probe(t, z2, seed)
        },
        &params,
        opts,
    )?;
    out.push(("graph".into(), r));

    let gsm_cfg = GsmConfig { categories: c, height: s, width: s, node_dim: d, high_nodes: 2, rescale_by_c: true };
    let gsm = GsmParams::<f64>::init(gsm_cfg, &mut rng)?;
    let f_head = rand_tensor([c, s, s], &mut rng);
    let r = grad_check_model(
        &gsm,
        |t, p| {
            let mut b = Binder::new(t, true);
            let vars = p.bind("", &mut b);
            let bound = b.finish();
            let x = t.constant(f_head.clone());
            let o = gsm_forward(t, x, &vars, &gsm_cfg)?;
            let a = probe(t, o.rectified, seed)?;
            let z = probe(t, o.reasoning.z_g, seed + 1)?;
            let al = probe(t, o.reasoning.a_low_hat, seed + 2)?;
            let sum = t.add(a, z)?;
            Ok((t.add(sum, al)?, bound))
        },
        opts,
    )?;
    out.push(("gsm".into(), r));

    let lcm_cfg = LcmConfig {
        in_channels: 5,
        categories: c,
        height: s,
        width: s,
        node_dim: d,
        alpha: 1.0,
        lift: ChannelLift::Projection,
        rescale_by_c: true,
    };
    let lcm = LcmParams::<f64>::init(lcm_cfg, &mut rng)?;
    let f = rand_tensor([5, s, s], &mut rng);
    let z_g = rand_tensor([c, d], &mut rng);
    let r = grad_check_model(
        &lcm,
        |t, p| {
            let mut b = Binder::new(t, true);
            let vars = p.bind("", &mut b);
            let bound = b.finish();
            let x = t.constant(f.clone());
            let zg = t.constant(z_g.clone());
            let o = lcm_forward(t, x, &vars, &lcm_cfg, Some(zg))?;
            let a = probe(t, o.rectified, seed)?;
            let z = probe(t, o.reasoning.z_l, seed + 1)?;
            Ok((t.add(a, z)?, bound))
        },
        opts,
    )?;
    out.push(("lcm".into(), r));

    let rect_cfg = RectNetConfig {
        categories: c,
        height: s,
        width: s,
        hidden: 6,
        features: 8,
        node_dim: d,
        high_nodes: 2,
        ..RectNetConfig::default()
    };
    let rnet = RectNetParams::<f64>::init(rect_cfg, &mut rng)?;
    let labels: Vec<u8> = (0..s * s).map(|_| rng.gen_range(0..c as u8)).collect();
    let mask = one_hot::<f64>(&labels, c, s, s)?;
    let image = Tensor::from_fn([3, s, s], |_| rng.gen_range(0.0..1.0));
    let input = assemble_input(&image, &mask)?;
    let target: Vec<u8> = (0..s * s).map(|_| rng.gen_range(0..c as u8)).collect();
    let r = grad_check_model(
        &rnet,
        |t, p| {
            let mut b = Binder::new(t, true);
            let vars = p.bind(&mut b);
            let bound = b.finish();
            let x = t.constant(input.clone());
            let o = rectify_forward(t, &vars, &p.config, x, RectifyOptions::default())?;
            // probing the graph features too keeps the deep GSM parameters
            // well above the finite-difference noise floor
            let mut l = t.cross_entropy(o.logits, &target)?;
            let c = p.config.categories as f64;
            let weights_g = if p.config.rescale_by_c { t.scale(o.theta_g, c)? } else { o.theta_g };
            for (i, v) in [o.z_l, o.z_g, o.theta_l, weights_g].into_iter().enumerate() {
                let pr = probe(t, v, seed + 1 + i as u64)?;
                l = t.add(l, pr)?;
            }
            Ok((l, bound))
        },
        opts,
    )?;
    out.push(("rnet".into(), r));

    let snet = SegNetParams::<f64>::init(SegNetConfig { categories: c, hidden: 6, features: 6 }, &mut rng)?;
    let r = grad_check_model(
        &snet,
        |t, p| {
            let mut b = Binder::new(t, true);
            let vars = p.bind(&mut b);
            let bound = b.finish();
            let x = t.constant(image.clone());
            let y = seg_forward(t, &vars, x)?;
            Ok((t.cross_entropy(y, &target)?, bound))
        },
        opts,
    )?;
    out.push(("snet".into(), r));
    Ok(out)
}
