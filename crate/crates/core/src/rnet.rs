//! Rectification network: backbone, local then global reweighting, decoder.
//!
//! ```text
//! input [(3+c)×H×W] → backbone (strides 1,2,1,2) → F [c'×H/4×W/4]
//!   → LCM: θ̃_l ⊙ F → φ → F_head [c×H/4×W/4] → GSM: θ_g ⊙ F_head
//!   → 1×1 head → up → +conv → up → +conv(· ‖ input) → logits [c×H×W]
//! ```
//!
//! With `two_pass_assist`, the global features of a first pass feed the
//! local weights of a second pass, which recomputes φ and the GSM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{contract, Error, Result};
use crate::gsm::{gsm_reason, GsmConfig, GsmParams, GsmVars};
use crate::lcm::{lcm_reason, ChannelLift, LcmConfig, LcmParams, LcmVars};
use crate::nn::{conv1, conv3, pixel_argmax, pixel_softmax, Conv1, Conv3, LayerVars};
use crate::params::{join, Binder, Bound, Parameterized};
use crate::scalar::Scalar;
use crate::snet::check_size;
use crate::tensor::Tensor;
use crate::train::{fit, TrainConfig, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectNetConfig {
    pub categories: usize,
    pub image_channels: usize,
    /// Input resolution; the graph projections are sized for it.
    pub height: usize,
    pub width: usize,
    /// Width of the first backbone layers.
    pub hidden: usize,
    /// Backbone output channels (c').
    pub features: usize,
    pub node_dim: usize,
    pub high_nodes: usize,
    pub alpha: f64,
    pub lift: ChannelLift,
    /// Scale both modules' channel weights by c so they average one
    /// instead of 1/c.
    pub rescale_by_c: bool,
    pub two_pass_assist: bool,
    /// Initial gain of the path copying the input mask into the logits, so
    /// that an untrained network starts close to returning its input.
    pub mask_skip_gain: f64,
}

impl Default for RectNetConfig {
    fn default() -> Self {
        Self {
            categories: 8,
            image_channels: 3,
            height: 64,
            width: 64,
            hidden: 12,
            features: 16,
            node_dim: 64,
            high_nodes: 3,
            alpha: 1.0,
            lift: ChannelLift::Projection,
            rescale_by_c: true,
            two_pass_assist: true,
            mask_skip_gain: 4.0,
        }
    }
}

impl RectNetConfig {
    pub fn feature_size(&self) -> (usize, usize) {
        (self.height.div_ceil(4), self.width.div_ceil(4))
    }

    pub fn lcm(&self) -> LcmConfig {
        let (h, w) = self.feature_size();
        LcmConfig {
            in_channels: self.features,
            categories: self.categories,
            height: h,
            width: w,
            node_dim: self.node_dim,
            alpha: self.alpha,
            lift: self.lift,
            rescale_by_c: self.rescale_by_c,
        }
    }

    pub fn gsm(&self) -> GsmConfig {
        let (h, w) = self.feature_size();
        GsmConfig {
            categories: self.categories,
            height: h,
            width: w,
            node_dim: self.node_dim,
            high_nodes: self.high_nodes,
            rescale_by_c: self.rescale_by_c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_size(self.height, self.width).map_err(|e| Error::Config(e.to_string()))?;
        if self.hidden == 0 || self.image_channels == 0 {
            return Err(Error::Config("R-Net widths must be positive".into()));
        }
        self.lcm().validate()?;
        self.gsm().validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RectNetParams<T> {
    pub config: RectNetConfig,
    pub backbone: [Conv3<T>; 4],
    pub lcm: LcmParams<T>,
    pub phi1: Conv3<T>,
    pub phi2: Conv3<T>,
    pub gsm: GsmParams<T>,
    pub head: Conv1<T>,
    pub dec: Conv3<T>,
    pub refine: Conv3<T>,
}

#[derive(Debug, Clone)]
pub struct RectNetVars {
    pub backbone: [LayerVars; 4],
    pub lcm: LcmVars,
    pub phi1: LayerVars,
    pub phi2: LayerVars,
    pub gsm: GsmVars,
    pub head: LayerVars,
    pub dec: LayerVars,
    pub refine: LayerVars,
}

const BACKBONE_STRIDES: [usize; 4] = [1, 2, 1, 2];

impl<T: Scalar> RectNetParams<T> {
    pub fn init(config: RectNetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let RectNetConfig { categories: c, image_channels: ic, hidden, features: f, .. } = config;
        let input = ic + c;
        let mut refine = Conv3::init(c + input, c, rng);
        for k in 0..c {
            // centre tap from mask channel k of the input to output k
            let idx = ((k * (c + input) + c + ic + k) * 3 + 1) * 3 + 1;
            refine.kernel.data_mut()[idx] = T::of(config.mask_skip_gain);
        }
        Ok(Self {
            config,
            backbone: [
                Conv3::init(input, hidden, rng),
                Conv3::init(hidden, f, rng),
                Conv3::init(f, f, rng),
                Conv3::init(f, f, rng),
            ],
            lcm: LcmParams::init(config.lcm(), rng)?,
            phi1: Conv3::init(f, f, rng),
            phi2: Conv3::init(f, c, rng),
            gsm: GsmParams::init(config.gsm(), rng)?,
            head: Conv1::init(c, c, rng),
            dec: Conv3::init(c, c, rng),
            refine,
        })
    }

    /// A network of shape `config` holding the weights stored in `ckpt`.
    /// Settings that leave no trace in the shapes (α, lift, rescaling) come
    /// from `config` and must match those used in training.
    pub fn from_checkpoint(ckpt: &Checkpoint, config: RectNetConfig) -> Result<Self> {
        let mut p = Self::init(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        ckpt.restore(&mut p)?;
        Ok(p)
    }

    pub fn bind(&self, b: &mut Binder<'_, T>) -> RectNetVars {
        RectNetVars {
            backbone: [0, 1, 2, 3].map(|i| self.backbone[i].bind(&format!("backbone.{i}"), b)),
            lcm: self.lcm.bind("lcm", b),
            phi1: self.phi1.bind("phi1", b),
            phi2: self.phi2.bind("phi2", b),
            gsm: self.gsm.bind("gsm", b),
            head: self.head.bind("head", b),
            dec: self.dec.bind("dec", b),
            refine: self.refine.bind("refine", b),
        }
    }

    /// Sets every convolution weight and bias to zero, leaving the graph
    /// modules as they are.
    pub fn zero_convolutions(&mut self) {
        for l in self.backbone.iter_mut().chain([&mut self.phi1, &mut self.phi2, &mut self.dec, &mut self.refine]) {
            *l = Conv3::zeros(l.in_channels(), l.out_channels());
        }
        let c = self.config.categories;
        self.head = Conv1::zeros(c, c);
    }
}

impl<T: Scalar> Parameterized<T> for RectNetParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, l) in self.backbone.iter().enumerate() {
            l.visit(&join(prefix, &format!("backbone.{i}")), f);
        }
        self.lcm.visit(&join(prefix, "lcm"), f);
        self.phi1.visit(&join(prefix, "phi1"), f);
        self.phi2.visit(&join(prefix, "phi2"), f);
        self.gsm.visit(&join(prefix, "gsm"), f);
        self.head.visit(&join(prefix, "head"), f);
        self.dec.visit(&join(prefix, "dec"), f);
        self.refine.visit(&join(prefix, "refine"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, l) in self.backbone.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("backbone.{i}")), f);
        }
        self.lcm.visit_mut(&join(prefix, "lcm"), f);
        self.phi1.visit_mut(&join(prefix, "phi1"), f);
        self.phi2.visit_mut(&join(prefix, "phi2"), f);
        self.gsm.visit_mut(&join(prefix, "gsm"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
        self.dec.visit_mut(&join(prefix, "dec"), f);
        self.refine.visit_mut(&join(prefix, "refine"), f);
    }
}

/// Concatenates an image and a per-pixel class distribution, image first.
pub fn assemble_input<T: Scalar>(image: &Tensor<T>, mask_probs: &Tensor<T>) -> Result<Tensor<T>> {
    let (ic, h, w) = image.dims3()?;
    let (c, mh, mw) = mask_probs.dims3()?;
    if (h, w) != (mh, mw) {
        return Err(Error::Data(format!("image is {h}x{w} but mask is {mh}x{mw}")));
    }
    let np = h * w;
    let m = mask_probs.data();
    for p in 0..np {
        let s: f64 = (0..c).map(|k| m[k * np + p].as_f64()).sum();
        if !(s - 1.0).abs().le(&1e-5) || (0..c).any(|k| m[k * np + p] < T::zero()) {
            return Err(Error::Data(format!("mask pixel {p} is not a distribution (sums to {s})")));
        }
    }
    let mut data = image.data().to_vec();
    data.extend_from_slice(m);
    Tensor::new([ic + c, h, w], data)
}

/// Test hooks for [`rectify_forward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RectifyOptions {
    /// Apply all-ones channel weights instead of θ_l and θ_g. The weights
    /// are still computed and reported.
    pub unit_weights: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct RectifyOutput {
    /// `[c×H×W]`
    pub logits: Var,
    /// Local category weights of the final pass `[c]`.
    pub theta_l: Var,
    /// Global category weights of the final pass `[c]`.
    pub theta_g: Var,
    pub z_l: Var,
    pub z_g: Var,
}

fn check_input<T: Scalar>(tape: &Tape<T>, input: Var, cfg: &RectNetConfig) -> Result<()> {
    let (ch, h, w) = tape.value(input).dims3()?;
    if ch != cfg.image_channels + cfg.categories || (h, w) != (cfg.height, cfg.width) {
        return Err(contract!(
            "R-Net input is [{ch}x{h}x{w}], configured for [{}x{}x{}]",
            cfg.image_channels + cfg.categories,
            cfg.height,
            cfg.width
        ));
    }
    Ok(())
}

fn backbone<T: Scalar>(tape: &mut Tape<T>, vars: &RectNetVars, input: Var) -> Result<Var> {
    let mut x = input;
    for (l, &s) in vars.backbone.iter().zip(&BACKBONE_STRIDES) {
        x = conv3(tape, l, x, s, true)?;
    }
    Ok(x)
}

fn phi<T: Scalar>(tape: &mut Tape<T>, vars: &RectNetVars, f: Var) -> Result<Var> {
    let x = conv3(tape, &vars.phi1, f, 1, true)?;
    let x = conv3(tape, &vars.phi2, x, 1, false)?;
    Ok(tape.tag(x, "rnet.phi"))
}

fn decode<T: Scalar>(tape: &mut Tape<T>, vars: &RectNetVars, f_head: Var, input: Var) -> Result<Var> {
    let x = conv1(tape, &vars.head, f_head)?;
    let up = tape.upsample_nearest(x)?;
    let d = conv3(tape, &vars.dec, up, 1, false)?;
    let x = tape.add(up, d)?;
    let up = tape.upsample_nearest(x)?;
    let cat = tape.concat_channels(&[up, input])?;
    let r = conv3(tape, &vars.refine, cat, 1, false)?;
    tape.add(up, r)
}

fn apply_weights<T: Scalar>(tape: &mut Tape<T>, weights: Var, x: Var, unit: bool) -> Result<Var> {
    let w = if unit { tape.constant(Tensor::ones(tape.shape(weights).to_vec())) } else { weights };
    tape.channel_scale(w, x)
}

/// The cascade `θ_g ⊙ φ(θ̃_l ⊙ F)` followed by the decoder.
pub fn rectify_forward<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &RectNetVars,
    cfg: &RectNetConfig,
    input: Var,
    opts: RectifyOptions,
) -> Result<RectifyOutput> {
    check_input(tape, input, cfg)?;
    let f = backbone(tape, vars, input)?;
    let (lcm_cfg, gsm_cfg) = (cfg.lcm(), cfg.gsm());
    let passes = if cfg.two_pass_assist { 2 } else { 1 };
    let mut z_g = None;
    let mut out = None;
    for _ in 0..passes {
        let local = lcm_reason(tape, f, &vars.lcm, &lcm_cfg, z_g)?;
        let f_l = apply_weights(tape, local.channel_weights, f, opts.unit_weights)?;
        tape.tag(f_l, "lcm.reweighted");
        let f_head = phi(tape, vars, f_l)?;
        let global = gsm_reason(tape, f_head, &vars.gsm, &gsm_cfg)?;
        let f_g = apply_weights(tape, global.channel_weights, f_head, opts.unit_weights)?;
        tape.tag(f_g, "gsm.reweighted");
        z_g = Some(global.z_g);
        out = Some((f_g, local, global));
    }
    let (f_g, local, global) = out.expect("at least one pass");
    let logits = decode(tape, vars, f_g, input)?;
    Ok(RectifyOutput { logits, theta_l: local.theta_l, theta_g: global.theta_g, z_l: local.z_l, z_g: global.z_g })
}

/// Backbone, φ, head and decoder with no reweighting at all.
pub fn plain_forward<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &RectNetVars,
    cfg: &RectNetConfig,
    input: Var,
) -> Result<Var> {
    check_input(tape, input, cfg)?;
    let f = backbone(tape, vars, input)?;
    let f_head = phi(tape, vars, f)?;
    decode(tape, vars, f_head, input)
}

/// Inference: rectified class distribution and argmax labels.
pub fn rectify<T: Scalar>(params: &RectNetParams<T>, input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u8>)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut Binder::new(&mut tape, false));
    let x = tape.constant(input.clone());
    let out = rectify_forward(&mut tape, &vars, &params.config, x, RectifyOptions::default())?;
    let logits = tape.value(out.logits);
    Ok((pixel_softmax(logits)?, pixel_argmax(logits)?))
}

/// One training triple: assembled input and the ground truth it should map to.
#[derive(Debug, Clone, PartialEq)]
pub struct RectTriple<T> {
    pub input: Tensor<T>,
    pub target: Vec<u8>,
}

/// Cross-entropy training against ground truth; the low-level adjacency is
/// symmetrized after every step.
pub fn train_rectifier<T: Scalar>(
    params: &mut RectNetParams<T>,
    triples: &[RectTriple<T>],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    fit(
        params,
        triples.len(),
        cfg,
        |tape, p, i, _rng| {
            let mut b = Binder::new(tape, true);
            let vars = p.bind(&mut b);
            let bound: Bound = b.finish();
            let x = tape.constant(triples[i].input.clone());
            let out = rectify_forward(tape, &vars, &p.config, x, RectifyOptions::default())?;
            let loss = tape.cross_entropy(out.logits, &triples[i].target)?;
            Ok((loss, bound))
        },
        |p| p.gsm.symmetrize_adjacency(),
    )
}
