//! Small encoder/decoder segmentation network.
//!
//! ```text
//! image [3×H×W] → conv s2 → conv s2 → conv → 1×1 head [c×H/4×W/4]
//!   → up → +conv → up → +conv(· ‖ image) → logits [c×H×W]
//! ```

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::corpus::{Augment, Image, LabelMap};
use crate::error::{contract, Error, Result};
use crate::nn::{conv1, conv3, pixel_argmax, pixel_softmax, Conv1, Conv3, LayerVars};
use crate::params::{join, Binder, Bound, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{fit, TrainConfig, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegNetConfig {
    pub categories: usize,
    /// Channels after the first stride-2 stage.
    pub hidden: usize,
    /// Channels of the quarter-resolution features (c').
    pub features: usize,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self { categories: 8, hidden: 16, features: 16 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegNetParams<T> {
    pub config: SegNetConfig,
    pub enc1: Conv3<T>,
    pub enc2: Conv3<T>,
    pub enc3: Conv3<T>,
    pub head: Conv1<T>,
    pub dec: Conv3<T>,
    pub refine: Conv3<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct SegNetVars {
    pub enc1: LayerVars,
    pub enc2: LayerVars,
    pub enc3: LayerVars,
    pub head: LayerVars,
    pub dec: LayerVars,
    pub refine: LayerVars,
}

impl<T: Scalar> SegNetParams<T> {
    pub fn init(config: SegNetConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.categories < 2 || config.hidden == 0 || config.features == 0 {
            return Err(Error::Config(format!("invalid segmentation network config {config:?}")));
        }
        let c = config.categories;
        Ok(Self {
            config,
            enc1: Conv3::init(3, config.hidden, rng),
            enc2: Conv3::init(config.hidden, config.features, rng),
            enc3: Conv3::init(config.features, config.features, rng),
            head: Conv1::init(config.features, c, rng),
            dec: Conv3::init(c, c, rng),
            refine: Conv3::init(c + 3, c, rng),
        })
    }

    /// All weights and biases zero.
    pub fn zeros(config: SegNetConfig) -> Self {
        let c = config.categories;
        Self {
            config,
            enc1: Conv3::zeros(3, config.hidden),
            enc2: Conv3::zeros(config.hidden, config.features),
            enc3: Conv3::zeros(config.features, config.features),
            head: Conv1::zeros(config.features, c),
            dec: Conv3::zeros(c, c),
            refine: Conv3::zeros(c + 3, c),
        }
    }

    /// Rebuilds a network from a checkpoint, reading its configuration off
    /// the stored shapes.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let dim = |name: &str, axis: usize| {
            ckpt.entries
                .iter()
                .find(|(n, _)| n == name)
                .and_then(|(_, t)| t.shape().get(axis).copied())
                .ok_or_else(|| Error::Data(format!("checkpoint has no S-Net tensor {name}")))
        };
        let config = SegNetConfig {
            categories: dim("head.weight", 0)?,
            hidden: dim("enc1.kernel", 0)?,
            features: dim("enc2.kernel", 0)?,
        };
        if config.categories < 2 || config.hidden == 0 || config.features == 0 {
            return Err(Error::Data(format!("checkpoint describes an invalid S-Net {config:?}")));
        }
        let mut p = Self::zeros(config);
        ckpt.restore(&mut p)?;
        Ok(p)
    }

    pub fn bind(&self, b: &mut Binder<'_, T>) -> SegNetVars {
        SegNetVars {
            enc1: self.enc1.bind("enc1", b),
            enc2: self.enc2.bind("enc2", b),
            enc3: self.enc3.bind("enc3", b),
            head: self.head.bind("head", b),
            dec: self.dec.bind("dec", b),
            refine: self.refine.bind("refine", b),
        }
    }
}

impl<T: Scalar> Parameterized<T> for SegNetParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.enc1.visit(&join(prefix, "enc1"), f);
        self.enc2.visit(&join(prefix, "enc2"), f);
        self.enc3.visit(&join(prefix, "enc3"), f);
        self.head.visit(&join(prefix, "head"), f);
        self.dec.visit(&join(prefix, "dec"), f);
        self.refine.visit(&join(prefix, "refine"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.enc1.visit_mut(&join(prefix, "enc1"), f);
        self.enc2.visit_mut(&join(prefix, "enc2"), f);
        self.enc3.visit_mut(&join(prefix, "enc3"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
        self.dec.visit_mut(&join(prefix, "dec"), f);
        self.refine.visit_mut(&join(prefix, "refine"), f);
    }
}

pub(crate) fn check_size(h: usize, w: usize) -> Result<()> {
    if h < 16 || w < 16 || !h.is_multiple_of(4) || !w.is_multiple_of(4) {
        return Err(contract!("input must be at least 16x16 with sides divisible by 4, got {h}x{w}"));
    }
    Ok(())
}

/// Records the network on `tape`; returns logits `[c×H×W]`.
pub fn seg_forward<T: Scalar>(tape: &mut Tape<T>, vars: &SegNetVars, image: Var) -> Result<Var> {
    let (ch, h, w) = tape.value(image).dims3()?;
    if ch != 3 {
        return Err(contract!("segmentation input needs 3 channels, got {ch}"));
    }
    check_size(h, w)?;
    let x = conv3(tape, &vars.enc1, image, 2, true)?;
    let x = conv3(tape, &vars.enc2, x, 2, true)?;
    let x = conv3(tape, &vars.enc3, x, 1, true)?;
    let head = conv1(tape, &vars.head, x)?;
    tape.tag(head, "snet.head");
    let up = tape.upsample_nearest(head)?;
    let d = conv3(tape, &vars.dec, up, 1, false)?;
    let x = tape.add(up, d)?;
    let up = tape.upsample_nearest(x)?;
    let cat = tape.concat_channels(&[up, image])?;
    let r = conv3(tape, &vars.refine, cat, 1, false)?;
    tape.add(up, r)
}

/// Inference-only logits.
pub fn seg_logits<T: Scalar>(params: &SegNetParams<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut Binder::new(&mut tape, false));
    let x = tape.constant(image.clone());
    let y = seg_forward(&mut tape, &vars, x)?;
    Ok(tape.value(y).clone())
}

/// Per-pixel class distribution and argmax labels (ties to the lowest id).
pub fn predict_mask<T: Scalar>(params: &SegNetParams<T>, image: &Tensor<T>) -> Result<(Tensor<T>, Vec<u8>)> {
    let logits = seg_logits(params, image)?;
    let probs = pixel_softmax(&logits)?;
    let labels = pixel_argmax(&logits)?;
    Ok((probs, labels))
}

/// One labeled training pair.
#[derive(Debug, Clone, Copy)]
pub struct LabeledImage<'a> {
    pub image: &'a Image,
    pub label: &'a LabelMap,
}

/// Cross-entropy training. `swap` maps each category to its left/right
/// partner and is used when flips are enabled.
pub fn train_segmenter<T: Scalar>(
    params: &mut SegNetParams<T>,
    data: &[LabeledImage<'_>],
    swap: &[u8],
    cfg: &TrainConfig,
    augment: Augment,
) -> Result<TrainLog> {
    let c = params.config.categories;
    for d in data {
        d.label.check_range(c)?;
    }
    let plain: Vec<Tensor<T>> =
        if augment.is_off() { data.iter().map(|d| d.image.to_tensor()).collect() } else { Vec::new() };
    fit(
        params,
        data.len(),
        cfg,
        |tape, p, i, rng| {
            let (image, labels) = if augment.is_off() {
                (plain[i].clone(), data[i].label.data.clone())
            } else {
                let (img, lab) = augment.apply(data[i].image, data[i].label, swap, rng);
                (img.to_tensor(), lab.data)
            };
            let mut b = Binder::new(tape, true);
            let vars = p.bind(&mut b);
            let bound: Bound = b.finish();
            let x = tape.constant(image);
            let logits = seg_forward(tape, &vars, x)?;
            let loss = tape.cross_entropy(logits, &labels)?;
            Ok((loss, bound))
        },
        |_| Ok(()),
    )
}
