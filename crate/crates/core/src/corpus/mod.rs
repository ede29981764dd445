//! Procedural stick-figure parsing corpus.
//!
//! Figures are drawn as filled capsules, one per body part, over a noisy
//! background. Left and right limbs share a colour, so telling them apart
//! needs the figure's orientation: a front view shows a face, a back view
//! shows hair, and the two views mirror which side the left limbs are on.

mod augment;
mod inject;
mod io;
mod render;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use augment::{flip_horizontal, scale_crop, Augment};
pub use inject::{inject_global_error, inject_local_error};
pub use io::{read_pgm, read_ppm, write_pgm, write_ppm};
pub use render::{render, sample_pose, Capsule, Part, Pose};

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::Data(format!("{} bytes do not form a {width}x{height} RGB image", data.len())));
        }
        Ok(Self { width, height, data })
    }

    /// Planar `[3×h×w]` tensor with values `byte / 255`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let np = self.width * self.height;
        let mut out = vec![T::zero(); 3 * np];
        for p in 0..np {
            for ch in 0..3 {
                out[ch * np + p] = T::of(self.data[p * 3 + ch] as f64 / 255.0);
            }
        }
        Tensor::new([3, self.height, self.width], out).expect("sizes match")
    }
}

/// Per-pixel category ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Data(format!("{} values do not form a {width}x{height} label map", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, id: u8) -> Self {
        Self { width, height, data: vec![id; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn check_range(&self, categories: usize) -> Result<()> {
        match self.data.iter().find(|&&v| v as usize >= categories) {
            Some(v) => Err(Error::Data(format!("label {v} out of range for {categories} categories"))),
            None => Ok(()),
        }
    }

    /// Number of pixels that differ from `other`.
    pub fn diff_count(&self, other: &LabelMap) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| a != b).count()
    }
}

/// Category names with left/right pairing and local confusion metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTable {
    pub names: Vec<String>,
    /// Left/right pairs as `(left, right)`.
    pub pairs: Vec<(u8, u8)>,
    /// `confusion[k]` is the category a local error turns `k` into.
    pub confusion: Vec<u8>,
    /// Category of each rendered body part, indexed by [`Part`].
    part_class: [u8; 7],
}

impl CategoryTable {
    /// Table for `c` categories. Eight is the full set; smaller counts merge
    /// parts (down to background, body, left, right).
    pub fn new(c: usize) -> Result<Self> {
        type Layout = (&'static [&'static str], [u8; 7], Vec<(u8, u8)>, Vec<u8>);
        let (names, part_class, pairs, confusion): Layout = match c {
            // part order: head, torso, left arm, right arm, left leg, right leg, clothes
            4 => (&["background", "body", "left", "right"], [1, 1, 2, 3, 2, 3, 1], vec![(2, 3)], vec![0, 2, 1, 1]),
            5 => (
                &["background", "head", "body", "left", "right"],
                [1, 2, 3, 4, 3, 4, 2],
                vec![(3, 4)],
                vec![0, 2, 1, 2, 2],
            ),
            6 => (
                &["background", "head", "torso", "left-limbs", "right-limbs", "clothes"],
                [1, 2, 3, 4, 3, 4, 5],
                vec![(3, 4)],
                vec![0, 2, 5, 5, 5, 2],
            ),
            7 => (
                &["background", "head", "torso", "left-arm", "right-arm", "left-leg", "right-leg"],
                [1, 2, 3, 4, 5, 6, 2],
                vec![(3, 4), (5, 6)],
                vec![0, 2, 1, 2, 2, 2, 2],
            ),
            8 => (
                &["background", "head", "torso", "left-arm", "right-arm", "left-leg", "right-leg", "clothes"],
                [1, 2, 3, 4, 5, 6, 7],
                vec![(3, 4), (5, 6)],
                vec![0, 2, 7, 7, 7, 7, 7, 2],
            ),
            _ => return Err(Error::Config(format!("category count must be between 4 and 8, got {c}"))),
        };
        Ok(Self { names: names.iter().map(|s| s.to_string()).collect(), pairs, confusion, part_class })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn class_of(&self, part: Part) -> u8 {
        self.part_class[part as usize]
    }

    /// Partner of a paired category, if any.
    pub fn partner(&self, id: u8) -> Option<u8> {
        self.pairs.iter().find_map(|&(l, r)| match id {
            _ if id == l => Some(r),
            _ if id == r => Some(l),
            _ => None,
        })
    }

    /// Permutation exchanging every left/right pair.
    pub fn swap_table(&self) -> Vec<u8> {
        (0..self.len() as u8).map(|k| self.partner(k).unwrap_or(k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Labeled,
    Unlabeled,
    /// Held-out labeled samples used only for evaluation.
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "labeled" => Ok(Split::Labeled),
            "unlabeled" => Ok(Split::Unlabeled),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub split: Split,
    pub image: Image,
    /// Ground truth; always `None` for unlabeled samples.
    pub label: Option<LabelMap>,
    pub pseudo_label: Option<LabelMap>,
    pub rectified_label: Option<LabelMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub size: usize,
    pub categories: usize,
    pub seed: u64,
    /// Probability that a figure is seen from behind.
    pub back_view: f64,
    /// Probability that any single limb is missing.
    pub missing_limb: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_labeled: 64,
            n_unlabeled: 448,
            n_test: 128,
            size: 64,
            categories: 8,
            seed: 0,
            back_view: 0.3,
            missing_limb: 0.08,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.categories < 4 {
            return Err(Error::Config(format!(
                "need at least 4 categories (background, torso, left, right), got {}",
                self.categories
            )));
        }
        if self.n_labeled + self.n_unlabeled + self.n_test == 0 {
            return Err(Error::Config("corpus would be empty".into()));
        }
        if self.size < 16 || !self.size.is_multiple_of(4) {
            return Err(Error::Config(format!("image size must be >= 16 and divisible by 4, got {}", self.size)));
        }
        for (name, p) in [("back_view", self.back_view), ("missing_limb", self.missing_limb)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be a probability, got {p}")));
            }
        }
        Ok(())
    }
}

/// A set of samples sharing one category table.
///
/// Ground truth of unlabeled samples is never stored here; it lives in
/// [`HiddenLabels`], which only evaluation code receives.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub categories: CategoryTable,
    pub samples: Vec<Sample>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn find(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

/// Evaluation-only ground truth for unlabeled samples, keyed by sample id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HiddenLabels(pub BTreeMap<String, LabelMap>);

/// RNG for one sample: the corpus seed selects the key, the index the stream.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generates a corpus. Samples are ordered labeled, unlabeled, test.
pub fn generate(spec: &CorpusSpec) -> Result<(Corpus, HiddenLabels)> {
    spec.validate()?;
    let categories = CategoryTable::new(spec.categories)?;
    let mut samples = Vec::new();
    let mut hidden = HiddenLabels::default();
    let splits = std::iter::repeat_n(Split::Labeled, spec.n_labeled)
        .chain(std::iter::repeat_n(Split::Unlabeled, spec.n_unlabeled))
        .chain(std::iter::repeat_n(Split::Test, spec.n_test));
    for (i, split) in splits.enumerate() {
        let mut rng = sample_rng(spec.seed, i as u64);
        let pose = sample_pose(spec, &mut rng);
        let (image, label) = render(&pose, spec.size, &categories, &mut rng);
        let id = format!("s{i:05}");
        let label = if split == Split::Unlabeled {
            hidden.0.insert(id.clone(), label);
            None
        } else {
            Some(label)
        };
        samples.push(Sample { id, split, image, label, pseudo_label: None, rectified_label: None });
    }
    Ok((Corpus { categories, samples }, hidden))
}

pub use io::{load_corpus, load_hidden, save_corpus};
