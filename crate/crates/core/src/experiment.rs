//! Direct rectification: train an R-Net on ground truth corrupted with
//! synthetic errors and measure how much error it removes on held-out
//! samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{generate, inject_global_error, inject_local_error, CorpusSpec, LabelMap, Sample, Split};
use crate::error::{Error, Result};
use crate::nn::one_hot;
use crate::optim::SgdConfig;
use crate::rnet::{assemble_input, rectify, train_rectifier, RectNetConfig, RectNetParams, RectTriple};
use crate::train::{TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq)]
pub struct DirectRectification {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub size: usize,
    pub categories: usize,
    pub p_swap: f64,
    pub k_spots: usize,
    pub radius: usize,
    pub rect: RectNetConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
}

impl Default for DirectRectification {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 256,
            n_test: 128,
            size: 64,
            categories: 8,
            p_swap: 0.5,
            k_spots: 3,
            radius: 3,
            rect: RectNetConfig::default(),
            epochs: 40,
            batch_size: 4,
            sgd: SgdConfig::PRESET,
        }
    }
}

/// Pixel error of corrupted masks before and after rectification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReduction {
    pub pixels: usize,
    pub corrupted_errors: usize,
    pub rectified_errors: usize,
}

impl ErrorReduction {
    pub fn corrupted_rate(&self) -> f64 {
        self.corrupted_errors as f64 / self.pixels as f64
    }

    pub fn rectified_rate(&self) -> f64 {
        self.rectified_errors as f64 / self.pixels as f64
    }

    /// Fraction of the corrupted-pixel error removed; negative when the
    /// network adds error.
    pub fn relative_reduction(&self) -> f64 {
        if self.corrupted_errors == 0 {
            return 0.0;
        }
        1.0 - self.rectified_errors as f64 / self.corrupted_errors as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectRectificationReport {
    pub global: ErrorReduction,
    pub local: ErrorReduction,
    pub log: TrainLog,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Corruption {
    Global,
    Local,
    Both,
}

fn truth(s: &Sample) -> Result<&LabelMap> {
    s.label.as_ref().ok_or_else(|| Error::Data(format!("sample {} has no label", s.id)))
}

/// Training masks carry both error types; each type is evaluated on its own.
///
/// Stream seeds: corpus `seed`, training corruption `seed + 1`, R-Net init
/// `seed + 2`, sample order `seed + 3`, test corruption `seed + 4`.
pub fn run_direct_rectification(exp: &DirectRectification) -> Result<DirectRectificationReport> {
    if exp.n_train == 0 || exp.n_test == 0 {
        return Err(Error::Config("direct rectification needs training and test samples".into()));
    }
    let (corpus, _) = generate(&CorpusSpec {
        n_labeled: exp.n_train,
        n_unlabeled: 0,
        n_test: exp.n_test,
        size: exp.size,
        categories: exp.categories,
        seed: exp.seed,
        ..CorpusSpec::default()
    })?;
    let table = &corpus.categories;
    let corrupt = |gt: &LabelMap, kind: Corruption, rng: &mut ChaCha8Rng| -> Result<LabelMap> {
        let g = match kind {
            Corruption::Local => gt.clone(),
            _ => inject_global_error(gt, &table.pairs, exp.p_swap, rng)?,
        };
        match kind {
            Corruption::Global => Ok(g),
            _ => inject_local_error(&g, exp.k_spots, exp.radius, &table.confusion, rng),
        }
    };
    let triple = |s: &Sample, gt: &LabelMap, mask: &LabelMap| -> Result<RectTriple<f64>> {
        let probs = one_hot(&mask.data, exp.categories, mask.height, mask.width)?;
        Ok(RectTriple { input: assemble_input(&s.image.to_tensor(), &probs)?, target: gt.data.clone() })
    };

    let mut rng = ChaCha8Rng::seed_from_u64(exp.seed.wrapping_add(1));
    let mut train = Vec::with_capacity(exp.n_train);
    for s in corpus.split(Split::Labeled) {
        let gt = truth(s)?;
        train.push(triple(s, gt, &corrupt(gt, Corruption::Both, &mut rng)?)?);
    }
    let rect = RectNetConfig { categories: exp.categories, height: exp.size, width: exp.size, ..exp.rect };
    let mut params = RectNetParams::<f64>::init(rect, &mut ChaCha8Rng::seed_from_u64(exp.seed.wrapping_add(2)))?;
    let train_cfg =
        TrainConfig { epochs: exp.epochs, batch_size: exp.batch_size, sgd: exp.sgd, seed: exp.seed.wrapping_add(3) };
    let log = train_rectifier(&mut params, &train, &train_cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(exp.seed.wrapping_add(4));
    let mut tally = [Corruption::Global, Corruption::Local].map(|_| ErrorReduction {
        pixels: 0,
        corrupted_errors: 0,
        rectified_errors: 0,
    });
    for s in corpus.split(Split::Test) {
        let gt = truth(s)?;
        for (t, kind) in tally.iter_mut().zip([Corruption::Global, Corruption::Local]) {
            let mask = corrupt(gt, kind, &mut rng)?;
            let (_, labels) = rectify(&params, &triple(s, gt, &mask)?.input)?;
            t.pixels += gt.data.len();
            t.corrupted_errors += mask.diff_count(gt);
            t.rectified_errors += labels.iter().zip(&gt.data).filter(|(a, b)| a != b).count();
        }
    }
    let [global, local] = tally;
    Ok(DirectRectificationReport { global, local, log })
}
