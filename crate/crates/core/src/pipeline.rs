//! The self-learning loop: train S-Net on labeled data, pseudo-label every
//! image, train R-Net on labeled triples, rectify the unlabeled
//! pseudo-labels and retrain S-Net on the union.
//!
//! Run directory layout:
//!
//! ```text
//! config.txt                    key=value, see [`PipelineConfig::to_text`]
//! metrics.tsv                   stage <TAB> class <TAB> metric <TAB> value
//! run.log                       stage timings (the only non-deterministic file)
//! checkpoints/rN-STAGE.grn      baseline, rnet, raw_retrain, rectified_retrain
//! pseudo/rN/ID.pgm              S-Net argmax labels of labeled and unlabeled images
//! rectified/rN/ID.pgm           R-Net output for unlabeled images
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::PipelineConfig;
use crate::corpus::{sample_rng, write_pgm, Augment, Corpus, LabelMap, Sample, Split};
use crate::error::{Error, Result, Stage};
use crate::metrics::{report, ConfusionMatrix, MetricsReport, Protocol};
use crate::nn::one_hot;
use crate::params::Parameterized;
use crate::rnet::{assemble_input, rectify, train_rectifier, RectNetConfig, RectNetParams, RectTriple};
use crate::snet::{predict_mask, train_segmenter, LabeledImage, SegNetParams};
use crate::tensor::Tensor;
use crate::train::TrainConfig;

/// S-Net output for one image.
#[derive(Debug, Clone)]
pub struct PseudoLabel {
    /// Per-pixel class distribution `[c×H×W]`.
    pub probs: Tensor<f64>,
    pub label: LabelMap,
}

impl PseudoLabel {
    /// A hard label map as a one-hot distribution.
    pub fn from_label(label: LabelMap, categories: usize) -> Result<Self> {
        label.check_range(categories)?;
        let probs = one_hot(&label.data, categories, label.height, label.width)?;
        Ok(Self { probs, label })
    }
}

/// Metrics of one evaluated network.
#[derive(Debug, Clone)]
pub struct StageMetrics {
    pub stage: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    /// S-Net trained on labeled data only (S').
    pub baseline: SegNetParams<f64>,
    /// Final retrained S-Net (S'').
    pub retrained: SegNetParams<f64>,
    pub rnet: RectNetParams<f64>,
    /// Pseudo-labels of the last round, keyed like `corpus.samples`.
    pub pseudo: Vec<(String, LabelMap)>,
    /// Rectified labels of the last round, unlabeled samples only.
    pub rectified: Vec<(String, LabelMap)>,
    pub metrics: Vec<StageMetrics>,
}

impl PipelineRun {
    pub fn metric(&self, stage: &str) -> Option<&MetricsReport> {
        self.metrics.iter().find(|m| m.stage == stage).map(|m| &m.report)
    }
}

/// Where a run keeps its artifacts, and whether existing ones are reused.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
    pub resume: bool,
}

/// Independent seeds for each training stage, all derived from one seed.
#[derive(Debug, Clone, Copy)]
struct StageSeeds {
    seg_init: u64,
    seg_order: u64,
    rect_init: u64,
    rect_order: u64,
    retrain_init: u64,
    retrain_order: u64,
}

impl StageSeeds {
    fn new(seed: u64, round: usize) -> Self {
        let mut rng = sample_rng(seed, 1_000 + round as u64);
        let mut next = || rng.next_u64();
        Self {
            seg_init: next(),
            seg_order: next(),
            rect_init: next(),
            rect_order: next(),
            retrain_init: next(),
            retrain_order: next(),
        }
    }
}

fn stage<T>(stage: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.at_stage(stage))
}

/// Runs S-Net over `samples`, in parallel on up to `threads` workers.
/// Results come back in input order.
pub fn pseudo_label(params: &SegNetParams<f64>, samples: &[&Sample], threads: usize) -> Result<Vec<PseudoLabel>> {
    par_map(samples, threads, |s| {
        let (probs, labels) = predict_mask(params, &s.image.to_tensor())?;
        Ok(PseudoLabel { probs, label: LabelMap::new(s.image.width, s.image.height, labels)? })
    })
}

/// R-Net input for an image and its pseudo-label; `hard` replaces the
/// distribution by a one-hot encoding of its argmax.
pub fn rect_input(sample: &Sample, pseudo: &PseudoLabel, hard: bool) -> Result<Tensor<f64>> {
    let mask = if hard {
        let (c, h, w) = pseudo.probs.dims3()?;
        one_hot(&pseudo.label.data, c, h, w)?
    } else {
        pseudo.probs.clone()
    };
    assemble_input(&sample.image.to_tensor(), &mask)
}

/// Argmax of the R-Net output for every sample, in input order.
pub fn rectify_unlabeled(
    rnet: &RectNetParams<f64>,
    samples: &[&Sample],
    pseudo: &[PseudoLabel],
    hard: bool,
    threads: usize,
) -> Result<Vec<LabelMap>> {
    if samples.len() != pseudo.len() {
        return Err(Error::Data(format!("{} samples but {} pseudo-labels", samples.len(), pseudo.len())));
    }
    let pairs: Vec<(&Sample, &PseudoLabel)> = samples.iter().copied().zip(pseudo).collect();
    par_map(&pairs, threads, |(s, p)| {
        let (_, labels) = rectify(rnet, &rect_input(s, p, hard)?)?;
        LabelMap::new(s.image.width, s.image.height, labels)
    })
}

fn par_map<I: Sync, O: Send>(items: &[I], threads: usize, f: impl Fn(&I) -> Result<O> + Sync) -> Result<Vec<O>> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let parts: Vec<Result<Vec<O>>> = std::thread::scope(|scope| {
        let handles: Vec<_> =
            items.chunks(chunk).map(|c| scope.spawn(|| c.iter().map(&f).collect::<Result<Vec<O>>>())).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Confusion-matrix evaluation of an S-Net on every test sample.
pub fn evaluate(params: &SegNetParams<f64>, test: &[&Sample], cfg: &PipelineConfig) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Data("corpus has no test samples to evaluate on".into()));
    }
    let preds = pseudo_label(params, test, cfg.threads)?;
    let gts = test
        .iter()
        .map(|s| s.label.as_ref().ok_or_else(|| Error::Data(format!("test sample {} has no label", s.id))))
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<&LabelMap> = preds.iter().map(|p| &p.label).collect();
    evaluate_labels(&preds, &gts, params.config.categories, cfg.protocol)
}

/// Scores predicted label maps against ground truth, pairwise.
pub fn evaluate_labels(
    preds: &[&LabelMap],
    gts: &[&LabelMap],
    categories: usize,
    protocol: Protocol,
) -> Result<MetricsReport> {
    if preds.len() != gts.len() {
        return Err(Error::Data(format!("{} predictions for {} ground-truth maps", preds.len(), gts.len())));
    }
    let mut cm = ConfusionMatrix::new(categories);
    for (p, g) in preds.iter().zip(gts) {
        if (p.width, p.height) != (g.width, g.height) {
            return Err(Error::Data(format!(
                "prediction is {}x{}, ground truth {}x{}",
                p.width, p.height, g.width, g.height
            )));
        }
        cm.accumulate(&p.data, &g.data)?;
    }
    report(&cm, protocol)
}

struct Artifacts {
    dir: Option<RunDir>,
    log: String,
}

impl Artifacts {
    fn path(&self, rel: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.path.join(rel))
    }

    /// Loads `rel` when resuming and it exists; otherwise trains and saves.
    fn params<P: Parameterized<f64>>(
        &mut self,
        rel: &str,
        mut params: P,
        train: impl FnOnce(&mut P) -> Result<()>,
    ) -> Result<P> {
        let start = Instant::now();
        let path = self.path(rel);
        match (&path, &self.dir) {
            (Some(p), Some(d)) if d.resume && p.exists() => {
                Checkpoint::load(p)?.restore(&mut params)?;
                writeln!(self.log, "{rel}\tresumed").ok();
                return Ok(params);
            }
            _ => {}
        }
        train(&mut params)?;
        if let Some(p) = path {
            Checkpoint::from_params(&params).save(&p)?;
        }
        writeln!(self.log, "{rel}\t{:.3}s", start.elapsed().as_secs_f64()).ok();
        Ok(params)
    }

    fn labels(&self, sub: &str, ids: impl Iterator<Item = (String, LabelMap)>) -> Result<Vec<(String, LabelMap)>> {
        let out: Vec<_> = ids.collect();
        if let Some(dir) = self.path(sub) {
            fs::create_dir_all(&dir)?;
            for (id, l) in &out {
                write_pgm(&dir.join(format!("{id}.pgm")), l)?;
            }
        }
        Ok(out)
    }
}

fn prepare_dir(dir: &RunDir, cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(dir.path.join("checkpoints"))?;
    let text = cfg.to_text();
    let path = dir.path.join("config.txt");
    if dir.resume && path.exists() {
        let old = fs::read_to_string(&path)?;
        if old != text {
            return Err(Error::Config(format!("{} was written by a different configuration", path.display())));
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Long-format metrics table, values with six decimals.
pub fn metrics_tsv(metrics: &[StageMetrics], class_names: &[String]) -> String {
    let mut out = String::from("stage\tclass\tmetric\tvalue\n");
    for m in metrics {
        for (class, metric, value) in m.report.rows(class_names) {
            writeln!(out, "{}\t{class}\t{metric}\t{value:.6}", m.stage).expect("writing to a String");
        }
    }
    out
}

/// The corpus split into its roles, with the stage trainers of the loop.
///
/// Every trainer derives its initialization and sample order from
/// `cfg.seed` and the round number, so running stages one at a time gives
/// the same networks as [`run_pipeline`].
pub struct Stages<'a> {
    pub cfg: &'a PipelineConfig,
    pub labeled: Vec<&'a Sample>,
    pub labeled_gt: Vec<&'a LabelMap>,
    pub unlabeled: Vec<&'a Sample>,
    pub test: Vec<&'a Sample>,
    rect_cfg: RectNetConfig,
    swap: Vec<u8>,
    augment: Augment,
}

impl<'a> Stages<'a> {
    pub fn new(corpus: &'a Corpus, cfg: &'a PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let c = corpus.categories.len();
        if cfg.seg.categories != c {
            return Err(Error::Config(format!("configured for {} categories, corpus has {c}", cfg.seg.categories)));
        }
        let labeled: Vec<&Sample> = corpus.split(Split::Labeled).collect();
        let unlabeled: Vec<&Sample> = corpus.split(Split::Unlabeled).collect();
        let test: Vec<&Sample> = corpus.split(Split::Test).collect();
        let first = labeled.first().ok_or_else(|| Error::Data("corpus has no labeled samples".into()))?;
        let (h, w) = (first.image.height, first.image.width);
        if let Some(s) = corpus.samples.iter().find(|s| (s.image.height, s.image.width) != (h, w)) {
            return Err(Error::Data(format!("sample {} is not {w}x{h}", s.id)));
        }
        let labeled_gt = labeled
            .iter()
            .map(|s| s.label.as_ref().ok_or_else(|| Error::Data(format!("labeled sample {} has no label", s.id))))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            labeled,
            labeled_gt,
            unlabeled,
            test,
            rect_cfg: RectNetConfig { categories: c, height: h, width: w, ..cfg.rect },
            swap: corpus.categories.swap_table(),
            augment: if cfg.augment { Augment::default() } else { Augment::NONE },
        })
    }

    pub fn rect_config(&self) -> RectNetConfig {
        self.rect_cfg
    }

    fn train_seg(&self, p: &mut SegNetParams<f64>, data: &[LabeledImage], epochs: usize, seed: u64) -> Result<()> {
        let tc = TrainConfig { epochs, batch_size: self.cfg.batch_size, sgd: self.cfg.sgd, seed };
        train_segmenter(p, data, &self.swap, &tc, self.augment).map(drop)
    }

    pub fn baseline_init(&self, round: usize) -> Result<SegNetParams<f64>> {
        SegNetParams::init(self.cfg.seg, &mut ChaCha8Rng::seed_from_u64(StageSeeds::new(self.cfg.seed, round).seg_init))
    }

    /// Stage 1: supervised training on the labeled split.
    pub fn train_baseline(&self, p: &mut SegNetParams<f64>, round: usize) -> Result<()> {
        let data: Vec<LabeledImage> = self
            .labeled
            .iter()
            .zip(&self.labeled_gt)
            .map(|(s, l)| LabeledImage { image: &s.image, label: l })
            .collect();
        self.train_seg(p, &data, self.cfg.seg_epochs, StageSeeds::new(self.cfg.seed, round).seg_order)
    }

    /// Stage 2 over labeled then unlabeled samples.
    pub fn pseudo_label(&self, s_net: &SegNetParams<f64>) -> Result<Vec<PseudoLabel>> {
        let all: Vec<&Sample> = self.labeled.iter().chain(&self.unlabeled).copied().collect();
        pseudo_label(s_net, &all, self.cfg.threads)
    }

    pub fn rect_init(&self, round: usize) -> Result<RectNetParams<f64>> {
        RectNetParams::init(
            self.rect_cfg,
            &mut ChaCha8Rng::seed_from_u64(StageSeeds::new(self.cfg.seed, round).rect_init),
        )
    }

    /// Stage 3: R-Net on (image, pseudo-label, ground truth) of the labeled split.
    pub fn train_rect(&self, p: &mut RectNetParams<f64>, pseudo_labeled: &[PseudoLabel], round: usize) -> Result<()> {
        if pseudo_labeled.len() != self.labeled.len() {
            return Err(Error::Data(format!(
                "{} pseudo-labels for {} labeled samples",
                pseudo_labeled.len(),
                self.labeled.len()
            )));
        }
        let triples: Vec<RectTriple<f64>> = self
            .labeled
            .iter()
            .zip(pseudo_labeled)
            .zip(&self.labeled_gt)
            .map(|((s, p), l)| Ok(RectTriple { input: rect_input(s, p, self.cfg.hard_masks)?, target: l.data.clone() }))
            .collect::<Result<_>>()?;
        let seed = StageSeeds::new(self.cfg.seed, round).rect_order;
        let tc = TrainConfig { epochs: self.cfg.rect_epochs, batch_size: self.cfg.batch_size, sgd: self.cfg.sgd, seed };
        train_rectifier(p, &triples, &tc).map(drop)
    }

    /// Stage 4 over the unlabeled split.
    pub fn rectify(&self, r_net: &RectNetParams<f64>, pseudo_unlabeled: &[PseudoLabel]) -> Result<Vec<LabelMap>> {
        rectify_unlabeled(r_net, &self.unlabeled, pseudo_unlabeled, self.cfg.hard_masks, self.cfg.threads)
    }

    /// A copy of `warm` when given, otherwise a fresh initialization.
    pub fn retrain_init(&self, round: usize, warm: Option<&SegNetParams<f64>>) -> Result<SegNetParams<f64>> {
        if let Some(p) = warm {
            return Ok(p.clone());
        }
        let seed = StageSeeds::new(self.cfg.seed, round).retrain_init;
        SegNetParams::init(self.cfg.seg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Stage 5: labeled ground truth plus one label map per unlabeled sample.
    pub fn retrain(&self, p: &mut SegNetParams<f64>, unlabeled_labels: &[&LabelMap], round: usize) -> Result<()> {
        if unlabeled_labels.len() != self.unlabeled.len() {
            return Err(Error::Data(format!(
                "{} labels for {} unlabeled samples",
                unlabeled_labels.len(),
                self.unlabeled.len()
            )));
        }
        let data: Vec<LabeledImage> = self
            .labeled
            .iter()
            .zip(self.labeled_gt.iter().copied())
            .chain(self.unlabeled.iter().zip(unlabeled_labels.iter().copied()))
            .map(|(s, l)| LabeledImage { image: &s.image, label: l })
            .collect();
        self.train_seg(p, &data, self.cfg.retrain_epochs, StageSeeds::new(self.cfg.seed, round).retrain_order)
    }

    /// Stage 6 on the test split.
    pub fn evaluate(&self, s_net: &SegNetParams<f64>) -> Result<MetricsReport> {
        evaluate(s_net, &self.test, self.cfg)
    }
}

/// Runs every round of the loop on `corpus`.
///
/// Training stages only see labeled ground truth and network outputs; test
/// labels are read by the evaluation stage alone, and hidden labels of
/// unlabeled samples are never passed in.
pub fn run_pipeline(corpus: &Corpus, cfg: &PipelineConfig, dir: Option<RunDir>) -> Result<PipelineRun> {
    let st = Stages::new(corpus, cfg)?;
    if st.test.is_empty() {
        return Err(Error::Data("corpus has no test samples to evaluate on".into()));
    }
    if let Some(d) = &dir {
        prepare_dir(d, cfg)?;
    }
    let mut art = Artifacts { dir, log: String::new() };
    let mut metrics = Vec::new();
    let mut current: Option<SegNetParams<f64>> = None;
    let mut baseline = None;
    let mut last = None;
    for round in 1..=cfg.rounds {
        let tag = |name: &str| {
            if round == 1 {
                name.to_string()
            } else {
                format!("{name}_r{round}")
            }
        };
        let ckpt = |name: &str| format!("checkpoints/r{round}-{name}.grn");

        // 1: S' on labeled data; later rounds start from the previous S''
        let s_net = match current.take() {
            Some(p) => p,
            None => {
                let init = stage(Stage::TrainSegmenter, st.baseline_init(round))?;
                let p =
                    stage(Stage::TrainSegmenter, art.params(&ckpt("baseline"), init, |p| st.train_baseline(p, round)))?;
                let report = stage(Stage::Evaluate, st.evaluate(&p))?;
                metrics.push(StageMetrics { stage: "baseline".into(), report });
                p
            }
        };

        // 2: pseudo-label labeled and unlabeled images
        let pseudo = stage(Stage::PseudoLabel, st.pseudo_label(&s_net))?;
        let (pseudo_l, pseudo_u) = pseudo.split_at(st.labeled.len());
        let ids = st.labeled.iter().chain(&st.unlabeled).map(|s| s.id.clone());
        let pseudo_ids = stage(
            Stage::PseudoLabel,
            art.labels(&format!("pseudo/r{round}"), ids.zip(pseudo.iter().map(|p| p.label.clone()))),
        )?;

        // 3: R' on labeled triples
        let init = stage(Stage::TrainRectifier, st.rect_init(round))?;
        let r_net =
            stage(Stage::TrainRectifier, art.params(&ckpt("rnet"), init, |p| st.train_rect(p, pseudo_l, round)))?;

        // 4: rectify unlabeled pseudo-labels
        let rectified = stage(Stage::Rectify, st.rectify(&r_net, pseudo_u))?;
        let rectified_ids = stage(
            Stage::Rectify,
            art.labels(
                &format!("rectified/r{round}"),
                st.unlabeled.iter().map(|s| s.id.clone()).zip(rectified.iter().cloned()),
            ),
        )?;

        // 5: retrain, optionally also on the raw pseudo-labels for comparison
        if cfg.ablate_raw {
            let raw: Vec<&LabelMap> = pseudo_u.iter().map(|p| &p.label).collect();
            let init = stage(Stage::RetrainRaw, st.retrain_init(round, cfg.warm_start.then_some(&s_net)))?;
            let s_raw =
                stage(Stage::RetrainRaw, art.params(&ckpt("raw_retrain"), init, |p| st.retrain(p, &raw, round)))?;
            let report = stage(Stage::Evaluate, st.evaluate(&s_raw))?;
            metrics.push(StageMetrics { stage: tag("raw_retrain"), report });
        }
        let refs: Vec<&LabelMap> = rectified.iter().collect();
        let init = stage(Stage::Retrain, st.retrain_init(round, cfg.warm_start.then_some(&s_net)))?;
        let s_new =
            stage(Stage::Retrain, art.params(&ckpt("rectified_retrain"), init, |p| st.retrain(p, &refs, round)))?;
        let report = stage(Stage::Evaluate, st.evaluate(&s_new))?;
        metrics.push(StageMetrics { stage: tag("rectified_retrain"), report });

        baseline.get_or_insert(s_net);
        last = Some((r_net, pseudo_ids, rectified_ids));
        current = Some(s_new);
    }

    if let Some(d) = &art.dir {
        fs::write(d.path.join("metrics.tsv"), metrics_tsv(&metrics, &corpus.categories.names))?;
        fs::write(d.path.join("run.log"), &art.log)?;
    }
    let (rnet, pseudo, rectified) = last.expect("rounds >= 1");
    Ok(PipelineRun {
        baseline: baseline.expect("rounds >= 1"),
        retrained: current.expect("rounds >= 1"),
        rnet,
        pseudo,
        rectified,
        metrics,
    })
}
