//! `grn`: command-line runner for the rectification pipeline.
//!
//! Staged subcommands (`train-seg`, `train-rect`, `retrain`, ...) derive
//! their seeds exactly as round 1 of `pipeline` does, so chaining them by
//! hand gives the same networks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use grn_core::checkpoint::Checkpoint;
use grn_core::corpus::{
    generate, load_corpus, load_hidden, read_pgm, save_corpus, write_pgm, Corpus, CorpusSpec, LabelMap, Split,
};
use grn_core::export::{export_mask, Palette};
use grn_core::gradcheck::{component_suite, GradCheckOptions};
use grn_core::pipeline::{
    evaluate_labels, metrics_tsv, pseudo_label, run_pipeline, PseudoLabel, RunDir, StageMetrics, Stages,
};
use grn_core::rnet::RectNetParams;
use grn_core::snet::SegNetParams;
use grn_core::{Error, PipelineConfig, Result};

/// Largest relative error `grad-check` accepts.
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "grn", version, about = "Graph-based pseudo-label rectification for human parsing")]
struct Cli {
    /// Seed for all randomness; falls back to GRN_SEED, then to the config file, then 0.
    #[arg(long, global = true, env = "GRN_SEED")]
    seed: Option<u64>,
    /// Worker threads for inference.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic stick-figure corpus.
    GenData(GenData),
    /// Train S' on the labeled split.
    TrainSeg {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainOpts,
    },
    /// Write S-Net labels for labeled and unlabeled images as ID.pgm.
    PseudoLabel {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        snet: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train R-Net on (image, pseudo-label, ground truth) of the labeled split.
    TrainRect {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        source: PseudoSource,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainOpts,
    },
    /// Rectify the pseudo-labels of the unlabeled split.
    Rectify {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rnet: PathBuf,
        #[command(flatten)]
        source: PseudoSource,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainOpts,
    },
    /// Retrain S-Net on labeled ground truth plus labels for the unlabeled split.
    Retrain {
        #[arg(long)]
        data: PathBuf,
        /// Directory of ID.pgm labels for every unlabeled sample.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Start from this S-Net instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        train: TrainOpts,
    },
    /// Run the whole loop and write a run directory.
    Pipeline {
        #[arg(long)]
        data: PathBuf,
        /// Run directory; defaults to DATA/run.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also retrain on unrectified pseudo-labels.
        #[arg(long)]
        ablate_raw: bool,
        #[arg(long)]
        rounds: Option<usize>,
        /// Retrain from S' weights.
        #[arg(long)]
        warm_start: bool,
        /// Reuse checkpoints already in the run directory.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        train: TrainOpts,
    },
    /// Score an S-Net or a directory of predicted labels.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
        snet: Option<PathBuf>,
        /// Directory of predicted ID.pgm labels.
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
        split: EvalSplit,
        #[arg(long, value_enum, default_value_t = ProtocolArg::Lip)]
        protocol: ProtocolArg,
        /// Also write the rows to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable component.
    GradCheck,
    /// Render label maps as colour PPM images.
    ExportMasks {
        /// A PGM label file or a directory of them.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Lines of `id r g b`; defaults to a built-in palette.
        #[arg(long)]
        palette: Option<PathBuf>,
        /// Category count for the built-in palette.
        #[arg(long, default_value_t = 8)]
        categories: usize,
    },
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, conflicts_with = "labeled_fraction")]
    n_labeled: Option<usize>,
    #[arg(long, conflicts_with = "labeled_fraction")]
    n_unlabeled: Option<usize>,
    /// Labeled share of --n-total, as a decimal or a ratio such as 1/8.
    #[arg(long, value_parser = parse_fraction)]
    labeled_fraction: Option<f64>,
    /// Labeled plus unlabeled samples when --labeled-fraction is used.
    #[arg(long, default_value_t = 512, requires = "labeled_fraction")]
    n_total: usize,
    #[arg(long, default_value_t = 128)]
    n_test: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    categories: usize,
    #[arg(long)]
    back_view: Option<f64>,
    #[arg(long)]
    missing_limb: Option<f64>,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct PseudoSource {
    /// Compute pseudo-labels (soft by default) with this S-Net.
    #[arg(long)]
    snet: Option<PathBuf>,
    /// Read hard pseudo-labels from a directory of ID.pgm files.
    #[arg(long)]
    pseudo: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct TrainOpts {
    /// key=value config file, applied before flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs of every training stage.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    node_dim: Option<usize>,
    #[arg(long)]
    high_nodes: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Feed R-Net one-hot pseudo-labels.
    #[arg(long)]
    hard_masks: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EvalSplit {
    Test,
    Unlabeled,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ProtocolArg {
    Lip,
    Atr,
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?,
    };
    if v.is_finite() && v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("fraction must lie strictly between 0 and 1, got {s}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Stage { source, .. } => exit_code(source),
        _ => 2,
    }
}

fn config(cli: &Cli, opts: &TrainOpts, corpus: &Corpus) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    cfg.set("categories", &corpus.categories.len().to_string())?;
    if let Some(path) = &opts.config {
        cfg.apply_text(&fs::read_to_string(path)?)?;
    }
    for kv in &opts.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(v) = opts.lr {
        cfg.sgd.base_lr = v;
    }
    if let Some(v) = opts.epochs {
        cfg.seg_epochs = v;
        cfg.rect_epochs = v;
        cfg.retrain_epochs = v;
    }
    if let Some(v) = opts.alpha {
        cfg.rect.alpha = v;
    }
    if let Some(v) = opts.node_dim {
        cfg.rect.node_dim = v;
    }
    if let Some(v) = opts.high_nodes {
        cfg.rect.high_nodes = v;
    }
    if let Some(v) = opts.batch_size {
        cfg.batch_size = v;
    }
    cfg.hard_masks |= opts.hard_masks;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_snet(path: &Path) -> Result<SegNetParams<f64>> {
    SegNetParams::from_checkpoint(&Checkpoint::load(path)?)
}

fn save(path: &Path, ckpt: Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ckpt.save(path)
}

fn read_labels(dir: &Path, ids: impl Iterator<Item = String>) -> Result<Vec<LabelMap>> {
    ids.map(|id| read_pgm(&dir.join(format!("{id}.pgm")))).collect()
}

fn write_labels<'a>(dir: &Path, items: impl Iterator<Item = (&'a str, &'a LabelMap)>) -> Result<usize> {
    fs::create_dir_all(dir)?;
    let mut n = 0;
    for (id, l) in items {
        write_pgm(&dir.join(format!("{id}.pgm")), l)?;
        n += 1;
    }
    Ok(n)
}

/// Pseudo-labels of labeled then unlabeled samples, from an S-Net or a directory.
fn pseudo(st: &Stages, source: &PseudoSource) -> Result<Vec<PseudoLabel>> {
    if let Some(path) = &source.snet {
        return st.pseudo_label(&load_snet(path)?);
    }
    let dir = source.pseudo.as_ref().expect("clap requires one source");
    let c = st.cfg.seg.categories;
    let ids = st.labeled.iter().chain(&st.unlabeled).map(|s| s.id.clone());
    read_labels(dir, ids)?.into_iter().map(|l| PseudoLabel::from_label(l, c)).collect()
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(g) => gen_data(&cli, g),
        Command::TrainSeg { data, out, train } => {
            let corpus = load_corpus(data)?;
            let cfg = config(&cli, train, &corpus)?;
            let st = Stages::new(&corpus, &cfg)?;
            let mut p = st.baseline_init(1)?;
            st.train_baseline(&mut p, 1)?;
            save(out, Checkpoint::from_params(&p))?;
            println!("trained S-Net on {} labeled samples -> {}", st.labeled.len(), out.display());
            Ok(())
        }
        Command::PseudoLabel { data, snet, out } => {
            let corpus = load_corpus(data)?;
            let p = load_snet(snet)?;
            let samples: Vec<_> = corpus.samples.iter().filter(|s| s.split != Split::Test).collect();
            let labels = pseudo_label(&p, &samples, cli.threads.unwrap_or(1))?;
            let n = write_labels(out, samples.iter().zip(&labels).map(|(s, l)| (s.id.as_str(), &l.label)))?;
            println!("wrote {n} pseudo-labels to {}", out.display());
            Ok(())
        }
        Command::TrainRect { data, source, out, train } => {
            let corpus = load_corpus(data)?;
            let cfg = config(&cli, train, &corpus)?;
            let st = Stages::new(&corpus, &cfg)?;
            let all = pseudo(&st, source)?;
            let mut r = st.rect_init(1)?;
            st.train_rect(&mut r, &all[..st.labeled.len()], 1)?;
            save(out, Checkpoint::from_params(&r))?;
            println!("trained R-Net on {} labeled triples -> {}", st.labeled.len(), out.display());
            Ok(())
        }
        Command::Rectify { data, rnet, source, out, train } => {
            let corpus = load_corpus(data)?;
            let cfg = config(&cli, train, &corpus)?;
            let st = Stages::new(&corpus, &cfg)?;
            let r = RectNetParams::from_checkpoint(&Checkpoint::load(rnet)?, st.rect_config())?;
            let all = pseudo(&st, source)?;
            let rectified = st.rectify(&r, &all[st.labeled.len()..])?;
            let n = write_labels(out, st.unlabeled.iter().map(|s| s.id.as_str()).zip(&rectified))?;
            println!("wrote {n} rectified labels to {}", out.display());
            Ok(())
        }
        Command::Retrain { data, labels, out, init, train } => {
            let corpus = load_corpus(data)?;
            let cfg = config(&cli, train, &corpus)?;
            let st = Stages::new(&corpus, &cfg)?;
            let maps = read_labels(labels, st.unlabeled.iter().map(|s| s.id.clone()))?;
            let refs: Vec<&LabelMap> = maps.iter().collect();
            let warm = init.as_deref().map(load_snet).transpose()?;
            let mut p = st.retrain_init(1, warm.as_ref())?;
            st.retrain(&mut p, &refs, 1)?;
            save(out, Checkpoint::from_params(&p))?;
            println!("retrained S-Net on {} samples -> {}", st.labeled.len() + st.unlabeled.len(), out.display());
            Ok(())
        }
        Command::Pipeline { data, out, ablate_raw, rounds, warm_start, resume, train } => {
            let corpus = load_corpus(data)?;
            let mut cfg = config(&cli, train, &corpus)?;
            cfg.ablate_raw |= ablate_raw;
            cfg.warm_start |= warm_start;
            if let Some(r) = rounds {
                cfg.rounds = *r;
            }
            let path = out.clone().unwrap_or_else(|| data.join("run"));
            let run = run_pipeline(&corpus, &cfg, Some(RunDir { path: path.clone(), resume: *resume }))?;
            for m in &run.metrics {
                println!("{}\tmean_iou\t{:.6}", m.stage, m.report.mean_iou);
            }
            println!("run directory: {}", path.display());
            Ok(())
        }
        Command::Eval { data, snet, pred, split, protocol, out } => {
            let corpus = load_corpus(data)?;
            let split = match split {
                EvalSplit::Test => Split::Test,
                EvalSplit::Unlabeled => Split::Unlabeled,
            };
            let samples: Vec<_> = corpus.split(split).collect();
            if samples.is_empty() {
                return Err(Error::Data(format!("corpus has no {} samples", split.as_str())));
            }
            let hidden = if split == Split::Unlabeled { Some(load_hidden(data, &corpus)?) } else { None };
            let gts: Vec<&LabelMap> = samples
                .iter()
                .map(|s| match &hidden {
                    Some(h) => h.0.get(&s.id).ok_or_else(|| Error::Data(format!("no hidden label for {}", s.id))),
                    None => s.label.as_ref().ok_or_else(|| Error::Data(format!("{} has no label", s.id))),
                })
                .collect::<Result<_>>()?;
            let preds: Vec<LabelMap> = match (snet, pred) {
                (Some(path), _) => {
                    let p = load_snet(path)?;
                    pseudo_label(&p, &samples, cli.threads.unwrap_or(1))?.into_iter().map(|p| p.label).collect()
                }
                (None, Some(dir)) => read_labels(dir, samples.iter().map(|s| s.id.clone()))?,
                (None, None) => unreachable!("clap requires --snet or --pred"),
            };
            let preds: Vec<&LabelMap> = preds.iter().collect();
            let protocol = match protocol {
                ProtocolArg::Lip => grn_core::metrics::Protocol::Lip,
                ProtocolArg::Atr => grn_core::metrics::Protocol::Atr,
            };
            let report = evaluate_labels(&preds, &gts, corpus.categories.len(), protocol)?;
            let text = metrics_tsv(&[StageMetrics { stage: "eval".into(), report }], &corpus.categories.names);
            print!("{text}");
            if let Some(path) = out {
                fs::write(path, &text)?;
            }
            Ok(())
        }
        Command::GradCheck => {
            let seed = cli.seed.unwrap_or(0);
            let reports = component_suite(seed, &GradCheckOptions::default())?;
            let mut worst = 0.0f64;
            println!("component\tparameter\telements\tmax_rel_error");
            for (component, r) in &reports {
                for p in &r.params {
                    println!("{component}\t{}\t{}\t{:.3e}", p.name, p.elements_checked, p.max_rel_error);
                    worst = worst.max(p.max_rel_error);
                }
            }
            println!("worst\t{worst:.3e}\ttolerance\t{GRAD_TOLERANCE:.0e}");
            if worst > GRAD_TOLERANCE {
                return Err(Error::Check(format!("max relative error {worst:.3e} exceeds {GRAD_TOLERANCE:.0e}")));
            }
            Ok(())
        }
        Command::ExportMasks { labels, out, palette, categories } => {
            let palette = match palette {
                Some(p) => Palette::parse(&fs::read_to_string(p)?)?,
                None => Palette::default_for(*categories)?,
            };
            let files: Vec<PathBuf> = if labels.is_dir() {
                let mut v: Vec<PathBuf> =
                    fs::read_dir(labels)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
                v.retain(|p| p.extension().is_some_and(|e| e == "pgm"));
                v.sort();
                v
            } else {
                vec![labels.clone()]
            };
            fs::create_dir_all(out)?;
            for f in &files {
                let stem = f.file_stem().ok_or_else(|| Error::Data(format!("bad label path {}", f.display())))?;
                let dest = out.join(stem).with_extension("ppm");
                export_mask(&dest, &read_pgm(f)?, &palette)?;
            }
            println!("exported {} masks to {}", files.len(), out.display());
            Ok(())
        }
    }
}

fn gen_data(cli: &Cli, g: &GenData) -> Result<()> {
    let defaults = CorpusSpec::default();
    let (n_labeled, n_unlabeled) = match g.labeled_fraction {
        Some(f) => {
            let l = (f * g.n_total as f64).round() as usize;
            (l, g.n_total - l)
        }
        None => (g.n_labeled.unwrap_or(defaults.n_labeled), g.n_unlabeled.unwrap_or(defaults.n_unlabeled)),
    };
    let spec = CorpusSpec {
        n_labeled,
        n_unlabeled,
        n_test: g.n_test,
        size: g.size,
        categories: g.categories,
        seed: cli.seed.unwrap_or(0),
        back_view: g.back_view.unwrap_or(defaults.back_view),
        missing_limb: g.missing_limb.unwrap_or(defaults.missing_limb),
    };
    let (corpus, hidden) = generate(&spec)?;
    save_corpus(&g.out, &corpus, Some(&hidden))?;
    println!("wrote {n_labeled} labeled, {n_unlabeled} unlabeled and {} test samples to {}", g.n_test, g.out.display());
    Ok(())
}
