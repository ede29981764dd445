use std::fmt;

/// Pipeline stage a failure happened in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    TrainSegmenter,
    PseudoLabel,
    TrainRectifier,
    Rectify,
    Retrain,
    RetrainRaw,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::TrainSegmenter => "1-train-segmenter",
            Stage::PseudoLabel => "2-pseudo-label",
            Stage::TrainRectifier => "3-train-rectifier",
            Stage::Rectify => "4-rectify",
            Stage::Retrain => "5-retrain",
            Stage::RetrainRaw => "5b-retrain-raw",
            Stage::Evaluate => "6-evaluate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or preconditions of an operation were not met.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A value that must be finite was not.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Malformed input data (labels out of range, bad files, ...).
    #[error("data error: {0}")]
    Data(String),
    /// Invalid configuration or hyperparameters.
    #[error("config error: {0}")]
    Config(String),
    /// Gradient checker could not produce a trustworthy report.
    #[error("check error: {0}")]
    Check(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! contract {
    ($($arg:tt)*) => { $crate::error::Error::Contract(format!($($arg)*)) };
}
pub(crate) use contract;
