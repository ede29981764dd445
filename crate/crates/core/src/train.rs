//! Mini-batch SGD loop shared by both networks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{sgd_step, SgdConfig, SgdState};
use crate::params::{Bound, Gradients, Parameterized};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    /// Drives sample order and augmentation.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 40, batch_size: 4, sgd: SgdConfig::PRESET, seed: 0 }
    }
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
}

/// Runs `cfg.epochs` passes over `n` samples.
///
/// `sample_loss(tape, params, index, rng)` builds the loss of one sample and
/// returns it with the bound parameters. `after_step` runs after every
/// optimizer update.
pub fn fit<T, P, L, A>(
    params: &mut P,
    n: usize,
    cfg: &TrainConfig,
    mut sample_loss: L,
    mut after_step: A,
) -> Result<TrainLog>
where
    T: Scalar,
    P: Parameterized<T>,
    L: FnMut(&mut Tape<T>, &P, usize, &mut ChaCha8Rng) -> Result<(Var, Bound)>,
    A: FnMut(&mut P) -> Result<()>,
{
    if n == 0 {
        return Err(Error::Config("cannot train on an empty set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok(log);
    }
    let batches = n.div_ceil(cfg.batch_size);
    let mut state = SgdState::new(cfg.sgd, cfg.epochs * batches)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Option<Gradients<T>> = None;
            for &i in batch {
                let mut tape = Tape::new();
                let (loss, bound) = sample_loss(&mut tape, params, i, &mut rng)?;
                let l = tape.value(loss).data()[0].as_f64();
                if !l.is_finite() {
                    return Err(Error::Numeric(format!("training loss became {l}")));
                }
                total += l;
                tape.backward(loss)?;
                let g = bound.gradients(&tape);
                match &mut grads {
                    Some(acc) => acc.accumulate(&g)?,
                    None => grads = Some(g),
                }
            }
            let mut grads = grads.expect("batches are nonempty");
            grads.scale(T::of(1.0 / batch.len() as f64));
            sgd_step(params, &grads, &mut state)?;
            after_step(params)?;
        }
        log.epoch_loss.push(total / n as f64);
    }
    Ok(log)
}
