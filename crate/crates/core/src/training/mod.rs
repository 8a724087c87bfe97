//! Objectives, optimizer, and the pre-training and fine-tuning loops.

mod classifier;
mod config;
mod finetune;
mod loss;
mod optim;
mod pretrain;

pub use classifier::Classifier;
pub use config::{ModelSpec, Preset, TrainConfig};
pub use finetune::{finetune, EpochReport, FinetuneOutcome};
pub use loss::{combined_loss, lm_loss, relation_loss, shifted_targets, LossParts};
pub use optim::{Adam, Schedule};
pub use pretrain::{encode_corpus, pretrain, PretrainOptions, PretrainOutcome};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub lm_loss: f64,
    pub rel_loss: Option<f64>,
}

const DROPOUT_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const ORDER_STREAM_BASE: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Random number stream driving dropout masks.
pub fn dropout_rng(seed: u64) -> ChaCha8Rng {
    stream(seed, DROPOUT_STREAM)
}

/// Random number stream for weight initialization inside the loops.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    stream(seed, INIT_STREAM)
}

/// Visiting order of `n` items in `epoch`, a function of the seed only.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, ORDER_STREAM_BASE + epoch as u64));
    order
}

/// Indices of the items in update `step` (0-based) given `n` items.
fn batch_at(
    seed: u64,
    step: usize,
    n: usize,
    batch_size: usize,
    cache: &mut Option<(usize, Vec<usize>)>,
) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch_size);
    let (epoch, b) = (step / per_epoch, step % per_epoch);
    if cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
        *cache = Some((epoch, epoch_order(seed, epoch, n)));
    }
    let order = &cache.as_ref().expect("filled above").1;
    order[b * batch_size..((b + 1) * batch_size).min(n)].to_vec()
}

fn log_metrics(out: &mut Option<&mut dyn Write>, m: &StepMetrics) -> Result<()> {
    if let Some(w) = out {
        let line = serde_json::to_string(m).expect("metrics serialize");
        writeln!(w, "{line}").map_err(|e| Error::io("<metrics>", e))?;
    }
    Ok(())
}
