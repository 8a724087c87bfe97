use std::io::Write;
use std::path::PathBuf;

use super::{batch_at, dropout_rng, lm_loss, log_metrics, Adam, Schedule, StepMetrics, TrainConfig};
use crate::bpe::Vocab;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Model, TrainState};
use crate::numerics::Tape;

/// Encodes corpus lines and cuts them into windows of at most
/// `max_positions` tokens. Windows with fewer than two tokens carry no
/// next-token target and are dropped.
pub fn encode_corpus<S: AsRef<str>>(lines: &[S], vocab: &Vocab, max_positions: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for line in lines {
        let ids = vocab.encode(line.as_ref()).ids;
        for chunk in ids.chunks(max_positions.max(2)) {
            if chunk.len() >= 2 {
                out.push(chunk.to_vec());
            }
        }
    }
    out
}

#[derive(Default)]
pub struct PretrainOptions<'a> {
    /// Write a resumable checkpoint every this many updates.
    pub checkpoint_every: Option<usize>,
    /// Periodic checkpoints go to `<prefix>.step<N>`.
    pub checkpoint_prefix: Option<PathBuf>,
    /// Continue from a periodic checkpoint of an identically configured run.
    pub resume: Option<&'a Checkpoint>,
    pub metrics: Option<&'a mut dyn Write>,
}

pub struct PretrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub history: Vec<StepMetrics>,
}

fn snapshot(model: &Model, vocab: &Vocab, state: TrainState, adam: Option<&Adam>) -> Checkpoint {
    let mut ck = Checkpoint::from_model(model, vocab);
    ck.header.vocab = Some(vocab.to_text());
    ck.header.train_state = Some(state);
    ck.header.metadata.insert("objective".into(), "lm".into());
    if let Some(adam) = adam {
        ck.tensors.extend(adam.state_tensors(&model.params));
    }
    ck
}

/// Optimizes the next-token objective on `corpus` with Adam and the linear
/// warmup/decay schedule.
pub fn pretrain(
    model: Model,
    vocab: &Vocab,
    corpus: &[Vec<usize>],
    cfg: &TrainConfig,
    mut opts: PretrainOptions<'_>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if model.config.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "model vocabulary size {} does not match vocabulary of {} tokens",
            model.config.vocab_size,
            vocab.len()
        )));
    }
    if corpus.is_empty() {
        return Err(Error::Input("pre-training corpus has no usable sequences".into()));
    }
    let total = cfg.total_steps(corpus.len());
    let schedule = Schedule::new(total, cfg.warmup_fraction, cfg.peak_lr);
    let mut rng = dropout_rng(cfg.seed);

    let (mut model, mut adam, start) = match opts.resume {
        None => {
            let adam = Adam::new(&model.params);
            (model, adam, 0)
        }
        Some(ck) => {
            ck.check_vocab(vocab)?;
            let state = ck
                .header
                .train_state
                .as_ref()
                .ok_or_else(|| Error::Config("resume checkpoint carries no training state".into()))?;
            if state.seed != cfg.seed || state.total_steps != total {
                return Err(Error::Config(format!(
                    "resume checkpoint was written by a run with seed {} and {} steps, not seed {} and {total} steps",
                    state.seed, state.total_steps, cfg.seed
                )));
            }
            let resumed = ck.to_model()?;
            let adam = Adam::from_state(&resumed.params, state.step, &ck.tensors)?;
            let pos: u128 = state
                .rng_word_pos
                .parse()
                .map_err(|_| Error::Config(format!("invalid rng position `{}`", state.rng_word_pos)))?;
            rng.set_word_pos(pos);
            (resumed, adam, state.step)
        }
    };

    let mut history = Vec::with_capacity(total - start);
    let mut order = None;
    for step in start..total {
        let t = step + 1;
        let lr = schedule.lr_at(t)?;
        let batch: Vec<Vec<usize>> = batch_at(cfg.seed, step, corpus.len(), cfg.batch_size, &mut order)
            .into_iter()
            .map(|i| corpus[i].clone())
            .collect();
        let mut tape = Tape::new();
        let loss = lm_loss(&model, &mut tape, &batch, true, &mut rng)?;
        model.params.zero_grads();
        tape.backward(loss, &mut model.params)?;
        adam.update(&mut model.params, lr)?;

        let value = tape.value(loss).item();
        let m = StepMetrics {
            step: t,
            lr,
            loss: value,
            lm_loss: value,
            rel_loss: None,
        };
        log_metrics(&mut opts.metrics, &m)?;
        history.push(m);

        if let (Some(every), Some(prefix)) = (opts.checkpoint_every, &opts.checkpoint_prefix) {
            if every > 0 && t % every == 0 && t < total {
                let state = TrainState {
                    step: t,
                    total_steps: total,
                    seed: cfg.seed,
                    rng_word_pos: rng.get_word_pos().to_string(),
                };
                let mut path = prefix.as_os_str().to_owned();
                path.push(format!(".step{t}"));
                snapshot(&model, vocab, state, Some(&adam)).save(PathBuf::from(path))?;
            }
        }
    }
    let state = TrainState {
        step: total,
        total_steps: total,
        seed: cfg.seed,
        rng_word_pos: rng.get_word_pos().to_string(),
    };
    let checkpoint = snapshot(&model, vocab, state, None);
    Ok(PretrainOutcome {
        model,
        checkpoint,
        history,
    })
}
