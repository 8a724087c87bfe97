use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    batch_at, combined_loss, dropout_rng, init_rng, log_metrics, Adam, Classifier, Schedule, StepMetrics, TrainConfig,
};
use crate::bpe::{Vocab, CLF, DELIM1, DELIM2, START, UNK_MASK};
use crate::data::{assemble_dataset, mask_dataset, mask_vocabulary, Dataset, Format, MaskingStrategy};
use crate::error::{Error, Result};
use crate::eval::ScoreReport;
use crate::model::{init_model, Model};
use crate::numerics::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean combined loss over the epoch's updates.
    pub train_loss: f64,
    pub valid: Option<ScoreReport>,
}

pub struct FinetuneOutcome {
    pub classifier: Classifier,
    pub history: Vec<EpochReport>,
    pub steps: Vec<StepMetrics>,
    /// Training inputs whose sentence was cut to fit the context window.
    pub truncated: usize,
}

fn check_masking(format: Format, masking: MaskingStrategy) -> Result<()> {
    if format == Format::Semeval && masking.needs_types() {
        return Err(Error::Strategy {
            strategy: masking.to_string(),
            reason: "SemEval nominals carry no entity types".into(),
        });
    }
    Ok(())
}

/// Fine-tunes on `train` with the combined relation and λ-weighted LM
/// objective, scoring `valid` after every epoch.
///
/// `pretrained` is a language model whose vocabulary is `vocab`; without one
/// the model is built from `cfg.model`. The vocabulary is extended with the
/// input delimiters and the mask tokens of the chosen strategy.
pub fn finetune(
    pretrained: Option<Model>,
    vocab: &Vocab,
    train: &Dataset,
    valid: Option<&Dataset>,
    cfg: &TrainConfig,
    mut metrics: Option<&mut dyn Write>,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let format = train.format;
    check_masking(format, cfg.masking)?;
    if train.is_empty() {
        return Err(Error::Input("training dataset is empty".into()));
    }
    if let Some(v) = valid {
        if v.format != format {
            return Err(Error::Config(format!(
                "validation data is {}, training data is {format}",
                v.format
            )));
        }
    }
    if let Some(m) = &pretrained {
        if m.config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "pretrained model has {} embeddings for a vocabulary of {}",
                m.config.vocab_size,
                vocab.len()
            )));
        }
    }

    let masked_train = mask_dataset(train, cfg.masking)?;
    let masked_valid = valid.map(|v| mask_dataset(v, cfg.masking)).transpose()?;
    let mut specials: Vec<String> = [START, DELIM1, DELIM2, CLF, UNK_MASK].map(String::from).to_vec();
    specials.extend(mask_vocabulary(
        masked_valid.iter().chain([&masked_train]),
        cfg.masking,
    )?);
    let vocab = vocab.ensure_special_tokens(&specials)?;
    let clf = vocab.special_id(CLF).expect("added above");

    let labels: Vec<String> = train
        .labels
        .iter()
        .chain(valid.map(|v| &v.labels).into_iter().flatten())
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let train_ds = Dataset::new(format, labels.clone(), masked_train.instances)?;

    let scale = cfg.model.init_scale;
    let mut rng = init_rng(cfg.seed);
    let mut model = match pretrained {
        Some(mut m) => {
            m.grow_vocab(vocab.len(), &mut rng, scale)?;
            m.reset_head(labels.len(), &mut rng, scale)?;
            if !cfg.use_pretrained_lm {
                m.reinit_transformer(&mut rng, scale)?;
            }
            if !cfg.use_pretrained_bpe_embeddings {
                m.reinit_token_embeddings(&mut rng, scale)?;
            }
            m.config.residual_dropout = cfg.model.residual_dropout;
            m.config.attention_dropout = cfg.model.attention_dropout;
            m.config.classifier_dropout = cfg.model.classifier_dropout;
            m.config.clf_token = Some(clf);
            m.config.validate()?;
            m
        }
        None => init_model(
            &cfg.model.to_config(vocab.len(), labels.len(), Some(clf)),
            &mut rng,
            scale,
        )?,
    };

    let (examples, truncated) = assemble_dataset(&train_ds, &vocab, model.config.max_positions)?;
    let n = examples.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let total = cfg.total_steps(n);
    let schedule = Schedule::new(total, cfg.warmup_fraction, cfg.peak_lr);
    let mut adam = Adam::new(&model.params);
    let mut dropout = dropout_rng(cfg.seed);

    let mut classifier = Classifier {
        model: model.clone(),
        vocab,
        labels,
        format,
        masking: cfg.masking,
    };
    let mut history = Vec::new();
    let mut steps = Vec::with_capacity(total);
    let mut order = None;
    let mut epoch_loss = 0.0;
    let mut epoch_updates = 0;
    for step in 0..total {
        let t = step + 1;
        let lr = schedule.lr_at(t)?;
        let batch: Vec<_> = batch_at(cfg.seed, step, n, cfg.batch_size, &mut order)
            .into_iter()
            .map(|i| examples[i].clone())
            .collect();
        let mut tape = Tape::new();
        let parts = combined_loss(&model, &mut tape, &batch, cfg.lambda_lm, true, &mut dropout)?;
        model.params.zero_grads();
        tape.backward(parts.total, &mut model.params)?;
        adam.update(&mut model.params, lr)?;

        let m = StepMetrics {
            step: t,
            lr,
            loss: tape.value(parts.total).item(),
            lm_loss: tape.value(parts.lm).item(),
            rel_loss: Some(tape.value(parts.relation).item()),
        };
        log_metrics(&mut metrics, &m)?;
        epoch_loss += m.loss;
        epoch_updates += 1;
        steps.push(m);

        if t % per_epoch == 0 || t == total {
            classifier.model = model.clone();
            let valid_report = match valid {
                Some(v) if !v.is_empty() => Some(classifier.evaluate(v)?.0),
                _ => None,
            };
            history.push(EpochReport {
                epoch: step / per_epoch + 1,
                train_loss: epoch_loss / epoch_updates as f64,
                valid: valid_report,
            });
            epoch_loss = 0.0;
            epoch_updates = 0;
        }
    }
    classifier.model = model;
    Ok(FinetuneOutcome {
        classifier,
        history,
        steps,
        truncated,
    })
}
