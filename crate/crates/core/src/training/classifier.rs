use crate::bpe::Vocab;
use crate::data::{apply_masking, assemble_input, Dataset, Format, MaskingStrategy, RelationInstance};
use crate::error::{Error, Result};
use crate::eval::{score, ScoreReport};
use crate::model::{Checkpoint, Model};

/// A fine-tuned model bundled with everything needed to label new data.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub model: Model,
    pub vocab: Vocab,
    /// Relation labels in head order.
    pub labels: Vec<String>,
    pub format: Format,
    pub masking: MaskingStrategy,
}

impl Classifier {
    /// Label for one instance, which must not be masked yet. Ties go to the
    /// label listed first.
    pub fn predict(&self, inst: &RelationInstance) -> Result<String> {
        let masked = apply_masking(inst, self.masking)?;
        let ex = assemble_input(&masked, 0, &self.vocab, self.model.config.max_positions)?;
        let logits = self.model.relation_logits(&ex.ids)?;
        let best = logits
            .iter()
            .enumerate()
            .fold(0, |best, (i, &x)| if x > logits[best] { i } else { best });
        Ok(self.labels[best].clone())
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<String>> {
        ds.instances
            .iter()
            .enumerate()
            .map(|(index, inst)| {
                self.predict(inst).map_err(|e| match e {
                    e @ Error::Strategy { .. } => e,
                    other => Error::Record {
                        index,
                        msg: other.to_string(),
                    },
                })
            })
            .collect()
    }

    /// Checks that `ds` is scorable by this model.
    pub fn check_compatible(&self, ds: &Dataset) -> Result<()> {
        if ds.format != self.format {
            return Err(Error::Config(format!(
                "model was trained on {} data, not {}",
                self.format, ds.format
            )));
        }
        if let Some(inst) = ds
            .instances
            .iter()
            .find(|i| self.labels.binary_search(&i.label).is_err())
        {
            return Err(Error::Config(format!(
                "label `{}` is not in the model's label set",
                inst.label
            )));
        }
        Ok(())
    }

    /// Predictions and the format's score on `ds`.
    pub fn evaluate(&self, ds: &Dataset) -> Result<(ScoreReport, Vec<String>)> {
        if ds.is_empty() {
            return Err(Error::Input("evaluation dataset is empty".into()));
        }
        self.check_compatible(ds)?;
        let pred = self.predict_dataset(ds)?;
        let gold: Vec<&str> = ds.instances.iter().map(|i| i.label.as_str()).collect();
        let pred_ref: Vec<&str> = pred.iter().map(String::as_str).collect();
        Ok((score(self.format, &gold, &pred_ref)?, pred))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model, &self.vocab);
        ck.header.vocab = Some(self.vocab.to_text());
        ck.header.labels = self.labels.clone();
        ck.header.format = Some(self.format);
        ck.header.masking = self.masking;
        ck.header.metadata.insert("objective".into(), "relation".into());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Classifier> {
        let vocab = ck
            .embedded_vocab()?
            .ok_or_else(|| Error::Config("checkpoint has no embedded vocabulary; was it fine-tuned?".into()))?;
        let format = ck
            .header
            .format
            .ok_or_else(|| Error::Config("checkpoint records no dataset format".into()))?;
        let model = ck.to_model()?;
        if ck.header.labels.len() != model.config.n_relations {
            return Err(Error::Config(format!(
                "checkpoint lists {} labels for a head of {}",
                ck.header.labels.len(),
                model.config.n_relations
            )));
        }
        Ok(Classifier {
            model,
            vocab,
            labels: ck.header.labels.clone(),
            format,
            masking: ck.header.masking,
        })
    }
}
