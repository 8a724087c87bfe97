use rand::Rng;

use crate::data::EncodedExample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Tape, Var, IGNORE};

/// Next-token targets for a plain sequence: a shift by one with the final
/// position ignored.
pub fn shifted_targets(tokens: &[usize]) -> Vec<usize> {
    tokens.iter().skip(1).copied().chain(std::iter::once(IGNORE)).collect()
}

fn nonempty<T>(batch: &[T]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    Ok(())
}

/// Mean next-token cross-entropy over every predictable position of the
/// batch.
pub fn lm_loss<R: Rng + ?Sized>(
    model: &Model,
    tape: &mut Tape,
    batch: &[Vec<usize>],
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    nonempty(batch)?;
    let mut logits = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    for seq in batch {
        logits.push(model.forward_lm(tape, seq, train, rng)?);
        targets.extend(shifted_targets(seq));
    }
    let all = tape.concat_rows(&logits)?;
    tape.cross_entropy(all, &targets)
}

fn check_labels(model: &Model, batch: &[EncodedExample]) -> Result<()> {
    let r = model.config.n_relations;
    if let Some(ex) = batch.iter().find(|ex| ex.label_id >= r) {
        return Err(Error::Index {
            what: "relation labels",
            index: ex.label_id,
            bound: r,
        });
    }
    Ok(())
}

/// Mean cross-entropy of the relation logits against the gold labels.
pub fn relation_loss<R: Rng + ?Sized>(
    model: &Model,
    tape: &mut Tape,
    batch: &[EncodedExample],
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    nonempty(batch)?;
    check_labels(model, batch)?;
    let logits = batch
        .iter()
        .map(|ex| model.forward_relation(tape, &ex.ids, train, rng))
        .collect::<Result<Vec<_>>>()?;
    let all = tape.concat_rows(&logits)?;
    let labels: Vec<usize> = batch.iter().map(|ex| ex.label_id).collect();
    tape.cross_entropy(all, &labels)
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub lm: Var,
    pub relation: Var,
}

/// `λ · lm + relation`, both terms computed from one forward pass per
/// example.
pub fn combined_loss<R: Rng + ?Sized>(
    model: &Model,
    tape: &mut Tape,
    batch: &[EncodedExample],
    lambda: f64,
    train: bool,
    rng: &mut R,
) -> Result<LossParts> {
    nonempty(batch)?;
    check_labels(model, batch)?;
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::Config(format!("λ {lambda} must be non-negative")));
    }
    let mut lm_logits = Vec::with_capacity(batch.len());
    let mut rel_logits = Vec::with_capacity(batch.len());
    let mut lm_targets = Vec::new();
    for ex in batch {
        let (lm, rel) = model.forward_both(tape, &ex.ids, train, rng)?;
        lm_logits.push(lm);
        rel_logits.push(rel);
        lm_targets.extend_from_slice(&ex.lm_targets);
    }
    let lm_all = tape.concat_rows(&lm_logits)?;
    let lm = tape.cross_entropy(lm_all, &lm_targets)?;
    let rel_all = tape.concat_rows(&rel_logits)?;
    let labels: Vec<usize> = batch.iter().map(|ex| ex.label_id).collect();
    let relation = tape.cross_entropy(rel_all, &labels)?;
    let total = if lambda == 0.0 {
        relation
    } else {
        let weighted = tape.scale(lm, lambda);
        tape.add(weighted, relation)?
    };
    Ok(LossParts { total, lm, relation })
}
