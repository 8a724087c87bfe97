use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Dataset, RelationInstance};
use crate::bpe::{Vocab, CLF, DELIM1, DELIM2, OOV, START};
use crate::error::{Error, Result};
use crate::numerics::IGNORE;

/// A fine-tuning input laid out as
/// `[START, a¹, DELIM1, a², DELIM2, sentence, CLF]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub label_id: usize,
    /// `lm_targets[i] == ids[i + 1]`; the final position is [`IGNORE`].
    pub lm_targets: Vec<usize>,
    /// Position of the sentence segment within `ids`.
    pub sentence: Range<usize>,
    /// Whether the sentence segment was cut to fit the context window.
    pub truncated: bool,
}

/// Ids of the structural special tokens.
#[derive(Clone, Copy, Debug)]
struct Markers {
    start: usize,
    delim1: usize,
    delim2: usize,
    clf: usize,
}

fn markers(vocab: &Vocab) -> Result<Markers> {
    let get = |name: &str| {
        vocab
            .special_id(name)
            .ok_or_else(|| Error::Config(format!("vocabulary lacks the `{name}` special token")))
    };
    Ok(Markers {
        start: get(START)?,
        delim1: get(DELIM1)?,
        delim2: get(DELIM2)?,
        clf: get(CLF)?,
    })
}

/// Encodes words, mapping reserved mask tokens to their special ids and
/// everything else through BPE.
pub fn encode_words(words: &[String], vocab: &Vocab) -> Vec<usize> {
    let structural = [OOV, START, DELIM1, DELIM2, CLF];
    let mut ids = Vec::new();
    for word in words {
        match vocab.special_id(word) {
            Some(id) if !structural.contains(&word.as_str()) => ids.push(id),
            _ => ids.extend(vocab.encode(word).ids),
        }
    }
    ids
}

/// Builds the structured input for `inst`. An over-long sentence segment is
/// cut from the right; if the arguments alone do not fit, this fails.
pub fn assemble_input(
    inst: &RelationInstance,
    label_id: usize,
    vocab: &Vocab,
    max_positions: usize,
) -> Result<EncodedExample> {
    let m = markers(vocab)?;
    let (subj, obj) = if inst.arg1.role == super::Role::Subject {
        (&inst.arg1, &inst.arg2)
    } else {
        (&inst.arg2, &inst.arg1)
    };
    let a1 = encode_words(inst.arg_tokens(subj), vocab);
    let a2 = encode_words(inst.arg_tokens(obj), vocab);
    let mut sentence = encode_words(&inst.tokens, vocab);

    let fixed = a1.len() + a2.len() + 4;
    if fixed > max_positions {
        return Err(Error::Length {
            len: fixed + sentence.len(),
            max: max_positions,
        });
    }
    let room = max_positions - fixed;
    let truncated = sentence.len() > room;
    sentence.truncate(room);

    let mut ids = Vec::with_capacity(fixed + sentence.len());
    ids.push(m.start);
    ids.extend(&a1);
    ids.push(m.delim1);
    ids.extend(&a2);
    ids.push(m.delim2);
    let begin = ids.len();
    ids.extend(&sentence);
    let end = ids.len();
    ids.push(m.clf);

    let lm_targets = ids[1..].iter().copied().chain(std::iter::once(IGNORE)).collect();
    Ok(EncodedExample {
        ids,
        label_id,
        lm_targets,
        sentence: begin..end,
        truncated,
    })
}

/// Assembles every instance of `ds`; returns the examples and how many were
/// truncated.
pub fn assemble_dataset(ds: &Dataset, vocab: &Vocab, max_positions: usize) -> Result<(Vec<EncodedExample>, usize)> {
    let mut out = Vec::with_capacity(ds.len());
    let mut truncated = 0;
    for (index, inst) in ds.instances.iter().enumerate() {
        let label_id = ds.label_id(&inst.label).ok_or_else(|| Error::Record {
            index,
            msg: format!("label `{}` outside the label set", inst.label),
        })?;
        let ex = assemble_input(inst, label_id, vocab, max_positions)?;
        truncated += ex.truncated as usize;
        out.push(ex);
    }
    Ok((out, truncated))
}
