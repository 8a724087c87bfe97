//! Decoder-only Transformer with a tied language-model head and a linear
//! relation classifier over the final position.

mod checkpoint;

pub use checkpoint::{Checkpoint, CheckpointHeader, ManifestEntry, TrainState, CHECKPOINT_MAGIC};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    /// Context window.
    pub max_positions: usize,
    pub residual_dropout: f64,
    pub attention_dropout: f64,
    pub classifier_dropout: f64,
    pub n_relations: usize,
    /// Id of the token whose final state feeds the relation head.
    #[serde(default)]
    pub clf_token: Option<usize>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
            ("n_relations", self.n_relations),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        for (name, p) in [
            ("residual_dropout", self.residual_dropout),
            ("attention_dropout", self.attention_dropout),
            ("classifier_dropout", self.classifier_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1)")));
            }
        }
        if let Some(c) = self.clf_token {
            if c >= self.vocab_size {
                return Err(Error::Config(format!(
                    "clf_token {c} outside vocabulary of {}",
                    self.vocab_size
                )));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Debug, PartialEq)]
struct BlockParams {
    w_q: ParamId,
    b_q: ParamId,
    w_k: ParamId,
    b_k: ParamId,
    w_v: ParamId,
    b_v: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

/// Parameter handles of the language model. `tok_embed` serves both as the
/// input embedding and, transposed, as the output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLm {
    pub tok_embed: ParamId,
    pub pos_embed: ParamId,
    blocks: Vec<BlockParams>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelationHead {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub lm: TransformerLm,
    pub head: RelationHead,
}

enum Init {
    Normal,
    Ones,
    Zeros,
}

/// Canonical parameter layout: name, shape and initializer, in storage order.
fn layout(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = c.d_model;
    let mut out = vec![
        ("tok_embed".to_string(), vec![c.vocab_size, d], Init::Normal),
        ("pos_embed".to_string(), vec![c.max_positions, d], Init::Normal),
    ];
    for l in 0..c.n_layers {
        let p = |s: &str| format!("blocks.{l}.{s}");
        for proj in ["q", "k", "v", "o"] {
            out.push((p(&format!("attn.w_{proj}")), vec![d, d], Init::Normal));
            out.push((p(&format!("attn.b_{proj}")), vec![d], Init::Zeros));
        }
        out.push((p("ln1.gain"), vec![d], Init::Ones));
        out.push((p("ln1.bias"), vec![d], Init::Zeros));
        out.push((p("ffn.w1"), vec![d, c.d_ff], Init::Normal));
        out.push((p("ffn.b1"), vec![c.d_ff], Init::Zeros));
        out.push((p("ffn.w2"), vec![c.d_ff, d], Init::Normal));
        out.push((p("ffn.b2"), vec![d], Init::Zeros));
        out.push((p("ln2.gain"), vec![d], Init::Ones));
        out.push((p("ln2.bias"), vec![d], Init::Zeros));
    }
    out.push(("head.w".to_string(), vec![d, c.n_relations], Init::Normal));
    out.push(("head.b".to_string(), vec![c.n_relations], Init::Zeros));
    out
}

fn sample<R: Rng + ?Sized>(shape: &[usize], init: &Init, rng: &mut R, scale: f64) -> Result<Tensor> {
    let n = shape.iter().product();
    let data = match init {
        Init::Ones => vec![1.0; n],
        Init::Zeros => vec![0.0; n],
        Init::Normal => {
            let dist = Normal::new(0.0, scale).map_err(|e| Error::Config(format!("init_scale {scale}: {e}")))?;
            (0..n).map(|_| dist.sample(rng)).collect()
        }
    };
    Tensor::new(shape.to_vec(), data)
}

/// Builds a model with weights drawn from N(0, init_scale²), normalization
/// gains at 1 and biases at 0.
pub fn init_model<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R, init_scale: f64) -> Result<Model> {
    config.validate()?;
    let mut store = ParamStore::new();
    for (name, shape, init) in layout(config) {
        store.add(name, sample(&shape, &init, rng, init_scale)?);
    }
    Model::from_params(config.clone(), store)
}

/// Attention weights of one forward pass, indexed `[layer][head]`, each n×n.
pub type AttentionTrace = Vec<Vec<Tensor>>;

impl Model {
    /// Wraps an existing parameter store, checking names and shapes against
    /// `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Model> {
        config.validate()?;
        let expected = layout(&config);
        if params.len() != expected.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (id, (name, shape, _)) in params.ids().zip(&expected) {
            let p = params.get(id);
            if &p.name != name || p.value.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        let find = |n: &str| params.find(n).expect("layout checked above");
        let blocks = (0..config.n_layers)
            .map(|l| {
                let f = |s: &str| find(&format!("blocks.{l}.{s}"));
                BlockParams {
                    w_q: f("attn.w_q"),
                    b_q: f("attn.b_q"),
                    w_k: f("attn.w_k"),
                    b_k: f("attn.b_k"),
                    w_v: f("attn.w_v"),
                    b_v: f("attn.b_v"),
                    w_o: f("attn.w_o"),
                    b_o: f("attn.b_o"),
                    ln1_gain: f("ln1.gain"),
                    ln1_bias: f("ln1.bias"),
                    w1: f("ffn.w1"),
                    b1: f("ffn.b1"),
                    w2: f("ffn.w2"),
                    b2: f("ffn.b2"),
                    ln2_gain: f("ln2.gain"),
                    ln2_bias: f("ln2.bias"),
                }
            })
            .collect();
        let lm = TransformerLm {
            tok_embed: find("tok_embed"),
            pos_embed: find("pos_embed"),
            blocks,
        };
        let head = RelationHead {
            w: find("head.w"),
            b: find("head.b"),
        };
        Ok(Model {
            config,
            params,
            lm,
            head,
        })
    }

    pub fn num_weights(&self) -> usize {
        self.params.num_weights()
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_positions {
            return Err(Error::Length {
                len: tokens.len(),
                max: self.config.max_positions,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Index {
                what: "vocabulary",
                index: bad,
                bound: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Final hidden states h_L (n×d_model). `tok_embed` is the tape variable
    /// holding the token embedding table, so callers can substitute an
    /// untied copy.
    pub fn hidden_states<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        tok_embed: Var,
        tokens: &[usize],
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        self.hidden_states_traced(tape, tok_embed, tokens, train, rng, None)
    }

    fn hidden_states_traced<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        tok_embed: Var,
        tokens: &[usize],
        train: bool,
        rng: &mut R,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<Var> {
        self.check_tokens(tokens)?;
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let pos_table = tape.param(&self.params, self.lm.pos_embed);
        let tok = tape.gather(tok_embed, tokens)?;
        let pos = tape.gather(pos_table, &positions)?;
        let mut h = tape.add(tok, pos)?;
        for block in &self.lm.blocks {
            let layer = trace.as_mut().map(|t| {
                t.push(Vec::new());
                t.last_mut().unwrap()
            });
            h = self.block(tape, block, h, train, rng, layer)?;
        }
        Ok(h)
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let w = tape.param(&self.params, w);
        let b = tape.param(&self.params, b);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    fn block<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &BlockParams,
        h: Var,
        train: bool,
        rng: &mut R,
        mut trace: Option<&mut Vec<Tensor>>,
    ) -> Result<Var> {
        let c = &self.config;
        let dh = c.head_dim();
        let q = self.linear(tape, h, p.w_q, p.b_q)?;
        let k = self.linear(tape, h, p.w_k, p.b_k)?;
        let v = self.linear(tape, h, p.w_v, p.b_v)?;
        let mut heads = Vec::with_capacity(c.n_heads);
        for i in 0..c.n_heads {
            let qi = tape.slice_cols(q, i * dh, dh)?;
            let ki = tape.slice_cols(k, i * dh, dh)?;
            let vi = tape.slice_cols(v, i * dh, dh)?;
            let scores = tape.matmul_t(qi, ki)?;
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let scores = tape.causal_mask(scores)?;
            let weights = tape.softmax(scores, 1)?;
            if let Some(t) = trace.as_mut() {
                t.push(tape.value(weights).clone());
            }
            let weights = tape.dropout(weights, c.attention_dropout, rng, train)?;
            heads.push(tape.matmul(weights, vi)?);
        }
        let attn = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let attn = self.linear(tape, attn, p.w_o, p.b_o)?;
        let attn = tape.dropout(attn, c.residual_dropout, rng, train)?;
        let h = tape.add(h, attn)?;
        let g1 = tape.param(&self.params, p.ln1_gain);
        let b1 = tape.param(&self.params, p.ln1_bias);
        let h = tape.layer_norm(h, g1, b1, LN_EPS)?;

        let f = self.linear(tape, h, p.w1, p.b1)?;
        let f = tape.gelu(f);
        let f = self.linear(tape, f, p.w2, p.b2)?;
        let f = tape.dropout(f, c.residual_dropout, rng, train)?;
        let h = tape.add(h, f)?;
        let g2 = tape.param(&self.params, p.ln2_gain);
        let b2 = tape.param(&self.params, p.ln2_bias);
        tape.layer_norm(h, g2, b2, LN_EPS)
    }

    fn lm_logits_from(&self, tape: &mut Tape, h: Var, tok_embed: Var) -> Result<Var> {
        tape.matmul_t(h, tok_embed)
    }

    fn relation_logits_from<R: Rng + ?Sized>(&self, tape: &mut Tape, h: Var, train: bool, rng: &mut R) -> Result<Var> {
        let n = tape.value(h).rows();
        let last = tape.slice_rows(h, n - 1, 1)?;
        let last = tape.dropout(last, self.config.classifier_dropout, rng, train)?;
        self.linear(tape, last, self.head.w, self.head.b)
    }

    fn check_clf(&self, tokens: &[usize]) -> Result<()> {
        let clf = self
            .config
            .clf_token
            .ok_or_else(|| Error::Contract("model has no classification token configured".into()))?;
        match tokens.last() {
            Some(&t) if t == clf => Ok(()),
            _ => Err(Error::Contract(format!(
                "relation input must end with the classification token (id {clf})"
            ))),
        }
    }

    /// Next-token logits, n×V.
    pub fn forward_lm<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        tokens: &[usize],
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let we = tape.param(&self.params, self.lm.tok_embed);
        let h = self.hidden_states(tape, we, tokens, train, rng)?;
        self.lm_logits_from(tape, h, we)
    }

    /// Relation logits, 1×R, read from the final (classification) position.
    pub fn forward_relation<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        tokens: &[usize],
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        self.check_clf(tokens)?;
        let we = tape.param(&self.params, self.lm.tok_embed);
        let h = self.hidden_states(tape, we, tokens, train, rng)?;
        self.relation_logits_from(tape, h, train, rng)
    }

    /// One shared pass producing both LM logits and relation logits.
    pub fn forward_both<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        tokens: &[usize],
        train: bool,
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        self.check_clf(tokens)?;
        let we = tape.param(&self.params, self.lm.tok_embed);
        let h = self.hidden_states(tape, we, tokens, train, rng)?;
        let lm = self.lm_logits_from(tape, h, we)?;
        let rel = self.relation_logits_from(tape, h, train, rng)?;
        Ok((lm, rel))
    }

    /// Eval-mode LM logits.
    pub fn lm_logits(&self, tokens: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward_lm(&mut tape, tokens, false, &mut rand::rng())?;
        Ok(tape.value(out).clone())
    }

    /// Eval-mode relation logits as a vector of length R.
    pub fn relation_logits(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.forward_relation(&mut tape, tokens, false, &mut rand::rng())?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Eval-mode attention weights for every layer and head.
    pub fn attention_weights(&self, tokens: &[usize]) -> Result<AttentionTrace> {
        let mut tape = Tape::new();
        let mut trace = Vec::new();
        let we = tape.param(&self.params, self.lm.tok_embed);
        self.hidden_states_traced(&mut tape, we, tokens, false, &mut rand::rng(), Some(&mut trace))?;
        Ok(trace)
    }

    fn reinit<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64, pick: impl Fn(&str) -> bool) -> Result<()> {
        for (name, shape, init) in layout(&self.config) {
            if pick(&name) {
                let id = self.params.find(&name).expect("layout matches store");
                let p = self.params.get_mut(id);
                p.value = sample(&shape, &init, rng, scale)?;
                p.grad = Tensor::zeros(&shape);
            }
        }
        Ok(())
    }

    /// Redraws positional embeddings and every block, keeping `tok_embed` and
    /// the relation head.
    pub fn reinit_transformer<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) -> Result<()> {
        self.reinit(rng, scale, |n| n == "pos_embed" || n.starts_with("blocks."))
    }

    /// Redraws every row of the token embedding table.
    pub fn reinit_token_embeddings<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) -> Result<()> {
        self.reinit(rng, scale, |n| n == "tok_embed")
    }

    /// Grows the vocabulary to `vocab_size`, drawing the new embedding rows
    /// from N(0, scale²). Existing rows are kept.
    pub fn grow_vocab<R: Rng + ?Sized>(&mut self, vocab_size: usize, rng: &mut R, scale: f64) -> Result<()> {
        let old = self.config.vocab_size;
        if vocab_size < old {
            return Err(Error::Config(format!(
                "cannot shrink vocabulary from {old} to {vocab_size}"
            )));
        }
        let d = self.config.d_model;
        let extra = sample(&[vocab_size - old, d], &Init::Normal, rng, scale)?;
        let p = self.params.get_mut(self.lm.tok_embed);
        let mut data = p.value.data().to_vec();
        data.extend(extra.into_data());
        p.value = Tensor::new(vec![vocab_size, d], data)?;
        p.grad = Tensor::zeros(&[vocab_size, d]);
        self.config.vocab_size = vocab_size;
        Ok(())
    }

    /// Replaces the relation head with a fresh one of `n_relations` outputs.
    pub fn reset_head<R: Rng + ?Sized>(&mut self, n_relations: usize, rng: &mut R, scale: f64) -> Result<()> {
        if n_relations == 0 {
            return Err(Error::Config("n_relations must be positive".into()));
        }
        self.config.n_relations = n_relations;
        let d = self.config.d_model;
        for (id, shape, init) in [
            (self.head.w, vec![d, n_relations], Init::Normal),
            (self.head.b, vec![n_relations], Init::Zeros),
        ] {
            let p = self.params.get_mut(id);
            p.value = sample(&shape, &init, rng, scale)?;
            p.grad = Tensor::zeros(&shape);
        }
        Ok(())
    }
}
