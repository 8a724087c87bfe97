//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::Rng;
use trelab::model::Model;
use trelab::numerics::Tape;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// BPE training by full recount: every iteration rebuilds the pair table from
/// the current segmentation of every word.
pub fn bpe_merges_oracle(corpus: &[String], target: usize) -> Vec<(String, String)> {
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for line in corpus {
        for w in line.split_whitespace() {
            *freq.entry(w.to_string()).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, usize)> = freq
        .into_iter()
        .map(|(w, f)| {
            let chars: Vec<char> = w.chars().collect();
            let mut syms: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
            let last = syms.len() - 1;
            syms[last].push_str("</w>");
            (syms, f)
        })
        .collect();
    let mut vocab: BTreeSet<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    vocab.insert("<oov>".into());
    let mut merges = Vec::new();
    while vocab.len() < target {
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (syms, f) in &words {
            for i in 0..syms.len().saturating_sub(1) {
                *counts.entry((syms[i].clone(), syms[i + 1].clone())).or_default() += f;
            }
        }
        // BTreeMap iterates in ascending pair order, so the first maximum is
        // the lexicographically smallest.
        let Some(best_count) = counts.values().max().copied() else {
            break;
        };
        let best = counts.into_iter().find(|(_, c)| *c == best_count).unwrap().0;
        for (syms, _) in &mut words {
            let mut out = Vec::new();
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == best.0 && syms[i + 1] == best.1 {
                    out.push(format!("{}{}", best.0, best.1));
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            *syms = out;
        }
        vocab.insert(format!("{}{}", best.0, best.1));
        merges.push(best);
    }
    merges
}

/// Random corpus of at most `max_words` words over a small alphabet, so that
/// pair counts collide often.
pub fn random_corpus<R: Rng>(rng: &mut R, max_words: usize) -> Vec<String> {
    let alphabet = ['a', 'b', 'c', 'd', 'é', 'n'];
    let n_words = rng.random_range(1..=max_words);
    let mut lines = vec![String::new()];
    for _ in 0..n_words {
        let len = rng.random_range(1..=6);
        let w: String = (0..len)
            .map(|_| alphabet[rng.random_range(0..alphabet.len())])
            .collect();
        let line = lines.last_mut().unwrap();
        if !line.is_empty() {
            line.push(' ');
        }
        line.push_str(&w);
        if rng.random_bool(0.2) {
            lines.push(String::new());
        }
    }
    lines.retain(|l| !l.is_empty());
    lines
}

/// Confusion-matrix enumeration of the TACRED micro scores.
pub fn micro_oracle(gold: &[String], pred: &[String]) -> (f64, f64, f64) {
    let labels: BTreeSet<&String> = gold.iter().chain(pred).collect();
    let mut confusion: BTreeMap<(&String, &String), usize> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        *confusion.entry((g, p)).or_default() += 1;
    }
    let cell = |g: &String, p: &String| confusion.get(&(g, p)).copied().unwrap_or(0);
    let (mut correct, mut guessed, mut actual) = (0, 0, 0);
    for g in &labels {
        for p in &labels {
            let n = cell(g, p);
            if *p != "no_relation" {
                guessed += n;
            }
            if *g != "no_relation" {
                actual += n;
            }
            if g == p && *g != "no_relation" {
                correct += n;
            }
        }
    }
    prf(correct, guessed, actual)
}

fn prf(correct: usize, guessed: usize, actual: usize) -> (f64, f64, f64) {
    let p = if guessed == 0 {
        0.0
    } else {
        correct as f64 / guessed as f64
    };
    let r = if actual == 0 {
        0.0
    } else {
        correct as f64 / actual as f64
    };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn undirected(label: &str) -> &str {
    label.split('(').next().unwrap()
}

/// Directed macro F1 over the nine SemEval relation types, enumerating the
/// confusion matrix cell by cell.
pub fn semeval_oracle(gold: &[String], pred: &[String]) -> (f64, f64, f64) {
    let mut confusion: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        *confusion.entry((g.as_str(), p.as_str())).or_default() += 1;
    }
    let types: BTreeSet<&str> = gold
        .iter()
        .chain(pred)
        .map(|l| undirected(l))
        .filter(|t| *t != "Other")
        .collect();
    let (mut ps, mut rs, mut fs) = (Vec::new(), Vec::new(), Vec::new());
    for t in types {
        let (mut correct, mut guessed, mut actual) = (0, 0, 0);
        for ((g, p), n) in &confusion {
            if undirected(p) == t {
                guessed += n;
            }
            if undirected(g) == t {
                actual += n;
            }
            if g == p && undirected(g) == t {
                correct += n;
            }
        }
        let (p, r, f) = prf(correct, guessed, actual);
        ps.push(p);
        rs.push(r);
        fs.push(f);
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    (mean(&ps), mean(&rs), mean(&fs))
}

pub fn semeval_label_pool() -> Vec<String> {
    let mut out = vec!["Other".to_string()];
    for t in ["Cause-Effect", "Component-Whole", "Entity-Origin", "Product-Producer"] {
        out.push(format!("{t}(e1,e2)"));
        out.push(format!("{t}(e2,e1)"));
    }
    out
}

/// Largest relative error between the tape gradient of `loss_fn` and central
/// finite differences, over every scalar weight of the model.
pub fn max_fd_error(model: &mut Model, loss_fn: impl Fn(&Model, &mut Tape) -> trelab::numerics::Var) -> (f64, String) {
    let mut tape = Tape::new();
    let loss = loss_fn(model, &mut tape);
    model.params.zero_grads();
    tape.backward(loss, &mut model.params).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = model
        .params
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();

    let eval = |m: &Model| {
        let mut t = Tape::new();
        let l = loss_fn(m, &mut t);
        t.value(l).item()
    };
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    let ids: Vec<_> = model.params.ids().collect();
    for (id, (name, grad)) in ids.into_iter().zip(analytic) {
        for (i, &g) in grad.iter().enumerate() {
            let orig = model.params.value(id).data()[i];
            model.params.get_mut(id).value.data_mut()[i] = orig + h;
            let up = eval(model);
            model.params.get_mut(id).value.data_mut()[i] = orig - h;
            let down = eval(model);
            model.params.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (g - numeric).abs() / numeric.abs().max(1.0);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}]"));
            }
        }
    }
    worst
}
