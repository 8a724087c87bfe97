//! Small synthetic corpora and relation datasets with known structure, used
//! to exercise training end to end without external data.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Argument, Dataset, Format, RelationInstance, Role};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// `count` distinct pronounceable lowercase words of `syllables` syllables,
/// none of them in `taken`.
fn pseudo_words(rng: &mut ChaCha8Rng, count: usize, syllables: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w: String = (0..syllables)
            .flat_map(|_| {
                [
                    *CONSONANTS.choose(rng).expect("non-empty") as char,
                    *VOWELS.choose(rng).expect("non-empty") as char,
                ]
            })
            .collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn instance(tokens: Vec<String>, subj: (usize, &str), obj: (usize, &str), label: &str) -> RelationInstance {
    RelationInstance {
        tokens,
        arg1: Argument {
            start: subj.0,
            end: subj.0,
            role: Role::Subject,
            entity_type: Some(subj.1.to_string()),
        },
        arg2: Argument {
            start: obj.0,
            end: obj.0,
            role: Role::Object,
            entity_type: Some(obj.1.to_string()),
        },
        label: label.to_string(),
    }
}

fn dataset(instances: Vec<RelationInstance>) -> Dataset {
    let labels: Vec<String> = instances.iter().map(|i| i.label.clone()).collect();
    Dataset::new(Format::Tacred, labels, instances).expect("synthetic instances are well formed")
}

/// Fifty short sentences, each opening with a different letter so that the
/// first token identifies the whole sentence.
pub fn memorization_corpus() -> Vec<String> {
    let letters = ('A'..='Z').chain('a'..='z').take(50);
    let verbs = ["sees", "finds", "takes", "holds", "likes"];
    let objects = [
        "lamp", "boat", "stone", "drum", "kite", "rope", "bell", "coin", "shell", "map",
    ];
    letters
        .enumerate()
        .map(|(i, c)| format!("{c}ox {} the {} .", verbs[i % 5], objects[i / 5]))
        .collect()
}

/// A relation dataset of `n` sentences where the trigger word decides the
/// label. Small enough to be fitted perfectly.
pub fn toy_relation_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = BTreeSet::new();
    let people = pseudo_words(&mut rng, 12, 2, &mut taken);
    let orgs = pseudo_words(&mut rng, 6, 3, &mut taken);
    let relations = [
        ("per:employee_of", "works at"),
        ("org:founded_by", "was founded by"),
        ("per:member_of", "joined"),
        ("no_relation", "walked past"),
    ];
    let instances = (0..n)
        .map(|i| {
            let (label, trigger) = relations[i % relations.len()];
            let p = people.choose(&mut rng).expect("non-empty");
            let o = orgs.choose(&mut rng).expect("non-empty");
            if label == "org:founded_by" {
                let mut t = words(&format!("{o} {trigger} {p} ."));
                t.insert(0, "the".into());
                instance(t.clone(), (1, "ORGANIZATION"), (t.len() - 2, "PERSON"), label)
            } else {
                let t = words(&format!("{p} {trigger} {o} ."));
                instance(t.clone(), (0, "PERSON"), (t.len() - 2, "ORGANIZATION"), label)
            }
        })
        .collect();
    dataset(instances)
}

/// Relation task whose validation split uses trigger words never seen in
/// labeled training data. The pre-training corpus shows every trigger, held
/// out or not, followed by the same relation-specific continuations, so only
/// a pre-trained model can relate the unseen triggers to the trained ones.
#[derive(Clone, Debug)]
pub struct TriggerTask {
    pub corpus: Vec<String>,
    pub train: Dataset,
    pub valid: Dataset,
}

pub const TRIGGER_LABELS: [&str; 4] = ["per:spouse", "per:parents", "per:siblings", "per:employee_of"];

pub fn trigger_task(seed: u64, corpus_size: usize, n_train: usize, n_valid: usize) -> TriggerTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = BTreeSet::new();
    let names = pseudo_words(&mut rng, 40, 2, &mut taken);
    let fillers = ["today", "again", "once", "lately", "indeed", "then"];
    struct Rel {
        seen: Vec<String>,
        held_out: Vec<String>,
        context: Vec<String>,
    }
    let rels: Vec<Rel> = TRIGGER_LABELS
        .iter()
        .map(|_| Rel {
            seen: pseudo_words(&mut rng, 2, 3, &mut taken),
            held_out: pseudo_words(&mut rng, 2, 3, &mut taken),
            context: pseudo_words(&mut rng, 4, 2, &mut taken),
        })
        .collect();

    let corpus = (0..corpus_size)
        .map(|_| {
            let r = &rels[rng.random_range(0..rels.len())];
            let trigger = if rng.random_bool(0.5) { &r.seen } else { &r.held_out }
                .choose(&mut rng)
                .expect("non-empty");
            let a = names.choose(&mut rng).expect("non-empty");
            let b = names.choose(&mut rng).expect("non-empty");
            let c1 = r.context.choose(&mut rng).expect("non-empty");
            let c2 = r.context.choose(&mut rng).expect("non-empty");
            format!("{a} {trigger} {b} {c1} {c2} .")
        })
        .collect();

    let labeled = |n: usize, held_out: bool, rng: &mut ChaCha8Rng| {
        let instances = (0..n)
            .map(|i| {
                let k = i % rels.len();
                let pool = if held_out { &rels[k].held_out } else { &rels[k].seen };
                let trigger = pool.choose(rng).expect("non-empty");
                let a = names.choose(rng).expect("non-empty");
                let b = names.choose(rng).expect("non-empty");
                let f = fillers.choose(rng).expect("non-empty");
                instance(
                    words(&format!("{a} {trigger} {b} {f} .")),
                    (0, "PERSON"),
                    (2, "PERSON"),
                    TRIGGER_LABELS[k],
                )
            })
            .collect();
        dataset(instances)
    };
    let train = labeled(n_train, false, &mut rng);
    let valid = labeled(n_valid, true, &mut rng);
    TriggerTask { corpus, train, valid }
}

/// Relation task where the label is fixed by the argument types and the
/// connecting words are uninformative. Names carry type-revealing endings,
/// and validation uses names absent from training.
#[derive(Clone, Debug)]
pub struct EntityTask {
    pub train: Dataset,
    pub valid: Dataset,
}

pub const ENTITY_RELATIONS: [(&str, &str, &str); 4] = [
    ("per:employee_of", "PERSON", "ORGANIZATION"),
    ("per:city_of_birth", "PERSON", "CITY"),
    ("org:city_of_headquarters", "ORGANIZATION", "CITY"),
    ("org:subsidiaries", "ORGANIZATION", "ORGANIZATION"),
];

pub fn entity_task(seed: u64, n_train: usize, n_valid: usize) -> EntityTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = BTreeSet::new();
    let suffix = |ty: &str| match ty {
        "PERSON" => "son",
        "ORGANIZATION" => "corp",
        _ => "ville",
    };
    let mut pools = |n: usize, rng: &mut ChaCha8Rng| -> Vec<(String, Vec<String>)> {
        ["PERSON", "ORGANIZATION", "CITY"]
            .iter()
            .map(|ty| {
                let names = pseudo_words(rng, n, 2, &mut taken)
                    .into_iter()
                    .map(|w| format!("{w}{}", suffix(ty)))
                    .collect();
                (ty.to_string(), names)
            })
            .collect()
    };
    let train_names = pools(20, &mut rng);
    let valid_names = pools(20, &mut rng);
    let links = ["and", "near", "with", "beside", "or"];

    let build = |n: usize, names: &[(String, Vec<String>)], rng: &mut ChaCha8Rng| {
        let pick = |ty: &str, rng: &mut ChaCha8Rng| {
            let pool = &names.iter().find(|(t, _)| t == ty).expect("known type").1;
            pool.choose(rng).expect("non-empty").clone()
        };
        let instances = (0..n)
            .map(|i| {
                let (label, st, ot) = ENTITY_RELATIONS[i % ENTITY_RELATIONS.len()];
                let s = pick(st, rng);
                let mut o = pick(ot, rng);
                while o == s {
                    o = pick(ot, rng);
                }
                let link = links.choose(rng).expect("non-empty");
                let tokens = if rng.random_bool(0.5) {
                    words(&format!("{s} {link} {o} were mentioned ."))
                } else {
                    words(&format!("we saw {s} {link} {o} ."))
                };
                let si = tokens.iter().position(|t| *t == s).expect("present");
                let oi = tokens.iter().rposition(|t| *t == o).expect("present");
                instance(tokens, (si, st), (oi, ot), label)
            })
            .collect();
        dataset(instances)
    };
    let train = build(n_train, &train_names, &mut rng);
    let valid = build(n_valid, &valid_names, &mut rng);
    EntityTask { train, valid }
}

/// Plain sentences of a dataset, e.g. for training a tokenizer.
pub fn sentences(ds: &Dataset) -> Vec<String> {
    ds.instances.iter().map(RelationInstance::sentence).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memorization_corpus_has_distinct_openings() {
        let c = memorization_corpus();
        assert_eq!(c.len(), 50);
        let firsts: BTreeSet<char> = c.iter().map(|s| s.chars().next().unwrap()).collect();
        assert_eq!(firsts.len(), 50);
    }

    #[test]
    fn toy_dataset_is_balanced_and_valid() {
        let ds = toy_relation_dataset(40, 0);
        assert_eq!(ds.len(), 40);
        assert!(ds.label_counts().values().all(|&c| c == 10));
        assert_eq!(ds, toy_relation_dataset(40, 0));
    }

    #[test]
    fn trigger_task_holds_out_triggers() {
        let t = trigger_task(1, 100, 40, 20);
        assert_eq!((t.corpus.len(), t.train.len(), t.valid.len()), (100, 40, 20));
        let train_triggers: BTreeSet<&str> = t.train.instances.iter().map(|i| i.tokens[1].as_str()).collect();
        for inst in &t.valid.instances {
            assert!(!train_triggers.contains(inst.tokens[1].as_str()));
            assert!(t
                .corpus
                .iter()
                .any(|s| s.split(' ').nth(1) == Some(inst.tokens[1].as_str())));
        }
    }

    #[test]
    fn entity_task_uses_unseen_names() {
        let t = entity_task(2, 40, 20);
        let seen: BTreeSet<&str> = t
            .train
            .instances
            .iter()
            .flat_map(|i| [i.arg_tokens(&i.arg1)[0].as_str(), i.arg_tokens(&i.arg2)[0].as_str()])
            .collect();
        for inst in &t.valid.instances {
            assert!(!seen.contains(inst.arg_tokens(&inst.arg1)[0].as_str()));
            inst.validate().unwrap();
        }
        for inst in &t.train.instances {
            let subj = &inst.arg_tokens(&inst.arg1)[0];
            let ty = inst.arg1.entity_type.as_deref().unwrap();
            assert!(subj.ends_with(if ty == "PERSON" { "son" } else { "corp" }));
        }
    }
}
