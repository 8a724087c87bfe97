//! Scorers, multi-run selection and the sample-efficiency harness.

mod curve;

pub use curve::{curve_to_csv, curve_to_svg, parse_ratios, sample_efficiency_curve, CurvePoint};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::semeval::parse_directed;
use crate::data::{Format, NO_RELATION, OTHER};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        harmonic(self.precision(), self.recall())
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

/// Zero when the denominator is zero.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Counts per positive relation (TACRED) or per undirected relation
    /// type (SemEval).
    pub per_class: BTreeMap<String, Counts>,
}

impl ScoreReport {
    /// Counts pooled over every class.
    pub fn total(&self) -> Counts {
        let mut c = Counts::default();
        for v in self.per_class.values() {
            c.add(*v);
        }
        c
    }
}

fn check_lengths(gold: &[impl AsRef<str>], pred: &[impl AsRef<str>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Input(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    Ok(())
}

/// Exact-match confusion counts per label, skipping `negative`.
fn label_counts<S: AsRef<str>>(gold: &[S], pred: &[S], negative: &str) -> BTreeMap<String, Counts> {
    let mut out: BTreeMap<String, Counts> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g == p {
            if g != negative {
                out.entry(g.to_string()).or_default().tp += 1;
            }
            continue;
        }
        if p != negative {
            out.entry(p.to_string()).or_default().fp += 1;
        }
        if g != negative {
            out.entry(g.to_string()).or_default().fn_ += 1;
        }
    }
    out
}

/// Micro-averaged scores with `no_relation` as the negative class.
pub fn micro_f1_tacred<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<ScoreReport> {
    check_lengths(gold, pred)?;
    let per_class = label_counts(gold, pred, NO_RELATION);
    let mut total = Counts::default();
    for c in per_class.values() {
        total.add(*c);
    }
    let (precision, recall) = (total.precision(), total.recall());
    Ok(ScoreReport {
        precision,
        recall,
        f1: harmonic(precision, recall),
        per_class,
    })
}

/// Directed macro-F1: exact-match counts per directed label, pooled per
/// undirected type, then F1 averaged over the types that occur. `Other` is
/// excluded from the average but its predictions still cost recall.
pub fn macro_f1_semeval_directed<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<ScoreReport> {
    check_lengths(gold, pred)?;
    for label in gold.iter().chain(pred) {
        let label = label.as_ref();
        if label != OTHER && parse_directed(label).is_none() {
            return Err(Error::Input(format!("unknown SemEval label `{label}`")));
        }
    }
    let mut per_class: BTreeMap<String, Counts> = BTreeMap::new();
    for (label, c) in label_counts(gold, pred, OTHER) {
        let (ty, _) = parse_directed(&label).expect("validated above");
        per_class.entry(ty.to_string()).or_default().add(c);
    }
    per_class.retain(|_, c| !c.is_empty());
    let n = per_class.len();
    if n == 0 {
        return Ok(ScoreReport::default());
    }
    let mean = |f: fn(&Counts) -> f64| per_class.values().map(f).sum::<f64>() / n as f64;
    Ok(ScoreReport {
        precision: mean(Counts::precision),
        recall: mean(Counts::recall),
        f1: mean(Counts::f1),
        per_class,
    })
}

/// The scorer matching a dataset's reporting convention.
pub fn score<S: AsRef<str>>(format: Format, gold: &[S], pred: &[S]) -> Result<ScoreReport> {
    match format {
        Format::Tacred => micro_f1_tacred(gold, pred),
        Format::Semeval => macro_f1_semeval_directed(gold, pred),
    }
}

pub fn accuracy<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<f64> {
    check_lengths(gold, pred)?;
    let hits = gold.iter().zip(pred).filter(|(g, p)| g.as_ref() == p.as_ref()).count();
    Ok(ratio(hits, gold.len()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub seed: u64,
    pub valid_f1: f64,
    pub test_f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    /// Index into the run list.
    pub index: usize,
    pub run: Run,
    pub test_mean: f64,
    /// Population standard deviation of the test scores.
    pub test_std: f64,
}

/// Picks the run with the median validation F1 (the lower median for an even
/// count; ties go to the earlier run) and summarizes the test scores.
pub fn median_run_selection(runs: &[Run]) -> Result<Selection> {
    if runs.is_empty() {
        return Err(Error::Input("no runs to select from".into()));
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| runs[a].valid_f1.total_cmp(&runs[b].valid_f1).then(a.cmp(&b)));
    let index = order[(runs.len() - 1) / 2];
    let (test_mean, test_std) = mean_std(&runs.iter().map(|r| r.test_f1).collect::<Vec<_>>());
    Ok(Selection {
        index,
        run: runs[index],
        test_mean,
        test_std,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Writes one `gold\tpred` line per example.
pub fn predictions_to_tsv<S: AsRef<str>>(gold: &[S], pred: &[S]) -> String {
    gold.iter()
        .zip(pred)
        .map(|(g, p)| format!("{}\t{}\n", g.as_ref(), p.as_ref()))
        .collect()
}

/// Reads a predictions file back into (gold, pred) columns.
pub fn parse_predictions(text: &str, origin: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (g, p) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, i + 1, "expected `gold\\tpred`"))?;
        gold.push(g.to_string());
        pred.push(p.to_string());
    }
    Ok((gold, pred))
}
