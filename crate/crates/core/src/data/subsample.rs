use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// Number of examples kept for a label with `count` members.
pub fn stratum_size(count: usize, ratio: f64) -> usize {
    if count == 0 {
        return 0;
    }
    ((ratio * count as f64).round() as usize).clamp(1, count)
}

/// Draws `round(ratio · n_label)` examples (at least one) from every label,
/// preserving the original order. `ratio == 1` returns the dataset unchanged.
pub fn stratified_subsample(ds: &Dataset, ratio: f64, seed: u64) -> Result<Dataset> {
    if ds.is_empty() {
        return Err(Error::Input("cannot subsample an empty dataset".into()));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Input(format!("sampling ratio {ratio} outside (0, 1]")));
    }
    if ratio == 1.0 {
        return Ok(ds.clone());
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, inst) in ds.instances.iter().enumerate() {
        by_label.entry(inst.label.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for members in by_label.values() {
        let k = stratum_size(members.len(), ratio);
        let picked = rand::seq::index::sample(&mut rng, members.len(), k);
        keep.extend(picked.into_iter().map(|j| members[j]));
    }
    keep.sort_unstable();
    Ok(ds.with_instances(keep.into_iter().map(|i| ds.instances[i].clone()).collect()))
}
