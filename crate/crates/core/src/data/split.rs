use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use super::{ScanpathRecord, Split};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.1, 0.2];

/// Target (train, valid, test) counts for `n` items: train and valid are rounded, test takes the rest.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let valid = ((n as f64 * ratios[1]).round() as usize).min(n - train);
    [train, valid, n - train - valid]
}

/// Assigns a split to every record, stratified per task and by image: all
/// trials on one image share a split. Images met again under a later task keep
/// the split they already received.
pub fn assign_splits(records: &mut [ScanpathRecord], ratios: [f64; 3], seed: u64) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut images_by_task: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records.iter() {
        images_by_task.entry(&r.task).or_default().insert(&r.name);
    }
    let mut assigned: BTreeMap<String, Split> = BTreeMap::new();
    for (task, images) in &images_by_task {
        if images.len() < 3 {
            return Err(Error::Data(format!(
                "task `{task}` has {} images; at least 3 are needed to split",
                images.len()
            )));
        }
        let target = split_counts(images.len(), ratios);
        let mut have = [0usize; 3];
        let mut fresh: Vec<&str> = Vec::new();
        for &img in images {
            match assigned.get(img) {
                Some(s) => have[*s as usize] += 1,
                None => fresh.push(img),
            }
        }
        fresh.shuffle(&mut rng::stream(seed, &format!("split/{task}")));
        let mut it = fresh.into_iter();
        for (k, split) in [Split::Train, Split::Valid, Split::Test].into_iter().enumerate() {
            let need = if k == 2 { usize::MAX } else { target[k].saturating_sub(have[k]) };
            for img in it.by_ref().take(need) {
                assigned.insert(img.to_string(), split);
            }
        }
    }
    for r in records.iter_mut() {
        r.split = assigned.get(&r.name).copied();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Condition;

    fn recs(task: &str, n: usize) -> Vec<ScanpathRecord> {
        (0..n)
            .map(|i| ScanpathRecord {
                name: format!("{task}{i}.jpg"),
                task: task.into(),
                condition: Condition::Absent,
                bbox: None,
                x: vec![1.0],
                y: vec![1.0],
                subject: None,
                split: None,
                processed: false,
            })
            .collect()
    }

    fn count(r: &[ScanpathRecord], s: Split) -> usize {
        r.iter().filter(|x| x.split == Some(s)).count()
    }

    #[test]
    fn hundred_records() {
        let mut r = recs("a", 100);
        assign_splits(&mut r, DEFAULT_RATIOS, 1).unwrap();
        assert_eq!([count(&r, Split::Train), count(&r, Split::Valid), count(&r, Split::Test)], [70, 10, 20]);
        let mut again = recs("a", 100);
        assign_splits(&mut again, DEFAULT_RATIOS, 1).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn tiny_class_is_rejected() {
        let mut r = recs("a", 2);
        assert!(assign_splits(&mut r, DEFAULT_RATIOS, 1).is_err());
    }

    #[test]
    fn counts_for_37() {
        assert_eq!(split_counts(37, DEFAULT_RATIOS), [26, 4, 7]);
    }
}
