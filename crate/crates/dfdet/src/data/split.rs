//! Deterministic split construction. The validation set is carved out of
//! test-marked manifests per-source, mirroring a validation set built from a
//! fraction of each test corpus.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::stream_rng;

use super::manifest::{Split, VideoManifest};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    /// Fraction of each test source moved into validation.
    pub val_fraction: f64,
    /// Per-method/dataset overrides of `val_fraction`.
    #[serde(default)]
    pub per_tag_val_fraction: BTreeMap<String, f64>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { seed: 0, val_fraction: 0.15, per_tag_val_fraction: BTreeMap::new() }
    }
}

/// Partition manifests into (train, val, test). Manifests already marked
/// train/val keep their split; test-marked manifests donate a per-source
/// fraction to validation, deterministically under the seed.
pub fn build_split(
    manifests: Vec<VideoManifest>,
    spec: &SplitSpec,
) -> Result<(Vec<VideoManifest>, Vec<VideoManifest>, Vec<VideoManifest>)> {
    let mut seen = BTreeSet::new();
    for m in &manifests {
        if !seen.insert(m.video_id.clone()) {
            return Err(Error::Integrity(format!("duplicate video id `{}`", m.video_id)));
        }
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut by_tag: BTreeMap<String, Vec<VideoManifest>> = BTreeMap::new();
    for m in manifests {
        match m.split {
            Split::Train => train.push(m),
            Split::Val => val.push(m),
            Split::Test => by_tag.entry(m.method_tag.clone()).or_default().push(m),
        }
    }

    let mut test = Vec::new();
    for (tag, mut group) in by_tag {
        group.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        let frac = spec.per_tag_val_fraction.get(&tag).copied().unwrap_or(spec.val_fraction);
        let n_val = (group.len() as f64 * frac).round() as usize;
        let mut rng = stream_rng(spec.seed, &format!("split:{tag}"));
        group.shuffle(&mut rng);
        for (i, mut m) in group.into_iter().enumerate() {
            if i < n_val {
                m.split = Split::Val;
                val.push(m);
            } else {
                test.push(m);
            }
        }
    }
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    use crate::data::manifest::Label;

    fn manifest(id: &str, tag: &str, split: Split) -> VideoManifest {
        VideoManifest {
            video_id: id.into(),
            source_path: PathBuf::from(id),
            label: Label::Fake,
            method_tag: tag.into(),
            split,
            frames: Vec::new(),
        }
    }

    #[test]
    fn fifteen_percent_of_one_hundred_test_videos() {
        let manifests: Vec<_> =
            (0..100).map(|i| manifest(&format!("v{i:03}"), "cdf", Split::Test)).collect();
        let spec = SplitSpec { seed: 3, val_fraction: 0.15, ..Default::default() };
        let (train, val, test) = build_split(manifests, &spec).unwrap();
        assert!(train.is_empty());
        assert_eq!(val.len(), 15);
        assert_eq!(test.len(), 85);
        let val_ids: BTreeSet<_> = val.iter().map(|m| m.video_id.clone()).collect();
        assert!(test.iter().all(|m| !val_ids.contains(&m.video_id)), "no leakage");
        assert!(val.iter().all(|m| m.split == Split::Val));
    }

    #[test]
    fn empty_input_gives_three_empty_lists() {
        let (a, b, c) = build_split(Vec::new(), &SplitSpec::default()).unwrap();
        assert!(a.is_empty() && b.is_empty() && c.is_empty());
    }

    #[test]
    fn same_seed_reproduces_the_split() {
        let make = || -> Vec<_> {
            (0..40)
                .map(|i| {
                    let tag = if i % 2 == 0 { "a" } else { "b" };
                    manifest(&format!("v{i}"), tag, Split::Test)
                })
                .collect()
        };
        let spec = SplitSpec { seed: 11, val_fraction: 0.25, ..Default::default() };
        let (_, val1, test1) = build_split(make(), &spec).unwrap();
        let (_, val2, test2) = build_split(make(), &spec).unwrap();
        let ids = |v: &[VideoManifest]| v.iter().map(|m| m.video_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&val1), ids(&val2));
        assert_eq!(ids(&test1), ids(&test2));

        let other = SplitSpec { seed: 12, ..spec };
        let (_, val3, _) = build_split(make(), &other).unwrap();
        assert_ne!(ids(&val1), ids(&val3), "different seed should reshuffle");
    }

    #[test]
    fn duplicate_ids_are_an_integrity_error() {
        let manifests = vec![
            manifest("dup", "a", Split::Train),
            manifest("dup", "b", Split::Test),
        ];
        assert!(matches!(
            build_split(manifests, &SplitSpec::default()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn preexisting_train_and_val_are_preserved() {
        let manifests = vec![
            manifest("t1", "ff", Split::Train),
            manifest("v1", "mix", Split::Val),
            manifest("x1", "cdf", Split::Test),
            manifest("x2", "cdf", Split::Test),
        ];
        let spec = SplitSpec { seed: 0, val_fraction: 0.5, ..Default::default() };
        let (train, val, test) = build_split(manifests, &spec).unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(val.len(), 2); // v1 plus one carved from cdf
        assert_eq!(test.len(), 1);
    }
}
