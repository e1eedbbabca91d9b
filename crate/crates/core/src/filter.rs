//! Top-k% selection of difficult samples and removal manifests.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::penalty::PenaltyParams;
use crate::scoring::ScoreTable;

/// A class is flagged when its removal fraction exceeds this multiple of the
/// global removal fraction.
pub const DEFAULT_DEPLETION_FACTOR: f64 = 3.0;

pub const ROUNDING_FLOOR: &str = "floor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub size: usize,
    pub removed: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FilterWarning {
    MinorityDepletion {
        label: String,
        class_size: usize,
        removed: usize,
        removal_fraction: f64,
        global_fraction: f64,
        factor: f64,
    },
}

impl std::fmt::Display for FilterWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FilterWarning::MinorityDepletion {
                label,
                class_size,
                removed,
                removal_fraction,
                global_fraction,
                factor,
            } => write!(
                f,
                "minority depletion: class {label:?} loses {removed}/{class_size} samples \
                 ({:.1}%), more than {factor}x the global {:.1}%",
                removal_fraction * 100.0,
                global_fraction * 100.0
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterManifest {
    pub k_percent: f64,
    pub removed_count: usize,
    pub removed_ids: Vec<String>,
    pub params: PenaltyParams,
    pub per_class_stats: BTreeMap<String, ClassStats>,
    pub warnings: Vec<FilterWarning>,
    pub dataset_fingerprint: String,
    /// How `n * k / 100` is turned into a count.
    pub rounding: String,
}

/// `floor(n * k / 100)`, tolerant of binary round-off in `k`.
pub fn removal_count(n: usize, k_percent: f64) -> usize {
    let exact = n as f64 * k_percent / 100.0;
    ((exact * (1.0 + 1e-12)).floor() as usize).min(n)
}

pub fn validate_k(k_percent: f64) -> Result<()> {
    if (0.0..=100.0).contains(&k_percent) {
        Ok(())
    } else {
        Err(Error::InvalidK(k_percent))
    }
}

/// Marks ranks `1..=floor(n*k/100)` of `table` as removed. `ds` must be the
/// dataset the table was computed on.
pub fn select_top_k(
    table: &ScoreTable,
    ds: &LabeledDataset,
    k_percent: f64,
    depletion_factor: f64,
) -> Result<FilterManifest> {
    validate_k(k_percent)?;
    let fingerprint = ds.fingerprint();
    if table.dataset_fingerprint != fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: table.dataset_fingerprint.clone(),
            actual: fingerprint,
        });
    }
    let n = table.n();
    let count = removal_count(n, k_percent);
    let removed: Vec<usize> = table.ranked_indices().into_iter().take(count).collect();

    let sizes = ds.class_counts();
    let mut removed_per_class = vec![0usize; ds.num_classes()];
    for &i in &removed {
        removed_per_class[ds.labels()[i]] += 1;
    }
    let global = if n > 0 { count as f64 / n as f64 } else { 0.0 };
    let mut per_class_stats = BTreeMap::new();
    let mut warnings = Vec::new();
    for (c, (&size, &gone)) in sizes.iter().zip(&removed_per_class).enumerate() {
        if size == 0 {
            continue;
        }
        let label = ds.vocab().name(c).to_owned();
        let fraction = gone as f64 / size as f64;
        if count > 0 && fraction > depletion_factor * global {
            warnings.push(FilterWarning::MinorityDepletion {
                label: label.clone(),
                class_size: size,
                removed: gone,
                removal_fraction: fraction,
                global_fraction: global,
                factor: depletion_factor,
            });
        }
        per_class_stats.insert(
            label,
            ClassStats {
                size,
                removed: gone,
                fraction,
            },
        );
    }

    Ok(FilterManifest {
        k_percent,
        removed_count: count,
        removed_ids: removed.iter().map(|&i| table.ids[i].clone()).collect(),
        params: table.params,
        per_class_stats,
        warnings,
        dataset_fingerprint: fingerprint,
        rounding: ROUNDING_FLOOR.into(),
    })
}

/// Drops the manifest's ids from `ds`, keeping survivors in original order.
pub fn apply_filter(ds: &LabeledDataset, manifest: &FilterManifest) -> Result<LabeledDataset> {
    let fingerprint = ds.fingerprint();
    if manifest.dataset_fingerprint != fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: manifest.dataset_fingerprint.clone(),
            actual: fingerprint,
        });
    }
    let removed: HashSet<&str> = manifest.removed_ids.iter().map(String::as_str).collect();
    let keep: Vec<usize> = (0..ds.n())
        .filter(|&i| !removed.contains(ds.ids()[i].as_str()))
        .collect();
    Ok(ds.subset(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::score_naive;
    use crate::synthetic::{generate_synthetic, SyntheticSpec};

    fn blobs(n_per_class: usize, seed: u64) -> LabeledDataset {
        generate_synthetic(&SyntheticSpec {
            n_per_class,
            classes: 2,
            d: 4,
            label_flip_rate: 0.1,
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap()
        .dataset
    }

    #[test]
    fn removal_count_examples() {
        assert_eq!(removal_count(200, 5.0), 10);
        assert_eq!(removal_count(200, 0.0), 0);
        assert_eq!(removal_count(99, 1.0), 0);
        assert_eq!(removal_count(100, 29.0), 29);
        assert_eq!(removal_count(1000, 0.29 * 100.0 / 100.0), 2);
        assert_eq!(removal_count(7, 100.0), 7);
    }

    #[test]
    fn select_and_apply() {
        let ds = blobs(50, 1);
        let table = score_naive(&ds, &PenaltyParams::default());
        let m = select_top_k(&table, &ds, 5.0, DEFAULT_DEPLETION_FACTOR).unwrap();
        assert_eq!(m.removed_count, 5);
        let ranked = table.ranked_indices();
        for (pos, id) in m.removed_ids.iter().enumerate() {
            assert_eq!(id, &table.ids[ranked[pos]]);
        }
        let total: usize = m.per_class_stats.values().map(|s| s.removed).sum();
        assert_eq!(total, 5);
        assert_eq!(m.rounding, "floor");

        let filtered = apply_filter(&ds, &m).unwrap();
        assert_eq!(filtered.n(), 95);
        assert!(filtered.ids().iter().all(|id| !m.removed_ids.contains(id)));
        let mut last = None;
        for id in filtered.ids() {
            let pos = ds.index_of(id).unwrap();
            assert!(last.is_none_or(|l| l < pos));
            last = Some(pos);
        }
    }

    #[test]
    fn empty_manifest_is_identity() {
        let ds = blobs(20, 2);
        let table = score_naive(&ds, &PenaltyParams::default());
        let m = select_top_k(&table, &ds, 0.0, DEFAULT_DEPLETION_FACTOR).unwrap();
        assert!(m.removed_ids.is_empty());
        assert!(m.warnings.is_empty());
        assert_eq!(apply_filter(&ds, &m).unwrap(), ds);
    }

    #[test]
    fn stale_manifest_rejected() {
        let ds = blobs(20, 3);
        let other = blobs(20, 4);
        let table = score_naive(&ds, &PenaltyParams::default());
        let m = select_top_k(&table, &ds, 10.0, DEFAULT_DEPLETION_FACTOR).unwrap();
        assert!(matches!(
            apply_filter(&other, &m),
            Err(Error::FingerprintMismatch { .. })
        ));
        assert!(select_top_k(&table, &other, 10.0, 3.0).is_err());
    }

    #[test]
    fn invalid_k() {
        let ds = blobs(10, 5);
        let table = score_naive(&ds, &PenaltyParams::default());
        assert!(matches!(
            select_top_k(&table, &ds, 101.0, 3.0),
            Err(Error::InvalidK(_))
        ));
        assert!(select_top_k(&table, &ds, -1.0, 3.0).is_err());
        assert!(select_top_k(&table, &ds, f64::NAN, 3.0).is_err());
    }

    #[test]
    fn minority_depletion_warning() {
        use crate::dataset::{EmbeddingMatrix, LabelVocab};
        // 18 tight majority points, 2 minority points sitting inside them
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..18 {
            rows.push([1.0f32, 0.01 * i as f32]);
            labels.push("major");
        }
        rows.push([1.0, 0.05]);
        rows.push([1.0, 0.06]);
        labels.extend(["minor", "minor"]);
        let (vocab, ints) = LabelVocab::from_labels(&labels);
        let ds = LabeledDataset::from_parts(
            (0..20).map(|i| format!("s{i}")).collect(),
            ints,
            vocab,
            vec![None; 20],
            vec![None; 20],
            EmbeddingMatrix::from_rows(&rows).unwrap(),
        )
        .unwrap();
        let table = score_naive(&ds, &PenaltyParams::default());
        let m = select_top_k(&table, &ds, 10.0, DEFAULT_DEPLETION_FACTOR).unwrap();
        assert_eq!(m.removed_count, 2);
        assert_eq!(m.per_class_stats["minor"].removed, 2);
        assert!(matches!(
            &m.warnings[..],
            [FilterWarning::MinorityDepletion { label, .. }] if label == "minor"
        ));
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["warnings"][0]["kind"], "MinorityDepletion");
        assert_eq!(json["per_class_stats"]["minor"]["fraction"], 1.0);
        assert_eq!(json["params"]["mode"], "both");
        let back: FilterManifest = serde_json::from_value(json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn nested_selection() {
        let ds = blobs(60, 6);
        let table = score_naive(&ds, &PenaltyParams::default());
        let ks = [0.0, 1.0, 3.0, 5.0, 10.0, 20.0, 100.0];
        let sets: Vec<Vec<String>> = ks
            .iter()
            .map(|&k| select_top_k(&table, &ds, k, 3.0).unwrap().removed_ids)
            .collect();
        for w in sets.windows(2) {
            assert!(w[0].iter().all(|id| w[1].contains(id)));
            assert_eq!(&w[1][..w[0].len()], &w[0][..]);
        }
        assert_eq!(sets.last().unwrap().len(), 120);
    }
}
