//! Shared fixtures for the benchmarks.

use hardcase_core::{generate_synthetic, LabeledDataset, SyntheticSpec};

/// Seeded blobs with `n` samples split over `classes`, 5% label noise.
pub fn blobs(n: usize, d: usize, classes: usize) -> LabeledDataset {
    let ds = generate_synthetic(&SyntheticSpec {
        n_per_class: n.div_ceil(classes),
        classes,
        d: d.max(classes),
        label_flip_rate: 0.05,
        seed: 42,
        ..SyntheticSpec::default()
    })
    .expect("fixture spec is valid")
    .dataset;
    ds.subset(&(0..n).collect::<Vec<_>>())
}
