//! Seeded Gaussian-blob datasets with planted label noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingMatrix, LabelVocab, LabeledDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub classes: usize,
    pub d: usize,
    pub centroid_separation: f64,
    pub noise_sigma: f64,
    pub label_flip_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_per_class: 100,
            classes: 2,
            d: 8,
            centroid_separation: 6.0,
            noise_sigma: 1.0,
            label_flip_rate: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.n_per_class < 1 {
            return bad("n_per_class must be >= 1".into());
        }
        if self.d < self.classes {
            return bad(format!(
                "dimension {} cannot hold {} mutually equidistant centroids",
                self.d, self.classes
            ));
        }
        if !(self.centroid_separation.is_finite() && self.centroid_separation > 0.0) {
            return bad(format!(
                "centroid_separation must be > 0, got {}",
                self.centroid_separation
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if !(0.0..0.5).contains(&self.label_flip_rate) {
            return bad(format!(
                "label_flip_rate must lie in [0, 0.5), got {}",
                self.label_flip_rate
            ));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n_per_class * self.classes
    }

    pub fn flip_count(&self) -> usize {
        (self.label_flip_rate * self.total() as f64).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: LabeledDataset,
    /// `true` where the observed label differs from the generating class.
    pub flip_mask: Vec<bool>,
    pub true_labels: Vec<usize>,
}

pub fn class_name(c: usize) -> String {
    format!("class{c}")
}

/// Class `c` is centered on `r * e_c` with `r = separation / sqrt(2)`, so
/// every pair of centroids sits exactly `separation` apart. Samples are
/// emitted class-major with ids `s00000, s00001, ...`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::InvalidSpec(format!("noise_sigma: {e}")))?;
    let radius = spec.centroid_separation / std::f64::consts::SQRT_2;
    let n = spec.total();

    let mut data = Vec::with_capacity(n * spec.d);
    let mut true_labels = Vec::with_capacity(n);
    for c in 0..spec.classes {
        for _ in 0..spec.n_per_class {
            for j in 0..spec.d {
                let center = if j == c { radius } else { 0.0 };
                data.push((center + noise.sample(&mut rng)) as f32);
            }
            true_labels.push(c);
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut labels = true_labels.clone();
    let mut flip_mask = vec![false; n];
    for &i in &order[..spec.flip_count()] {
        let shift = rng.random_range(1..spec.classes);
        labels[i] = (true_labels[i] + shift) % spec.classes;
        flip_mask[i] = true;
    }

    let mut vocab = LabelVocab::default();
    for c in 0..spec.classes {
        vocab.intern(&class_name(c));
    }
    let width = n.to_string().len().max(5);
    let ids = (0..n).map(|i| format!("s{i:0width$}")).collect();
    let embeddings = EmbeddingMatrix::new(n, spec.d, data)?;
    embeddings.validate()?;
    let dataset =
        LabeledDataset::from_parts(ids, labels, vocab, vec![None; n], vec![None; n], embeddings)?;
    Ok(SyntheticDataset {
        dataset,
        flip_mask,
        true_labels,
    })
}
