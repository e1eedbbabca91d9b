//! In-memory dataset types shared by every stage of the pipeline.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row-major `n x d` matrix of 32-bit embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from raw row-major storage, checking shape only.
    /// Datasets produced by the loaders additionally satisfy `n >= 2` and
    /// have no zero-norm rows; see [`EmbeddingMatrix::validate`].
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Format("embedding dimension must be >= 1".into()));
        }
        if data.len() != n * d {
            return Err(Error::Format(format!(
                "expected {} values for a {n}x{d} matrix, got {}",
                n * d,
                data.len()
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::Format(format!(
                    "row {i} has {} values, expected {d}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), d, data)
    }

    /// Enforces the loader invariants: at least two rows and a strictly
    /// positive norm on every row.
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Format(format!(
                "at least 2 embedding rows are required, got {}",
                self.n
            )));
        }
        match self.zero_norm_rows().first() {
            Some(&index) => Err(Error::ZeroNormRow { index }),
            None => Ok(()),
        }
    }

    pub fn zero_norm_rows(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.row(i).iter().all(|&x| x == 0.0))
            .collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| f64::from(x)).collect()
    }

    /// Rows scaled to unit L2 norm, widened to f64. Zero rows stay zero.
    pub fn normalized_rows(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..self.n {
            let row = self.row(i);
            let norm = row
                .iter()
                .map(|&x| f64::from(x) * f64::from(x))
                .sum::<f64>()
                .sqrt();
            let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
            out.extend(row.iter().map(|&x| f64::from(x) * inv));
        }
        out
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            n: indices.len(),
            d: self.d,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

/// Label strings mapped to contiguous class indices by first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelVocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocab {
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> (Self, Vec<usize>) {
        let mut vocab = Self::default();
        let ids = labels.iter().map(|l| vocab.intern(l.as_ref())).collect();
        (vocab, ids)
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), i);
        i
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Embeddings joined with ids, labels and optional per-sample metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    ids: Vec<String>,
    labels: Vec<usize>,
    vocab: LabelVocab,
    texts: Vec<Option<String>>,
    splits: Vec<Option<Split>>,
    embeddings: EmbeddingMatrix,
}

impl LabeledDataset {
    /// Assembles a dataset, checking alignment and id uniqueness. Loader
    /// paths go through [`crate::ingest::join`], which also requires two or
    /// more classes; derived subsets (filtered train sets, test splits) are
    /// built here without that check.
    pub fn from_parts(
        ids: Vec<String>,
        labels: Vec<usize>,
        vocab: LabelVocab,
        texts: Vec<Option<String>>,
        splits: Vec<Option<Split>>,
        embeddings: EmbeddingMatrix,
    ) -> Result<Self> {
        let n = embeddings.n();
        for len in [ids.len(), labels.len(), texts.len(), splits.len()] {
            if len != n {
                return Err(Error::CountMismatch {
                    embeddings: n,
                    labels: len,
                });
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= vocab.len()) {
            return Err(Error::Format(format!(
                "label index {bad} outside vocabulary"
            )));
        }
        Ok(Self {
            ids,
            labels,
            vocab,
            texts,
            splits,
            embeddings,
        })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn num_classes(&self) -> usize {
        self.vocab.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_name(&self, i: usize) -> &str {
        self.vocab.name(self.labels[i])
    }

    pub fn vocab(&self) -> &LabelVocab {
        &self.vocab
    }

    pub fn texts(&self) -> &[Option<String>] {
        &self.texts
    }

    pub fn splits(&self) -> &[Option<Split>] {
        &self.splits
    }

    pub fn has_splits(&self) -> bool {
        self.splits.iter().any(Option::is_some)
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in the given order, sharing this vocabulary.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            vocab: self.vocab.clone(),
            texts: indices.iter().map(|&i| self.texts[i].clone()).collect(),
            splits: indices.iter().map(|&i| self.splits[i]).collect(),
            embeddings: self.embeddings.select_rows(indices),
        }
    }

    /// Sets sample `i`'s label by name, extending the vocabulary if needed.
    pub fn set_label(&mut self, i: usize, name: &str) {
        self.labels[i] = self.vocab.intern(name);
    }

    /// Copy with label names replaced; new names extend the vocabulary.
    pub fn relabeled<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        if names.len() != self.n() {
            return Err(Error::CountMismatch {
                embeddings: self.n(),
                labels: names.len(),
            });
        }
        let mut vocab = self.vocab.clone();
        let labels = names.iter().map(|l| vocab.intern(l.as_ref())).collect();
        Ok(Self {
            labels,
            vocab,
            ..self.clone()
        })
    }

    /// SHA-256 over shape, embedding bits, ids and label names. Texts and
    /// split tags do not influence scores and are excluded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"hardcase-dataset-v1");
        h.update((self.embeddings.n() as u64).to_le_bytes());
        h.update((self.embeddings.d() as u64).to_le_bytes());
        for x in self.embeddings.as_slice() {
            h.update(x.to_bits().to_le_bytes());
        }
        for (i, id) in self.ids.iter().enumerate() {
            let label = self.label_name(i);
            h.update((id.len() as u64).to_le_bytes());
            h.update(id.as_bytes());
            h.update((label.len() as u64).to_le_bytes());
            h.update(label.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LabeledDataset {
        let emb = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let (vocab, labels) = LabelVocab::from_labels(&["A", "B", "A"]);
        LabeledDataset::from_parts(
            vec!["x".into(), "y".into(), "z".into()],
            labels,
            vocab,
            vec![None; 3],
            vec![None; 3],
            emb,
        )
        .unwrap()
    }

    #[test]
    fn vocab_first_appearance() {
        let (vocab, ids) = LabelVocab::from_labels(&["spam", "ham", "spam", "eggs"]);
        assert_eq!(ids, vec![0, 1, 0, 2]);
        assert_eq!(vocab.names(), &["spam", "ham", "eggs"]);
    }

    #[test]
    fn matrix_shape_checks() {
        assert!(EmbeddingMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(EmbeddingMatrix::from_rows(&[vec![1.0f32, 2.0], vec![1.0]]).is_err());
        let m = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(m.validate(), Err(Error::ZeroNormRow { index: 1 })));
        let single = EmbeddingMatrix::from_rows(&[[1.0f32]]).unwrap();
        assert!(single.validate().is_err());
    }

    #[test]
    fn normalized_rows_are_unit() {
        let m = EmbeddingMatrix::from_rows(&[[3.0f32, 4.0], [0.0, 2.0]]).unwrap();
        let u = m.normalized_rows();
        for (x, y) in u.iter().zip([0.6, 0.8, 0.0, 1.0]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn fingerprint_tracks_labels_and_embeddings() {
        let ds = toy();
        assert_eq!(ds.fingerprint(), toy().fingerprint());
        assert_eq!(ds.fingerprint().len(), 64);
        let relabeled = ds.relabeled(&["A", "A", "B"]).unwrap();
        assert_ne!(relabeled.fingerprint(), ds.fingerprint());
        let sub = ds.subset(&[0, 2]);
        assert_ne!(sub.fingerprint(), ds.fingerprint());
        assert_eq!(sub.ids(), &["x", "z"]);
    }

    #[test]
    fn relabel_extends_vocab() {
        let ds = toy().relabeled(&["A", "C", "A"]).unwrap();
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.label_name(1), "C");
        assert_eq!(ds.class_counts(), vec![2, 0, 1]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let emb = EmbeddingMatrix::from_rows(&[[1.0f32], [2.0]]).unwrap();
        let (vocab, labels) = LabelVocab::from_labels(&["A", "B"]);
        let err = LabeledDataset::from_parts(
            vec!["s1".into(), "s1".into()],
            labels,
            vocab,
            vec![None; 2],
            vec![None; 2],
            emb,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "s1"));
    }
}
