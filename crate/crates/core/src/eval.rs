//! Downstream evaluation: does removing difficult samples help a classifier?
//!
//! Classifiers work directly in the embedding space under cosine similarity.
//! A k-sweep filters the training split at each k, retrains, and scores
//! macro-F1 on the untouched test split.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingMatrix, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::filter::{apply_filter, removal_count, select_top_k, FilterWarning};
use crate::penalty::{CaseMode, PenaltyParams};
use crate::scoring::{score_blocked, BlockedOptions, ScoreTable};

pub const DEFAULT_K_LIST: [f64; 6] = [0.0, 1.0, 3.0, 5.0, 10.0, 20.0];
pub const DEFAULT_KNN_NEIGHBORS: usize = 5;
pub const DEFAULT_TEST_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    NearestCentroid,
    KnnCosine {
        k_neighbors: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k_list: Vec<f64>,
    pub classifier: ClassifierKind,
    pub params: PenaltyParams,
    pub split_seed: u64,
    pub test_fraction: f64,
    pub depletion_factor: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_list: DEFAULT_K_LIST.to_vec(),
            classifier: ClassifierKind::default(),
            params: PenaltyParams::default(),
            split_seed: 0,
            test_fraction: DEFAULT_TEST_FRACTION,
            depletion_factor: crate::filter::DEFAULT_DEPLETION_FACTOR,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !self.k_list.contains(&0.0) {
            return bad("k_list must contain 0 (the baseline)".into());
        }
        for &k in &self.k_list {
            crate::filter::validate_k(k)?;
        }
        if self.k_list.windows(2).any(|w| w[0] >= w[1]) {
            return bad("k_list must be strictly increasing".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            ));
        }
        if let ClassifierKind::KnnCosine { k_neighbors: 0 } = self.classifier {
            return bad("k_neighbors must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierModel {
    NearestCentroid {
        d: usize,
        /// Per-class mean of unit-normalized training rows.
        centroids: Vec<Vec<f64>>,
    },
    KnnCosine {
        d: usize,
        k_neighbors: usize,
        unit_rows: Vec<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    },
}

impl ClassifierModel {
    pub fn dim(&self) -> usize {
        match self {
            ClassifierModel::NearestCentroid { d, .. } | ClassifierModel::KnnCosine { d, .. } => *d,
        }
    }
}

/// Trains on `train`. Every class in the vocabulary needs at least one
/// sample, otherwise [`Error::EmptyClass`] names the first empty one.
pub fn train_classifier(train: &LabeledDataset, kind: ClassifierKind) -> Result<ClassifierModel> {
    let counts = train.class_counts();
    if let Some(c) = counts.iter().position(|&k| k == 0) {
        return Err(Error::EmptyClass(train.vocab().name(c).to_owned()));
    }
    let d = train.embeddings().d();
    let unit = train.embeddings().normalized_rows();
    match kind {
        ClassifierKind::NearestCentroid => {
            let mut centroids = vec![vec![0.0; d]; counts.len()];
            for (i, &l) in train.labels().iter().enumerate() {
                for (c, &x) in centroids[l].iter_mut().zip(&unit[i * d..(i + 1) * d]) {
                    *c += x;
                }
            }
            for (c, &k) in centroids.iter_mut().zip(&counts) {
                c.iter_mut().for_each(|x| *x /= k as f64);
            }
            Ok(ClassifierModel::NearestCentroid { d, centroids })
        }
        ClassifierKind::KnnCosine { k_neighbors } => {
            if k_neighbors == 0 {
                return Err(Error::InvalidConfig("k_neighbors must be >= 1".into()));
            }
            Ok(ClassifierModel::KnnCosine {
                d,
                k_neighbors,
                unit_rows: unit,
                labels: train.labels().to_vec(),
                num_classes: counts.len(),
            })
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Class indices for every row. Ties go to the lower class index.
pub fn predict(model: &ClassifierModel, embeddings: &EmbeddingMatrix) -> Result<Vec<usize>> {
    if embeddings.d() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: embeddings.d(),
        });
    }
    let d = model.dim();
    let queries = embeddings.normalized_rows();
    let out = (0..embeddings.n())
        .map(|q| {
            let x = &queries[q * d..(q + 1) * d];
            match model {
                ClassifierModel::NearestCentroid { centroids, .. } => {
                    predict_centroid(centroids, x)
                }
                ClassifierModel::KnnCosine {
                    k_neighbors,
                    unit_rows,
                    labels,
                    num_classes,
                    ..
                } => predict_knn(unit_rows, labels, *num_classes, *k_neighbors, d, x),
            }
        })
        .collect();
    Ok(out)
}

fn predict_centroid(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let norm = dot(centroid, centroid).sqrt();
        let sim = if norm > 0.0 {
            dot(centroid, x) / norm
        } else {
            f64::NEG_INFINITY
        };
        if sim > best_sim {
            best = c;
            best_sim = sim;
        }
    }
    best
}

fn predict_knn(
    unit_rows: &[f64],
    labels: &[usize],
    num_classes: usize,
    k: usize,
    d: usize,
    x: &[f64],
) -> usize {
    let mut sims: Vec<(f64, usize)> = (0..labels.len())
        .map(|j| (dot(&unit_rows[j * d..(j + 1) * d], x), j))
        .collect();
    let k = k.min(sims.len());
    let by_sim = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < sims.len() {
        sims.select_nth_unstable_by(k - 1, by_sim);
    }
    let mut votes = vec![0usize; num_classes];
    for &(_, j) in &sims[..k] {
        votes[labels[j]] += 1;
    }
    // first maximum = lowest class index among ties
    votes
        .iter()
        .enumerate()
        .fold(
            (0, 0),
            |(bc, bv), (c, &v)| if v > bv { (c, v) } else { (bc, bv) },
        )
        .0
}

/// F1 per class; `0/0` precision or recall counts as 0.
pub fn per_class_f1(predicted: &[usize], actual: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    if predicted.len() != actual.len() || actual.is_empty() {
        return Err(Error::LengthMismatch {
            predicted: predicted.len(),
            actual: actual.len(),
        });
    }
    let mut tp = vec![0usize; num_classes];
    let mut pred_count = vec![0usize; num_classes];
    let mut true_count = vec![0usize; num_classes];
    for (&p, &a) in predicted.iter().zip(actual) {
        if p < num_classes {
            pred_count[p] += 1;
        }
        if a < num_classes {
            true_count[a] += 1;
        }
        if p == a && p < num_classes {
            tp[p] += 1;
        }
    }
    Ok((0..num_classes)
        .map(|c| {
            let precision = ratio(tp[c], pred_count[c]);
            let recall = ratio(tp[c], true_count[c]);
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .collect())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Unweighted mean of per-class F1 over all `num_classes` classes.
pub fn macro_f1(predicted: &[usize], actual: &[usize], num_classes: usize) -> Result<f64> {
    let f1 = per_class_f1(predicted, actual, num_classes)?;
    Ok(if f1.is_empty() {
        0.0
    } else {
        f1.iter().sum::<f64>() / f1.len() as f64
    })
}

/// Splits `ds` into (train, test). Split tags win when present: `test` rows
/// form the test set, `validation` rows are set aside, the rest train.
/// Untagged datasets get a seeded stratified split.
pub fn split_train_test(
    ds: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test): (Vec<usize>, Vec<usize>) = if ds.has_splits() {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, s) in ds.splits().iter().enumerate() {
            match s {
                Some(Split::Test) => test.push(i),
                Some(Split::Validation) => {}
                Some(Split::Train) | None => train.push(i),
            }
        }
        (train, test)
    } else {
        stratified_split(ds, test_fraction, seed)
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "split produced {} train and {} test samples",
            train.len(),
            test.len()
        )));
    }
    Ok((ds.subset(&train), ds.subset(&test)))
}

fn stratified_split(
    ds: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = vec![Vec::new(); ds.num_classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut is_test = vec![false; ds.n()];
    for members in &mut by_class {
        if members.len() < 2 {
            continue;
        }
        members.shuffle(&mut rng);
        let take =
            ((members.len() as f64 * test_fraction).round() as usize).clamp(1, members.len() - 1);
        for &i in &members[..take] {
            is_test[i] = true;
        }
    }
    (0..ds.n()).partition(|&i| !is_test[i])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub k: f64,
    pub train_size: usize,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<FilterWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classifier: ClassifierKind,
    pub mode: CaseMode,
    pub baseline_f1: f64,
    pub best_k: f64,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, k: f64) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    pub fn f1_at(&self, k: f64) -> Option<f64> {
        self.row(k).map(|r| r.macro_f1)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let res = (|| {
            wtr.write_record(["mode", "k", "train_size", "macro_f1"])?;
            for r in &self.rows {
                wtr.write_record([
                    self.mode.as_str(),
                    &r.k.to_string(),
                    &r.train_size.to_string(),
                    &r.macro_f1.to_string(),
                ])?;
            }
            Ok::<_, csv::Error>(())
        })();
        res.map_err(io::Error::other)?;
        wtr.flush()
    }
}

/// For each k: drop the top-k% of `train` by `table`, retrain, and score on
/// `test`. `table` must be scored on `train` itself.
pub fn k_sweep(
    train: &LabeledDataset,
    test: &LabeledDataset,
    table: &ScoreTable,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let names = train.vocab().names();
    let actual: Vec<usize> = (0..test.n())
        .map(|i| {
            train
                .vocab()
                .get(test.label_name(i))
                .ok_or_else(|| Error::EmptyClass(test.label_name(i).to_owned()))
        })
        .collect::<Result<_>>()?;

    let rows = cfg
        .k_list
        .par_iter()
        .map(|&k| {
            let manifest = select_top_k(table, train, k, cfg.depletion_factor)?;
            let filtered = apply_filter(train, &manifest)?;
            debug_assert_eq!(filtered.n(), train.n() - removal_count(train.n(), k));
            let model = train_classifier(&filtered, cfg.classifier)?;
            let predicted = predict(&model, test.embeddings())?;
            let f1 = per_class_f1(&predicted, &actual, names.len())?;
            Ok(EvalRow {
                k,
                train_size: filtered.n(),
                macro_f1: f1.iter().sum::<f64>() / f1.len() as f64,
                per_class_f1: names.iter().cloned().zip(f1).collect(),
                warnings: manifest.warnings,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let baseline_f1 = rows
        .iter()
        .find(|r| r.k == 0.0)
        .map(|r| r.macro_f1)
        .expect("validated k_list contains 0");
    let best = rows.iter().fold(
        &rows[0],
        |best, r| if r.macro_f1 > best.macro_f1 { r } else { best },
    );
    Ok(EvalReport {
        classifier: cfg.classifier,
        mode: table.params.mode(),
        baseline_f1,
        best_k: best.k,
        rows,
    })
}

/// Split, score the training portion, and sweep.
pub fn evaluate(
    ds: &LabeledDataset,
    cfg: &EvalConfig,
    opts: &BlockedOptions,
) -> Result<EvalReport> {
    cfg.validate()?;
    let (train, test) = split_train_test(ds, cfg.test_fraction, cfg.split_seed)?;
    let table = score_blocked(&train, &cfg.params, opts)?;
    k_sweep(&train, &test, &table, cfg)
}

/// Probability that a flipped sample outranks a clean one by `cp_total`,
/// counting ties as one half.
pub fn noise_detection_auc(table: &ScoreTable, flip_mask: &[bool]) -> Result<f64> {
    auc(&table.cp_total, flip_mask)
}

pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::LengthMismatch {
            predicted: scores.len(),
            actual: positive.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateMask);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + end + 1) as f64 / 2.0;
        rank_sum_pos += midrank * order[start..end].iter().filter(|&&i| positive[i]).count() as f64;
        start = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}
