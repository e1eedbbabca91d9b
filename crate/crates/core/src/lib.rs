//! Difficulty profiling for labeled embedding datasets.
//!
//! Every sample receives a cumulative penalty summed over its pairs with all
//! other samples: similar pairs that disagree on the label are penalized by an
//! S-shaped sigmoid of their cosine similarity, and dissimilar pairs that
//! share a label by the mirrored Z-shaped sigmoid. High scorers are the
//! "difficult" samples; the crate ranks them, filters the top k%, measures
//! what the removal does to a downstream classifier, and exports a 2-D
//! projection for inspection.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod filter;
pub mod ingest;
pub mod penalty;
pub mod projection;
pub mod scoring;
pub mod synthetic;

pub use dataset::{EmbeddingMatrix, LabelVocab, LabeledDataset, Split};
pub use error::{Error, Result};
pub use eval::{
    evaluate, k_sweep, macro_f1, noise_detection_auc, predict, split_train_test, train_classifier,
    ClassifierKind, ClassifierModel, EvalConfig, EvalReport, EvalRow,
};
pub use filter::{apply_filter, select_top_k, FilterManifest, FilterWarning};
pub use ingest::{
    join, load_dataset, load_embeddings, load_labels, EmbeddingFormat, LabelRecords, ZeroRowPolicy,
};
pub use penalty::{
    cosine_similarity, pair_penalty, s_penalty, z_penalty, CaseMode, PairCase, PairPenalty,
    PenaltyParams, Similarity,
};
pub use projection::{project_2d, ProjectedPoint, Projection};
pub use scoring::{
    rank, score_blocked, score_blocked_with_progress, score_naive, top_contributors,
    BlockedOptions, Contributor, ScoreTable,
};
pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticSpec};
