//! Review session state: the ingested dataset, a working copy with reviewer
//! edits applied, the audit trail, and the current score table.

use std::collections::HashSet;
use std::sync::Arc;

use hardcase_core::filter::removal_count;
use hardcase_core::ingest::labels_to_jsonl;
use hardcase_core::{
    project_2d, score_blocked, top_contributors, BlockedOptions, Contributor, LabeledDataset,
    PenaltyParams, Projection, ScoreTable,
};
use serde::{Deserialize, Serialize};

use crate::audit::{timestamp_now, AuditLog, DecisionAction, LabelDecision};
use crate::error::ServiceError;

/// Which score column a sample page is ordered by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreColumn {
    #[default]
    #[serde(alias = "both")]
    Total,
    Case1,
    Case2,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleRow {
    pub id: String,
    pub rank: usize,
    pub cp_total: f64,
    pub cp_case1: f64,
    pub cp_case2: f64,
    pub cp_mean: f64,
    /// Value of the requested column.
    pub cp: f64,
    pub label: String,
    pub text: Option<String>,
    pub decision: Option<DecisionAction>,
    pub marked_remove: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SamplePage {
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub mode: ScoreColumn,
    pub samples: Vec<SampleRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NeighborRow {
    pub other_label: String,
    pub other_text: Option<String>,
    #[serde(flatten)]
    pub contributor: Contributor,
}

/// Body of a decision request.
#[derive(Debug, Clone, Deserialize)]
pub struct DecisionRequest {
    pub action: DecisionAction,
    #[serde(default)]
    pub new_label: Option<String>,
    #[serde(default)]
    pub reviewer: Option<String>,
}

/// A snapshot of the working copy, ready to score off-thread.
#[derive(Debug, Clone)]
pub struct RescoreInput {
    pub dataset: LabeledDataset,
    pub params: PenaltyParams,
    pub opts: BlockedOptions,
}

#[derive(Debug)]
pub struct ReviewSession {
    /// Full dataset with current working labels; removal is tracked apart.
    working: LabeledDataset,
    removed: Vec<bool>,
    last_action: Vec<Option<DecisionAction>>,
    audit: Vec<LabelDecision>,
    log: Option<AuditLog>,
    params: PenaltyParams,
    opts: BlockedOptions,
    table: Arc<ScoreTable>,
    /// `working` row index for each table row.
    table_rows: Vec<usize>,
    working_fingerprint: String,
}

impl ReviewSession {
    /// Builds a session, replays any existing audit log, and scores the
    /// resulting working copy.
    pub fn open(
        dataset: LabeledDataset,
        params: PenaltyParams,
        opts: BlockedOptions,
        log: Option<AuditLog>,
    ) -> Result<Self, ServiceError> {
        let past = match &log {
            Some(l) => l.read().map_err(ServiceError::Audit)?,
            None => Vec::new(),
        };
        let n = dataset.n();
        let mut session = Self {
            working: dataset,
            removed: vec![false; n],
            last_action: vec![None; n],
            audit: Vec::new(),
            log,
            params,
            opts,
            table: Arc::new(ScoreTable {
                ids: Vec::new(),
                cp_total: Vec::new(),
                cp_case1: Vec::new(),
                cp_case2: Vec::new(),
                rank: Vec::new(),
                params,
                dataset_fingerprint: String::new(),
            }),
            table_rows: Vec::new(),
            working_fingerprint: String::new(),
        };
        for d in past {
            session.apply(d)?;
        }
        let input = session.rescore_input();
        let rows = session.kept_rows();
        let table = score_blocked(&input.dataset, &input.params, &input.opts)?;
        session.install_table(table, rows);
        session.refresh_fingerprint();
        Ok(session)
    }

    pub fn params(&self) -> &PenaltyParams {
        &self.params
    }

    pub fn opts(&self) -> &BlockedOptions {
        &self.opts
    }

    pub fn table(&self) -> &Arc<ScoreTable> {
        &self.table
    }

    pub fn audit(&self) -> &[LabelDecision] {
        &self.audit
    }

    pub fn working(&self) -> &LabeledDataset {
        &self.working
    }

    pub fn removed_count(&self) -> usize {
        self.removed.iter().filter(|&&r| r).count()
    }

    pub fn table_fingerprint(&self) -> &str {
        &self.table.dataset_fingerprint
    }

    /// Fingerprint of the dataset a rescore would see right now.
    pub fn working_fingerprint(&self) -> &str {
        &self.working_fingerprint
    }

    pub fn is_stale(&self) -> bool {
        self.table.dataset_fingerprint != self.working_fingerprint
    }

    fn kept_rows(&self) -> Vec<usize> {
        (0..self.working.n())
            .filter(|&i| !self.removed[i])
            .collect()
    }

    fn effective(&self) -> LabeledDataset {
        self.working.subset(&self.kept_rows())
    }

    fn refresh_fingerprint(&mut self) {
        self.working_fingerprint = self.effective().fingerprint();
    }

    fn index_of(&self, id: &str) -> Result<usize, ServiceError> {
        self.working
            .index_of(id)
            .ok_or_else(|| ServiceError::UnknownSample(id.to_owned()))
    }

    pub fn samples(&self, offset: usize, limit: usize, mode: ScoreColumn) -> SamplePage {
        let t = &self.table;
        let column = |i: usize| match mode {
            ScoreColumn::Total => t.cp_total[i],
            ScoreColumn::Case1 => t.cp_case1[i],
            ScoreColumn::Case2 => t.cp_case2[i],
        };
        let mut order = t.ranked_indices();
        if mode != ScoreColumn::Total {
            // stable sort keeps rank order among equal values
            order.sort_by(|&a, &b| column(b).total_cmp(&column(a)));
        }
        let samples = order
            .into_iter()
            .skip(offset)
            .take(limit)
            .map(|r| {
                let w = self.table_rows[r];
                SampleRow {
                    id: t.ids[r].clone(),
                    rank: t.rank[r],
                    cp_total: t.cp_total[r],
                    cp_case1: t.cp_case1[r],
                    cp_case2: t.cp_case2[r],
                    cp_mean: t.cp_mean(r),
                    cp: column(r),
                    label: self.working.label_name(w).to_owned(),
                    text: self.working.texts()[w].clone(),
                    decision: self.last_action[w],
                    marked_remove: self.removed[w],
                }
            })
            .collect();
        SamplePage {
            total: t.n(),
            offset,
            limit,
            mode,
            samples,
        }
    }

    /// Largest pair contributors for `id` over the working copy, skipping
    /// samples marked for removal.
    pub fn neighbors(&self, id: &str, top_m: usize) -> Result<Vec<NeighborRow>, ServiceError> {
        let i = self.index_of(id)?;
        let top = top_contributors(&self.working, i, &self.params, top_m, Some(&self.removed))?;
        Ok(top
            .into_iter()
            .map(|c| NeighborRow {
                other_label: self.working.label_name(c.index).to_owned(),
                other_text: self.working.texts()[c.index].clone(),
                contributor: c,
            })
            .collect())
    }

    /// Validates a request against the working copy, persists it, then
    /// applies it.
    pub fn decide(
        &mut self,
        id: &str,
        req: DecisionRequest,
    ) -> Result<LabelDecision, ServiceError> {
        let i = self.index_of(id)?;
        let old_label = self.working.label_name(i).to_owned();
        let new_label = match (req.action, req.new_label) {
            (_, Some(l)) => l,
            (DecisionAction::Relabel, None) => {
                return Err(ServiceError::InvalidDecision(
                    "relabel requires new_label".into(),
                ))
            }
            (_, None) => old_label.clone(),
        };
        let decision = LabelDecision {
            sample_id: id.to_owned(),
            old_label,
            new_label,
            action: req.action,
            timestamp: timestamp_now(),
            reviewer: req.reviewer.unwrap_or_else(|| "anonymous".into()),
        };
        decision.check().map_err(ServiceError::InvalidDecision)?;
        if let Some(log) = &self.log {
            log.append(&decision).map_err(ServiceError::Audit)?;
        }
        self.apply(decision.clone())?;
        self.refresh_fingerprint();
        Ok(decision)
    }

    fn apply(&mut self, d: LabelDecision) -> Result<(), ServiceError> {
        let i = self.index_of(&d.sample_id)?;
        if d.action == DecisionAction::Relabel {
            self.working.set_label(i, &d.new_label);
        }
        self.removed[i] = d.action == DecisionAction::MarkRemove;
        self.last_action[i] = Some(d.action);
        self.audit.push(d);
        Ok(())
    }

    pub fn rescore_input(&self) -> RescoreInput {
        RescoreInput {
            dataset: self.effective(),
            params: self.params,
            opts: self.opts,
        }
    }

    /// Row mapping that a table computed from [`Self::rescore_input`] needs.
    pub fn rescore_rows(&self) -> Vec<usize> {
        self.kept_rows()
    }

    pub fn install_table(&mut self, table: ScoreTable, rows: Vec<usize>) {
        debug_assert_eq!(table.n(), rows.len());
        self.table = Arc::new(table);
        self.table_rows = rows;
    }

    /// Working-copy labels as JSONL, excluding samples marked for removal.
    pub fn export_labels(&self) -> String {
        labels_to_jsonl(&self.effective())
    }

    /// PCA projection of the working copy with the current table's top
    /// `k_percent` highlighted.
    pub fn projection(&self, k_percent: f64) -> Result<Projection, ServiceError> {
        hardcase_core::filter::validate_k(k_percent)?;
        let count = removal_count(self.table.n(), k_percent);
        let highlight: HashSet<String> = self
            .table
            .ranked_indices()
            .into_iter()
            .take(count)
            .map(|r| self.table.ids[r].clone())
            .collect();
        Ok(project_2d(&self.effective(), &highlight)?)
    }
}

/// Folds an audit log over the ingested labels, returning `(id, label)` for
/// every sample not marked for removal. Used to check the event-sourcing
/// invariant against a live session.
pub fn replay_labels(base: &LabeledDataset, log: &[LabelDecision]) -> Vec<(String, String)> {
    let mut labels: Vec<String> = (0..base.n())
        .map(|i| base.label_name(i).to_owned())
        .collect();
    let mut removed = vec![false; base.n()];
    for d in log {
        if let Some(i) = base.index_of(&d.sample_id) {
            if d.action == DecisionAction::Relabel {
                labels[i] = d.new_label.clone();
            }
            removed[i] = d.action == DecisionAction::MarkRemove;
        }
    }
    (0..base.n())
        .filter(|&i| !removed[i])
        .map(|i| (base.ids()[i].clone(), labels[i].clone()))
        .collect()
}
