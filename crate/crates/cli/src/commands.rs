use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use hardcase_core::ingest::{write_embeddings, write_labels_jsonl};
use hardcase_core::synthetic::class_name;
use hardcase_core::{
    apply_filter, evaluate, generate_synthetic, load_dataset, project_2d, score_blocked,
    select_top_k, BlockedOptions, ClassifierKind, EmbeddingFormat, EvalConfig, EvalReport,
    LabeledDataset, PenaltyParams, SyntheticSpec, ZeroRowPolicy,
};
use hardcase_service::{AppState, AuditLog, ReviewSession};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(String),
}

impl From<hardcase_core::Error> for CliError {
    fn from(e: hardcase_core::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<hardcase_service::ServiceError> for CliError {
    fn from(e: hardcase_service::ServiceError) -> Self {
        match e {
            hardcase_service::ServiceError::Core(e) => e.into(),
            hardcase_service::ServiceError::Audit(e) => CliError::Io(format!("audit log: {e}")),
            other => CliError::Validation(other.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}

impl PenaltyArgs {
    fn resolve(&self) -> Result<PenaltyParams, CliError> {
        Ok(PenaltyParams::new(self.a, self.b, self.mode.into())?)
    }
}

impl EngineArgs {
    fn resolve(&self) -> Result<BlockedOptions, CliError> {
        let workers = self
            .workers
            .unwrap_or_else(|| BlockedOptions::default().workers);
        Ok(BlockedOptions::new(self.block_size, workers)?)
    }
}

fn load(data: &DataArgs) -> Result<(LabeledDataset, Vec<usize>), CliError> {
    let policy = if data.drop_zero_rows {
        ZeroRowPolicy::Drop
    } else {
        ZeroRowPolicy::Reject
    };
    let (ds, dropped) = load_dataset(&data.embeddings, &data.labels, policy)?;
    if !dropped.is_empty() {
        warn(format_args!(
            "dropped {} zero-norm embedding rows",
            dropped.len()
        ));
    }
    Ok((ds, dropped))
}

/// Runs `f` against the file at `path`, or against stdout.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> CliResult {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(io_err(p))?;
            let mut w = BufWriter::new(file);
            f(&mut w).and_then(|_| w.flush()).map_err(io_err(p))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w)
                .and_then(|_| w.flush())
                .map_err(|e| CliError::Io(format!("stdout: {e}")))
        }
    }
}

fn write_json(path: Option<&Path>, value: &Value) -> CliResult {
    with_output(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

fn meta_path(meta: Option<&PathBuf>, out: Option<&PathBuf>) -> Option<PathBuf> {
    meta.cloned().or_else(|| {
        out.map(|o| {
            let mut s = o.clone().into_os_string();
            s.push(".meta.json");
            PathBuf::from(s)
        })
    })
}

fn provenance<C: Serialize>(
    command: &str,
    config: &C,
    params: &PenaltyParams,
    opts: Option<&BlockedOptions>,
    ds: &LabeledDataset,
    dropped: &[usize],
) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "params": params,
        "blocked": opts,
        "dataset_fingerprint": ds.fingerprint(),
        "n": ds.n(),
        "d": ds.embeddings().d(),
        "dropped_rows": dropped,
    })
}

pub fn score(args: &ScoreArgs) -> CliResult {
    let params = args.penalty.resolve()?;
    let opts = args.engine.resolve()?;
    let (ds, dropped) = load(&args.data)?;
    let table = score_blocked(&ds, &params, &opts)?;
    with_output(args.out.as_deref(), |w| table.write_csv(w))?;
    if let Some(meta) = meta_path(args.meta.as_ref(), args.out.as_ref()) {
        let v = provenance("score", args, &params, Some(&opts), &ds, &dropped);
        write_json(Some(&meta), &v)?;
    }
    Ok(())
}

pub fn filter(args: &FilterArgs) -> CliResult {
    let params = args.penalty.resolve()?;
    let opts = args.engine.resolve()?;
    hardcase_core::filter::validate_k(args.k)?;
    if args.depletion_factor.is_nan() || args.depletion_factor <= 0.0 {
        return Err(CliError::Validation(
            "--depletion-factor must be > 0".into(),
        ));
    }
    let (ds, dropped) = load(&args.data)?;
    let table = score_blocked(&ds, &params, &opts)?;
    let manifest = select_top_k(&table, &ds, args.k, args.depletion_factor)?;
    for w in &manifest.warnings {
        warn(w);
    }
    let mut v = serde_json::to_value(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    v["provenance"] = provenance("filter", args, &params, Some(&opts), &ds, &dropped);
    write_json(args.manifest.as_deref(), &v)?;

    if args.out_labels.is_some() || args.out_embeddings.is_some() {
        let kept = apply_filter(&ds, &manifest)?;
        if let Some(p) = &args.out_labels {
            with_output(Some(p), |w| write_labels_jsonl(w, &kept))?;
        }
        if let Some(p) = &args.out_embeddings {
            write_embeddings(p, kept.embeddings(), EmbeddingFormat::from_path(p))?;
        }
    }
    Ok(())
}

fn print_eval_table(report: &EvalReport) {
    println!(
        "{:<6} {:>6} {:>10} {:>10} {:>9}",
        "mode", "k%", "train", "macro_f1", "delta"
    );
    for r in &report.rows {
        println!(
            "{:<6} {:>6} {:>10} {:>10.4} {:>+9.4}",
            report.mode.as_str(),
            r.k,
            r.train_size,
            r.macro_f1,
            r.macro_f1 - report.baseline_f1
        );
    }
    println!(
        "baseline {:.4}  best k={} ({:.4})",
        report.baseline_f1,
        report.best_k,
        report.f1_at(report.best_k).unwrap_or(f64::NAN)
    );
}

pub fn eval(args: &EvalArgs) -> CliResult {
    let params = args.penalty.resolve()?;
    let opts = args.engine.resolve()?;
    let classifier = match args.classifier {
        ClassifierArg::NearestCentroid => ClassifierKind::NearestCentroid,
        ClassifierArg::Knn => ClassifierKind::KnnCosine {
            k_neighbors: args.knn_k,
        },
    };
    let cfg = EvalConfig {
        k_list: args.k_list.clone(),
        classifier,
        params,
        split_seed: args.seed,
        test_fraction: args.test_fraction,
        depletion_factor: args.depletion_factor,
    };
    cfg.validate()?;
    let (ds, dropped) = load(&args.data)?;
    let report = evaluate(&ds, &cfg, &opts)?;
    for row in &report.rows {
        for w in &row.warnings {
            warn(format_args!("k={}: {w}", row.k));
        }
    }
    print_eval_table(&report);
    if let Some(p) = &args.out {
        with_output(Some(p), |w| report.write_csv(w))?;
    }
    if let Some(p) = &args.json {
        let mut v = serde_json::to_value(&report).map_err(|e| CliError::Io(e.to_string()))?;
        v["provenance"] = provenance("eval", args, &params, Some(&opts), &ds, &dropped);
        write_json(Some(p), &v)?;
    }
    Ok(())
}

pub fn project(args: &ProjectArgs) -> CliResult {
    let params = args.penalty.resolve()?;
    let opts = args.engine.resolve()?;
    hardcase_core::filter::validate_k(args.k)?;
    let (ds, dropped) = load(&args.data)?;
    let table = score_blocked(&ds, &params, &opts)?;
    let count = hardcase_core::filter::removal_count(table.n(), args.k);
    let highlight: HashSet<String> = table
        .ranked_indices()
        .into_iter()
        .take(count)
        .map(|i| table.ids[i].clone())
        .collect();
    let projection = project_2d(&ds, &highlight)?;
    if projection.is_degenerate() {
        warn(format_args!(
            "embeddings span only {} principal direction(s); missing axes are zero",
            projection.rank
        ));
    }
    with_output(args.out.as_deref(), |w| projection.write_csv(w))?;
    if let Some(meta) = meta_path(args.meta.as_ref(), args.out.as_ref()) {
        let mut v = provenance("project", args, &params, Some(&opts), &ds, &dropped);
        v["rank"] = json!(projection.rank);
        v["highlighted"] = json!(count);
        write_json(Some(&meta), &v)?;
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> CliResult {
    let spec = SyntheticSpec {
        n_per_class: args.n_per_class,
        classes: args.classes,
        d: args.d,
        centroid_separation: args.separation,
        noise_sigma: args.sigma,
        label_flip_rate: args.flip_rate,
        seed: args.seed,
    };
    let out = generate_synthetic(&spec)?;
    let ds = &out.dataset;
    fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;
    let emb_path = args.out_dir.join("embeddings.embd");
    write_embeddings(&emb_path, ds.embeddings(), EmbeddingFormat::BinaryV1)?;
    with_output(Some(&args.out_dir.join("labels.jsonl")), |w| {
        write_labels_jsonl(w, ds)
    })?;
    let flipped: Vec<&String> = (0..ds.n())
        .filter(|&i| out.flip_mask[i])
        .map(|i| &ds.ids()[i])
        .collect();
    let true_labels: Vec<String> = out.true_labels.iter().map(|&c| class_name(c)).collect();
    let v = json!({
        "spec": spec,
        "dataset_fingerprint": ds.fingerprint(),
        "n": ds.n(),
        "flip_count": flipped.len(),
        "flipped_ids": flipped,
        "mask": out.flip_mask,
        "true_labels": true_labels,
    });
    write_json(Some(&args.out_dir.join("flip_mask.json")), &v)
}

pub fn serve(args: &ServeArgs) -> CliResult {
    let params = args.penalty.resolve()?;
    let opts = args.engine.resolve()?;
    let (ds, _) = load(&args.data)?;
    let audit_path = args.audit_log.clone().unwrap_or_else(|| {
        let mut s = args.data.labels.clone().into_os_string();
        s.push(".audit.jsonl");
        PathBuf::from(s)
    });
    let session = ReviewSession::open(ds, params, opts, Some(AuditLog::new(&audit_path)))?;
    tracing::info!(
        n = session.table().n(),
        decisions = session.audit().len(),
        audit_log = %audit_path.display(),
        "session loaded"
    );
    let state = AppState::new(Some(session));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime.block_on(async {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Io(format!("bind {addr}: {e}")))?;
        let local = listener
            .local_addr()
            .map_err(|e| CliError::Io(e.to_string()))?;
        eprintln!("listening on http://{local}");
        hardcase_service::serve(listener, state, args.ui_dir.as_deref())
            .await
            .map_err(|e| CliError::Io(e.to_string()))
    })
}
