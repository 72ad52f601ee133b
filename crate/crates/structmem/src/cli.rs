//! Command-line frontend.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 domain error
//! (k larger than the database, curation leaving nothing, numerical
//! breakdown).

use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use structmem_core::landmark::aligned_iou;
use structmem_core::metrics::{self, DEFAULT_IOU_THRESHOLD, DEFAULT_TAU};
use structmem_core::slle::{self, SlleConfig};
use structmem_core::{
    curation, CurationConfig, Error as CoreError, MemoryDatabase, RetrievalEvalReport, RetrievalQuery,
    StructureEmbedding,
};

use crate::handle::DbHandle;
use crate::mask_io;
use crate::persist;
use crate::records::{self, PairLine};
use crate::service::{self, AppState, ServiceConfig};
use crate::synthetic::{self, SynthConfig};

#[derive(Debug, Parser)]
#[command(
    name = "structmem",
    version,
    about = "Structure-memory retrieval: curation, SLLE queries, evaluation and serving"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Curate a records file into a database directory.
    BuildDb(BuildDbArgs),
    /// Run one SLLE retrieval.
    Query(QueryArgs),
    /// Landmark retrieval accuracy for one or more databases.
    EvalRetrieval(EvalRetrievalArgs),
    /// InfoNCE loss over embedding pairs.
    EvalInfonce(EvalInfonceArgs),
    /// Objective and landmark quality as a function of K.
    SweepK(SweepKArgs),
    /// Run the HTTP retrieval service.
    Serve(ServeArgs),
    /// Write a seeded synthetic corpus (records, queries, pairs).
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct BuildDbArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Base directory for landmark paths [default: directory of --input]
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4000)]
    pub target_size: usize,
    /// DBSCAN radius in cosine distance.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long, default_value_t = 4)]
    pub min_pts: usize,
    /// Downsampling radius in cosine distance; 0 disables thinning.
    #[arg(long, default_value_t = 0.0)]
    pub radius: f64,
    /// Per-category cap [default: unlimited]
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Curation report destination [default: stdout]
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Replace an existing database at --out.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SlleArgs {
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Ridge factor applied when the local Gram matrix is singular.
    #[arg(long, default_value_t = 1e-3)]
    pub reg_epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    pub soft_threshold: f64,
}

impl SlleArgs {
    fn config(&self) -> SlleConfig {
        SlleConfig {
            k: self.k,
            alpha: self.alpha,
            reg_epsilon: self.reg_epsilon,
            soft_mask_threshold: self.soft_threshold,
        }
    }
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub db: PathBuf,
    /// JSON array, or an object with an `embedding` array.
    #[arg(long)]
    pub embedding: PathBuf,
    #[command(flatten)]
    pub slle: SlleArgs,
    /// Result destination [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the fused landmark (.png or .pbm).
    #[arg(long)]
    pub save_landmark: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalRetrievalArgs {
    /// Repeat to evaluate several databases (one table row each).
    #[arg(long, required = true)]
    pub db: Vec<PathBuf>,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou_threshold: f64,
    /// JSON report destination (array, one entry per --db).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalInfonceArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Report destination [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepKArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub reg_epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    pub soft_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou_threshold: f64,
    /// CSV destination [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Database to serve; without it the service starts degraded.
    #[arg(long, env = "STRUCTMEM_DB")]
    pub db: Option<PathBuf>,
    #[arg(long, env = "STRUCTMEM_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long, env = "STRUCTMEM_DEFAULT_K", default_value_t = 4)]
    pub default_k: usize,
    #[arg(long, env = "STRUCTMEM_DEFAULT_ALPHA", default_value_t = 0.5)]
    pub default_alpha: f64,
    #[arg(long, env = "STRUCTMEM_MAX_K", default_value_t = 64)]
    pub max_k: usize,
    /// Reject swaps to databases of any other dimension.
    #[arg(long, env = "STRUCTMEM_DIM")]
    pub dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 10)]
    pub clusters: usize,
    #[arg(long, default_value_t = 100)]
    pub per_cluster: usize,
    #[arg(long, default_value_t = 0)]
    pub outliers: usize,
    #[arg(long, default_value_t = 100)]
    pub queries: usize,
    #[arg(long, default_value_t = 64)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    /// Square landmark canvas side in pixels.
    #[arg(long, default_value_t = 48)]
    pub mask_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Domain(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Domain(m) => m,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::KTooLarge { .. }
            | CoreError::EmptyAfterCuration
            | CoreError::NumericalFailure(_)
            | CoreError::DegenerateFusion
            | CoreError::AllWeightsNonPositive
            | CoreError::EmptyDatabase => CliError::Domain(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cli: Cli) -> ExitCode {
    let outcome = match cli.command {
        Command::BuildDb(a) => build_db(&a),
        Command::Query(a) => query(&a),
        Command::EvalRetrieval(a) => eval_retrieval(&a),
        Command::EvalInfonce(a) => eval_infonce(&a),
        Command::SweepK(a) => sweep_k(&a),
        Command::Serve(a) => serve(&a),
        Command::Synth(a) => synth(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

fn load_db(path: &Path) -> CliResult<MemoryDatabase> {
    persist::load(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

pub fn build_db(a: &BuildDbArgs) -> CliResult {
    let cfg = CurationConfig {
        per_category_cap: a.cap.unwrap_or(usize::MAX),
        dbscan_eps: a.eps,
        dbscan_min_pts: a.min_pts,
        downsample_radius: a.radius,
        target_size: a.target_size,
        seed: a.seed,
    };
    cfg.validate().map_err(input)?;
    if a.out.exists() && fs::read_dir(&a.out).map_err(input)?.next().is_some() {
        if !a.force {
            return Err(input(format!(
                "{} exists and is not empty (use --force)",
                a.out.display()
            )));
        }
        if !a.out.join(persist::MANIFEST).is_file() {
            return Err(input(format!(
                "refusing to replace {}: not a database directory",
                a.out.display()
            )));
        }
    }
    let landmarks = a
        .landmarks
        .clone()
        .unwrap_or_else(|| records::parent_dir(&a.input).to_path_buf());
    let recs = records::load_records(&a.input, &landmarks).map_err(input)?;
    let (db, report) = curation::build_database(recs, &cfg)?;
    if a.force && a.out.exists() {
        fs::remove_dir_all(&a.out).map_err(input)?;
    }
    persist::save(&db, &a.out).map_err(input)?;
    eprintln!(
        "built {} records ({} in, {} after balance, {} after DBSCAN) at {}",
        report.final_count,
        report.input_count,
        report.after_balance,
        report.after_dbscan,
        a.out.display()
    );
    emit(a.report.as_deref(), &to_json(&report))
}

#[derive(Debug, Serialize)]
pub struct NeighborOut {
    pub id: String,
    pub similarity: f32,
    pub rank: usize,
}

#[derive(Debug, Serialize)]
pub struct QueryOutput {
    pub neighbors: Vec<NeighborOut>,
    pub weights: Vec<f64>,
    pub objective: f64,
    pub reconstructed: Vec<f64>,
    pub fused_embedding: Vec<f32>,
    pub landmark_id: String,
    pub landmark_index: usize,
}

pub fn query(a: &QueryArgs) -> CliResult {
    let cfg = a.slle.config();
    cfg.validate()?;
    let db = load_db(&a.db)?;
    let raw = records::read_embedding(&a.embedding).map_err(input)?;
    if raw.len() != db.dim() {
        return Err(CoreError::DimMismatch {
            expected: db.dim(),
            found: raw.len(),
        }
        .into());
    }
    let q = StructureEmbedding::new(raw)?;
    let r = slle::slle_retrieve(&db, &q, &cfg)?;
    if let Some(p) = &a.save_landmark {
        mask_io::write_mask(p, &r.fused_landmark).map_err(|e| input(format!("{}: {e}", p.display())))?;
    }
    let out = QueryOutput {
        neighbors: r
            .neighbors
            .iter()
            .map(|n| NeighborOut {
                id: n.id.clone(),
                similarity: n.similarity as f32,
                rank: n.rank,
            })
            .collect(),
        landmark_id: r.landmark_id().to_string(),
        landmark_index: r.landmark_index,
        weights: r.weights,
        objective: r.objective,
        reconstructed: r.reconstructed,
        fused_embedding: r.fused_embedding.to_f32(),
    };
    emit(a.out.as_deref(), &to_json(&out))
}

/// Text table: scale, top-1, top-5 and mean IoU per database.
pub fn retrieval_table(reports: &[RetrievalEvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} | {:<10} | {:<10} | {:<6}",
        "Scale", "Top-1 Acc.", "Top-5 Acc.", "IOU"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<6} | {:<10} | {:<10} | {:<6.4}",
            r.scale,
            format!("{:.1}%", 100.0 * r.top1_accuracy),
            format!("{:.1}%", 100.0 * r.top5_accuracy),
            r.mean_iou
        );
    }
    s
}

pub fn eval_retrieval(a: &EvalRetrievalArgs) -> CliResult {
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(input("--k values must be positive"));
    }
    if !a.iou_threshold.is_finite() {
        return Err(input("--iou-threshold must be finite"));
    }
    let queries = records::load_queries(&a.queries).map_err(input)?;
    let mut reports = Vec::with_capacity(a.db.len());
    for path in &a.db {
        let db = load_db(path)?;
        if let Some(q) = queries.iter().find(|q| q.embedding.dim() != db.dim()) {
            return Err(CoreError::DimMismatch {
                expected: db.dim(),
                found: q.embedding.dim(),
            }
            .into());
        }
        reports.push(metrics::eval_retrieval(&db, &queries, &a.k, a.iou_threshold)?);
    }
    if let Some(p) = &a.out {
        emit(Some(p), &to_json(&reports))?;
    }
    print!("{}", retrieval_table(&reports));
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct InfonceRow {
    pub row: usize,
    pub positive_similarity: f64,
    pub positive_rank: usize,
}

#[derive(Debug, Serialize)]
pub struct InfonceReport {
    pub n: usize,
    pub tau: f64,
    pub loss: f64,
    pub mean_positive_rank: f64,
    pub rows: Vec<InfonceRow>,
}

pub fn eval_infonce(a: &EvalInfonceArgs) -> CliResult {
    if !(a.tau > 0.0 && a.tau.is_finite()) {
        return Err(CoreError::NonPositiveTau.into());
    }
    let pairs = records::read_jsonl::<PairLine>(&a.pairs).map_err(input)?;
    let mut itw = Vec::with_capacity(pairs.len());
    let mut std = Vec::with_capacity(pairs.len());
    for (line, p) in pairs {
        let at = |e: CoreError| input(format!("{}:{line}: {e}", a.pairs.display()));
        itw.push(StructureEmbedding::new(p.itw).map_err(at)?);
        std.push(StructureEmbedding::new(p.standard).map_err(at)?);
    }
    let sim = metrics::similarity_matrix(&itw, &std)?;
    let (loss, _) = metrics::infonce_loss(&sim, a.tau)?;
    let ranks = sim.positive_ranks();
    let report = InfonceReport {
        n: sim.n(),
        tau: a.tau,
        loss,
        mean_positive_rank: ranks.iter().sum::<usize>() as f64 / ranks.len() as f64,
        rows: ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| InfonceRow {
                row: i,
                positive_similarity: sim.get(i, i),
                positive_rank: r,
            })
            .collect(),
    };
    emit(a.out.as_deref(), &to_json(&report))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub mean_objective: f64,
    pub mean_top1_iou: f64,
    pub top1_acc: f64,
    pub top5_acc: f64,
}

pub const SWEEP_HEADER: &str = "k,mean_objective,mean_top1_iou,top1_acc,top5_acc";

/// Per K: mean SLLE objective, mean aligned IoU of the fused landmark
/// against ground truth, the fraction of fused landmarks clearing
/// `iou_threshold`, and plain top-5 retrieval accuracy.
pub fn sweep(
    db: &MemoryDatabase,
    queries: &[RetrievalQuery],
    ks: &[usize],
    base: &SlleConfig,
    iou_threshold: f64,
) -> Result<Vec<SweepRow>, CoreError> {
    let top5 = metrics::eval_retrieval(db, queries, &[5], iou_threshold)?.top5_accuracy;
    let m = queries.len() as f64;
    ks.iter()
        .map(|&k| {
            let cfg = SlleConfig { k, ..*base };
            let (mut obj, mut iou, mut hits) = (0.0, 0.0, 0usize);
            for q in queries {
                let r = slle::slle_retrieve(db, &q.embedding, &cfg)?;
                let v = aligned_iou(&r.fused_landmark, &q.landmark)?;
                obj += r.objective;
                iou += v;
                hits += usize::from(v > iou_threshold);
            }
            Ok(SweepRow {
                k,
                mean_objective: obj / m,
                mean_top1_iou: iou / m,
                top1_acc: hits as f64 / m,
                top5_acc: top5,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.k, r.mean_objective, r.mean_top1_iou, r.top1_acc, r.top5_acc
        );
    }
    s
}

pub fn sweep_k(a: &SweepKArgs) -> CliResult {
    if a.k.is_empty() {
        return Err(input("--k needs at least one value"));
    }
    let base = SlleConfig {
        k: a.k.iter().copied().max().unwrap_or(1),
        alpha: a.alpha,
        reg_epsilon: a.reg_epsilon,
        soft_mask_threshold: a.soft_threshold,
    };
    for &k in &a.k {
        SlleConfig { k, ..base }.validate()?;
    }
    let db = load_db(&a.db)?;
    let queries = records::load_queries(&a.queries).map_err(input)?;
    if let Some(q) = queries.iter().find(|q| q.embedding.dim() != db.dim()) {
        return Err(CoreError::DimMismatch {
            expected: db.dim(),
            found: q.embedding.dim(),
        }
        .into());
    }
    let rows = sweep(&db, &queries, &a.k, &base, a.iou_threshold)?;
    emit(a.out.as_deref(), &sweep_csv(&rows))
}

pub fn serve(a: &ServeArgs) -> CliResult {
    let config = ServiceConfig {
        default_k: a.default_k,
        default_alpha: a.default_alpha,
        max_k: a.max_k,
        ..ServiceConfig::default()
    };
    config.validate().map_err(input)?;
    let handle = match &a.db {
        Some(p) => DbHandle::with_database(load_db(p)?, a.dim).map_err(input)?,
        None => DbHandle::new(a.dim),
    };
    let state = Arc::new(AppState::new(handle, config));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(input)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.bind)
            .await
            .map_err(|e| input(format!("bind {}: {e}", a.bind)))?;
        let addr = listener.local_addr().map_err(input)?;
        eprintln!("listening on {addr}");
        service::serve(listener, state, shutdown_signal())
            .await
            .map_err(input)?;
        eprintln!("shut down");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

pub fn synth(a: &SynthArgs) -> CliResult {
    if a.dim < 2 || a.clusters == 0 || a.mask_size < 4 {
        return Err(input("synth needs --dim ≥ 2, --clusters ≥ 1 and --mask-size ≥ 4"));
    }
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(input("--sigma must be a finite non-negative number"));
    }
    let data = synthetic::generate(&SynthConfig {
        dim: a.dim,
        clusters: a.clusters,
        per_cluster: a.per_cluster,
        outliers: a.outliers,
        queries: a.queries,
        pairs: a.pairs,
        sigma: a.sigma,
        mask_width: a.mask_size,
        mask_height: a.mask_size,
        seed: a.seed,
        ..SynthConfig::default()
    });
    data.write(&a.out).map_err(input)?;
    eprintln!(
        "wrote {} records, {} queries, {} pairs to {}",
        data.records.len(),
        data.queries.len(),
        data.pairs.len(),
        a.out.display()
    );
    Ok(())
}
