use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use elspin_core::bundle::ModelBundle;
use elspin_core::chemistry::{FeasibilityStatus, FeasibilityTables, IncompatibilityTable, SolubilityTable, Strictness, StrictnessPolicy};
use elspin_core::dataset::{LoadOptions, LoadReport, PolymerSummary, ProcessInputs, SpinDataset};
use elspin_core::evaluation::{EvalConfig, ALLOWED_FOLDS, MAX_TEST_FRACTION, MIN_TEST_FRACTION};
use elspin_core::imc::{run_imc, ImcConfig, ImcMode, ImcSummary, DEFAULT_TOP_K};
use elspin_core::interpret::{permutation_importance, response_grid, surrogate_tree, ImportanceReport, ResidualDiagnostics, ResponseGrid};
use elspin_core::workflow::{train, TrainRequest};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::state::{AppState, JobKind, JobState, JobStatus, ModelEntry};
use crate::UPLOAD_LIMIT_BYTES;

type AppArc = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/datasets", post(upload_dataset))
        .route("/datasets/{id}/summary", get(dataset_summary))
        .route("/datasets/{id}/polymers", get(dataset_polymers))
        .route("/train", post(start_training))
        .route("/jobs/{id}", get(job_status))
        .route("/models/{id}/metrics", get(model_metrics))
        .route("/models/{id}/diagnostics", get(model_diagnostics))
        .route("/models/{id}/importance", get(model_importance))
        .route("/models/{id}/surrogate", get(model_surrogate))
        .route("/models/{id}/surface", post(model_surface))
        .route("/models/{id}/imc", post(model_imc))
        .route("/exports/{id}", get(export))
        .route("/bundles/save", post(save_bundle))
        .route("/bundles/load", post(load_bundle))
        .route("/feasibility/status", get(feasibility_status))
        .route("/feasibility/solubility", post(upload_solubility))
        .route("/feasibility/incompatibility", post(upload_incompatibility))
        .layer(DefaultBodyLimit::max(UPLOAD_LIMIT_BYTES))
        .with_state(state)
}

fn body<T>(r: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    r.map(|Json(v)| v).map_err(|e| ApiError::new(e.status(), "invalid_request", e.body_text()))
}

/// CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

fn text(bytes: &Bytes) -> ApiResult<&str> {
    std::str::from_utf8(bytes).map_err(|_| ApiError::validation("invalid_encoding", "upload is not UTF-8 text"))
}

// ----------------------------------------------------------------- datasets

#[derive(Serialize)]
struct DatasetCreated {
    id: String,
    fingerprint: String,
    rows: usize,
    polymers: usize,
    load_report: LoadReport,
}

async fn upload_dataset(State(st): AppArc, raw: Bytes) -> ApiResult<(StatusCode, Json<DatasetCreated>)> {
    let st2 = st.clone();
    let ds = blocking(move || {
        let opts = LoadOptions { solvent_canon: Some(st2.canon.clone()), ..LoadOptions::default() };
        Ok(SpinDataset::from_reader(text(&raw)?.as_bytes(), &opts)?)
    })
    .await?;
    let fingerprint = ds.fingerprint();
    let id = format!("d{}", &fingerprint[..12]);
    let created = DatasetCreated {
        id: id.clone(),
        fingerprint,
        rows: ds.len(),
        polymers: ds.polymers().len(),
        load_report: ds.load_report().clone(),
    };
    st.datasets.write().expect("lock").entry(id).or_insert_with(|| Arc::new(ds));
    Ok((StatusCode::CREATED, Json(created)))
}

fn dataset_or_404(st: &AppState, id: &str) -> ApiResult<Arc<SpinDataset>> {
    st.dataset(id).ok_or_else(|| ApiError::not_found("dataset", id))
}

async fn dataset_summary(State(st): AppArc, Path(id): Path<String>) -> ApiResult<Json<Vec<PolymerSummary>>> {
    Ok(Json(dataset_or_404(&st, &id)?.describe(true)))
}

async fn dataset_polymers(State(st): AppArc, Path(id): Path<String>) -> ApiResult<Json<BTreeMap<String, usize>>> {
    Ok(Json(dataset_or_404(&st, &id)?.polymer_counts()))
}

// ----------------------------------------------------------------- training

#[derive(Debug, Deserialize)]
pub struct TrainBody {
    pub dataset_id: String,
    #[serde(default)]
    pub sampling: Option<String>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub sampling_seed: Option<u64>,
    #[serde(default)]
    pub test_fraction: Option<f64>,
    #[serde(default)]
    pub folds: Option<usize>,
    #[serde(default)]
    pub learners: Option<Vec<String>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct JobCreated {
    job_id: String,
    status: JobStatus,
}

fn train_request(st: &AppState, b: &TrainBody) -> ApiResult<TrainRequest> {
    let defaults = TrainRequest::default();
    let folds = b.folds.unwrap_or(defaults.eval.folds);
    if !ALLOWED_FOLDS.contains(&folds) {
        return Err(ApiError::validation("invalid_folds", format!("k must be one of {ALLOWED_FOLDS:?}, got {folds}")));
    }
    let test_fraction = b.test_fraction.unwrap_or(defaults.eval.test_fraction);
    if !(MIN_TEST_FRACTION..=MAX_TEST_FRACTION).contains(&test_fraction) {
        return Err(ApiError::validation(
            "invalid_test_fraction",
            format!("test fraction must lie in [{MIN_TEST_FRACTION}, {MAX_TEST_FRACTION}]"),
        ));
    }
    let learners = b.learners.clone().unwrap_or(defaults.learners);
    if learners.is_empty() {
        return Err(ApiError::validation("no_learners", "choose at least one learner"));
    }
    for l in &learners {
        st.learners.get(l)?;
    }
    let sampling = b.sampling.clone().filter(|s| s != "none");
    if let Some(s) = &sampling {
        st.samplers.get(s)?;
        if b.n == Some(0) {
            return Err(ApiError::validation("invalid_sample_size", "n must be positive"));
        }
    }
    let seed = b.seed.unwrap_or(defaults.eval.seed);
    Ok(TrainRequest {
        sampling,
        sample_size: b.n,
        sampling_seed: b.sampling_seed.unwrap_or(seed),
        learners,
        eval: EvalConfig { test_fraction, folds, seed, ..EvalConfig::default() },
    })
}

async fn start_training(State(st): AppArc, req: Result<Json<TrainBody>, JsonRejection>) -> ApiResult<(StatusCode, Json<JobCreated>)> {
    let b = body(req)?;
    let ds = dataset_or_404(&st, &b.dataset_id)?;
    let treq = train_request(&st, &b)?;
    let job_id = st.next_id("j");
    st.jobs.write().expect("lock").insert(
        job_id.clone(),
        JobState { id: job_id.clone(), kind: JobKind::Train, status: JobStatus::Queued, progress: 0.0, result: None, error: None },
    );
    let (st2, jid, dataset_id) = (st.clone(), job_id.clone(), b.dataset_id.clone());
    tokio::spawn(async move {
        let Ok(_permit) = st2.workers.clone().acquire_owned().await else { return };
        st2.update_job(&jid, JobStatus::Running, 0.05, None, None);
        let st3 = st2.clone();
        let outcome = tokio::task::spawn_blocking(move || train(&ds, &treq, &st3.learners, &st3.samplers)).await;
        match outcome {
            Ok(Ok(out)) => {
                let model_id = st2.next_id("m");
                let entry = ModelEntry {
                    bundle: out.bundle,
                    artifacts: Some(out.artifacts),
                    dataset_id: Some(dataset_id),
                    reference: Some(Arc::new(out.dataset)),
                };
                st2.models.write().expect("lock").insert(model_id.clone(), Arc::new(entry));
                st2.update_job(&jid, JobStatus::Done, 1.0, Some(model_id), None);
            }
            Ok(Err(e)) => st2.update_job(&jid, JobStatus::Failed, 1.0, None, Some(e.to_string())),
            Err(e) => st2.update_job(&jid, JobStatus::Failed, 1.0, None, Some(e.to_string())),
        }
    });
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id, status: JobStatus::Queued })))
}

async fn job_status(State(st): AppArc, Path(id): Path<String>) -> ApiResult<Json<JobState>> {
    st.jobs.read().expect("lock").get(&id).cloned().map(Json).ok_or_else(|| ApiError::not_found("job", &id))
}

// ------------------------------------------------------------------- models

fn model_or_404(st: &AppState, id: &str) -> ApiResult<Arc<ModelEntry>> {
    st.model(id).ok_or_else(|| ApiError::not_found("model", id))
}

#[derive(Serialize)]
struct MetricsResponse {
    model_id: String,
    metadata: elspin_core::bundle::TrainingMetadata,
    report: Option<elspin_core::evaluation::EvalReport>,
    table_export: Option<String>,
}

async fn model_metrics(State(st): AppArc, Path(id): Path<String>) -> ApiResult<Json<MetricsResponse>> {
    let m = model_or_404(&st, &id)?;
    let table_export = match &m.artifacts {
        Some(a) => {
            let mut buf = Vec::new();
            a.report.write_table(&mut buf, b',')?;
            Some(format!("/exports/{}", st.add_export(format!("{id}-metrics.csv"), "text/csv", buf)))
        }
        None => None,
    };
    Ok(Json(MetricsResponse {
        model_id: id,
        metadata: m.bundle.metadata.clone(),
        report: m.artifacts.as_ref().map(|a| a.report.clone()),
        table_export,
    }))
}

async fn model_diagnostics(State(st): AppArc, Path(id): Path<String>) -> ApiResult<Json<ResidualDiagnostics>> {
    let m = model_or_404(&st, &id)?;
    m.artifacts
        .as_ref()
        .map(|a| Json(a.diagnostics.clone()))
        .ok_or_else(|| ApiError::conflict("no_training_artifacts", "diagnostics exist only for models trained in this session"))
}

/// Held-out rows when known, otherwise every reference row.
fn evaluation_rows(m: &ModelEntry) -> ApiResult<(Vec<ProcessInputs>, Vec<f64>)> {
    let ds = m
        .reference
        .as_ref()
        .ok_or_else(|| ApiError::conflict("no_reference_data", "model has no reference dataset"))?;
    let idx: Vec<usize> = match &m.artifacts {
        Some(a) if a.report.test_rows.len() >= 2 => a.report.test_rows.clone(),
        _ => (0..ds.len()).collect(),
    };
    let recs = ds.records();
    Ok((idx.iter().map(|&i| recs[i].inputs.clone()).collect(), idx.iter().map(|&i| recs[i].fiber_diameter).collect()))
}

#[derive(Deserialize)]
struct ImportanceQuery {
    repeats: Option<usize>,
    seed: Option<u64>,
}

async fn model_importance(State(st): AppArc, Path(id): Path<String>, Query(q): Query<ImportanceQuery>) -> ApiResult<Json<ImportanceReport>> {
    let m = model_or_404(&st, &id)?;
    let repeats = q.repeats.unwrap_or(5);
    if !(1..=100).contains(&repeats) {
        return Err(ApiError::validation("invalid_repeats", "repeats must be between 1 and 100"));
    }
    let seed = q.seed.unwrap_or(m.bundle.metadata.seed);
    blocking(move || {
        let (rows, y) = evaluation_rows(&m)?;
        Ok(Json(permutation_importance(&m.bundle, &rows, &y, repeats, seed)?))
    })
    .await
}

#[derive(Deserialize)]
struct SurrogateQuery {
    max_depth: Option<usize>,
}

#[derive(Serialize)]
struct SurrogateResponse {
    max_depth: usize,
    fidelity: Option<f64>,
    rules: Vec<String>,
    text: String,
}

async fn model_surrogate(State(st): AppArc, Path(id): Path<String>, Query(q): Query<SurrogateQuery>) -> ApiResult<Json<SurrogateResponse>> {
    let m = model_or_404(&st, &id)?;
    let depth = q.max_depth.unwrap_or(3);
    if !(1..=8).contains(&depth) {
        return Err(ApiError::validation("invalid_depth", "max_depth must be between 1 and 8"));
    }
    blocking(move || {
        let ds = m.reference.as_ref().ok_or_else(|| ApiError::conflict("no_reference_data", "model has no reference dataset"))?;
        let s = surrogate_tree(&m.bundle, &ds.inputs(), depth)?;
        Ok(Json(SurrogateResponse { max_depth: depth, fidelity: s.fidelity, text: s.to_text(), rules: s.rules }))
    })
    .await
}

#[derive(Deserialize)]
struct SurfaceBody {
    var_a: String,
    var_b: String,
    #[serde(default = "default_resolution")]
    resolution: usize,
    /// Restrict ranges and reference values to one polymer.
    #[serde(default)]
    polymer: Option<String>,
}

fn default_resolution() -> usize {
    25
}

async fn model_surface(State(st): AppArc, Path(id): Path<String>, req: Result<Json<SurfaceBody>, JsonRejection>) -> ApiResult<Json<ResponseGrid>> {
    let b = body(req)?;
    let m = model_or_404(&st, &id)?;
    if !(2..=200).contains(&b.resolution) {
        return Err(ApiError::validation("invalid_resolution", "resolution must be between 2 and 200"));
    }
    blocking(move || {
        let ds = m.reference.as_ref().ok_or_else(|| ApiError::conflict("no_reference_data", "model has no reference dataset"))?;
        let rows: Vec<ProcessInputs> = match &b.polymer {
            Some(p) => ds.indices_for_polymer(p).into_iter().map(|i| ds.records()[i].inputs.clone()).collect(),
            None => ds.inputs(),
        };
        if rows.is_empty() {
            return Err(ApiError::validation("unknown_polymer", "no rows for the requested polymer"));
        }
        Ok(Json(response_grid(&m.bundle, &rows, &b.var_a, &b.var_b, b.resolution)?))
    })
    .await
}

#[derive(Deserialize)]
pub struct ImcBody {
    pub mode: String,
    pub polymer: String,
    pub target: f64,
    pub tolerance: f64,
    #[serde(default = "default_draws")]
    pub n: usize,
    #[serde(default)]
    pub strictness: Option<String>,
    #[serde(default)]
    pub no_allow_pct: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub top_k: Option<usize>,
    /// Source of empirical draws; defaults to the training dataset.
    #[serde(default)]
    pub dataset_id: Option<String>,
}

fn default_draws() -> usize {
    10_000
}

pub const MAX_IMC_DRAWS: usize = 1_000_000;

#[derive(Serialize)]
struct ImcResponse {
    summary: ImcSummary,
    draws_export: String,
    top_export: String,
}

async fn model_imc(State(st): AppArc, Path(id): Path<String>, req: Result<Json<ImcBody>, JsonRejection>) -> ApiResult<Json<ImcResponse>> {
    let b = body(req)?;
    let m = model_or_404(&st, &id)?;
    let mode: ImcMode = b.mode.parse()?;
    let strictness: Strictness = b.strictness.as_deref().unwrap_or("balanced").parse()?;
    let policy = StrictnessPolicy::new(strictness, b.no_allow_pct.unwrap_or(0.0))?;
    if b.n > MAX_IMC_DRAWS {
        return Err(ApiError::validation("too_many_draws", format!("at most {MAX_IMC_DRAWS} draws per request")));
    }
    let ds_id = b
        .dataset_id
        .clone()
        .or_else(|| m.dataset_id.clone())
        .ok_or_else(|| ApiError::validation("dataset_required", "this model has no dataset; pass dataset_id"))?;
    let ds = dataset_or_404(&st, &ds_id)?;
    let cfg = ImcConfig {
        mode,
        polymer: b.polymer.clone(),
        target: b.target,
        tolerance: b.tolerance,
        n_simulations: b.n,
        policy,
        seed: b.seed.unwrap_or(42),
        max_solvents: 3,
        top_k: b.top_k.unwrap_or(DEFAULT_TOP_K),
    };
    cfg.validate()?;
    let tables = st.tables();
    let _permit = st.workers.clone().acquire_owned().await.map_err(|e| ApiError::internal(e.to_string()))?;
    let run = blocking(move || Ok(run_imc(&cfg, &m.bundle, &ds, &tables)?)).await?;
    let mut draws = Vec::new();
    run.write_draws(&mut draws, b',')?;
    let mut top = Vec::new();
    run.write_top(&mut top, b',')?;
    let draws_export = format!("/exports/{}", st.add_export(format!("imc-{id}-draws.csv"), "text/csv", draws));
    let top_export = format!("/exports/{}", st.add_export(format!("imc-{id}-top.csv"), "text/csv", top));
    Ok(Json(ImcResponse { summary: run.summary, draws_export, top_export }))
}

async fn export(State(st): AppArc, Path(id): Path<String>) -> ApiResult<Response> {
    let e = st.exports.read().expect("lock").get(&id).cloned().ok_or_else(|| ApiError::not_found("export", &id))?;
    Ok((
        [
            (header::CONTENT_TYPE, e.content_type.to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{}\"", e.filename)),
        ],
        e.body.clone(),
    )
        .into_response())
}

// ------------------------------------------------------------------ bundles

#[derive(Deserialize)]
struct SaveBody {
    model_id: String,
    /// File name or path; relative paths resolve against the data directory.
    #[serde(default)]
    path: Option<String>,
}

#[derive(Serialize)]
struct Saved {
    model_id: String,
    path: String,
    bytes: u64,
}

async fn save_bundle(State(st): AppArc, req: Result<Json<SaveBody>, JsonRejection>) -> ApiResult<Json<Saved>> {
    let b = body(req)?;
    let m = model_or_404(&st, &b.model_id)?;
    let path = st.data_path(&b.path.unwrap_or_else(|| format!("{}.espn", b.model_id)));
    let p2 = path.clone();
    blocking(move || Ok(m.bundle.save(&p2)?)).await?;
    let bytes = std::fs::metadata(&path).map(|md| md.len()).unwrap_or(0);
    Ok(Json(Saved { model_id: b.model_id, path: path.display().to_string(), bytes }))
}

#[derive(Deserialize)]
struct LoadBody {
    path: String,
    /// Dataset to use for IMC and interpretation.
    #[serde(default)]
    dataset_id: Option<String>,
}

#[derive(Serialize)]
struct Loaded {
    model_id: String,
    learner: String,
    version: u32,
}

async fn load_bundle(State(st): AppArc, req: Result<Json<LoadBody>, JsonRejection>) -> ApiResult<(StatusCode, Json<Loaded>)> {
    let b = body(req)?;
    let reference = match &b.dataset_id {
        Some(d) => Some(dataset_or_404(&st, d)?),
        None => None,
    };
    let path = st.data_path(&b.path);
    let bundle = blocking(move || Ok(ModelBundle::load(&path)?)).await?;
    let model_id = st.next_id("m");
    let loaded = Loaded { model_id: model_id.clone(), learner: bundle.model.learner.clone(), version: bundle.version };
    st.models.write().expect("lock").insert(
        model_id,
        Arc::new(ModelEntry { bundle, artifacts: None, dataset_id: b.dataset_id, reference }),
    );
    Ok((StatusCode::CREATED, Json(loaded)))
}

// -------------------------------------------------------------- feasibility

async fn feasibility_status(State(st): AppArc) -> Json<FeasibilityStatus> {
    Json(st.tables().status())
}

async fn upload_solubility(State(st): AppArc, raw: Bytes) -> ApiResult<Json<FeasibilityStatus>> {
    let table = SolubilityTable::from_reader(text(&raw)?.as_bytes(), &st.canon)?;
    let mut guard = st.feasibility.write().expect("lock");
    let next = FeasibilityTables { solubility: table, incompatibility: guard.incompatibility.clone() };
    let status = next.status();
    *guard = Arc::new(next);
    Ok(Json(status))
}

async fn upload_incompatibility(State(st): AppArc, raw: Bytes) -> ApiResult<Json<FeasibilityStatus>> {
    let table = IncompatibilityTable::from_reader(text(&raw)?.as_bytes(), &st.canon)?;
    let mut guard = st.feasibility.write().expect("lock");
    let next = FeasibilityTables { solubility: guard.solubility.clone(), incompatibility: table };
    let status = next.status();
    *guard = Arc::new(next);
    Ok(Json(status))
}
