//! Human rating collection: a fixed pool of videos, each assigned to three
//! distinct annotators, served over HTTP and persisted to an append-only
//! JSON-lines journal.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::analysis::{write_ratings_csv, HumanRating};
use crate::error::{Error, Result};

pub const ANNOTATORS_PER_VIDEO: usize = 3;
pub const DEFAULT_PORT: u16 = 8787;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolVideo {
    pub video_id: String,
    pub prompt: String,
    /// Local path relative to the media directory, or an http(s) URL.
    pub video: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub annotators: Vec<String>,
    pub videos: Vec<PoolVideo>,
    /// Free-form instruction text and examples handed to the UI unchanged.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub instructions: serde_json::Value,
}

impl Pool {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let pool: Pool = serde_json::from_str(&text)?;
        pool.validate()?;
        Ok(pool)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        if let Some(a) = self.annotators.iter().find(|a| !seen.insert(a.as_str())) {
            return Err(Error::validation(format!("annotator `{a}` listed twice")));
        }
        if self.annotators.len() < ANNOTATORS_PER_VIDEO {
            return Err(Error::validation(format!(
                "pool needs at least {ANNOTATORS_PER_VIDEO} annotators, has {}",
                self.annotators.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(v) = self.videos.iter().find(|v| !seen.insert(v.video_id.as_str())) {
            return Err(Error::validation(format!("video `{}` listed twice", v.video_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub video_id: String,
    pub prompt: String,
    pub video: String,
    /// Where the UI can fetch the video: URLs pass through, local paths
    /// are served under `/media/`.
    pub video_url: String,
    pub assigned_annotator: String,
}

/// Round-robin assignment: slot `k` of video `i` goes to annotator
/// `(i * 3 + k) mod A`, so the three annotators of a video are distinct.
pub fn assign_tasks(pool: &Pool) -> Vec<AnnotationTask> {
    let a = pool.annotators.len();
    let mut tasks = Vec::with_capacity(pool.videos.len() * ANNOTATORS_PER_VIDEO);
    for (i, v) in pool.videos.iter().enumerate() {
        for k in 0..ANNOTATORS_PER_VIDEO {
            let video_url = if v.video.starts_with("http://") || v.video.starts_with("https://") {
                v.video.clone()
            } else {
                format!("/media/{}", v.video.trim_start_matches('/'))
            };
            tasks.push(AnnotationTask {
                task_id: format!("{}:{}", v.video_id, k + 1),
                video_id: v.video_id.clone(),
                prompt: v.prompt.clone(),
                video: v.video.clone(),
                video_url,
                assigned_annotator: pool.annotators[(i * ANNOTATORS_PER_VIDEO + k) % a].clone(),
            });
        }
    }
    tasks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSubmission {
    pub annotator_id: String,
    pub task_id: String,
    pub q1: i64,
    pub q2: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JournalRecord {
    task_id: String,
    video_id: String,
    annotator_id: String,
    q1: u8,
    q2: u8,
}

struct Store {
    ratings: BTreeMap<String, HumanRating>,
    journal: Option<File>,
}

pub struct AnnotationService {
    pool: Pool,
    tasks: Vec<AnnotationTask>,
    by_id: HashMap<String, usize>,
    by_annotator: HashMap<String, Vec<usize>>,
    store: Mutex<Store>,
}

impl AnnotationService {
    pub fn in_memory(pool: Pool) -> Result<Self> {
        Self::build(pool, None, BTreeMap::new())
    }

    /// Opens the service, replaying `journal` if it exists. A torn final
    /// line from an interrupted write is skipped.
    pub fn open(pool: Pool, journal: &Path) -> Result<Self> {
        let mut replayed = Vec::new();
        if journal.exists() {
            let lines: Vec<String> = BufReader::new(File::open(journal)?).lines().collect::<std::io::Result<_>>()?;
            let last = lines.len();
            for (n, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<JournalRecord>(line) {
                    Ok(r) => replayed.push(r),
                    Err(e) if n + 1 == last => {
                        log::warn!("{}: skipping torn final record: {e}", journal.display())
                    }
                    Err(e) => return Err(Error::parse(journal.display().to_string(), n + 1, e.to_string())),
                }
            }
        } else if let Some(parent) = journal.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(journal)?;
        let service = Self::build(pool, Some(file), BTreeMap::new())?;
        {
            let mut store = service.store.lock();
            for r in replayed {
                let rating = service.check_submission(&store, &r.annotator_id, &r.task_id, r.q1 as i64, r.q2 as i64)?;
                store.ratings.insert(r.task_id, rating);
            }
        }
        Ok(service)
    }

    fn build(pool: Pool, journal: Option<File>, ratings: BTreeMap<String, HumanRating>) -> Result<Self> {
        pool.validate()?;
        let tasks = assign_tasks(&pool);
        let by_id = tasks.iter().enumerate().map(|(i, t)| (t.task_id.clone(), i)).collect();
        let mut by_annotator: HashMap<String, Vec<usize>> =
            pool.annotators.iter().map(|a| (a.clone(), Vec::new())).collect();
        for (i, t) in tasks.iter().enumerate() {
            by_annotator.get_mut(&t.assigned_annotator).expect("assigned from pool").push(i);
        }
        Ok(Self {
            pool,
            tasks,
            by_id,
            by_annotator,
            store: Mutex::new(Store { ratings, journal }),
        })
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub fn tasks(&self) -> &[AnnotationTask] {
        &self.tasks
    }

    /// The annotator's first unrated task. Tasks are served in a fixed
    /// order, so the same task comes back until it is rated.
    pub fn next_task(&self, annotator_id: &str) -> Result<Option<AnnotationTask>> {
        let indices = self
            .by_annotator
            .get(annotator_id)
            .ok_or_else(|| Error::UnknownAnnotator(annotator_id.to_string()))?;
        let store = self.store.lock();
        Ok(indices
            .iter()
            .map(|&i| &self.tasks[i])
            .find(|t| !store.ratings.contains_key(&t.task_id))
            .cloned())
    }

    fn check_submission(&self, store: &Store, annotator_id: &str, task_id: &str, q1: i64, q2: i64) -> Result<HumanRating> {
        if !self.by_annotator.contains_key(annotator_id) {
            return Err(Error::UnknownAnnotator(annotator_id.to_string()));
        }
        let task = self
            .by_id
            .get(task_id)
            .map(|&i| &self.tasks[i])
            .ok_or_else(|| Error::Annotation(format!("unknown task `{task_id}`")))?;
        if task.assigned_annotator != annotator_id {
            return Err(Error::Annotation(format!(
                "task `{task_id}` is not assigned to annotator `{annotator_id}`"
            )));
        }
        if store.ratings.contains_key(task_id) {
            return Err(Error::Annotation(format!("task `{task_id}` is already rated")));
        }
        for (name, v) in [("q1", q1), ("q2", q2)] {
            if !(1..=5).contains(&v) {
                return Err(Error::validation(format!("{name} must be within 1..=5, got {v}")));
            }
        }
        Ok(HumanRating {
            video_id: task.video_id.clone(),
            annotator_id: annotator_id.to_string(),
            q1: q1 as u8,
            q2: q2 as u8,
        })
    }

    /// Validates, journals and records one rating. The journal line is
    /// written and synced before the rating becomes visible.
    pub fn submit_rating(&self, s: &RatingSubmission) -> Result<HumanRating> {
        let mut store = self.store.lock();
        let rating = self.check_submission(&store, &s.annotator_id, &s.task_id, s.q1, s.q2)?;
        if let Some(file) = store.journal.as_mut() {
            let record = JournalRecord {
                task_id: s.task_id.clone(),
                video_id: rating.video_id.clone(),
                annotator_id: rating.annotator_id.clone(),
                q1: rating.q1,
                q2: rating.q2,
            };
            let mut line = serde_json::to_vec(&record)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        store.ratings.insert(s.task_id.clone(), rating.clone());
        Ok(rating)
    }

    pub fn ratings(&self) -> Vec<HumanRating> {
        self.store.lock().ratings.values().cloned().collect()
    }

    /// Ratings CSV, sorted by video id then annotator id.
    pub fn export_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_ratings_csv(&self.ratings(), &mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

pub fn journal_path_for(pool_path: &Path) -> PathBuf {
    let mut name = pool_path.file_name().unwrap_or_default().to_os_string();
    name.push(".journal.jsonl");
    pool_path.with_file_name(name)
}

struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::UnknownAnnotator(_) => StatusCode::NOT_FOUND,
            Error::Validation(_) => StatusCode::BAD_REQUEST,
            Error::Annotation(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

type Shared = Arc<AnnotationService>;

async fn next_handler(State(svc): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<Option<AnnotationTask>>, ApiError> {
    svc.next_task(&id).map(Json).map_err(ApiError)
}

async fn submit_handler(State(svc): State<Shared>, Json(body): Json<RatingSubmission>) -> Result<Json<serde_json::Value>, ApiError> {
    let r = svc.submit_rating(&body).map_err(ApiError)?;
    Ok(Json(serde_json::json!({ "status": "ok", "video_id": r.video_id, "task_id": body.task_id })))
}

async fn export_handler(State(svc): State<Shared>) -> Result<Response, ApiError> {
    let csv = svc.export_csv().map_err(ApiError)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn instructions_handler(State(svc): State<Shared>) -> Json<serde_json::Value> {
    Json(svc.pool().instructions.clone())
}

async fn health_handler(State(svc): State<Shared>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "videos": svc.pool().videos.len(),
        "tasks": svc.tasks().len(),
        "ratings": svc.ratings().len(),
    }))
}

/// API routes, with `/media/` serving video files and every other path
/// falling back to the UI bundle when the directories are given.
pub fn router(service: Shared, ui_dir: Option<&Path>, media_dir: Option<&Path>) -> Router {
    let mut app = Router::new()
        .route("/api/annotator/{id}/next", get(next_handler))
        .route("/api/ratings", post(submit_handler))
        .route("/api/export.csv", get(export_handler))
        .route("/api/instructions", get(instructions_handler))
        .route("/api/health", get(health_handler))
        .with_state(service);
    if let Some(dir) = media_dir {
        app = app.nest_service("/media", ServeDir::new(dir));
    }
    if let Some(dir) = ui_dir {
        app = app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true));
    }
    app
}

pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
