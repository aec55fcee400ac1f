//! Model clients: text generation, vision-language judging and embeddings.
//!
//! Each capability is a trait so the pipeline can run against HTTP endpoints
//! or the scripted clients in [`mock`].

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use base64::Engine;
use image::RgbImage;
use parking_lot::Mutex;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::video_io::{encode_png, frame_hash};

pub const LLM_KEY_ENV: &str = "TCB_LLM_API_KEY";
pub const VLM_KEY_ENV: &str = "TCB_VLM_API_KEY";
pub const EMBED_KEY_ENV: &str = "TCB_EMBED_API_KEY";

pub trait TextGenerator: Send + Sync {
    fn model_name(&self) -> &str;
    fn complete(&self, system: &str, user: &str) -> Result<String>;
}

pub trait VisionJudge: Send + Sync {
    fn model_name(&self) -> &str;
    /// Asks `prompt` about a single PNG image and returns the raw reply.
    fn ask(&self, png: &[u8], prompt: &str) -> Result<String>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn fingerprint(&self) -> &str;
    fn embed_image(&self, frame: &RgbImage) -> Result<Vec<f32>>;
    fn embed_text(&self, text: &str) -> Result<Vec<f32>>;
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            base_delay: Duration::ZERO,
        }
    }

    /// Runs `f` up to `attempts` times with exponential backoff. The final
    /// error is wrapped as a provider failure carrying the attempt count.
    pub fn run<T>(&self, provider: &str, mut f: impl FnMut() -> Result<T>) -> Result<T> {
        let attempts = self.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            match f() {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("{provider}: attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                    if attempt + 1 < attempts && !self.base_delay.is_zero() {
                        std::thread::sleep(self.base_delay * 2u32.pow(attempt));
                    }
                }
            }
        }
        Err(Error::Provider {
            provider: provider.to_string(),
            attempts,
            message: last,
        })
    }
}

/// Spaces out calls so that at most `per_minute` start in any minute.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_minute(per_minute: u32) -> Self {
        let interval = if per_minute == 0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(60.0 / per_minute as f64)
        };
        Self {
            interval,
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next.lock();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// Applies a per-minute ceiling to every call of the wrapped client.
pub struct Throttled<P> {
    pub inner: P,
    pub limiter: RateLimiter,
}

impl<P> Throttled<P> {
    pub fn new(inner: P, per_minute: u32) -> Self {
        Self {
            inner,
            limiter: RateLimiter::per_minute(per_minute),
        }
    }
}

impl<P: TextGenerator> TextGenerator for Throttled<P> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn complete(&self, system: &str, user: &str) -> Result<String> {
        self.limiter.acquire();
        self.inner.complete(system, user)
    }
}

impl<P: VisionJudge> VisionJudge for Throttled<P> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn ask(&self, png: &[u8], prompt: &str) -> Result<String> {
        self.limiter.acquire();
        self.inner.ask(png, prompt)
    }
}

/// Client for OpenAI-style `/chat/completions` endpoints. Serves both as the
/// assertion generator and, with image content parts, as the judge.
pub struct ChatClient {
    base_url: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
    http: reqwest::blocking::Client,
}

impl ChatClient {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| provider_err(model, e))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            temperature: 0.0,
            http,
        })
    }

    pub fn from_env(base_url: &str, model: &str, key_env: &str, timeout: Duration) -> Result<Self> {
        Self::new(base_url, model, std::env::var(key_env).ok(), timeout)
    }

    fn post(&self, messages: Value) -> Result<String> {
        let body = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": messages,
        });
        let mut req = self
            .http
            .post(format!("{}/chat/completions", self.base_url))
            .json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| provider_err(&self.model, e))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| provider_err(&self.model, e))?;
        if !status.is_success() {
            return Err(provider_err(&self.model, format!("HTTP {status}: {text}")));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| provider_err(&self.model, format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| provider_err(&self.model, "response has no message content"))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

fn provider_err(provider: &str, e: impl std::fmt::Display) -> Error {
    Error::Provider {
        provider: provider.to_string(),
        attempts: 1,
        message: e.to_string(),
    }
}

impl TextGenerator for ChatClient {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, system: &str, user: &str) -> Result<String> {
        self.post(json!([
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ]))
    }
}

impl VisionJudge for ChatClient {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn ask(&self, png: &[u8], prompt: &str) -> Result<String> {
        let data = base64::engine::general_purpose::STANDARD.encode(png);
        self.post(json!([{
            "role": "user",
            "content": [
                {"type": "text", "text": prompt},
                {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{data}")}},
            ],
        }]))
    }
}

/// Remote embedding endpoint. `POST {base}/embed` with
/// `{"model", "image_png_base64"}` or `{"model", "text"}`, answering
/// `{"embedding": [f32, ...]}`.
pub struct HttpEmbeddingClient {
    base_url: String,
    model: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpEmbeddingClient {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| provider_err(model, e))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            http,
        })
    }

    fn post(&self, body: Value) -> Result<Vec<f32>> {
        #[derive(Deserialize)]
        struct EmbedResponse {
            embedding: Vec<f32>,
        }
        let mut req = self.http.post(format!("{}/embed", self.base_url)).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| provider_err(&self.model, e))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(provider_err(&self.model, format!("HTTP {status}")));
        }
        let parsed: EmbedResponse = resp.json().map_err(|e| provider_err(&self.model, e))?;
        Ok(parsed.embedding)
    }
}

impl EmbeddingProvider for HttpEmbeddingClient {
    fn fingerprint(&self) -> &str {
        &self.model
    }

    fn embed_image(&self, frame: &RgbImage) -> Result<Vec<f32>> {
        let data = base64::engine::general_purpose::STANDARD.encode(encode_png(frame)?);
        self.post(json!({"model": self.model, "image_png_base64": data}))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        self.post(json!({"model": self.model, "text": text}))
    }
}

/// Local backend reading vectors produced offline by an image encoder.
///
/// Layout: `<dir>/fingerprint` (one line), `<dir>/images/<frame hash>.f32`
/// (little-endian float32), `<dir>/texts.json` (caption -> vector).
pub struct PrecomputedEmbeddings {
    dir: PathBuf,
    fingerprint: String,
    texts: HashMap<String, Vec<f32>>,
}

impl PrecomputedEmbeddings {
    pub fn open(dir: &Path) -> Result<Self> {
        let fingerprint = fs::read_to_string(dir.join("fingerprint"))
            .map_err(|_| Error::MissingArtifact {
                path: dir.join("fingerprint"),
                producer: "embed (external encoder)",
            })?
            .trim()
            .to_string();
        let texts = match fs::read(dir.join("texts.json")) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(_) => HashMap::new(),
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            fingerprint,
            texts,
        })
    }

    pub fn image_path(dir: &Path, hash: &str) -> PathBuf {
        dir.join("images").join(format!("{hash}.f32"))
    }
}

pub fn read_f32_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::shape(format!("{} is not a float32 vector", path.display())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_f32_file(path: &Path, v: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

impl EmbeddingProvider for PrecomputedEmbeddings {
    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn embed_image(&self, frame: &RgbImage) -> Result<Vec<f32>> {
        let path = Self::image_path(&self.dir, &frame_hash(frame));
        read_f32_file(&path).map_err(|e| provider_err(&self.fingerprint, format!("{}: {e}", path.display())))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        self.texts
            .get(text)
            .cloned()
            .ok_or_else(|| provider_err(&self.fingerprint, format!("no text embedding for `{text}`")))
    }
}

pub mod mock {
    //! Scripted clients for tests and offline runs.

    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Returns the reply registered for the first key contained in the user
    /// message.
    pub struct ScriptedLlm {
        pub model: String,
        pub replies: Vec<(String, String)>,
        pub calls: AtomicUsize,
    }

    impl ScriptedLlm {
        pub fn new(replies: Vec<(String, String)>) -> Self {
            Self {
                model: "scripted-llm".into(),
                replies,
                calls: AtomicUsize::new(0),
            }
        }

        pub fn call_count(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl TextGenerator for ScriptedLlm {
        fn model_name(&self) -> &str {
            &self.model
        }

        fn complete(&self, _system: &str, user: &str) -> Result<String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            // the text under evaluation is the final paragraph
            let tail = user.rsplit("\n\n").next().unwrap_or(user);
            self.replies
                .iter()
                .find(|(k, _)| tail.contains(k.as_str()))
                .map(|(_, v)| v.clone())
                .ok_or_else(|| provider_err(&self.model, "no scripted reply"))
        }
    }

    type JudgeFn = dyn Fn(&[u8], &str) -> Result<String> + Send + Sync;

    /// Judge backed by a closure over (png bytes, prompt).
    pub struct FnJudge {
        pub model: String,
        f: Box<JudgeFn>,
        pub calls: AtomicUsize,
    }

    impl FnJudge {
        pub fn new(model: &str, f: impl Fn(&[u8], &str) -> Result<String> + Send + Sync + 'static) -> Self {
            Self {
                model: model.into(),
                f: Box::new(f),
                calls: AtomicUsize::new(0),
            }
        }

        /// Answers by substring match on the question; unmatched questions get `default`.
        pub fn scripted(answers: Vec<(String, String)>, default: &str) -> Self {
            let default = default.to_string();
            Self::new("scripted-vlm", move |_, prompt| {
                Ok(answers
                    .iter()
                    .find(|(k, _)| prompt.contains(k.as_str()))
                    .map(|(_, v)| v.clone())
                    .unwrap_or_else(|| default.clone()))
            })
        }

        pub fn call_count(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl VisionJudge for FnJudge {
        fn model_name(&self) -> &str {
            &self.model
        }

        fn ask(&self, png: &[u8], prompt: &str) -> Result<String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            (self.f)(png, prompt)
        }
    }

    /// Deterministic embedding from coarse colour statistics: per-channel
    /// means and a 4x4 grid of mean intensities, followed by a constant bias
    /// component.
    pub struct PixelStatsEmbedder {
        pub calls: AtomicUsize,
    }

    impl Default for PixelStatsEmbedder {
        fn default() -> Self {
            Self {
                calls: AtomicUsize::new(0),
            }
        }
    }

    pub const PIXEL_STATS_DIM: usize = 20;

    impl EmbeddingProvider for PixelStatsEmbedder {
        fn fingerprint(&self) -> &str {
            "pixel-stats-v1"
        }

        fn embed_image(&self, frame: &RgbImage) -> Result<Vec<f32>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let (w, h) = frame.dimensions();
            let mut channel = [0f64; 3];
            let mut grid = [0f64; 16];
            let mut counts = [0f64; 16];
            for (x, y, p) in frame.enumerate_pixels() {
                for c in 0..3 {
                    channel[c] += p[c] as f64;
                }
                let cell = ((y * 4 / h) * 4 + x * 4 / w) as usize;
                grid[cell] += (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0;
                counts[cell] += 1.0;
            }
            let n = (w * h) as f64;
            let mut v: Vec<f32> = channel.iter().map(|c| (c / n / 255.0) as f32).collect();
            v.extend(
                grid.iter()
                    .zip(counts)
                    .map(|(g, c)| if c > 0.0 { (g / c / 255.0) as f32 } else { 0.0 }),
            );
            v.push(0.25);
            Ok(v)
        }

        fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
            // colour words map to the colour-mean components
            let lower = text.to_lowercase();
            let rgb = [
                ("red", [1.0, 0.0, 0.0]),
                ("green", [0.0, 1.0, 0.0]),
                ("blue", [0.0, 0.0, 1.0]),
                ("brown", [0.55, 0.35, 0.15]),
                ("pink", [1.0, 0.6, 0.7]),
                ("black", [0.0, 0.0, 0.0]),
                ("white", [1.0, 1.0, 1.0]),
            ]
            .iter()
            .find(|(w, _)| lower.contains(w))
            .map(|(_, c)| *c)
            .ok_or_else(|| provider_err("pixel-stats-v1", format!("no colour word in `{text}`")))?;
            let mut v = vec![rgb[0], rgb[1], rgb[2]];
            v.extend(std::iter::repeat_n(0.0, PIXEL_STATS_DIM - 3));
            Ok(v)
        }
    }
}
