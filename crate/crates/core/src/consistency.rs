//! Frame-consistency measurements for image-to-video outputs: embedding
//! similarities and their clamped linear mapping, the weighted TC-Score,
//! and the flow/trajectory error metrics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cache::{cache_key, VectorCache};
use crate::error::{Error, Result};
use crate::providers::EmbeddingProvider;
use crate::video_io::{frame_hash, FrameSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub model_fingerprint: String,
}

impl EmbeddingVector {
    /// Scales `values` to unit L2 norm.
    pub fn normalized(values: Vec<f32>, fingerprint: &str) -> Result<Self> {
        let norm = values.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::validation(format!(
                "cannot normalise embedding with norm {norm} ({fingerprint})"
            )));
        }
        Ok(Self {
            values: values.into_iter().map(|x| (x as f64 / norm) as f32).collect(),
            model_fingerprint: fingerprint.to_string(),
        })
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
    }
}

/// Embeds every frame, consulting `cache` by (frame hash, fingerprint).
pub fn embed_frames(seq: &FrameSequence, provider: &dyn EmbeddingProvider, cache: &VectorCache) -> Result<Vec<EmbeddingVector>> {
    let fp = provider.fingerprint().to_string();
    let mut out: Vec<EmbeddingVector> = Vec::with_capacity(seq.len());
    for frame in seq.frames() {
        let key = cache_key(&[&frame_hash(frame), &fp]);
        let raw = match cache.get(&key) {
            Some(v) => v,
            None => {
                let v = provider.embed_image(frame)?;
                cache.insert(&key, &v)?;
                v
            }
        };
        if let Some(first) = out.first() {
            if first.values.len() != raw.len() {
                return Err(Error::shape(format!(
                    "{fp} returned a {}-d vector after a {}-d one",
                    raw.len(),
                    first.values.len()
                )));
            }
        }
        out.push(EmbeddingVector::normalized(raw, &fp)?);
    }
    Ok(out)
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.model_fingerprint != b.model_fingerprint {
        return Err(Error::validation(format!(
            "embedding fingerprints differ: {} vs {}",
            a.model_fingerprint, b.model_fingerprint
        )));
    }
    if a.values.len() != b.values.len() {
        return Err(Error::shape(format!("{} vs {} dimensions", a.values.len(), b.values.len())));
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Acceptable similarity band, mapped linearly onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRange {
    pub low: f64,
    pub high: f64,
}

impl Default for SimilarityRange {
    fn default() -> Self {
        Self { low: 0.90, high: 0.98 }
    }
}

impl SimilarityRange {
    pub fn validate(&self) -> Result<()> {
        if self.low.is_nan() || self.high.is_nan() || self.low >= self.high {
            return Err(Error::validation(format!(
                "similarity range [{}, {}] is empty",
                self.low, self.high
            )));
        }
        Ok(())
    }

    /// Smallest power of ten (up to 1e6) that makes both endpoints integral,
    /// so decimal endpoints such as 0.90 / 0.98 map decimal inputs exactly.
    fn decimal_scale(&self) -> f64 {
        let mut scale = 1.0;
        for _ in 0..=6 {
            let integral = |x: f64| ((x * scale).round() - x * scale).abs() < 1e-9;
            if integral(self.low) && integral(self.high) {
                return scale;
            }
            scale *= 10.0;
        }
        1.0
    }

    pub fn map(&self, s: f64) -> f64 {
        if s <= self.low {
            return 0.0;
        }
        if s >= self.high {
            return 1.0;
        }
        let scale = self.decimal_scale();
        let (lo, hi) = ((self.low * scale).round(), (self.high * scale).round());
        let (lo, hi) = if scale == 1.0 { (self.low, self.high) } else { (lo, hi) };
        ((s * scale - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

/// Clamped linear map of a similarity onto [0, 1] using the default band.
pub fn map_similarity(s: f64) -> f64 {
    SimilarityRange::default().map(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScore {
    pub raw_similarities: Vec<f64>,
    pub mapped: Vec<f64>,
    pub mean_mapped: f64,
}

impl ConsistencyScore {
    pub fn from_raw(raw: Vec<f64>, range: &SimilarityRange) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::validation("no similarities to average"));
        }
        let mapped: Vec<f64> = raw.iter().map(|&s| range.map(s)).collect();
        let mean_mapped = mapped.iter().sum::<f64>() / mapped.len() as f64;
        Ok(Self {
            raw_similarities: raw,
            mapped,
            mean_mapped,
        })
    }

    pub fn mean_raw(&self) -> f64 {
        self.raw_similarities.iter().sum::<f64>() / self.raw_similarities.len() as f64
    }
}

/// Similarity of each frame to the next one.
pub fn consecutive_consistency(embeds: &[EmbeddingVector], range: &SimilarityRange) -> Result<ConsistencyScore> {
    if embeds.len() < 2 {
        return Err(Error::validation(format!(
            "consecutive consistency needs >= 2 frames, got {}",
            embeds.len()
        )));
    }
    let raw = embeds
        .windows(2)
        .map(|w| cosine_similarity(&w[0], &w[1]))
        .collect::<Result<Vec<_>>>()?;
    ConsistencyScore::from_raw(raw, range)
}

/// Similarity of each generated frame to the ground-truth frame at the same index.
pub fn framewise_consistency(
    embeds: &[EmbeddingVector],
    reference: &[EmbeddingVector],
    range: &SimilarityRange,
) -> Result<ConsistencyScore> {
    if embeds.len() != reference.len() {
        return Err(Error::shape(format!(
            "{} generated frames vs {} reference frames",
            embeds.len(),
            reference.len()
        )));
    }
    let raw = embeds
        .iter()
        .zip(reference)
        .map(|(a, b)| cosine_similarity(a, b))
        .collect::<Result<Vec<_>>>()?;
    ConsistencyScore::from_raw(raw, range)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub pass_rate: f64,
    pub consistency: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            pass_rate: 2.0 / 3.0,
            consistency: 1.0 / 3.0,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        if self.pass_rate < 0.0 || self.consistency < 0.0 || (self.pass_rate + self.consistency - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "weights must be non-negative and sum to 1 (got {} + {})",
                self.pass_rate, self.consistency
            )));
        }
        Ok(())
    }
}

/// `w1 * pass_rate + w2 * mean_mapped`.
pub fn tc_score_i2v_value(pass_rate: f64, mean_mapped: f64, weights: &Weights) -> Result<f64> {
    weights.validate()?;
    Ok(weights.pass_rate * pass_rate + weights.consistency * mean_mapped)
}

pub fn tc_score_i2v(pass_rate: f64, consistency: &ConsistencyScore, weights: &Weights) -> Result<f64> {
    tc_score_i2v_value(pass_rate, consistency.mean_mapped, weights)
}

/// Dense optical flow between two frames, `u` and `v` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: u32,
    pub height: u32,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn new(width: u32, height: u32, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        let n = width as usize * height as usize;
        if u.len() != n || v.len() != n {
            return Err(Error::shape(format!(
                "flow {width}x{height} needs {n} values per plane, got {} / {}",
                u.len(),
                v.len()
            )));
        }
        Ok(Self { width, height, u, v })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        Self {
            width,
            height,
            u: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn magnitude(&self, i: usize) -> f64 {
        (self.u[i] as f64).hypot(self.v[i] as f64)
    }

    /// Reads the planar format: `u32` LE width, `u32` LE height, then the
    /// u-plane and v-plane as float32 LE.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::decode(&bytes).map_err(|e| Error::shape(format!("{}: {e}", path.display())))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::shape("flow file shorter than its header"));
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let n = width as usize * height as usize;
        if bytes.len() != 8 + 8 * n {
            return Err(Error::shape(format!(
                "flow {width}x{height} expects {} bytes, found {}",
                8 + 8 * n,
                bytes.len()
            )));
        }
        let floats: Vec<f32> = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let (u, v) = floats.split_at(n);
        Self::new(width, height, u.to_vec(), v.to_vec())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.u.len());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for x in self.u.iter().chain(&self.v) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    /// Bilinear resize with vectors scaled by the resolution ratio.
    pub fn resized(&self, width: u32, height: u32) -> FlowField {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let n = (width * height) as usize;
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let at = |plane: &[f32], x: usize, y: usize| plane[y * self.width as usize + x] as f64;
        for y in 0..height {
            // pixel-centre alignment
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
            let y1 = (y0 + 1).min(self.height as usize - 1);
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
                let x1 = (x0 + 1).min(self.width as usize - 1);
                let sample = |p: &[f32]| {
                    let top = at(p, x0, y0) * (1.0 - tx) + at(p, x1, y0) * tx;
                    let bottom = at(p, x0, y1) * (1.0 - tx) + at(p, x1, y1) * tx;
                    top * (1.0 - ty) + bottom * ty
                };
                u.push((sample(&self.u) / sx) as f32);
                v.push((sample(&self.v) / sy) as f32);
            }
        }
        FlowField { width, height, u, v }
    }
}

/// Resizes reference flows to the resolution of the generated flows.
pub fn align_flows(reference: &[FlowField], width: u32, height: u32) -> Vec<FlowField> {
    reference.iter().map(|f| f.resized(width, height)).collect()
}

/// End-point error: per pixel, the mean over frames of the Euclidean
/// distance between flow vectors, then the mean over pixels.
pub fn epe(flows: &[FlowField], reference: &[FlowField]) -> Result<f64> {
    if flows.is_empty() || flows.len() != reference.len() {
        return Err(Error::shape(format!(
            "{} flow fields vs {} reference fields",
            flows.len(),
            reference.len()
        )));
    }
    let (w, h) = (flows[0].width, flows[0].height);
    for (k, (a, b)) in flows.iter().zip(reference).enumerate() {
        if (a.width, a.height) != (w, h) || (b.width, b.height) != (w, h) {
            return Err(Error::shape(format!(
                "frame {}: {}x{} vs {}x{} (expected {w}x{h})",
                k + 1,
                a.width,
                a.height,
                b.width,
                b.height
            )));
        }
    }
    let pixels = (w * h) as usize;
    let frames = flows.len() as f64;
    let mut total = 0.0;
    for p in 0..pixels {
        let per_pixel: f64 = flows
            .iter()
            .zip(reference)
            .map(|(a, b)| (a.u[p] as f64 - b.u[p] as f64).hypot(a.v[p] as f64 - b.v[p] as f64))
            .sum();
        total += per_pixel / frames;
    }
    Ok(total / pixels as f64)
}

/// Tracked point positions, `positions[point][frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Vec<[f64; 2]>>,
}

impl Trajectory {
    pub fn new(positions: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        let k = positions.first().map(|p| p.len()).unwrap_or(0);
        if k == 0 {
            return Err(Error::shape("trajectory has no points or frames"));
        }
        if let Some((i, p)) = positions.iter().enumerate().find(|(_, p)| p.len() != k) {
            return Err(Error::shape(format!("point {i} has {} frames, expected {k}", p.len())));
        }
        Ok(Self { positions })
    }

    pub fn points(&self) -> usize {
        self.positions.len()
    }

    pub fn frames(&self) -> usize {
        self.positions[0].len()
    }

    /// Reads CSV with columns `point_id, frame, x, y`. Every point must be
    /// present in every frame.
    pub fn read_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            point_id: String,
            frame: usize,
            x: f64,
            y: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let mut points: BTreeMap<String, BTreeMap<usize, [f64; 2]>> = BTreeMap::new();
        for row in rdr.deserialize() {
            let row: Row = row?;
            if points.entry(row.point_id.clone()).or_default().insert(row.frame, [row.x, row.y]).is_some() {
                return Err(Error::validation(format!(
                    "{}: point {} frame {} listed twice",
                    path.display(),
                    row.point_id,
                    row.frame
                )));
            }
        }
        let frames: Vec<usize> = points.values().next().map(|m| m.keys().copied().collect()).unwrap_or_default();
        let mut positions = Vec::with_capacity(points.len());
        for (id, track) in points {
            if track.keys().copied().collect::<Vec<_>>() != frames {
                return Err(Error::shape(format!(
                    "{}: point {id} is not tracked through every frame",
                    path.display()
                )));
            }
            positions.push(track.into_values().collect());
        }
        Self::new(positions)
    }
}

/// Average trajectory error: per point, the mean over frames of the
/// positional distance, then the mean over points.
pub fn ate(traj: &Trajectory, reference: &Trajectory) -> Result<f64> {
    if traj.points() != reference.points() || traj.frames() != reference.frames() {
        return Err(Error::shape(format!(
            "{}x{} trajectory vs {}x{} reference",
            traj.points(),
            traj.frames(),
            reference.points(),
            reference.frames()
        )));
    }
    let k = traj.frames() as f64;
    let total: f64 = traj
        .positions
        .iter()
        .zip(&reference.positions)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
                .sum::<f64>()
                / k
        })
        .sum();
    Ok(total / traj.points() as f64)
}

/// Per-video embedding file consumed by image-to-video scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSequence {
    pub fingerprint: String,
    pub vectors: Vec<Vec<f32>>,
}

impl EmbeddingSequence {
    pub fn from_embeddings(embeds: &[EmbeddingVector]) -> Self {
        Self {
            fingerprint: embeds.first().map(|e| e.model_fingerprint.clone()).unwrap_or_default(),
            vectors: embeds.iter().map(|e| e.values.clone()).collect(),
        }
    }

    pub fn into_embeddings(self) -> Result<Vec<EmbeddingVector>> {
        let fp = self.fingerprint;
        self.vectors
            .into_iter()
            .map(|v| EmbeddingVector::normalized(v, &fp))
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::PixelStatsEmbedder;
    use crate::video_io::solid;
    use proptest::prelude::*;

    fn unit(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::normalized(values.to_vec(), "test").unwrap()
    }

    /// Two unit vectors with the given cosine.
    fn pair_with_cos(c: f64) -> (EmbeddingVector, EmbeddingVector) {
        let s = (1.0 - c * c).sqrt();
        (
            EmbeddingVector { values: vec![1.0, 0.0], model_fingerprint: "t".into() },
            EmbeddingVector { values: vec![c as f32, s as f32], model_fingerprint: "t".into() },
        )
    }

    #[test]
    fn map_endpoints_and_clamping() {
        assert_eq!(map_similarity(0.90), 0.0);
        assert_eq!(map_similarity(0.98), 1.0);
        assert_eq!(map_similarity(0.94), 0.5);
        assert_eq!(map_similarity(0.85), 0.0);
        assert_eq!(map_similarity(0.99), 1.0);
        assert!((map_similarity(0.92) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn map_with_non_decimal_band() {
        let r = SimilarityRange { low: 1.0 / 3.0, high: 2.0 / 3.0 };
        assert!((r.map(0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cosine_basics() {
        let a = unit(&[3.0, 4.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-7);
        let x = unit(&[1.0, 0.0]);
        let y = unit(&[0.0, 2.0]);
        assert_eq!(cosine_similarity(&x, &y).unwrap(), 0.0);
        let other = EmbeddingVector::normalized(vec![1.0, 0.0], "other").unwrap();
        assert!(cosine_similarity(&x, &other).is_err());
    }

    #[test]
    fn consecutive_constant_video_is_one() {
        let e = vec![unit(&[0.2, 0.5, 0.1]); 16];
        let s = consecutive_consistency(&e, &SimilarityRange::default()).unwrap();
        assert_eq!(s.mean_mapped, 1.0);
        assert_eq!(s.raw_similarities.len(), 15);
        assert!(consecutive_consistency(&e[..1], &SimilarityRange::default()).is_err());
    }

    #[test]
    fn consecutive_two_frames_at_092() {
        let (a, b) = pair_with_cos(0.92);
        let s = consecutive_consistency(&[a, b], &SimilarityRange::default()).unwrap();
        assert!((s.mean_mapped - 0.25).abs() < 1e-6);
    }

    #[test]
    fn framewise_known_cosines() {
        let cos = [0.91, 0.95, 0.99];
        let s = ConsistencyScore::from_raw(cos.to_vec(), &SimilarityRange::default()).unwrap();
        let expect = [0.125, 0.625, 1.0];
        for (m, e) in s.mapped.iter().zip(expect) {
            assert!((m - e).abs() < 1e-9, "{m} vs {e}");
        }
        assert!((s.mean_mapped - 1.75 / 3.0).abs() < 1e-9);

        let gen = vec![unit(&[1.0, 2.0]); 16];
        assert!(framewise_consistency(&gen, &gen[..15], &SimilarityRange::default()).is_err());
        let same = framewise_consistency(&gen, &gen, &SimilarityRange::default()).unwrap();
        assert_eq!(same.mean_mapped, 1.0);
    }

    #[test]
    fn weighted_score() {
        let w = Weights::default();
        assert!((tc_score_i2v_value(0.6, 0.9, &w).unwrap() - 0.7).abs() < 1e-12);
        assert!((tc_score_i2v_value(1.0, 1.0, &w).unwrap() - 1.0).abs() < 1e-12);
        let only_pass = Weights { pass_rate: 1.0, consistency: 0.0 };
        assert_eq!(tc_score_i2v_value(0.375, 0.2, &only_pass).unwrap(), 0.375);
        assert!(tc_score_i2v_value(0.5, 0.5, &Weights { pass_rate: 0.8, consistency: 0.8 }).is_err());
        assert!(tc_score_i2v_value(0.5, 0.5, &Weights { pass_rate: 1.5, consistency: -0.5 }).is_err());
        // reported overall scores keep their order: 0.7380 > 0.6978
        assert!(tc_score_i2v_value(0.70, 0.81, &w).unwrap() > tc_score_i2v_value(0.66, 0.77, &w).unwrap());
    }

    #[test]
    fn embed_frames_normalises_and_caches() {
        let provider = PixelStatsEmbedder::default();
        let cache = VectorCache::in_memory();
        let seq = FrameSequence::new(vec![solid(4, 4, [10, 200, 30]); 3], 8.0, "v").unwrap();
        let e = embed_frames(&seq, &provider, &cache).unwrap();
        assert_eq!(e.len(), 3);
        for v in &e {
            assert!((v.norm() - 1.0).abs() < 1e-6);
        }
        assert_eq!(e[0], e[2]);
        assert_eq!(provider.calls.load(std::sync::atomic::Ordering::SeqCst), 1);

        let bw = FrameSequence::new(vec![solid(4, 4, [0, 0, 0]), solid(4, 4, [255, 255, 255])], 8.0, "bw").unwrap();
        let e = embed_frames(&bw, &provider, &cache).unwrap();
        let c = cosine_similarity(&e[0], &e[1]).unwrap();
        // black: only the bias component; white: all ones plus bias
        let expect = 0.25 / (19.0f64 + 0.0625).sqrt();
        assert!((c - expect).abs() < 1e-6, "{c}");
        assert!(c < 1.0);
    }

    #[test]
    fn epe_and_ate_small_cases() {
        let a = FlowField::new(1, 1, vec![3.0], vec![4.0]).unwrap();
        let b = FlowField::zeros(1, 1);
        assert_eq!(epe(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap(), 5.0);
        assert_eq!(epe(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(), 0.0);
        assert!(epe(std::slice::from_ref(&a), &[FlowField::zeros(2, 1)]).is_err());
        assert!(epe(&[a.clone(), a], &[b]).is_err());

        let p = Trajectory::new(vec![vec![[1.0, 1.0]]]).unwrap();
        let q = Trajectory::new(vec![vec![[4.0, 5.0]]]).unwrap();
        assert_eq!(ate(&p, &q).unwrap(), 5.0);
        assert_eq!(ate(&p, &p).unwrap(), 0.0);
        let two = Trajectory::new(vec![vec![[0.0, 0.0]; 2]]).unwrap();
        assert!(ate(&p, &two).is_err());
        assert!(Trajectory::new(vec![vec![[0.0, 0.0]; 2], vec![[0.0, 0.0]]]).is_err());
    }

    #[test]
    fn flow_file_round_trip_and_header_checks() {
        let f = FlowField::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![-1.0; 6]).unwrap();
        let bytes = f.encode();
        assert_eq!(&bytes[0..8], &[3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(FlowField::decode(&bytes).unwrap(), f);
        assert!(FlowField::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn resizing_constant_flow_scales_vectors() {
        let f = FlowField::new(2, 2, vec![1.0; 4], vec![2.0; 4]).unwrap();
        let r = f.resized(4, 6);
        assert_eq!((r.width, r.height), (4, 6));
        assert!(r.u.iter().all(|&x| (x - 2.0).abs() < 1e-6));
        assert!(r.v.iter().all(|&x| (x - 6.0).abs() < 1e-6));
    }

    #[test]
    fn trajectory_csv_requires_complete_tracks() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("t.csv");
        fs::write(&good, "point_id,frame,x,y\n0,1,1.0,2.0\n0,2,1.5,2.5\n1,1,5,5\n1,2,6,6\n").unwrap();
        let t = Trajectory::read_csv(&good).unwrap();
        assert_eq!((t.points(), t.frames()), (2, 2));
        assert_eq!(t.positions[1][1], [6.0, 6.0]);

        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "point_id,frame,x,y\n0,1,1,2\n0,2,1,2\n1,1,5,5\n").unwrap();
        assert!(Trajectory::read_csv(&bad).is_err());
    }

    proptest! {
        #[test]
        fn map_is_monotone(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(map_similarity(lo) <= map_similarity(hi));
            prop_assert!((0.0..=1.0).contains(&map_similarity(a)));
        }

        #[test]
        fn map_inverts_affine_inside_band(t in 0.001f64..0.999) {
            let s = 0.90 + t * 0.08;
            prop_assert!((map_similarity(s) - t).abs() < 1e-9);
        }

        #[test]
        fn i2v_score_is_affine(p in 0.0f64..1.0, q in 0.0f64..1.0, c in 0.0f64..1.0) {
            let w = Weights::default();
            let mid = tc_score_i2v_value((p + q) / 2.0, c, &w).unwrap();
            let avg = (tc_score_i2v_value(p, c, &w).unwrap() + tc_score_i2v_value(q, c, &w).unwrap()) / 2.0;
            prop_assert!((mid - avg).abs() < 1e-12);
        }
    }
}
