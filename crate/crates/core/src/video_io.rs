//! Frame sequences: decoding, equal-gap resampling, index remapping and
//! horizontal composition of frames for the judge.
//!
//! Frame indices are 1-based everywhere outside this module.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::imageops::{self, FilterType};
use image::{ImageFormat, RgbImage};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Frame count that assertions are authored against.
pub const CANONICAL_FRAMES: usize = 16;
pub const DEFAULT_FPS: f64 = 8.0;
/// Most frames a single assertion may reference.
pub const MAX_COMPOSITE_MEMBERS: usize = 5;

#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<RgbImage>,
    pub fps: f64,
    pub source_id: String,
}

impl FrameSequence {
    pub fn new(frames: Vec<RgbImage>, fps: f64, source_id: impl Into<String>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::validation("frame sequence is empty"))?;
        let dims = first.dimensions();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dimensions() != dims) {
            return Err(Error::shape(format!(
                "frame {} is {:?}, frame 1 is {:?}",
                i + 1,
                f.dimensions(),
                dims
            )));
        }
        Ok(Self {
            frames,
            fps,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[RgbImage] {
        &self.frames
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }

    /// Frame at a 1-based index.
    pub fn frame(&self, index: usize) -> Result<&RgbImage> {
        if index == 0 || index > self.frames.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.frames.len(),
            });
        }
        Ok(&self.frames[index - 1])
    }

    pub fn select(&self, indices: &[usize]) -> Result<FrameSequence> {
        let frames = indices
            .iter()
            .map(|&i| self.frame(i).cloned())
            .collect::<Result<Vec<_>>>()?;
        FrameSequence::new(frames, self.fps, self.source_id.clone())
    }
}

/// 1-based indices `round(1 + (j-1)(K-1)/(n-1))` for `j = 1..n`, rounding
/// halves up. Returns `[1]` for `n = 1`.
pub fn resample_indices(k: usize, n: usize) -> Vec<usize> {
    assert!(k >= 1 && n >= 1, "resample needs K >= 1 and n >= 1");
    if n == 1 {
        return vec![1];
    }
    let denom = 2 * (n - 1);
    (0..n)
        .map(|j| 1 + (2 * j * (k - 1) + (n - 1)) / denom)
        .collect()
}

pub fn resample_equal_gaps(seq: &FrameSequence, n: usize) -> Result<FrameSequence> {
    if n == 0 {
        return Err(Error::validation("resample target count must be >= 1"));
    }
    seq.select(&resample_indices(seq.len(), n))
}

/// Maps an index authored against the canonical 16-frame space onto a
/// sequence of `k` frames.
pub fn remap_index(index: usize, k: usize) -> usize {
    remap_index_from(index, CANONICAL_FRAMES, k)
}

pub fn remap_index_from(index: usize, from: usize, to: usize) -> usize {
    if from <= 1 || to == from {
        return index;
    }
    let num = 2 * (index - 1) * (to - 1) + (from - 1);
    1 + num / (2 * (from - 1))
}

#[derive(Debug, Clone)]
pub struct FrameComposite {
    pub image: RgbImage,
    pub member_indices: Vec<usize>,
}

impl FrameComposite {
    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png(&self.image)
    }
}

/// Concatenates the requested frames left to right in ascending index order,
/// after scaling every member to the smallest member height.
pub fn compose_horizontal(seq: &FrameSequence, indices: &[usize]) -> Result<FrameComposite> {
    if indices.is_empty() || indices.len() > MAX_COMPOSITE_MEMBERS {
        return Err(Error::validation(format!(
            "a composite takes 1..={MAX_COMPOSITE_MEMBERS} frames, got {}",
            indices.len()
        )));
    }
    let mut members = indices.to_vec();
    members.sort_unstable();
    members.dedup();
    let frames = members
        .iter()
        .map(|&i| seq.frame(i))
        .collect::<Result<Vec<_>>>()?;

    if frames.len() == 1 {
        return Ok(FrameComposite {
            image: frames[0].clone(),
            member_indices: members,
        });
    }

    let target_h = frames.iter().map(|f| f.height()).min().unwrap_or(1);
    let scaled: Vec<RgbImage> = frames
        .iter()
        .map(|f| {
            if f.height() == target_h {
                (*f).clone()
            } else {
                let w = ((f.width() as u64 * target_h as u64 + f.height() as u64 / 2)
                    / f.height() as u64)
                    .max(1) as u32;
                imageops::resize(*f, w, target_h, FilterType::Triangle)
            }
        })
        .collect();

    let total_w: u32 = scaled.iter().map(|f| f.width()).sum();
    let mut canvas = RgbImage::new(total_w, target_h);
    let mut x = 0i64;
    for f in &scaled {
        imageops::replace(&mut canvas, f, x, 0);
        x += f.width() as i64;
    }
    Ok(FrameComposite {
        image: canvas,
        member_indices: members,
    })
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// SHA-256 over dimensions and raw RGB bytes.
pub fn frame_hash(img: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.as_raw());
    hex::encode(h.finalize())
}

pub fn sequence_hash(seq: &FrameSequence) -> String {
    let mut h = Sha256::new();
    for f in seq.frames() {
        h.update(frame_hash(f).as_bytes());
    }
    hex::encode(h.finalize())
}

/// External decoder configuration (an ffmpeg-compatible binary).
#[derive(Debug, Clone)]
pub struct Decoder {
    pub program: PathBuf,
}

impl Default for Decoder {
    fn default() -> Self {
        Self {
            program: PathBuf::from("ffmpeg"),
        }
    }
}

impl Decoder {
    /// Decodes `video` at `fps` into PNG frames inside `out_dir`.
    fn decode_to(&self, video: &Path, fps: f64, out_dir: &Path) -> Result<()> {
        let output = Command::new(&self.program)
            .arg("-v")
            .arg("error")
            .arg("-i")
            .arg(video)
            .arg("-vf")
            .arg(format!("fps={fps}"))
            .arg("-f")
            .arg("image2")
            .arg(out_dir.join("frame_%04d.png"))
            .output()
            .map_err(|e| Error::Decode {
                path: video.to_path_buf(),
                message: format!("could not run {}: {e}", self.program.display()),
            })?;
        if !output.status.success() {
            return Err(Error::Decode {
                path: video.to_path_buf(),
                message: String::from_utf8_lossy(&output.stderr).trim().to_string(),
            });
        }
        Ok(())
    }
}

/// Reads every `*.png` in `dir`, ordered by file name.
pub fn load_frame_dir(dir: &Path, fps: f64, source_id: &str) -> Result<FrameSequence> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Decode {
            path: dir.to_path_buf(),
            message: "no frames decoded (video shorter than one frame interval?)".into(),
        });
    }
    let frames = paths
        .iter()
        .map(|p| Ok(image::open(p)?.to_rgb8()))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, fps, source_id)
}

/// Decodes a video at `fps`, or reads a directory of frames, keeping every
/// decoded frame.
pub fn decode_video(video: &Path, fps: f64, decoder: &Decoder) -> Result<FrameSequence> {
    let source_id = video
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if video.is_dir() {
        return load_frame_dir(video, fps, &source_id);
    }
    let tmp = std::env::temp_dir().join(format!(
        "tcb-decode-{}-{}",
        std::process::id(),
        hex::encode(Sha256::digest(video.to_string_lossy().as_bytes()))
    ));
    fs::create_dir_all(&tmp)?;
    let result = decoder
        .decode_to(video, fps, &tmp)
        .and_then(|_| load_frame_dir(&tmp, fps, &source_id));
    let _ = fs::remove_dir_all(&tmp);
    result
}

/// Decodes a video (or reads a directory of frames) and brings it to exactly
/// `count` frames. `count = 1` yields the middle frame.
pub fn extract_frames(video: &Path, fps: f64, count: usize, decoder: &Decoder) -> Result<FrameSequence> {
    if count == 0 {
        return Err(Error::validation("frame count must be >= 1"));
    }
    fit_to_count(&decode_video(video, fps, decoder)?, count)
}

pub fn fit_to_count(seq: &FrameSequence, count: usize) -> Result<FrameSequence> {
    if count == 1 {
        return seq.select(&[seq.len().div_ceil(2)]);
    }
    if seq.len() == count {
        return Ok(seq.clone());
    }
    resample_equal_gaps(seq, count)
}

/// Writes `frame_0001.png …` under `<root>/<content hash>/` and returns that
/// directory. Existing directories are reused.
pub fn cache_frames(seq: &FrameSequence, root: &Path) -> Result<PathBuf> {
    let dir = root.join(sequence_hash(seq));
    if dir.join(frame_name(seq.len())).exists() {
        return Ok(dir);
    }
    fs::create_dir_all(&dir)?;
    for (i, f) in seq.frames().iter().enumerate() {
        let tmp = dir.join(format!(".{}.tmp", frame_name(i + 1)));
        fs::write(&tmp, encode_png(f)?)?;
        fs::rename(&tmp, dir.join(frame_name(i + 1)))?;
    }
    Ok(dir)
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

#[cfg(test)]
pub(crate) fn solid(w: u32, h: u32, rgb: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(w, h, image::Rgb(rgb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_seq(k: usize, w: u32, h: u32) -> FrameSequence {
        let frames = (0..k)
            .map(|i| {
                RgbImage::from_fn(w, h, |x, y| {
                    image::Rgb([(i * 7) as u8, (x * 3) as u8, (y * 5) as u8])
                })
            })
            .collect();
        FrameSequence::new(frames, 8.0, "test").unwrap()
    }

    #[test]
    fn identity_and_stride_two() {
        assert_eq!(resample_indices(16, 16), (1..=16).collect::<Vec<_>>());
        assert_eq!(resample_indices(31, 16), (1..=31).step_by(2).collect::<Vec<_>>());
        assert_eq!(resample_indices(7, 1), vec![1]);
    }

    #[test]
    fn twenty_nine_frames_to_sixteen() {
        let idx = resample_indices(29, 16);
        // 1 + (j-1) * 28/15 rounded
        assert_eq!(
            idx,
            vec![1, 3, 5, 7, 8, 10, 12, 14, 16, 18, 20, 22, 23, 25, 27, 29]
        );
    }

    #[test]
    fn remap_matches_resample_for_canonical_indices() {
        for k in [16, 29, 31, 64] {
            let resampled = resample_indices(k, CANONICAL_FRAMES);
            for i in 1..=CANONICAL_FRAMES {
                assert_eq!(remap_index(i, k), resampled[i - 1]);
            }
        }
        assert_eq!(remap_index(9, 16), 9);
    }

    #[test]
    fn mixed_resolution_is_rejected() {
        let err = FrameSequence::new(vec![solid(4, 4, [0; 3]), solid(4, 5, [0; 3])], 8.0, "x");
        assert!(err.is_err());
        assert!(FrameSequence::new(vec![], 8.0, "x").is_err());
    }

    #[test]
    fn single_member_composite_is_the_frame() {
        let seq = gradient_seq(16, 12, 8);
        let c = compose_horizontal(&seq, &[1]).unwrap();
        assert_eq!(c.image, *seq.frame(1).unwrap());
        assert_eq!(c.member_indices, vec![1]);
    }

    #[test]
    fn five_member_composite_width() {
        let seq = gradient_seq(16, 12, 8);
        let c = compose_horizontal(&seq, &[1, 5, 9, 13, 16]).unwrap();
        assert_eq!(c.image.dimensions(), (60, 8));
        // third slot holds frame 9 untouched
        let f9 = seq.frame(9).unwrap();
        assert_eq!(c.image.get_pixel(24 + 3, 2), f9.get_pixel(3, 2));
    }

    #[test]
    fn members_are_sorted() {
        let seq = gradient_seq(16, 6, 4);
        let c = compose_horizontal(&seq, &[3, 1]).unwrap();
        assert_eq!(c.member_indices, vec![1, 3]);
        assert_eq!(c.image.get_pixel(0, 0), seq.frame(1).unwrap().get_pixel(0, 0));
        assert_eq!(c.image.get_pixel(6, 0), seq.frame(3).unwrap().get_pixel(0, 0));
    }

    #[test]
    fn out_of_range_index_names_index_and_length() {
        let seq = gradient_seq(16, 6, 4);
        let err = compose_horizontal(&seq, &[1, 17]).unwrap_err().to_string();
        assert!(err.contains("17") && err.contains("16"), "{err}");
        assert!(compose_horizontal(&seq, &[1, 2, 3, 4, 5, 6]).is_err());
        assert!(compose_horizontal(&seq, &[]).is_err());
    }

    #[test]
    fn fit_to_count_single_frame_takes_middle() {
        let seq = gradient_seq(16, 4, 4);
        let one = fit_to_count(&seq, 1).unwrap();
        assert_eq!(one.frames()[0], *seq.frame(8).unwrap());
        let seq = gradient_seq(29, 4, 4);
        let one = fit_to_count(&seq, 1).unwrap();
        assert_eq!(one.frames()[0], *seq.frame(15).unwrap());
        assert_eq!(fit_to_count(&seq, 16).unwrap().len(), 16);
    }

    #[test]
    fn frame_directory_round_trip_through_cache() {
        let dir = tempfile::tempdir().unwrap();
        let seq = gradient_seq(5, 4, 3);
        let cached = cache_frames(&seq, dir.path()).unwrap();
        assert!(cached.join("frame_0005.png").exists());
        let back = extract_frames(&cached, 8.0, 5, &Decoder::default()).unwrap();
        assert_eq!(back.frames(), seq.frames());
        assert_eq!(cache_frames(&back, dir.path()).unwrap(), cached);
    }

    #[test]
    fn missing_decoder_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let video = dir.path().join("clip.mp4");
        fs::write(&video, b"not a video").unwrap();
        let decoder = Decoder {
            program: PathBuf::from("/nonexistent/ffmpeg"),
        };
        assert!(matches!(
            extract_frames(&video, 8.0, 16, &decoder),
            Err(Error::Decode { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn resample_is_idempotent(k in 1usize..40, n in 1usize..40) {
            let seq = gradient_seq(k, 2, 2);
            let once = resample_equal_gaps(&seq, n).unwrap();
            let twice = resample_equal_gaps(&once, n).unwrap();
            proptest::prop_assert_eq!(once.frames(), twice.frames());
        }
    }
}
