//! Sequence and annotation I/O, dataset statistics, training-pair sampling and
//! the synthetic sequence generator.

pub mod annotations;
pub mod ppm;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

pub use annotations::{format_annotations, parse_annotations, read_annotations, write_annotations, ANNOTATION_HEADER};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
pub use synth::{gen_synthetic, generate_sequence, SynthConfig, SynthSequence};

use crate::error::{Error, Result};
use crate::geometry::{context_window, crop_resize, encode_target, to_search_coords, FrameImage, SearchPatch, SquareBox};
use crate::parallel::{map_ordered, Execution};

pub const DEFAULT_FPS: f64 = 30.0;
pub const DEFAULT_BATCH_SIZE: usize = 50;

#[derive(Debug, Clone)]
pub struct SequenceRecord {
    pub id: String,
    pub frames: Vec<FrameImage>,
    /// One ground-truth box per frame.
    pub annotations: Vec<SquareBox>,
    pub fps: f64,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_size(&self) -> (usize, usize) {
        self.frames.first().map_or((0, 0), |f| (f.width(), f.height()))
    }

    /// One annotation per frame, equal frame sizes, and every box within one
    /// side of the frame.
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.annotations.len() {
            return Err(Error::Consistency(format!(
                "{}: {} frames but {} annotations",
                self.id,
                self.frames.len(),
                self.annotations.len()
            )));
        }
        let (w, h) = self.frame_size();
        if self.frames.iter().any(|f| (f.width(), f.height()) != (w, h)) {
            return Err(Error::Consistency(format!("{}: frames differ in size", self.id)));
        }
        for (i, b) in self.annotations.iter().enumerate() {
            let ok = b.side > 0.0
                && b.cx >= -b.side
                && b.cy >= -b.side
                && b.cx <= w as f64 + b.side
                && b.cy <= h as f64 + b.side;
            if !ok {
                return Err(Error::Consistency(format!("{}: box {i} is outside the frame sanity bounds", self.id)));
            }
        }
        Ok(())
    }
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("frames").join(format!("{index:06}.ppm"))
}

/// Load `<dir>/groundtruth.csv` and the frames it annotates. The sequence id
/// is the directory name.
pub fn load_sequence(dir: &Path) -> Result<SequenceRecord> {
    let entries = read_annotations(&dir.join("groundtruth.csv"))?;
    let mut frames = Vec::with_capacity(entries.len());
    let mut boxes = Vec::with_capacity(entries.len());
    for (expected, (index, b)) in entries.into_iter().enumerate() {
        if index != expected {
            return Err(Error::Consistency(format!(
                "{}: no annotation for frame {expected}",
                dir.display()
            )));
        }
        let path = frame_path(dir, index);
        if !path.is_file() {
            return Err(Error::Consistency(format!("missing frame {}", path.display())));
        }
        frames.push(read_ppm(&path)?);
        boxes.push(b);
    }
    if frame_path(dir, frames.len()).is_file() {
        return Err(Error::Consistency(format!(
            "{}: frame {} has no annotation",
            dir.display(),
            frames.len()
        )));
    }
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let record = SequenceRecord {
        id,
        frames,
        annotations: boxes,
        fps: DEFAULT_FPS,
    };
    record.validate()?;
    Ok(record)
}

/// Write a manifest listing `entries` (paths relative to the manifest's
/// directory), one per line.
pub fn write_manifest(path: &Path, entries: &[String]) -> Result<()> {
    let mut text = entries.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Sequence directories listed in a manifest. Relative entries resolve against
/// the manifest's directory; blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

pub fn load_split(manifest: &Path, exec: Execution) -> Result<Vec<SequenceRecord>> {
    let dirs = read_manifest(manifest)?;
    if dirs.is_empty() {
        return Err(Error::Config(format!("{} lists no sequences", manifest.display())));
    }
    map_ordered(exec, &dirs, |d| load_sequence(d)).into_iter().collect()
}

/// Per-channel mean over every pixel of every frame.
pub fn dataset_mean(split: &[SequenceRecord]) -> Result<[f64; 3]> {
    let mut sums = [0u64; 3];
    let mut count = 0u64;
    for frame in split.iter().flat_map(|s| &s.frames) {
        for px in frame.pixels().chunks_exact(3) {
            for c in 0..3 {
                sums[c] += px[c] as u64;
            }
        }
        count += (frame.width() * frame.height()) as u64;
    }
    if count == 0 {
        return Err(Error::Config("dataset mean of an empty split".into()));
    }
    Ok(sums.map(|s| s as f64 / count as f64))
}

#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub prev_patch: SearchPatch,
    pub curr_patch: SearchPatch,
    pub target: [f64; 3],
}

/// Crop frames `t-1` and `t` with the window around ground truth `t-1`, and
/// encode ground truth `t` as the regression target.
pub fn make_pair(seq: &SequenceRecord, t: usize, mean_rgb: [f64; 3], size: usize) -> Result<TrainingPair> {
    if t == 0 || t >= seq.len() {
        return Err(Error::Config(format!("pair index {t} out of range for {} frames", seq.len())));
    }
    let (w, h) = seq.frame_size();
    let window = context_window(&seq.annotations[t - 1], w, h);
    let prev_patch = crop_resize(&seq.frames[t - 1], &window, mean_rgb, size)?;
    let curr_patch = crop_resize(&seq.frames[t], &window, mean_rgb, size)?;
    let target = encode_target(&to_search_coords(&seq.annotations[t], &window, size)?, size)?;
    Ok(TrainingPair {
        prev_patch,
        curr_patch,
        target,
    })
}

/// Uniform sampler over every successive-frame pair `(seq, t)` with `t >= 1`.
#[derive(Debug, Clone)]
pub struct PairSampler {
    index: Vec<(usize, usize)>,
    mean_rgb: [f64; 3],
    size: usize,
}

impl PairSampler {
    pub fn new(split: &[SequenceRecord], mean_rgb: [f64; 3], size: usize) -> Result<Self> {
        let mut index = Vec::new();
        for (s, seq) in split.iter().enumerate() {
            if seq.len() < 2 {
                return Err(Error::Config(format!("{} has fewer than two frames", seq.id)));
            }
            index.extend((1..seq.len()).map(|t| (s, t)));
        }
        if index.is_empty() {
            return Err(Error::Config("no training pairs".into()));
        }
        Ok(Self { index, mean_rgb, size })
    }

    pub fn pair_count(&self) -> usize {
        self.index.len()
    }

    pub fn sample<R: Rng>(
        &self,
        split: &[SequenceRecord],
        batch_size: usize,
        rng: &mut R,
        exec: Execution,
    ) -> Result<Vec<TrainingPair>> {
        if batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let picks: Vec<(usize, usize)> = (0..batch_size)
            .map(|_| self.index[rng.random_range(0..self.index.len())])
            .collect();
        map_ordered(exec, &picks, |&(s, t)| make_pair(&split[s], t, self.mean_rgb, self.size))
            .into_iter()
            .collect()
    }
}

pub fn sample_pairs<R: Rng>(
    split: &[SequenceRecord],
    batch_size: usize,
    mean_rgb: [f64; 3],
    size: usize,
    rng: &mut R,
) -> Result<Vec<TrainingPair>> {
    PairSampler::new(split, mean_rgb, size)?.sample(split, batch_size, rng, Execution::Sequential)
}
